#include "levspec/rng.hpp"

#include <cmath>

namespace levspec {

namespace {

constexpr double kTailStart = 3.442619855899;
constexpr double kLayerArea = 9.91256303526217e-3;

}  // namespace

// Same rounds as Philox4x32::operator(), laid out across a batch of counters
// so the compiler can vectorize the inner loops.
void WordStream::refill() {
  constexpr std::size_t n = kBatchBlocks;
  std::array<std::uint32_t, n> c0;
  std::array<std::uint32_t, n> c1;
  std::array<std::uint32_t, n> c2;
  std::array<std::uint32_t, n> c3;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t b = block_ + i;
    c0[i] = static_cast<std::uint32_t>(b);
    c1[i] = static_cast<std::uint32_t>(b >> 32);
    c2[i] = stream_;
    c3[i] = substream_;
  }
  std::uint32_t k0 = key_[0];
  std::uint32_t k1 = key_[1];
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      k0 += 0x9E3779B9u;
      k1 += 0xBB67AE85u;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * c0[i];
      const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * c2[i];
      const std::uint32_t n0 = static_cast<std::uint32_t>(p1 >> 32) ^ c1[i] ^ k0;
      const std::uint32_t n2 = static_cast<std::uint32_t>(p0 >> 32) ^ c3[i] ^ k1;
      c0[i] = n0;
      c1[i] = static_cast<std::uint32_t>(p1);
      c2[i] = n2;
      c3[i] = static_cast<std::uint32_t>(p0);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    buf_[4 * i] = c0[i];
    buf_[4 * i + 1] = c1[i];
    buf_[4 * i + 2] = c2[i];
    buf_[4 * i + 3] = c3[i];
  }
  block_ += n;
  pos_ = 0;
}

const NormalStream::Tables& NormalStream::tables() {
  static const Tables t = [] {
    Tables s{};
    const double m1 = 2147483648.0;
    double dn = kTailStart;
    double tn = dn;
    const double q = kLayerArea / std::exp(-0.5 * dn * dn);
    s.k[0] = static_cast<std::int64_t>((dn / q) * m1);
    s.k[1] = 0;
    s.w[0] = q / m1;
    s.w[127] = dn / m1;
    s.f[0] = 1.0;
    s.f[127] = std::exp(-0.5 * dn * dn);
    for (int i = 126; i >= 1; --i) {
      dn = std::sqrt(-2.0 * std::log(kLayerArea / dn + std::exp(-0.5 * dn * dn)));
      s.k[i + 1] = static_cast<std::int64_t>((dn / tn) * m1);
      tn = dn;
      s.f[i] = std::exp(-0.5 * dn * dn);
      s.w[i] = dn / m1;
    }
    return s;
  }();
  return t;
}

void NormalStream::fill(std::span<double> out) {
  const Tables& t = *tables_;
  const std::uint32_t* buf = words_.buf_.data();
  constexpr std::size_t kWords = 4 * WordStream::kBatchBlocks;
  std::size_t pos = words_.pos_;
  std::uint32_t layer_bits = layer_bits_;
  int layer_left = layer_bits_left_;
  for (double& x : out) {
    if (pos + 2 > kWords) {
      // Hand the cursor back so the general path sees a consistent stream.
      words_.pos_ = pos;
      layer_bits_ = layer_bits;
      layer_bits_left_ = layer_left;
      x = next();
      pos = words_.pos_;
      layer_bits = layer_bits_;
      layer_left = layer_bits_left_;
      continue;
    }
    const auto hz = static_cast<std::int32_t>(buf[pos++]);
    if (layer_left == 0) {
      layer_bits = buf[pos++];
      layer_left = 4;
    }
    const std::uint32_t iz = layer_bits & 127u;
    layer_bits >>= 8;
    --layer_left;
    const std::int64_t mag = hz < 0 ? -static_cast<std::int64_t>(hz) : hz;
    if (mag < t.k[iz]) {
      x = hz * t.w[iz];
    } else {
      words_.pos_ = pos;
      layer_bits_ = layer_bits;
      layer_bits_left_ = layer_left;
      x = slow_path(hz, iz);
      pos = words_.pos_;
      layer_bits = layer_bits_;
      layer_left = layer_bits_left_;
    }
  }
  words_.pos_ = pos;
  layer_bits_ = layer_bits;
  layer_bits_left_ = layer_left;
}

double NormalStream::slow_path(std::int32_t hz, std::uint32_t iz) {
  const Tables& t = tables();
  for (;;) {
    const double x = hz * t.w[iz];
    if (iz == 0) {
      // Base strip: sample the tail beyond kTailStart (Marsaglia 1964).
      double tx = 0.0;
      double ty = 0.0;
      do {
        tx = -std::log(words_.uniform()) / kTailStart;
        ty = -std::log(words_.uniform());
      } while (ty + ty < tx * tx);
      return hz > 0 ? kTailStart + tx : -kTailStart - tx;
    }
    if (t.f[iz] + words_.uniform() * (t.f[iz - 1] - t.f[iz]) < std::exp(-0.5 * x * x)) return x;
    hz = static_cast<std::int32_t>(words_.next());
    iz = next_layer();
    const std::int64_t mag = hz < 0 ? -static_cast<std::int64_t>(hz) : hz;
    if (mag < t.k[iz]) return hz * t.w[iz];
  }
}

}  // namespace levspec
