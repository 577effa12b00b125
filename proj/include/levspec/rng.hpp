#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

namespace levspec {

// Philox4x32-10 counter-based generator (Salmon, Moraes, Dror & Shaw, SC'11).
// The 64-bit seed is the key; a 128-bit counter addresses any block directly,
// so draws are a pure function of (seed, stream, index).
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  explicit Philox4x32(Key key) : key_(key) {}
  explicit Philox4x32(std::uint64_t seed)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

  Block operator()(Block counter) const noexcept {
    Key k = key_;
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        k[0] += kWeyl0;
        k[1] += kWeyl1;
      }
      const std::uint64_t p0 = std::uint64_t{kMul0} * counter[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * counter[2];
      counter = {static_cast<std::uint32_t>(p1 >> 32) ^ counter[1] ^ k[0],
                 static_cast<std::uint32_t>(p1),
                 static_cast<std::uint32_t>(p0 >> 32) ^ counter[3] ^ k[1],
                 static_cast<std::uint32_t>(p0)};
    }
    return counter;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  Key key_;
};

// Independent sub-streams of one seed.
enum class Stream : std::uint32_t {
  thermal_force = 0,
  initial_state = 1,
  detector_noise = 2,
  intensity_drift = 3,
  user = 16,
};

// Sequential 32-bit words of one Philox stream. Block i of stream s is
// Philox(seed; counter = {lo32(i), hi32(i), s, substream}); words are
// consumed in block order. Blocks are generated in batches.
class WordStream {
 public:
  static constexpr std::size_t kBatchBlocks = 256;

  WordStream(std::uint64_t seed, Stream stream, std::uint32_t substream = 0)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(static_cast<std::uint32_t>(stream)),
        substream_(substream) {}

  std::uint32_t next() {
    if (pos_ == buf_.size()) refill();
    return buf_[pos_++];
  }

  // Uniform on (0, 1) with 32 bits of resolution.
  double uniform() { return (static_cast<double>(next()) + 0.5) * 0x1.0p-32; }

 private:
  friend class NormalStream;
  void refill();

  Philox4x32::Key key_;
  std::uint32_t stream_;
  std::uint32_t substream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4 * kBatchBlocks> buf_{};
  std::size_t pos_ = 4 * kBatchBlocks;
};

// Standard normal variates by the 128-layer ziggurat of Marsaglia & Tsang
// (J. Stat. Softw. 5(8), 2000). The layer index is taken from bits that are
// independent of the 32-bit value word (the correction noted by Doornik, 2005).
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, Stream stream, std::uint32_t substream = 0)
      : words_(seed, stream, substream), tables_(&tables()) {}

  double next() {
    const auto hz = static_cast<std::int32_t>(words_.next());
    const std::uint32_t iz = next_layer();
    const Tables& t = *tables_;
    const std::int64_t mag = hz < 0 ? -static_cast<std::int64_t>(hz) : hz;
    if (mag < t.k[iz]) return hz * t.w[iz];
    return slow_path(hz, iz);
  }

  void fill(std::span<double> out);

 private:
  struct Tables {
    std::array<std::int64_t, 128> k;
    std::array<double, 128> w;
    std::array<double, 128> f;
  };
  static const Tables& tables();

  std::uint32_t next_layer() {
    if (layer_bits_left_ == 0) {
      layer_bits_ = words_.next();
      layer_bits_left_ = 4;
    }
    const std::uint32_t iz = layer_bits_ & 127u;
    layer_bits_ >>= 8;
    --layer_bits_left_;
    return iz;
  }

  double slow_path(std::int32_t hz, std::uint32_t iz);

  WordStream words_;
  const Tables* tables_;
  std::uint32_t layer_bits_ = 0;
  int layer_bits_left_ = 0;
};

}  // namespace levspec
