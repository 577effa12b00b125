#include "levspec/fft.hpp"

#include <fftw3.h>

#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <utility>

namespace levspec::fft {

namespace {

enum class Kind { r2c, c2r, c2c_forward, c2c_backward };

struct FftwFree {
  void operator()(void* p) const noexcept { fftw_free(p); }
};

// Aligned scratch that only grows.
struct Scratch {
  std::unique_ptr<double, FftwFree> real;
  std::unique_ptr<fftw_complex, FftwFree> in;
  std::unique_ptr<fftw_complex, FftwFree> out;
  std::size_t real_size = 0;
  std::size_t in_size = 0;
  std::size_t out_size = 0;

  double* real_buf(std::size_t n) {
    if (n > real_size) {
      real.reset(fftw_alloc_real(n));
      real_size = n;
    }
    return real.get();
  }
  fftw_complex* in_buf(std::size_t n) {
    if (n > in_size) {
      in.reset(fftw_alloc_complex(n));
      in_size = n;
    }
    return in.get();
  }
  fftw_complex* out_buf(std::size_t n) {
    if (n > out_size) {
      out.reset(fftw_alloc_complex(n));
      out_size = n;
    }
    return out.get();
  }
};

Scratch& scratch() {
  thread_local Scratch s;
  return s;
}

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

// Plans live for the process lifetime.
fftw_plan get_plan(Kind kind, std::size_t n) {
  static std::map<std::pair<Kind, std::size_t>, fftw_plan> cache;
  std::lock_guard lock(planner_mutex());
  const auto key = std::make_pair(kind, n);
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  const int len = static_cast<int>(n);
  std::unique_ptr<double, FftwFree> r(fftw_alloc_real(n));
  std::unique_ptr<fftw_complex, FftwFree> a(fftw_alloc_complex(n));
  std::unique_ptr<fftw_complex, FftwFree> b(fftw_alloc_complex(n));
  fftw_plan plan = nullptr;
  switch (kind) {
    case Kind::r2c: plan = fftw_plan_dft_r2c_1d(len, r.get(), a.get(), FFTW_ESTIMATE); break;
    case Kind::c2r: plan = fftw_plan_dft_c2r_1d(len, a.get(), r.get(), FFTW_ESTIMATE); break;
    case Kind::c2c_forward:
      plan = fftw_plan_dft_1d(len, a.get(), b.get(), FFTW_FORWARD, FFTW_ESTIMATE);
      break;
    case Kind::c2c_backward:
      plan = fftw_plan_dft_1d(len, a.get(), b.get(), FFTW_BACKWARD, FFTW_ESTIMATE);
      break;
  }
  if (plan == nullptr) throw std::runtime_error("fftw: planning failed");
  cache.emplace(key, plan);
  return plan;
}

void c2c(Kind kind, std::span<const cplx> in, std::span<cplx> out) {
  const std::size_t n = in.size();
  if (out.size() != n) throw std::invalid_argument("fft: size mismatch");
  if (n == 0) return;
  fftw_plan plan = get_plan(kind, n);
  Scratch& s = scratch();
  fftw_complex* a = s.in_buf(n);
  fftw_complex* b = s.out_buf(n);
  std::memcpy(a, in.data(), n * sizeof(fftw_complex));
  fftw_execute_dft(plan, a, b);
  std::memcpy(out.data(), b, n * sizeof(fftw_complex));
}

}  // namespace

void forward_real(std::span<const double> in, std::span<cplx> out) {
  const std::size_t n = in.size();
  if (out.size() != n / 2 + 1) throw std::invalid_argument("fft: size mismatch");
  if (n == 0) return;
  fftw_plan plan = get_plan(Kind::r2c, n);
  Scratch& s = scratch();
  double* r = s.real_buf(n);
  fftw_complex* c = s.out_buf(n / 2 + 1);
  std::memcpy(r, in.data(), n * sizeof(double));
  fftw_execute_dft_r2c(plan, r, c);
  std::memcpy(out.data(), c, (n / 2 + 1) * sizeof(fftw_complex));
}

void inverse_real(std::span<const cplx> in, std::span<double> out) {
  const std::size_t n = out.size();
  if (in.size() != n / 2 + 1) throw std::invalid_argument("fft: size mismatch");
  if (n == 0) return;
  fftw_plan plan = get_plan(Kind::c2r, n);
  Scratch& s = scratch();
  fftw_complex* c = s.in_buf(n / 2 + 1);
  double* r = s.real_buf(n);
  std::memcpy(c, in.data(), (n / 2 + 1) * sizeof(fftw_complex));
  fftw_execute_dft_c2r(plan, c, r);
  std::memcpy(out.data(), r, n * sizeof(double));
}

void forward(std::span<const cplx> in, std::span<cplx> out) { c2c(Kind::c2c_forward, in, out); }

void backward(std::span<const cplx> in, std::span<cplx> out) { c2c(Kind::c2c_backward, in, out); }

std::size_t good_size(std::size_t n) {
  if (n <= 1) return 1;
  for (std::size_t m = n;; ++m) {
    std::size_t r = m;
    for (std::size_t p : {2u, 3u, 5u, 7u})
      while (r % p == 0) r /= p;
    if (r == 1) return m;
  }
}

}  // namespace levspec::fft
