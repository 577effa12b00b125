#include "levspec/theory.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>

#include "levspec/error.hpp"
#include "levspec/fft.hpp"

namespace levspec {

namespace {

using cplx = std::complex<double>;
constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kSpanTail = 1e-4;

bool finite_positive(double x) { return std::isfinite(x) && x > 0.0; }

// Normalized position spectrum per Hz at f = w / 2 pi.
double sigma_at(double omega, double gamma, double w) {
  const double d = w * w - omega * omega;
  return 2.0 * gamma * omega * omega / (d * d + gamma * gamma * w * w);
}

// cot(z), stable for any imaginary part.
cplx stable_cot(cplx z) {
  const double x = z.real();
  const double y = z.imag();
  const double e2 = std::exp(-2.0 * std::abs(y));
  const double e4 = e2 * e2;
  const double sign = y >= 0.0 ? 1.0 : -1.0;
  const cplx num(2.0 * std::sin(2.0 * x) * e2, -sign * (1.0 - e4));
  const double den = 1.0 + e4 - 2.0 * std::cos(2.0 * x) * e2;
  return num / den;
}

// sum_m sigma(f + m P) for period P, via partial fractions over the four
// poles of 1 / D(w) and sum_m 1 / (w + m W - p) = (pi / W) cot(pi (w - p) / W).
class PeriodicSigma {
 public:
  PeriodicSigma(double omega, double gamma, double period_hz)
      : omega_(omega), gamma_(gamma), w_period_(kTwoPi * period_hz) {
    const cplx omega1 = std::sqrt(cplx(omega * omega - 0.25 * gamma * gamma, 0.0));
    const cplx half_g(0.0, 0.5 * gamma);
    poles_ = {omega1 - half_g, -omega1 - half_g, omega1 + half_g, -omega1 + half_g};
    double min_sep = std::numeric_limits<double>::infinity();
    for (int j = 0; j < 4; ++j) {
      cplx prod = 1.0;
      for (int k = 0; k < 4; ++k) {
        if (k == j) continue;
        prod *= poles_[j] - poles_[k];
        min_sep = std::min(min_sep, std::abs(poles_[j] - poles_[k]));
      }
      residues_[j] = 2.0 * gamma * omega * omega / prod;
    }
    // Near-critical damping makes the pole pairs coalesce; sum images instead.
    brute_ = min_sep < 1e-6 * omega;
  }

  // Periodic density per Hz at baseband frequency f.
  double operator()(double f) const {
    const double w = kTwoPi * f;
    if (brute_) return images(w);
    cplx sum = 0.0;
    for (int j = 0; j < 4; ++j) sum += residues_[j] * stable_cot(kPi * (w - poles_[j]) / w_period_);
    return (kPi / w_period_) * sum.real();
  }

 private:
  double images(double w) const {
    double s = sigma_at(omega_, gamma_, w);
    const int m_max = 2000;
    for (int m = 1; m <= m_max; ++m) {
      s += sigma_at(omega_, gamma_, w + m * w_period_) + sigma_at(omega_, gamma_, w - m * w_period_);
    }
    // Remaining images fall off as 2 gamma omega^2 / (m W)^4.
    const double tail_sum = 1.0 / (3.0 * std::pow(m_max + 0.5, 3));
    s += 2.0 * 2.0 * gamma_ * omega_ * omega_ / std::pow(w_period_, 4) * tail_sum;
    return s;
  }

  double omega_;
  double gamma_;
  double w_period_;
  std::array<cplx, 4> poles_{};
  std::array<cplx, 4> residues_{};
  bool brute_ = false;
};

// Grid index i <-> DFT index (i - center) mod n.
std::size_t dft_index(const FrequencyGrid& g, std::size_t i) {
  return (i + g.n - g.center()) % g.n;
}

std::vector<double> to_grid_order(const FrequencyGrid& g, std::span<const double> dft_ordered) {
  std::vector<double> out(g.n);
  for (std::size_t i = 0; i < g.n; ++i) out[i] = dft_ordered[dft_index(g, i)];
  return out;
}

std::vector<cplx> to_dft_order(const FrequencyGrid& g, std::span<const double> grid_ordered) {
  std::vector<cplx> out(g.n);
  for (std::size_t i = 0; i < g.n; ++i) out[dft_index(g, i)] = grid_ordered[i];
  return out;
}

void symmetrize(std::vector<double>& d) {
  const std::size_t n = d.size();
  for (std::size_t i = 0; i < n / 2; ++i) {
    const double m = 0.5 * (d[i] + d[n - 1 - i]);
    d[i] = m;
    d[n - 1 - i] = m;
  }
}

int truncation_order_for(double x, double tol, double* bound) {
  int n = 0;
  double tail = poisson_tail(x, 0);
  while (tail >= tol && n < 10000) {
    ++n;
    tail = poisson_tail(x, n);
  }
  *bound = tail;
  return n;
}

FrequencyGrid extended(const FrequencyGrid& g, std::size_t factor) {
  FrequencyGrid e = g;
  e.n = 2 * factor * g.center() + 1;
  e.periodic = true;
  return e;
}

std::vector<double> crop(const FrequencyGrid& big, const FrequencyGrid& small,
                         const std::vector<double>& v) {
  const std::size_t off = big.center() - small.center();
  return {v.begin() + static_cast<std::ptrdiff_t>(off),
          v.begin() + static_cast<std::ptrdiff_t>(off + small.n)};
}

void check_model(const ModelParams& p, double v0) {
  p.validate();
  require(finite_positive(v0), Errc::invalid_config, "amplitude must be > 0");
}

}  // namespace

void ModelParams::validate() const {
  require(std::isfinite(phi) && phi >= 0.0, Errc::invalid_config, "phi must be >= 0");
  require(finite_positive(omega), Errc::invalid_config, "omega must be > 0");
  require(finite_positive(gamma), Errc::invalid_config, "gamma must be > 0");
}

FrequencyGrid FrequencyGrid::centered(double f0, double df, double half_width, bool periodic) {
  require(finite_positive(df), Errc::invalid_config, "df must be > 0");
  require(std::isfinite(half_width) && half_width >= df, Errc::invalid_config,
          "half width must be >= df");
  FrequencyGrid g;
  g.f0 = f0;
  g.df = df;
  g.n = 2 * static_cast<std::size_t>(std::llround(half_width / df)) + 1;
  g.periodic = periodic;
  return g;
}

void FrequencyGrid::validate() const {
  require(std::isfinite(f0), Errc::invalid_config, "grid centre must be finite");
  require(finite_positive(df), Errc::invalid_config, "grid df must be > 0");
  require(n >= 3 && n % 2 == 1, Errc::invalid_config, "grid needs an odd number (>= 3) of points");
}

double TheorySpectrum::continuous_mass() const {
  double s = 0.0;
  for (double d : density) s += d;
  return s * grid.df;
}

double szz(const OscillatorParams& p, double w) {
  return szz(p.omega, p.gamma, w, 2.0 * kBoltzmann * p.temperature / p.mass);
}

double szz(double omega, double gamma, double w, double prefactor) {
  const double d = w * w - omega * omega;
  return prefactor * gamma / (d * d + gamma * gamma * w * w);
}

double sigma_zz_tail_mass(double omega, double gamma, double half_width) {
  if (half_width <= 0.0) return 1.0;
  boost::math::quadrature::exp_sinh<double> integrator;
  auto f = [&](double x) { return sigma_at(omega, gamma, kTwoPi * x); };
  return 2.0 * integrator.integrate(f, half_width, std::numeric_limits<double>::infinity());
}

std::vector<double> sigma_zz(double omega, double gamma, const FrequencyGrid& grid) {
  grid.validate();
  require(finite_positive(omega) && finite_positive(gamma), Errc::invalid_config,
          "omega and gamma must be > 0");
  const double tail = sigma_zz_tail_mass(omega, gamma, grid.half_width() + 0.5 * grid.df);
  require(tail < kSpanTail, Errc::insufficient_span,
          "grid half width " + std::to_string(grid.half_width()) + " Hz leaves " +
              std::to_string(tail) + " of the position spectrum outside");
  std::vector<double> out(grid.n);
  if (grid.periodic) {
    const PeriodicSigma ps(omega, gamma, static_cast<double>(grid.n) * grid.df);
    for (std::size_t i = 0; i <= grid.center(); ++i) out[i] = ps(grid.offset(i));
  } else {
    for (std::size_t i = 0; i <= grid.center(); ++i)
      out[i] = sigma_at(omega, gamma, kTwoPi * grid.offset(i));
  }
  for (std::size_t i = grid.center() + 1; i < grid.n; ++i) out[i] = out[grid.n - 1 - i];
  return out;
}

double phase_correlation(double omega, double gamma, double t) {
  const double a = 0.5 * gamma;
  const double at = std::abs(t);
  const double s = omega * omega - a * a;  // Omega_1^2, negative when overdamped
  if (std::abs(s) * at * at < 1e-3) {
    // cos(W t) and sin(W t)/W as series in s t^2; covers critical damping.
    const double u = s * at * at;
    const double c = 1.0 - u / 2.0 + u * u / 24.0 - u * u * u / 720.0;
    const double sn = at * (1.0 - u / 6.0 + u * u / 120.0 - u * u * u / 5040.0);
    return std::exp(-a * at) * (c + a * sn);
  }
  if (s > 0.0) {
    const double w1 = std::sqrt(s);
    return std::exp(-a * at) * (std::cos(w1 * at) + (a / w1) * std::sin(w1 * at));
  }
  const double k = std::sqrt(-s);
  const double slow = omega * omega / (a + k);  // a - k without cancellation
  return 0.5 * (1.0 + a / k) * std::exp(-slow * at) + 0.5 * (1.0 - a / k) * std::exp(-(a + k) * at);
}

std::vector<double> phase_correlation_series(double omega, double gamma, double dt,
                                             std::size_t count) {
  std::vector<double> out(count, 0.0);
  const double a = 0.5 * gamma;
  const double s = omega * omega - a * a;
  constexpr std::size_t kAnchor = 256;
  const double horizon = dt * static_cast<double>(count);
  if (std::abs(s) * horizon * horizon < 1e-3 || std::abs(s) < 1e-12 * omega * omega) {
    for (std::size_t m = 0; m < count; ++m) out[m] = phase_correlation(omega, gamma, dt * static_cast<double>(m));
    return out;
  }
  if (s > 0.0) {
    // rho(t) = Re[(1 - i a / w1) exp((-a + i w1) t)]
    const double w1 = std::sqrt(s);
    const cplx c(1.0, -a / w1);
    const cplx q = std::exp(cplx(-a * dt, w1 * dt));
    cplx z;
    for (std::size_t m = 0; m < count; ++m) {
      if (m % kAnchor == 0) {
        const double t = dt * static_cast<double>(m);
        const double decay = std::exp(-a * t);
        if (decay < 1e-300) break;
        z = c * decay * cplx(std::cos(w1 * t), std::sin(w1 * t));
      } else {
        z *= q;
      }
      out[m] = z.real();
    }
    return out;
  }
  const double k = std::sqrt(-s);
  const double slow = omega * omega / (a + k);
  const double fast = a + k;
  const double c1 = 0.5 * (1.0 + a / k);
  const double c2 = 0.5 * (1.0 - a / k);
  const double q1 = std::exp(-slow * dt);
  const double q2 = std::exp(-fast * dt);
  double e1 = 1.0;
  double e2 = 1.0;
  for (std::size_t m = 0; m < count; ++m) {
    if (m % kAnchor == 0) {
      const double t = dt * static_cast<double>(m);
      e1 = std::exp(-slow * t);
      e2 = std::exp(-fast * t);
    } else {
      e1 *= q1;
      e2 *= q2;
    }
    out[m] = c1 * e1 + c2 * e2;
  }
  return out;
}

CorrelationSeries correlation_rphiphi(double phi, double omega, double gamma,
                                      const FrequencyGrid& grid) {
  require(std::isfinite(phi) && phi >= 0.0, Errc::invalid_config, "phi must be >= 0");
  const auto sig = sigma_zz(omega, gamma, grid);
  auto spec = to_dft_order(grid, sig);
  std::vector<cplx> time(grid.n);
  fft::backward(spec, time);
  CorrelationSeries out;
  out.dt = 1.0 / (static_cast<double>(grid.n) * grid.df);
  out.values.resize(grid.n);
  const double scale = phi * phi * grid.df;
  for (std::size_t m = 0; m < grid.n; ++m) out.values[m] = scale * time[m].real();
  return out;
}

TheorySpectrum spectrum_from_correlation(const ModelParams& p, double v0, const FrequencyGrid& grid) {
  check_model(p, v0);
  grid.validate();
  require(grid.df <= p.gamma / (kTwoPi * 10.0) * (1.0 + 1e-12), Errc::resolution,
          "df = " + std::to_string(grid.df) + " Hz does not resolve gamma (need <= gamma / 20 pi)");
  TheorySpectrum out;
  out.grid = grid;
  out.params = p;
  out.amplitude = v0;
  out.method = "correlation";
  out.carrier_weight = std::exp(-p.phi * p.phi);
  if (p.phi == 0.0) {
    out.density.assign(grid.n, 0.0);
    return out;
  }
  const FrequencyGrid work = grid.periodic ? grid : extended(grid, 4);
  const auto r = correlation_rphiphi(p.phi, p.omega, p.gamma, work);
  std::vector<cplx> c(work.n);
  for (std::size_t m = 0; m < work.n; ++m)
    c[m] = out.carrier_weight * std::expm1(r.values[m]);
  std::vector<cplx> spec(work.n);
  fft::forward(c, spec);
  std::vector<double> re(work.n);
  for (std::size_t k = 0; k < work.n; ++k) re[k] = spec[k].real() * r.dt;
  auto dens = to_grid_order(work, re);
  symmetrize(dens);
  out.density = grid.periodic ? std::move(dens) : crop(work, grid, dens);
  return out;
}

std::vector<double> poisson_weights(double x, int n_max) {
  std::vector<double> w(static_cast<std::size_t>(n_max) + 1);
  double t = std::exp(-x);
  for (int n = 0; n <= n_max; ++n) {
    if (n > 0) t *= x / n;
    w[static_cast<std::size_t>(n)] = t;
  }
  return w;
}

double poisson_tail(double x, int n_max) {
  if (x <= 0.0) return 0.0;
  // P(N > n) = P(n + 1, x), the regularized lower incomplete gamma function.
  return boost::math::gamma_p(static_cast<double>(n_max) + 1.0, x);
}

TheorySpectrum middleton_series(const ModelParams& p, double v0, const FrequencyGrid& grid,
                                double tol) {
  check_model(p, v0);
  grid.validate();
  require(tol > 0.0 && tol < 1.0, Errc::invalid_config, "tol must be in (0, 1)");
  const double x = p.phi * p.phi;
  TheorySpectrum out;
  out.grid = grid;
  out.params = p;
  out.amplitude = v0;
  out.method = "series";
  out.carrier_weight = std::exp(-x);
  double bound = 0.0;
  const int n_max = truncation_order_for(x, tol, &bound);
  out.truncation_order = n_max;
  out.truncation_bound = bound;
  if (n_max == 0) {
    out.density.assign(grid.n, 0.0);
    return out;
  }
  if (!grid.periodic) {
    const double need = n_max * p.omega / kTwoPi + 10.0 * p.gamma;
    require(grid.half_width() >= need, Errc::grid_span,
            "half width " + std::to_string(grid.half_width()) + " Hz is below the " +
                std::to_string(need) + " Hz spanned by " + std::to_string(n_max) + " orders");
  }
  const auto w = poisson_weights(x, n_max);
  auto sig = sigma_zz(p.omega, p.gamma, grid);
  for (double& s : sig) s *= grid.df;  // mass per bin

  std::vector<double> mass(grid.n, 0.0);
  if (grid.periodic) {
    const std::size_t n = grid.n;
    auto a = to_dft_order(grid, sig);
    std::vector<cplx> ah(n);
    fft::forward(a, ah);
    std::vector<cplx> acc(n);
    for (std::size_t k = 0; k < n; ++k) {
      // Horner in the transform domain: sum_{j=1}^{n_max} w_j a^j.
      cplx s = w[static_cast<std::size_t>(n_max)];
      for (int j = n_max - 1; j >= 1; --j) s = s * ah[k] + w[static_cast<std::size_t>(j)];
      acc[k] = s * ah[k];
    }
    std::vector<cplx> back(n);
    fft::backward(acc, back);
    std::vector<double> re(n);
    for (std::size_t m = 0; m < n; ++m) re[m] = back[m].real() / static_cast<double>(n);
    mass = to_grid_order(grid, re);
  } else {
    const std::size_t n = grid.n;
    const std::size_t len = fft::good_size(2 * n - 1);
    std::vector<cplx> kernel(len, 0.0);
    for (std::size_t i = 0; i < n; ++i) kernel[i] = sig[i];
    std::vector<cplx> kh(len);
    fft::forward(kernel, kh);
    std::vector<double> term = sig;
    for (std::size_t i = 0; i < n; ++i) mass[i] = w[1] * term[i];
    std::vector<cplx> buf(len);
    std::vector<cplx> bh(len);
    for (int j = 2; j <= n_max; ++j) {
      std::fill(buf.begin(), buf.end(), cplx(0.0));
      for (std::size_t i = 0; i < n; ++i) buf[i] = term[i];
      fft::forward(buf, bh);
      for (std::size_t k = 0; k < len; ++k) bh[k] *= kh[k];
      fft::backward(bh, buf);
      // Full linear convolution has its centre at 2c; keep the central n points.
      const std::size_t c = grid.center();
      for (std::size_t i = 0; i < n; ++i)
        term[i] = std::max(0.0, buf[i + c].real() / static_cast<double>(len));
      for (std::size_t i = 0; i < n; ++i) mass[i] += w[static_cast<std::size_t>(j)] * term[i];
    }
  }
  out.density.resize(grid.n);
  for (std::size_t i = 0; i < grid.n; ++i) out.density[i] = mass[i] / grid.df;
  symmetrize(out.density);
  return out;
}

std::vector<double> scaled_bessel_i(double x, int n_max) {
  require(std::isfinite(x) && x >= 0.0, Errc::domain, "bessel argument must be >= 0");
  std::vector<double> out(static_cast<std::size_t>(n_max) + 1, 0.0);
  if (x == 0.0) {
    out[0] = 1.0;
    return out;
  }
  for (int n = 0; n <= n_max; ++n) {
    double v = 0.0;
    if (x <= 20.0) {
      const double h = 0.5 * x;
      double term = std::exp(n * std::log(h) - std::lgamma(n + 1.0) - x);
      for (int k = 0; term > 0.0; ++k) {
        v += term;
        if (term < 1e-17 * v) break;
        term *= h * h / ((k + 1.0) * (k + 1.0 + n));
      }
    } else {
      v = std::cyl_bessel_i(static_cast<double>(n), x) * std::exp(-x);
    }
    out[static_cast<std::size_t>(n)] = v;
  }
  return out;
}

std::vector<double> narrowband_weights(double phi, int n_max) {
  require(std::isfinite(phi) && phi >= 0.0, Errc::invalid_config, "phi must be >= 0");
  require(n_max >= 0, Errc::invalid_config, "n_max must be >= 0");
  auto w = scaled_bessel_i(phi * phi, n_max);
  for (std::size_t n = 1; n < w.size(); ++n) w[n] *= 2.0;
  return w;
}

std::vector<double> harmonic_bessel_weights(double phi0, int n_max) {
  require(std::isfinite(phi0) && phi0 >= 0.0, Errc::invalid_config, "phi0 must be >= 0");
  require(n_max >= 0, Errc::invalid_config, "n_max must be >= 0");
  std::vector<double> w(static_cast<std::size_t>(n_max) + 1);
  for (int n = 0; n <= n_max; ++n) {
    const double j = std::cyl_bessel_j(static_cast<double>(n), phi0);
    w[static_cast<std::size_t>(n)] = j * j;
  }
  return w;
}

GaussHermite gauss_hermite(int order) {
  require(order >= 1, Errc::invalid_config, "quadrature order must be >= 1");
  const auto n = static_cast<Eigen::Index>(order);
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd sub(std::max<Eigen::Index>(n - 1, 0));
  for (Eigen::Index k = 0; k + 1 < n; ++k) sub[k] = std::sqrt(0.5 * static_cast<double>(k + 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  require(es.info() == Eigen::Success, Errc::domain, "Gauss-Hermite eigensolver failed");
  GaussHermite gh;
  gh.nodes.resize(static_cast<std::size_t>(order));
  gh.weights.resize(static_cast<std::size_t>(order));
  const double sqrt_pi = std::sqrt(kPi);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = es.eigenvectors()(0, i);
    gh.nodes[static_cast<std::size_t>(i)] = es.eigenvalues()[i];
    gh.weights[static_cast<std::size_t>(i)] = sqrt_pi * v * v;
  }
  // Enforce the exact symmetry of the rule.
  const std::size_t m = gh.nodes.size();
  for (std::size_t i = 0; i < m / 2; ++i) {
    const double x = 0.5 * (gh.nodes[m - 1 - i] - gh.nodes[i]);
    const double w = 0.5 * (gh.weights[i] + gh.weights[m - 1 - i]);
    gh.nodes[i] = -x;
    gh.nodes[m - 1 - i] = x;
    gh.weights[i] = w;
    gh.weights[m - 1 - i] = w;
  }
  if (m % 2 == 1) gh.nodes[m / 2] = 0.0;
  return gh;
}

ModelParams rin_shifted(const ModelParams& p, double r) {
  const double s = std::sqrt(1.0 + r);
  return {p.phi / s, p.omega * s, p.gamma};
}

std::vector<double> rin_average(double rin_width, int quad_order,
                                const std::function<std::vector<double>(double r)>& f) {
  require(std::isfinite(rin_width) && rin_width >= 0.0 && rin_width < 0.3, Errc::invalid_config,
          "rin width must be in [0, 0.3)");
  require(quad_order >= 3, Errc::invalid_config, "quadrature order must be >= 3");
  if (rin_width == 0.0) return f(0.0);
  const auto gh = gauss_hermite(quad_order);
  const double scale = std::sqrt(2.0) * rin_width;
  require(1.0 + scale * gh.nodes.front() > 0.0, Errc::domain,
          "quadrature node at r = " + std::to_string(scale * gh.nodes.front()) +
              " gives non-positive intensity; reduce the order or the width");
  std::vector<double> acc;
  for (std::size_t i = 0; i < gh.nodes.size(); ++i) {
    const auto v = f(scale * gh.nodes[i]);
    if (acc.empty()) acc.assign(v.size(), 0.0);
    require(v.size() == acc.size(), Errc::grid_mismatch, "evaluator changed its output size");
    const double w = gh.weights[i] / std::sqrt(kPi);
    for (std::size_t k = 0; k < v.size(); ++k) acc[k] += w * v[k];
  }
  return acc;
}

TheorySpectrum rin_broadened(const SpectrumEvaluator& s, const ModelParams& p, double rin_width,
                             int quad_order) {
  p.validate();
  require(std::isfinite(rin_width) && rin_width >= 0.0 && rin_width < 0.3, Errc::invalid_config,
          "rin width must be in [0, 0.3)");
  require(quad_order >= 3, Errc::invalid_config, "quadrature order must be >= 3");
  if (rin_width == 0.0) return s(p);
  TheorySpectrum base;
  bool have_base = false;
  int order = 0;
  auto eval = [&](double r) {
    TheorySpectrum t = s(rin_shifted(p, r));
    if (!have_base) {
      base = t;
      have_base = true;
    }
    order = std::max(order, t.truncation_order);
    std::vector<double> v(t.density.size() + 1);
    for (std::size_t k = 0; k < t.density.size(); ++k) v[k] = (1.0 + r) * t.density[k];
    v.back() = (1.0 + r) * t.carrier_weight;
    return v;
  };
  auto avg = rin_average(rin_width, quad_order, eval);
  TheorySpectrum out = base;
  out.params = p;
  out.carrier_weight = avg.back();
  avg.pop_back();
  out.density = std::move(avg);
  out.truncation_order = order;
  out.method = base.method + "+rin";
  return out;
}

nlohmann::json to_json(const ModelParams& p) {
  return {{"phi", p.phi}, {"omega", p.omega}, {"gamma", p.gamma}};
}

nlohmann::json to_json(const FrequencyGrid& g) {
  return {{"f0", g.f0}, {"df", g.df}, {"n", g.n}, {"half_width", g.half_width()},
          {"periodic", g.periodic}};
}

nlohmann::json to_json(const TheorySpectrum& s) {
  return {{"f0", s.grid.f0},
          {"df", s.grid.df},
          {"n", s.grid.n},
          {"half_width", s.grid.half_width()},
          {"periodic", s.grid.periodic},
          {"params", to_json(s.params)},
          {"amplitude", s.amplitude},
          {"method", s.method},
          {"carrier_weight", s.carrier_weight},
          {"truncation_order", s.truncation_order},
          {"truncation_bound", s.truncation_bound},
          {"density", s.density}};
}

ModelParams model_params_from_json(const nlohmann::json& j) {
  ModelParams p;
  try {
    p.phi = j.at("phi").get<double>();
    p.omega = j.at("omega").get<double>();
    p.gamma = j.at("gamma").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_config, std::string("malformed model params: ") + e.what());
  }
  p.validate();
  return p;
}

}  // namespace levspec
