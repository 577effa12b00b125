#include <catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "levspec/error.hpp"
#include "levspec/theory.hpp"

using namespace levspec;

namespace {

constexpr double kPi = std::numbers::pi;
const double kOmega = 2.0 * kPi * 1e5;

// Normalized position spectrum per Hz, written out independently.
double sigma_ref(double omega, double gamma, double f) {
  const double w = 2.0 * kPi * f;
  const double d = (w * w - omega * omega) * (w * w - omega * omega) + gamma * gamma * w * w;
  return 2.0 * gamma * omega * omega / d;
}

// Continuous part of the normalized spectrum at offset f on a periodic grid of
// n points: direct lag sum of e^{-phi^2}(exp(phi^2 rho(t)) - 1), with rho from
// the closed form and each lag summed over its images at period n dt.
double direct_density(const ModelParams& p, double f, double dt, std::size_t n) {
  const double x = p.phi * p.phi;
  const double a = 0.5 * p.gamma;
  const double w1 = std::sqrt(p.omega * p.omega - a * a);
  auto c = [&](double t) {
    t = std::abs(t);
    const double rho = std::exp(-a * t) * (std::cos(w1 * t) + a / w1 * std::sin(w1 * t));
    return std::exp(-x) * std::expm1(x * rho);
  };
  const long half = static_cast<long>(n / 2);
  double sum = 0.0;
  for (long m = -half; m <= half; ++m) {
    double cm = 0.0;
    for (long j = -4; j <= 4; ++j) cm += c(static_cast<double>(m + j * static_cast<long>(n)) * dt);
    sum += cm * std::cos(2.0 * kPi * f * static_cast<double>(m) * dt);
  }
  return sum * dt;
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b, double floor_frac = 1e-6) {
  double peak = 0.0;
  for (double v : b) peak = std::max(peak, std::abs(v));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), floor_frac * peak));
  return m;
}

}  // namespace

TEST_CASE("position spectrum integrates to equipartition", "[theory]") {
  const OscillatorParams osc{kOmega, 2e4, 300.0, 1e-18};
  // w = Omega tan(theta) maps (0, inf) to (0, pi/2).
  const int n = 200000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double th = (i + 0.5) * (0.5 * kPi / n);
    const double w = osc.omega * std::tan(th);
    const double jac = osc.omega / (std::cos(th) * std::cos(th));
    sum += szz(osc, w) * jac;
  }
  sum *= (0.5 * kPi / n) * 2.0 / (2.0 * kPi);  // both signs of w, per Hz
  CHECK(sum == Catch::Approx(osc.position_variance()).epsilon(1e-6));
  CHECK(szz(kOmega, 2e4, 1e5, 3.0) == Catch::Approx(3.0 * 2e4 / ((1e10 - kOmega * kOmega) * (1e10 - kOmega * kOmega) + 4e8 * 1e10)));
}

TEST_CASE("sigma_zz on linear and periodic grids", "[theory]") {
  const double gamma = 5e4;
  const auto lin = FrequencyGrid::centered(0.0, 250.0, 4e6, false);
  const auto s = sigma_zz(kOmega, gamma, lin);
  for (std::size_t i = 0; i < lin.n; i += 997) REQUIRE(s[i] == Catch::Approx(sigma_ref(kOmega, gamma, lin.offset(i))).epsilon(1e-13));
  double mass = 0.0;
  for (double v : s) mass += v * lin.df;
  CHECK(mass + sigma_zz_tail_mass(kOmega, gamma, lin.half_width() + 0.5 * lin.df) == Catch::Approx(1.0).epsilon(1e-6));

  // Periodic grid: brute-force image sum over periods P = n df.
  const auto per = FrequencyGrid::centered(0.0, 500.0, 1e6, true);
  const auto sp = sigma_zz(kOmega, gamma, per);
  const double period = static_cast<double>(per.n) * per.df;
  for (std::size_t i = 0; i < per.n; i += 311) {
    double img = 0.0;
    for (int j = -200000; j <= 200000; ++j) img += sigma_ref(kOmega, gamma, per.offset(i) + j * period);
    REQUIRE(sp[i] == Catch::Approx(img).epsilon(1e-9));
  }
  double pmass = 0.0;
  for (double v : sp) pmass += v * per.df;
  CHECK(pmass == Catch::Approx(1.0).epsilon(1e-12));

  const auto narrow = FrequencyGrid::centered(0.0, 250.0, 5e4, false);
  try {
    sigma_zz(kOmega, gamma, narrow);
    FAIL("expected insufficient_span");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::insufficient_span);
  }
}

TEST_CASE("phase correlation closed forms", "[theory]") {
  // Cosine transform of the normalized spectrum by dense quadrature.
  auto numeric = [](double omega, double gamma, double t) {
    const int n = 400000;
    const double fmax = 50.0 * (omega + gamma) / (2.0 * kPi);
    const double h = fmax / n;
    double s = 0.5 * sigma_ref(omega, gamma, 0.0);
    for (int i = 1; i < n; ++i) {
      const double f = i * h;
      s += sigma_ref(omega, gamma, f) * std::cos(2.0 * kPi * f * t);
    }
    return 2.0 * s * h;
  };
  for (double gamma : {2e4, 2.0 * kOmega - 1.0, 2.0 * kOmega, 5.0 * kOmega}) {
    for (double t : {0.0, 1e-7, 2e-6, 1e-5}) {
      INFO("gamma " << gamma << " t " << t);
      CHECK(phase_correlation(kOmega, gamma, t) == Catch::Approx(numeric(kOmega, gamma, t)).margin(2e-4));
    }
  }
  CHECK(phase_correlation(kOmega, 2e4, 0.0) == 1.0);
  CHECK(phase_correlation(kOmega, 2e4, -3e-6) == phase_correlation(kOmega, 2e4, 3e-6));
  // Continuous through critical damping.
  const double crit = 2.0 * kOmega;
  for (double t : {1e-7, 1e-6, 1e-5})
    CHECK(phase_correlation(kOmega, crit * (1 + 1e-9), t) ==
          Catch::Approx(phase_correlation(kOmega, crit * (1 - 1e-9), t)).epsilon(1e-7));
}

TEST_CASE("phase correlation series matches the closed form", "[theory]") {
  for (double gamma : {1e3, 2e4, 2.0 * kOmega, 4.0 * kOmega}) {
    const double dt = 1e-7;
    const auto s = phase_correlation_series(kOmega, gamma, dt, 5000);
    REQUIRE(s.size() == 5000);
    for (std::size_t m = 0; m < s.size(); m += 7)
      REQUIRE(std::abs(s[m] - phase_correlation(kOmega, gamma, m * dt)) < 1e-12);
  }
}

TEST_CASE("correlation on the conjugate time grid", "[theory]") {
  const double phi = 0.75, gamma = 2e4;
  const auto g = FrequencyGrid::centered(0.0, gamma / (20.0 * kPi), 2.5e6, true);
  const auto r = correlation_rphiphi(phi, kOmega, gamma, g);
  CHECK(r.dt == Catch::Approx(1.0 / (g.n * g.df)));
  for (std::size_t m : {0u, 3u, 40u, 700u}) {
    CHECK(r.values[m] == Catch::Approx(phi * phi * phase_correlation(kOmega, gamma, m * r.dt)).margin(1e-11));
    CHECK(r.values[g.n - m - 1] == Catch::Approx(r.values[m + 1]).margin(1e-12));
  }
}

TEST_CASE("Poisson and Bessel weights", "[theory]") {
  const double x = 2.3;
  const auto w = poisson_weights(x, 30);
  double sum = 0.0;
  for (int n = 0; n <= 30; ++n) {
    CHECK(w[n] == Catch::Approx(std::exp(-x + n * std::log(x) - std::lgamma(n + 1.0))).epsilon(1e-12));
    sum += w[n];
  }
  CHECK(sum + poisson_tail(x, 30) == Catch::Approx(1.0).epsilon(1e-14));
  CHECK(poisson_tail(x, 3) == Catch::Approx(1.0 - w[0] - w[1] - w[2] - w[3]).epsilon(1e-12));

  for (double y : {0.01, 0.5, 4.0, 19.0, 35.0}) {
    const auto b = scaled_bessel_i(y, 12);
    for (int n = 0; n <= 12; ++n)
      CHECK(b[n] == Catch::Approx(std::exp(-y) * std::cyl_bessel_i(double(n), y)).epsilon(1e-11));
  }
  // e^{x} = I_0(x) + 2 sum I_n(x)
  for (double phi : {0.1, 1.0, 2.0}) {
    const auto nb = narrowband_weights(phi, 80);
    double s = 0.0;
    for (double v : nb) s += v;
    CHECK(s == Catch::Approx(1.0).epsilon(1e-13));
  }
  const auto j = harmonic_bessel_weights(1.7, 40);
  double s = j[0];
  for (int n = 1; n <= 40; ++n) s += 2.0 * j[n];
  CHECK(s == Catch::Approx(1.0).epsilon(1e-13));
  CHECK(j[1] == Catch::Approx(std::pow(std::cyl_bessel_j(1.0, 1.7), 2)));
}

TEST_CASE("Gauss-Hermite rules integrate polynomials exactly", "[theory]") {
  for (int order : {5, 21, 40}) {
    const auto gh = gauss_hermite(order);
    REQUIRE(gh.nodes.size() == static_cast<std::size_t>(order));
    for (int k = 0; k < std::min(order, 16); ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < gh.nodes.size(); ++i) s += gh.weights[i] * std::pow(gh.nodes[i], 2 * k);
      REQUIRE(s == Catch::Approx(std::tgamma(k + 0.5)).epsilon(1e-8));
      double odd = 0.0;
      for (std::size_t i = 0; i < gh.nodes.size(); ++i) odd += gh.weights[i] * std::pow(gh.nodes[i], 2 * k + 1);
      REQUIRE(std::abs(odd) < 1e-8 * std::tgamma(k + 1.0));
    }
  }
}

TEST_CASE("series and correlation spectra against a direct lag sum", "[theory]") {
  for (double phi : {0.2, 1.0}) {
    const ModelParams p{phi, kOmega, 5e4};
    const auto g = FrequencyGrid::centered(0.0, p.gamma / (20.0 * kPi), 1.2e6, true);
    const double dt = 1.0 / (g.n * g.df);
    const auto a = middleton_series(p, 1.0, g, 1e-13);
    const auto b = spectrum_from_correlation(p, 1.0, g);
    std::vector<double> ref;
    for (std::size_t i = 0; i < g.n; i += 53) ref.push_back(direct_density(p, g.offset(i), dt, g.n));
    std::vector<double> sa, sb;
    for (std::size_t i = 0; i < g.n; i += 53) {
      sa.push_back(a.density[i]);
      sb.push_back(b.density[i]);
    }
    INFO("phi " << phi);
    CHECK(max_rel(sa, ref) < 1e-6);
    CHECK(max_rel(sb, ref) < 1e-6);
    CHECK(a.carrier_weight == Catch::Approx(std::exp(-phi * phi)).epsilon(1e-14));
    CHECK(a.carrier_weight + a.continuous_mass() == Catch::Approx(1.0).epsilon(1e-10));
    CHECK(b.carrier_weight + b.continuous_mass() == Catch::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("series truncation and grid checks", "[theory]") {
  const ModelParams p{1.0, kOmega, 2e4};
  const auto g = FrequencyGrid::centered(0.0, 300.0, 2.5e6, true);
  const auto s = middleton_series(p, 1.0, g, 1e-8);
  CHECK(poisson_tail(1.0, s.truncation_order) < 1e-8);
  CHECK(poisson_tail(1.0, s.truncation_order - 1) >= 1e-8);

  // A linear grid too narrow for the highest retained order.
  const auto bad = FrequencyGrid::centered(0.0, 300.0, 5e5, false);
  try {
    middleton_series(p, 1.0, bad);
    FAIL("expected grid_span");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::grid_span);
  }
  const auto coarse = FrequencyGrid::centered(0.0, 2e3, 2.5e6, true);
  try {
    spectrum_from_correlation(p, 1.0, coarse);
    FAIL("expected resolution");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::resolution);
  }
  CHECK_THROWS_AS(middleton_series({-0.1, kOmega, 2e4}, 1.0, g), Error);
}

TEST_CASE("phi = 0 is all carrier; amplitude is carried separately", "[theory]") {
  const auto g = FrequencyGrid::centered(3e6, 300.0, 2.5e6, true);
  const auto s = middleton_series({0.0, kOmega, 2e4}, 2.0, g);
  CHECK(s.carrier_weight == 1.0);
  CHECK(s.continuous_mass() == 0.0);
  CHECK(s.amplitude == 2.0);
  CHECK(g.freq(g.center()) == 3e6);
}

TEST_CASE("RIN broadening", "[theory]") {
  const ModelParams p{0.35, 2.0 * kPi * 69.8e3, 2.5e3};
  const auto g = FrequencyGrid::centered(0.0, 20.0, 1.2e6, true);
  SpectrumEvaluator eval = [&](const ModelParams& q) { return middleton_series(q, 1.0, g, 1e-12); };
  const auto base = eval(p);
  const auto same = rin_broadened(eval, p, 0.0);
  CHECK(same.density == base.density);
  CHECK(same.carrier_weight == base.carrier_weight);

  const auto shifted = rin_shifted(p, 0.02);
  CHECK(shifted.phi == Catch::Approx(0.35 / std::sqrt(1.02)));
  CHECK(shifted.omega == Catch::Approx(p.omega * std::sqrt(1.02)));
  CHECK(shifted.gamma == p.gamma);

  // Averaging (1 + r) keeps the total normalized power at E[1 + r] = 1.
  const auto b = rin_broadened(eval, p, 0.01, 21);
  CHECK(b.carrier_weight + b.continuous_mass() == Catch::Approx(1.0).epsilon(1e-9));
  CHECK_THROWS_AS(rin_broadened(eval, p, 0.5), Error);
  try {
    rin_average(0.29, 60, [](double r) { return std::vector<double>{r}; });
    FAIL("expected domain");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::domain);
  }
}

TEST_CASE("theory JSON", "[theory]") {
  const auto j = to_json(ModelParams{0.5, kOmega, 2e4});
  const auto p = model_params_from_json(j);
  CHECK(p.phi == 0.5);
  CHECK(p.omega == kOmega);
  CHECK(p.gamma == 2e4);
}
