#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "levspec/error.hpp"
#include "levspec/sde_sim.hpp"

using namespace levspec;
using Catch::Matchers::WithinRel;

namespace {

OscillatorParams reference_oscillator(double gamma = 2e4) {
  return {2.0 * std::numbers::pi * 1e5, gamma, 300.0, 1e-18};
}

SimulationConfig short_run(double duration, std::uint64_t seed) {
  SimulationConfig c;
  c.duration = duration;
  c.seed = seed;
  return c;
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::io;
}

}  // namespace

TEST_CASE("simulation config is validated", "[sde_sim]") {
  const auto osc = reference_oscillator();
  CHECK(code_of([&] { simulate_trajectory(osc, short_run(0.0, 1)); }) == Errc::invalid_config);
  auto c = short_run(1e-3, 1);
  c.dt = 3e-9;  // 1 / (fs dt) not an integer
  CHECK(code_of([&] { simulate_trajectory(osc, c); }) == Errc::invalid_config);
  c = short_run(1e-3, 1);
  c.dt = 1e-7;
  c.sample_rate = 1e6;  // omega dt = 0.063 is fine
  CHECK_NOTHROW(simulate_trajectory(osc, c));
  c.dt = 1e-6;  // omega dt = 0.63
  CHECK(code_of([&] { simulate_trajectory(osc, c); }) == Errc::unstable_step);
  auto bad = osc;
  bad.gamma = -1.0;
  CHECK(code_of([&] { simulate_trajectory(bad, short_run(1e-3, 1)); }) == Errc::invalid_config);

  SignalParams s;
  s.carrier_freq = 3e6;
  CHECK(code_of([&] { s.validate(); }) == Errc::invalid_config);  // neither phi nor kappa
  s.phi = 0.5;
  s.kappa = 1e9;
  CHECK(code_of([&] { s.validate(); }) == Errc::invalid_config);  // both
}

TEST_CASE("same seed gives identical records, different seeds differ", "[sde_sim]") {
  const auto osc = reference_oscillator();
  const auto a = simulate_trajectory(osc, short_run(2e-3, 11));
  const auto b = simulate_trajectory(osc, short_run(2e-3, 11));
  const auto c = simulate_trajectory(osc, short_run(2e-3, 12));
  REQUIRE(a.samples.size() == 20000);
  CHECK(a.samples == b.samples);
  CHECK(a.samples != c.samples);
  CHECK(a.metadata.at("seed") == 11);
}

TEST_CASE("zero temperature relaxes to rest", "[sde_sim]") {
  auto osc = reference_oscillator();
  osc.temperature = 0.0;
  const auto z = simulate_trajectory(osc, short_run(1e-3, 3));
  for (double x : z.samples) REQUIRE(x == 0.0);
}

TEST_CASE("stationary variance and correlation match the oscillator", "[sde_sim]") {
  // Heavily damped so 50 ms holds many correlation times.
  const auto osc = reference_oscillator(1e5);
  const auto z = simulate_trajectory(osc, short_run(0.05, 21));
  const double var = osc.position_variance();
  double m2 = 0.0;
  for (double x : z.samples) m2 += x * x;
  m2 /= static_cast<double>(z.samples.size());
  // Relative SE of a time-averaged square: sqrt(2 / (gamma T)).
  const double rel_se = std::sqrt(2.0 / (osc.gamma * 0.05));
  CHECK(std::abs(m2 / var - 1.0) < 4.0 * rel_se);

  // Autocorrelation at a few lags against the underdamped closed form.
  const double w1 = std::sqrt(osc.omega * osc.omega - 0.25 * osc.gamma * osc.gamma);
  for (std::size_t lag : {5u, 10u, 25u}) {
    const double t = static_cast<double>(lag) / z.sample_rate;
    const double expect = std::exp(-0.5 * osc.gamma * t) *
                          (std::cos(w1 * t) + osc.gamma / (2.0 * w1) * std::sin(w1 * t));
    double c = 0.0;
    for (std::size_t i = 0; i + lag < z.samples.size(); ++i) c += z.samples[i] * z.samples[i + lag];
    c /= static_cast<double>(z.samples.size() - lag) * var;
    CHECK(std::abs(c - expect) < 4.0 * rel_se);
  }
}

TEST_CASE("signal synthesis", "[sde_sim]") {
  const auto osc = reference_oscillator();
  const auto cfg = short_run(1e-3, 5);
  const auto z = simulate_trajectory(osc, cfg);

  SECTION("phi = 0 is a pure carrier") {
    SignalParams s;
    s.carrier_freq = 3e6;
    s.phi = 0.0;
    s.amplitude = 2.0;
    const auto v = synthesize_signal(z, s, osc, cfg);
    for (std::size_t i = 0; i < v.samples.size(); i += 97) {
      const double expect = 2.0 * std::sin(2.0 * std::numbers::pi * 3e6 * static_cast<double>(i) / 10e6);
      REQUIRE(std::abs(v.samples[i] - expect) < 1e-9);
    }
  }

  SECTION("phase follows kappa z") {
    SignalParams s;
    s.carrier_freq = 3e6;
    s.phi = 0.75;
    const double kappa = s.sensitivity(osc);
    CHECK_THAT(kappa * std::sqrt(osc.position_variance()), WithinRel(0.75, 1e-12));
    const auto v = synthesize_signal(z, s, osc, cfg);
    for (std::size_t i = 0; i < v.samples.size(); i += 101) {
      const double ph = 2.0 * std::numbers::pi * 0.3 * static_cast<double>(i) + kappa * z.samples[i];
      REQUIRE(std::abs(v.samples[i] - std::sin(ph)) < 1e-8);
    }
  }

  SECTION("white detector noise has the requested density") {
    SignalParams s;
    s.carrier_freq = 3e6;
    s.phi = 0.0;
    s.amplitude = 1e-12;
    s.noise_floor = 1e-9;
    const auto v = synthesize_signal(z, s, osc, cfg);
    double m2 = 0.0;
    for (double x : v.samples) m2 += x * x;
    m2 /= static_cast<double>(v.samples.size());
    const double expect = 1e-9 * 10e6;
    CHECK(std::abs(m2 / expect - 1.0) < 5.0 * std::sqrt(2.0 / v.samples.size()));
  }

  SECTION("carrier above Nyquist is rejected") {
    SignalParams s;
    s.carrier_freq = 6e6;
    s.phi = 0.1;
    CHECK(code_of([&] { synthesize_signal(z, s, osc, cfg); }) == Errc::aliasing);
  }
}

TEST_CASE("intensity drift scales amplitude and stiffness", "[sde_sim]") {
  auto cfg = short_run(1e-3, 8);
  cfg.rin_drift = RinDrift{0.01, DriftModel::constant_per_run};
  const double r = intensity_drift(cfg, 0);
  CHECK(r == intensity_drift(cfg, 500));
  CHECK(r != 0.0);
  CHECK(std::abs(r) < 0.06);

  cfg.rin_drift->model = DriftModel::linear_ramp;
  CHECK(intensity_drift(cfg, 0) == Catch::Approx(-0.01));
  CHECK(intensity_drift(cfg, cfg.n_samples() - 1) == Catch::Approx(0.01));

  const auto osc = reference_oscillator();
  SignalParams s;
  s.carrier_freq = 3e6;
  s.phi = 0.0;
  cfg.rin_drift->model = DriftModel::constant_per_run;
  const auto z = simulate_trajectory(osc, cfg);
  const auto v = synthesize_signal(z, s, osc, cfg);
  double peak = 0.0;
  for (double x : v.samples) peak = std::max(peak, std::abs(x));
  // 3 MHz at 10 MS/s samples the sine at tenths of a cycle.
  CHECK(peak == Catch::Approx((1.0 + r) * std::sin(0.4 * std::numbers::pi)).epsilon(1e-12));
}

TEST_CASE("carrier cycles stay exact at large sample indices", "[sde_sim]") {
  // f / fs = 3/10 exactly, so frac(0.3 n) = (3 n mod 10) / 10.
  double worst = 0.0;
  for (std::uint64_t n : {1ull, 7ull, 65535ull, 2500001ull, 123456789ull, (1ull << 40) + 3}) {
    const double c = carrier_cycles(3e6, 1e7, n);
    const double want = static_cast<double>((3 * n) % 10) / 10.0;
    double d = std::abs(c - want);
    d = std::min(d, 1.0 - d);
    worst = std::max(worst, d);
    CHECK(c >= 0.0);
    CHECK(c < 1.0);
  }
  CHECK(worst < 1e-15);
  // The naive product drifts by many ulp at the same indices.
  const double naive = std::fmod(0.3 * static_cast<double>((1ull << 40) + 3), 1.0);
  CHECK(std::abs(naive - 0.9) > 1e-6);
}
