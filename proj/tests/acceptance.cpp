// Acceptance checks. `acceptance` runs all of them; `acceptance 3 5` runs a
// subset. One PASS/FAIL line per criterion; exit status 1 if any fails.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "levspec/error.hpp"
#include "levspec/inference.hpp"
#include "levspec/sde_sim.hpp"
#include "levspec/spectral.hpp"
#include "levspec/theory.hpp"

using namespace levspec;

namespace {

constexpr double kPi = std::numbers::pi;
const double kOmega = 2.0 * kPi * 100e3;
const double kGammas[] = {10e3, 20e3, 50e3, 100e3};
const double kPhis[] = {0.1, 0.2, 0.5, 1.0};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int thread_count() {
  if (const char* env = std::getenv("LEVSPEC_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

OscillatorParams room_temperature(double omega, double gamma) { return {omega, gamma, 300.0, 1e-18}; }

// Reference record: unity-amplitude carrier at 3 MHz, 10 MS/s, 1 s.
TimeSeries reference_signal(std::uint64_t seed) {
  const auto osc = room_temperature(kOmega, 20e3);
  SimulationConfig sim;
  sim.seed = seed;
  SignalParams sig;
  sig.carrier_freq = 3e6;
  sig.phi = 0.75;
  return synthesize_signal(simulate_trajectory(osc, sim), sig, osc, sim);
}

// ---------------------------------------------------------------- 1

Outcome oracle_equivalence() {
  double worst = 0.0;
  std::string where;
  for (double gamma : kGammas)
    for (double phi : kPhis) {
      const ModelParams p{phi, kOmega, gamma};
      const auto g = FrequencyGrid::centered(0.0, gamma / (20.0 * kPi), 5e6, true);
      const auto a = middleton_series(p, 1.0, g, 1e-13);
      const auto b = spectrum_from_correlation(p, 1.0, g);
      for (std::size_t i = 0; i < g.n; ++i) {
        const double rel = std::abs(a.density[i] - b.density[i]) / std::abs(b.density[i]);
        if (rel > worst) {
          worst = rel;
          where = fmt("gamma %.0f phi %.1f f %.0f", gamma, phi, g.offset(i));
        }
      }
    }
  return {worst < 1e-6, fmt("max relative error %.2e (%s)", worst, where.c_str())};
}

// ---------------------------------------------------------------- 2

Outcome normalization() {
  double worst = 0.0;
  for (double gamma : kGammas)
    for (double phi : kPhis) {
      const ModelParams p{phi, kOmega, gamma};
      const auto g = FrequencyGrid::centered(0.0, gamma / (20.0 * kPi), 5e6, false);
      for (const auto& s : {middleton_series(p, 1.0, g), spectrum_from_correlation(p, 1.0, g)}) {
        double mass = s.carrier_weight;
        for (double v : s.density) mass += v * g.df;
        worst = std::max(worst, std::abs(mass - 1.0));
      }
    }
  return {worst < 1e-4, fmt("max |total - 1| = %.2e over 16 cells, both engines", worst)};
}

// ---------------------------------------------------------------- 3

// Integral over |d| < w of y minus a quadratic baseline fitted on w <= |d| < flank.
double baseline_net(const std::vector<double>& d, const std::vector<double>& y, double w,
                    double flank, double df) {
  std::vector<std::size_t> side, inner;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double a = std::abs(d[i]);
    if (a < w) inner.push_back(i);
    else if (a < flank) side.push_back(i);
  }
  Eigen::MatrixXd a(side.size(), 3);
  Eigen::VectorXd b(side.size());
  for (std::size_t r = 0; r < side.size(); ++r) {
    const double x = d[side[r]] / w;
    a(r, 0) = 1.0;
    a(r, 1) = x;
    a(r, 2) = x * x;
    b(r) = y[side[r]];
  }
  const Eigen::VectorXd c = a.colPivHouseholderQr().solve(b);
  double net = 0.0;
  for (auto i : inner) {
    const double x = d[i] / w;
    net += (y[i] - (c(0) + c(1) * x + c(2) * x * x)) * df;
  }
  return net;
}

// Peak masses on a smooth background. Each harmonic's line is integrated over
// +-5 kHz after removing a quadratic baseline fitted on the flanks out to
// 20 kHz; the fraction of a Lorentzian line (HWHM n gamma / 4 pi) that survives
// the same procedure is divided out.
Outcome narrowband_limit() {
  const double gamma = kOmega / 1000.0;
  const double fm = kOmega / (2.0 * kPi);
  const double w = 5e3, flank = 20e3;
  double worst = 0.0;
  std::string where;
  for (double phi : kPhis) {
    const auto g = FrequencyGrid::centered(0.0, gamma / (40.0 * kPi), 1.6e6, true);
    const auto s = middleton_series({phi, kOmega, gamma}, 1.0, g, 1e-15);
    const auto expect = narrowband_weights(phi, 4);
    for (int n = 0; n <= 4; ++n) {
      const double h = std::max(n, n == 0 ? 2 : 1) * gamma / (4.0 * kPi);
      std::vector<double> d, y, line;
      for (std::size_t i = 0; i < g.n; ++i) {
        const double f = g.offset(i);
        if (n > 0 && f < 0.0) continue;  // one side; doubled below
        const double off = f - n * fm;
        if (std::abs(off) >= flank) continue;
        d.push_back(off);
        y.push_back(s.density[i]);
        line.push_back(h / kPi / (off * off + h * h));
      }
      double mass = baseline_net(d, y, w, flank, g.df) / baseline_net(d, line, w, flank, g.df);
      mass = n == 0 ? mass + s.carrier_weight : 2.0 * mass;
      const double rel = std::abs(mass / expect[n] - 1.0);
      if (rel > worst) {
        worst = rel;
        where = fmt("phi %.1f n %d", phi, n);
      }
    }
  }
  return {worst < 0.01, fmt("max relative deviation %.2e (%s)", worst, where.c_str())};
}

// ---------------------------------------------------------------- 4

Outcome chi2_residuals() {
  const auto v = reference_signal(20240);
  const std::size_t L = v.samples.size() / 9;
  const auto est = bartlett(v, L, WindowSpec{});
  FitWindow window;
  window.carrier_freq = 3e6;
  PeriodogramModel model(L, v.sample_rate, 3e6, est.window);
  const ModelParams truth{0.75, kOmega, 20e3};
  const auto full = model_on_estimate(model, model.evaluate(truth), est);
  const auto bins = window.bins(est);
  const auto r = residuals(est, full, bins);
  // Not part of the verdict: against the fitted spectrum, which absorbs this
  // record's realized oscillator energy.
  const WhittleObjective obj(est, window);
  const auto fit = mle_fit(obj, truth);
  auto fitted = model_on_estimate(model, model.evaluate(fit.model), est);
  for (double& x : fitted) x = fit.nuisance.gain * x + fit.nuisance.offset;
  const auto rf = residuals(est, fitted, bins);
  return {r.ks_pvalue > 0.01,
          fmt("nu %d, %zu bins (stride %zu), KS D %.4f, p %.3g; vs fitted spectrum D %.4f, p %.3f",
              est.dof, r.bins.size(), r.stride, r.ks_statistic, r.ks_pvalue, rf.ks_statistic,
              rf.ks_pvalue)};
}

// ---------------------------------------------------------------- 5

Outcome equipartition() {
  bool pass = true;
  std::string detail;
  std::uint64_t seed = 500;
  for (double gamma : kGammas) {
    const auto osc = room_temperature(kOmega, gamma);
    SimulationConfig sim;
    sim.seed = seed++;
    const auto z = simulate_trajectory(osc, sim);
    // Batch means over 100 blocks of 10 ms, each many damping times long.
    const std::size_t blocks = 100;
    const std::size_t len = z.samples.size() / blocks;
    std::vector<double> means(blocks, 0.0);
    for (std::size_t b = 0; b < blocks; ++b) {
      for (std::size_t i = b * len; i < (b + 1) * len; ++i) means[b] += z.samples[i] * z.samples[i];
      means[b] /= static_cast<double>(len);
    }
    double m = 0.0;
    for (double x : means) m += x;
    m /= blocks;
    double var = 0.0;
    for (double x : means) var += (x - m) * (x - m);
    const double se = std::sqrt(var / (blocks - 1.0) / blocks);
    const double expect = kBoltzmann * osc.temperature / (osc.mass * osc.omega * osc.omega);
    const double zscore = (m - expect) / se;
    pass = pass && std::abs(zscore) < 3.0;
    detail += fmt("%sgamma %.0fk: %+.2f SE", detail.empty() ? "" : ", ", gamma / 1e3, zscore);
  }
  return {pass, detail};
}

// ---------------------------------------------------------------- 6

Outcome ensemble_recovery() {
  struct Cell {
    double phi, gamma;
  };
  const Cell cells[] = {{0.2, 20e3}, {0.5, 50e3}};
  bool pass = true;
  std::string detail;
  std::uint64_t base = 100000;
  for (const auto& cell : cells) {
    EnsembleConfig c;
    c.oscillator = room_temperature(kOmega, cell.gamma);
    c.signal.carrier_freq = 3e6;
    c.signal.phi = cell.phi;
    c.simulation.seed = base;
    base += 1000;
    c.n_runs = 40;
    c.segment_length = 65536;
    c.profile_params = {"phi"};
    c.threads = thread_count();
    const auto t0 = std::chrono::steady_clock::now();
    c.progress = [&](std::size_t done, std::size_t total) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "  cell phi %.1f gamma %.0fk: %zu/%zu (%.0f s)\n", cell.phi, cell.gamma / 1e3,
                   done, total, s);
    };
    const auto report = ensemble_validate(c);
    const auto& s = report.params[0];
    const bool ok = !report.failed && std::abs(s.bias_se) < 1.0 && s.sd_ratio >= 0.7 &&
                    s.sd_ratio <= 1.4 && s.coverage >= s.coverage_lo && s.coverage <= s.coverage_hi;
    pass = pass && ok;
    detail += fmt("%s[phi %.1f gamma %.0fk: %zu/%zu converged, bias %+.2f SE, SD ratio %.2f, "
                  "coverage %.3f in [%.3f, %.3f]]",
                  detail.empty() ? "" : " ", cell.phi, cell.gamma / 1e3, report.n_converged,
                  c.n_runs, s.bias_se, s.sd_ratio, s.coverage, s.coverage_lo, s.coverage_hi);
  }
  return {pass, detail};
}

// ---------------------------------------------------------------- 7

Outcome shape_invariance() {
  const auto osc = room_temperature(kOmega, 20e3);
  SimulationConfig sim;
  sim.seed = 777;
  sim.duration = 0.25;
  SignalParams sig;
  sig.carrier_freq = 3e6;
  sig.phi = 0.75;
  const auto v = synthesize_signal(simulate_trajectory(osc, sim), sig, osc, sim);
  const auto est = bartlett(v, 65536, WindowSpec{});
  FitWindow window;
  window.carrier_freq = 3e6;
  const FitOptions opt;
  const ModelParams init{0.7, kOmega * 1.02, 25e3};
  const auto base = mle_fit(est, init, window, opt);
  bool pass = base.converged;
  double worst = 0.0, worst_gain = 0.0;
  for (double c : {0.1, 10.0}) {
    auto scaled = est;
    for (double& x : scaled.power) x *= c;
    const auto fit = mle_fit(scaled, init, window, opt);
    pass = pass && fit.converged;
    worst = std::max({worst, std::abs(std::log(fit.model.phi / base.model.phi)),
                      std::abs(std::log(fit.model.omega / base.model.omega)),
                      std::abs(std::log(fit.model.gamma / base.model.gamma))});
    worst_gain = std::max(worst_gain, std::abs(fit.nuisance.gain / (c * base.nuisance.gain) - 1.0));
  }
  pass = pass && worst <= 10.0 * opt.tol && worst_gain <= 1e-6;
  return {pass, fmt("max |d log param| %.2e (tol %.0e), max gain deviation from c A %.2e", worst,
                    opt.tol, worst_gain)};
}

// ---------------------------------------------------------------- 8

double fwhm_near(const TheorySpectrum& s, double f_peak, double search) {
  const auto& g = s.grid;
  std::size_t best = 0;
  double peak = -1.0;
  for (std::size_t i = 0; i < g.n; ++i)
    if (std::abs(g.offset(i) - f_peak) < search && s.density[i] > peak) {
      peak = s.density[i];
      best = i;
    }
  const double half = 0.5 * peak;
  auto cross = [&](int dir) {
    std::size_t i = best;
    while (s.density[i + dir] > half) i += dir;
    const double y0 = s.density[i], y1 = s.density[i + dir];
    return g.offset(i) + dir * g.df * (y0 - half) / (y0 - y1);
  };
  return cross(+1) - cross(-1);
}

Outcome rin_broadening() {
  const ModelParams p{0.35, 2.0 * kPi * 69.8e3, 2.5e3};
  const double rin = 0.01;
  const auto g = FrequencyGrid::centered(0.0, 25.0, 320e3, true);
  SpectrumEvaluator eval = [&](const ModelParams& q) { return middleton_series(q, 1.0, g, 1e-12); };
  const auto base = eval(p);
  const auto same = rin_broadened(eval, p, 0.0);
  const bool identical = same.density == base.density && same.carrier_weight == base.carrier_weight;

  const auto quad = rin_broadened(eval, p, rin);

  // Stratified Monte Carlo: one normal draw per equal-probability stratum.
  const std::size_t draws = 100000;
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const boost::math::normal_distribution<double> unit;
  std::vector<double> mc(g.n, 0.0);
  double mc_carrier = 0.0;
  for (std::size_t k = 0; k < draws; ++k) {
    const double u = (static_cast<double>(k) + unif(gen)) / static_cast<double>(draws);
    const double r = rin * boost::math::quantile(unit, u);
    const ModelParams q{p.phi / std::sqrt(1.0 + r), p.omega * std::sqrt(1.0 + r), p.gamma};
    const auto s = eval(q);
    for (std::size_t i = 0; i < g.n; ++i) mc[i] += (1.0 + r) * s.density[i];
    mc_carrier += (1.0 + r) * s.carrier_weight;
  }
  double worst = std::abs(quad.carrier_weight / (mc_carrier / draws) - 1.0);
  for (std::size_t i = 0; i < g.n; ++i)
    worst = std::max(worst, std::abs(quad.density[i] / (mc[i] / draws) - 1.0));

  const double f3 = 3.0 * p.omega / (2.0 * kPi);
  const double w_base = fwhm_near(base, f3, 20e3);
  const double w_rin = fwhm_near(quad, f3, 20e3);
  const bool pass = identical && worst < 1e-3 && w_rin > w_base;
  return {pass, fmt("R=0 identical: %s; quadrature vs MC max relative %.2e; 3rd harmonic FWHM %.1f -> %.1f Hz",
                    identical ? "yes" : "no", worst, w_base, w_rin)};
}

// ---------------------------------------------------------------- 9

Outcome profile_vs_conditional() {
  const auto v = reference_signal(31337);
  const auto est = bartlett(v, 65536, WindowSpec{});
  FitWindow window;
  window.carrier_freq = 3e6;
  const WhittleObjective obj(est, window);
  const auto fit = mle_fit(obj, {0.75, kOmega, 20e3});
  if (!fit.converged) return {false, "fit did not converge"};
  ProfileOptions opt;
  opt.threads = thread_count();
  const auto prof = profile_scan(obj, fit, "phi", opt);
  opt.fixed = {"gamma"};
  const auto cond = profile_scan(obj, fit, "phi", opt);
  const double wp = prof.interval.hi - prof.interval.lo;
  const double wc = cond.interval.hi - cond.interval.lo;
  return {wp >= wc && prof.converged && cond.converged,
          fmt("68%% width profile %.3e vs conditional %.3e (ratio %.2f)", wp, wc, wp / wc)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"oracle equivalence (series vs correlation)", oracle_equivalence},
      {"normalization", normalization},
      {"narrow-band Bessel masses", narrowband_limit},
      {"chi-square residual law", chi2_residuals},
      {"equipartition", equipartition},
      {"ensemble recovery", ensemble_recovery},
      {"shape invariance", shape_invariance},
      {"RIN broadening", rin_broadening},
      {"profile vs conditional interval", profile_vs_conditional},
  };
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
  if (which.empty())
    for (int i = 1; i <= static_cast<int>(criteria.size()); ++i) which.push_back(i);

  int failed = 0;
  for (int k : which) {
    if (k < 1 || k > static_cast<int>(criteria.size())) {
      std::fprintf(stderr, "no criterion %d\n", k);
      return 2;
    }
    const auto& [name, run] = criteria[k - 1];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d %-44s %s  %s  [%.1f s]\n", k, name, o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
