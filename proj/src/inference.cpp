#include "levspec/inference.hpp"

#include <boost/accumulators/accumulators.hpp>
#include <boost/accumulators/statistics/stats.hpp>
#include <boost/accumulators/statistics/sum_kahan.hpp>
#include <boost/math/distributions/binomial.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <numeric>
#include <thread>

#include "levspec/error.hpp"
#include "levspec/fft.hpp"

namespace levspec {

namespace {

// Compensated sum; plain summation of ~1e5 Whittle terms leaves ~1e-8 of
// noise in the objective, which the simplex can see.
using KahanSum = boost::accumulators::accumulator_set<
    double, boost::accumulators::stats<boost::accumulators::tag::sum_kahan>>;

double total(const KahanSum& acc) { return boost::accumulators::sum_kahan(acc); }

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> window_lag(const WindowSpec& w, std::size_t n) {
  const auto win = w.weights(n);
  const std::size_t len = fft::good_size(2 * n);
  std::vector<double> pad(len, 0.0);
  std::copy(win.begin(), win.end(), pad.begin());
  std::vector<fft::cplx> spec(len / 2 + 1);
  fft::forward_real(pad, spec);
  for (auto& c : spec) c = std::norm(c);
  std::vector<double> r(len);
  fft::inverse_real(spec, r);
  std::vector<double> lag(n);
  for (std::size_t m = 0; m < n; ++m) lag[m] = r[m] / r[0];
  return lag;
}

}  // namespace

std::string to_string(ModelEngine e) { return e == ModelEngine::series ? "series" : "correlation"; }

ModelEngine model_engine_from_string(const std::string& name) {
  if (name == "correlation") return ModelEngine::correlation;
  if (name == "series" || name == "middleton") return ModelEngine::series;
  throw Error(Errc::invalid_config, "unknown model engine '" + name + "'");
}

// ---------------------------------------------------------------- model

PeriodogramModel::PeriodogramModel(std::size_t segment_length, double sample_rate,
                                   double carrier_freq, const WindowSpec& window,
                                   ModelEngine engine, double series_tol)
    : length_(segment_length),
      sample_rate_(sample_rate),
      carrier_(carrier_freq),
      engine_(engine),
      series_tol_(series_tol) {
  require(segment_length >= 16, Errc::too_short, "segment length must be >= 16");
  require(std::isfinite(sample_rate) && sample_rate > 0.0, Errc::invalid_config,
          "sample rate must be > 0");
  require(std::isfinite(carrier_freq) && carrier_freq > 0.0 && carrier_freq < 0.5 * sample_rate,
          Errc::invalid_config, "carrier frequency must lie in (0, fs/2)");
  const auto lag = window_lag(window, length_);
  carrier_lag_.resize(length_);
  for (std::size_t n = 0; n < length_; ++n) {
    const double cycles = carrier_cycles(carrier_freq, sample_rate, n);
    carrier_lag_[n] = 0.5 * std::cos(2.0 * std::numbers::pi * cycles) * lag[n];
  }
}

// exp(R_phiphi(n / fs) - phi^2) for n = 0 .. L-1.
std::vector<double> PeriodogramModel::lag_continuous(const ModelParams& p) const {
  const double dt = 1.0 / sample_rate_;
  const double x = p.phi * p.phi;
  std::vector<double> e(length_);
  if (engine_ == ModelEngine::correlation) {
    const auto rho = phase_correlation_series(p.omega, p.gamma, dt, length_);
    for (std::size_t n = 0; n < length_; ++n) e[n] = std::exp(x * (rho[n] - 1.0));
    return e;
  }
  // Series engine: the Middleton sum on a periodic grid of period fs
  // (2L + 1 points), transformed back to lags.
  FrequencyGrid g;
  g.n = 2 * length_ + 1;
  g.df = sample_rate_ / static_cast<double>(g.n);
  g.periodic = true;
  const auto s = middleton_series(p, 1.0, g, series_tol_);
  std::vector<fft::cplx> spec(g.n);
  for (std::size_t i = 0; i < g.n; ++i) spec[(i + g.n - g.center()) % g.n] = s.density[i] * g.df;
  std::vector<fft::cplx> lag(g.n);
  fft::backward(spec, lag);
  for (std::size_t n = 0; n < length_; ++n) e[n] = s.carrier_weight + lag[n].real();
  return e;
}

std::vector<double> PeriodogramModel::evaluate(const ModelParams& p) const {
  p.validate();
  const auto e = lag_continuous(p);
  const std::size_t L = length_;
  std::vector<double> c(L);
  c[0] = carrier_lag_[0] * e[0];
  for (std::size_t n = 1; n < L; ++n)
    c[n] = carrier_lag_[n] * e[n] + carrier_lag_[L - n] * e[L - n];
  std::vector<fft::cplx> spec(L / 2 + 1);
  fft::forward_real(c, spec);
  std::vector<double> out(L / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = spec[k].real() / sample_rate_;
  return out;
}

std::vector<double> PeriodogramModel::evaluate(const ModelParams& p, double rin_width,
                                               int rin_order) const {
  if (rin_width == 0.0) return evaluate(p);
  return rin_average(rin_width, rin_order, [&](double r) {
    auto v = evaluate(rin_shifted(p, r));
    for (double& x : v) x *= 1.0 + r;
    return v;
  });
}

// ---------------------------------------------------------------- window

std::vector<std::size_t> FitWindow::bins(const SpectrumEstimate& est) const {
  require(!est.power.empty(), Errc::empty_input, "spectrum has no bins");
  require(est.segment_length >= 2 && est.sample_rate > 0.0, Errc::invalid_config,
          "spectrum lacks segment length or sample rate");
  const double df = est.df;
  const auto L = static_cast<long long>(est.segment_length);
  const long long k0 = std::llround(carrier_freq / df);
  const long long dc_guard = est.window.remove_mean ? static_cast<long long>(est.window.main_lobe_bins()) : 0;
  for (const auto& [lo, hi] : intervals)
    require(lo < hi, Errc::invalid_config, "fit interval must have lo < hi");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < est.power.size(); ++i) {
    const double f = est.freq(i);
    const long long k = std::llround(f / df);
    if (k <= dc_guard) continue;
    if (2 * k >= L) continue;
    if (carrier_freq > 0.0 && std::llabs(k - k0) <= static_cast<long long>(carrier_exclusion_bins)) continue;
    if (!intervals.empty()) {
      bool inside = false;
      for (const auto& [lo, hi] : intervals) inside = inside || (f >= lo && f <= hi);
      if (!inside) continue;
    }
    out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------- nuisance

namespace {

struct Sums {
  double t1 = 0.0, t2 = 0.0, y1 = 0.0, y2 = 0.0, y3 = 0.0;
};

Sums sums_at(std::span<const double> y, std::span<const double> m, double b) {
  Sums s;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double u = 1.0 / (m[i] + b);
    const double yu = y[i] * u;
    s.t1 += u;
    s.t2 += u * u;
    s.y1 += yu;
    s.y2 += yu * u;
    s.y3 += yu * u * u;
  }
  return s;
}

// d/db of the nuisance-profiled NLL, and its second derivative.
std::pair<double, double> derivs(const Sums& s, double n) {
  const double d1 = s.t1 - n * s.y2 / s.y1;
  const double d2 = -s.t2 + n * (2.0 * s.y3 * s.y1 - s.y2 * s.y2) / (s.y1 * s.y1);
  return {d1, d2};
}

double median_of(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

NuisanceFit fit_compact(std::span<const double> y, std::span<const double> m) {
  const std::size_t n = y.size();
  require(n >= 2, Errc::empty_input, "need at least 2 bins");
  const auto [mn_it, mx_it] = std::minmax_element(m.begin(), m.end());
  const double m_min = *mn_it;
  const double m_max = *mx_it;
  require(std::isfinite(m_min) && std::isfinite(m_max), Errc::non_positive_model,
          "model is not finite in the window");
  require(m_max > 0.0, Errc::non_positive_model, "model is not positive in the window");
  require(m_max - m_min > 1e-12 * m_max, Errc::degenerate,
          "model is constant over the window; gain and offset are not identifiable");
  const double nn = static_cast<double>(n);

  // Initial guess: gain from the peak decile, offset from the lowest decile.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t dec = std::max<std::size_t>(1, n / 10);
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n - dec), order.end(),
                   [&](std::size_t a, std::size_t b) { return m[a] < m[b]; });
  double ym = 0.0, mm = 0.0;
  for (std::size_t j = n - dec; j < n; ++j) {
    ym += y[order[j]];
    mm += m[order[j]];
  }
  const double a0 = std::max(ym / mm, 1e-300);
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(dec), order.end(),
                   [&](std::size_t a, std::size_t b) { return m[a] < m[b]; });
  std::vector<double> low_y(dec);
  for (std::size_t j = 0; j < dec; ++j) low_y[j] = y[order[j]];
  const double b_init = median_of(low_y) / a0;

  // Feasible region b > b_min (the model may round to <= 0 in far tails).
  const double b_min = m_min > 0.0 ? 0.0 : -m_min * (1.0 + 1e-9) + 1e-300;
  int iters = 0;
  double b = 0.0;
  auto at_zero = derivs(sums_at(y, m, b_min), nn);
  if (b_min == 0.0 && at_zero.first >= 0.0) {
    b = 0.0;
  } else {
    double lo = b_min;
    double hi = std::max(b_init, std::max(b_min * 2.0, 1e-6 * m_max));
    while (derivs(sums_at(y, m, hi), nn).first < 0.0 && hi < 1e15 * m_max) {
      lo = hi;
      hi *= 4.0;
    }
    b = std::clamp(b_init, lo, hi);
    if (!(b > lo && b < hi)) b = lo > 0.0 ? std::sqrt(lo * hi) : 0.5 * hi;
    for (iters = 0; iters < 200; ++iters) {
      const auto [d1, d2] = derivs(sums_at(y, m, b), nn);
      if (d1 < 0.0) lo = b; else hi = b;
      double next = d2 > 0.0 ? b - d1 / d2 : -1.0;
      if (!(next > lo && next < hi)) next = lo > 0.0 ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
      const double step = std::abs(next - b);
      b = next;
      if (step <= 1e-12 * b || hi - lo <= 1e-14 * hi) break;
    }
  }
  const Sums s = sums_at(y, m, b);
  NuisanceFit out;
  out.iterations = iters;
  out.nuisance.gain = s.y1 / nn;
  out.nuisance.offset = out.nuisance.gain * b;
  KahanSum nll;
  for (std::size_t i = 0; i < n; ++i) {
    const double si = out.nuisance.gain * m[i] + out.nuisance.offset;
    nll(std::log(si) + y[i] / si);
  }
  out.nll = total(nll);
  return out;
}

void gather(const SpectrumEstimate& est, std::span<const double> model,
            std::span<const std::size_t> bins, std::vector<double>& y, std::vector<double>& m) {
  require(model.size() == est.power.size(), Errc::grid_mismatch,
          "model has " + std::to_string(model.size()) + " bins, estimate has " +
              std::to_string(est.power.size()));
  y.clear();
  m.clear();
  for (std::size_t i : bins) {
    require(i < est.power.size(), Errc::grid_mismatch, "window bin outside the grid");
    y.push_back(est.power[i]);
    m.push_back(model[i]);
  }
}

}  // namespace

double whittle_nll(const SpectrumEstimate& est, std::span<const double> model,
                   const NuisanceParams& nuisance, std::span<const std::size_t> bins) {
  require(bins.size() >= 10, Errc::empty_input, "the fit window must hold at least 10 bins");
  std::vector<double> y, m;
  gather(est, model, bins, y, m);
  KahanSum nll;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double s = nuisance.gain * m[i] + nuisance.offset;
    require(s > 0.0 && std::isfinite(s), Errc::non_positive_model,
            "A * model + B is not positive at bin " + std::to_string(bins[i]));
    nll(std::log(s) + y[i] / s);
  }
  return total(nll);
}

NuisanceFit profile_nuisance(const SpectrumEstimate& est, std::span<const double> model,
                             std::span<const std::size_t> bins) {
  require(bins.size() >= 10, Errc::empty_input, "the fit window must hold at least 10 bins");
  std::vector<double> y, m;
  gather(est, model, bins, y, m);
  return fit_compact(y, m);
}

std::vector<double> model_on_estimate(const PeriodogramModel& model, std::span<const double> values,
                                      const SpectrumEstimate& est) {
  const std::size_t L = model.segment_length();
  require(values.size() == L / 2 + 1, Errc::grid_mismatch, "model values have the wrong length");
  require(est.segment_length == L && std::abs(est.df - model.df()) <= 1e-9 * est.df,
          Errc::grid_mismatch, "estimate grid does not match the model segment length");
  std::vector<double> out(est.power.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto k = static_cast<std::size_t>(std::llabs(std::llround(est.freq(i) / est.df)));
    const std::size_t kk = std::min(k, L / 2);
    const bool interior = kk > 0 && 2 * kk < L;
    out[i] = values[kk] * (est.one_sided && interior ? 2.0 : 1.0);
  }
  return out;
}

// ---------------------------------------------------------------- simplex

NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& f,
                             std::vector<double> x0, std::vector<double> step,
                             const NelderMeadOptions& opt) {
  const std::size_t d = x0.size();
  require(d >= 1 && step.size() == d, Errc::invalid_config, "simplex dimension mismatch");
  auto eval = [&](const std::vector<double>& x) {
    const double v = f(x);
    return std::isfinite(v) ? v : kInf;
  };
  std::vector<std::vector<double>> pts(d + 1, x0);
  std::vector<double> val(d + 1);
  for (std::size_t i = 0; i < d; ++i) pts[i + 1][i] += step[i];
  int evals = 0;
  for (std::size_t i = 0; i <= d; ++i) {
    val[i] = eval(pts[i]);
    ++evals;
  }
  std::vector<std::size_t> idx(d + 1);
  NelderMeadResult res;
  std::vector<double> centroid(d), xr(d), xe(d), xc(d);
  while (true) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return val[a] < val[b]; });
    const std::size_t best = idx.front();
    const std::size_t worst = idx.back();
    const std::size_t second = idx[d - 1];
    double extent = 0.0;
    for (std::size_t i = 0; i <= d; ++i)
      for (std::size_t j = 0; j < d; ++j) extent = std::max(extent, std::abs(pts[i][j] - pts[best][j]));
    const double spread = val[worst] - val[best];
    if (extent <= opt.xtol && std::isfinite(val[best]) && spread <= opt.ftol) {
      res.converged = true;
      break;
    }
    if (evals >= opt.max_evals) break;

    std::fill(centroid.begin(), centroid.end(), 0.0);
    for (std::size_t i = 0; i <= d; ++i)
      if (i != worst)
        for (std::size_t j = 0; j < d; ++j) centroid[j] += pts[i][j] / static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) xr[j] = centroid[j] + (centroid[j] - pts[worst][j]);
    const double fr = eval(xr);
    ++evals;
    if (fr < val[best]) {
      for (std::size_t j = 0; j < d; ++j) xe[j] = centroid[j] + 2.0 * (centroid[j] - pts[worst][j]);
      const double fe = eval(xe);
      ++evals;
      if (fe < fr) {
        pts[worst] = xe;
        val[worst] = fe;
      } else {
        pts[worst] = xr;
        val[worst] = fr;
      }
      continue;
    }
    if (fr < val[second]) {
      pts[worst] = xr;
      val[worst] = fr;
      continue;
    }
    const bool outside = fr < val[worst];
    for (std::size_t j = 0; j < d; ++j)
      xc[j] = outside ? centroid[j] + 0.5 * (xr[j] - centroid[j])
                      : centroid[j] + 0.5 * (pts[worst][j] - centroid[j]);
    const double fc = eval(xc);
    ++evals;
    if (fc < (outside ? fr : val[worst])) {
      pts[worst] = xc;
      val[worst] = fc;
      continue;
    }
    // Shrink towards the best vertex.
    for (std::size_t i = 0; i <= d; ++i) {
      if (i == best) continue;
      for (std::size_t j = 0; j < d; ++j) pts[i][j] = pts[best][j] + 0.5 * (pts[i][j] - pts[best][j]);
      val[i] = eval(pts[i]);
      ++evals;
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(val.begin(), val.end()) - val.begin());
  res.x = pts[best];
  res.f = val[best];
  res.n_evals = evals;
  return res;
}

// ---------------------------------------------------------------- objective

WhittleObjective::WhittleObjective(const SpectrumEstimate& est, const FitWindow& window,
                                   const FitOptions& options)
    : est_(est),
      window_(window),
      options_(options),
      model_(est.segment_length, est.sample_rate, window.carrier_freq, est.window, options.engine) {
  est_.validate();
  if (options_.nuisance)
    require(options_.nuisance->gain > 0.0 && options_.nuisance->offset >= 0.0, Errc::invalid_config,
            "known nuisance needs gain > 0 and offset >= 0");
  bins_ = window_.bins(est_);
  require(bins_.size() >= 10, Errc::empty_input,
          "the fit window holds " + std::to_string(bins_.size()) + " bins; at least 10 are needed");
  const std::size_t L = est_.segment_length;
  fold_ = est_.one_sided ? 2.0 : 1.0;
  for (std::size_t i : bins_)
    model_index_.push_back(static_cast<std::size_t>(std::llabs(std::llround(est_.freq(i) / est_.df))));
  for (std::size_t k : model_index_)
    require(k <= L / 2, Errc::grid_mismatch, "estimate bin beyond Nyquist");
  require(std::abs(est_.df - model_.df()) <= 1e-9 * est_.df, Errc::grid_mismatch,
          "estimate df does not match sample_rate / segment_length");
  scale_ = 0.5 * est_.dof * bin_correlation_factor(est_.window, L);
  KahanSum logs;
  for (std::size_t k : bins_)
    if (est_.power[k] > 0.0) logs(std::log(est_.power[k]));
  log_sum_ = total(logs);
}

std::vector<double> WhittleObjective::model_bins(const ModelParams& p, double rin_width) const {
  const auto full = rin_width > 0.0 ? model_.evaluate(p, rin_width, options_.rin_order)
                                    : model_.evaluate(p);
  std::vector<double> m(model_index_.size());
  for (std::size_t j = 0; j < m.size(); ++j) m[j] = fold_ * full[model_index_[j]];
  return m;
}

NuisanceFit WhittleObjective::operator()(const ModelParams& p, double rin_width) const {
  const auto m = model_bins(p, rin_width);
  std::vector<double> y(bins_.size());
  for (std::size_t j = 0; j < y.size(); ++j) y[j] = est_.power[bins_[j]];
  if (!options_.nuisance) return fit_compact(y, m);
  const auto [a, b] = *options_.nuisance;
  NuisanceFit out;
  out.nuisance = *options_.nuisance;
  KahanSum nll;
  for (std::size_t j = 0; j < y.size(); ++j) {
    const double s = a * m[j] + b;
    require(s > 0.0 && std::isfinite(s), Errc::non_positive_model, "model is not positive in the window");
    nll(std::log(s) + y[j] / s);
  }
  out.nll = total(nll);
  return out;
}

// ---------------------------------------------------------------- fitting

namespace {

struct Packing {
  bool fit_rin = false;
  double fixed_rin = 0.0;

  std::vector<double> pack(const ModelParams& p, double rin) const {
    std::vector<double> x = {std::log(p.phi), std::log(p.omega), std::log(p.gamma)};
    if (fit_rin) x.push_back(rin);
    return x;
  }
  ModelParams params(std::span<const double> x) const {
    return {std::exp(x[0]), std::exp(x[1]), std::exp(x[2])};
  }
  double rin(std::span<const double> x) const { return fit_rin ? std::abs(x[3]) : fixed_rin; }
};

// Omega at the largest (smoothed) data bin away from the carrier.
double sideband_peak_omega(const WhittleObjective& obj) {
  const auto& est = obj.estimate();
  const auto& bins = obj.bins();
  const double f0 = obj.model().carrier_freq();
  const std::size_t half = 4;
  if (bins.size() < 4 * half) return 0.0;
  double best = -kInf;
  double best_f = 0.0;
  double run = 0.0;
  for (std::size_t j = 0; j < bins.size(); ++j) {
    run += est.power[bins[j]];
    if (j >= 2 * half + 1) run -= est.power[bins[j - 2 * half - 1]];
    if (j < 2 * half) continue;
    const std::size_t mid = bins[j - half];
    if (run > best) {
      best = run;
      best_f = est.freq(mid);
    }
  }
  return 2.0 * std::numbers::pi * std::abs(best_f - f0);
}

double safe_nll(const WhittleObjective& obj, const ModelParams& p, double rin) {
  if (!(rin < 0.3)) return kInf;
  try {
    return obj(p, rin).nll - obj.data_log_sum();
  } catch (const Error&) {
    return kInf;
  }
}

}  // namespace

FitResult mle_fit(const SpectrumEstimate& est, const ModelParams& init, const FitWindow& window,
                  const FitOptions& options) {
  const WhittleObjective obj(est, window, options);
  return mle_fit(obj, init);
}

FitResult mle_fit(const WhittleObjective& obj, const ModelParams& init) {
  const FitOptions& opt = obj.options();
  init.validate();
  require(init.phi > 0.0, Errc::invalid_config, "initial phi must be > 0");
  require(opt.restarts >= 1, Errc::invalid_config, "restarts must be >= 1");
  Packing pk;
  pk.fit_rin = opt.fit_rin;
  pk.fixed_rin = opt.rin_width.value_or(0.0);
  const double rin0 = opt.fit_rin ? opt.rin_width.value_or(0.005) : pk.fixed_rin;

  auto f = [&](std::span<const double> x) { return safe_nll(obj, pk.params(x), pk.rin(x)); };
  NelderMeadOptions nm;
  nm.xtol = opt.tol;
  nm.ftol = 1e-9 * std::max<double>(1.0, static_cast<double>(obj.bins().size()));
  auto x = pk.pack(init, rin0);
  int evals = 0;
  NelderMeadResult best;
  best.f = kInf;
  bool converged = false;

  // Subharmonic basins (omega / 2 with a larger phi) trap starts far from
  // the truth, so a start at the data's sideband peak competes with `init`.
  const double omega_peak = sideband_peak_omega(obj);
  if (omega_peak > 0.0 && std::abs(std::log(omega_peak / init.omega)) > 0.2) {
    NelderMeadOptions scout = nm;
    scout.xtol = 1e-3;
    scout.max_evals = 150;
    const auto a = nelder_mead(f, x, std::vector<double>(x.size(), opt.initial_step), scout);
    auto alt = init;
    alt.omega = omega_peak;
    const auto xb = pk.pack(alt, rin0);
    const auto b = nelder_mead(f, xb, std::vector<double>(x.size(), opt.initial_step), scout);
    evals += a.n_evals + b.n_evals;
    x = b.f < a.f ? b.x : a.x;
  }
  for (int r = 0; r < opt.restarts && evals < opt.max_evals; ++r) {
    // Each restart rebuilds the simplex around the incumbent with a
    // smaller, sign-alternated step.
    const double sign = (r % 2 == 0) ? 1.0 : -1.0;
    const double h = opt.initial_step * sign / (1.0 + r);
    std::vector<double> step(x.size(), h);
    if (pk.fit_rin) step[3] = sign * std::max(0.25 * rin0, 1e-3);
    nm.max_evals = opt.max_evals - evals;
    auto res = nelder_mead(f, x, step, nm);
    evals += res.n_evals;
    const bool improved = res.f < best.f - nm.ftol;
    if (res.f <= best.f) {
      best = res;
      x = res.x;
    }
    converged = res.converged;
    if (r > 0 && !improved && res.converged) break;
  }
  FitResult out;
  out.model = pk.params(best.x);
  const double rin = pk.rin(best.x);
  if (opt.fit_rin || opt.rin_width) out.rin_width = rin;
  out.converged = converged && std::isfinite(best.f);
  out.n_evals = evals;
  out.window = obj.window();
  out.n_bins = obj.bins().size();
  out.likelihood_scale = obj.likelihood_scale();
  if (std::isfinite(best.f)) {
    const auto nf = obj(out.model, rin);
    out.nuisance = nf.nuisance;
    out.nll = nf.nll;
  } else {
    out.nll = kInf;
  }
  return out;
}

// ---------------------------------------------------------------- profiles

ProfileScan profile_density(std::vector<double> grid, std::vector<double> nll, double scale,
                            double level) {
  require(grid.size() == nll.size() && grid.size() >= 3, Errc::invalid_config,
          "profile needs >= 3 grid points with matching values");
  require(level > 0.0 && level < 1.0, Errc::invalid_config, "level must be in (0, 1)");
  require(scale > 0.0, Errc::invalid_config, "likelihood scale must be > 0");
  for (std::size_t i = 1; i < grid.size(); ++i)
    require(grid[i] > grid[i - 1], Errc::invalid_config, "profile grid must increase");
  ProfileScan s;
  s.grid = std::move(grid);
  s.nll = std::move(nll);
  s.likelihood_scale = scale;
  const std::size_t n = s.grid.size();
  double lmin = kInf;
  for (double v : s.nll)
    if (std::isfinite(v)) lmin = std::min(lmin, v);
  require(std::isfinite(lmin), Errc::degenerate, "profile has no finite values");
  s.density.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    s.density[i] = std::isfinite(s.nll[i]) ? std::exp(-scale * (s.nll[i] - lmin)) : 0.0;
  std::vector<double> cdf(n, 0.0);
  for (std::size_t i = 1; i < n; ++i)
    cdf[i] = cdf[i - 1] + 0.5 * (s.density[i] + s.density[i - 1]) * (s.grid[i] - s.grid[i - 1]);
  const double z = cdf.back();
  require(z > 0.0, Errc::degenerate, "profile density has zero mass");
  for (double& d : s.density) d /= z;
  for (double& c : cdf) c /= z;

  double m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 1; i < n; ++i) {
    const double h = s.grid[i] - s.grid[i - 1];
    m1 += 0.5 * h * (s.density[i] * s.grid[i] + s.density[i - 1] * s.grid[i - 1]);
    m2 += 0.5 * h * (s.density[i] * s.grid[i] * s.grid[i] + s.density[i - 1] * s.grid[i - 1] * s.grid[i - 1]);
  }
  s.mean = m1;
  s.sd = std::sqrt(std::max(0.0, m2 - m1 * m1));
  s.mode = s.grid[static_cast<std::size_t>(std::max_element(s.density.begin(), s.density.end()) - s.density.begin())];

  auto quantile = [&](double q) {
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), q);
    if (it == cdf.begin()) return s.grid.front();
    if (it == cdf.end()) return s.grid.back();
    const auto i = static_cast<std::size_t>(it - cdf.begin());
    const double t = (q - cdf[i - 1]) / (cdf[i] - cdf[i - 1]);
    return s.grid[i - 1] + t * (s.grid[i] - s.grid[i - 1]);
  };
  s.interval.level = level;
  s.interval.lo = quantile(0.5 * (1.0 - level));
  s.interval.hi = quantile(0.5 * (1.0 + level));

  s.edge_mass = std::max(cdf[1], 1.0 - cdf[n - 2]);
  const double peak = *std::max_element(s.density.begin(), s.density.end());
  int maxima = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool left = i == 0 || s.density[i] > s.density[i - 1];
    const bool right = i + 1 == n || s.density[i] >= s.density[i + 1];
    if (left && right && s.density[i] > 0.05 * peak) ++maxima;
  }
  s.multimodal = maxima > 1;
  return s;
}

namespace {

int param_index(const std::string& name) {
  if (name == "phi") return 0;
  if (name == "omega") return 1;
  if (name == "gamma") return 2;
  throw Error(Errc::invalid_config, "unknown profile parameter '" + name + "' (phi, omega, gamma)");
}

double get(const ModelParams& p, int i) { return i == 0 ? p.phi : (i == 1 ? p.omega : p.gamma); }

void set(ModelParams& p, int i, double v) {
  if (i == 0) p.phi = v;
  else if (i == 1) p.omega = v;
  else p.gamma = v;
}

struct PointFit {
  double nll = kInf;
  ModelParams params;
  NuisanceParams nuisance;
  bool converged = false;
};

class ConstrainedFitter {
 public:
  ConstrainedFitter(const WhittleObjective& obj, const FitResult& fit, int index,
                    const std::vector<std::string>& fixed)
      : obj_(obj), index_(index), rin_(fit.rin_width.value_or(0.0)), base_(fit.model) {
    for (int i = 0; i < 3; ++i) {
      if (i == index) continue;
      bool held = false;
      for (const auto& f : fixed) held = held || param_index(f) == i;
      if (!held) free_.push_back(i);
    }
  }

  PointFit at(double value, const ModelParams& warm) const {
    PointFit out;
    ModelParams p = base_;
    for (int i : free_) set(p, i, get(warm, i));
    set(p, index_, value);
    if (free_.empty()) {
      out.params = p;
      out.nll = safe_nll(obj_, p, rin_) + obj_.data_log_sum();
      out.converged = std::isfinite(out.nll);
    } else {
      std::vector<double> x;
      for (int i : free_) x.push_back(std::log(get(p, i)));
      auto f = [&](std::span<const double> xs) {
        ModelParams q = p;
        for (std::size_t j = 0; j < free_.size(); ++j) set(q, free_[j], std::exp(xs[j]));
        return safe_nll(obj_, q, rin_);
      };
      NelderMeadOptions nm;
      nm.xtol = obj_.options().tol;
      nm.ftol = 1e-9 * std::max<double>(1.0, static_cast<double>(obj_.bins().size()));
      nm.max_evals = 600;
      // Two passes: the second rebuilds a fresh simplex at the incumbent.
      NelderMeadResult res;
      for (int pass = 0; pass < 2; ++pass) {
        std::vector<double> step(x.size(), pass == 0 ? 0.02 : -0.005);
        res = nelder_mead(f, x, step, nm);
        x = res.x;
      }
      for (std::size_t j = 0; j < free_.size(); ++j) set(p, free_[j], std::exp(x[j]));
      out.params = p;
      out.nll = res.f + obj_.data_log_sum();
      out.converged = res.converged;
    }
    if (std::isfinite(out.nll)) out.nuisance = obj_(out.params, rin_).nuisance;
    return out;
  }

 private:
  const WhittleObjective& obj_;
  int index_;
  double rin_;
  ModelParams base_;
  std::vector<int> free_;
};

}  // namespace

ProfileScan profile_scan(const SpectrumEstimate& est, const FitResult& fit, const std::string& param,
                         const FitWindow& window, const ProfileOptions& options,
                         const FitOptions& fit_options) {
  FitOptions fo = fit_options;
  if (fit.rin_width && !fo.rin_width) fo.rin_width = fit.rin_width;
  const WhittleObjective obj(est, window, fo);
  return profile_scan(obj, fit, param, options);
}

ProfileScan profile_scan(const WhittleObjective& obj, const FitResult& fit, const std::string& param,
                         const ProfileOptions& options) {
  require(fit.converged && std::isfinite(fit.nll), Errc::invalid_config,
          "profile scans need a converged fit");
  require(options.n_points >= 5, Errc::invalid_config, "profile needs >= 5 grid points");
  require(options.level > 0.0 && options.level < 1.0, Errc::invalid_config,
          "level must be in (0, 1)");
  const int index = param_index(param);
  for (const auto& f : options.fixed)
    require(param_index(f) != index, Errc::invalid_config, "cannot hold the scanned parameter fixed");
  const ConstrainedFitter fitter(obj, fit, index, options.fixed);
  const double scale = obj.likelihood_scale();
  const double centre = get(fit.model, index);

  std::vector<double> grid = options.grid;
  std::sort(grid.begin(), grid.end());
  if (grid.empty()) {
    // Width from the curvature of the profile at the MLE.
    double h = 1e-3 * centre;
    double sd = 0.0;
    for (int tries = 0; tries < 12; ++tries) {
      const auto up = fitter.at(centre + h, fit.model);
      const auto dn = fitter.at(std::max(centre - h, 1e-3 * centre), fit.model);
      const double dl = 0.5 * scale * ((up.nll - fit.nll) + (dn.nll - fit.nll));
      if (dl < 0.2 && h < 0.5 * centre) {
        h *= 3.0;
        continue;
      }
      if (dl > 20.0) {
        h /= 3.0;
        continue;
      }
      sd = dl > 0.0 ? h / std::sqrt(2.0 * dl) : h;
      break;
    }
    if (sd <= 0.0) sd = h;
    const double half = options.n_sd * sd;
    const int n = options.n_points | 1;
    const double lo = std::max(centre - half, centre * 1e-3);
    const double step_lo = (centre - lo) / ((n - 1) / 2);
    const double step_hi = half / ((n - 1) / 2);
    for (int i = 0; i < n; ++i) {
      const int k = i - (n - 1) / 2;
      grid.push_back(k < 0 ? centre + k * step_lo : centre + k * step_hi);
    }
  }
  for (double g : grid) require(g > 0.0, Errc::invalid_config, "profile grid values must be > 0");

  std::vector<PointFit> pts(grid.size());
  const auto start = static_cast<std::size_t>(
      std::min_element(grid.begin(), grid.end(),
                       [&](double a, double b) { return std::abs(a - centre) < std::abs(b - centre); }) -
      grid.begin());
  pts[start] = fitter.at(grid[start], fit.model);

  auto run_right = [&](std::size_t from) {
    for (std::size_t i = from; i < grid.size(); ++i) pts[i] = fitter.at(grid[i], pts[i - 1].params);
  };
  auto run_left = [&](std::size_t from) {
    for (std::size_t i = from + 1; i-- > 0;) pts[i] = fitter.at(grid[i], pts[i + 1].params);
  };
  auto scan_both = [&](std::size_t right_from, std::size_t left_from, bool do_right, bool do_left) {
    if (options.threads > 1 && do_right && do_left) {
      std::thread t([&] { run_right(right_from); });
      run_left(left_from);
      t.join();
    } else {
      if (do_right) run_right(right_from);
      if (do_left) run_left(left_from);
    }
  };
  scan_both(start + 1, start == 0 ? 0 : start - 1, start + 1 < grid.size(), start > 0);

  auto build = [&] {
    std::vector<double> nll(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) nll[i] = pts[i].nll;
    // The MLE itself belongs to the profile's minimum.
    return profile_density(grid, nll, scale, options.level);
  };
  ProfileScan scan = build();

  if (options.grid.empty()) {
    for (int w = 0; w < options.max_widen; ++w) {
      const std::size_t n = grid.size();
      const double left_mass = 0.5 * (scan.density[0] + scan.density[1]) * (grid[1] - grid[0]);
      const double right_mass =
          0.5 * (scan.density[n - 1] + scan.density[n - 2]) * (grid[n - 1] - grid[n - 2]);
      const bool widen_right = right_mass > options.edge_tol;
      const bool widen_left = left_mass > options.edge_tol && grid.front() > centre * 1.001e-3;
      if (!widen_right && !widen_left) break;
      const std::size_t extra = static_cast<std::size_t>(options.n_points / 2);
      std::size_t left_added = 0;
      if (widen_left) {
        const double h = grid[1] - grid[0];
        std::vector<double> add;
        for (std::size_t j = 1; j <= extra; ++j) {
          const double v = grid.front() - h * static_cast<double>(j);
          if (v <= centre * 1e-3) break;
          add.push_back(v);
        }
        std::reverse(add.begin(), add.end());
        left_added = add.size();
        grid.insert(grid.begin(), add.begin(), add.end());
        pts.insert(pts.begin(), add.size(), PointFit{});
      }
      if (widen_right) {
        const double h = grid[grid.size() - 1] - grid[grid.size() - 2];
        const double last = grid.back();
        for (std::size_t j = 1; j <= extra; ++j) grid.push_back(last + h * static_cast<double>(j));
        pts.resize(grid.size());
      }
      const std::size_t old_end = left_added + n;  // first new right index
      if (widen_right) {
        for (std::size_t i = old_end; i < grid.size(); ++i) pts[i] = fitter.at(grid[i], pts[i - 1].params);
      }
      if (left_added > 0) {
        for (std::size_t i = left_added; i-- > 0;) pts[i] = fitter.at(grid[i], pts[i + 1].params);
      }
      scan = build();
    }
  }

  scan.param = param;
  scan.fixed = options.fixed;
  scan.edge_warning = scan.edge_mass > options.edge_tol;
  scan.trajectory.resize(pts.size());
  scan.nuisance.resize(pts.size());
  scan.converged = true;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    scan.trajectory[i] = pts[i].params;
    scan.nuisance[i] = pts[i].nuisance;
    scan.converged = scan.converged && pts[i].converged;
  }
  return scan;
}

// ---------------------------------------------------------------- ensemble

ModelParams true_model(const OscillatorParams& osc, const SignalParams& sig) {
  return {sig.modulation_depth(osc), osc.omega, osc.gamma};
}

std::pair<std::size_t, std::size_t> binomial_band(std::size_t n, double p) {
  require(n > 0 && p > 0.0 && p < 1.0, Errc::invalid_config, "binomial band needs n > 0, 0 < p < 1");
  boost::math::binomial_distribution<double> dist(static_cast<double>(n), p);
  // Smallest lo with P(X <= lo) > 2.5%, largest hi with P(X >= hi) > 2.5%.
  std::size_t lo = 0;
  while (lo < n && boost::math::cdf(dist, static_cast<double>(lo)) <= 0.025) ++lo;
  std::size_t hi = n;
  while (hi > 0 && boost::math::cdf(boost::math::complement(dist, static_cast<double>(hi) - 1.0)) <= 0.025) --hi;
  return {lo, hi};
}

EnsembleReport ensemble_validate(const EnsembleConfig& config) {
  require(config.n_runs >= 10, Errc::invalid_config, "ensembles need n_runs >= 10");
  config.oscillator.validate();
  config.signal.validate();
  config.simulation.validate();
  for (const auto& p : config.profile_params) param_index(p);

  EnsembleReport report;
  report.truth = true_model(config.oscillator, config.signal);
  report.level = config.profile_options.level;
  report.runs.resize(config.n_runs);

  FitWindow window = config.fit_window;
  if (window.carrier_freq == 0.0) window.carrier_freq = config.signal.carrier_freq;

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= config.n_runs) return;
      try {
        EnsembleRun run;
        SimulationConfig sim = config.simulation;
        sim.seed = config.simulation.seed + i;
        run.seed = sim.seed;
        SpectrumEstimate est;
        {
          const auto z = simulate_trajectory(config.oscillator, sim);
          const auto v = synthesize_signal(z, config.signal, config.oscillator, sim);
          est = bartlett(v, config.segment_length, config.window);
        }
        const WhittleObjective obj(est, window, config.fit);
        run.fit = mle_fit(obj, report.truth);
        run.fit.window = window;
        if (config.profile && run.fit.converged) {
          ProfileOptions po = config.profile_options;
          po.threads = 1;
          for (const auto& name : config.profile_params)
            run.profiles.push_back(profile_scan(obj, run.fit, name, po));
        }
        report.runs[i] = std::move(run);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(config.n_runs);
        return;
      }
      const std::size_t d = ++done;
      if (config.progress) {
        std::lock_guard lock(progress_mutex);
        config.progress(d, config.n_runs);
      }
    }
  };
  const int threads = std::max(1, std::min<int>(config.threads, static_cast<int>(config.n_runs)));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  std::vector<const EnsembleRun*> ok;
  for (const auto& r : report.runs)
    if (r.fit.converged) ok.push_back(&r);
  report.n_converged = ok.size();
  report.failed = static_cast<double>(config.n_runs - ok.size()) > 0.2 * static_cast<double>(config.n_runs);

  const char* names[3] = {"phi", "omega", "gamma"};
  for (int k = 0; k < 3; ++k) {
    ParameterSummary s;
    s.name = names[k];
    s.truth = get(report.truth, k);
    const double n = static_cast<double>(ok.size());
    if (ok.size() >= 2) {
      double m = 0.0;
      for (const auto* r : ok) m += get(r->fit.model, k);
      m /= n;
      double v = 0.0;
      for (const auto* r : ok) v += (get(r->fit.model, k) - m) * (get(r->fit.model, k) - m);
      s.mean = m;
      s.sd = std::sqrt(v / (n - 1.0));
      s.bias = m - s.truth;
      s.bias_se = s.sd > 0.0 ? s.bias / (s.sd / std::sqrt(n)) : 0.0;
    }
    std::size_t n_prof = 0;
    double sd_sum = 0.0;
    for (const auto* r : ok) {
      for (const auto& p : r->profiles) {
        if (p.param != s.name) continue;
        ++n_prof;
        sd_sum += p.sd;
        if (p.interval.lo <= s.truth && s.truth <= p.interval.hi) ++s.covered;
      }
    }
    if (n_prof > 0) {
      s.profiled = true;
      s.mean_profile_sd = sd_sum / static_cast<double>(n_prof);
      s.sd_ratio = s.sd / s.mean_profile_sd;
      s.coverage = static_cast<double>(s.covered) / static_cast<double>(n_prof);
      const auto [lo, hi] = binomial_band(n_prof, report.level);
      s.coverage_lo = static_cast<double>(lo) / static_cast<double>(n_prof);
      s.coverage_hi = static_cast<double>(hi) / static_cast<double>(n_prof);
    }
    report.params.push_back(s);
  }
  return report;
}

// ---------------------------------------------------------------- json

nlohmann::json to_json(const FitWindow& w) {
  nlohmann::json iv = nlohmann::json::array();
  for (const auto& [lo, hi] : w.intervals) iv.push_back({lo, hi});
  return {{"intervals", iv},
          {"carrier_exclusion_bins", w.carrier_exclusion_bins},
          {"carrier_freq", w.carrier_freq}};
}

nlohmann::json to_json(const NuisanceParams& n) { return {{"gain", n.gain}, {"offset", n.offset}}; }

nlohmann::json to_json(const FitOptions& o) {
  nlohmann::json j = {{"fit_rin", o.fit_rin},   {"rin_order", o.rin_order},
                      {"tol", o.tol},           {"max_evals", o.max_evals},
                      {"restarts", o.restarts}, {"initial_step", o.initial_step},
                      {"engine", to_string(o.engine)}};
  j["rin_width"] = o.rin_width ? nlohmann::json(*o.rin_width) : nlohmann::json(nullptr);
  j["nuisance"] = o.nuisance ? to_json(*o.nuisance) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const FitResult& r) {
  nlohmann::json j = {{"params", to_json(r.model)},
                      {"nuisance", to_json(r.nuisance)},
                      {"nll", r.nll},
                      {"converged", r.converged},
                      {"n_evals", r.n_evals},
                      {"window", to_json(r.window)},
                      {"n_bins", r.n_bins},
                      {"likelihood_scale", r.likelihood_scale}};
  j["rin_width"] = r.rin_width ? nlohmann::json(*r.rin_width) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const ProfileScan& s) {
  nlohmann::json traj = nlohmann::json::array();
  for (std::size_t i = 0; i < s.trajectory.size(); ++i) {
    nlohmann::json t = to_json(s.trajectory[i]);
    if (i < s.nuisance.size()) t["nuisance"] = to_json(s.nuisance[i]);
    traj.push_back(t);
  }
  return {{"param", s.param},
          {"grid", s.grid},
          {"nll", s.nll},
          {"density", s.density},
          {"mean", s.mean},
          {"sd", s.sd},
          {"mode", s.mode},
          {"interval", {{"level", s.interval.level}, {"lo", s.interval.lo}, {"hi", s.interval.hi}}},
          {"edge_mass", s.edge_mass},
          {"edge_warning", s.edge_warning},
          {"multimodal", s.multimodal},
          {"likelihood_scale", s.likelihood_scale},
          {"fixed", s.fixed},
          {"converged", s.converged},
          {"trajectory", traj}};
}

nlohmann::json to_json(const EnsembleReport& r) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& s : r.params) {
    params.push_back({{"name", s.name},
                      {"truth", s.truth},
                      {"mean", s.mean},
                      {"sd", s.sd},
                      {"bias", s.bias},
                      {"bias_in_se", s.bias_se},
                      {"profiled", s.profiled},
                      {"mean_profile_sd", s.mean_profile_sd},
                      {"sd_ratio", s.sd_ratio},
                      {"covered", s.covered},
                      {"coverage", s.coverage},
                      {"coverage_band", {s.coverage_lo, s.coverage_hi}}});
  }
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs) {
    nlohmann::json j = {{"seed", run.seed}, {"fit", to_json(run.fit)}};
    nlohmann::json prof = nlohmann::json::array();
    for (const auto& p : run.profiles)
      prof.push_back({{"param", p.param},
                      {"mean", p.mean},
                      {"sd", p.sd},
                      {"interval", {{"level", p.interval.level}, {"lo", p.interval.lo}, {"hi", p.interval.hi}}},
                      {"edge_warning", p.edge_warning}});
    j["profiles"] = prof;
    runs.push_back(j);
  }
  return {{"truth", to_json(r.truth)},
          {"level", r.level},
          {"n_runs", r.runs.size()},
          {"n_converged", r.n_converged},
          {"failed", r.failed},
          {"params", params},
          {"runs", runs}};
}

FitWindow fit_window_from_json(const nlohmann::json& j) {
  FitWindow w;
  try {
    if (j.contains("intervals"))
      for (const auto& iv : j.at("intervals"))
        w.intervals.emplace_back(iv.at(0).get<double>(), iv.at(1).get<double>());
    w.carrier_exclusion_bins = j.value("carrier_exclusion_bins", std::size_t{3});
    w.carrier_freq = j.value("carrier_freq", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_config, std::string("malformed fit window: ") + e.what());
  }
  return w;
}

}  // namespace levspec
