#include "levspec/spectral.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "levspec/error.hpp"
#include "levspec/fft.hpp"

namespace levspec {

std::string to_string(WindowKind kind) { return kind == WindowKind::hann ? "hann" : "rect"; }

WindowKind window_kind_from_string(const std::string& name) {
  if (name == "hann" || name == "hanning" || name == "tukey-hanning") return WindowKind::hann;
  if (name == "rect" || name == "rectangular" || name == "boxcar") return WindowKind::rect;
  throw Error(Errc::invalid_config, "unknown window '" + name + "'");
}

std::vector<double> WindowSpec::weights(std::size_t n) const {
  std::vector<double> w(n, 1.0);
  if (kind == WindowKind::hann && n > 1) {
    const double step = 2.0 * std::numbers::pi / static_cast<double>(n - 1);
    for (std::size_t m = 0; m < n; ++m) w[m] = 0.5 * (1.0 - std::cos(step * static_cast<double>(m)));
  }
  return w;
}

double WindowSpec::power_norm(std::size_t n) const {
  const auto w = weights(n);
  double s = 0.0;
  for (double x : w) s += x * x;
  return s / static_cast<double>(n);
}

std::size_t SpectrumEstimate::index_of(double f) const {
  const double i = std::round((f - f_start) / df);
  if (i <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(i), power.size() - 1);
}

void SpectrumEstimate::validate() const {
  require(!power.empty(), Errc::empty_input, "spectrum has no bins");
  require(std::isfinite(df) && df > 0.0, Errc::invalid_config, "spectrum df must be > 0");
  require(dof > 0 && dof % 2 == 0, Errc::invalid_config, "dof must be a positive even integer");
  for (double p : power)
    require(std::isfinite(p) && p >= 0.0, Errc::invalid_config, "spectrum power must be >= 0");
}

namespace {

SpectrumEstimate average(const TimeSeries& x, std::size_t seg, std::size_t n_seg,
                         const WindowSpec& w) {
  const auto win = w.weights(seg);
  const double fs = x.sample_rate;
  double sw2 = 0.0;
  for (double v : win) sw2 += v * v;
  require(sw2 > 0.0, Errc::invalid_config, "window has zero power");
  const double scale = 1.0 / (fs * sw2 * static_cast<double>(n_seg));

  const std::size_t half = seg / 2;
  std::vector<double> work(seg);
  std::vector<fft::cplx> spec(half + 1);
  std::vector<double> acc(seg, 0.0);
  for (std::size_t s = 0; s < n_seg; ++s) {
    const std::span<const double> part(x.samples.data() + s * seg, seg);
    double mean = 0.0;
    if (w.remove_mean) mean = std::accumulate(part.begin(), part.end(), 0.0) / static_cast<double>(seg);
    for (std::size_t m = 0; m < seg; ++m) work[m] = (part[m] - mean) * win[m];
    fft::forward_real(work, spec);
    for (std::size_t k = 0; k <= half; ++k) {
      const double p = std::norm(spec[k]) * scale;
      if (k == half && seg % 2 == 0) {
        acc[0] += p;  // the +fs/2 bin is reported as -fs/2
        continue;
      }
      acc[half + k] += p;
      if (k > 0) acc[half - k] += p;
    }
  }

  SpectrumEstimate est;
  est.df = fs / static_cast<double>(seg);
  est.f_start = -static_cast<double>(half) * est.df;
  est.power = std::move(acc);
  est.one_sided = false;
  est.dof = static_cast<int>(2 * n_seg);
  est.segment_length = seg;
  est.n_segments = n_seg;
  est.sample_rate = fs;
  est.window = w;
  return est;
}

}  // namespace

SpectrumEstimate periodogram(std::span<const double> x, double sample_rate, const WindowSpec& w) {
  TimeSeries ts;
  ts.sample_rate = sample_rate;
  ts.samples.assign(x.begin(), x.end());
  return periodogram(ts, w);
}

SpectrumEstimate periodogram(const TimeSeries& x, const WindowSpec& w) {
  require(!x.samples.empty(), Errc::empty_input, "periodogram of an empty series");
  require(x.samples.size() >= 2, Errc::too_short, "segment length must be >= 2");
  require(std::isfinite(x.sample_rate) && x.sample_rate > 0.0, Errc::invalid_config,
          "sample rate must be > 0");
  return average(x, x.samples.size(), 1, w);
}

SpectrumEstimate bartlett(const TimeSeries& x, std::size_t segment_length, const WindowSpec& w) {
  require(!x.samples.empty(), Errc::empty_input, "bartlett of an empty series");
  require(segment_length >= 2, Errc::too_short, "segment length must be >= 2");
  require(x.samples.size() >= segment_length, Errc::too_short,
          "series has " + std::to_string(x.samples.size()) + " samples, fewer than one segment of " +
              std::to_string(segment_length));
  require(std::isfinite(x.sample_rate) && x.sample_rate > 0.0, Errc::invalid_config,
          "sample rate must be > 0");
  return average(x, segment_length, x.samples.size() / segment_length, w);
}

SpectrumEstimate fold_one_sided(const SpectrumEstimate& est) {
  require(!est.one_sided, Errc::invalid_config, "spectrum is already one-sided");
  require(!est.power.empty(), Errc::empty_input, "spectrum has no bins");
  const std::size_t n = est.power.size();
  const std::size_t zero = est.index_of(0.0);
  require(std::abs(est.freq(zero)) <= 1e-9 * est.df, Errc::grid_mismatch,
          "two-sided grid has no zero-frequency bin");
  SpectrumEstimate out = est;
  out.one_sided = true;
  out.f_start = 0.0;
  out.power.assign(n - zero + ((n % 2 == 0) ? 1 : 0), 0.0);
  for (std::size_t i = zero; i < n; ++i) {
    const std::size_t k = i - zero;
    out.power[k] = est.power[i];
    if (k > 0) out.power[k] += est.power[zero - k];
  }
  if (n % 2 == 0) out.power.back() = est.power[0];  // Nyquist appears once
  return out;
}

double bin_correlation_factor(const WindowSpec& w, std::size_t n) {
  require(n >= 2, Errc::too_short, "window length must be >= 2");
  const auto win = w.weights(n);
  std::vector<double> w2(n);
  for (std::size_t m = 0; m < n; ++m) w2[m] = win[m] * win[m];
  std::vector<fft::cplx> c(n / 2 + 1);
  fft::forward_real(w2, c);
  const double c0 = c[0].real();
  double sum = 0.0;
  for (std::size_t j = 1; j < c.size(); ++j) {
    const double r2 = std::norm(c[j]) / (c0 * c0);
    sum += (n % 2 == 0 && j == n / 2) ? r2 : 2.0 * r2;
  }
  return 1.0 / (1.0 + sum);
}

double chi2_cdf(double nu, double x) {
  if (x <= 0.0) return 0.0;
  return boost::math::gamma_p(0.5 * nu, 0.5 * x);
}

double kolmogorov_pvalue(double d, std::size_t n) {
  if (n == 0) return 1.0;
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += sign * term;
    if (term < 1e-16 * sum) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

ResidualSummary residuals(const SpectrumEstimate& est, std::span<const double> model,
                          std::span<const std::size_t> bins, std::size_t stride) {
  require(!est.power.empty(), Errc::empty_input, "spectrum has no bins");
  require(model.size() == est.power.size(), Errc::grid_mismatch,
          "model has " + std::to_string(model.size()) + " bins, estimate has " +
              std::to_string(est.power.size()));
  ResidualSummary out;
  out.stride = stride != 0 ? stride : (est.window.kind == WindowKind::hann ? 2 : 1);
  out.ratio.assign(est.power.size(), std::numeric_limits<double>::quiet_NaN());

  std::vector<std::size_t> chosen;
  if (bins.empty()) {
    for (std::size_t i = 0; i < model.size(); ++i)
      if (model[i] > 0.0) chosen.push_back(i);
  } else {
    for (std::size_t i : bins) {
      require(i < model.size(), Errc::grid_mismatch, "residual bin outside the grid");
      require(model[i] > 0.0, Errc::non_positive_model, "model is not positive in a tested bin");
      chosen.push_back(i);
    }
  }
  require(!chosen.empty(), Errc::empty_input, "no bins to test");
  for (std::size_t i : chosen) out.ratio[i] = est.power[i] / model[i];

  double sum = 0.0;
  double sum2 = 0.0;
  for (std::size_t i : chosen) {
    sum += out.ratio[i];
    sum2 += out.ratio[i] * out.ratio[i];
  }
  const double n_all = static_cast<double>(chosen.size());
  out.mean_ratio = sum / n_all;
  out.var_ratio = chosen.size() > 1 ? (sum2 - sum * sum / n_all) / (n_all - 1.0) : 0.0;

  const double nu = est.dof;
  std::vector<double> stat;
  for (std::size_t j = 0; j < chosen.size(); j += out.stride) {
    out.bins.push_back(chosen[j]);
    stat.push_back(nu * out.ratio[chosen[j]]);
  }
  const auto [lo, hi] = std::minmax_element(stat.begin(), stat.end());
  out.degenerate = *hi - *lo <= 1e-12 * std::abs(*hi);
  out.ks_statistic = ks_statistic(stat, [nu](double x) { return chi2_cdf(nu, x); });
  out.ks_pvalue = kolmogorov_pvalue(out.ks_statistic, stat.size());
  return out;
}

ResidualSummary residuals(const SpectrumEstimate& est, const SpectrumEstimate& model,
                          std::span<const std::size_t> bins, std::size_t stride) {
  require(model.power.size() == est.power.size() && model.one_sided == est.one_sided &&
              std::abs(model.df - est.df) <= 1e-9 * est.df &&
              std::abs(model.f_start - est.f_start) <= 1e-6 * est.df,
          Errc::grid_mismatch, "model and estimate grids differ");
  return residuals(est, std::span<const double>(model.power), bins, stride);
}

nlohmann::json to_json(const WindowSpec& w) {
  return {{"kind", to_string(w.kind)}, {"remove_mean", w.remove_mean}};
}

nlohmann::json to_json(const SpectrumEstimate& est) {
  return {{"f_start", est.f_start},
          {"df", est.df},
          {"n", est.power.size()},
          {"one_sided", est.one_sided},
          {"nu", est.dof},
          {"segment_length", est.segment_length},
          {"n_segments", est.n_segments},
          {"sample_rate", est.sample_rate},
          {"window", to_json(est.window)},
          {"power", est.power}};
}

nlohmann::json to_json(const ResidualSummary& r, bool with_ratios) {
  nlohmann::json j = {{"ks_statistic", r.ks_statistic},
                      {"ks_pvalue", r.ks_pvalue},
                      {"n_tested", r.bins.size()},
                      {"stride", r.stride},
                      {"degenerate", r.degenerate},
                      {"mean_ratio", r.mean_ratio},
                      {"var_ratio", r.var_ratio}};
  if (with_ratios) {
    std::vector<double> tested;
    for (std::size_t i : r.bins) tested.push_back(r.ratio[i]);
    j["bins"] = r.bins;
    j["ratio"] = tested;
  }
  return j;
}

WindowSpec window_from_json(const nlohmann::json& j) {
  WindowSpec w;
  if (j.is_string()) {
    w.kind = window_kind_from_string(j.get<std::string>());
    return w;
  }
  w.kind = window_kind_from_string(j.value("kind", std::string("hann")));
  w.remove_mean = j.value("remove_mean", true);
  return w;
}

SpectrumEstimate spectrum_from_json(const nlohmann::json& j) {
  SpectrumEstimate est;
  try {
    est.power = j.at("power").get<std::vector<double>>();
    est.df = j.at("df").get<double>();
    est.f_start = j.at("f_start").get<double>();
    est.one_sided = j.value("one_sided", false);
    est.dof = j.at("nu").get<int>();
    est.segment_length = j.value("segment_length", std::size_t{0});
    est.n_segments = j.value("n_segments", static_cast<std::size_t>(est.dof / 2));
    est.sample_rate = j.value("sample_rate", 0.0);
    if (j.contains("window")) est.window = window_from_json(j.at("window"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_config, std::string("malformed spectrum JSON: ") + e.what());
  }
  if (j.contains("n"))
    require(j.at("n").get<std::size_t>() == est.power.size(), Errc::invalid_config,
            "spectrum 'n' does not match the number of power values");
  est.validate();
  return est;
}

}  // namespace levspec
