#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "levspec/sde_sim.hpp"

namespace levspec {

enum class WindowKind { hann, rect };

std::string to_string(WindowKind kind);
WindowKind window_kind_from_string(const std::string& name);

struct WindowSpec {
  WindowKind kind = WindowKind::hann;
  bool remove_mean = true;  // subtract the segment mean before windowing

  // Hann: w_m = (1 - cos(2 pi m / (n - 1))) / 2, symmetric.
  std::vector<double> weights(std::size_t n) const;
  // mean(w^2); the periodogram is divided by it so white noise is unbiased.
  double power_norm(std::size_t n) const;
  // Number of bins either side of a line that the main lobe occupies.
  std::size_t main_lobe_bins() const { return kind == WindowKind::hann ? 1 : 0; }
};

// Averaged periodogram on a uniform grid. Two-sided grids are ordered from
// -fs/2 upwards (bin k of the DFT sits at index k + n/2 for even n); one-sided
// grids run from 0 to fs/2.
struct SpectrumEstimate {
  double f_start = 0.0;  // Hz
  double df = 0.0;       // Hz
  std::vector<double> power;  // 1/Hz (signal units^2 / Hz)
  bool one_sided = false;
  int dof = 2;
  std::size_t segment_length = 0;
  std::size_t n_segments = 0;
  double sample_rate = 0.0;
  WindowSpec window;

  std::size_t size() const { return power.size(); }
  double freq(std::size_t i) const { return f_start + static_cast<double>(i) * df; }
  // Index of the bin nearest to f (clamped to the grid).
  std::size_t index_of(double f) const;
  void validate() const;
};

SpectrumEstimate periodogram(std::span<const double> x, double sample_rate, const WindowSpec& w);
SpectrumEstimate periodogram(const TimeSeries& x, const WindowSpec& w);

// Mean of floor(N / segment_length) non-overlapping segment periodograms.
SpectrumEstimate bartlett(const TimeSeries& x, std::size_t segment_length, const WindowSpec& w);

// Folds a two-sided estimate onto [0, fs/2]; interior bins are doubled.
SpectrumEstimate fold_one_sided(const SpectrumEstimate& est);

// 1 / (1 + sum_{j != 0} |rho_j|^2), where rho_j is the correlation between
// DFT coefficients j bins apart for white input. 1 for rect, ~0.514 for Hann.
double bin_correlation_factor(const WindowSpec& w, std::size_t n);

struct ResidualSummary {
  std::vector<double> ratio;      // S_hat / S per bin (NaN where not evaluated)
  std::vector<std::size_t> bins;  // bins entering the KS test
  double ks_statistic = 0.0;
  double ks_pvalue = 1.0;
  std::size_t stride = 1;
  bool degenerate = false;  // all tested ratios equal: no sampling variability
  double mean_ratio = 0.0;
  double var_ratio = 0.0;
};

// Ratios S_hat / S and a Kolmogorov-Smirnov test of nu S_hat / S against
// chi^2_nu. `bins` restricts the test (all bins with S > 0 when empty).
// Hann-windowed neighbours are correlated, so by default every 2nd bin is
// tested (stride 0 = automatic).
ResidualSummary residuals(const SpectrumEstimate& est, std::span<const double> model,
                          std::span<const std::size_t> bins = {}, std::size_t stride = 0);
ResidualSummary residuals(const SpectrumEstimate& est, const SpectrumEstimate& model,
                          std::span<const std::size_t> bins = {}, std::size_t stride = 0);

double chi2_cdf(double nu, double x);
// Asymptotic Kolmogorov p-value for statistic d over n points.
double kolmogorov_pvalue(double d, std::size_t n);
// One-sample KS statistic of x against a continuous cdf.
template <class Cdf>
double ks_statistic(std::vector<double> x, Cdf cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

nlohmann::json to_json(const WindowSpec& w);
nlohmann::json to_json(const SpectrumEstimate& est);
nlohmann::json to_json(const ResidualSummary& r, bool with_ratios = false);
WindowSpec window_from_json(const nlohmann::json& j);
SpectrumEstimate spectrum_from_json(const nlohmann::json& j);

}  // namespace levspec
