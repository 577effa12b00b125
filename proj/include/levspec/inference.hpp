#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "levspec/sde_sim.hpp"
#include "levspec/spectral.hpp"
#include "levspec/theory.hpp"

namespace levspec {

enum class ModelEngine { correlation, series };

std::string to_string(ModelEngine e);
ModelEngine model_engine_from_string(const std::string& name);

// Expected value of the windowed, segment-averaged periodogram of a unit
// amplitude heterodyne signal sampled at fs:
//   E[S_k] = (1/fs) sum_{|n| < L} R_v(n / fs) lambda(n) exp(-2 pi i k n / L),
//   R_v(t) = (1/2) cos(2 pi f0 t) exp(R_phiphi(t) - phi^2),
// with lambda the normalized window autocorrelation. This includes aliasing,
// window smoothing and the carrier's leakage exactly. Bins k = 0 .. L/2.
class PeriodogramModel {
 public:
  PeriodogramModel(std::size_t segment_length, double sample_rate, double carrier_freq,
                   const WindowSpec& window, ModelEngine engine = ModelEngine::correlation,
                   double series_tol = 1e-10);

  std::vector<double> evaluate(const ModelParams& p) const;
  // RIN-averaged model (Gauss-Hermite, see rin_broadened).
  std::vector<double> evaluate(const ModelParams& p, double rin_width, int rin_order) const;

  std::size_t segment_length() const { return length_; }
  double sample_rate() const { return sample_rate_; }
  double carrier_freq() const { return carrier_; }
  double df() const { return sample_rate_ / static_cast<double>(length_); }
  ModelEngine engine() const { return engine_; }

 private:
  std::vector<double> lag_continuous(const ModelParams& p) const;

  std::size_t length_;
  double sample_rate_;
  double carrier_;
  ModelEngine engine_;
  double series_tol_;
  std::vector<double> carrier_lag_;  // (1/2) cos(2 pi f0 n / fs) lambda(n), n = 0 .. L-1
};

// Bins used by the likelihood: positive frequencies inside `intervals` (all
// of (0, fs/2) when empty), minus the DC main lobe, Nyquist, and the carrier
// bin +- carrier_exclusion_bins.
struct FitWindow {
  std::vector<std::pair<double, double>> intervals;  // Hz, inclusive
  std::size_t carrier_exclusion_bins = 3;
  double carrier_freq = 0.0;

  // Indices into est.power.
  std::vector<std::size_t> bins(const SpectrumEstimate& est) const;
};

struct NuisanceParams {
  double gain = 0.0;    // A
  double offset = 0.0;  // B
};

struct NuisanceFit {
  NuisanceParams nuisance;
  double nll = 0.0;
  int iterations = 0;
};

// Sum over bins of log S_i + S_hat_i / S_i, S_i = A model_i + B.
double whittle_nll(const SpectrumEstimate& est, std::span<const double> model,
                   const NuisanceParams& nuisance, std::span<const std::size_t> bins);

// (A, B >= 0) minimizing whittle_nll for a fixed shape. For fixed b = B / A
// the optimal A is mean(S_hat / (model + b)), so the search is 1-D in b
// (safeguarded Newton, started from A = ratio of means over the peak decile
// and B = median over the lowest decile).
NuisanceFit profile_nuisance(const SpectrumEstimate& est, std::span<const double> model,
                             std::span<const std::size_t> bins);

// Maps the model's positive-frequency bins onto the bins of an estimate
// (one-sided estimates get the factor 2 of folding).
std::vector<double> model_on_estimate(const PeriodogramModel& model, std::span<const double> values,
                                      const SpectrumEstimate& est);

struct NelderMeadOptions {
  double xtol = 1e-6;  // simplex extent, infinity norm
  double ftol = 1e-8;  // absolute spread of vertex values
  int max_evals = 2000;
};

struct NelderMeadResult {
  std::vector<double> x;
  double f = 0.0;
  int n_evals = 0;
  bool converged = false;
};

NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& f,
                             std::vector<double> x0, std::vector<double> step,
                             const NelderMeadOptions& opt);

struct FitOptions {
  std::optional<double> rin_width;  // fixed R
  bool fit_rin = false;             // also fit R (starting from rin_width or 0.005)
  int rin_order = 61;
  double tol = 1e-6;                // simplex size in log-parameter space
  int max_evals = 3000;
  int restarts = 3;
  double initial_step = 0.1;        // log-space simplex step
  ModelEngine engine = ModelEngine::correlation;
  std::optional<NuisanceParams> nuisance;  // known gain and offset; profiled when unset
};

struct FitResult {
  ModelParams model;
  NuisanceParams nuisance;
  double nll = 0.0;
  bool converged = false;
  int n_evals = 0;
  FitWindow window;
  std::optional<double> rin_width;
  std::size_t n_bins = 0;
  double likelihood_scale = 1.0;  // s in prob ~ exp(-s (L - L_min))
};

// Evaluates the profiled NLL (nuisance optimized) of an estimate.
class WhittleObjective {
 public:
  WhittleObjective(const SpectrumEstimate& est, const FitWindow& window,
                   const FitOptions& options = {});

  NuisanceFit operator()(const ModelParams& p, double rin_width = 0.0) const;
  std::vector<double> model_bins(const ModelParams& p, double rin_width = 0.0) const;

  const std::vector<std::size_t>& bins() const { return bins_; }
  const FitWindow& window() const { return window_; }
  const SpectrumEstimate& estimate() const { return est_; }
  const PeriodogramModel& model() const { return model_; }
  // (nu / 2) times the window's bin-correlation factor.
  double likelihood_scale() const { return scale_; }
  const FitOptions& options() const { return options_; }
  // Sum of log S_hat over the bins. The optimizers minimize nll minus this,
  // which keeps values O(bins) and makes them invariant to scaling the data.
  double data_log_sum() const { return log_sum_; }

 private:
  SpectrumEstimate est_;
  FitWindow window_;
  FitOptions options_;
  PeriodogramModel model_;
  std::vector<std::size_t> bins_;
  std::vector<std::size_t> model_index_;  // model bin per included estimate bin
  double fold_ = 1.0;
  double scale_ = 1.0;
  double log_sum_ = 0.0;
};

FitResult mle_fit(const SpectrumEstimate& est, const ModelParams& init, const FitWindow& window,
                  const FitOptions& options = {});
FitResult mle_fit(const WhittleObjective& objective, const ModelParams& init);

struct CredibleInterval {
  double level = 0.68;
  double lo = 0.0;
  double hi = 0.0;
};

struct ProfileScan {
  std::string param;
  std::vector<double> grid;
  std::vector<double> nll;
  std::vector<double> density;
  std::vector<ModelParams> trajectory;
  std::vector<NuisanceParams> nuisance;
  double mean = 0.0;
  double sd = 0.0;
  double mode = 0.0;
  CredibleInterval interval;
  double edge_mass = 0.0;
  bool edge_warning = false;
  bool multimodal = false;
  double likelihood_scale = 1.0;
  std::vector<std::string> fixed;  // parameters held at the MLE
  bool converged = true;
};

struct ProfileOptions {
  double level = 0.68;
  int n_points = 41;
  double n_sd = 5.0;
  double edge_tol = 1e-3;
  int max_widen = 4;
  std::vector<std::string> fixed;   // held at the MLE (conditional profile)
  std::vector<double> grid;         // explicit grid; automatic when empty
  int threads = 1;
};

// Normalized density exp(-scale (nll - min nll)) on a grid (trapezoid rule),
// with mean, SD and the central credible interval at `level`.
ProfileScan profile_density(std::vector<double> grid, std::vector<double> nll, double scale,
                            double level);

ProfileScan profile_scan(const WhittleObjective& objective, const FitResult& fit,
                         const std::string& param, const ProfileOptions& options = {});
ProfileScan profile_scan(const SpectrumEstimate& est, const FitResult& fit, const std::string& param,
                         const FitWindow& window, const ProfileOptions& options = {},
                         const FitOptions& fit_options = {});

struct EnsembleConfig {
  OscillatorParams oscillator;
  SignalParams signal;
  SimulationConfig simulation;  // simulation.seed is the base seed
  std::size_t n_runs = 40;
  std::size_t segment_length = 65536;
  WindowSpec window;
  FitWindow fit_window;
  FitOptions fit;
  bool profile = true;
  std::vector<std::string> profile_params = {"phi"};
  ProfileOptions profile_options;
  int threads = 1;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

struct EnsembleRun {
  std::uint64_t seed = 0;
  FitResult fit;
  std::vector<ProfileScan> profiles;
};

struct ParameterSummary {
  std::string name;
  double truth = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  double bias = 0.0;
  double bias_se = 0.0;          // bias / (sd / sqrt(n))
  double mean_profile_sd = 0.0;  // 0 when not profiled
  double sd_ratio = 0.0;         // sd / mean_profile_sd
  std::size_t covered = 0;       // runs whose interval contains the truth
  double coverage = 0.0;
  double coverage_lo = 0.0;      // binomial 95% band for the nominal level
  double coverage_hi = 0.0;
  bool profiled = false;
};

struct EnsembleReport {
  std::vector<EnsembleRun> runs;
  std::vector<ParameterSummary> params;
  std::size_t n_converged = 0;
  bool failed = false;  // more than 20% of runs did not converge
  ModelParams truth;
  double level = 0.68;
};

// Truth ModelParams of a simulated signal.
ModelParams true_model(const OscillatorParams& osc, const SignalParams& sig);

EnsembleReport ensemble_validate(const EnsembleConfig& config);

// Bounds [lo, hi] on the count of successes that a binomial(n, p) lands in
// with probability >= 0.95 (equal tails).
std::pair<std::size_t, std::size_t> binomial_band(std::size_t n, double p);

nlohmann::json to_json(const FitWindow& w);
nlohmann::json to_json(const NuisanceParams& n);
nlohmann::json to_json(const FitOptions& o);
nlohmann::json to_json(const FitResult& r);
nlohmann::json to_json(const ProfileScan& s);
nlohmann::json to_json(const EnsembleReport& r);
FitWindow fit_window_from_json(const nlohmann::json& j);

}  // namespace levspec
