#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "levspec/error.hpp"
#include "levspec/inference.hpp"
#include "levspec/io.hpp"
#include "levspec/sde_sim.hpp"
#include "levspec/spectral.hpp"
#include "levspec/theory.hpp"

using nlohmann::json;
namespace ls = levspec;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;
constexpr int kExitNoConvergence = 3;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// ---------------------------------------------------------------- config

json option_value(const CLI::Option* opt) {
  std::vector<std::string> raw = opt->count() > 0 ? opt->results() : std::vector<std::string>{};
  if (raw.empty()) {
    const std::string d = opt->get_default_str();
    if (d.empty()) return opt->get_expected_max() == 0 ? json(false) : json(nullptr);
    raw = {d};
  }
  auto scalar = [](const std::string& s) -> json {
    if (s == "true") return true;
    if (s == "false") return false;
    char* end = nullptr;
    const long long i = std::strtoll(s.c_str(), &end, 10);
    if (!s.empty() && end == s.c_str() + s.size()) return i;
    const double v = std::strtod(s.c_str(), &end);
    if (!s.empty() && end == s.c_str() + s.size()) return v;
    return s;
  };
  if (opt->get_expected_max() == 0) return opt->count() > 0;
  if (opt->get_items_expected_max() > 1 || raw.size() > 1) {
    json arr = json::array();
    for (const auto& s : raw) arr.push_back(scalar(s));
    return arr;
  }
  return scalar(raw.front());
}

// Options of one subcommand as {long-name: value}; feeding the object back
// through --config reproduces the run.
json effective_config(const CLI::App& app) {
  json j = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config" || opt->get_configurable() == false) continue;
    j[name] = option_value(opt);
  }
  return j;
}

// JSON config. Keys that are not options of the root app belong to the
// subcommand being run, so a flat file mirrors that subcommand's flags.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App* app, bool, bool, std::string) const override {
    return effective_config(*app).dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::parse_error& e) {
      throw CLI::ConversionError("config", std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config", "config file must hold a JSON object");
    std::string sub;
    for (const CLI::App* s : root_->get_subcommands()) sub = s->get_name();
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      const bool root_key = root_->get_option_no_throw("--" + key) != nullptr;
      const bool scoped = value.is_object() && root_->get_subcommand_no_throw(key) != nullptr;
      std::vector<std::string> parents;
      if (!root_key && !scoped && !sub.empty()) parents.push_back(sub);
      collect(key, value, parents, items);
    }
    return items;
  }

 private:
  static std::string text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void collect(const std::string& key, const json& value, std::vector<std::string> parents,
                      std::vector<CLI::ConfigItem>& items) {
    if (value.is_null()) return;
    if (value.is_object()) {
      parents.push_back(key);
      for (const auto& [k, v] : value.items()) collect(k, v, parents, items);
      return;
    }
    CLI::ConfigItem item;
    item.parents = std::move(parents);
    item.name = key;
    if (value.is_array()) {
      for (const auto& v : value) item.inputs.push_back(text(v));
    } else {
      item.inputs.push_back(text(value));
    }
    items.push_back(std::move(item));
  }

  const CLI::App* root_;
};

// ---------------------------------------------------------------- helpers

std::pair<double, double> parse_interval(const std::string& s) {
  const auto colon = s.find(':');
  ls::require(colon != std::string::npos, ls::Errc::invalid_config,
              "interval '" + s + "' must look like lo:hi");
  try {
    std::size_t used = 0;
    const std::string a = s.substr(0, colon);
    const std::string b = s.substr(colon + 1);
    const double lo = std::stod(a, &used);
    ls::require(used == a.size(), ls::Errc::invalid_config, "bad number in '" + s + "'");
    const double hi = std::stod(b, &used);
    ls::require(used == b.size(), ls::Errc::invalid_config, "bad number in '" + s + "'");
    ls::require(lo < hi, ls::Errc::invalid_config, "interval '" + s + "' needs lo < hi");
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw ls::Error(ls::Errc::invalid_config, "bad number in interval '" + s + "'");
  }
}

struct Log {
  bool quiet = false;
  template <class... Args>
  void operator()(const char* fmt, Args... args) const {
    if (quiet) return;
    std::fprintf(stderr, fmt, args...);
    std::fputc('\n', stderr);
  }
};

// Oscillator frequency given in rad/s or Hz.
struct OmegaFlags {
  std::optional<double> omega;
  std::optional<double> omega_hz;

  void add(CLI::App* sub, const std::string& what) {
    auto* a = sub->add_option("--omega", omega, what + " natural frequency, rad/s");
    auto* b = sub->add_option("--omega-hz", omega_hz, what + " natural frequency, Hz");
    a->excludes(b);
  }
  std::optional<double> value() const {
    if (omega) return *omega;
    if (omega_hz) return kTwoPi * *omega_hz;
    return std::nullopt;
  }
};

int threads_from(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// ---------------------------------------------------------------- simulate

struct SimulateCmd {
  OmegaFlags omega;
  double gamma = 0.0;
  double temperature = 300.0;
  double mass = 1e-18;
  std::optional<double> phi;
  std::optional<double> kappa;
  double f0 = 0.0;
  double amplitude = 1.0;
  double phase_offset = 0.0;
  double noise_floor = 0.0;
  double rate = 10e6;
  double duration = 1.0;
  double dt = 1e-9;
  std::uint64_t seed = 0;
  double rin = 0.0;
  std::string rin_model = "constant";
  std::string output;
  std::string position_output;

  void add(CLI::App* sub) {
    omega.add(sub, "oscillator");
    sub->add_option("--gamma", gamma, "damping rate, 1/s")->required();
    sub->add_option("--temperature", temperature, "bath temperature, K")->capture_default_str();
    sub->add_option("--mass", mass, "particle mass, kg")->capture_default_str();
    auto* p = sub->add_option("--phi", phi, "RMS phase-modulation depth, rad");
    auto* k = sub->add_option("--kappa", kappa, "position-to-phase sensitivity, rad/m");
    p->excludes(k);
    sub->add_option("--f0", f0, "carrier frequency, Hz")->required();
    sub->add_option("--amplitude", amplitude, "carrier amplitude")->capture_default_str();
    sub->add_option("--phase-offset", phase_offset, "carrier phase, rad")->capture_default_str();
    sub->add_option("--noise-floor", noise_floor, "white detector noise, two-sided PSD 1/Hz")
        ->capture_default_str();
    sub->add_option("--rate", rate, "sample rate, S/s")->capture_default_str();
    sub->add_option("--duration", duration, "record length, s")->capture_default_str();
    sub->add_option("--dt", dt, "integration step, s")->capture_default_str();
    sub->add_option("--seed", seed, "random seed")->capture_default_str();
    sub->add_option("--rin", rin, "relative intensity drift width R")->capture_default_str();
    sub->add_option("--rin-model", rin_model, "drift model: constant or ramp")
        ->check(CLI::IsMember({"constant", "ramp"}))
        ->capture_default_str();
    sub->add_option("-o,--output", output, "signal file (float64 LE; sidecar at <file>.json)")
        ->required();
    sub->add_option("--position-output", position_output, "also write the position record here");
  }

  int run(const CLI::App& sub, const Log& log) const {
    ls::require(omega.value().has_value(), ls::Errc::invalid_config, "--omega or --omega-hz is required");
    ls::require(phi || kappa, ls::Errc::invalid_config, "--phi or --kappa is required");
    ls::OscillatorParams osc{*omega.value(), gamma, temperature, mass};
    ls::SignalParams sig;
    sig.carrier_freq = f0;
    sig.amplitude = amplitude;
    sig.phase_offset = phase_offset;
    sig.phi = phi;
    sig.kappa = kappa;
    sig.noise_floor = noise_floor;
    ls::SimulationConfig sim;
    sim.dt = dt;
    sim.sample_rate = rate;
    sim.duration = duration;
    sim.seed = seed;
    if (rin > 0.0)
      sim.rin_drift = ls::RinDrift{rin, rin_model == "ramp" ? ls::DriftModel::linear_ramp
                                                            : ls::DriftModel::constant_per_run};
    osc.validate();
    sig.validate();
    sim.validate();
    log("simulating %zu samples (dt %g s, seed %llu)", sim.n_samples(), sim.dt,
        static_cast<unsigned long long>(seed));
    auto z = ls::simulate_trajectory(osc, sim);
    auto v = ls::synthesize_signal(z, sig, osc, sim);
    const json cfg = effective_config(sub);
    v.metadata["cli"] = cfg;
    ls::io::write_time_series(output, v);
    if (!position_output.empty()) {
      z.metadata["cli"] = cfg;
      ls::io::write_time_series(position_output, z);
    }
    log("wrote %s", output.c_str());
    return kExitOk;
  }
};

// ---------------------------------------------------------------- psd

struct PsdCmd {
  std::string input;
  std::optional<std::size_t> segment;
  std::optional<std::size_t> segments;
  std::string window = "hann";
  bool keep_mean = false;
  bool one_sided = false;
  std::string output;
  std::string tsv;

  void add(CLI::App* sub) {
    sub->add_option("-i,--input", input, "time-series file")->required();
    auto* s = sub->add_option("--segment", segment, "segment length (default 65536)");
    auto* k = sub->add_option("--segments", segments, "number of equal segments");
    s->excludes(k);
    sub->add_option("--window", window, "taper: hann or rect")
        ->check(CLI::IsMember({"hann", "rect"}))
        ->capture_default_str();
    sub->add_flag("--keep-mean", keep_mean, "do not subtract each segment's mean");
    sub->add_flag("--one-sided", one_sided, "fold onto [0, fs/2]");
    sub->add_option("-o,--output", output, "spectrum JSON")->required();
    sub->add_option("--tsv", tsv, "plot export: frequency, power");
  }

  int run(const CLI::App& sub, const Log& log) const {
    const auto ts = ls::io::read_time_series(input);
    ls::WindowSpec w;
    w.kind = ls::window_kind_from_string(window);
    w.remove_mean = !keep_mean;
    std::size_t seg = segment.value_or(65536);
    if (segments) {
      ls::require(*segments >= 1, ls::Errc::invalid_config, "--segments must be >= 1");
      seg = ts.samples.size() / *segments;
    }
    auto est = ls::bartlett(ts, seg, w);
    if (one_sided) est = ls::fold_one_sided(est);
    log("segment %zu x %zu, nu = %d", est.segment_length, est.n_segments, est.dof);
    json j = ls::to_json(est);
    j["source"] = ts.metadata;
    j["seed"] = ts.metadata.value("seed", json(nullptr));
    j["config"] = effective_config(sub);
    ls::io::write_json(output, j);
    if (!tsv.empty()) {
      std::vector<double> f(est.size());
      for (std::size_t i = 0; i < f.size(); ++i) f[i] = est.freq(i);
      ls::io::write_tsv(tsv, {"frequency_hz", "power_per_hz"}, {f, est.power});
    }
    return kExitOk;
  }
};

// ---------------------------------------------------------------- theory

struct TheoryCmd {
  OmegaFlags omega;
  double gamma = 0.0;
  double phi = 0.0;
  double f0 = 0.0;
  std::optional<double> df;
  double half_width = 5e6;
  bool linear = false;
  std::string engine = "series";
  double tol = 1e-10;
  double amplitude = 1.0;
  double rin = 0.0;
  int rin_order = 61;
  std::string output;
  std::string tsv;

  void add(CLI::App* sub) {
    omega.add(sub, "oscillator");
    sub->add_option("--gamma", gamma, "damping rate, 1/s")->required();
    sub->add_option("--phi", phi, "RMS phase-modulation depth, rad")->required();
    sub->add_option("--f0", f0, "carrier frequency, Hz")->capture_default_str();
    sub->add_option("--df", df, "grid spacing, Hz (default gamma / (20 pi))");
    sub->add_option("--half-width", half_width, "grid half-width, Hz")->capture_default_str();
    sub->add_flag("--linear", linear, "window onto the continuous spectrum instead of one aliased period");
    sub->add_option("--engine", engine, "series or correlation")
        ->check(CLI::IsMember({"series", "correlation"}))
        ->capture_default_str();
    sub->add_option("--tol", tol, "series truncation tolerance")->capture_default_str();
    sub->add_option("--amplitude", amplitude, "carrier amplitude v0")->capture_default_str();
    sub->add_option("--rin", rin, "RIN width R")->capture_default_str();
    sub->add_option("--rin-order", rin_order, "Gauss-Hermite order")->capture_default_str();
    sub->add_option("-o,--output", output, "spectrum JSON")->required();
    sub->add_option("--tsv", tsv, "plot export: frequency, density");
  }

  int run(const CLI::App& sub, const Log& log) const {
    ls::require(omega.value().has_value(), ls::Errc::invalid_config, "--omega or --omega-hz is required");
    const ls::ModelParams p{phi, *omega.value(), gamma};
    p.validate();
    const double step = df.value_or(gamma / (20.0 * std::numbers::pi));
    const auto grid = ls::FrequencyGrid::centered(f0, step, half_width, !linear);
    log("grid: %zu points, df %g Hz", grid.n, grid.df);
    ls::SpectrumEvaluator eval = [&](const ls::ModelParams& q) {
      return engine == "series" ? ls::middleton_series(q, amplitude, grid, tol)
                                : ls::spectrum_from_correlation(q, amplitude, grid);
    };
    const auto s = rin > 0.0 ? ls::rin_broadened(eval, p, rin, rin_order) : eval(p);
    json j = ls::to_json(s);
    j["config"] = effective_config(sub);
    ls::io::write_json(output, j);
    if (!tsv.empty()) {
      std::vector<double> f(grid.n);
      for (std::size_t i = 0; i < grid.n; ++i) f[i] = grid.freq(i);
      ls::io::write_tsv(tsv, {"frequency_hz", "density_per_hz"}, {f, s.density});
    }
    return kExitOk;
  }
};

// ---------------------------------------------------------------- fit

struct FitFlags {
  std::string input;
  std::optional<double> f0;
  std::optional<double> phi;
  OmegaFlags omega;
  std::optional<double> gamma;
  std::vector<std::string> windows;
  std::size_t exclude_carrier = 3;
  std::optional<double> rin;
  bool fit_rin = false;
  int rin_order = 61;
  double tol = 1e-6;
  int max_evals = 3000;
  int restarts = 3;
  std::string engine = "correlation";
  std::optional<double> gain;
  double offset = 0.0;
  std::string output;
  std::string tsv;

  void add(CLI::App* sub) {
    sub->add_option("-i,--input", input, "spectrum JSON from 'psd'")->required();
    sub->add_option("--f0", f0, "carrier frequency, Hz (default: from the spectrum's source)");
    sub->add_option("--phi", phi, "initial phi, rad");
    omega.add(sub, "initial");
    sub->add_option("--gamma", gamma, "initial damping rate, 1/s");
    sub->add_option("--window", windows, "fit interval lo:hi in Hz (repeatable; default all)");
    sub->add_option("--exclude-carrier", exclude_carrier, "bins excluded either side of the carrier")
        ->capture_default_str();
    sub->add_option("--rin", rin, "fixed RIN width R");
    sub->add_flag("--fit-rin", fit_rin, "fit R as well");
    sub->add_option("--rin-order", rin_order, "Gauss-Hermite order for RIN")->capture_default_str();
    sub->add_option("--tol", tol, "simplex size tolerance (log parameters)")->capture_default_str();
    sub->add_option("--max-evals", max_evals, "likelihood evaluation budget")->capture_default_str();
    sub->add_option("--restarts", restarts, "simplex restarts")->capture_default_str();
    sub->add_option("--engine", engine, "model engine: correlation or series")
        ->check(CLI::IsMember({"correlation", "series"}))
        ->capture_default_str();
    auto* g = sub->add_option("--gain", gain, "known gain A (skips nuisance profiling)");
    sub->add_option("--offset", offset, "known offset B, used with --gain")->needs(g)->capture_default_str();
    sub->add_option("-o,--output", output, "result JSON")->required();
    sub->add_option("--tsv", tsv, "plot export: frequency, data, model, ratio");
  }

  struct Loaded {
    ls::SpectrumEstimate est;
    json source;
    ls::FitWindow window;
    ls::FitOptions options;
    ls::ModelParams init;
  };

  Loaded load() const {
    Loaded l;
    const json j = ls::io::read_json(input);
    l.est = ls::spectrum_from_json(j);
    l.source = j.value("source", json::object());
    const json osc = l.source.value("oscillator", json::object());
    const json sig = l.source.value("signal", json::object());
    auto from_source = [](const json& obj, const char* key) -> std::optional<double> {
      if (obj.contains(key) && obj.at(key).is_number()) return obj.at(key).get<double>();
      return std::nullopt;
    };
    const auto carrier = f0 ? f0 : from_source(sig, "carrier_freq");
    ls::require(carrier.has_value(), ls::Errc::invalid_config,
                "--f0 is required (the spectrum records no carrier frequency)");
    l.window.carrier_freq = *carrier;
    l.window.carrier_exclusion_bins = exclude_carrier;
    for (const auto& w : windows) l.window.intervals.push_back(parse_interval(w));
    const auto p0 = phi ? phi : from_source(l.source, "phi");
    const auto w0 = omega.value() ? omega.value() : from_source(osc, "omega");
    const auto g0 = gamma ? gamma : from_source(osc, "gamma");
    ls::require(p0 && w0 && g0, ls::Errc::invalid_config,
                "initial --phi, --omega and --gamma are required when the spectrum has no recorded truth");
    l.init = {*p0, *w0, *g0};
    l.options.rin_width = rin;
    l.options.fit_rin = fit_rin;
    l.options.rin_order = rin_order;
    l.options.tol = tol;
    l.options.max_evals = max_evals;
    l.options.restarts = restarts;
    l.options.engine = ls::model_engine_from_string(engine);
    if (gain) l.options.nuisance = ls::NuisanceParams{*gain, offset};
    return l;
  }
};

json fit_diagnostics(const ls::WhittleObjective& obj, const ls::FitResult& fit,
                     std::vector<double>* model_out = nullptr) {
  json d = {{"n_evals", fit.n_evals}, {"converged", fit.converged}, {"n_bins", fit.n_bins}};
  if (!std::isfinite(fit.nll)) return d;
  const auto m = obj.model_bins(fit.model, fit.rin_width.value_or(0.0));
  const auto& est = obj.estimate();
  std::vector<double> full(est.size(), 0.0);
  for (std::size_t j = 0; j < m.size(); ++j)
    full[obj.bins()[j]] = fit.nuisance.gain * m[j] + fit.nuisance.offset;
  d["residuals"] = ls::to_json(ls::residuals(est, full, obj.bins()));
  if (model_out) *model_out = std::move(full);
  return d;
}

void write_fit_tsv(const std::string& path, const ls::WhittleObjective& obj,
                   const std::vector<double>& model) {
  const auto& est = obj.estimate();
  std::vector<double> f, y, m, r;
  for (std::size_t i : obj.bins()) {
    f.push_back(est.freq(i));
    y.push_back(est.power[i]);
    m.push_back(model[i]);
    r.push_back(est.power[i] / model[i]);
  }
  ls::io::write_tsv(path, {"frequency_hz", "data", "model", "ratio"}, {f, y, m, r});
}

struct FitCmd {
  FitFlags flags;

  void add(CLI::App* sub) { flags.add(sub); }

  int run(const CLI::App& sub, const Log& log) const {
    const auto l = flags.load();
    const ls::WhittleObjective obj(l.est, l.window, l.options);
    log("fitting %zu bins", obj.bins().size());
    const auto fit = ls::mle_fit(obj, l.init);
    std::vector<double> model;
    json j = ls::to_json(fit);
    j["diagnostics"] = fit_diagnostics(obj, fit, &model);
    j["init"] = ls::to_json(l.init);
    j["options"] = ls::to_json(l.options);
    j["source"] = l.source;
    j["seed"] = l.source.value("seed", json(nullptr));
    j["config"] = effective_config(sub);
    ls::io::write_json(flags.output, j);
    if (!flags.tsv.empty() && !model.empty()) write_fit_tsv(flags.tsv, obj, model);
    log("phi %.6g  omega/2pi %.6g Hz  gamma %.6g 1/s  converged %s", fit.model.phi,
        fit.model.omega / kTwoPi, fit.model.gamma, fit.converged ? "yes" : "no");
    if (!fit.converged) {
      std::cerr << "error: fit did not converge after " << fit.n_evals << " evaluations\n";
      return kExitNoConvergence;
    }
    return kExitOk;
  }
};

// ---------------------------------------------------------------- profile

struct ProfileCmd {
  FitFlags flags;
  std::string param = "phi";
  double level = 0.68;
  int points = 41;
  double n_sd = 5.0;
  std::vector<std::string> fixed;
  std::string grid;

  void add(CLI::App* sub) {
    flags.add(sub);
    sub->add_option("--param", param, "profiled parameter")
        ->check(CLI::IsMember({"phi", "omega", "gamma"}))
        ->capture_default_str();
    sub->add_option("--level", level, "credible level")->capture_default_str();
    sub->add_option("--points", points, "grid points")->capture_default_str();
    sub->add_option("--n-sd", n_sd, "grid half-width in estimated SDs")->capture_default_str();
    sub->add_option("--fix", fixed, "parameters held at the MLE (conditional profile)")
        ->check(CLI::IsMember({"phi", "omega", "gamma"}));
    sub->add_option("--grid", grid, "explicit grid lo:hi:n (parameter units; omega in rad/s)");
  }

  std::vector<double> explicit_grid() const {
    if (grid.empty()) return {};
    const auto last = grid.rfind(':');
    ls::require(last != std::string::npos, ls::Errc::invalid_config, "--grid must look like lo:hi:n");
    const auto [lo, hi] = parse_interval(grid.substr(0, last));
    int n = 0;
    try {
      n = std::stoi(grid.substr(last + 1));
    } catch (const std::logic_error&) {
      throw ls::Error(ls::Errc::invalid_config, "bad point count in --grid");
    }
    ls::require(n >= 3, ls::Errc::invalid_config, "--grid needs at least 3 points");
    std::vector<double> g(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
    return g;
  }

  int run(const CLI::App& sub, const Log& log, int threads) const {
    const auto l = flags.load();
    const ls::WhittleObjective obj(l.est, l.window, l.options);
    const auto fit = ls::mle_fit(obj, l.init);
    json j = ls::to_json(fit);
    std::vector<double> model;
    j["diagnostics"] = fit_diagnostics(obj, fit, &model);
    j["source"] = l.source;
    j["seed"] = l.source.value("seed", json(nullptr));
    j["config"] = effective_config(sub);
    if (!fit.converged) {
      ls::io::write_json(flags.output, j);
      std::cerr << "error: fit did not converge after " << fit.n_evals << " evaluations\n";
      return kExitNoConvergence;
    }
    ls::ProfileOptions po;
    po.level = level;
    po.n_points = points;
    po.n_sd = n_sd;
    po.fixed = fixed;
    po.grid = explicit_grid();
    po.threads = threads;
    log("profiling %s", param.c_str());
    const auto scan = ls::profile_scan(obj, fit, param, po);
    j["profile"] = ls::to_json(scan);
    ls::io::write_json(flags.output, j);
    if (!flags.tsv.empty()) {
      std::vector<double> ph, om, ga;
      for (const auto& t : scan.trajectory) {
        ph.push_back(t.phi);
        om.push_back(t.omega);
        ga.push_back(t.gamma);
      }
      ls::io::write_tsv(flags.tsv, {param, "nll", "density", "phi", "omega", "gamma"},
                        {scan.grid, scan.nll, scan.density, ph, om, ga});
    }
    log("%s = %.6g +- %.3g, %.0f%% interval [%.6g, %.6g]%s", param.c_str(), scan.mean, scan.sd,
        100.0 * level, scan.interval.lo, scan.interval.hi,
        scan.edge_warning ? " (edge warning)" : "");
    if (scan.edge_warning)
      std::cerr << "warning: profile density not contained in the grid (edge mass " << scan.edge_mass
                << ")\n";
    return scan.converged ? kExitOk : kExitNoConvergence;
  }
};

// ---------------------------------------------------------------- ensemble

struct EnsembleCmd {
  OmegaFlags omega;
  double gamma = 0.0;
  double phi = 0.0;
  double f0 = 3e6;
  double temperature = 300.0;
  double mass = 1e-18;
  double rate = 10e6;
  double duration = 1.0;
  double dt = 1e-9;
  std::uint64_t seed = 0;
  std::size_t runs = 40;
  std::size_t segment = 65536;
  std::string taper = "hann";
  std::vector<std::string> windows;
  std::size_t exclude_carrier = 3;
  std::vector<std::string> profile_params = {"phi"};
  bool no_profile = false;
  double level = 0.68;
  std::string engine = "correlation";
  std::string output;

  void add(CLI::App* sub) {
    omega.add(sub, "oscillator");
    sub->add_option("--gamma", gamma, "damping rate, 1/s")->required();
    sub->add_option("--phi", phi, "RMS phase-modulation depth, rad")->required();
    sub->add_option("--f0", f0, "carrier frequency, Hz")->capture_default_str();
    sub->add_option("--temperature", temperature, "bath temperature, K")->capture_default_str();
    sub->add_option("--mass", mass, "particle mass, kg")->capture_default_str();
    sub->add_option("--rate", rate, "sample rate, S/s")->capture_default_str();
    sub->add_option("--duration", duration, "record length per run, s")->capture_default_str();
    sub->add_option("--dt", dt, "integration step, s")->capture_default_str();
    sub->add_option("--seed", seed, "base seed (run i uses seed + i)")->capture_default_str();
    sub->add_option("--runs", runs, "ensemble size")->capture_default_str();
    sub->add_option("--segment", segment, "Bartlett segment length")->capture_default_str();
    sub->add_option("--taper", taper, "window function: hann or rect")
        ->check(CLI::IsMember({"hann", "rect"}))
        ->capture_default_str();
    sub->add_option("--window", windows, "fit interval lo:hi in Hz (repeatable)");
    sub->add_option("--exclude-carrier", exclude_carrier, "bins excluded either side of the carrier")
        ->capture_default_str();
    sub->add_option("--profile-params", profile_params, "parameters to profile")
        ->check(CLI::IsMember({"phi", "omega", "gamma"}))
        ->capture_default_str();
    sub->add_flag("--no-profile", no_profile, "skip profile scans (no coverage)");
    sub->add_option("--level", level, "credible level")->capture_default_str();
    sub->add_option("--engine", engine, "model engine")
        ->check(CLI::IsMember({"correlation", "series"}))
        ->capture_default_str();
    sub->add_option("-o,--output", output, "report JSON")->required();
  }

  int run(const CLI::App& sub, const Log& log, int threads) const {
    ls::require(omega.value().has_value(), ls::Errc::invalid_config, "--omega or --omega-hz is required");
    ls::EnsembleConfig c;
    c.oscillator = {*omega.value(), gamma, temperature, mass};
    c.signal.carrier_freq = f0;
    c.signal.phi = phi;
    c.simulation.dt = dt;
    c.simulation.sample_rate = rate;
    c.simulation.duration = duration;
    c.simulation.seed = seed;
    c.n_runs = runs;
    c.segment_length = segment;
    c.window.kind = ls::window_kind_from_string(taper);
    c.fit_window.carrier_freq = f0;
    c.fit_window.carrier_exclusion_bins = exclude_carrier;
    for (const auto& w : windows) c.fit_window.intervals.push_back(parse_interval(w));
    c.fit.engine = ls::model_engine_from_string(engine);
    c.profile = !no_profile;
    c.profile_params = profile_params;
    c.profile_options.level = level;
    c.threads = threads;
    c.progress = [&log](std::size_t done, std::size_t total) { log("run %zu/%zu", done, total); };
    const auto report = ls::ensemble_validate(c);
    json j = ls::to_json(report);
    j["seed"] = seed;
    j["config"] = effective_config(sub);
    ls::io::write_json(output, j);
    for (const auto& p : report.params) {
      if (p.profiled)
        log("%-5s mean %.6g sd %.3g bias/se %.2f sd ratio %.2f coverage %.2f [%.2f, %.2f]",
            p.name.c_str(), p.mean, p.sd, p.bias_se, p.sd_ratio, p.coverage, p.coverage_lo,
            p.coverage_hi);
      else
        log("%-5s mean %.6g sd %.3g bias/se %.2f", p.name.c_str(), p.mean, p.sd, p.bias_se);
    }
    if (report.failed) {
      std::cerr << "error: " << runs - report.n_converged << " of " << runs << " runs did not converge\n";
      return kExitNoConvergence;
    }
    return kExitOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"levspec: simulate, estimate and fit phase-modulated oscillator spectra"};
  app.require_subcommand(1);
  app.fallthrough();
  int threads_opt = 0;
  Log log;
  app.add_option("--threads", threads_opt, "worker threads (default: all cores)")
      ->envname("LEVSPEC_THREADS")
      ->check(CLI::NonNegativeNumber);
  app.add_flag("-q,--quiet", log.quiet, "no progress output");

  SimulateCmd simulate;
  PsdCmd psd;
  TheoryCmd theory;
  FitCmd fit;
  ProfileCmd profile;
  EnsembleCmd ensemble;
  auto* s_sim = app.add_subcommand("simulate", "simulate a heterodyne signal record");
  auto* s_psd = app.add_subcommand("psd", "Bartlett spectrum of a time series");
  auto* s_th = app.add_subcommand("theory", "theoretical spectrum on a grid");
  auto* s_fit = app.add_subcommand("fit", "maximum-likelihood fit of a spectrum");
  auto* s_prof = app.add_subcommand("profile", "profile-likelihood scan of one parameter");
  auto* s_ens = app.add_subcommand("ensemble", "simulate-and-fit ensemble with coverage report");
  app.config_formatter(std::make_shared<JsonConfig>(&app));
  app.set_config("--config", "", "JSON file whose keys mirror the subcommand's long flags");
  simulate.add(s_sim);
  psd.add(s_psd);
  theory.add(s_th);
  fit.add(s_fit);
  profile.add(s_prof);
  ensemble.add(s_ens);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    const int threads = threads_from(threads_opt);
    if (s_sim->parsed()) return simulate.run(*s_sim, log);
    if (s_psd->parsed()) return psd.run(*s_psd, log);
    if (s_th->parsed()) return theory.run(*s_th, log);
    if (s_fit->parsed()) return fit.run(*s_fit, log);
    if (s_prof->parsed()) return profile.run(*s_prof, log, threads);
    if (s_ens->parsed()) return ensemble.run(*s_ens, log, threads);
  } catch (const ls::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ls::is_validation(e.code()) ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
