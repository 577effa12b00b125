#include "levspec/sde_sim.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "levspec/error.hpp"
#include "levspec/rng.hpp"

namespace levspec {

namespace {

bool finite_positive(double x) { return std::isfinite(x) && x > 0.0; }

// One semi-implicit Euler-Maruyama step on x = (z, v),
//   v' = (1 - gamma dt) v - omega^2 dt z + kick xi,   z' = z + dt v',
// is x' = A x + b xi. An output interval of k steps is therefore
//   x_{i+1} = A^k x_i + sum_j A^(k-1-j) b xi_j,
// which consumes every per-step increment but keeps the state recursion
// off the critical path of the noise sums.
struct IntervalPropagator {
  std::array<double, 4> power{};   // A^k, row-major
  std::vector<double> gain_z;      // gain_z[j] = (A^(k-1-j) b)_z
  std::vector<double> gain_v;

  IntervalPropagator(double stiffness_dt, double damp, double dt, double kick, std::size_t k)
      : gain_z(k), gain_v(k) {
    const std::array<double, 4> a = {1.0 - dt * stiffness_dt, dt * damp, -stiffness_dt, damp};
    double gz = kick * dt;
    double gv = kick;
    power = {1.0, 0.0, 0.0, 1.0};
    for (std::size_t m = 0; m < k; ++m) {
      gain_z[k - 1 - m] = gz;
      gain_v[k - 1 - m] = gv;
      const double nz = a[0] * gz + a[1] * gv;
      gv = a[2] * gz + a[3] * gv;
      gz = nz;
      power = {a[0] * power[0] + a[1] * power[2], a[0] * power[1] + a[1] * power[3],
               a[2] * power[0] + a[3] * power[2], a[2] * power[1] + a[3] * power[3]};
    }
  }
};

}  // namespace

void OscillatorParams::validate() const {
  require(finite_positive(omega), Errc::invalid_config, "omega must be > 0");
  require(finite_positive(gamma), Errc::invalid_config, "gamma must be > 0");
  require(std::isfinite(temperature) && temperature >= 0.0, Errc::invalid_config,
          "temperature must be >= 0");
  require(finite_positive(mass), Errc::invalid_config, "mass must be > 0");
}

double OscillatorParams::position_variance() const {
  return kBoltzmann * temperature / (mass * omega * omega);
}

double OscillatorParams::diffusion() const { return 2.0 * kBoltzmann * temperature * gamma / mass; }

void SignalParams::validate() const {
  require(finite_positive(carrier_freq), Errc::invalid_config, "carrier frequency must be > 0");
  require(finite_positive(amplitude), Errc::invalid_config, "amplitude must be > 0");
  require(std::isfinite(phase_offset), Errc::invalid_config, "phase offset must be finite");
  require(std::isfinite(noise_floor) && noise_floor >= 0.0, Errc::invalid_config,
          "noise floor must be >= 0");
  require(kappa.has_value() != phi.has_value(), Errc::invalid_config,
          "exactly one of kappa or phi must be given");
  if (kappa) require(std::isfinite(*kappa), Errc::invalid_config, "kappa must be finite");
  if (phi) require(std::isfinite(*phi) && *phi >= 0.0, Errc::invalid_config, "phi must be >= 0");
}

double SignalParams::sensitivity(const OscillatorParams& osc) const {
  if (kappa) return *kappa;
  const double var = osc.position_variance();
  if (*phi == 0.0) return 0.0;
  require(var > 0.0, Errc::invalid_config,
          "phi > 0 needs a non-zero thermal variance to fix kappa");
  return *phi / std::sqrt(var);
}

double SignalParams::modulation_depth(const OscillatorParams& osc) const {
  if (phi) return *phi;
  return std::abs(*kappa) * std::sqrt(osc.position_variance());
}

void SimulationConfig::validate() const {
  require(finite_positive(dt), Errc::invalid_config, "dt must be > 0");
  require(finite_positive(sample_rate), Errc::invalid_config, "sample rate must be > 0");
  require(finite_positive(duration), Errc::invalid_config, "duration must be > 0");
  const double ratio = 1.0 / (sample_rate * dt);
  require(ratio >= 1.0 - 1e-9, Errc::invalid_config, "sample_rate * dt must be <= 1");
  require(std::abs(ratio - std::round(ratio)) <= 1e-6 * ratio, Errc::invalid_config,
          "1 / (sample_rate * dt) must be an integer");
  require(duration * sample_rate >= 2.0 - 1e-9, Errc::invalid_config,
          "duration * sample_rate must be >= 2");
  if (rin_drift) {
    require(std::isfinite(rin_drift->width) && rin_drift->width >= 0.0 && rin_drift->width < 1.0,
            Errc::invalid_config, "rin width must be in [0, 1)");
  }
}

std::size_t SimulationConfig::decimation() const {
  return static_cast<std::size_t>(std::llround(1.0 / (sample_rate * dt)));
}

std::size_t SimulationConfig::n_samples() const {
  return static_cast<std::size_t>(std::llround(duration * sample_rate));
}

void TimeSeries::validate() const {
  require(!samples.empty(), Errc::empty_input, "time series has no samples");
  require(finite_positive(sample_rate), Errc::invalid_config, "sample rate must be > 0");
  for (double x : samples) require(std::isfinite(x), Errc::invalid_config, "non-finite sample");
}

double carrier_cycles(double freq, double sample_rate, std::uint64_t n) {
  // freq / fs = hi + lo, and n hi = p + e exactly (fma), so nothing of size
  // n ulp(hi) survives into the fraction.
  const double hi = freq / sample_rate;
  const double lo = std::fma(-hi, sample_rate, freq) / sample_rate;
  const double x = static_cast<double>(n);
  const double p = hi * x;
  const double e = std::fma(hi, x, -p);
  const double c = std::fmod(p, 1.0) + (e + lo * x);
  return c - std::floor(c);
}

double intensity_drift(const SimulationConfig& config, std::size_t i) {
  if (!config.rin_drift || config.rin_drift->width == 0.0) return 0.0;
  const double width = config.rin_drift->width;
  switch (config.rin_drift->model) {
    case DriftModel::constant_per_run: {
      NormalStream draw(config.seed, Stream::intensity_drift);
      return width * draw.next();
    }
    case DriftModel::linear_ramp: {
      const std::size_t n = config.n_samples();
      if (n < 2) return 0.0;
      return width * (-1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1));
    }
  }
  return 0.0;
}

TimeSeries simulate_trajectory(const OscillatorParams& params, const SimulationConfig& config) {
  params.validate();
  config.validate();
  require(config.dt * params.omega <= kMaxStepPhase, Errc::unstable_step,
          "dt * omega = " + std::to_string(config.dt * params.omega) + " exceeds " +
              std::to_string(kMaxStepPhase));

  const std::size_t n = config.n_samples();
  const std::size_t k = config.decimation();
  const double dt = config.dt;
  const double kick = std::sqrt(params.diffusion() * dt);
  const double damp = 1.0 - params.gamma * dt;
  const bool constant_drift =
      !config.rin_drift || config.rin_drift->model == DriftModel::constant_per_run;
  const double r0 = intensity_drift(config, 0);
  if (config.rin_drift)
    require(1.0 + r0 > 0.0, Errc::invalid_config, "intensity drift drives stiffness negative");

  TimeSeries out;
  out.sample_rate = config.sample_rate;
  out.samples.resize(n);

  // Stationary start at the initial stiffness.
  const double kT_over_m = kBoltzmann * params.temperature / params.mass;
  double z = 0.0;
  double v = 0.0;
  if (kT_over_m > 0.0) {
    NormalStream init(config.seed, Stream::initial_state);
    z = std::sqrt(kT_over_m / (params.omega * params.omega * (1.0 + r0))) * init.next();
    v = std::sqrt(kT_over_m) * init.next();
  }

  NormalStream force(config.seed, Stream::thermal_force);
  std::vector<double> noise(k, 0.0);
  auto stiffness_dt = [&](double r) { return params.omega * params.omega * (1.0 + r) * dt; };
  IntervalPropagator prop(stiffness_dt(r0), damp, dt, kick, k);
  for (std::size_t i = 0; i < n; ++i) {
    out.samples[i] = z;
    if (!constant_drift) {
      const double r = intensity_drift(config, i);
      require(1.0 + r > 0.0, Errc::invalid_config, "intensity drift drives stiffness negative");
      prop = IntervalPropagator(stiffness_dt(r), damp, dt, kick, k);
    }
    double sz = 0.0;
    double sv = 0.0;
    if (kick > 0.0) {
      force.fill(noise);
      for (std::size_t j = 0; j < k; ++j) {
        sz += prop.gain_z[j] * noise[j];
        sv += prop.gain_v[j] * noise[j];
      }
    }
    const auto& p = prop.power;
    const double zn = p[0] * z + p[1] * v + sz;
    v = p[2] * z + p[3] * v + sv;
    z = zn;
  }

  out.metadata = {{"kind", "position"},
                  {"units", "m"},
                  {"oscillator", to_json(params)},
                  {"config", to_json(config)},
                  {"seed", config.seed}};
  return out;
}

TimeSeries synthesize_signal(const TimeSeries& z, const SignalParams& sig,
                             const OscillatorParams& osc, const SimulationConfig& config) {
  sig.validate();
  config.validate();
  require(!z.samples.empty(), Errc::empty_input, "position record is empty");
  const double fs = z.sample_rate;
  const double nyquist = 0.5 * fs;
  require(sig.carrier_freq < nyquist, Errc::aliasing, "carrier frequency must be below Nyquist");
  require(sig.carrier_freq + 10.0 * osc.omega / (2.0 * std::numbers::pi) <= nyquist,
          Errc::aliasing, "carrier + 10 * oscillator frequency exceeds Nyquist");

  const double kappa = sig.sensitivity(osc);
  const double noise_sd = std::sqrt(sig.noise_floor * fs);
  NormalStream noise(config.seed, Stream::detector_noise);
  const bool drift = config.rin_drift && config.rin_drift->width > 0.0;
  const double r_const = drift ? intensity_drift(config, 0) : 0.0;
  const bool ramp = drift && config.rin_drift->model == DriftModel::linear_ramp;

  TimeSeries out;
  out.sample_rate = fs;
  out.samples.resize(z.samples.size());
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < z.samples.size(); ++i) {
    const double cycles = carrier_cycles(sig.carrier_freq, fs, i);
    const double r = ramp ? intensity_drift(config, i) : r_const;
    double v = sig.amplitude * (1.0 + r) *
               std::sin(two_pi * cycles + sig.phase_offset + kappa * z.samples[i]);
    if (noise_sd > 0.0) v += noise_sd * noise.next();
    out.samples[i] = v;
  }

  out.metadata = {{"kind", "signal"},
                  {"units", "V"},
                  {"oscillator", to_json(osc)},
                  {"signal", to_json(sig)},
                  {"kappa", kappa},
                  {"phi", sig.modulation_depth(osc)},
                  {"config", to_json(config)},
                  {"seed", config.seed}};
  return out;
}

nlohmann::json to_json(const OscillatorParams& p) {
  return {{"omega", p.omega}, {"gamma", p.gamma}, {"temperature", p.temperature}, {"mass", p.mass}};
}

nlohmann::json to_json(const SignalParams& p) {
  nlohmann::json j = {{"carrier_freq", p.carrier_freq},
                      {"amplitude", p.amplitude},
                      {"phase_offset", p.phase_offset},
                      {"noise_floor", p.noise_floor}};
  j["kappa"] = p.kappa ? nlohmann::json(*p.kappa) : nlohmann::json(nullptr);
  j["phi"] = p.phi ? nlohmann::json(*p.phi) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const SimulationConfig& c) {
  nlohmann::json j = {{"dt", c.dt},
                      {"sample_rate", c.sample_rate},
                      {"duration", c.duration},
                      {"seed", c.seed}};
  if (c.rin_drift) {
    j["rin_drift"] = {{"width", c.rin_drift->width},
                      {"model", c.rin_drift->model == DriftModel::linear_ramp ? "linear-ramp"
                                                                              : "constant-per-run"}};
  } else {
    j["rin_drift"] = nullptr;
  }
  return j;
}

}  // namespace levspec
