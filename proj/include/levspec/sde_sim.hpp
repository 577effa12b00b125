#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

namespace levspec {

inline constexpr double kBoltzmann = 1.380649e-23;  // J/K

// Thermal harmonic oscillator z'' + gamma z' + omega^2 z = w(t).
struct OscillatorParams {
  double omega = 0.0;        // rad/s
  double gamma = 0.0;        // 1/s
  double temperature = 0.0;  // K
  double mass = 0.0;         // kg

  void validate() const;
  // Equipartition <z^2> = kB T / (M omega^2).
  double position_variance() const;
  // Velocity noise intensity 2 kB T gamma / M (per unit time).
  double diffusion() const;
};

// Heterodyne detector signal v(t) = v0 (1 + r(t)) sin(2 pi f0 t + theta0 + kappa z(t)) + noise.
// Exactly one of `kappa` (rad/m) or `phi` (RMS phase depth, rad) is set.
struct SignalParams {
  double carrier_freq = 0.0;  // Hz
  double amplitude = 1.0;
  double phase_offset = 0.0;  // rad
  std::optional<double> kappa;
  std::optional<double> phi;
  double noise_floor = 0.0;  // two-sided PSD of white detector noise, 1/Hz

  void validate() const;
  double sensitivity(const OscillatorParams& osc) const;
  double modulation_depth(const OscillatorParams& osc) const;
};

enum class DriftModel { constant_per_run, linear_ramp };

// Slow relative intensity drift r(t): scales the signal amplitude by (1 + r)
// and the trap stiffness omega^2 by (1 + r).
struct RinDrift {
  double width = 0.0;  // R
  DriftModel model = DriftModel::constant_per_run;
};

struct SimulationConfig {
  double dt = 1e-9;            // s
  double sample_rate = 10e6;   // S/s
  double duration = 1.0;       // s
  std::uint64_t seed = 0;
  std::optional<RinDrift> rin_drift;

  void validate() const;
  std::size_t decimation() const;
  std::size_t n_samples() const;
};

struct TimeSeries {
  double sample_rate = 0.0;
  std::vector<double> samples;
  nlohmann::json metadata = nlohmann::json::object();

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
  void validate() const;
};

// Largest dt * omega accepted by the integrator.
inline constexpr double kMaxStepPhase = 0.1;

// frac(n freq / sample_rate), accurate to a few ulp of 1 for any n < 2^53.
double carrier_cycles(double freq, double sample_rate, std::uint64_t n);

// Relative intensity offset r at sample index i (0 when no drift is configured).
double intensity_drift(const SimulationConfig& config, std::size_t i);

// Position z(t) from a semi-implicit Euler-Maruyama integration at step dt,
// decimated to sample_rate. The initial state is drawn from the stationary
// distribution, so there is no burn-in.
TimeSeries simulate_trajectory(const OscillatorParams& params, const SimulationConfig& config);

// Detector voltage for a simulated position record. `osc` is needed when the
// modulation depth is given as phi (to convert to kappa).
TimeSeries synthesize_signal(const TimeSeries& z, const SignalParams& sig,
                             const OscillatorParams& osc, const SimulationConfig& config);

nlohmann::json to_json(const OscillatorParams& p);
nlohmann::json to_json(const SignalParams& p);
nlohmann::json to_json(const SimulationConfig& c);

}  // namespace levspec
