#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "levspec/sde_sim.hpp"

namespace levspec {

// Spectral shape parameters.
struct ModelParams {
  double phi = 0.0;    // RMS phase-modulation depth, rad
  double omega = 0.0;  // rad/s
  double gamma = 0.0;  // 1/s

  void validate() const;
};

// Uniform grid of n (odd) points centred on f0. Computation is done at
// baseband, offsets (i - (n-1)/2) df; f0 only shifts the reported frequencies.
// A periodic grid represents one period n df of the aliased (sampled-process)
// spectrum; a linear grid is a window onto the continuous spectrum.
struct FrequencyGrid {
  double f0 = 0.0;  // Hz
  double df = 0.0;  // Hz
  std::size_t n = 0;
  bool periodic = true;

  static FrequencyGrid centered(double f0, double df, double half_width, bool periodic = true);

  std::size_t center() const { return (n - 1) / 2; }
  double half_width() const { return static_cast<double>(center()) * df; }
  double offset(std::size_t i) const {
    return (static_cast<double>(i) - static_cast<double>(center())) * df;
  }
  double freq(std::size_t i) const { return f0 + offset(i); }
  void validate() const;
};

// Normalized spectrum: carrier_weight (the n = 0 delta, never put on the grid)
// plus the continuous density integrate to 1. The physical one-carrier PSD is
// amplitude^2 / 2 times this.
struct TheorySpectrum {
  FrequencyGrid grid;
  ModelParams params;
  double amplitude = 1.0;
  std::vector<double> density;  // 1/Hz
  double carrier_weight = 0.0;
  int truncation_order = 0;
  double truncation_bound = 0.0;
  std::string method;

  double continuous_mass() const;
};

// Position PSD (2 kB T / M) gamma / ((w^2 - omega^2)^2 + gamma^2 w^2).
double szz(const OscillatorParams& p, double w);
// Same shape with the prefactor 2 kB T / M replaced by `prefactor`.
double szz(double omega, double gamma, double w, double prefactor = 1.0);

// Mass of the normalized position spectrum outside |f| <= half_width.
double sigma_zz_tail_mass(double omega, double gamma, double half_width);

// Normalized position spectrum S_zz(2 pi f) / <z^2> = 2 gamma omega^2 / D(2 pi f),
// unit integral over f. Periodic grids get the exact image sum over periods.
// Throws insufficient_span when more than 1e-4 of the mass lies beyond the grid.
std::vector<double> sigma_zz(double omega, double gamma, const FrequencyGrid& grid);

// Normalized phase correlation R_phiphi(t) / phi^2 of the oscillator,
// closed form for under-, critically and over-damped cases.
double phase_correlation(double omega, double gamma, double t);
// phase_correlation at t = m dt, m = 0 .. count-1, by complex recurrence
// re-anchored to the closed form every 256 steps.
std::vector<double> phase_correlation_series(double omega, double gamma, double dt,
                                             std::size_t count);

// R_phiphi on the time grid conjugate to `grid`: values[m] at lag m dt,
// dt = 1 / (n df), m = 0 .. n-1 (upper half are negative lags, periodic).
struct CorrelationSeries {
  double dt = 0.0;
  std::vector<double> values;
};
CorrelationSeries correlation_rphiphi(double phi, double omega, double gamma,
                                      const FrequencyGrid& grid);

// Fourier transform of v0^2 exp(R_phiphi(t) - phi^2). Requires df <= gamma / (20 pi).
TheorySpectrum spectrum_from_correlation(const ModelParams& p, double v0, const FrequencyGrid& grid);

// e^{-phi^2} sum_n phi^{2n}/n! sigma_zz^{(*n)}, truncated when the Poisson tail
// drops below tol. Linear grids convolve with 2x zero padding and crop each
// order (grid_span error if the series would run off the grid); periodic grids
// convolve circularly.
TheorySpectrum middleton_series(const ModelParams& p, double v0, const FrequencyGrid& grid,
                                double tol = 1e-8);

// Poisson weights e^{-x} x^n / n!, n = 0 .. n_max, and the tail sum beyond n_max.
std::vector<double> poisson_weights(double x, int n_max);
double poisson_tail(double x, int n_max);

// e^{-x} I_n(x) by the ascending series (x <= 20), n = 0 .. n_max.
std::vector<double> scaled_bessel_i(double x, int n_max);

// Narrow-band harmonic masses e^{-phi^2} [I_0, 2 I_1, ..., 2 I_n](phi^2).
std::vector<double> narrowband_weights(double phi, int n_max);

// Purely harmonic sideband powers J_n(phi0)^2, n = 0 .. n_max (one side).
// For equal variance with a Gaussian phase of RMS phi use phi0 = sqrt(2) phi.
std::vector<double> harmonic_bessel_weights(double phi0, int n_max);

// Gauss-Hermite rule for weight exp(-x^2) (Golub-Welsch).
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
};
GaussHermite gauss_hermite(int order);

using SpectrumEvaluator = std::function<TheorySpectrum(const ModelParams&)>;

// E_r[(1 + r) S(phi / sqrt(1+r), omega sqrt(1+r), gamma)], r ~ N(0, R^2), by
// Gauss-Hermite quadrature. R = 0 returns S(p) unchanged.
TheorySpectrum rin_broadened(const SpectrumEvaluator& s, const ModelParams& p, double rin_width,
                             int quad_order = 61);

// The same average for any vector-valued evaluator of r.
std::vector<double> rin_average(double rin_width, int quad_order,
                                const std::function<std::vector<double>(double r)>& f);

// Parameters seen at intensity offset r.
ModelParams rin_shifted(const ModelParams& p, double r);

nlohmann::json to_json(const ModelParams& p);
nlohmann::json to_json(const FrequencyGrid& g);
nlohmann::json to_json(const TheorySpectrum& s);
ModelParams model_params_from_json(const nlohmann::json& j);

}  // namespace levspec
