"""Thermal-motion spectra of a phase-modulated oscillator: simulate, estimate, fit."""

from ._levspec import (
    FitResult,
    LevspecError,
    ModelParams,
    OscillatorParams,
    SignalParams,
    SimulationConfig,
    SpectrumEstimate,
    bartlett,
    binomial_band,
    fit,
    fold_one_sided,
    narrowband_weights,
    phase_correlation,
    profile,
    simulate_signal,
    simulate_trajectory,
    theory_spectrum,
)

__all__ = [
    "FitResult",
    "LevspecError",
    "ModelParams",
    "OscillatorParams",
    "SignalParams",
    "SimulationConfig",
    "SpectrumEstimate",
    "bartlett",
    "binomial_band",
    "fit",
    "fold_one_sided",
    "narrowband_weights",
    "phase_correlation",
    "profile",
    "simulate_signal",
    "simulate_trajectory",
    "theory_spectrum",
]
