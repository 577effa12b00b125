import math

import numpy as np
import pytest

import levspec


OMEGA = 2 * math.pi * 1e5


def test_theory_normalization():
    p = levspec.ModelParams(phi=0.5, omega=OMEGA, gamma=2e4)
    s = levspec.theory_spectrum(p, df=2e4 / (20 * math.pi), half_width=3e6)
    df = s["freq"][1] - s["freq"][0]
    assert s["carrier_weight"] == pytest.approx(math.exp(-0.25))
    assert s["carrier_weight"] + s["density"].sum() * df == pytest.approx(1.0, abs=1e-9)
    c = levspec.theory_spectrum(p, df=df, half_width=3e6, engine="correlation")
    assert np.allclose(c["density"], s["density"], rtol=1e-6, atol=0)


def test_narrowband_weights_sum():
    w = levspec.narrowband_weights(0.8, 40)
    assert sum(w) == pytest.approx(1.0)
    assert w[1] == pytest.approx(2 * math.exp(-0.64) * 0.3366660, rel=1e-5)


def test_simulate_is_deterministic():
    osc = levspec.OscillatorParams(omega=OMEGA, gamma=2e4)
    sig = levspec.SignalParams(3e6, phi=0.4)
    sim = levspec.SimulationConfig(duration=0.002, seed=3)
    a = levspec.simulate_signal(osc, sig, sim)
    b = levspec.simulate_signal(osc, sig, sim)
    assert a.shape == (20000,)
    assert np.array_equal(a, b)
    assert np.max(np.abs(a)) <= 1.0


def test_fit_and_profile():
    osc = levspec.OscillatorParams(omega=OMEGA, gamma=3e4)
    sig = levspec.SignalParams(3e6, phi=0.5)
    sim = levspec.SimulationConfig(duration=0.06, seed=11)
    v = levspec.simulate_signal(osc, sig, sim)
    est = levspec.bartlett(v, sim.sample_rate, 65536)
    assert est.dof == 18
    init = levspec.ModelParams(phi=0.4, omega=OMEGA * 1.02, gamma=2.5e4)
    fit = levspec.fit(est, init, 3e6)
    assert fit.converged
    assert fit.params.phi == pytest.approx(0.5, rel=0.1)
    assert fit.params.omega == pytest.approx(OMEGA, rel=0.01)
    prof = levspec.profile(est, fit, "phi", points=11)
    grid = np.asarray(prof["grid"])
    dens = np.asarray(prof["density"])
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, rel=1e-6)
    assert prof["interval"]["lo"] < fit.params.phi < prof["interval"]["hi"]


def test_errors_are_raised():
    with pytest.raises(levspec.LevspecError):
        levspec.simulate_trajectory(levspec.OscillatorParams(omega=OMEGA, gamma=-1.0),
                                    levspec.SimulationConfig(duration=0.001))
