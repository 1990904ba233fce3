from __future__ import annotations

import numpy as np
import pytest

from partdiss.attractor_lab import (PullbackConfig, absorbing_radius, ball_samples, diam_monotone, h1_diagnostics,
                                    h1_pullback, parallel_map, pullback_run, splitting_run)
from partdiss.errors import ConfigError, HorizonError
from partdiss.integrator import SolverConfig, integrate_pathwise
from partdiss.models import fhn, fit_model
from partdiss.noise_process import NoiseGrid, inverse_power, make_path
from partdiss.spectral_core import GridField, SpectralField, grid_l2_array, l2_array, make_basis

H = 2.0 ** -8
B = make_basis(1, 16, 48)
MODEL = fit_model(fhn(1.0, 0.5, 0.5, 1.0), 10.0)


def _path(seed=4, t_min=-40.0, t_max=20.0):
    return make_path(NoiseGrid(H, t_min, t_max, seed), inverse_power(B, 4.0), inverse_power(B, 2.0, 2))


def _cfg(seed=4, times=(0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0), **kw):
    return PullbackConfig(_path(seed), MODEL, SolverConfig(2.0 ** -6), list(times), **kw)


def test_ball_samples_on_sphere_and_deterministic():
    u1, u2 = ball_samples(B, 3.0, 5, seed=1)
    r = np.sqrt(l2_array(B, u1) ** 2 + grid_l2_array(B, u2) ** 2)
    np.testing.assert_allclose(r, 3.0, rtol=1e-13)
    v1, _ = ball_samples(B, 3.0, 5, seed=1)
    np.testing.assert_array_equal(u1, v1)


def test_pullback_contracts_and_is_monotone():
    res = pullback_run(_cfg(), threshold=1e-6)
    assert res.monotone
    assert res.diam[0] > 1.0
    assert res.converged, res.diam
    rows = res.rows()
    assert len(rows) == len(res.times) * 8 * 8
    assert all(r[3] == 0.0 for r in rows if r[1] == r[2])


def test_pullback_threads_do_not_change_results():
    a = pullback_run(_cfg(times=(1.0, 2.0, 4.0)), threads=1)
    b = pullback_run(_cfg(times=(1.0, 2.0, 4.0)), threads=3)
    for x, y in zip(a.distances, b.distances):
        np.testing.assert_array_equal(x, y)


def test_two_seeds_give_distinct_fibers():
    a = pullback_run(_cfg(seed=1))
    b = pullback_run(_cfg(seed=2))
    ua, ub = a.endpoints[-1], b.endpoints[-1]
    gap = np.sqrt(l2_array(B, ua[0][0] - ub[0][0]) ** 2 + grid_l2_array(B, ua[1][0] - ub[1][0]) ** 2)
    assert gap > 1e3 * max(a.final_diam, b.final_diam, 1e-12)


def test_monotone_band_and_floor():
    assert diam_monotone([1.0, 1.04, 0.5], 1.0)
    assert not diam_monotone([1.0, 1.2], 1.0)
    assert diam_monotone([0.0, 5e-14], 10.0)


def test_pullback_config_validation():
    with pytest.raises(ConfigError):
        _cfg(times=(2.0, 1.0))
    with pytest.raises(HorizonError):
        _cfg(times=(1.0, 80.0))
    with pytest.raises(ConfigError):
        _cfg(count=1)


def test_explicit_initial_states_are_used():
    u1, u2 = ball_samples(B, 2.0, 3, seed=9)
    cfg = _cfg(times=(0.0,), states=(u1, u2))
    res = pullback_run(cfg)
    np.testing.assert_array_equal(res.endpoints[0][0], u1)


def test_absorbing_radius_consistent():
    cfg = PullbackConfig(_path(), MODEL, SolverConfig(2.0 ** -6, "lie_implicit"), [10.0])
    res = absorbing_radius(cfg, [1.0, 10.0, 100.0], 10.0, saturation=True)
    assert res.verdict == "ABSORBING-CONSISTENT", res.profile
    assert len(res.rows()) == 6
    with pytest.raises(HorizonError):
        absorbing_radius(cfg, [1.0], 30.0)
    with pytest.raises(ConfigError):
        absorbing_radius(cfg, [10.0, 1.0], 10.0)


def test_splitting_identity_and_decay():
    u1, u2 = ball_samples(B, 2.0, 1, seed=0)
    u0 = (SpectralField(B, u1[0]), GridField(B, u2[0]))
    res = splitting_run(u0, _path(), 0.0, 4.0, MODEL, SolverConfig(H, record_every=8))
    assert res.identity_ok and res.decay_ok
    assert res.norm_v2_1_h1[0] == 0.0
    # constant sigma: the closed-form part meets the bound with equality
    np.testing.assert_allclose(res.norm_v2_2, res.bound, rtol=1e-12)
    with pytest.raises(ConfigError):
        splitting_run(u0, _path(), 0.0, 1.0, MODEL, SolverConfig(H, "semi_implicit_euler"))


def test_h1_pullback_bounded():
    cfg = _cfg(times=(4.0, 8.0, 16.0, 32.0))
    rep = h1_pullback(cfg, transient=4.0)
    assert rep.verdict == "BOUNDED", rep.change
    with pytest.raises(ConfigError):
        h1_pullback(cfg, transient=32.0)


def test_h1_forward_diagnostics_fields():
    u1, u2 = ball_samples(B, 1.0, 1, seed=0)
    rec = integrate_pathwise((SpectralField(B, u1[0]), GridField(B, u2[0])), _path(), 0.0, 8.0, MODEL,
                             SolverConfig(2.0 ** -6, record_every=4, snapshots=True), split=True)
    rep = h1_diagnostics(rec, transient=2.0)
    assert rep.rho1 >= rep.rho1_half > 0
    assert rep.verdict in ("BOUNDED", "NOT-STABLE")
    assert rep.window_lp.shape == rep.window_starts.shape
    with pytest.raises(ValueError):
        h1_diagnostics(integrate_pathwise((SpectralField(B, u1[0]), GridField(B, u2[0])), _path(), 0.0, 1.0,
                                          MODEL, SolverConfig(2.0 ** -6)), 0.5)


def test_parallel_map_keeps_order():
    assert parallel_map(lambda x: x * x, list(range(20)), 4) == [x * x for x in range(20)]
