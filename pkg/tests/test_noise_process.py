from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from partdiss.errors import ConfigError, HorizonError
from partdiss.noise_process import (CHUNK, CovarianceSpec, NoiseGrid, explicit, inverse_power,
                                    make_path, mix_seed, mode_id, scaled_identity, standard_normals,
                                    validate_noise_assumptions, wiener_shift)
from partdiss.reports import FAIL, INCONCLUSIVE, PASS
from partdiss.spectral_core import make_basis

B1 = make_basis(1, 64, 192)
B2 = make_basis(2, 8, 24)


def _path(basis=B1, seed=7, t_min=-8.0, t_max=8.0, h=2.0 ** -8):
    return make_path(NoiseGrid(h, t_min, t_max, seed), inverse_power(basis, 2.0), inverse_power(basis, 1.5, 2))


def test_standard_normals_match_fresh_generator():
    ref = np.random.Generator(np.random.Philox(key=12345, counter=[0, 3, 1, 7])).standard_normal(100)
    np.testing.assert_array_equal(standard_normals(12345, (3, 1, 7), 100), ref)
    # negative chunk indices wrap to unsigned 64-bit words
    ref = np.random.Generator(np.random.Philox(key=5, counter=np.array([0, 2 ** 64 - 2, 2, 1], dtype=np.uint64))).standard_normal(8)
    np.testing.assert_array_equal(standard_normals(5, (-2, 2, 1), 8), ref)


def test_mix_seed_distinct_and_stable():
    seeds = [mix_seed(2024, i) for i in range(1000)]
    assert len(set(seeds)) == 1000
    assert mix_seed(2024, 0) == mix_seed(2024, 0)
    assert all(0 <= s < 2 ** 64 for s in seeds)


def test_mode_id_is_injective_on_pairs():
    ids = {mode_id((a, b)) for a in range(1, 40) for b in range(1, 40)}
    assert len(ids) == 39 * 39
    assert mode_id((5,)) == 5


def test_increment_variance_matches_intensity():
    path = _path(t_min=-200.0, t_max=200.0)
    inc = path.increments(1, -path.steps(200.0), path.steps(200.0))
    delta = path.cov1.intensities
    var = inc.var(axis=0)
    n = inc.shape[0]
    rel = np.abs(var / (delta * path.h_noise) - 1.0)
    assert np.all(rel[:8] < 4 * np.sqrt(2.0 / n))


def test_increments_independent_of_resolution():
    """A mode's stream does not depend on N: low modes agree across truncations."""
    small = make_basis(1, 16, 48)
    a = _path(B1).increments(1, -100, 100)
    b = make_path(NoiseGrid(2.0 ** -8, -8.0, 8.0, 7), inverse_power(small, 2.0),
                  inverse_power(small, 1.5, 2)).increments(1, -100, 100)
    np.testing.assert_array_equal(a[:, :16], b)


def test_increments_across_chunk_boundaries():
    path = _path()
    whole = path.increments(2, -CHUNK - 5, CHUNK + 5)
    parts = np.concatenate([path.increments(2, -CHUNK - 5, 0), path.increments(2, 0, CHUNK + 5)])
    np.testing.assert_array_equal(whole, parts)


def test_channels_are_independent_streams():
    path = _path()
    a = path.increments(1, 0, 50) / np.sqrt(path.cov1.intensities * path.h_noise)
    b = path.increments(2, 0, 50) / np.sqrt(path.cov2.intensities * path.h_noise)
    assert not np.allclose(a, b)


def test_omega_is_two_sided_and_zero_at_origin():
    path = _path()
    assert np.all(path.omega(1, 0.0) == 0)
    w1 = path.omega(1, 1.0)
    np.testing.assert_allclose(w1, path.increments(1, 0, 256).sum(axis=0))
    wm = path.omega(1, -1.0)
    np.testing.assert_allclose(wm, -path.increments(1, -256, 0).sum(axis=0))


@settings(max_examples=25, deadline=None)
@given(st.integers(-1000, 1000), st.integers(-1000, 1000), st.integers(-200, 200))
def test_shift_group_law_bit_exact(a, b, j):
    path = _path()
    h = path.h_noise
    g = path.grid
    assume(g.i_min <= a <= g.i_max and g.i_min <= a + b <= g.i_max)
    assume(g.i_min <= j + a + b and j + a + b + 3 <= g.i_max)
    ab = wiener_shift(wiener_shift(path, a * h), b * h)
    direct = wiener_shift(path, (a + b) * h)
    for ch in (1, 2):
        np.testing.assert_array_equal(ab.increments(ch, j, j + 3), direct.increments(ch, j, j + 3))
    np.testing.assert_array_equal(ab.increments(1, j, j + 3), path.increments(1, j + a + b, j + a + b + 3))


def test_shift_identity_and_horizon():
    path = _path()
    assert wiener_shift(path, 0.0) is path
    with pytest.raises(HorizonError):
        wiener_shift(path, 9.0)
    with pytest.raises(HorizonError):
        path.increments(1, path.steps(8.0), path.steps(8.0) + 1)
    with pytest.raises(ConfigError):
        wiener_shift(path, 0.001)


def test_noise_grid_validation():
    with pytest.raises(ConfigError):
        NoiseGrid(0.0, -1.0, 1.0, 0)
    with pytest.raises(ConfigError):
        NoiseGrid(0.1, 1.0, 2.0, 0)
    with pytest.raises(ConfigError):
        NoiseGrid(2.0 ** -8, -0.001, 1.0, 0)


def test_single_increment_lookup():
    path = _path(B2)
    blk = path.increments(1, 10, 11)[0]
    assert path.increment(1, (2, 3), 10) == blk[1, 2]
    with pytest.raises(IndexError):
        path.increment(1, (0, 1), 10)


def test_explicit_covariance_length_checked():
    with pytest.raises(ConfigError):
        explicit(B1, np.ones(10))
    with pytest.raises(ConfigError):
        CovarianceSpec.from_dict({"kind": "inverse_power", "gamma": 2, "beta": 1}, B1, 1)
    cov = CovarianceSpec.from_dict({"kind": "explicit", "values": list(np.ones(64))}, B1, 1)
    assert cov.trace == pytest.approx(64.0)
    assert CovarianceSpec.from_dict(cov.to_dict(), B1, 1).to_dict() == cov.to_dict()


def _nv(gamma, alpha, gamma2=None, basis=B1):
    g2 = gamma if gamma2 is None else gamma2
    return validate_noise_assumptions(inverse_power(basis, gamma), inverse_power(basis, g2, 2), alpha)


def test_noise_validator_thresholds():
    assert _nv(4.0, 0.1).verdict == PASS
    rep = _nv(0.0, 0.1)
    assert rep.verdict == FAIL
    assert set(rep.failed()) == {"trace_class_q2", "noise_regularity"}
    rep = _nv(2.0, 0.4)
    assert rep.failed() == ["noise_regularity"]
    assert any("discrepancy" in n for n in rep.notes)


def test_noise_validator_threshold_edge_2d():
    # in 2-d the regularity series needs 2(2a+1-gamma) < -2, i.e. gamma > 2a+2
    assert _nv(2.6, 0.25, 2.0, B2)["noise_regularity"].verdict == PASS
    assert _nv(2.4, 0.25, 2.0, B2)["noise_regularity"].verdict == FAIL
    # Q2 with gamma = 1 sums |k|^-2 over Z^2: divergent
    assert _nv(3.0, 0.25, 1.0, B2)["trace_class_q2"].verdict == FAIL


def test_scaled_identity_fails_trace_class():
    rep = validate_noise_assumptions(inverse_power(B1, 4.0), scaled_identity(B1, 0.5, 2), 0.2)
    assert rep["trace_class_q2"].verdict == FAIL


def test_explicit_lists_use_fitted_tail():
    k = np.arange(1, 65, dtype=float)
    good = validate_noise_assumptions(explicit(B1, k ** -8.0), explicit(B1, k ** -4.0, 2), 0.2)
    assert good.verdict == PASS
    bad = validate_noise_assumptions(explicit(B1, k ** -2.0), explicit(B1, k ** -4.0, 2), 0.4)
    assert bad["noise_regularity"].verdict == FAIL
    # exponent right at the threshold cannot be decided from a finite list
    edge = validate_noise_assumptions(explicit(B1, k ** -4.0), explicit(B1, k ** -1.0, 2), 0.25)
    assert edge["trace_class_q2"].verdict in (FAIL, INCONCLUSIVE)


def test_validator_argument_checks():
    with pytest.raises(ValueError):
        _nv(4.0, 0.5)
    with pytest.raises(ValueError):
        validate_noise_assumptions(inverse_power(B1, 4.0), inverse_power(B1, 4.0, 2), 0.2, tail_modes=10)


def test_truncated_field_norm_stable_under_doubling_modes():
    big = make_basis(1, 128, 384)
    a = _path(B1, t_min=-2.0, t_max=2.0)
    b = make_path(NoiseGrid(2.0 ** -8, -2.0, 2.0, 7), inverse_power(big, 2.0), inverse_power(big, 1.5, 2))
    na = np.sqrt(np.sum(a.omega(1, 1.0) ** 2))
    nb = np.sqrt(np.sum(b.omega(1, 1.0) ** 2))
    assert abs(nb / na - 1) < 0.05
