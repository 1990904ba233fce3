from __future__ import annotations

import numpy as np
import pytest

from partdiss.errors import ConfigError, InfeasibleConstants
from partdiss.models import (GrowthConstants, allen_cahn_cq, build_model, custom_model, fhn, fit_model,
                             register_model, suggest_constants, validate_reaction_assumptions)
from partdiss.reports import FAIL, PASS
from partdiss.spectral_core import GridField, make_basis

HAND = dict(delta1=0.5, delta2=2.0, delta3=20.0, delta4=2.0, delta5=1.0, delta7=1.0, delta8=3.0,
            delta_lo=0.5, delta_hi=2.0)


def _linear_h():
    return custom_model("linear_h", lambda x, u: u, lambda x, u1, u2: u2 + 0 * u1, lambda x, u1: -0.5 * u1,
                        lambda *x: 1.0, p=4.0, p1=1.0, dh=lambda x, u: np.ones_like(u))


def _zero_sigma():
    m = fhn(1.0, 0.5, 0.5, 1.0)
    return custom_model("zero_sigma", m.h, m.f, m.g, lambda *x: 0.0, p=4.0, p1=1.0)


def _wrong_quintic():
    return custom_model("wrong_quintic", lambda x, u: -u - u ** 3 - u ** 5, lambda x, u1, u2: 0 * u2,
                        lambda x, u1: 0.1 * u1, lambda *x: 1.0, p=6.0, p1=1.0)


def test_fhn_and_allen_cahn_pass_with_fitted_constants():
    for m in (fhn(1.0, 0.5, 0.5, 1.0), allen_cahn_cq(1.0, -1.0, 1.0, 0.1)):
        fitted = fit_model(m, 10.0)
        rep = validate_reaction_assumptions(fitted, 10.0)
        assert rep.verdict == PASS, rep.to_dict()


def test_fhn_exponents_and_sigma():
    m = fhn(1.0, 0.5, 0.5, 2.5)
    assert m.constants.p == 4.0 and m.constants.p1 == 1.0
    b = make_basis(1, 8, 24)
    np.testing.assert_allclose(m.sigma_values(b), 2.5)
    with pytest.raises(ConfigError):
        fhn(1.0, 0.5, 0.5, 0.0)


def test_allen_cahn_parameter_checks():
    assert allen_cahn_cq(1.0, -1.0, 1.0, 0.1).constants.p == 6.0
    with pytest.raises(ConfigError):
        allen_cahn_cq(1.0, 1.0, 1.0, 0.1)
    with pytest.raises(ConfigError):
        allen_cahn_cq(1.0, -1.0, 1.0, 0.0)


def test_analytic_derivative_matches_finite_difference():
    u = np.linspace(-5, 5, 101)
    x = (np.full_like(u, 1.0),)
    for m in (fhn(1.0, 0.3, 0.5, 1.0), allen_cahn_cq(0.5, -1.0, 1.0, 0.1)):
        e = 1e-6
        fd = (m.h(x, u + e) - m.h(x, u - e)) / (2 * e)
        np.testing.assert_allclose(m.dh_du(x, u), fd, rtol=1e-6, atol=1e-5)


def test_fitted_constants_bracket_the_dissipation_ratio():
    m = fit_model(fhn(1.0, 0.5, 0.5, 1.0), 10.0)
    c = m.constants
    u = np.linspace(5, 10, 200)
    ratio = (m.h((np.ones_like(u),), u) * u) / u ** 4
    assert c.delta1 < ratio.min() and ratio.max() < c.delta2


def test_p_field_as_grid_field_interpolates():
    b = make_basis(1, 16, 48)
    pf = GridField.from_function(b, lambda x: 1.0 + np.sin(x) ** 2)
    m = fhn(pf, 0.5, 0.5, 1.0)
    x = np.array([0.7, 1.3])
    u = np.array([2.0, -1.0])
    # the interpolant is the sine series of 1 + sin^2 truncated at 16 modes
    ref = fhn(lambda x: 1.0 + np.sin(x) ** 2, 0.5, 0.5, 1.0).h((x,), u)
    np.testing.assert_allclose(m.h((x,), u), ref, atol=0.1)


def test_negative_control_linear_h_fails_dissipation():
    m = fit_model(_linear_h(), 10.0)
    rep = validate_reaction_assumptions(m, 10.0)
    assert "h_dissipation" in rep.failed()
    assert rep["h_dissipation"].worst["growth_slope"] == pytest.approx(2.0, abs=0.05)


def test_negative_control_zero_sigma():
    with pytest.raises(InfeasibleConstants) as exc:
        suggest_constants(_zero_sigma(), 10.0)
    assert exc.value.condition == "sigma_bounds"
    rep = validate_reaction_assumptions(_zero_sigma().with_constants(GrowthConstants(4.0, 1.0, **HAND)), 10.0)
    assert "sigma_bounds" in rep.failed()


def test_negative_control_wrong_sign_quintic():
    with pytest.raises(InfeasibleConstants) as exc:
        suggest_constants(_wrong_quintic(), 10.0)
    assert exc.value.condition == "h_dissipation"
    rep = validate_reaction_assumptions(_wrong_quintic().with_constants(GrowthConstants(6.0, 1.0, **HAND)), 10.0)
    assert "h_dissipation" in rep.failed()
    assert rep["h_dissipation"].worst["excess"] > 0


def test_constants_out_of_range_reported():
    bad = GrowthConstants(1.5, 1.0, **HAND)
    assert bad.problems()
    rep = validate_reaction_assumptions(fhn(1.0, 0.5, 0.5, 1.0).with_constants(bad), 10.0)
    assert rep["constants"].verdict == FAIL


def test_non_finite_model_values_raise():
    m = custom_model("nan", lambda x, u: np.sqrt(u), lambda x, u1, u2: u2, lambda x, u1: u1,
                     lambda *x: 1.0, p=4.0, p1=1.0)
    with np.errstate(invalid="ignore"), pytest.raises(ValueError):
        validate_reaction_assumptions(m.with_constants(GrowthConstants(4.0, 1.0, **HAND)), 10.0)


def test_two_dimensional_sampling():
    b = make_basis(2, 8, 24)
    m = fit_model(fhn(lambda x, y: 1.0 + 0 * x * y, 0.5, 0.5, 1.0), 10.0, basis=b)
    assert validate_reaction_assumptions(m, 10.0, basis=b).verdict == PASS


def test_registry():
    register_model("fhn_alias", lambda **kw: fhn(**kw))
    m = build_model("fhn_alias", {"p_field": 1.0, "alpha1": 0.5, "alpha2": 0.5, "alpha3": 1.0})
    assert m.name == "fhn"
    with pytest.raises(ConfigError):
        build_model("nope", {})
    with pytest.raises(ConfigError):
        build_model("fhn", {"bogus": 1})


@pytest.mark.parametrize("U", [5.0, 20.0])
def test_builtin_models_pass_on_other_boxes(U):
    for m in (fhn(1.0, 0.5, 0.5, 1.0), allen_cahn_cq(1.0, -1.0, 1.0, 0.1)):
        assert validate_reaction_assumptions(fit_model(m, U), U).verdict == PASS
