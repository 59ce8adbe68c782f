"""Conic sector analysis: LMI feasibility forms, frequency oracle, cone maps."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from h2conic.cones import (
    Cone,
    csl_check,
    csl_lmi_matrix,
    cst_complement,
    estimate_symmetric_cone,
    frequency_cone_oracle,
    scale_into_cone,
)
from h2conic.lti import StateSpace, UnstableSystemError

from conftest import random_stable_system

FIRST_ORDER = StateSpace([[-1.0]], [[1.0]], [[1.0]])


# ---------------------------------------------------------------------------
# Cone type
# ---------------------------------------------------------------------------


def test_cone_requires_negative_lower_positive_upper():
    with pytest.raises(ValueError):
        Cone(0.5, 1.0)
    with pytest.raises(ValueError):
        Cone(-1.0, -0.5)
    with pytest.raises(ValueError):
        Cone(-1.0, float("inf"))


def test_strict_cone_effective_bounds_shrink():
    a, b = Cone(-2.0, 4.0, strict=True).effective_bounds()
    assert -2.0 < a < 0.0 < b < 4.0
    assert Cone(-2.0, 4.0).effective_bounds() == (-2.0, 4.0)


# ---------------------------------------------------------------------------
# LMI feasibility
# ---------------------------------------------------------------------------


def test_csl_first_order_unit_cone_boundary_certificate():
    # for this system the feasible set collapses to P = 1
    cert = csl_check(FIRST_ORDER, Cone(-1.0, 1.0), form=1)
    assert cert is not None
    assert cert.P[0, 0] == pytest.approx(1.0, abs=1e-3)
    assert cert.residual <= 1e-6


def test_csl_first_order_narrow_cone_infeasible():
    assert csl_check(FIRST_ORDER, Cone(-0.5, 0.5)) is None


def test_csl_narrow_cone_infeasible_by_scalar_sweep():
    # independent 1-D check: no P > 0 makes the form-1 matrix NSD
    cone = Cone(-0.5, 0.5)
    best = np.inf
    for P in np.logspace(-4.0, 4.0, 2000):
        M = csl_lmi_matrix(FIRST_ORDER, np.array([[P]]), cone, form=1)
        best = min(best, float(np.linalg.eigvalsh(M).max()))
    assert best > 1e-3


def test_csl_zero_output_feasible_any_cone():
    sys = StateSpace([[-1.0]], [[1.0]], [[0.0]])
    for cone in (Cone(-0.01, 0.01), Cone(-1.0, 1.0), Cone(-100.0, 5.0)):
        assert csl_check(sys, cone) is not None


def test_csl_rejects_nonsquare_and_feedthrough():
    with pytest.raises(ValueError):
        csl_check(StateSpace([[-1.0]], [[1.0, 0.0]], [[1.0]]), Cone(-1.0, 1.0))
    with pytest.raises(ValueError):
        csl_check(StateSpace([[-1.0]], [[1.0]], [[1.0]], [[1.0]]), Cone(-1.0, 1.0))


def test_csl_rejects_unknown_form():
    with pytest.raises(ValueError):
        csl_check(FIRST_ORDER, Cone(-1.0, 1.0), form=4)


def test_csl_three_forms_agree_on_random_systems(rng):
    agree = 0
    for _ in range(50):
        n = int(rng.integers(1, 5))
        m = int(rng.integers(1, 3))
        sys = random_stable_system(rng, n, m)
        a = -float(rng.uniform(0.05, 5.0))
        b = float(rng.uniform(0.05, 5.0))
        cone = Cone(a, b)
        results = [csl_check(sys, cone, form=f) is not None for f in (1, 2, 3)]
        assert len(set(results)) == 1, f"forms disagree: {results} on n={n} m={m} cone={cone}"
        agree += 1
        for f, feasible in zip((1, 2, 3), results):
            if feasible:
                cert = csl_check(sys, cone, form=f)
                assert cert.residual <= 1e-6 * max(1.0, abs(a) * b)
                assert np.min(np.linalg.eigvalsh(cert.P)) > 0.0
    assert agree == 50


def test_csl_feasible_implies_frequency_oracle_passes(rng):
    checked = 0
    for _ in range(30):
        sys = random_stable_system(rng, int(rng.integers(1, 4)), 1)
        cone = Cone(-float(rng.uniform(0.1, 5.0)), float(rng.uniform(0.1, 5.0)))
        if csl_check(sys, cone) is not None:
            assert frequency_cone_oracle(sys, cone).ok
            checked += 1
    assert checked >= 3


# ---------------------------------------------------------------------------
# Frequency oracle
# ---------------------------------------------------------------------------


def test_frequency_oracle_unit_cone_passes():
    assert frequency_cone_oracle(FIRST_ORDER, Cone(-1.0, 1.0)).ok


def test_frequency_oracle_narrow_cone_fails_at_dc():
    check = frequency_cone_oracle(FIRST_ORDER, Cone(-0.1, 0.1))
    assert not check.ok
    assert check.worst_frequency is not None and check.worst_frequency < 0.1
    # at omega = 0, G = 1: -(1/0.1)*1 + 0.5*(1 - 1)*2 + 0.1 = -9.9
    assert check.min_eigenvalue == pytest.approx(-9.9, abs=1e-6)


def test_frequency_oracle_zero_output_passes():
    sys = StateSpace([[-1.0]], [[1.0]], [[0.0]])
    check = frequency_cone_oracle(sys, Cone(-0.5, 3.0))
    assert check.ok
    assert check.min_eigenvalue == pytest.approx(0.5, abs=1e-9)


def test_frequency_oracle_requires_stability():
    with pytest.raises(UnstableSystemError):
        frequency_cone_oracle(StateSpace([[1.0]], [[1.0]], [[1.0]]), Cone(-1.0, 1.0))


# ---------------------------------------------------------------------------
# Cone estimation and scaling
# ---------------------------------------------------------------------------


def test_estimate_symmetric_cone_first_order():
    cone = estimate_symmetric_cone(FIRST_ORDER)
    assert cone.b == pytest.approx(1.0, rel=1e-3)
    assert cone.a == pytest.approx(-1.0, rel=1e-3)


def test_estimate_symmetric_cone_zero_input():
    cone = estimate_symmetric_cone(StateSpace([[-2.0]], [[0.0]], [[1.0]]))
    assert cone.b == pytest.approx(0.25, rel=1e-3)


def test_estimate_symmetric_cone_certified(rng):
    for _ in range(10):
        sys = random_stable_system(rng, int(rng.integers(1, 4)), int(rng.integers(1, 3)))
        cone = estimate_symmetric_cone(sys)
        assert csl_check(sys, cone, form=3) is not None


def test_estimate_symmetric_cone_requires_stability():
    with pytest.raises(UnstableSystemError):
        estimate_symmetric_cone(StateSpace([[1.0]], [[1.0]], [[1.0]]))


def test_scale_into_cone_factor():
    sys = StateSpace([[-1.0]], [[1.0]], [[0.1]])
    scaled = scale_into_cone(sys, Cone(-2.0, 4.0), Cone(-1.0, 1.0))
    np.testing.assert_allclose(scaled.C, 0.25 * sys.C)


def test_scale_into_cone_identity():
    cone = Cone(-1.0, 1.0)
    scaled = scale_into_cone(FIRST_ORDER, cone, cone)
    np.testing.assert_allclose(scaled.C, FIRST_ORDER.C)


def test_scale_into_cone_recheck_target():
    sys = StateSpace([[-1.0]], [[1.0]], [[0.1]])
    current = estimate_symmetric_cone(sys)
    scaled = scale_into_cone(sys, current, Cone(-2.0, 2.0))
    assert csl_check(scaled, Cone(-2.0, 2.0)) is not None


def test_scale_into_cone_requires_certified_current():
    with pytest.raises(ValueError):
        scale_into_cone(FIRST_ORDER, Cone(-0.5, 0.5), Cone(-1.0, 1.0))


# ---------------------------------------------------------------------------
# Complement cone
# ---------------------------------------------------------------------------


def test_cst_complement_examples():
    c = cst_complement(Cone(-1.0, 2.0))
    assert (c.a, c.b) == pytest.approx((-0.5, 1.0))
    assert c.strict
    c = cst_complement(Cone(-24.84, 62200.0))
    assert c.a == pytest.approx(-1.0 / 62200.0)
    assert c.b == pytest.approx(1.0 / 24.84)


def test_cst_complement_symmetric():
    c = cst_complement(Cone(-3.0, 3.0))
    assert (c.a, c.b) == pytest.approx((-1.0 / 3.0, 1.0 / 3.0))


@settings(max_examples=200, deadline=None)
@given(
    a=st.floats(min_value=-1e6, max_value=-1e-6, allow_nan=False),
    b=st.floats(min_value=1e-6, max_value=1e6, allow_nan=False),
)
def test_cst_complement_is_an_involution(a, b):
    back = cst_complement(cst_complement(Cone(a, b)))
    assert back.a == pytest.approx(a, rel=1e-12)
    assert back.b == pytest.approx(b, rel=1e-12)
