import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biphoton_lab.errors import DomainError
from biphoton_lab.model import eval_conditional_autocorr
from biphoton_lab.purity import (PurityParams, apply_purity_conditional, apply_purity_cross,
                                 estimate_purity, invert_purity_cross, noise_rate_for_purity,
                                 purity_from_rates)
from oracles import HERALDED_DENOMINATOR, HERALDED_NUMERATOR

P389 = PurityParams(0.89, 0.54)
UNIT = PurityParams(1.0, 1.0)

purity = st.floats(0.05, 1.0)
gs = st.floats(1.0, 100.0)


def test_cross_examples():
    assert apply_purity_cross(18, P389) == pytest.approx(9.1702, abs=1e-12)
    assert apply_purity_cross(7.3, UNIT) == 7.3
    assert apply_purity_cross(1.0, PurityParams(0.3, 0.2)) == 1.0


def test_cross_vectorized():
    out = apply_purity_cross(np.array([1.0, 18.0]), P389)
    assert out.tolist() == pytest.approx([1.0, 9.1702], abs=1e-12)


def test_invert_examples():
    assert invert_purity_cross(9.1702, P389) == pytest.approx(18, abs=1e-12)
    assert invert_purity_cross(4.2, UNIT) == 4.2
    assert invert_purity_cross(1.0, P389) == 1.0


def test_conditional_examples():
    assert apply_purity_conditional(18, P389) == pytest.approx(HERALDED_NUMERATOR / HERALDED_DENOMINATOR, abs=1e-12)
    assert HERALDED_NUMERATOR == pytest.approx(26.456, abs=1e-3)
    assert math.sqrt(HERALDED_DENOMINATOR) == pytest.approx(9.1702, abs=1e-12)
    assert round(apply_purity_conditional(18, P389), 4) == 0.3146
    assert apply_purity_conditional(18, UNIT) == pytest.approx(0.21605, abs=1e-5)
    assert apply_purity_conditional(1.0, PurityParams(0.4, 1.0)) == 2.0


def test_domain_errors():
    for bad in (0.0, -0.1, 1.2, math.nan):
        with pytest.raises(DomainError):
            PurityParams(bad, 1.0)
        with pytest.raises(DomainError):
            PurityParams(1.0, bad)
    for f in (apply_purity_cross, invert_purity_cross, apply_purity_conditional):
        with pytest.raises(DomainError):
            f(0.99, P389)
        with pytest.raises(DomainError):
            f(np.array([2.0, math.nan]), P389)


def test_estimate_purity():
    assert estimate_purity(1000, 110) == pytest.approx(0.89)
    assert estimate_purity(1000, 0) == 1.0
    assert estimate_purity(1000, 460) == pytest.approx(0.54)
    with pytest.raises(DomainError):
        estimate_purity(0, 0)
    with pytest.raises(DomainError):
        estimate_purity(10, 11)
    with pytest.raises(DomainError):
        estimate_purity(10, -1)


def test_rate_helpers():
    n = noise_rate_for_purity(2e5, 0.54)
    assert purity_from_rates(2e5, n) == pytest.approx(0.54, rel=1e-12)
    assert noise_rate_for_purity(3.0, 1.0) == 0.0
    with pytest.raises(DomainError):
        noise_rate_for_purity(1.0, 0.0)
    with pytest.raises(DomainError):
        purity_from_rates(0.0, 0.0)


@given(gs, purity, purity)
def test_round_trip(g, pt, pp):
    p = PurityParams(pt, pp)
    assert invert_purity_cross(apply_purity_cross(g, p), p) == pytest.approx(g, abs=1e-12 * max(1, g))


@given(gs)
def test_reduction_to_unit_purity(g):
    assert apply_purity_conditional(g, UNIT) == pytest.approx(eval_conditional_autocorr(g), abs=1e-12)


@given(gs, purity, purity)
def test_degradation_ordering(g, pt, pp):
    p = PurityParams(pt, pp)
    m = apply_purity_cross(g, p)
    assert m <= g
    if m == g:
        # P (g - 1) below one ulp of g rounds back to g
        assert g - 1 < 1e-12 or pt * pp == 1


@settings(max_examples=50)
@given(st.floats(1.01, 100.0), purity, purity)
def test_strict_degradation(g, pt, pp):
    p = PurityParams(pt, pp)
    if pt * pp < 1 - 1e-9:
        assert apply_purity_cross(g, p) < g
