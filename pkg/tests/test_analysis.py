import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import LAMBDA_STAR, Q09, orthogonal_scheme, random_params, seeds
from reference import cos_moment, gap_function_lattice, gap_function_single_axis
from qwdefect.analysis import (
    DomainError, GapFunction, QuadratureSpec, bounds_check, build_phi_q, criteria_check,
    envelopes, f_of_lambda, f_prime, f_profile, feshbach_residual, find_zero, gap_ladder,
    psi_lambda_at, search_gap,
)
from qwdefect.model import ModelError, ShiftParams, derived_scalars, single_axis_example


def excon(p1, p2):
    return p2 < 2.5 - 1 / (2 * p1 ** 2) and 1 < p1 ** 2 + 4 / 9 * p2 ** 2


@pytest.mark.parametrize("n,A,B", [(0, 0.7, 0.3), (2, 0.7, -0.3), (2, -0.9, 0.4), (3, -0.5, -0.45)])
def test_cos_moment_reference(n, A, B):
    mp.mp.dps = 30
    want = mp.quad(lambda t: mp.cos(n * t) / (A + B * mp.cos(t)), [0, mp.pi, 2 * mp.pi]) / (2 * mp.pi)
    assert abs(cos_moment(n, A, B) - float(want)) < 1e-14


@pytest.mark.parametrize("p", [(0.9, 0.9), (0.6, 0.6), (0.95, 0.3), (0.5, -0.7)])
def test_gap_function_closed_form(p):
    params, scheme = single_axis_example(p)
    gf = GapFunction(params, scheme)
    lo, hi = gf.band
    for lam in np.concatenate([np.linspace(-1, lo - 1e-3, 5), np.linspace(hi + 1e-3, 1, 5)]):
        v, e = gf.value(float(lam))
        assert abs(v - gap_function_single_axis(float(lam), params, scheme)) < 1e-10
        assert e < 1e-10


@given(seeds)
def test_gap_function_lattice_oracle(seed):
    rng = np.random.default_rng(seed)
    params, scheme = random_params(rng, 2), orthogonal_scheme(rng, 2)
    gf = GapFunction(params, scheme)
    lo, hi = gf.band
    for lam in (-1.0, 1.0, lo - 0.5 * (lo + 1), hi + 0.5 * (1 - hi)):
        if min(abs(lam - lo), abs(lam - hi)) < 0.05:
            continue
        assert abs(gf.value(lam).value - gap_function_lattice(lam, params, scheme, 40)) < 1e-9


@given(seeds, st.integers(2, 3))
def test_psi_vanishes_at_origin(seed, dim):
    rng = np.random.default_rng(seed)
    params, scheme = random_params(rng, dim), orthogonal_scheme(rng, dim)
    gf = GapFunction(params, scheme, QuadratureSpec(N=64 if dim == 3 else 128))
    lo, hi = gf.band
    for lam in (-1.0, 0.5 * (lo - 1), 0.5 * (hi + 1), 1.0):
        if min(abs(lam - lo), abs(lam - hi)) > 1e-3:
            assert abs(gf.psi_at(np.zeros(dim, int), lam)) < 1e-10


@given(seeds)
def test_monotone_with_derivative(seed):
    rng = np.random.default_rng(seed)
    params, scheme = random_params(rng, 2), orthogonal_scheme(rng, 2)
    gf = GapFunction(params, scheme)
    for gap in ("lower", "upper"):
        lams = gap_ladder(gap, gf.band, 8, inset=2e-2)
        vals = [gf.value(float(l)) for l in lams]
        for a, b in zip(vals, vals[1:]):
            assert b.value - a.value > a.error + b.error
        for lam in lams[1:-1]:
            h = 1e-5
            fd = (gf.value(lam + h).value - gf.value(lam - h).value) / (2 * h)
            d = gf.derivative(float(lam))
            assert d.value > 1
            assert abs(fd - d.value) < max(1e-6, 10 * d.error) * max(1.0, d.value)


@given(seeds)
def test_envelopes_bracket_gap_function(seed):
    rng = np.random.default_rng(seed)
    params, scheme = random_params(rng, 2), orthogonal_scheme(rng, 2)
    gf = GapFunction(params, scheme)
    for gap in ("lower", "upper"):
        for lam in gap_ladder(gap, gf.band, 5, inset=1e-2):
            assert bounds_check(float(lam), params, scheme)


def test_envelope_orientation(example):
    ds = derived_scalars(*example)
    low, high = envelopes(0.8, ds)
    assert low < high
    low, high = envelopes(-0.8, ds)
    assert low < high


def test_example_zero(example):
    params, scheme = example
    res = search_gap("upper", params, scheme)
    assert res.condition and res.stabilized and res.inner_sign == -1
    assert abs(res.zero - LAMBDA_STAR) < 1e-9
    assert res.f_outer.value == pytest.approx(0.5, abs=1e-12)
    low = search_gap("lower", params, scheme)
    assert low.zero is None and not low.condition
    assert find_zero("lower", params, scheme) is None


def test_example_edge_limit_finite(example):
    params, scheme = example
    gf = GapFunction(params, scheme)
    vals = [gf.value(Q09 + eps).value for eps in (1e-3, 1e-4, 1e-5)]
    assert abs(vals[-1] - vals[-2]) < abs(vals[0] - vals[1])
    assert vals[-1] < 0


def test_feshbach_identity(example):
    params, scheme = example
    gf = GapFunction(params, scheme)
    norm = math.sqrt(gf.dv.norm_sq)
    for lam in (-0.9, -0.6, 0.7, 0.95):
        expected = abs(gf.value(lam).value) * norm / abs(gf.ds.aOmega - lam)
        assert feshbach_residual(lam, params, scheme) == pytest.approx(expected, rel=1e-9, abs=1e-13)
    assert feshbach_residual(find_zero("upper", params, scheme), params, scheme) < 1e-9
    with pytest.raises(DomainError):
        feshbach_residual(gf.ds.aOmega, params, scheme)


def test_psi_on_box_matches_pointwise(example):
    params, scheme = example
    gf = GapFunction(params, scheme)
    box = gf.psi_on_box(0.8, 4)
    for x in [(1, 0), (-2, 0), (3, 0), (0, 1), (0, 0)]:
        assert abs(box[x[0] + 4, x[1] + 4] - gf.psi_at(x, 0.8)) < 1e-12
    assert psi_lambda_at((0, 0), 0.8, params, scheme) == pytest.approx(0, abs=1e-14)


def test_phi_q_norm_matches_scalars():
    rng = np.random.default_rng(5)
    for _ in range(5):
        params, scheme = random_params(rng, 3), orthogonal_scheme(rng, 3)
        assert build_phi_q(params, scheme).norm_sq == pytest.approx(
            derived_scalars(params, scheme).phi_q_norm_sq, rel=1e-14)


@pytest.mark.parametrize("p", [(0.9, 0.9), (0.6, 0.6), (0.8, 1.2 ** 0.5 * 0.8), (0.99, 0.1), (0.75, 0.9)])
def test_criteria_match_closed_form(p):
    params = ShiftParams.from_p(p)
    _, scheme = single_axis_example()
    v = criteria_check(params, scheme, (1, 1))
    assert v.down == excon(*p)
    assert not v.up
    assert v.localization_applicable


def test_criteria_imply_zero():
    # a verdict of true must come with a zero found by the bracketed search
    for p in [(0.9, 0.9), (0.85, 1.0 - 1e-9), (0.95, 0.5)]:
        params, scheme = single_axis_example(p)
        if criteria_check(params, scheme).down:
            assert find_zero("upper", params, scheme) is not None


def test_f_profile_shapes(example):
    params, scheme = example
    reps = f_profile(params, scheme, n=6, search={"upper": search_gap("upper", params, scheme)})
    assert [r.gap for r in reps] == ["lower", "upper"]
    assert reps[1].zero == pytest.approx(LAMBDA_STAR, abs=1e-9)
    assert len(list(reps[0].rows())) == 6
    assert all(d > 1 for d in reps[1].derivatives)


def test_domain_and_spec_errors(example, control):
    params, scheme = example
    with pytest.raises(DomainError):
        f_of_lambda(Q09 - 1e-3, params, scheme)
    with pytest.raises(DomainError):
        f_prime(1.5, params, scheme)
    with pytest.raises(ValueError):
        QuadratureSpec(N=33)
    with pytest.raises(ModelError):
        criteria_check(*control)
    with pytest.raises(ValueError):
        search_gap("middle", params, scheme)
    with pytest.raises(ModelError):
        search_gap("upper", ShiftParams.from_p([0.0, 0.9]), scheme)
