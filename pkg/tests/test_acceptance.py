"""Acceptance checks on the single-axis defect example and random models.

Each check records one PASS/FAIL line, printed in the terminal summary.
"""
import cmath
import math
import warnings

import numpy as np
import pytest

from conftest import orthogonal_scheme, random_params, record_acceptance, unit_vector
from reference import gap_function_single_axis
from qwdefect.analysis import GapFunction, criteria_check, find_zero, gap_ladder
from qwdefect.discriminant import apply_T, oracle_point_spectrum, truncated_matrix
from qwdefect.evolution import (
    LatticeBox, LatticeState, ScalarLatticeState, apply_coin, apply_shift, coisometry_d,
    coisometry_d_star, return_probability_series, step,
)
from qwdefect.model import CoinScheme, ShiftParams, a_value, derived_scalars, single_axis_example
from qwdefect.spectral_map import free_angle, g_pm, verify_on_truncation

P0 = (1, 1)


def check(number, passed, detail):
    record_acceptance(number, bool(passed), detail)
    assert passed, detail


@pytest.fixture(scope="module")
def example():
    return single_axis_example((0.9, 0.9))


@pytest.fixture(scope="module")
def lam_star(example):
    return find_zero("upper", *example)


def test_c01_example_scalars(example):
    _, scheme = example
    aO, aP = a_value(scheme.Omega, P0), a_value(scheme.Phi, P0)
    check(1, abs(aO - 0.5) <= 1e-14 and abs(aP) <= 1e-14,
          f"aOmega(p0)={aO!r} aPhi(p0)={aP!r}")


def test_c02_criteria_match_closed_form():
    _, scheme = single_axis_example()
    grid = (np.arange(50) + 0.5) / 50
    mismatches, compared = [], 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for p1 in grid:
            for p2 in grid:
                c1 = p2 - (2.5 - 1 / (2 * p1 ** 2))
                c2 = p1 ** 2 + 4 / 9 * p2 ** 2 - 1
                if abs(c1) < 1e-9 or abs(c2) < 1e-9:
                    continue
                compared += 1
                verdict = criteria_check(ShiftParams.from_p([p1, p2]), scheme).down
                if verdict != (c1 < 0 and c2 > 0):
                    mismatches.append((p1, p2))
    check(2, not mismatches, f"{compared} grid points compared, {len(mismatches)} mismatches")


def test_c03_zero_matches_oracle(example, lam_star):
    params, scheme = example
    ok = lam_star is not None and 0.43589 < lam_star <= 1
    diffs = {}
    for L, tol in ((15, 1e-3), (25, 1e-4)):
        kept = oracle_point_spectrum(params, scheme, L).kept()
        diffs[L] = abs(kept[0] - lam_star) if len(kept) == 1 else math.inf
        ok = ok and len(kept) == 1 and diffs[L] < tol
    check(3, ok, f"lambda*={lam_star!r} |diff| L=15: {diffs[15]:.2e}, L=25: {diffs[25]:.2e}")


def test_c04_quadrature_vs_residues(example):
    params, scheme = example
    gf = GapFunction(params, scheme)
    lams = np.concatenate([gap_ladder("lower", gf.band, 10, 1e-3), gap_ladder("upper", gf.band, 10, 1e-3)])
    err = max(abs(gf.value(float(l)).value - gap_function_single_axis(float(l), params, scheme))
              for l in lams)
    check(4, len(lams) == 20 and err < 1e-10, f"max |f - residue form| over 20 lambdas = {err:.2e}")


def test_c05_psi_origin_vanishes():
    rng = np.random.default_rng(2024)
    worst = 0.0
    n = 0
    while n < 10:
        params, scheme = random_params(rng, 2), orthogonal_scheme(rng, 2)
        gf = GapFunction(params, scheme)
        lo, hi = gf.band
        if min(lo + 1, 1 - hi) < 0.05:
            continue
        n += 1
        lams = [-1.0, 0.5 * (lo - 1), lo - 1e-2, hi + 1e-2, 1.0]
        for lam in lams:
            worst = max(worst, abs(gf.psi_at((0, 0), lam)))
    check(5, worst < 1e-10, f"max |psi_lambda(0)| over 10 schemes x 5 lambdas = {worst:.2e}")


def test_c06_monotone_and_derivative(example):
    params, scheme = example
    gf = GapFunction(params, scheme)
    ok, worst_fd = True, 0.0
    for gap in ("lower", "upper"):
        lams = gap_ladder(gap, gf.band, 30, 1e-3)
        vals = [gf.value(float(l)) for l in lams]
        ok = ok and all(b.value - a.value > a.error + b.error for a, b in zip(vals, vals[1:]))
        h = 1e-6
        for lam in lams[1:-1]:
            d = gf.derivative(float(lam))
            fd = (gf.value(lam + h).value - gf.value(lam - h).value) / (2 * h)
            worst_fd = max(worst_fd, abs(fd - d.value) / max(1e-6, 10 * d.error))
    check(6, ok and worst_fd < 1, f"strictly increasing={ok}, max |f'-FD|/tol = {worst_fd:.2e}")


def test_c07_operator_identities(example):
    rng = np.random.default_rng(7)
    models = [example, (random_params(rng, 2), CoinScheme(2, unit_vector(rng, 4), unit_vector(rng, 4)))]
    worst = [0.0] * 4
    for params, scheme in models:
        box = LatticeBox(2, 10, "periodic")
        f = ScalarLatticeState.random(box, rng)
        psi = LatticeState.random(box, rng)
        dsd = coisometry_d(apply_shift(coisometry_d_star(f, scheme), params), scheme)
        res = [
            np.linalg.norm(dsd.values - apply_T(f, params, scheme).values),
            np.max(np.abs(coisometry_d(coisometry_d_star(f, scheme), scheme).values - f.values)),
            np.max(np.abs(apply_coin(psi, scheme).amplitudes
                          - (2 * coisometry_d_star(coisometry_d(psi, scheme), scheme).amplitudes
                             - psi.amplitudes))),
            abs(step(psi, params, scheme).norm() - psi.norm()),
        ]
        worst = [max(a, b) for a, b in zip(worst, res)]
    check(7, max(worst) < 1e-12,
          "dSd*-T {:.1e}, dd*-I {:.1e}, C-(2d*d-1) {:.1e}, norm {:.1e}".format(*worst))


def test_c08_spectral_map_consistency(example, lam_star):
    params, scheme = example
    gs = g_pm(lam_star)
    res = [verify_on_truncation(params, scheme, g, 15, seed=0).residual for g in gs]
    re_err = max(abs(g.real - lam_star) for g in gs)
    ang = free_angle(derived_scalars(params, scheme).band, [math.acos(lam_star)])
    ctrl = verify_on_truncation(params, scheme, cmath.exp(1j * ang), 15, seed=0).residual
    check(8, max(res) < 1e-3 and re_err < 1e-12 and ctrl > 0.1,
          f"residuals g+={res[0]:.2e} g-={res[1]:.2e}, |Re g - lambda*|={re_err:.1e}, control={ctrl:.3f}")


def test_c09_localization(example, lam_star):
    params, scheme = example
    ver = verify_on_truncation(params, scheme, g_pm(lam_star)[0], 15, T_max=200, seed=0, box_radius=220)
    floor = 0.9 * ver.origin_mass ** 2
    ctrl_scheme = CoinScheme(2, scheme.Phi, scheme.Phi)
    start = LatticeState.delta(LatticeBox(2, 220, "truncate_zero"), ctrl_scheme.Omega)
    _, running = return_probability_series(params, ctrl_scheme, start, 200)
    check(9, ver.return_average > floor and running[-1] < 0.05,
          f"eigenvector average {ver.return_average:.4f} > {floor:.4f}; control average {running[-1]:.4f} < 0.05")


def band_geometry(params, scheme, L=20):
    free = CoinScheme(scheme.dim, scheme.Phi, scheme.Phi)
    lo, hi = derived_scalars(params, free).band
    w = np.linalg.eigvalsh(truncated_matrix(params, free, L, "periodic"))
    inside = w.min() >= lo - 1e-10 and w.max() <= hi + 1e-10
    return inside, w.min() - lo, hi - w.max()


def test_c10_band_containment(example):
    inside, _, _ = band_geometry(*example)
    assert inside


@pytest.mark.xfail(strict=True, reason="a periodic ring of 41 sites has no momentum k = pi; "
                   "the band bottom is missed by lambda(q)(1 - cos(pi/41)) = 1.28e-3 > 1e-3")
def test_c10_band_geometry(example):
    params, scheme = example
    inside, gap_lo, gap_hi = band_geometry(params, scheme)
    lam_q = derived_scalars(params, scheme).lambda_q
    assert gap_lo == pytest.approx(lam_q * (1 - math.cos(math.pi / 41)), rel=1e-9)
    check(10, inside and max(gap_lo, gap_hi) < 1e-3,
          f"contained={inside}, bottom gap {gap_lo:.3e}, top gap {gap_hi:.1e} (tolerance 1e-3)")
