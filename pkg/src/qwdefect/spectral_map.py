"""Assemble the spectrum of ``U`` from that of the discriminant and check predicted
eigenvalues against a truncated evolution operator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .analysis import DomainError
from .evolution import LatticeBox, LatticeState, evolution_matrix, return_probability_series
from .model import CoinScheme, ShiftParams, a_value, derived_scalars

DENSE_LU_LIMIT = 6000
MAX_ITER = 500
BIRTH_RESIDUAL = 1e-8
SHIFT_OFFSET = 1e-9
STAGNATION = 1e-4


def g_pm(lam: float) -> tuple[complex, complex]:
    """``(exp(+i arccos lam), exp(-i arccos lam))``."""
    if not -1.0 <= lam <= 1.0:
        raise DomainError(f"lambda={lam} outside [-1, 1]")
    theta = math.acos(lam)
    return complex(math.cos(theta), math.sin(theta)), complex(math.cos(theta), -math.sin(theta))


def _cpair(z: complex) -> list[float]:
    return [float(z.real), float(z.imag)]


@dataclass
class Verification:
    g: complex
    residual: float
    origin_mass: float
    iterations: int
    converged: bool
    L: int
    eigenvector: LatticeState | None = field(default=None, repr=False)
    return_average: float | None = None
    diagnostics: str = ""

    def as_dict(self) -> dict:
        return {"g": _cpair(self.g), "residual": self.residual,
                "origin_mass": self.origin_mass, "iterations": self.iterations,
                "converged": self.converged, "L": self.L,
                "return_average": self.return_average,
                "diagnostics": self.diagnostics}


def _solver(U: sp.csr_matrix, sigma: complex):
    n = U.shape[0]
    if n <= DENSE_LU_LIMIT:
        A = U.toarray()
        A[np.diag_indices(n)] -= sigma
        lu = la.lu_factor(A, check_finite=False)
        return lambda b: la.lu_solve(lu, b, check_finite=False)
    A = (U - sigma * sp.identity(n, dtype=complex, format="csr")).tocsc()
    return spla.splu(A).solve


def verify_on_truncation(params: ShiftParams, scheme: CoinScheme, g: complex, L: int,
                         T_max: int | None = None, seed: int = 0,
                         box_radius: int | None = None) -> Verification:
    """Inverse iteration on ``U - g`` for the periodic truncation of radius ``L``.

    The factorized shift sits a distance ``SHIFT_OFFSET`` off the unit circle so
    that exact eigenvalues of the truncation do not make it singular.  The
    iteration stops once the residual changes by less than a relative
    ``STAGNATION`` between sweeps.  With
    ``T_max`` the normalized eigenvector is also evolved in a zero-truncated box
    and its time-averaged return probability reported; ``box_radius`` defaults
    to the smallest light-cone-safe radius ``L + T_max + 1``.
    """
    box = LatticeBox(params.dim, L, "periodic")
    U = evolution_matrix(params, scheme, box)
    solve = _solver(U, g * (1 + SHIFT_OFFSET))
    rng = np.random.default_rng(seed)
    shape = box.shape + (2 * box.dim,)
    v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    v[box.sup_norm() > L // 2] = 0
    v = v.reshape(-1)
    v /= np.linalg.norm(v)
    residual, prev = math.inf, math.inf
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        v = solve(v)
        nv = np.linalg.norm(v)
        if not np.isfinite(nv) or nv == 0:
            break
        v /= nv
        residual = float(np.linalg.norm(U @ v - g * v))
        if residual < 1e-13 or abs(prev - residual) <= STAGNATION * residual:
            converged = True
            break
        prev = residual
    state = LatticeState(box, v.reshape(shape))
    origin_mass = float(np.sum(np.abs(state.amplitudes[box.origin]) ** 2))
    out = Verification(g, residual if converged else math.inf, origin_mass, it, converged, L, state)
    if not converged:
        out.diagnostics = f"no convergence in {it} iterations; last residual {residual:.3g}"
        return out
    if T_max is not None:
        big = LatticeBox(params.dim, box_radius or L + T_max + 1, "truncate_zero")
        _, running = return_probability_series(params, scheme, state.embed(big), T_max)
        out.return_average = float(running[-1])
    return out


def essential_arcs(band: tuple[float, float]) -> list[tuple[float, float]]:
    """Angle intervals of the two essential arcs (upper half-plane first)."""
    lo, hi = band
    a, b = math.acos(min(hi, 1.0)), math.acos(max(lo, -1.0))
    return [(a, b), (-b, -a)]


def free_angle(band: tuple[float, float], points: list[float]) -> float:
    """Midpoint of the widest angular interval in the upper half-plane avoiding the
    arcs, the birth points ``0, pi`` and the given eigenvalue angles."""
    (a, b), _ = essential_arcs(band)
    marks = sorted({0.0, math.pi, a, b, *[p for p in points if 0 <= p <= math.pi]})
    best, mid = -1.0, math.pi / 2
    for x, y in zip(marks, marks[1:]):
        if a <= x and y <= b:
            continue
        if y - x > best:
            best, mid = y - x, 0.5 * (x + y)
    return mid


@dataclass
class SpectralReport:
    essential_band: tuple[float, float]
    arcs: list[tuple[float, float]]
    t_eigenvalues: list[dict] = field(default_factory=list)
    u_eigenvalues: list[dict] = field(default_factory=list)
    criteria: dict | None = None
    predicted_gap: str | None = None
    oracle: dict | None = None
    oracle_matches: list[dict] = field(default_factory=list)
    birth_flags: list[dict] = field(default_factory=list)
    control: dict | None = None
    searches: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def point_spectrum(self) -> list[complex]:
        return [complex(*u["value"]) for u in self.u_eigenvalues]

    def as_dict(self) -> dict:
        return {
            "essential_band": list(self.essential_band),
            "arcs": [{"angle_from": a, "angle_to": b,
                      "endpoints": [_cpair(complex(math.cos(a), math.sin(a))),
                                    _cpair(complex(math.cos(b), math.sin(b)))]}
                     for a, b in self.arcs],
            "t_eigenvalues": self.t_eigenvalues,
            "u_eigenvalues": self.u_eigenvalues,
            "criteria": self.criteria,
            "predicted_gap": self.predicted_gap,
            "oracle": self.oracle,
            "oracle_matches": self.oracle_matches,
            "birth_flags": self.birth_flags,
            "control": self.control,
            "searches": self.searches,
            "notes": self.notes,
        }


def assemble_report(params: ShiftParams, scheme: CoinScheme, searches: dict | None = None,
                    criteria=None, oracle=None, verifications: dict | None = None,
                    birth: list[Verification] | None = None, p0=None,
                    control: Verification | None = None) -> SpectralReport:
    """Collect zeros, mapped eigenvalues, criteria verdicts and oracle comparisons.

    ``searches`` maps gap name to a ``GapSearch``; ``verifications`` maps each
    reported U-eigenvalue (as a complex number) to its ``Verification``.
    """
    ds = derived_scalars(params, scheme)
    band = ds.band
    arcs = essential_arcs(band)
    report = SpectralReport(band, arcs)
    searches = searches or {}
    verifications = verifications or {}
    for gap, rec in searches.items():
        report.searches[gap] = rec.as_dict()
        if rec.zero is None:
            continue
        lam = rec.zero
        report.t_eigenvalues.append({"lambda": lam, "gap": gap, "f": rec.f_zero.value,
                                     "f_error": rec.f_zero.error})
        for sign, g in zip(("+", "-"), g_pm(lam)):
            entry = {"value": _cpair(g), "lambda": lam, "branch": sign, "gap": gap}
            ver = verifications.get(g)
            if ver is not None:
                entry["verification"] = ver.as_dict()
            report.u_eigenvalues.append(entry)
    if criteria is not None:
        report.criteria = criteria.as_dict()
    if p0 is not None:
        diff = a_value(scheme.Omega, p0) - a_value(scheme.Phi, p0)
        report.predicted_gap = "upper" if diff > 0 else "lower" if diff < 0 else None
    if oracle is not None:
        report.oracle = oracle.as_dict()
        kept = oracle.kept()
        for t in report.t_eigenvalues:
            if kept:
                nearest = min(kept, key=lambda v: abs(v - t["lambda"]))
                report.oracle_matches.append({"lambda": t["lambda"], "oracle": nearest,
                                              "difference": abs(nearest - t["lambda"])})
            else:
                report.oracle_matches.append({"lambda": t["lambda"], "oracle": None,
                                              "difference": None})
        found = [t["lambda"] for t in report.t_eigenvalues]
        for v in kept:
            if not any(abs(v - lam) < 1e-3 for lam in found):
                report.notes.append(f"oracle eigenvalue {v:.12g} has no analytic counterpart")
    for ver in birth or []:
        report.birth_flags.append({
            "value": _cpair(ver.g), "flagged": ver.residual < BIRTH_RESIDUAL,
            "residual": ver.residual,
            "label": "numeric flag; analytic birth-space characterization out of scope"})
    if control is not None:
        report.control = control.as_dict()
    return report
