"""Gap function, its derivative, the resolvent vector and the zero search.

Torus integrals ``(2pi)^-d * int ... dk`` are evaluated with the tensor
trapezoidal rule on ``N`` points per axis, doubling ``N`` until two
consecutive levels agree.  Axes on which the integrand does not depend
(``alpha_j = 0`` and no defect coupling along ``j``) are integrated out
exactly.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .discriminant import DiscriminantStencil, decay_rate
from .evolution import LatticeBox
from .model import (
    TOL, CoinScheme, DerivedScalars, ModelError, ShiftParams, admissible_axes,
    assumption_ratio_holds, check_assumption_ap0,
    defect_couplings, derived_scalars, validate_params,
)

EPS_EDGE = 1e-6
EDGE_SEQUENCE = tuple(10.0 ** -k for k in range(2, 7))
DIVERGENCE = 1e6
F_TOL = 1e-10
WIDTH_TOL = 1e-12
MAX_GRID_POINTS = 1 << 24
CHUNK_POINTS = 1 << 20


class DomainError(ValueError):
    """Spectral parameter outside the domain of the gap function."""


class QuadratureError(RuntimeError):
    """Quadrature error too large to resolve the requested quantity."""


class Estimate(NamedTuple):
    value: float
    error: float


@dataclass(frozen=True)
class QuadratureSpec:
    """Trapezoidal grid with ``N`` points per axis and up to ``R`` doublings."""

    N: int = 128
    R: int = 6
    richardson: bool = True
    tol: float = 1e-13

    def __post_init__(self):
        if self.N < 32 or self.N % 2:
            raise ValueError(f"N must be even and >= 32, got {self.N}")
        if self.R < 0:
            raise ValueError(f"R must be >= 0, got {self.R}")


def default_quadrature(dim: int) -> QuadratureSpec:
    return QuadratureSpec(N=128 if dim <= 2 else 48)


@dataclass(frozen=True)
class DefectVector:
    """Values of ``phi_q`` at ``+e_j`` (``plus``) and ``-e_j`` (``minus``)."""

    plus: np.ndarray
    minus: np.ndarray

    @property
    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.plus) ** 2 + np.abs(self.minus) ** 2))

    def on_box(self, box: LatticeBox) -> np.ndarray:
        vals = np.zeros(box.shape, dtype=complex)
        for j in range(box.dim):
            e = [0] * box.dim
            e[j] = 1
            vals[box.index(e)] += self.plus[j]
            e[j] = -1
            vals[box.index(e)] += self.minus[j]
        return vals


def build_phi_q(params: ShiftParams, scheme: CoinScheme) -> DefectVector:
    plus_form, minus_form = defect_couplings(scheme)
    return DefectVector(plus=np.conj(params.q) * minus_form, minus=params.q * plus_form)


def phi_q_hat(k, dv: DefectVector) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    return np.sum(dv.plus * np.exp(-1j * k) + dv.minus * np.exp(1j * k), axis=-1)


def _torus_mean(fn, n_axes: int, N: int) -> complex:
    """Trapezoidal mean over ``[0, 2pi)^n_axes`` of ``fn(*k)`` with broadcastable ``k``."""
    k1 = 2 * np.pi * np.arange(N) / N
    if n_axes == 0:
        return complex(np.asarray(fn()).reshape(-1)[0])
    if n_axes == 1:
        return complex(np.mean(fn(k1)))
    rest = [k1.reshape((1,) + (1,) * i + (N,) + (1,) * (n_axes - 2 - i)) for i in range(n_axes - 1)]
    rows = max(1, CHUNK_POINTS // N ** (n_axes - 1))
    total = 0j
    for start in range(0, N, rows):
        k0 = k1[start:start + rows].reshape((-1,) + (1,) * (n_axes - 1))
        total += np.sum(fn(k0, *rest))
    return total / N ** n_axes


@dataclass
class GapFunction:
    """Evaluator for the gap function of one model.

    ``value(lam)`` returns ``lam - aOmega + <phi_q, (T0 - lam)^-1 phi_q>``
    with a quadrature error estimate.
    """

    params: ShiftParams
    scheme: CoinScheme
    qs: QuadratureSpec | None = None
    ds: DerivedScalars = field(init=False)
    dv: DefectVector = field(init=False)
    active: list[int] = field(init=False)

    def __post_init__(self):
        if self.qs is None:
            self.qs = default_quadrature(self.params.dim)
        self.ds = derived_scalars(self.params, self.scheme)
        self.dv = build_phi_q(self.params, self.scheme)
        self.active = [j for j in range(self.params.dim)
                       if abs(self.ds.alpha[j]) > 0 or self.dv.plus[j] != 0 or self.dv.minus[j] != 0]

    @property
    def band(self) -> tuple[float, float]:
        return self.ds.band

    def check_domain(self, lam: float) -> None:
        lo, hi = self.band
        if not -1 - 1e-15 <= lam <= 1 + 1e-15:
            raise DomainError(f"lambda={lam} outside [-1, 1]")
        if lo - lam < EPS_EDGE * (1 - 1e-9) and lam - hi < EPS_EDGE * (1 - 1e-9):
            raise DomainError(
                f"lambda={lam} within {EPS_EDGE:g} of the essential band [{lo:.12g}, {hi:.12g}]")

    def _terms(self, ks):
        num = 0j
        sym = self.ds.aPhi
        for j, k in zip(self.active, ks):
            num = num + self.dv.plus[j] * np.exp(-1j * k) + self.dv.minus[j] * np.exp(1j * k)
            sym = sym + 2 * abs(self.ds.alpha[j]) * np.cos(k + self.ds.theta[j])
        return num, sym

    def _integrate(self, integrand) -> tuple[complex, float, int]:
        qs = self.qs
        n = len(self.active)
        N = qs.N
        val = _torus_mean(integrand, n, N)
        if not qs.richardson or n == 0:
            return val, (0.0 if n == 0 else math.nan), N
        err = math.inf
        for _ in range(qs.R):
            if (2 * N) ** n > MAX_GRID_POINTS:
                break
            N *= 2
            new = _torus_mean(integrand, n, N)
            err, val = abs(new - val), new
            if err <= qs.tol * max(1.0, abs(val)):
                break
        return val, err, N

    def resolvent_term(self, lam: float) -> Estimate:
        """``<phi_q, (T0 - lam)^-1 phi_q>``."""
        self.check_domain(lam)

        def integrand(*ks):
            num, sym = self._terms(ks)
            return np.abs(num) ** 2 / (sym - lam)

        val, err, _ = self._integrate(integrand)
        return Estimate(float(val.real), err)

    def value(self, lam: float) -> Estimate:
        term = self.resolvent_term(lam)
        return Estimate(lam - self.ds.aOmega + term.value, term.error)

    def derivative(self, lam: float) -> Estimate:
        self.check_domain(lam)

        def integrand(*ks):
            num, sym = self._terms(ks)
            return np.abs(num) ** 2 / (sym - lam) ** 2

        val, err, _ = self._integrate(integrand)
        return Estimate(1.0 + float(val.real), err)

    def psi_at(self, x, lam: float) -> complex:
        """``psi_lam(x) = (T0 - lam)^-1 phi_q`` at a lattice point."""
        self.check_domain(lam)
        x = np.asarray(x, dtype=int).reshape(-1)
        if x.size != self.params.dim:
            raise ModelError(f"point {x.tolist()} has wrong dimension")
        inactive = [j for j in range(self.params.dim) if j not in self.active]
        if any(x[j] != 0 for j in inactive):
            return 0j
        xa = [x[j] for j in self.active]

        def integrand(*ks):
            num, sym = self._terms(ks)
            phase = np.exp(1j * sum(xi * k for xi, k in zip(xa, ks))) if ks else 1.0
            return phase * num / (sym - lam)

        val, _, _ = self._integrate(integrand)
        return complex(val)

    def psi_on_box(self, lam: float, radius: int) -> np.ndarray:
        """``psi_lam`` sampled on ``{-radius..radius}^d`` via an inverse FFT of the
        trapezoidal grid."""
        self.check_domain(lam)
        d = self.params.dim
        N = max(self.qs.N, 1 << int(np.ceil(np.log2(4 * radius + 4))))
        k1 = 2 * np.pi * np.arange(N) / N
        grids = np.meshgrid(*([k1] * d), indexing="ij", sparse=True)
        num = sum(self.dv.plus[j] * np.exp(-1j * grids[j]) + self.dv.minus[j] * np.exp(1j * grids[j])
                  for j in range(d))
        sym = self.ds.aPhi + sum(2 * abs(self.ds.alpha[j]) * np.cos(grids[j] + self.ds.theta[j])
                                 for j in range(d))
        field_ = np.fft.ifftn(np.broadcast_to(num / (sym - lam), (N,) * d))
        idx = np.arange(-radius, radius + 1) % N
        return field_[np.ix_(*([idx] * d))]


def f_of_lambda(lam, params, scheme, qs=None) -> Estimate:
    return GapFunction(params, scheme, qs).value(lam)


def f_prime(lam, params, scheme, qs=None) -> Estimate:
    return GapFunction(params, scheme, qs).derivative(lam)


def psi_lambda_at(x, lam, params, scheme, qs=None) -> complex:
    return GapFunction(params, scheme, qs).psi_at(x, lam)


def residual_radius(gf: GapFunction, lam: float, target: float = 1e-14) -> int:
    lo, hi = gf.band
    dist = max(lo - lam, lam - hi)
    r = decay_rate(dist, gf.ds.lambda_q)
    need = 4 if r <= 0 else int(np.ceil(np.log(target) / np.log(r))) + 2
    cap = {1: 2000, 2: 600, 3: 60}.get(gf.params.dim, 12)
    return int(np.clip(need, 4, cap))


def feshbach_residual(lam, params, scheme, qs=None, radius: int | None = None) -> float:
    """``||F(lam) psi_lam||`` with the Feshbach map built from the full discriminant stencil."""
    gf = GapFunction(params, scheme, qs)
    if abs(lam - gf.ds.aOmega) < TOL:
        raise DomainError(f"lambda={lam} equals aOmega; the Feshbach map is undefined")
    radius = residual_radius(gf, lam) if radius is None else radius
    box = LatticeBox(params.dim, radius, "truncate_zero")
    stencil = DiscriminantStencil.build(params, scheme, box)
    o = box.origin
    u = gf.psi_on_box(lam, radius)
    u[o] = 0.0
    w = stencil.apply(u) - lam * u
    w[o] = 0.0
    delta = np.zeros(box.shape, dtype=complex)
    delta[o] = 1.0
    s = stencil.apply(u)[o]
    coupling = stencil.apply(delta)
    coupling[o] = 0.0
    out = w - coupling * s / (gf.ds.aOmega - lam)
    return float(np.linalg.norm(out))


@dataclass
class GapSearch:
    """Record of a zero search in one spectral gap."""

    gap: str
    nonempty: bool
    outer: float | None = None
    f_outer: Estimate | None = None
    inner_signs: list[tuple[float, float, float]] = field(default_factory=list)
    inner_sign: int = 0
    stabilized: bool = False
    condition: bool = False
    bracket: tuple[float, float] | None = None
    zero: float | None = None
    f_zero: Estimate | None = None
    iterations: int = 0
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "gap": self.gap, "nonempty": self.nonempty, "outer": self.outer,
            "f_outer": None if self.f_outer is None else list(self.f_outer),
            "inner_samples": [{"lambda": l, "f": v, "error": e} for l, v, e in self.inner_signs],
            "inner_sign": self.inner_sign, "stabilized": self.stabilized,
            "sign_condition": self.condition,
            "bracket": None if self.bracket is None else list(self.bracket),
            "zero": self.zero,
            "f_zero": None if self.f_zero is None else list(self.f_zero),
            "iterations": self.iterations, "note": self.note,
        }


def _require_certifiable(params: ShiftParams, scheme: CoinScheme) -> list[int]:
    if params.dim < 2:
        raise ModelError("certification requires dim >= 2")
    if not validate_params(params, scheme).ok:
        raise ModelError("model fails set membership or normalization")
    if not assumption_ratio_holds(scheme):
        raise ModelError("coin scheme violates the bilinear orthogonality / coupling assumption")
    axes = admissible_axes(params, scheme)
    if not axes:
        raise ModelError("(p, q) lies in no admissible D_l (p_l q_l = 0 on every coupled axis)")
    return axes


def search_gap(gap: str, params, scheme, qs=None, gf: GapFunction | None = None) -> GapSearch:
    """Decide the endpoint sign conditions for a gap and bisect when they hold."""
    if gap not in ("lower", "upper"):
        raise ValueError(f"gap must be 'lower' or 'upper', got {gap!r}")
    _require_certifiable(params, scheme)
    gf = gf or GapFunction(params, scheme, qs)
    lo, hi = gf.band
    # orientation: s = +1 for the upper gap, -1 for the lower one
    s = 1 if gap == "upper" else -1
    edge, outer = (hi, 1.0) if s > 0 else (lo, -1.0)
    res = GapSearch(gap, nonempty=(outer - edge) * s >= EPS_EDGE, outer=outer)
    if not res.nonempty:
        res.note = "gap empty: band reaches the endpoint"
        return res
    res.f_outer = gf.value(outer)
    signs = []
    inner_point = None
    for eps in EDGE_SEQUENCE:
        lam = edge + s * eps
        if (outer - lam) * s < 0:
            continue
        v, e = gf.value(lam)
        res.inner_signs.append((lam, v, e))
        if abs(v) > DIVERGENCE:
            signs.append(int(np.sign(v)))
            inner_point = lam
            res.note = "divergence detected at the inner edge"
            break
        if abs(v) > e:
            signs.append(int(np.sign(v)))
            inner_point = lam
    if not signs:
        res.note = "inner-edge sign not resolved by quadrature"
        return res
    res.inner_sign = signs[-1]
    res.stabilized = len(set(signs[-3:])) == 1
    fo, eo = res.f_outer
    if abs(fo) <= eo and fo != 0:
        raise QuadratureError(f"sign of f at lambda={outer} unresolved (|f|={abs(fo):.3g} <= err={eo:.3g})")
    # (L): f(-1) <= 0 < f(edge-);  (R): f(1) >= 0 > f(edge+)
    res.condition = (s * fo >= 0) and (s * res.inner_sign < 0)
    if not res.condition:
        res.note = res.note or "sign conditions fail: no zero in this gap"
        return res
    if fo == 0:
        res.zero, res.f_zero, res.bracket = outer, res.f_outer, (outer, outer)
        return res
    a, b = sorted((inner_point, outer))
    # f is increasing: negative side is the left end
    res.bracket = (a, b)
    while True:
        res.iterations += 1
        mid = 0.5 * (a + b)
        v, e = gf.value(mid)
        if abs(v) < F_TOL or b - a < WIDTH_TOL:
            if e > F_TOL and abs(v) <= e:
                raise QuadratureError(
                    f"quadrature error {e:.3g} exceeds the bisection tolerance at lambda={mid}; "
                    "increase QuadratureSpec.N or R")
            res.zero, res.f_zero = mid, Estimate(v, e)
            break
        if abs(v) <= e:
            raise QuadratureError(
                f"sign of f unresolved at lambda={mid} (|f|={abs(v):.3g}, err={e:.3g}); "
                "increase QuadratureSpec.N or R")
        if v < 0:
            a = mid
        else:
            b = mid
        if res.iterations > 200:
            raise QuadratureError("bisection failed to converge")
    assert abs(res.zero - gf.ds.aOmega) > 1e-12, "zero coincides with aOmega"
    return res


def find_zero(gap: str, params, scheme, qs=None) -> float | None:
    return search_gap(gap, params, scheme, qs).zero


@dataclass
class CriteriaVerdict:
    up: bool
    down: bool
    localization_applicable: bool
    ties: list[str] = field(default_factory=list)
    values: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"up": self.up, "down": self.down, "localization_applicable": self.localization_applicable,
                "ties": list(self.ties), "values": dict(self.values)}


def criteria_check(params, scheme, p0=None) -> CriteriaVerdict:
    """Closed-form sufficient conditions for a zero in the lower (``up``) and upper
    (``down``) gaps, evaluated exactly as strict-left / non-strict-right inequalities."""
    _require_certifiable(params, scheme)
    ds = derived_scalars(params, scheme)
    lq, aO, aP, nsq = ds.lambda_q, ds.aOmega, ds.aPhi, ds.phi_q_norm_sq
    up_left = lq * (lq + aO - aP)
    up_right = (1 + aO) * ((1 + aP) ** 2 - lq ** 2) / (1 + aP)
    down_left = lq * (lq - aO + aP)
    down_right = (1 - aO) * ((1 - aP) ** 2 - lq ** 2) / (1 - aP)
    ties = []
    for name, a, b in (("up_left", up_left, nsq), ("up_right", nsq, up_right),
                       ("down_left", down_left, nsq), ("down_right", nsq, down_right)):
        if abs(a - b) <= 1e-14 * max(1.0, abs(a), abs(b)):
            ties.append(name)
    if ties:
        warnings.warn(f"criteria inequalities tied at machine precision: {ties}", RuntimeWarning)
    applicable = False
    if p0 is not None:
        applicable = check_assumption_ap0(scheme, p0)
    return CriteriaVerdict(
        up=bool(up_left < nsq <= up_right),
        down=bool(down_left < nsq <= down_right),
        localization_applicable=applicable,
        ties=ties,
        values={"phi_q_norm_sq": nsq, "up_left": up_left, "up_right": up_right,
                "down_left": down_left, "down_right": down_right},
    )


def envelopes(lam: float, ds: DerivedScalars) -> tuple[float, float]:
    """Jensen and chord envelopes of the gap function, returned as (low, high)."""
    base = lam - ds.aOmega
    gap = ds.aPhi - lam
    jensen = base + ds.phi_q_norm_sq / gap
    chord = base + gap / (gap ** 2 - ds.lambda_q ** 2) * ds.phi_q_norm_sq
    return (jensen, chord) if lam < ds.aPhi else (chord, jensen)


def bounds_check(lam, params, scheme, qs=None) -> bool:
    """True iff the gap function lies strictly inside its envelopes by more than
    the quadrature error."""
    gf = GapFunction(params, scheme, qs)
    v, e = gf.value(lam)
    low, high = envelopes(lam, gf.ds)
    margin = 0.0 if math.isnan(e) else e
    return bool(low + margin < v < high - margin)


@dataclass
class GapFunctionReport:
    gap: str
    lambdas: list[float]
    values: list[float]
    derivatives: list[float]
    errors: list[float]
    zero: float | None
    bracket: tuple[float, float] | None
    error_estimate: float

    def rows(self):
        for lam, v, dv, e in zip(self.lambdas, self.values, self.derivatives, self.errors):
            yield lam, v, dv, e

    def as_dict(self) -> dict:
        return {"gap": self.gap, "zero": self.zero,
                "bracket": None if self.bracket is None else list(self.bracket),
                "error_estimate": self.error_estimate,
                "samples": [{"lambda": l, "f": v, "f_prime": d, "error": e}
                            for l, v, d, e in self.rows()]}


def gap_ladder(gap: str, band: tuple[float, float], n: int, inset: float = 1e-3) -> np.ndarray:
    lo, hi = band
    if gap == "upper":
        start, stop = hi + inset, 1.0
    else:
        start, stop = -1.0, lo - inset
    if stop <= start:
        return np.empty(0)
    return np.linspace(start, stop, n)


def f_profile(params, scheme, qs=None, n: int = 50, search: dict | None = None) -> list[GapFunctionReport]:
    """Sample the gap function and its derivative across both gaps."""
    gf = GapFunction(params, scheme, qs)
    search = search or {}
    out = []
    for gap in ("lower", "upper"):
        lams = gap_ladder(gap, gf.band, n)
        vals, ders, errs = [], [], []
        for lam in lams:
            v = gf.value(float(lam))
            dv = gf.derivative(float(lam))
            vals.append(v.value)
            ders.append(dv.value)
            errs.append(max(v.error, dv.error))
        rec = search.get(gap)
        out.append(GapFunctionReport(
            gap=gap, lambdas=[float(x) for x in lams], values=vals, derivatives=ders,
            errors=errs, zero=None if rec is None else rec.zero,
            bracket=None if rec is None else rec.bracket,
            error_estimate=float(max(errs)) if errs else 0.0))
    return out
