"""Model parameters, derived scalars, coin matrices and admissibility checks.

The walk lives on ``Z^d`` with ``2d`` internal states per site, arranged as
``d`` blocks of two components.  Block ``j`` is moved by the split-step shift
along axis ``j`` with parameters ``(p_j, q_j)``.  The coin is
``2|chi(x)><chi(x)| - 1`` with ``chi = Omega`` at the origin and ``chi = Phi``
everywhere else.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TOL = 1e-12

SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA3 = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_MINUS = SIGMA_PLUS.conj().T


class ModelError(ValueError):
    """Raised when model inputs are structurally inconsistent."""


def _as_vector(values, dtype, name: str) -> np.ndarray:
    arr = np.array(values, dtype=dtype).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ShiftParams:
    """Point ``(p, q)`` parameterizing the shift.

    Membership in the set ``p_j**2 + |q_j|**2 = 1`` is not enforced here so
    that invalid inputs can still be reported by :func:`validate_params`.
    """

    dim: int
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ModelError(f"dim must be >= 1, got {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "p", _as_vector(self.p, float, "p"))
        object.__setattr__(self, "q", _as_vector(self.q, complex, "q"))
        if self.p.size != self.dim or self.q.size != self.dim:
            raise ModelError(
                f"p and q must have length dim={self.dim}, "
                f"got {self.p.size} and {self.q.size}")

    @classmethod
    def from_p(cls, p, phases=None) -> "ShiftParams":
        """Build params with ``|q_j| = sqrt(1 - p_j**2)`` and optional phases."""
        p = np.asarray(p, dtype=float)
        mod = np.sqrt(np.clip(1.0 - p**2, 0.0, None))
        if phases is not None:
            mod = mod * np.exp(1j * np.asarray(phases, dtype=float))
        return cls(p.size, p, mod)


@dataclass(frozen=True)
class CoinScheme:
    """Bulk (``Phi``) and defect (``Omega``) coin eigenvectors in ``C^(2d)``."""

    dim: int
    Phi: np.ndarray
    Omega: np.ndarray

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ModelError(f"dim must be >= 1, got {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "Phi", _as_vector(self.Phi, complex, "Phi"))
        object.__setattr__(self, "Omega", _as_vector(self.Omega, complex, "Omega"))
        if self.Phi.size != 2 * self.dim or self.Omega.size != 2 * self.dim:
            raise ModelError(
                f"Phi and Omega must have length 2*dim={2 * self.dim}, "
                f"got {self.Phi.size} and {self.Omega.size}")

    def blocks(self, which: str = "Phi") -> np.ndarray:
        """Return the ``(d, 2)`` array of two-component blocks."""
        vec = self.Phi if which == "Phi" else self.Omega
        return vec.reshape(self.dim, 2)


@dataclass(frozen=True)
class DerivedScalars:
    aPhi: float
    aOmega: float
    alpha: np.ndarray
    theta: np.ndarray
    lambda_q: float
    phi_q_norm_sq: float

    @property
    def band(self) -> tuple[float, float]:
        return (self.aPhi - self.lambda_q, self.aPhi + self.lambda_q)


@dataclass
class CheckResult:
    name: str
    passed: bool
    residual: float = 0.0
    required: bool = True
    detail: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed),
                "residual": float(self.residual), "required": self.required,
                "detail": self.detail}


@dataclass
class ValidationReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        """True when every required check passed."""
        return all(c.passed for c in self.checks if c.required)

    def failed(self, required_only: bool = True) -> list[CheckResult]:
        return [c for c in self.checks
                if not c.passed and (c.required or not required_only)]

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {"ok": self.ok, "checks": [c.as_dict() for c in self.checks]}


def _check_dims(params: ShiftParams, scheme: CoinScheme) -> None:
    if params.dim != scheme.dim:
        raise ModelError(
            f"dimension mismatch: params.dim={params.dim}, scheme.dim={scheme.dim}")


def validate_params(params: ShiftParams, scheme: CoinScheme) -> ValidationReport:
    """Check set membership of ``(p, q)`` and normalization of ``Phi``, ``Omega``."""
    _check_dims(params, scheme)
    report = ValidationReport()
    for j in range(params.dim):
        res = abs(params.p[j] ** 2 + abs(params.q[j]) ** 2 - 1.0)
        report.checks.append(CheckResult(
            f"D_membership[{j + 1}]", res < TOL, res,
            detail=f"p_{j + 1}^2 + |q_{j + 1}|^2 - 1"))
    for name in ("Phi", "Omega"):
        res = abs(np.linalg.norm(getattr(scheme, name)) - 1.0)
        report.checks.append(CheckResult(f"{name}_normalized", res < TOL, res))
    return report


def a_value(vec: np.ndarray, p) -> float:
    """``sum_j p_j <v_j, sigma3 v_j>`` for a coin eigenvector ``vec``."""
    blocks = np.asarray(vec).reshape(-1, 2)
    diag = np.abs(blocks[:, 0]) ** 2 - np.abs(blocks[:, 1]) ** 2
    return float(np.dot(np.asarray(p, dtype=float), diag))


def defect_couplings(scheme: CoinScheme) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis forms ``<Phi_j, sigma_+ Omega_j>`` and ``<Phi_j, sigma_- Omega_j>``."""
    Phi, Om = scheme.blocks("Phi"), scheme.blocks("Omega")
    plus = Phi[:, 0].conj() * Om[:, 1]
    minus = Phi[:, 1].conj() * Om[:, 0]
    return plus, minus


def derived_scalars(params: ShiftParams, scheme: CoinScheme) -> DerivedScalars:
    _check_dims(params, scheme)
    Phi = scheme.blocks("Phi")
    alpha = params.q * Phi[:, 0].conj() * Phi[:, 1]
    mod = np.abs(alpha)
    theta = np.where(mod > 0, np.mod(np.angle(alpha), 2 * np.pi), 0.0)
    plus, minus = defect_couplings(scheme)
    norm_sq = float(np.sum(np.abs(params.q) ** 2
                           * (np.abs(plus) ** 2 + np.abs(minus) ** 2)))
    return DerivedScalars(
        aPhi=a_value(scheme.Phi, params.p),
        aOmega=a_value(scheme.Omega, params.p),
        alpha=alpha,
        theta=theta,
        lambda_q=float(2 * mod.sum()),
        phi_q_norm_sq=norm_sq,
    )


def coin_matrix(scheme: CoinScheme, at_defect: bool) -> np.ndarray:
    chi = scheme.Omega if at_defect else scheme.Phi
    return 2 * np.outer(chi, chi.conj()) - np.eye(chi.size)


def check_assumption_ratio(scheme: CoinScheme) -> dict:
    """Bilinear orthogonality per axis and the set of axes with nonzero defect coupling.

    Returned indices are 1-based, matching axis labels in reports.
    """
    Phi, Om = scheme.blocks("Phi"), scheme.blocks("Omega")
    # bilinear product, no conjugation
    bilinear = Phi[:, 0] * Om[:, 1] + Phi[:, 1] * Om[:, 0]
    plus, _ = defect_couplings(scheme)
    return {
        "condition_a": [bool(abs(b) < TOL) for b in bilinear],
        "valid_l": {j + 1 for j in range(scheme.dim) if abs(plus[j]) > TOL},
        "residuals": [float(abs(b)) for b in bilinear],
    }


def assumption_ratio_holds(scheme: CoinScheme) -> bool:
    r = check_assumption_ratio(scheme)
    return all(r["condition_a"]) and bool(r["valid_l"])


def check_in_Dl(params: ShiftParams, l: int) -> bool:
    """Whether ``p_l q_l != 0`` (``l`` is 1-based)."""
    if not 1 <= l <= params.dim:
        raise ModelError(f"axis index l={l} outside 1..{params.dim}")
    return bool(params.p[l - 1] != 0 and params.q[l - 1] != 0)


def admissible_axes(params: ShiftParams, scheme: CoinScheme) -> list[int]:
    """Axes ``l`` with nonzero defect coupling for which ``(p, q)`` lies in ``D_l``."""
    valid = check_assumption_ratio(scheme)["valid_l"]
    return sorted(l for l in valid if check_in_Dl(params, l))


def check_assumption_ap0(scheme: CoinScheme, p0) -> bool:
    p0 = np.asarray(p0, dtype=float).reshape(-1)
    if p0.size != scheme.dim or not np.all(np.isin(p0, (-1.0, 1.0))):
        raise ModelError(f"p0 must be a vector in {{-1, 1}}^{scheme.dim}, got {p0.tolist()}")
    return abs(a_value(scheme.Omega, p0) - a_value(scheme.Phi, p0)) > TOL


def check_neq_pm1(ds: DerivedScalars) -> bool:
    gaps = [abs(a - s) for a in (ds.aPhi, ds.aOmega) for s in (1.0, -1.0)]
    return min(gaps) > TOL


def full_validation(params: ShiftParams, scheme: CoinScheme, p0=None) -> ValidationReport:
    """Structural checks plus the certification assumptions.

    Set membership and normalization are required; the assumption checks are
    recorded with ``required=False`` because models violating them (e.g. the
    translation-invariant control) are still valid inputs to the oracle.
    """
    report = validate_params(params, scheme)
    ratio = check_assumption_ratio(scheme)
    for j, (ok, res) in enumerate(zip(ratio["condition_a"], ratio["residuals"])):
        report.checks.append(CheckResult(
            f"bilinear_orthogonality[{j + 1}]", ok, res, required=False,
            detail="Phi_j . (sigma1 Omega_j) = 0 (bilinear)"))
    report.checks.append(CheckResult(
        "defect_coupling", bool(ratio["valid_l"]), 0.0, required=False,
        detail=f"valid_l={sorted(ratio['valid_l'])}"))
    axes = admissible_axes(params, scheme) if report.ok else []
    report.checks.append(CheckResult(
        "in_D_l", bool(axes), 0.0, required=False, detail=f"admissible l={axes}"))
    if p0 is not None:
        ok = check_assumption_ap0(scheme, p0)
        diff = a_value(scheme.Omega, p0) - a_value(scheme.Phi, p0)
        report.checks.append(CheckResult(
            "p0_separation", ok, abs(diff), required=False,
            detail=f"aOmega(p0) - aPhi(p0) = {diff:.6g}"))
    if report.ok:
        ds = derived_scalars(params, scheme)
        report.checks.append(CheckResult(
            "a_neq_pm1", check_neq_pm1(ds), 0.0, required=False,
            detail=f"aPhi={ds.aPhi:.6g}, aOmega={ds.aOmega:.6g}"))
    return report


def single_axis_example(p=(0.9, 0.9)) -> tuple[ShiftParams, CoinScheme]:
    """The two-dimensional single-axis defect example used throughout the tests."""
    s2 = np.sqrt(2.0)
    scheme = CoinScheme(2, np.array([1, 1, 0, 0]) / s2, np.array([1, -1, s2, 0]) / 2)
    return ShiftParams.from_p(p), scheme
