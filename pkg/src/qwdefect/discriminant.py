"""The discriminant ``T = d S d*`` as a lattice stencil, its free part ``T0`` and the
truncated-matrix eigensolver used as an independent oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .evolution import LatticeBox, ScalarLatticeState, translate
from .model import TOL, CoinScheme, DerivedScalars, ModelError, ShiftParams, derived_scalars

DENSE_BUDGET = 5000
BAND_MARGIN = 5e-3
SHELL_THRESHOLD = 0.01
FALLBACK_L = {1: 60, 2: 15, 3: 7}


class BudgetError(ValueError):
    """The dense truncated matrix would exceed the eigensolve budget."""


@dataclass
class DiscriminantStencil:
    """Sampled coefficient fields of ``T`` on a box.

    ``hop_plus[j][x]`` multiplies ``f(x + e_j)`` and ``hop_minus[j][x]``
    multiplies ``f(x - e_j)``.
    """

    box: LatticeBox
    onsite: np.ndarray
    hop_plus: list[np.ndarray]
    hop_minus: list[np.ndarray]

    @classmethod
    def build(cls, params: ShiftParams, scheme: CoinScheme, box: LatticeBox) -> "DiscriminantStencil":
        if box.dim != params.dim or box.dim != scheme.dim:
            raise ModelError("box, params and scheme dimensions differ")
        if box.radius < 2:
            raise ModelError("discriminant stencil needs a box radius >= 2")
        ds = derived_scalars(params, scheme)
        o = box.origin
        onsite = np.full(box.shape, ds.aPhi, dtype=float)
        onsite[o] = ds.aOmega
        Phi, Om = scheme.blocks("Phi"), scheme.blocks("Omega")
        hop_plus, hop_minus = [], []
        for j in range(box.dim):
            chi1 = np.full(box.shape, Phi[j, 0], dtype=complex)
            chi2 = np.full(box.shape, Phi[j, 1], dtype=complex)
            chi1[o], chi2[o] = Om[j, 0], Om[j, 1]
            hp = params.q[j] * chi1.conj() * translate(chi2, j, +1, box.boundary_policy)
            hop_plus.append(hp)
            hop_minus.append(translate(hp, j, -1, box.boundary_policy).conj())
        return cls(box, onsite, hop_plus, hop_minus)

    def apply(self, f: np.ndarray) -> np.ndarray:
        policy = self.box.boundary_policy
        out = self.onsite * f
        for j, (hp, hm) in enumerate(zip(self.hop_plus, self.hop_minus)):
            out = out + hp * translate(f, j, +1, policy) + hm * translate(f, j, -1, policy)
        return out


def apply_T(f: ScalarLatticeState, params: ShiftParams, scheme: CoinScheme) -> ScalarLatticeState:
    stencil = DiscriminantStencil.build(params, scheme, f.box)
    return ScalarLatticeState(f.box, stencil.apply(f.values))


def apply_T0(f: ScalarLatticeState, params: ShiftParams, scheme: CoinScheme) -> ScalarLatticeState:
    ds = derived_scalars(params, scheme)
    policy = f.box.boundary_policy
    out = ds.aPhi * f.values
    for j, a in enumerate(ds.alpha):
        out = out + a * translate(f.values, j, +1, policy) + np.conj(a) * translate(f.values, j, -1, policy)
    return ScalarLatticeState(f.box, out)


def symbol_T0hat(k, ds: DerivedScalars) -> np.ndarray:
    """Fourier symbol of ``T0``; ``k`` has its axis components on the last axis."""
    k = np.asarray(k, dtype=float)
    return ds.aPhi + np.sum(2 * np.abs(ds.alpha) * np.cos(k + ds.theta), axis=-1)


def essential_band(ds: DerivedScalars) -> tuple[float, float]:
    return ds.band


def band_full_check(params: ShiftParams, scheme: CoinScheme) -> tuple[bool, bool, bool]:
    """Evaluate the three equivalent full-band conditions independently.

    The third condition is evaluated over axes with a nonzero bulk block; an
    axis with ``Phi_j = 0`` does not contribute to the band and places no
    constraint on ``p_j``.
    """
    ds = derived_scalars(params, scheme)
    lo, hi = essential_band(ds)
    full = abs(lo + 1) < TOL and abs(hi - 1) < TOL
    unit = abs(ds.lambda_q - 1) < TOL
    Phi = scheme.blocks("Phi")
    live = np.linalg.norm(Phi, axis=1) > TOL
    balanced = np.abs(np.abs(Phi[:, 0]) - np.abs(Phi[:, 1])) < TOL
    axes = bool(np.all((np.abs(params.p) < TOL)[live]) and np.all(balanced[live]))
    return full, unit, axes


def _flat(box: LatticeBox) -> np.ndarray:
    return np.arange(box.n_sites).reshape(box.shape)


def truncated_sparse(params: ShiftParams, scheme: CoinScheme, L: int,
                     boundary: str = "truncate_zero") -> sp.csr_matrix:
    box = LatticeBox(params.dim, L, boundary)
    st = DiscriminantStencil.build(params, scheme, box)
    sites = _flat(box)
    rows, cols, vals = [], [], []
    for j, hp in enumerate(st.hop_plus):
        if boundary == "periodic":
            nb, mask = np.roll(sites, -1, axis=j), np.ones(box.shape, bool)
        else:
            nb = translate(sites + 1, j, +1, "truncate_zero") - 1
            mask = nb >= 0
        rows.append(sites[mask])
        cols.append(nb[mask])
        vals.append(hp[mask])
    upper = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(box.n_sites, box.n_sites))
    diag = sp.diags(st.onsite.reshape(-1).astype(complex))
    return (diag + upper + upper.conj().T).tocsr()


def truncated_matrix(params: ShiftParams, scheme: CoinScheme, L: int,
                     boundary: str = "truncate_zero", budget: int = DENSE_BUDGET) -> np.ndarray:
    """Dense Hermitian finite section of ``T`` on ``{-L..L}^d``."""
    order = (2 * L + 1) ** params.dim
    if order > budget:
        raise BudgetError(
            f"order {order} exceeds dense budget {budget}; use the sparse path "
            "(oracle_point_spectrum(..., method='sparse'))")
    return truncated_sparse(params, scheme, L, boundary).toarray()


@dataclass
class OracleEigen:
    value: float
    decay_score: float
    kept: bool
    gap: str

    def as_dict(self) -> dict:
        return {"value": self.value, "decay_score": self.decay_score,
                "kept": self.kept, "gap": self.gap}


@dataclass
class OracleResult:
    L: int
    band: tuple[float, float]
    eigenvalues: list[OracleEigen] = field(default_factory=list)
    method: str = "dense"
    vectors: dict = field(default_factory=dict, repr=False)

    def kept(self, gap: str | None = None) -> list[float]:
        return [e.value for e in self.eigenvalues
                if e.kept and (gap is None or e.gap == gap)]

    def as_dict(self) -> dict:
        return {"L": self.L, "band": list(self.band), "method": self.method,
                "eigenvalues": [e.as_dict() for e in self.eigenvalues]}


def decay_rate(distance: float, lambda_q: float) -> float:
    """Per-site decay ratio of the free resolvent kernel at ``distance`` from the band."""
    if lambda_q <= 0:
        return 0.0
    a = distance + lambda_q
    return (a - np.sqrt(a * a - lambda_q * lambda_q)) / lambda_q


def default_oracle_L(ds: DerivedScalars, dim: int, lam_star: float | None = None,
                     budget: int = DENSE_BUDGET) -> int:
    """Smallest radius keeping the predicted outer-shell mass below 1e-6."""
    fallback = FALLBACK_L.get(dim, 5)
    lmax = int((budget ** (1.0 / dim) - 1) // 2)
    if lam_star is None:
        return min(fallback, lmax)
    lo, hi = ds.band
    dist = max(lo - lam_star, lam_star - hi, 1e-12)
    r = decay_rate(dist, ds.lambda_q)
    if r <= 0:
        return min(fallback, lmax)
    # shell |x| > L/2 carries mass ~ r**L
    need = int(np.ceil(np.log(1e-6) / np.log(r)))
    return int(np.clip(need, 4, max(lmax, 4)))


def oracle_point_spectrum(params: ShiftParams, scheme: CoinScheme, L: int,
                          boundary: str = "truncate_zero", method: str = "auto",
                          keep_vectors: bool = False) -> OracleResult:
    """Eigenvalues of the truncated ``T`` lying outside the inflated essential band.

    Each eigenvalue carries the fraction of eigenvector mass in the outer shell
    ``|x|_inf > L/2``; entries above ``SHELL_THRESHOLD`` are marked as boundary
    artifacts (``kept=False``).
    """
    ds = derived_scalars(params, scheme)
    lo, hi = essential_band(ds)
    box = LatticeBox(params.dim, L, boundary)
    order = box.n_sites
    if method == "auto":
        method = "dense" if order <= DENSE_BUDGET else "sparse"
    if method == "dense":
        w, v = la.eigh(truncated_matrix(params, scheme, L, boundary))
    elif method == "sparse":
        w, v = _sparse_gap_eigs(truncated_sparse(params, scheme, L, boundary), lo, hi)
    else:
        raise ValueError(f"unknown method {method!r}")
    shell = (box.sup_norm() > L / 2).reshape(-1)
    result = OracleResult(L, (lo, hi), method=method)
    for i in np.argsort(w):
        val = float(w[i])
        if lo - BAND_MARGIN <= val <= hi + BAND_MARGIN:
            continue
        vec = v[:, i]
        mass = np.abs(vec) ** 2
        score = float(mass[shell].sum() / mass.sum())
        gap = "lower" if val < lo else "upper"
        result.eigenvalues.append(OracleEigen(val, score, score <= SHELL_THRESHOLD, gap))
        if keep_vectors:
            result.vectors[val] = vec.reshape(box.shape)
    return result


def _sparse_gap_eigs(M: sp.csr_matrix, lo: float, hi: float, k: int = 6):
    """Shift-invert Lanczos aimed at the middle of each nonempty gap."""
    vals, vecs = [], []
    targets = []
    if lo - BAND_MARGIN > -1:
        targets.append((-1 + lo) / 2)
    if hi + BAND_MARGIN < 1:
        targets.append((1 + hi) / 2)
    for sigma in targets:
        w, v = spla.eigsh(M, k=min(k, M.shape[0] - 2), sigma=sigma, which="LM")
        vals.append(w)
        vecs.append(v)
    if not vals:
        return np.empty(0), np.empty((M.shape[0], 0))
    w = np.concatenate(vals)
    v = np.concatenate(vecs, axis=1)
    _, uniq = np.unique(np.round(w, 12), return_index=True)
    return w[uniq], v[:, uniq]
