"""Truncated lattice states and the walk operators ``C``, ``S``, ``d`` and ``U = SC``.

Amplitudes are stored site-major: an array of shape ``(2L+1,)*d + (2d,)``
whose last axis holds the ``d`` two-component blocks of each site.  Array
index ``L`` along every spatial axis is the origin.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .model import CoinScheme, ModelError, ShiftParams

BOUNDARY_POLICIES = ("truncate_zero", "periodic")
MAX_SITES = 50_000_000


class LightConeError(ValueError):
    """Evolution would let amplitude reach the edge of a zero-truncated box."""


@dataclass(frozen=True)
class LatticeBox:
    dim: int
    radius: int
    boundary_policy: str = "truncate_zero"

    def __post_init__(self):
        if self.dim < 1:
            raise ModelError(f"dim must be >= 1, got {self.dim}")
        if self.radius < 1:
            raise ModelError(f"box radius must be >= 1, got {self.radius}")
        if self.boundary_policy not in BOUNDARY_POLICIES:
            raise ModelError(f"unknown boundary policy {self.boundary_policy!r}")
        if self.n_sites > MAX_SITES:
            raise ModelError(f"box with {self.n_sites} sites exceeds {MAX_SITES}")

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.dim

    @property
    def n_sites(self) -> int:
        return self.side ** self.dim

    @property
    def origin(self) -> tuple[int, ...]:
        return (self.radius,) * self.dim

    def index(self, x) -> tuple[int, ...]:
        """Array index of lattice point ``x``."""
        x = tuple(int(v) for v in x)
        if len(x) != self.dim or any(abs(v) > self.radius for v in x):
            raise ModelError(f"point {x} outside box of radius {self.radius}")
        return tuple(v + self.radius for v in x)

    def coords(self) -> list[np.ndarray]:
        """Open-mesh coordinate arrays, one per axis."""
        r = np.arange(-self.radius, self.radius + 1)
        return list(np.ix_(*([r] * self.dim)))

    def sup_norm(self) -> np.ndarray:
        """``|x|_inf`` for every site."""
        out = np.zeros(self.shape, dtype=int)
        for c in self.coords():
            out = np.maximum(out, np.abs(c))
        return out


@dataclass
class LatticeState:
    box: LatticeBox
    amplitudes: np.ndarray

    def __post_init__(self):
        expected = self.box.shape + (2 * self.box.dim,)
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != expected:
            raise ModelError(f"amplitudes shape {self.amplitudes.shape} != {expected}")

    @classmethod
    def zeros(cls, box: LatticeBox) -> "LatticeState":
        return cls(box, np.zeros(box.shape + (2 * box.dim,), dtype=complex))

    @classmethod
    def delta(cls, box: LatticeBox, vec, x=None) -> "LatticeState":
        state = cls.zeros(box)
        idx = box.origin if x is None else box.index(x)
        state.amplitudes[idx] = np.asarray(vec, dtype=complex)
        return state

    @classmethod
    def random(cls, box: LatticeBox, rng: np.random.Generator) -> "LatticeState":
        shape = box.shape + (2 * box.dim,)
        amp = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        return cls(box, amp / np.linalg.norm(amp))

    @property
    def vector(self) -> np.ndarray:
        return self.amplitudes.reshape(-1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))

    def normalized(self) -> "LatticeState":
        return LatticeState(self.box, self.amplitudes / self.norm())

    def support_radius(self) -> int:
        """Largest ``|x|_inf`` carrying nonzero amplitude (-1 for the zero state)."""
        mask = np.any(self.amplitudes != 0, axis=-1)
        if not mask.any():
            return -1
        return int(self.box.sup_norm()[mask].max())

    def embed(self, box: LatticeBox) -> "LatticeState":
        """Copy into a larger box centred on the same origin."""
        if box.dim != self.box.dim or box.radius < self.box.radius:
            raise ModelError("target box must have the same dim and a radius at least as large")
        out = LatticeState.zeros(box)
        off = box.radius - self.box.radius
        sl = tuple(slice(off, off + self.box.side) for _ in range(box.dim))
        out.amplitudes[sl] = self.amplitudes
        return LatticeState(box, out.amplitudes)


@dataclass
class ScalarLatticeState:
    box: LatticeBox
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.box.shape:
            raise ModelError(f"values shape {self.values.shape} != {self.box.shape}")

    @classmethod
    def delta(cls, box: LatticeBox, x=None) -> "ScalarLatticeState":
        vals = np.zeros(box.shape, dtype=complex)
        vals[box.origin if x is None else box.index(x)] = 1.0
        return cls(box, vals)

    @classmethod
    def random(cls, box: LatticeBox, rng: np.random.Generator) -> "ScalarLatticeState":
        v = rng.standard_normal(box.shape) + 1j * rng.standard_normal(box.shape)
        return cls(box, v / np.linalg.norm(v))

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def translate(f: np.ndarray, axis: int, step: int, policy: str) -> np.ndarray:
    """Return ``g`` with ``g(x) = f(x + step*e_axis)``; reads outside the box give 0
    unless the policy is periodic."""
    if policy == "periodic":
        return np.roll(f, -step, axis=axis)
    out = np.zeros_like(f)
    n = f.shape[axis]
    src = [slice(None)] * f.ndim
    dst = [slice(None)] * f.ndim
    if step > 0:
        src[axis], dst[axis] = slice(step, n), slice(0, n - step)
    else:
        src[axis], dst[axis] = slice(0, n + step), slice(-step, n)
    out[tuple(dst)] = f[tuple(src)]
    return out


def _check(state_box: LatticeBox, dim: int) -> None:
    if state_box.dim != dim:
        raise ModelError(f"state dim {state_box.dim} does not match model dim {dim}")


def apply_coin(state: LatticeState, scheme: CoinScheme) -> LatticeState:
    _check(state.box, scheme.dim)
    C1 = 2 * np.outer(scheme.Phi, scheme.Phi.conj()) - np.eye(2 * scheme.dim)
    C0 = 2 * np.outer(scheme.Omega, scheme.Omega.conj()) - np.eye(2 * scheme.dim)
    out = state.amplitudes @ C1.T
    o = state.box.origin
    out[o] = C0 @ state.amplitudes[o]
    return LatticeState(state.box, out)


def apply_shift(state: LatticeState, params: ShiftParams) -> LatticeState:
    _check(state.box, params.dim)
    amp = state.amplitudes
    out = np.empty_like(amp)
    policy = state.box.boundary_policy
    for j in range(params.dim):
        p, q = params.p[j], params.q[j]
        up, down = amp[..., 2 * j], amp[..., 2 * j + 1]
        out[..., 2 * j] = p * up + q * translate(down, j, +1, policy)
        out[..., 2 * j + 1] = np.conj(q) * translate(up, j, -1, policy) - p * down
    return LatticeState(state.box, out)


def step(state: LatticeState, params: ShiftParams, scheme: CoinScheme) -> LatticeState:
    return apply_shift(apply_coin(state, scheme), params)


def check_light_cone(state: LatticeState, t: int) -> None:
    if state.box.boundary_policy != "truncate_zero":
        return
    r = max(state.support_radius(), 0)
    if r + t > state.box.radius - 1:
        raise LightConeError(
            f"{t} steps from support radius {r} reach beyond radius "
            f"{state.box.radius - 1}; enlarge the box to at least {r + t + 1}")


def evolve(state: LatticeState, params: ShiftParams, scheme: CoinScheme, t: int) -> LatticeState:
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    check_light_cone(state, t)
    for _ in range(t):
        state = step(state, params, scheme)
    return state


def probability_distribution(state: LatticeState) -> np.ndarray:
    return np.sum(np.abs(state.amplitudes) ** 2, axis=-1)


def coisometry_d(state: LatticeState, scheme: CoinScheme) -> ScalarLatticeState:
    _check(state.box, scheme.dim)
    vals = state.amplitudes @ scheme.Phi.conj()
    o = state.box.origin
    vals[o] = scheme.Omega.conj() @ state.amplitudes[o]
    return ScalarLatticeState(state.box, vals)


def coisometry_d_star(f: ScalarLatticeState, scheme: CoinScheme) -> LatticeState:
    _check(f.box, scheme.dim)
    amp = f.values[..., None] * scheme.Phi
    o = f.box.origin
    amp[o] = f.values[o] * scheme.Omega
    return LatticeState(f.box, amp)


def return_probability_series(params: ShiftParams, scheme: CoinScheme,
                              initial: LatticeState, T_max: int, x=None):
    """Return ``P(X_t = x)`` for ``t = 0..T_max`` and its running time average.

    ``x`` defaults to the origin.
    """
    check_light_cone(initial, T_max)
    idx = initial.box.origin if x is None else initial.box.index(x)
    series = np.empty(T_max + 1)
    state = initial
    for t in range(T_max + 1):
        if t:
            state = step(state, params, scheme)
        series[t] = float(np.sum(np.abs(state.amplitudes[idx]) ** 2))
    running = np.cumsum(series) / np.arange(1, T_max + 2)
    return series, running


def _flat_sites(box: LatticeBox) -> np.ndarray:
    return np.arange(box.n_sites).reshape(box.shape)


def _neighbour(box: LatticeBox, axis: int, step: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat site index of ``x + step*e_axis`` and a validity mask."""
    sites = _flat_sites(box)
    if box.boundary_policy == "periodic":
        return np.roll(sites, -step, axis=axis), np.ones(box.shape, dtype=bool)
    nb = translate(sites + 1, axis, step, "truncate_zero") - 1
    return nb, nb >= 0


def shift_matrix(params: ShiftParams, box: LatticeBox) -> sp.csr_matrix:
    """Sparse matrix of ``S`` acting on flattened amplitudes."""
    n, dd = box.n_sites, 2 * box.dim
    sites = _flat_sites(box).reshape(-1)
    rows, cols, vals = [], [], []
    for j in range(params.dim):
        p, q = params.p[j], params.q[j]
        plus, mp = _neighbour(box, j, +1)
        minus, mm = _neighbour(box, j, -1)
        plus, mp, minus, mm = (a.reshape(-1) for a in (plus, mp, minus, mm))
        up, down = 2 * j, 2 * j + 1
        rows += [sites * dd + up, sites[mp] * dd + up,
                 sites[mm] * dd + down, sites * dd + down]
        cols += [sites * dd + up, plus[mp] * dd + down,
                 minus[mm] * dd + up, sites * dd + down]
        vals += [np.full(n, p, complex), np.full(mp.sum(), q, complex),
                 np.full(mm.sum(), np.conj(q), complex), np.full(n, -p, complex)]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n * dd, n * dd))


def coin_operator_matrix(scheme: CoinScheme, box: LatticeBox) -> sp.csr_matrix:
    dd = 2 * box.dim
    C1 = 2 * np.outer(scheme.Phi, scheme.Phi.conj()) - np.eye(dd)
    C0 = 2 * np.outer(scheme.Omega, scheme.Omega.conj()) - np.eye(dd)
    blocks = [C1] * box.n_sites
    blocks[int(np.ravel_multi_index(box.origin, box.shape))] = C0
    return sp.block_diag(blocks, format="csr")


def evolution_matrix(params: ShiftParams, scheme: CoinScheme, box: LatticeBox) -> sp.csr_matrix:
    """Sparse matrix of ``U = SC`` on the box."""
    return (shift_matrix(params, box) @ coin_operator_matrix(scheme, box)).tocsr()
