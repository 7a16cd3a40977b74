"""Dyadic operators with matrix-valued (noncommuting) coefficients.

Side convention: a column operator multiplies by its kernel on the left,
T_c f(x) = int k(x,y) f(y) dy, and a row operator on the right,
T_r f(x) = int f(y) k(x,y) dy. This is the convention under which
T_c(f)u = T_c(fu) and uT_r(f) = T_r(uf) for constant matrices u.

Operators provided: perfect dyadic CZOs (Haar multipliers, paraproducts and
their adjoints) with a kernel-sum path and a martingale path, cancellative
Haar shifts of complexity (r, s), martingale transforms and paraproducts,
a midpoint-rule smooth-kernel operator, and the annihilation diagnostics
behind the weak type (1,1) argument.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Union

import numpy as np

from . import cuculescu as cz
from .dyadic import (CubeIndex, Grid, HaarIndex, MatFn, coarsen, haar_coeffs, haar_synth,
                     haar_values, join_block, level_diffs, level_means, lp_norm, refine,
                     sign_patterns, split_block, weak_l1_tail)
from .ncalg import adjoint, opnorm
from .records import ProbeReport

SIDES = ("column", "row")


def _check_side(side: str):
    if side not in SIDES:
        raise ValueError(f"side must be 'column' or 'row', got {side!r}")


def side_mul(coef: np.ndarray, x: np.ndarray, side: str) -> np.ndarray:
    """coef @ x on the column side, x @ coef on the row side."""
    return coef @ x if side == "column" else x @ coef


def _leaf(grid: Grid, arr: np.ndarray, k: int) -> np.ndarray:
    return refine(arr, grid.n, grid.K - k)


def _maxnorm(x: np.ndarray) -> float:
    return float(opnorm(x).max(initial=0.0)) if x.size else 0.0


def _coarse_levels(vals: np.ndarray, grid: Grid) -> list[np.ndarray]:
    return level_means(vals, grid.n, grid.K)


# ---------------------------------------------------------------------------
# martingale transforms and paraproducts


@dataclass(frozen=True, eq=False)
class TransformSpec:
    """xi[k] lives on generation k (k = 0..K-1) and acts at step k+1; rho is a symbol."""

    grid: Grid
    xi: tuple[np.ndarray, ...] | None = None
    rho: MatFn | None = None
    side: str = "column"
    kind: str = "transform"   # transform | paraproduct | paraproduct_adjoint

    def __post_init__(self):
        _check_side(self.side)
        if self.kind not in ("transform", "paraproduct", "paraproduct_adjoint"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == "transform":
            if self.xi is None or len(self.xi) != self.grid.K:
                raise ValueError(f"martingale transform needs xi_0..xi_{self.grid.K - 1}")
            for k, x in enumerate(self.xi):
                if x.shape[: self.grid.n] != self.grid.shape(k):
                    raise ValueError(f"xi_{k} must live on generation {k}")
        elif self.rho is None:
            raise ValueError("paraproducts need a symbol rho")

    @classmethod
    def from_matfns(cls, xis: list[MatFn], side: str = "column", tol: float = 1e-12) -> "TransformSpec":
        """Build from leaf functions, rejecting any xi_k that is not A_k-measurable."""
        grid = xis[0].grid
        levels = []
        for k, x in enumerate(xis):
            c = x.coarse(k)
            dev = float(np.abs(_leaf(grid, c, k) - x.values).max())
            if dev > tol * max(1.0, x.norm_inf()):
                raise ValueError(f"xi_{k} is not adapted: varies by {dev:.3e} inside generation-{k} cubes")
            levels.append(c)
        return cls(grid, tuple(levels), side=side)

    def sup_norm(self) -> float:
        if self.xi is not None:
            return max(_maxnorm(x) for x in self.xi)
        return self.rho.norm_inf()


def martingale_transform(spec: TransformSpec, f: MatFn) -> MatFn:
    """sum_k xi_{k-1} df_k (column) or sum_k df_k xi_{k-1} (row)."""
    grid = f.grid
    dfs = level_diffs(_coarse_levels(f.values, grid), grid.n)
    out = np.zeros_like(f.values)
    for k in range(1, grid.K + 1):
        xi = refine(spec.xi[k - 1], grid.n, 1)
        out = out + _leaf(grid, side_mul(xi, dfs[k], spec.side), k)
    return f.like(out)


def mart_paraproduct(spec: TransformSpec, f: MatFn) -> MatFn:
    """sum_k Delta_k(rho) E_{k-1} f (column) or sum_k E_{k-1} f Delta_k(rho) (row)."""
    grid = f.grid
    drho = level_diffs(_coarse_levels(spec.rho.values, grid), grid.n)
    means = _coarse_levels(f.values, grid)
    out = np.zeros_like(f.values)
    for k in range(1, grid.K + 1):
        prev = refine(means[k - 1], grid.n, 1)
        out = out + _leaf(grid, side_mul(drho[k], prev, spec.side), k)
    return f.like(out)


def paraproduct_adjoint(spec: TransformSpec, g: MatFn) -> MatFn:
    """Adjoint for phi(f* g): sum_k E_{k-1}(Delta_k(rho)* Delta_k g), row side E_{k-1}(Delta_k g Delta_k(rho)*)."""
    grid = g.grid
    drho = level_diffs(_coarse_levels(spec.rho.values, grid), grid.n)
    dg = level_diffs(_coarse_levels(g.values, grid), grid.n)
    out = np.zeros_like(g.values)
    for k in range(1, grid.K + 1):
        prod = side_mul(adjoint(drho[k]), dg[k], spec.side)
        out = out + _leaf(grid, coarsen(prod, grid.n, 1), k - 1)
    return g.like(out)


def apply_transform(spec: TransformSpec, f: MatFn) -> MatFn:
    if spec.kind == "transform":
        return martingale_transform(spec, f)
    if spec.kind == "paraproduct":
        return mart_paraproduct(spec, f)
    return paraproduct_adjoint(spec, f)


# ---------------------------------------------------------------------------
# perfect dyadic operators


PERFECT_KINDS = ("haar_multiplier", "paraproduct", "paraproduct_adjoint")


@dataclass(frozen=True, eq=False)
class PerfectDyadicSpec:
    kind: str
    grid: Grid
    xi: tuple[np.ndarray, ...] | None = None   # xi(Q) for Q of generation 0..K-1
    rho: MatFn | None = None
    side: str = "column"

    def __post_init__(self):
        _check_side(self.side)
        if self.kind not in PERFECT_KINDS:
            raise ValueError(f"unknown perfect dyadic kind {self.kind!r}; choose from {PERFECT_KINDS}")
        if self.kind == "haar_multiplier":
            if self.xi is None or len(self.xi) != self.grid.K:
                raise ValueError("Haar multiplier needs one coefficient per cube of generation 0..K-1")
        elif self.rho is None:
            raise ValueError("paraproducts need a symbol rho")

    def as_transform(self) -> TransformSpec:
        kind = {"haar_multiplier": "transform"}.get(self.kind, self.kind)
        return TransformSpec(self.grid, self.xi, self.rho, self.side, kind)


def _cube_ids(grid: Grid, k: int) -> np.ndarray:
    """Generation-k cube id of every leaf, flattened in row-major leaf order."""
    ids = np.arange(2 ** (grid.n * k)).reshape(grid.shape(k))
    return refine(ids, grid.n, grid.K - k).ravel()


def perfect_dyadic_kernel(spec: PerfectDyadicSpec) -> np.ndarray:
    """Dense kernel k(x, y) on leaf pairs, shape (N, N, d, d), summed from the defining displays."""
    grid = spec.grid
    N = grid.leaves
    ker = None
    for k in range(1, grid.K + 1):
        same_k = (_cube_ids(grid, k)[:, None] == _cube_ids(grid, k)[None, :]).astype(float)
        same_p = (_cube_ids(grid, k - 1)[:, None] == _cube_ids(grid, k - 1)[None, :]).astype(float)
        vol_q = 2.0 ** (-grid.n * k)
        vol_p = 2.0 ** (-grid.n * (k - 1))
        if spec.kind == "haar_multiplier":
            # xi(Q^) / |Q| 1_Q(x) (1_Q - 2^{-n} 1_{Q^})(y)
            coef = _leaf(grid, refine(spec.xi[k - 1], grid.n, 1), k).reshape(N, *spec.xi[0].shape[-2:])
            weight = same_k / vol_q - same_p / vol_p
            term = weight[:, :, None, None] * coef[:, None]
        else:
            drho = level_diffs(_coarse_levels(spec.rho.values, grid), grid.n)[k]
            dr = _leaf(grid, drho, k).reshape(N, *drho.shape[-2:])
            if spec.kind == "paraproduct":
                # (rho_Q - rho_{Q^}) / |Q| 1_Q(x) 2^{-n} 1_{Q^}(y)
                term = (same_p / vol_p)[:, :, None, None] * dr[:, None]
            else:
                # adjoint kernel k(y, x)*
                term = (same_p / vol_p)[:, :, None, None] * adjoint(dr)[None, :]
        ker = term if ker is None else ker + term
    return ker


def apply_kernel(ker: np.ndarray, f: MatFn, side: str) -> MatFn:
    """T f(x) = sum_y |leaf| k(x,y) f(y) (column) or f(y) k(x,y) (row)."""
    F = f.values.reshape(-1, f.d, f.d)
    vol = f.grid.leaf_volume
    if side == "column":
        out = np.einsum("xyij,yjk->xik", ker, F) * vol
    else:
        out = np.einsum("yij,xyjk->xik", F, ker) * vol
    return f.like(out.reshape(f.values.shape))


def apply_perfect_dyadic(spec: PerfectDyadicSpec, f: MatFn, path: str = "martingale") -> MatFn:
    """Evaluate by the martingale form (default) or by the dense kernel sum (``path="kernel"``)."""
    if f.grid.K != spec.grid.K or f.grid.n != spec.grid.n:
        raise ValueError("function grid does not match the operator grid")
    if path == "kernel":
        return apply_kernel(perfect_dyadic_kernel(spec), f, spec.side)
    if path != "martingale":
        raise ValueError(f"unknown evaluation path {path!r}")
    return apply_transform(spec.as_transform(), f)


def kernel_sibling_variation(ker: np.ndarray, grid: Grid) -> float:
    """Max variation of the kernel over Q x R for distinct same-parent cubes Q, R."""
    worst = 0.0
    for k in range(1, grid.K + 1):
        ids = _cube_ids(grid, k)
        parent = _cube_ids(grid, k - 1)
        for a in np.unique(ids):
            xa = np.flatnonzero(ids == a)
            sibs = np.unique(ids[parent == parent[xa[0]]])
            for b in sibs:
                if b == a:
                    continue
                yb = np.flatnonzero(ids == b)
                block = ker[np.ix_(xa, yb)]
                worst = max(worst, float(np.abs(block - block[:1, :1]).max()))
    return worst


# ---------------------------------------------------------------------------
# Haar shifts


@dataclass(frozen=True, eq=False)
class HaarShiftSpec:
    """alpha[g] has shape (2^g,)*n + (nR, nS, d, d) for every resolved generation g.

    R runs over the 2^{nr} descendants of Q at depth r (row-major local order)
    times the 2^n - 1 sign patterns, pattern index fastest; S likewise at depth s.
    """

    grid: Grid
    r: int
    s: int
    alpha: tuple[np.ndarray, ...]
    side: str = "column"

    def __post_init__(self):
        _check_side(self.side)
        if self.r < 0 or self.s < 0:
            raise ValueError("complexity (r, s) must be nonnegative")
        if len(self.alpha) != self.resolved_gens:
            raise ValueError(f"expected coefficients for {self.resolved_gens} generations, got {len(self.alpha)}")
        P = 2**self.grid.n - 1
        for g, a in enumerate(self.alpha):
            want = self.grid.shape(g) + (2 ** (self.grid.n * self.r) * P, 2 ** (self.grid.n * self.s) * P)
            if a.shape[:-2] != want:
                raise ValueError(f"alpha at generation {g} has shape {a.shape[:-2]}, expected {want}")

    @property
    def resolved_gens(self) -> int:
        """Q is resolved when its depth-max(r,s) Haar descendants live on generations <= K-1."""
        return max(self.grid.K - max(self.r, self.s), 0)

    @property
    def d(self) -> int:
        return self.alpha[0].shape[-1]

    def bound(self) -> float:
        """sqrt(|R||S|)/|Q| = 2^{-n(r+s)/2}."""
        return 2.0 ** (-self.grid.n * (self.r + self.s) / 2)

    def overshoot(self) -> float:
        top = max((_maxnorm(a) for a in self.alpha), default=0.0)
        return top / self.bound()

    @property
    def normalized(self) -> bool:
        return self.overshoot() <= 1.0 + 1e-12

    def scaled(self, c: float) -> "HaarShiftSpec":
        return replace(self, alpha=tuple(c * a for a in self.alpha))

    @classmethod
    def from_records(cls, grid: Grid, r: int, s: int, d: int,
                     records: dict[tuple[CubeIndex, HaarIndex, HaarIndex], np.ndarray],
                     side: str = "column") -> "HaarShiftSpec":
        """Coefficient table keyed by (Q, h_R, h_S); R, S must be descendants of Q at depths r, s."""
        P = 2**grid.n - 1
        gens = max(grid.K - max(r, s), 0)
        alpha = [np.zeros(grid.shape(g) + (2 ** (grid.n * r) * P, 2 ** (grid.n * s) * P, d, d), complex)
                 for g in range(gens)]
        for (Q, hR, hS), A in records.items():
            for h, depth, name in ((hR, r, "R"), (hS, s, "S")):
                if h.cube.k != Q.k + depth or not Q.contains(h.cube):
                    raise ValueError(f"{name} = {h.cube} is not a depth-{depth} descendant of {Q}")
            if Q.k >= gens:
                raise ValueError(f"cube {Q} is not resolved for complexity ({r},{s}) at depth {grid.K}")
            alpha[Q.k][Q.coords + (_local_index(Q, hR, r), _local_index(Q, hS, s))] = A
        return cls(grid, r, s, tuple(alpha), side)


def _local_index(Q: CubeIndex, h: HaarIndex, depth: int) -> int:
    m = 2**depth
    pos = 0
    for c, qc in zip(h.cube.coords, Q.coords):
        pos = pos * m + (c - qc * m)
    return pos * len(sign_patterns(Q.n)) + h.pattern


def _from_local_index(Q: CubeIndex, idx: int, depth: int) -> HaarIndex:
    P = len(sign_patterns(Q.n))
    pos, pat = divmod(idx, P)
    m = 2**depth
    local = []
    for _ in range(Q.n):
        pos, c = divmod(pos, m)
        local.append(c)
    coords = tuple(qc * m + c for qc, c in zip(Q.coords, reversed(local)))
    return HaarIndex(CubeIndex(Q.k + depth, coords), sign_patterns(Q.n)[pat])


def apply_haar_shift(spec: HaarShiftSpec, f: MatFn, gens: Iterable[int] | None = None) -> MatFn:
    """sum_Q sum_{R,S} alpha^Q_{RS} <f, h_S> h_R, optionally restricted to Q in the given generations."""
    grid = f.grid
    if grid.K != spec.grid.K or grid.n != spec.grid.n:
        raise ValueError("function grid does not match the operator grid")
    n = grid.n
    P = 2**n - 1
    d = f.d
    coeffs = haar_coeffs(f)
    out = [np.zeros_like(c) for c in coeffs]
    keep = set(range(spec.resolved_gens)) if gens is None else {g for g in gens if 0 <= g < spec.resolved_gens}
    for g in sorted(keep):
        cS = split_block(coeffs[g + spec.s], n, spec.s)           # (2^g,)*n + (2^{ns}, P, d, d)
        cS = cS.reshape(grid.shape(g) + (-1, d, d))
        a = spec.alpha[g]
        if spec.side == "column":
            cR = np.einsum("...rsij,...sjk->...rik", a, cS)
        else:
            cR = np.einsum("...sij,...rsjk->...rik", cS, a)
        cR = cR.reshape(grid.shape(g) + (2 ** (n * spec.r), P, d, d))
        out[g + spec.r] = out[g + spec.r] + join_block(cR, n, spec.r)
    return haar_synth(grid, out, np.zeros((d, d)))


def haar_shift_kernel(spec: HaarShiftSpec) -> np.ndarray:
    """Dense kernel sum_Q sum_{R,S} alpha h_R(x) h_S(y), assembled Haar function by Haar function."""
    grid = spec.grid
    N = grid.leaves
    d = spec.d
    ker = np.zeros((N, N, d, d), complex)
    for g in range(spec.resolved_gens):
        for Q in grid.cubes(g):
            block = spec.alpha[g][Q.coords]
            for iR in range(block.shape[0]):
                hR = haar_values(grid, _from_local_index(Q, iR, spec.r)).ravel()
                for iS in range(block.shape[1]):
                    A = block[iR, iS]
                    if not np.any(A):
                        continue
                    hS = haar_values(grid, _from_local_index(Q, iS, spec.s)).ravel()
                    ker += np.outer(hR, hS)[:, :, None, None] * A
    return ker


def random_haar_shift(grid: Grid, d: int, r: int, s: int, rng: np.random.Generator,
                      side: str = "column", normalized: bool = True) -> HaarShiftSpec:
    """Random coefficients; with ``normalized`` each block has ||alpha|| <= 2^{-n(r+s)/2}.

    For n >= 2 only matching sign patterns (eps_R = eps_S) are populated, so the
    same h_S channel feeds each output, which keeps the L2 contraction.
    """
    n = grid.n
    P = 2**n - 1
    nR = 2 ** (n * r) * P
    nS = 2 ** (n * s) * P
    gens = max(grid.K - max(r, s), 0)
    alpha = []
    for g in range(gens):
        shape = grid.shape(g) + (nR, nS, d, d)
        a = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        if P > 1:
            mask = (np.arange(nR)[:, None] % P) == (np.arange(nS)[None, :] % P)
            a = a * mask[..., None, None]
        if normalized:
            norms = opnorm(a)
            a = a / np.maximum(norms, 1e-300)[..., None, None] * rng.uniform(0, 1, norms.shape)[..., None, None]
            a = a * 2.0 ** (-n * (r + s) / 2)
        alpha.append(a)
    return HaarShiftSpec(grid, r, s, tuple(alpha), side)


def dyadic_hilbert(grid: Grid, d: int = 1, side: str = "column", adjoint_form: bool = False) -> HaarShiftSpec:
    """Kernel sum_J (h_{J-}(y) - h_{J+}(y)) h_J(x): complexity (0,1), coefficients +-1.

    ``adjoint_form`` gives the transposed kernel sum_J h_J(y) (h_{J-}(x) - h_{J+}(x)),
    complexity (1,0).
    """
    if grid.n != 1:
        raise ValueError("the dyadic Hilbert transform is defined for n = 1")
    eye = np.eye(d, dtype=complex)
    r, s = (1, 0) if adjoint_form else (0, 1)
    gens = grid.K - 1
    alpha = []
    for g in range(gens):
        a = np.zeros(grid.shape(g) + (2**r, 2**s, d, d), complex)
        if adjoint_form:
            a[:, 0, 0] = eye
            a[:, 1, 0] = -eye
        else:
            a[:, 0, 0] = eye
            a[:, 0, 1] = -eye
        alpha.append(a)
    return HaarShiftSpec(grid, r, s, tuple(alpha), side)


def identity_shift(grid: Grid, d: int, side: str = "column") -> HaarShiftSpec:
    """(r,s) = (0,0), alpha^Q_{QQ} = 1 on every channel: f -> f - E_0 f."""
    P = 2**grid.n - 1
    eye = np.broadcast_to(np.eye(P)[:, :, None, None] * np.eye(d), (P, P, d, d))
    alpha = tuple(np.broadcast_to(eye, grid.shape(g) + eye.shape).astype(complex) for g in range(grid.K))
    return HaarShiftSpec(grid, 0, 0, alpha, side)


# ---------------------------------------------------------------------------
# smooth kernels


@dataclass(frozen=True, eq=False)
class SmoothKernelSpec:
    """k(x, y) sampled at leaf midpoints; ``kernel`` maps point arrays (..., n) to (..., d, d)."""

    grid: Grid
    kernel: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d: int
    side: str = "column"
    adjoint_form: bool = False

    def __post_init__(self):
        _check_side(self.side)

    def midpoints(self) -> np.ndarray:
        K = self.grid.K
        c = (np.arange(2**K) + 0.5) * 2.0**-K
        mesh = np.meshgrid(*([c] * self.grid.n), indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.grid.n)

    def sample(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.adjoint_form:
            return adjoint(self._raw(y, x))
        return self._raw(x, y)

    def _raw(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        try:
            vals = np.asarray(self.kernel(x, y), dtype=complex)
        except Exception as exc:
            raise RuntimeError(f"kernel sampler failed on points x={x.tolist()}, y={y.tolist()}") from exc
        vals = vals.reshape(x.shape[:-1] + (self.d, self.d))
        bad = ~np.isfinite(vals).all(axis=(-1, -2))
        if bad.any():
            i = np.argwhere(bad)[0]
            raise RuntimeError(f"kernel sampler returned a non-finite value at x={x[tuple(i)].tolist()}, "
                               f"y={y[tuple(i)].tolist()}")
        return vals

    def dense(self) -> np.ndarray:
        """(N, N, d, d) kernel on midpoint pairs, zero on the diagonal leaf."""
        m = self.midpoints()
        N = m.shape[0]
        X = np.broadcast_to(m[:, None, :], (N, N, self.grid.n))
        Y = np.broadcast_to(m[None, :, :], (N, N, self.grid.n))
        off = ~np.eye(N, dtype=bool)
        ker = np.zeros((N, N, self.d, self.d), complex)
        ker[off] = self.sample(X[off], Y[off])
        return ker

    def adjoint(self) -> "SmoothKernelSpec":
        return replace(self, adjoint_form=not self.adjoint_form)


def apply_smooth_czo(spec: SmoothKernelSpec, f: MatFn) -> MatFn:
    return apply_kernel(spec.dense(), f, spec.side)


def hormander_functional(spec: SmoothKernelSpec) -> float:
    """sup_Q sup_{y in Q} sum_{x outside Q^} |leaf| ||k(x,y) - k(x,c_Q)||, parent cube Q^ standing in for 2Q."""
    grid = spec.grid
    K, n = grid.K, grid.n
    mids = spec.midpoints().reshape(grid.shape(K) + (n,))
    flat = mids.reshape(-1, n)
    worst = 0.0
    for g in range(1, K + 1):
        for Q in grid.cubes(g):
            c = (np.array(Q.coords) + 0.5) * Q.side
            inside = np.zeros(grid.shape(K), bool)
            inside[Q.parent().leaf_slice(K)] = True
            xs = flat[~inside.ravel()]
            if xs.size == 0:
                continue
            ys = mids[Q.leaf_slice(K)].reshape(-1, n)
            kc = spec.sample(xs, np.broadcast_to(c, xs.shape))
            for y in ys:
                ky = spec.sample(xs, np.broadcast_to(y, xs.shape))
                worst = max(worst, float(opnorm(ky - kc).sum() * grid.leaf_volume))
    return worst


# ---------------------------------------------------------------------------
# dispatch


OperatorSpec = Union[TransformSpec, PerfectDyadicSpec, HaarShiftSpec, SmoothKernelSpec]


def apply_op(op: OperatorSpec, f: MatFn) -> MatFn:
    if isinstance(op, PerfectDyadicSpec):
        return apply_perfect_dyadic(op, f)
    if isinstance(op, HaarShiftSpec):
        return apply_haar_shift(op, f)
    if isinstance(op, TransformSpec):
        return apply_transform(op, f)
    if isinstance(op, SmoothKernelSpec):
        return apply_smooth_czo(op, f)
    raise TypeError(f"not an operator spec: {type(op).__name__}")


def with_side(op: OperatorSpec, side: str) -> OperatorSpec:
    _check_side(side)
    return replace(op, side=side)


def random_xi(grid: Grid, d: int, rng: np.random.Generator, bound: float = 1.0) -> tuple[np.ndarray, ...]:
    """Adapted coefficients xi_0..xi_{K-1}, each of operator norm at most ``bound``."""
    out = []
    for k in range(grid.K):
        shape = grid.shape(k) + (d, d)
        x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        x = x / opnorm(x)[..., None, None] * rng.uniform(0, bound, grid.shape(k))[..., None, None]
        out.append(x)
    return tuple(out)


def random_symbol(grid: Grid, d: int, rng: np.random.Generator, scale: float = 1.0) -> MatFn:
    shape = grid.shape(grid.K) + (d, d)
    return MatFn(grid, scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)))


# ---------------------------------------------------------------------------
# annihilation diagnostics


BAD_PARTS = ("b_d", "g_off", "b_off")


def _truncated_pieces(parts: cz.CZParts, fam: cz.LacunaryFamily, name: str, side: str) -> list[np.ndarray]:
    """UT_{k-1}(Delta_k gamma) (column) or LT_{k-1}(Delta_k gamma) (row) as leaf arrays, k = 1..K."""
    grid = fam.grid
    g = getattr(parts, name)
    dg = level_diffs(level_means(g.values, grid.n, grid.K), grid.n)
    upper = side == "column"
    return [cz._truncate(_leaf(grid, dg[k], k), fam, k - 1, upper) for k in range(1, grid.K + 1)]


def _proj_side(x: np.ndarray, p: np.ndarray, side: str) -> np.ndarray:
    """x p on the column side, p x on the row side."""
    return x @ p if side == "column" else p @ x


def annihilation_check(op: OperatorSpec, f: MatFn, ell: int, s_min: int, s_max: int,
                       fam: cz.LacunaryFamily | None = None) -> dict[str, float]:
    """Max residuals of the vanishing identities for gamma in {b_d, g_off, b_off} at lambda = 2^ell."""
    if isinstance(op, SmoothKernelSpec):
        raise TypeError("annihilation identities hold for dyadic operators only")
    fam = fam if fam is not None else cz.lacunary_build(f, s_min, s_max)
    grid = f.grid
    side = op.side
    parts = cz.cz_decompose(f, 2.0**ell, seq=fam.seqs[ell])
    qh = cz.qhat_build(fam, ell)
    is_shift = isinstance(op, HaarShiftSpec)
    zeta = cz.zeta_build(fam, ell, op.s, qh).zeta if is_shift else None
    # for shifts only the pieces A q^, B zeta and C vanish, not the whole T(gamma) q^
    out = {"trunc_qhat": 0.0}
    out.update({"C": 0.0, "A_qhat": 0.0, "B_zeta": 0.0} if is_shift else {"op_qhat": 0.0})
    for name in BAD_PARTS:
        pieces = _truncated_pieces(parts, fam, name, side)
        for k, x in enumerate(pieces, start=1):
            out["trunc_qhat"] = max(out["trunc_qhat"], _maxnorm(_proj_side(x, qh.level_leaf(grid, k - 1), side)))
        if not is_shift:
            Tg = apply_op(op, f.like(sum(pieces))).values
            out["op_qhat"] = max(out["op_qhat"], _maxnorm(_proj_side(Tg, qh.q, side)))
        else:
            A = np.zeros_like(f.values)
            B = np.zeros_like(f.values)
            C = np.zeros_like(f.values)
            for k, x in enumerate(pieces, start=1):
                xf = f.like(x)
                A += apply_haar_shift(op, xf, range(k - 1, grid.K)).values
                B += apply_haar_shift(op, xf, range(max(k - 1 - op.s, 0), k - 1)).values
                C += apply_haar_shift(op, xf, range(0, max(k - 1 - op.s, 0))).values
            out["C"] = max(out["C"], _maxnorm(C))
            out["A_qhat"] = max(out["A_qhat"], _maxnorm(_proj_side(A, qh.q, side)))
            out["B_zeta"] = max(out["B_zeta"], _maxnorm(_proj_side(B, zeta, side)))
    return out


# ---------------------------------------------------------------------------
# weak type scan


def weak_type_ratio(op: OperatorSpec, f: MatFn, lams: Iterable[float], s_min: int, s_max: int,
                    fam: cz.LacunaryFamily | None = None) -> dict[str, float]:
    """sup over lam of [lam phi{|T_r f_r| > lam} + lam phi{|T_c f_c| > lam}] / ||f||_1, plus the residual tail."""
    split = cz.row_col_split(f, s_min, s_max, fam)
    Tr = apply_op(with_side(op, "row"), split.f_r)
    Tc = apply_op(with_side(op, "column"), split.f_c)
    Tpsi = apply_op(with_side(op, "column"), split.residual)
    l1 = lp_norm(f, 1)
    if l1 == 0:
        return {"ratio": 0.0, "residual_ratio": 0.0, "residual_inf": 0.0}
    ratio = res = 0.0
    for lam in lams:
        ratio = max(ratio, (weak_l1_tail(Tr, lam) + weak_l1_tail(Tc, lam)) / l1)
        res = max(res, weak_l1_tail(Tpsi, lam) / l1)
    return {"ratio": ratio, "residual_ratio": res, "residual_inf": split.residual_norm()}


def weak_type_scan(op: OperatorSpec, samples: Iterable[MatFn], ells: Iterable[int], s_min: int,
                   s_max: int | None = None, ceiling: float = 100.0) -> ProbeReport:
    """Measured-only scan of the weak type (1,1) ratio over samples and lambda = 2^ell."""
    rep = ProbeReport("weak_type_scan", ceiling=ceiling, asserted=False)
    lams = [2.0**l for l in ells]
    for f in samples:
        top = s_max if s_max is not None else max(int(np.ceil(np.log2(max(f.norm_inf(), 1e-300)))), s_min + 1)
        rep.add(**weak_type_ratio(op, f, lams, s_min, top))
    return rep


# ---------------------------------------------------------------------------
# text serialization


def _fmt_matrix(A: np.ndarray) -> str:
    return " ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in np.asarray(A).ravel())


def _parse_matrix(tokens: list[str], d: int) -> np.ndarray:
    if len(tokens) != d * d:
        raise ValueError(f"expected {d * d} matrix entries, found {len(tokens)}")
    vals = []
    for t in tokens:
        re, im = t.split(",")
        vals.append(complex(float(re), float(im)))
    return np.array(vals, complex).reshape(d, d)


def spec_to_text(op: OperatorSpec) -> str:
    if isinstance(op, SmoothKernelSpec):
        raise TypeError("smooth-kernel operators wrap a Python callable and have no text form")
    g = op.grid
    if isinstance(op, HaarShiftSpec):
        lines = ["operator haar_shift", f"side {op.side}", f"grid {g.n} {g.K} {g.pad}", f"d {op.d}",
                 f"complexity {op.r} {op.s}"]
        for gen, a in enumerate(op.alpha):
            for coords in itertools.product(range(2**gen), repeat=g.n):
                block = a[coords]
                for iR, iS in itertools.product(range(block.shape[0]), range(block.shape[1])):
                    c = " ".join(map(str, coords))
                    lines.append(f"coeff {gen} {c} {iR} {iS} {_fmt_matrix(block[iR, iS])}")
        return "\n".join(lines) + "\n"
    kind = op.kind
    if isinstance(op, TransformSpec):
        kind = {"transform": "transform", "paraproduct": "mart_paraproduct",
                "paraproduct_adjoint": "mart_paraproduct_adjoint"}[op.kind]
    lines = [f"operator {kind}", f"side {op.side}", f"grid {g.n} {g.K} {g.pad}"]
    if op.xi is not None:
        lines.append(f"d {op.xi[0].shape[-1]}")
        for gen, x in enumerate(op.xi):
            for coords in itertools.product(range(2**gen), repeat=g.n):
                lines.append(f"coeff {gen} {' '.join(map(str, coords))} {_fmt_matrix(x[coords])}")
    else:
        lines.append(f"d {op.rho.d}")
        lines.append("symbol")
        lines.append(op.rho.to_text().rstrip("\n"))
    return "\n".join(lines) + "\n"


def spec_from_text(text: str) -> OperatorSpec:
    lines = text.splitlines()
    head = {}
    i = 0
    while i < len(lines) and not lines[i].startswith(("coeff", "symbol")):
        if lines[i].strip():
            key, _, val = lines[i].partition(" ")
            head[key] = val.split()
        i += 1
    try:
        kind = head["operator"][0]
        side = head["side"][0]
        n, K, pad = (int(t) for t in head["grid"])
        d = int(head["d"][0])
    except (KeyError, IndexError, ValueError) as exc:
        raise ValueError("operator text needs 'operator', 'side', 'grid' and 'd' header lines") from exc
    grid = Grid(n, K, pad)
    body = lines[i:]
    if kind == "haar_shift":
        r, s = (int(t) for t in head["complexity"])
        P = 2**n - 1
        nR, nS = 2 ** (n * r) * P, 2 ** (n * s) * P
        gens = max(K - max(r, s), 0)
        alpha = [np.zeros(grid.shape(gg) + (nR, nS, d, d), complex) for gg in range(gens)]
        for ln in body:
            if not ln.strip():
                continue
            tok = ln.split()
            if tok[0] != "coeff":
                raise ValueError(f"unexpected line {ln!r}")
            gen = int(tok[1])
            coords = tuple(int(t) for t in tok[2:2 + n])
            iR, iS = int(tok[2 + n]), int(tok[3 + n])
            if not (0 <= gen < gens and 0 <= iR < nR and 0 <= iS < nS):
                raise ValueError(f"coefficient {ln.split()[:4 + n]} does not index a resolved descendant pair")
            CubeIndex(gen, coords)
            alpha[gen][coords + (iR, iS)] = _parse_matrix(tok[4 + n:], d)
        return HaarShiftSpec(grid, r, s, tuple(alpha), side)
    if body and body[0].strip() == "symbol":
        rho = MatFn.from_text("\n".join(body[1:]))
        if kind in PERFECT_KINDS and kind != "haar_multiplier":
            return PerfectDyadicSpec(kind, grid, rho=rho, side=side)
        if kind in ("mart_paraproduct", "mart_paraproduct_adjoint"):
            tk = "paraproduct" if kind == "mart_paraproduct" else "paraproduct_adjoint"
            return TransformSpec(grid, rho=rho, side=side, kind=tk)
        raise ValueError(f"operator kind {kind!r} does not take a symbol")
    xi = [np.zeros(grid.shape(gg) + (d, d), complex) for gg in range(K)]
    for ln in body:
        if not ln.strip():
            continue
        tok = ln.split()
        gen = int(tok[1])
        coords = tuple(int(t) for t in tok[2:2 + n])
        CubeIndex(gen, coords)
        if gen >= K:
            raise ValueError(f"coefficient generation {gen} outside 0..{K - 1}")
        xi[gen][coords] = _parse_matrix(tok[2 + n:], d)
    if kind == "haar_multiplier":
        return PerfectDyadicSpec(kind, grid, xi=tuple(xi), side=side)
    if kind == "transform":
        return TransformSpec(grid, tuple(xi), side=side)
    raise ValueError(f"unknown operator kind {kind!r}")
