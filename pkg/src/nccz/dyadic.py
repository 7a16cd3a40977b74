"""Dyadic grids on [0,1)^n and piecewise-constant matrix-valued functions.

A :class:`MatFn` stores one d x d matrix per finest-generation cube. Arrays
of cube data at generation k have shape ``(2**k,)*n + (d, d)``, with the cube
coordinates in row-major order; :func:`coarsen` and :func:`refine` move data
between generations. The trace is normalized, tr(1) = 1, so that phi(1) = 1.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

import numpy as np

from .ncalg import TOL_HERM, adjoint, hermitian_defect, msqrt, opnorm


@dataclass(frozen=True)
class Grid:
    n: int
    K: int
    pad: int = 0

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError(f"spatial dimension must be 1 or 2, got {self.n}")
        if self.K < 1:
            raise ValueError(f"depth K must be >= 1, got {self.K}")
        if not 0 <= self.pad <= self.K:
            raise ValueError(f"pad must lie in [0, K={self.K}], got {self.pad}")

    @property
    def leaves(self) -> int:
        return 2 ** (self.n * self.K)

    @property
    def leaf_volume(self) -> float:
        return 2.0 ** (-self.n * self.K)

    def shape(self, k: int) -> tuple[int, ...]:
        return (2**k,) * self.n

    def cubes(self, k: int) -> Iterator["CubeIndex"]:
        for coords in itertools.product(range(2**k), repeat=self.n):
            yield CubeIndex(k, coords)

    def support_mask(self) -> np.ndarray:
        """Boolean leaf array marking the generation-``pad`` cube at the origin."""
        side = 2 ** (self.K - self.pad)
        mask = np.zeros(self.shape(self.K), bool)
        mask[(slice(0, side),) * self.n] = True
        return mask

    def check_gen(self, k: int, lo: int = 0):
        if not lo <= k <= self.K:
            raise ValueError(f"generation {k} outside [{lo}, {self.K}]")


@dataclass(frozen=True, order=True)
class CubeIndex:
    k: int
    coords: tuple[int, ...]

    def __post_init__(self):
        if self.k < 0 or any(not 0 <= c < 2**self.k for c in self.coords):
            raise ValueError(f"invalid dyadic cube {self.k}:{self.coords}")

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def side(self) -> float:
        return 2.0 ** (-self.k)

    @property
    def volume(self) -> float:
        return 2.0 ** (-self.k * self.n)

    def parent(self) -> "CubeIndex":
        return self.ancestor(1)

    def ancestor(self, s: int) -> "CubeIndex":
        """s-th dyadic ancestor, clamped at generation 0."""
        s = min(s, self.k)
        return CubeIndex(self.k - s, tuple(c >> s for c in self.coords))

    def children(self) -> list["CubeIndex"]:
        return [CubeIndex(self.k + 1, tuple(2 * c + b for c, b in zip(self.coords, bits)))
                for bits in itertools.product((0, 1), repeat=self.n)]

    def contains(self, other: "CubeIndex") -> bool:
        return other.k >= self.k and other.ancestor(other.k - self.k) == self

    def leaf_slice(self, K: int) -> tuple[slice, ...]:
        m = 2 ** (K - self.k)
        return tuple(slice(c * m, (c + 1) * m) for c in self.coords)


# ---------------------------------------------------------------------------
# generation-to-generation moves on raw arrays


def coarsen(vals: np.ndarray, n: int, levels: int) -> np.ndarray:
    """Average cube data over blocks of 2**levels per axis."""
    if levels == 0:
        return vals
    m = 2**levels
    lead = vals.shape[:n]
    tail = vals.shape[n:]
    shape = []
    for s in lead:
        shape += [s // m, m]
    return vals.reshape(tuple(shape) + tail).mean(axis=tuple(range(1, 2 * n, 2)))


def refine(vals: np.ndarray, n: int, levels: int) -> np.ndarray:
    """Repeat cube data onto descendants 2**levels per axis finer."""
    m = 2**levels
    for ax in range(n):
        vals = np.repeat(vals, m, axis=ax)
    return vals


def level_means(vals: np.ndarray, n: int, K: int) -> list[np.ndarray]:
    """[f_0, ..., f_K] as coarse arrays, f_k of shape (2**k,)*n + tail."""
    out = [vals]
    for _ in range(K):
        out.append(coarsen(out[-1], n, 1))
    return out[::-1]


def level_diffs(means: list[np.ndarray], n: int) -> list[np.ndarray | None]:
    """[None, df_1, ..., df_K] on generation-k arrays."""
    return [None] + [means[k] - refine(means[k - 1], n, 1) for k in range(1, len(means))]


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MatFn:
    grid: Grid
    values: np.ndarray
    hermitian: bool = False
    supported: bool = False

    def __post_init__(self):
        vals = np.array(self.values, dtype=complex)
        if vals.ndim == self.grid.n + 2 and vals.shape[-1] != vals.shape[-2]:
            raise ValueError("leaf values must be square matrices")
        want = self.grid.shape(self.grid.K)
        if vals.shape[: self.grid.n] != want or vals.ndim != self.grid.n + 2:
            raise ValueError(f"values of shape {vals.shape} do not fit grid {want} + (d, d)")
        if self.hermitian:
            dev = hermitian_defect(vals)
            if dev.size and dev.max() > TOL_HERM:
                raise ValueError(f"leaf value not Hermitian (defect {dev.max():.3e})")
            vals = 0.5 * (vals + adjoint(vals))
        if self.supported:
            outside = vals[~self.grid.support_mask()]
            if outside.size and np.abs(outside).max() > 0:
                raise ValueError("nonzero values outside the support subcube")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def d(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def constant(cls, grid: Grid, A: np.ndarray, hermitian: bool = False) -> "MatFn":
        A = np.atleast_2d(np.asarray(A, dtype=complex))
        return cls(grid, np.broadcast_to(A, grid.shape(grid.K) + A.shape), hermitian)

    @classmethod
    def zeros(cls, grid: Grid, d: int) -> "MatFn":
        return cls.constant(grid, np.zeros((d, d)), hermitian=True)

    @classmethod
    def from_coarse(cls, grid: Grid, vals: np.ndarray, k: int, hermitian: bool = False) -> "MatFn":
        return cls(grid, refine(vals, grid.n, grid.K - k), hermitian)

    def like(self, vals: np.ndarray, hermitian: bool = False) -> "MatFn":
        return MatFn(self.grid, vals, hermitian)

    def coarse(self, k: int) -> np.ndarray:
        """Values of E_k f as a generation-k array."""
        self.grid.check_gen(k)
        return coarsen(self.values, self.grid.n, self.grid.K - k)

    def adj(self) -> "MatFn":
        return self.like(adjoint(self.values), self.hermitian)

    def _other(self, other):
        if isinstance(other, MatFn):
            if other.grid.n != self.grid.n or other.grid.K != self.grid.K:
                raise ValueError("functions live on different grids")
            return other.values
        return np.asarray(other)

    def __add__(self, other):
        herm = self.hermitian and isinstance(other, MatFn) and other.hermitian
        return self.like(self.values + self._other(other), herm)

    def __sub__(self, other):
        herm = self.hermitian and isinstance(other, MatFn) and other.hermitian
        return self.like(self.values - self._other(other), herm)

    def __neg__(self):
        return self.like(-self.values, self.hermitian)

    def __mul__(self, c):
        if isinstance(c, MatFn) or np.ndim(c) > 0:
            raise TypeError("use @ for pointwise matrix products")
        return self.like(self.values * c, self.hermitian and np.isreal(c))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return self.like(self.values @ self._other(other))

    def __rmatmul__(self, other):
        return self.like(np.asarray(other) @ self.values)

    def norm_inf(self) -> float:
        return lp_norm(self, np.inf)

    def allclose(self, other: "MatFn", atol: float) -> bool:
        return float(np.abs(self.values - self._other(other)).max(initial=0.0)) <= atol

    # serialization -------------------------------------------------------

    def to_text(self) -> str:
        g = self.grid
        lines = [f"{g.n} {g.K} {self.d} {g.pad} {int(self.hermitian)}"]
        flat = self.values.reshape(-1, self.d * self.d)
        for row in flat:
            lines.append(" ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MatFn":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        try:
            n, K, d, pad, herm = (int(t) for t in lines[0].split())
        except (IndexError, ValueError) as exc:
            raise ValueError("bad MatFn header, expected 'n K d p hermitian'") from exc
        grid = Grid(n, K, pad)
        if len(lines) - 1 != grid.leaves:
            raise ValueError(f"expected {grid.leaves} leaf lines, found {len(lines) - 1}")
        vals = np.empty((grid.leaves, d * d), complex)
        for i, ln in enumerate(lines[1:]):
            toks = ln.split()
            if len(toks) != d * d:
                raise ValueError(f"leaf line {i} has {len(toks)} entries, expected {d * d}")
            for j, tok in enumerate(toks):
                re, im = tok.split(",")
                vals[i, j] = complex(float(re), float(im))
        vals = vals.reshape(grid.shape(K) + (d, d))
        # the values were already symmetrized when written; do not touch the bits again
        f = cls(grid, vals, False)
        if herm:
            object.__setattr__(f, "hermitian", True)
            dev = hermitian_defect(f.values)
            if dev.size and dev.max() > TOL_HERM:
                raise ValueError("leaf value not Hermitian")
        return f


def random_matfn(grid: Grid, d: int, rng: np.random.Generator, hermitian: bool = False,
                 supported: bool = False) -> MatFn:
    shape = grid.shape(grid.K) + (d, d)
    vals = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    if hermitian:
        vals = 0.5 * (vals + adjoint(vals))
    if supported:
        vals = vals * grid.support_mask()[(...,) + (None, None)]
    return MatFn(grid, vals, hermitian, supported)


# ---------------------------------------------------------------------------
# trace, expectations, differences


def phi_trace(f: MatFn) -> complex:
    """phi(f) = sum over leaves of |leaf| tr f(leaf), normalized trace."""
    tr = np.trace(f.values, axis1=-2, axis2=-1) / f.d
    return complex(tr.mean())


def inner(f: MatFn, g: MatFn) -> complex:
    """Anti-linear bracket <f, g> = phi(f* g)."""
    return phi_trace(f.adj() @ g)


def expect(f: MatFn, k: int) -> MatFn:
    f.grid.check_gen(k)
    return MatFn.from_coarse(f.grid, f.coarse(k), k, f.hermitian)


def mart_diff(f: MatFn, k: int) -> MatFn:
    f.grid.check_gen(k, lo=1)
    n = f.grid.n
    fk = f.coarse(k)
    dk = fk - refine(coarsen(fk, n, 1), n, 1)
    return MatFn.from_coarse(f.grid, dk, k, f.hermitian)


def mart_diffs(f: MatFn) -> list[MatFn]:
    """[E_0 f, df_1, ..., df_K] as leaf functions."""
    return [expect(f, 0)] + [mart_diff(f, k) for k in range(1, f.grid.K + 1)]


# ---------------------------------------------------------------------------
# Haar system


@lru_cache(maxsize=None)
def sign_patterns(n: int) -> tuple[tuple[int, ...], ...]:
    """Admissible Haar sign patterns, lexicographic, all-plus pattern excluded."""
    return tuple(e for e in itertools.product((-1, 1), repeat=n) if any(x < 0 for x in e))


@lru_cache(maxsize=None)
def child_signs(n: int) -> np.ndarray:
    """(2^n children, 2^n - 1 patterns) table of h^eps signs on each child.

    Children are ordered like the row-major reshape of a (2,)*n block; bit 0
    on an axis is the lower half I^-, which carries sign +1.
    """
    pats = sign_patterns(n)
    rows = []
    for bits in itertools.product((0, 1), repeat=n):
        rows.append([np.prod([e if b else 1 for e, b in zip(eps, bits)]) for eps in pats])
    return np.array(rows, dtype=float)


@dataclass(frozen=True, order=True)
class HaarIndex:
    cube: CubeIndex
    eps: tuple[int, ...] = field(default=(-1,))

    def __post_init__(self):
        if len(self.eps) != self.cube.n or any(e not in (-1, 1) for e in self.eps):
            raise ValueError(f"bad sign pattern {self.eps}")
        if all(e == 1 for e in self.eps):
            raise ValueError("the all-plus sign pattern gives a constant, not a Haar function")

    @property
    def pattern(self) -> int:
        return sign_patterns(self.cube.n).index(self.eps)


def haar_indices(grid: Grid, max_gen: int | None = None) -> Iterator[HaarIndex]:
    top = grid.K - 1 if max_gen is None else max_gen
    for g in range(top + 1):
        for Q in grid.cubes(g):
            for eps in sign_patterns(grid.n):
                yield HaarIndex(Q, eps)


def _check_resolved(grid: Grid, h: HaarIndex):
    if h.cube.n != grid.n or h.cube.k > grid.K - 1:
        raise ValueError(f"Haar function on {h.cube} is not resolved by a depth-{grid.K} grid")


def haar_values(grid: Grid, h: HaarIndex) -> np.ndarray:
    """Real leaf array of h_Q^eps = |Q|^{-1/2} prod_j (1_{I_j^-} + eps_j 1_{I_j^+})."""
    _check_resolved(grid, h)
    Q = h.cube
    out = np.zeros(grid.shape(grid.K))
    block = child_signs(grid.n)[:, h.pattern].reshape((2,) * grid.n)
    out[Q.leaf_slice(grid.K)] = refine(block, grid.n, grid.K - Q.k - 1) / np.sqrt(Q.volume)
    return out


def haar_fn(grid: Grid, h: HaarIndex) -> MatFn:
    return MatFn(grid, haar_values(grid, h)[..., None, None], hermitian=True)


def haar_coeff(f: MatFn, h: HaarIndex) -> np.ndarray:
    """<f, h> = sum over leaves of |leaf| f(leaf) h(leaf), a d x d matrix."""
    hv = haar_values(f.grid, h)
    return np.tensordot(hv, f.values, axes=f.grid.n) * f.grid.leaf_volume


def split_block(vals: np.ndarray, n: int, depth: int) -> np.ndarray:
    """(2^{g+depth},)*n + tail -> (2^g,)*n + (2^{n depth},) + tail.

    The new axis lists the generation-(g+depth) descendants of each
    generation-g cube in row-major order of their local coordinates.
    """
    m = 2**depth
    lead = vals.shape[:n]
    tail = vals.shape[n:]
    shape = []
    for s in lead:
        shape += [s // m, m]
    x = vals.reshape(tuple(shape) + tail)
    order = list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2)) + list(range(2 * n, x.ndim))
    x = x.transpose(order)
    return x.reshape(tuple(s // m for s in lead) + (m**n,) + tail)


def join_block(vals: np.ndarray, n: int, depth: int) -> np.ndarray:
    """Inverse of :func:`split_block`."""
    m = 2**depth
    lead = vals.shape[:n]
    tail = vals.shape[n + 1:]
    x = vals.reshape(lead + (m,) * n + tail)
    order = []
    for ax in range(n):
        order += [ax, n + ax]
    order += list(range(2 * n, x.ndim))
    x = x.transpose(order)
    return x.reshape(tuple(m * s for s in lead) + tail)


def haar_coeffs(f: MatFn) -> list[np.ndarray]:
    """All resolved Haar coefficients.

    Entry g has shape (2^g,)*n + (2^n - 1, d, d): the coefficient of h_Q^eps
    for every generation-g cube Q and pattern eps (order of :func:`sign_patterns`).
    """
    n = f.grid.n
    means = level_means(f.values, n, f.grid.K)
    S = child_signs(n)
    out = []
    for g in range(f.grid.K):
        kids = split_block(means[g + 1], n, 1)
        c = np.einsum("ce,...cij->...eij", S, kids) * (2.0 ** (-n)) * np.sqrt(2.0 ** (-n * g))
        out.append(c)
    return out


def haar_synth(grid: Grid, coeffs: list[np.ndarray], mean: np.ndarray) -> MatFn:
    """Rebuild f = mean + sum <f,h> h from :func:`haar_coeffs` output (missing gens count as zero)."""
    n = grid.n
    S = child_signs(n)
    mean = np.asarray(mean, dtype=complex)
    cur = np.broadcast_to(mean, grid.shape(0) + mean.shape[-2:]).astype(complex)
    for g in range(grid.K):
        c = coeffs[g] if g < len(coeffs) and coeffs[g] is not None else np.zeros(cur.shape[:n] + (len(S[0]),) + cur.shape[-2:])
        kids = cur[..., None, :, :] + np.einsum("ce,...eij->...cij", S, c) / np.sqrt(2.0 ** (-n * g))
        cur = join_block(kids, n, 1)
    return MatFn(grid, cur)


# ---------------------------------------------------------------------------
# norms


def _singular_values(f: MatFn) -> np.ndarray:
    return np.linalg.svd(f.values, compute_uv=False)


def lp_norm(f: MatFn, p: float) -> float:
    """(phi(|f|^p))^{1/p}; p = inf gives the largest leaf operator norm."""
    if not p >= 1:
        raise ValueError(f"lp_norm needs p >= 1, got {p}")
    sv = _singular_values(f)
    if np.isinf(p):
        return float(sv.max(initial=0.0))
    return float(np.mean(np.sum(sv**p, axis=-1) / f.d) ** (1.0 / p))


def weak_l1_tail(f: MatFn, lam: float) -> float:
    """lam * phi(chi_{(lam, inf)}(|f|))."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    sv = _singular_values(f)
    return float(lam * np.mean(np.sum(sv > lam, axis=-1) / f.d))


def weak_l1_norm(f: MatFn) -> float:
    """sup over lambda of the weak tail; attained at the leaf singular values."""
    sv = np.sort(_singular_values(f).ravel())[::-1]
    sv = sv[sv > 0]
    if sv.size == 0:
        return 0.0
    # lambda just below the i-th largest value sees i+1 values above it
    counts = np.arange(1, sv.size + 1)
    return float(np.max(sv * counts) / (f.d * f.grid.leaves))


def linf_l2c_norm(f: MatFn) -> float:
    """|| (int f* f dx)^{1/2} ||_op."""
    M = np.mean((adjoint(f.values) @ f.values).reshape((-1, f.d, f.d)), axis=0)
    return float(opnorm(msqrt(M)))


def linf_l2r_norm(f: MatFn) -> float:
    return linf_l2c_norm(f.adj())


def leaf_opnorms(f: MatFn) -> np.ndarray:
    return opnorm(f.values)
