"""Matrix algebra on M_d: Hermitian functional calculus, spectral projections
and the projection lattice.

Every routine accepts stacked inputs with shape ``(..., d, d)`` and works
matrix by matrix along the leading axes, so a whole piecewise-constant
function can be pushed through in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

TOL_HERM = 1e-10
TOL_PROJ = 1e-8
TOL_EIG = 1e-12
TOL_BAND = 1e-9
TOL_MEET = 1e-8
TOL_ORDER = 1e-8


def adjoint(A: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(A, -1, -2))


def opnorm(A: np.ndarray) -> np.ndarray:
    """Operator (spectral) norm of each matrix in the stack."""
    A = np.asarray(A)
    if A.shape[-1] == 0:
        return np.zeros(A.shape[:-2])
    return np.linalg.svd(A, compute_uv=False)[..., 0]


def identity_like(A: np.ndarray) -> np.ndarray:
    d = A.shape[-1]
    return np.broadcast_to(np.eye(d, dtype=complex), A.shape).copy()


def hermitian_defect(A: np.ndarray) -> np.ndarray:
    """Relative distance of each matrix from the Hermitian ones."""
    A = np.asarray(A)
    return opnorm(A - adjoint(A)) / np.maximum(1.0, opnorm(A))


def check_hermitian(A: np.ndarray, tol: float = TOL_HERM) -> np.ndarray:
    A = np.asarray(A, dtype=complex)
    dev = hermitian_defect(A)
    worst = float(np.max(dev)) if dev.size else 0.0
    if worst > tol:
        raise ValueError(f"matrix is not Hermitian: relative defect {worst:.3e} > {tol:.1e}")
    return 0.5 * (A + adjoint(A))


@dataclass(frozen=True)
class SpectralDecomp:
    eigenvalues: np.ndarray   # (..., d), ascending
    eigenvectors: np.ndarray  # (..., d, d), columns are eigenvectors

    def reconstruct(self) -> np.ndarray:
        U = self.eigenvectors
        return (U * self.eigenvalues[..., None, :]) @ adjoint(U)


def _jacobi_single(A: np.ndarray, tol: float, max_sweeps: int) -> tuple[np.ndarray, np.ndarray]:
    A = A.astype(complex).copy()
    d = A.shape[0]
    V = np.eye(d, dtype=complex)
    scale = max(np.linalg.norm(A), 1e-300)
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        # quadratic convergence: one sweep past the tolerance reaches round-off
        if off <= 1e-3 * tol * scale:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                b = A[p, q]
                mag = abs(b)
                if mag <= 1e-300:
                    continue
                phase = b / mag
                zeta = (A[q, q].real - A[p, p].real) / (2.0 * mag)
                t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # unitary acting on coordinates p, q: diag(1, conj(phase)) times a real rotation
                G = np.eye(d, dtype=complex)
                G[p, p] = c
                G[p, q] = s
                G[q, p] = -s * np.conj(phase)
                G[q, q] = c * np.conj(phase)
                A = adjoint(G) @ A @ G
                A[p, q] = A[q, p] = 0.0
                V = V @ G
    w = np.real(np.diag(A))
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def jacobi_eigh(A: np.ndarray, tol: float = TOL_EIG, max_sweeps: int = 64) -> SpectralDecomp:
    """Cyclic Jacobi eigensolver for (stacks of) Hermitian matrices."""
    A = check_hermitian(A)
    batch = A.shape[:-2]
    flat = A.reshape((-1,) + A.shape[-2:])
    ws, vs = zip(*(_jacobi_single(M, tol, max_sweeps) for M in flat)) if flat.shape[0] else ((), ())
    d = A.shape[-1]
    w = np.array(ws).reshape(batch + (d,))
    v = np.array(vs).reshape(batch + (d, d))
    return SpectralDecomp(w, v)


def herm_eig(A: np.ndarray, method: str = "lapack") -> SpectralDecomp:
    """Eigendecomposition of Hermitian matrices.

    ``method="lapack"`` uses the batched LAPACK driver; ``"jacobi"`` runs the
    cyclic Jacobi sweep in :func:`jacobi_eigh`. Inputs further than
    ``TOL_HERM`` (relative) from Hermitian are rejected.
    """
    if method == "jacobi":
        return jacobi_eigh(A)
    if method != "lapack":
        raise ValueError(f"unknown eigensolver {method!r}")
    A = check_hermitian(A)
    w, v = np.linalg.eigh(A)
    return SpectralDecomp(w, v)


def func_calc(A: np.ndarray, phi: Callable[[np.ndarray], np.ndarray], decomp: SpectralDecomp | None = None) -> np.ndarray:
    """Return U diag(phi(eigenvalues)) U* for Hermitian A."""
    dec = decomp if decomp is not None else herm_eig(A)
    with np.errstate(all="ignore"):
        vals = np.asarray(phi(dec.eigenvalues))
    if vals.shape != dec.eigenvalues.shape:
        vals = np.broadcast_to(vals, dec.eigenvalues.shape)
    if not np.all(np.isfinite(vals)):
        bad = dec.eigenvalues[~np.isfinite(vals)]
        raise ValueError(f"function undefined on the spectrum, e.g. at eigenvalue {bad.flat[0]:.6g}")
    U = dec.eigenvectors
    out = (U * vals[..., None, :]) @ adjoint(U)
    if np.iscomplexobj(vals):
        return out
    return 0.5 * (out + adjoint(out))


def msqrt(A: np.ndarray) -> np.ndarray:
    """Square root of a positive semidefinite matrix (round-off negatives clipped)."""
    return func_calc(A, lambda w: np.sqrt(np.clip(w, 0.0, None)))


def mabs(A: np.ndarray) -> np.ndarray:
    """|A| = (A* A)^{1/2}."""
    A = np.asarray(A, dtype=complex)
    return msqrt(adjoint(A) @ A)


@dataclass(frozen=True)
class Interval:
    """Real interval with open/closed endpoints; infinite ends are always open."""

    lo: float = -np.inf
    hi: float = np.inf
    lo_closed: bool = False
    hi_closed: bool = False

    @classmethod
    def upto(cls, lam: float) -> "Interval":
        return cls(-np.inf, lam, False, True)

    @classmethod
    def above(cls, lam: float) -> "Interval":
        return cls(lam, np.inf, False, False)

    @classmethod
    def open_closed(cls, lo: float, hi: float) -> "Interval":
        return cls(lo, hi, False, True)

    @classmethod
    def closed(cls, lo: float, hi: float) -> "Interval":
        return cls(lo, hi, True, True)

    def contains(self, w: np.ndarray, band: np.ndarray | float = 0.0) -> np.ndarray:
        """Membership with a tolerance band: closed ends widen by ``band``, open ends shrink."""
        w = np.asarray(w)
        band = np.asarray(band)
        if np.isfinite(self.lo):
            lo_ok = w >= self.lo - band if self.lo_closed else w > self.lo + band
        else:
            lo_ok = np.ones(w.shape, bool)
        if np.isfinite(self.hi):
            hi_ok = w <= self.hi + band if self.hi_closed else w < self.hi - band
        else:
            hi_ok = np.ones(w.shape, bool)
        return lo_ok & hi_ok


def spectral_proj(A: np.ndarray, interval: Interval, band: np.ndarray | float | None = None,
                  decomp: SpectralDecomp | None = None) -> np.ndarray:
    """Spectral projection of Hermitian A onto ``interval``.

    The endpoint band defaults to ``TOL_BAND * ||A||`` per matrix.
    """
    dec = decomp if decomp is not None else herm_eig(A)
    if band is None:
        band = TOL_BAND * np.max(np.abs(dec.eigenvalues), axis=-1, initial=0.0)
    band = np.asarray(band, dtype=float)[..., None]
    mask = interval.contains(dec.eigenvalues, band).astype(float)
    U = dec.eigenvectors
    P = (U * mask[..., None, :]) @ adjoint(U)
    return 0.5 * (P + adjoint(P))


def projection_defect(P: np.ndarray) -> float:
    """max over the stack of ||P^2 - P|| + ||P - P*||."""
    P = np.asarray(P)
    if P.size == 0:
        return 0.0
    return float(np.max(opnorm(P @ P - P) + opnorm(P - adjoint(P))))


def is_projection(P: np.ndarray, tol: float = TOL_PROJ) -> bool:
    return projection_defect(P) <= tol


def _as_stack(Ps: Sequence[np.ndarray]) -> np.ndarray:
    if len(Ps) == 0:
        raise ValueError("empty sequence of projections")
    return np.stack([np.asarray(P, dtype=complex) for P in Ps])


def meet_from_sum(S: np.ndarray, m: int, tol: float = TOL_MEET) -> np.ndarray:
    """Projection onto the eigenvalue-1 eigenspace of S/m, where S is a sum of m projections."""
    return spectral_proj(S / m, Interval(1.0 - tol, np.inf, True, False), band=0.0)


def join_from_sum(S: np.ndarray, m: int, tol: float = TOL_MEET) -> np.ndarray:
    """Join of m projections given their sum S, as the complement of the meet of complements."""
    one = identity_like(S)
    return one - meet_from_sum(m * one - S, m, tol)


def proj_meet(Ps: Sequence[np.ndarray], tol: float = TOL_MEET) -> np.ndarray:
    """Projection onto the intersection of the ranges of ``Ps``."""
    stack = _as_stack(Ps)
    return meet_from_sum(stack.sum(axis=0), stack.shape[0], tol)


def proj_join(Ps: Sequence[np.ndarray], tol: float = TOL_MEET) -> np.ndarray:
    """Projection onto the span of the ranges of ``Ps``."""
    stack = _as_stack(Ps)
    return join_from_sum(stack.sum(axis=0), stack.shape[0], tol)


def proj_leq(A: np.ndarray, B: np.ndarray, tol: float = TOL_ORDER) -> bool:
    """A <= B for projections, tested as ||A - BAB|| <= tol * max(1, ||A||)."""
    return order_defect(A, B) <= tol


def order_defect(A: np.ndarray, B: np.ndarray) -> float:
    A = np.asarray(A)
    B = np.asarray(B)
    if A.size == 0:
        return 0.0
    dev = opnorm(A - B @ A @ B) / np.maximum(1.0, opnorm(A))
    return float(np.max(dev))


def support_left(A: np.ndarray, tol: float = TOL_BAND) -> np.ndarray:
    """Range projection of A (left support); singular values below tol * ||A|| count as zero."""
    A = np.asarray(A, dtype=complex)
    U, sv, _ = np.linalg.svd(A)
    cut = tol * sv[..., :1]
    mask = (sv > cut).astype(float)
    P = (U * mask[..., None, :]) @ adjoint(U)
    return 0.5 * (P + adjoint(P))


def support_right(A: np.ndarray, tol: float = TOL_BAND) -> np.ndarray:
    """Range projection of A* (right support)."""
    return support_left(adjoint(np.asarray(A, dtype=complex)), tol)
