"""Cuculescu projections and the matrix-valued Calderon-Zygmund decomposition.

Projection families are kept as lists indexed by generation: entry k is a
``(2**k,)*n + (d, d)`` array, i.e. an A_k-measurable projection. Products
between generations are taken after refining to the leaf grid.

The lacunary machinery (pi_{j,k}, psi_k, the triangular truncations, the
row/column split and the auxiliary projections q-hat and zeta) lives here too,
since all of it is built from Cuculescu sequences at levels lambda = 2^s.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dyadic import Grid, MatFn, coarsen, level_diffs, level_means, refine
from .ncalg import (TOL_BAND, TOL_MEET, Interval, adjoint, herm_eig, identity_like,
                    join_from_sum, meet_from_sum, opnorm, spectral_proj)

TOL_POS = 1e-10


def _leaf(grid: Grid, arr: np.ndarray, k: int) -> np.ndarray:
    return refine(arr, grid.n, grid.K - k)


def _eye(grid: Grid, k: int, d: int) -> np.ndarray:
    return np.broadcast_to(np.eye(d, dtype=complex), grid.shape(k) + (d, d)).copy()


def _maxnorm(x: np.ndarray) -> float:
    return float(opnorm(x).max(initial=0.0)) if x.size else 0.0


def check_positive(f: MatFn):
    w = herm_eig(f.values).eigenvalues
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.size and w.min() < -TOL_POS * scale:
        raise ValueError(f"function is not positive: leaf eigenvalue {w.min():.3e}")


# ---------------------------------------------------------------------------
# Cuculescu sequence


@dataclass(frozen=True, eq=False)
class CuculescuSeq:
    grid: Grid
    lam: float
    q_levels: tuple[np.ndarray, ...]   # q_0 .. q_K on their own generations
    root_trivial: bool                 # q_0 = 1, i.e. lambda >= ||f_0||

    @property
    def d(self) -> int:
        return self.q_levels[0].shape[-1]

    def q(self, k: int) -> np.ndarray:
        """q_k on generation k; q_{-1} is the identity on generation 0."""
        if k < 0:
            return _eye(self.grid, 0, self.d)
        return self.q_levels[k]

    def p(self, k: int) -> np.ndarray:
        """p_k = q_{k-1} - q_k on generation k."""
        prev = self.q(k - 1)
        if k > 0:
            prev = refine(prev, self.grid.n, 1)
        return prev - self.q_levels[k]

    def q_leaf(self, k: int) -> np.ndarray:
        return _leaf(self.grid, self.q(k), max(k, 0))

    def p_leaf(self, k: int) -> np.ndarray:
        return _leaf(self.grid, self.p(k), k)

    @property
    def q_final(self) -> np.ndarray:
        return self.q_leaf(self.grid.K)

    def weak_mass(self) -> float:
        """phi(1 - q)."""
        q = self.q_final
        return float(1.0 - np.real(np.trace(q, axis1=-2, axis2=-1)).mean() / self.d)


def cuculescu_run(f: MatFn, lam: float) -> CuculescuSeq:
    """q_k = chi_{[0,lam]}(q_{k-1} f_k q_{k-1}) restricted to the range of q_{k-1}.

    The restriction is enforced by adding c(1 - q_{k-1}) with c > lam, which
    pushes the complement of q_{k-1} out of the spectral window.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    check_positive(f)
    grid = f.grid
    n = grid.n
    means = level_means(f.values, n, grid.K)
    d = f.d
    prev = None
    levels = []
    for k, fk in enumerate(means):
        Q = _eye(grid, 0, d) if prev is None else refine(prev, n, 1)
        one = identity_like(Q)
        c = 2.0 * (lam + _maxnorm(fk)) + 1.0
        X = Q @ fk @ Q + c * (one - Q)
        X = 0.5 * (X + adjoint(X))
        qk = spectral_proj(X, Interval.upto(lam), band=TOL_BAND * max(c, lam))
        levels.append(qk)
        prev = qk
    root_trivial = bool(np.allclose(levels[0], np.eye(d), atol=1e-12))
    return CuculescuSeq(grid, float(lam), tuple(levels), root_trivial)


def cuculescu_defects(seq: CuculescuSeq, f: MatFn) -> dict[str, float]:
    """Max deviations from the Cuculescu properties (all should be ~0)."""
    grid = f.grid
    n = grid.n
    means = level_means(f.values, n, grid.K)
    dec = comm = order = 0.0
    for k in range(grid.K + 1):
        qk = seq.q(k)
        prev = seq.q(k - 1)
        if k > 0:
            prev = refine(prev, n, 1)
        else:
            prev = np.broadcast_to(prev, qk.shape)
        dec = max(dec, _maxnorm(qk @ prev - qk))
        Y = prev @ means[k] @ prev
        comm = max(comm, _maxnorm(qk @ Y - Y @ qk))
        Z = qk @ means[k] @ qk - seq.lam * qk
        w = herm_eig(0.5 * (Z + adjoint(Z))).eigenvalues
        order = max(order, float(w.max(initial=0.0)) / max(1.0, seq.lam))
    ps = [seq.p_leaf(k) for k in range(grid.K + 1)]
    orth = 0.0
    for i in range(len(ps)):
        for j in range(i + 1, len(ps)):
            orth = max(orth, _maxnorm(ps[i] @ ps[j]))
    total = sum(ps) + seq.q_final - _eye(grid, grid.K, f.d)
    return {"decreasing": dec, "commutation": comm, "order": max(order, 0.0),
            "p_orthogonal": orth, "p_sum": _maxnorm(total)}


# ---------------------------------------------------------------------------
# CZ decomposition


@dataclass(frozen=True, eq=False)
class CZParts:
    f: MatFn
    seq: CuculescuSeq
    g_d: MatFn
    b_d: MatFn
    b_off: MatFn
    g_off: MatFn

    def g_series(self, k: int, s: int) -> MatFn:
        """g_{k,s} = p_k df_{k+s} q_{k+s-1} + q_{k+s-1} df_{k+s} p_k."""
        K = self.f.grid.K
        if not (k >= 0 and s >= 1 and k + s <= K):
            raise ValueError(f"g_(k,s) undefined for k={k}, s={s}, K={K}")
        grid = self.f.grid
        df = _leaf(grid, level_diffs(level_means(self.f.values, grid.n, K), grid.n)[k + s], k + s)
        p = self.seq.p_leaf(k)
        q = self.seq.q_leaf(k + s - 1)
        return self.f.like(p @ df @ q + q @ df @ p)

    def g_series_sum(self) -> MatFn:
        grid = self.f.grid
        K = grid.K
        dfs = level_diffs(level_means(self.f.values, grid.n, K), grid.n)
        ps = [self.seq.p_leaf(k) for k in range(K + 1)]
        total = np.zeros_like(self.f.values)
        for s in range(1, K + 1):
            for k in range(0, K - s + 1):
                df = _leaf(grid, dfs[k + s], k + s)
                q = self.seq.q_leaf(k + s - 1)
                total = total + ps[k] @ df @ q + q @ df @ ps[k]
        return self.f.like(total)


def cz_decompose(f: MatFn, lam: float, seq: CuculescuSeq | None = None) -> CZParts:
    seq = seq if seq is not None else cuculescu_run(f, lam)
    grid = f.grid
    K = grid.K
    means = [_leaf(grid, m, k) for k, m in enumerate(level_means(f.values, grid.n, K))]
    ps = [seq.p_leaf(k) for k in range(K + 1)]
    q = seq.q_final
    one = _eye(grid, K, f.d)
    F = f.values
    g_d = q @ F @ q
    b_d = np.zeros_like(F)
    b_off = np.zeros_like(F)
    g_off = q @ F @ (one - q) + (one - q) @ F @ q
    for i in range(K + 1):
        g_d = g_d + ps[i] @ means[i] @ ps[i]
        b_d = b_d + ps[i] @ (F - means[i]) @ ps[i]
        for j in range(K + 1):
            if i == j:
                continue
            m = means[max(i, j)]
            b_off = b_off + ps[i] @ (F - m) @ ps[j]
            g_off = g_off + ps[i] @ m @ ps[j]
    return CZParts(f, seq, f.like(g_d, True), f.like(b_d, True), f.like(b_off, True), f.like(g_off, True))


def diagonal_estimates(parts: CZParts) -> dict[str, float]:
    """Both sides of ||g_d||_2^2 <= 2^n lam ||f||_1 and sum_k ||p_k (f - f_k) p_k||_1 <= 2 ||f||_1."""
    from .dyadic import lp_norm

    f = parts.f
    grid = f.grid
    means = [_leaf(grid, m, k) for k, m in enumerate(level_means(f.values, grid.n, grid.K))]
    l1 = lp_norm(f, 1)
    bd_sum = 0.0
    for k in range(grid.K + 1):
        p = parts.seq.p_leaf(k)
        bd_sum += lp_norm(f.like(p @ (f.values - means[k]) @ p), 1)
    return {"gd_l2_sq": lp_norm(parts.g_d, 2) ** 2, "gd_bound": 2**grid.n * parts.seq.lam * l1,
            "bd_l1_sum": bd_sum, "bd_bound": 2 * l1}


def delta_formulas_check(f: MatFn, lam: float, parts: CZParts | None = None) -> dict[str, float]:
    """Max deviations in the closed forms for Delta_k of the bad and off-diagonal parts."""
    parts = parts if parts is not None else cz_decompose(f, lam)
    grid = f.grid
    K = grid.K
    n = grid.n
    seq = parts.seq
    dfs = level_diffs(level_means(f.values, n, K), n)
    diffs = {name: level_diffs(level_means(getattr(parts, name).values, n, K), n)
             for name in ("b_d", "g_off", "b_off", "g_d")}
    one = _eye(grid, K, f.d)
    out = {"sum": float(np.abs(parts.g_d.values + parts.b_d.values + parts.b_off.values
                               + parts.g_off.values - f.values).max()),
           "g_series": float(np.abs(parts.g_series_sum().values - parts.g_off.values).max()),
           "delta_bd": 0.0, "delta_goff": 0.0, "q_b_d": 0.0, "q_g_off": 0.0, "q_b_off": 0.0}
    for k in range(1, K + 1):
        df = _leaf(grid, dfs[k], k)
        qp = seq.q_leaf(k - 1)
        lhs = _leaf(grid, diffs["b_d"][k], k)
        rhs = sum(seq.p_leaf(j) @ df @ seq.p_leaf(j) for j in range(k))
        out["delta_bd"] = max(out["delta_bd"], float(np.abs(lhs - rhs).max()))
        lhs = _leaf(grid, diffs["g_off"][k], k)
        rhs = (one - qp) @ df @ qp + qp @ df @ (one - qp)
        out["delta_goff"] = max(out["delta_goff"], float(np.abs(lhs - rhs).max()))
        for name in ("b_d", "g_off", "b_off"):
            dk = _leaf(grid, diffs[name][k], k)
            key = "q_" + name
            out[key] = max(out[key], float(np.abs(qp @ dk @ qp).max()))
    return out


# ---------------------------------------------------------------------------
# lacunary projections


@dataclass(frozen=True, eq=False)
class LacunaryFamily:
    f: MatFn
    s_min: int
    s_max: int
    seqs: dict[int, CuculescuSeq]
    # tails[j][k] = meet over s >= j of q_k(2^s), for s_min <= j <= s_max
    tails: dict[int, tuple[np.ndarray, ...]] = field(repr=False)

    @property
    def grid(self) -> Grid:
        return self.f.grid

    def tail(self, j: int, k: int) -> np.ndarray:
        j = min(max(j, self.s_min), self.s_max)
        return self.tails[j][k]

    def pi(self, j: int, k: int) -> np.ndarray:
        if not self.s_min < j <= self.s_max:
            raise ValueError(f"pi_(j,k) needs {self.s_min} < j <= {self.s_max}, got j={j}")
        return self.tails[j][k] - self.tails[j - 1][k]

    def psi(self, k: int) -> np.ndarray:
        return self.tails[self.s_min][k]

    def levels(self) -> range:
        return range(self.s_min + 1, self.s_max + 1)


def lacunary_build(f: MatFn, s_min: int, s_max: int, tol: float = TOL_MEET) -> LacunaryFamily:
    if not s_min < s_max:
        raise ValueError(f"need s_min < s_max, got {s_min}, {s_max}")
    top = f.norm_inf()
    if 2.0**s_max < top:
        need = int(np.ceil(np.log2(top)))
        raise ValueError(f"2^s_max = {2.0**s_max:g} < ||f||_inf = {top:.6g}; need s_max >= {need}")
    seqs = {s: cuculescu_run(f, 2.0**s) for s in range(s_min, s_max + 1)}
    K = f.grid.K
    tails = {s_max: seqs[s_max].q_levels}
    for j in range(s_max - 1, s_min - 1, -1):
        row = []
        for k in range(K + 1):
            S = tails[j + 1][k] + seqs[j].q(k)
            row.append(meet_from_sum(S, 2, tol))
        tails[j] = tuple(row)
    return LacunaryFamily(f, s_min, s_max, seqs, tails)


def lacunary_defects(fam: LacunaryFamily) -> dict[str, float]:
    """Idempotence, mutual orthogonality and completeness of {pi_{j,k}} and psi_k."""
    K = fam.grid.K
    idem = orth = total = 0.0
    for k in range(K + 1):
        pis = [fam.pi(j, k) for j in fam.levels()]
        acc = fam.psi(k).copy()
        for a, P in enumerate(pis):
            idem = max(idem, _maxnorm(P @ P - P), _maxnorm(P - adjoint(P)))
            for Pb in pis[a + 1:]:
                orth = max(orth, _maxnorm(P @ Pb))
            acc = acc + P
        total = max(total, _maxnorm(acc - _eye(fam.grid, k, acc.shape[-1])))
    return {"pi_idempotent": idem, "pi_orthogonal": orth, "completeness": total}


def psi_residuals(fam: LacunaryFamily) -> tuple[np.ndarray, float]:
    """(||psi_k df_k||_inf for k = 1..K, bound 2^{1 + s_min/2} ||f||_inf^{1/2})."""
    f = fam.f
    n = f.grid.n
    dfs = level_diffs(level_means(f.values, n, f.grid.K), n)
    vals = np.array([_maxnorm(fam.psi(k) @ dfs[k]) for k in range(1, f.grid.K + 1)])
    return vals, 2.0 ** (1 + fam.s_min / 2) * np.sqrt(f.norm_inf())


def key_identities(fam: LacunaryFamily, ell: int) -> dict[str, float]:
    """Residuals of q^_{k-1} pi_{i,k-1} = 0 (i > ell) and pi_{i,k-1} p_{k-s} = 0 (i <= ell, s >= 1)."""
    if not fam.s_min < ell <= fam.s_max:
        raise ValueError(f"ell must lie in ({fam.s_min}, {fam.s_max}]")
    grid = fam.grid
    K = grid.K
    seq = fam.seqs[ell]
    a = b = 0.0
    for k in range(1, K + 1):
        qh = _leaf(grid, fam.tail(ell, k - 1), k - 1)
        for i in fam.levels():
            P = _leaf(grid, fam.pi(i, k - 1), k - 1)
            if i > ell:
                a = max(a, _maxnorm(qh @ P), _maxnorm(P @ qh))
            else:
                for m in range(0, k):
                    pm = seq.p_leaf(m)
                    b = max(b, _maxnorm(P @ pm), _maxnorm(pm @ P))
    return {"qhat_pi": a, "pi_p": b}


def nesting_defects(fam: LacunaryFamily) -> dict[str, float]:
    """Tails increase in j and decrease in k (as projection orderings)."""
    from .ncalg import order_defect

    grid = fam.grid
    in_j = in_k = 0.0
    for k in range(grid.K + 1):
        for j in range(fam.s_min, fam.s_max):
            in_j = max(in_j, order_defect(fam.tail(j, k), fam.tail(j + 1, k)))
    for j in range(fam.s_min, fam.s_max + 1):
        for k in range(1, grid.K + 1):
            in_k = max(in_k, order_defect(fam.tail(j, k), refine(fam.tail(j, k - 1), grid.n, 1)))
    return {"increasing_in_j": in_j, "decreasing_in_k": in_k}


# ---------------------------------------------------------------------------
# triangular truncations and the row/column split


def _truncate(x: np.ndarray, fam: LacunaryFamily, k: int, upper: bool) -> np.ndarray:
    grid = fam.grid
    psi = _leaf(grid, fam.psi(k), k)
    one = _eye(grid, grid.K, psi.shape[-1])
    out = np.zeros_like(x)
    for j in fam.levels():
        tail = _leaf(grid, fam.tail(j, k), k)
        pj = _leaf(grid, fam.pi(j, k), k)
        # sum_{i<=j} pi_i = tail_j - psi and sum_{i>j} pi_i = 1 - tail_j
        left = tail - psi if upper else one - tail
        out = out + left @ x @ pj
    return out


def triangular_truncate(x: MatFn, fam: LacunaryFamily, k: int, part: str = "upper") -> MatFn:
    """UT_k(x) = sum_{i<=j} pi_{i,k} x pi_{j,k}; LT_k(x) = sum_{i>j} pi_{i,k} x pi_{j,k}."""
    if x.grid.n != fam.grid.n or x.grid.K != fam.grid.K:
        raise ValueError("function and lacunary family live on different grids")
    if part not in ("upper", "lower"):
        raise ValueError(f"part must be 'upper' or 'lower', got {part!r}")
    fam.grid.check_gen(k)
    return x.like(_truncate(x.values, fam, k, part == "upper"))


@dataclass(frozen=True, eq=False)
class RowColSplit:
    f_r: MatFn
    f_c: MatFn
    residual: MatFn

    def residual_norm(self) -> float:
        return self.residual.norm_inf()


def row_col_split(f: MatFn, s_min: int, s_max: int, fam: LacunaryFamily | None = None) -> RowColSplit:
    fam = fam if fam is not None else lacunary_build(f, s_min, s_max)
    grid = f.grid
    dfs = level_diffs(level_means(f.values, grid.n, grid.K), grid.n)
    fr = np.zeros_like(f.values)
    fc = np.zeros_like(f.values)
    for k in range(1, grid.K + 1):
        df = _leaf(grid, dfs[k], k)
        fr = fr + _truncate(df, fam, k - 1, upper=False)
        fc = fc + _truncate(df, fam, k - 1, upper=True)
    return RowColSplit(f.like(fr), f.like(fc), f.like(f.values - fr - fc))


def residual_bounds(fam: LacunaryFamily) -> dict[str, float]:
    """Two bounds on ||f - f_r - f_c||_inf.

    ``stated`` is (K+1) 2^{1+s_min/2} ||f||^{1/2} + ||f_0||. ``derived`` uses
    psi_{k-1} f_k psi_{k-1} <= 2^n psi_{k-1} f_{k-1} psi_{k-1} <= 2^{n+s_min},
    which gives ||psi_{k-1} df_k|| <= (2^{n/2} + 1) 2^{s_min/2} ||f||^{1/2}.
    """
    f = fam.f
    n, K = f.grid.n, f.grid.K
    root = np.sqrt(f.norm_inf())
    f0 = _maxnorm(f.coarse(0))
    return {"stated": (K + 1) * 2.0 ** (1 + fam.s_min / 2) * root + f0,
            "derived": K * 2 * (2.0 ** (n / 2) + 1) * 2.0 ** (fam.s_min / 2) * root + f0}


# ---------------------------------------------------------------------------
# q-hat and zeta


@dataclass(frozen=True, eq=False)
class QHat:
    ell: int
    q: np.ndarray                  # leaf array
    levels: tuple[np.ndarray, ...]  # q^_k on generation k

    def level_leaf(self, grid: Grid, k: int) -> np.ndarray:
        if k < 0:
            return _eye(grid, grid.K, self.q.shape[-1])
        return _leaf(grid, self.levels[k], k)


def qhat_build(fam: LacunaryFamily, ell: int) -> QHat:
    """q^_k = meet_{s >= ell} q_k(2^s) and q^ = q^_K."""
    if not fam.s_min < ell <= fam.s_max:
        raise ValueError(f"ell must lie in ({fam.s_min}, {fam.s_max}]")
    levels = tuple(fam.tail(ell, k) for k in range(fam.grid.K + 1))
    return QHat(ell, _leaf(fam.grid, levels[-1], fam.grid.K), levels)


def proj_mass(P: np.ndarray) -> float:
    """phi of a leaf projection array (normalized trace, uniform leaves)."""
    return float(np.real(np.trace(P, axis1=-2, axis2=-1)).mean() / P.shape[-1])


@dataclass(frozen=True, eq=False)
class Zeta:
    s: int
    zeta: np.ndarray                 # leaf array, equal to zeta_K
    levels: tuple[np.ndarray, ...]   # zeta_k as leaf arrays, k = 0..K
    rho: tuple[np.ndarray, ...]      # rho on generation j: q^_{j-1} - q^_j cleaned to a projection


def zeta_build(fam: LacunaryFamily, ell: int, s: int, qhat: QHat | None = None) -> Zeta:
    """zeta_k = 1 - join{rho_Q 1_{Q^s} : Q in Q_j, j <= k}, ancestors clamped at generation 0."""
    if s < 0:
        raise ValueError("shift complexity s must be >= 0")
    qh = qhat if qhat is not None else qhat_build(fam, ell)
    grid = fam.grid
    n, K = grid.n, grid.K
    d = qh.q.shape[-1]
    rho = []
    for j in range(K + 1):
        prev = _eye(grid, 0, d) if j == 0 else refine(qh.levels[j - 1], n, 1)
        diff = prev - qh.levels[j]
        rho.append(spectral_proj(0.5 * (diff + adjoint(diff)), Interval.above(0.5), band=0.0))
    S = np.zeros(grid.shape(K) + (d, d), complex)
    m = 0
    levels = []
    for j in range(K + 1):
        a = max(j - s, 0)
        block = 2 ** (n * (j - a))
        # sum of rho_Q over the generation-j cubes inside each generation-a cube
        S = S + _leaf(grid, coarsen(rho[j], n, j - a) * block, a)
        m += block
        levels.append(_eye(grid, K, d) - join_from_sum(S, m))
    return Zeta(s, levels[-1], tuple(levels), tuple(rho))


def zeta_order_defect(fam: LacunaryFamily, qh: QHat, z: Zeta) -> float:
    """max over k0, Q0, x in Q0^s of the defect in zeta(x) <= q^_{k0}(Q0)."""
    from .ncalg import order_defect

    grid = fam.grid
    n, K = grid.n, grid.K
    worst = 0.0
    for k0 in range(K + 1):
        a = max(k0 - z.s, 0)
        qk = qh.levels[k0]
        for Q0 in grid.cubes(k0):
            anc = Q0.ancestor(k0 - a)
            zx = z.zeta[anc.leaf_slice(K)].reshape(-1, qk.shape[-1], qk.shape[-1])
            worst = max(worst, order_defect(zx, qk[Q0.coords]))
    return worst


def rho_orthogonality_defect(z: Zeta, grid: Grid) -> float:
    """rho_{Q1} rho_{Q2} = 0 on Q1 whenever Q1 is strictly inside Q2."""
    K = grid.K
    leaf_rho = [_leaf(grid, r, j) for j, r in enumerate(z.rho)]
    worst = 0.0
    for j1 in range(K + 1):
        for j2 in range(j1):
            worst = max(worst, _maxnorm(leaf_rho[j1] @ leaf_rho[j2]))
    return worst
