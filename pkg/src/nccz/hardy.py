"""Dyadic-martingale Hardy and BMO functionals, atoms, and atom-level checks.

Martingale differences run over k = 1..K. The root average E_0 f is not a
difference and does not enter the square functions, so every norm here
vanishes on constants. The first algebra of the filtration is generation 0
(constants on [0,1)^n); it plays the role of A_1 in the bmo norm and in the
unit c-atoms.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dyadic import (CubeIndex, Grid, MatFn, coarsen, level_diffs, level_means, lp_norm,
                     refine)
from .ncalg import adjoint, msqrt, opnorm
from .records import ProbeReport


def _leaf(grid: Grid, arr: np.ndarray, k: int) -> np.ndarray:
    return refine(arr, grid.n, grid.K - k)


def _diffs(f: MatFn) -> list[np.ndarray]:
    """[df_1, ..., df_K] as leaf arrays."""
    grid = f.grid
    dfs = level_diffs(level_means(f.values, grid.n, grid.K), grid.n)
    return [_leaf(grid, dfs[k], k) for k in range(1, grid.K + 1)]


def _maxnorm(x: np.ndarray) -> float:
    return float(opnorm(x).max(initial=0.0)) if x.size else 0.0


def square_fn(f: MatFn, side: str = "column", conditional: bool = False) -> MatFn:
    """(sum_k df_k* df_k)^{1/2}, or with df_k df_k* on the row side; ``conditional`` inserts E_{k-1}."""
    grid = f.grid
    total = np.zeros_like(f.values)
    for k, df in enumerate(_diffs(f), start=1):
        sq = adjoint(df) @ df if side == "column" else df @ adjoint(df)
        if conditional:
            sq = _leaf(grid, coarsen(sq, grid.n, grid.K - k + 1), k - 1)
        total = total + sq
    return f.like(msqrt(0.5 * (total + adjoint(total))), hermitian=True)


@dataclass
class NormReport:
    H1r: float = 0.0
    H1c: float = 0.0
    h1r: float = 0.0
    h1c: float = 0.0
    h1d: float = 0.0
    Hp: dict[str, float] = field(default_factory=dict)
    BMOr: float = 0.0
    BMOc: float = 0.0
    bmor: float = 0.0
    bmoc: float = 0.0
    bmod: float = 0.0

    @property
    def BMO(self) -> float:
        return max(self.BMOr, self.BMOc)

    @property
    def bmo(self) -> float:
        return max(self.bmor, self.bmoc, self.bmod)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["BMO"] = self.BMO
        out["bmo"] = self.bmo
        return out


def hardy_norms(f: MatFn, ps: Sequence[float] = ()) -> NormReport:
    """Pure row/column square-function norms (no infimum over splittings)."""
    rep = NormReport()
    Sc = square_fn(f, "column")
    Sr = square_fn(f, "row")
    rep.H1c = lp_norm(Sc, 1)
    rep.H1r = lp_norm(Sr, 1)
    rep.h1c = lp_norm(square_fn(f, "column", conditional=True), 1)
    rep.h1r = lp_norm(square_fn(f, "row", conditional=True), 1)
    rep.h1d = sum(lp_norm(f.like(df), 1) for df in _diffs(f))
    for p in ps:
        rep.Hp[f"H{p:g}c"] = lp_norm(Sc, p)
        rep.Hp[f"H{p:g}r"] = lp_norm(Sr, p)
    return rep


def _cond_sq_sup(f: MatFn, shift: int, side: str, ks: Iterable[int]) -> float:
    """sup_k ||E_k[(f - f_{k-shift})* (f - f_{k-shift})]||^{1/2} (row side: (f - .)(f - .)*)."""
    grid = f.grid
    means = level_means(f.values, grid.n, grid.K)
    best = 0.0
    for k in ks:
        g = f.values - _leaf(grid, means[k - shift], k - shift)
        sq = adjoint(g) @ g if side == "column" else g @ adjoint(g)
        best = max(best, _maxnorm(coarsen(sq, grid.n, grid.K - k)))
    return float(np.sqrt(best))


def bmo_norms(f: MatFn) -> NormReport:
    grid = f.grid
    rep = NormReport()
    rep.BMOc = _cond_sq_sup(f, 1, "column", range(1, grid.K + 1))
    rep.BMOr = _cond_sq_sup(f, 1, "row", range(1, grid.K + 1))
    root = lp_norm(f.like(_leaf(grid, f.coarse(0), 0)), 1)
    rep.bmoc = max(root, _cond_sq_sup(f, 0, "column", range(0, grid.K + 1)))
    rep.bmor = max(root, _cond_sq_sup(f, 0, "row", range(0, grid.K + 1)))
    rep.bmod = max((_maxnorm(df) for df in _diffs(f)), default=0.0)
    return rep


def all_norms(f: MatFn, ps: Sequence[float] = ()) -> NormReport:
    rep = hardy_norms(f, ps)
    b = bmo_norms(f)
    for name in ("BMOr", "BMOc", "bmor", "bmoc", "bmod"):
        setattr(rep, name, getattr(b, name))
    return rep


# ---------------------------------------------------------------------------
# atoms

ATOM_KINDS = ("mei_column", "mei_row", "perrin_c", "perrin_r", "unit_A1")


@dataclass(frozen=True, eq=False)
class AtomSpec:
    kind: str
    a: MatFn
    cube: CubeIndex | None = None
    k0: int | None = None
    e: np.ndarray | None = None    # projection on generation k0

    def e_leaf(self) -> np.ndarray:
        return _leaf(self.a.grid, self.e, self.k0)


def _phi_proj(P: np.ndarray) -> float:
    return float(np.real(np.trace(P, axis1=-2, axis2=-1)).mean() / P.shape[-1])


def l1_l2c(a: MatFn, cube: CubeIndex, side: str = "column") -> float:
    """tau[(int_Q |a|^2)^{1/2}], |a|^2 = a* a on the column side and a a* on the row side."""
    grid = a.grid
    block = a.values[cube.leaf_slice(grid.K)].reshape(-1, a.d, a.d)
    sq = adjoint(block) @ block if side == "column" else block @ adjoint(block)
    M = sq.sum(axis=0) * grid.leaf_volume
    w = np.clip(np.linalg.eigvalsh(0.5 * (M + adjoint(M))), 0, None)
    return float(np.sqrt(w).sum() / a.d)


def make_atom(kind: str, grid: Grid, d: int, rng: np.random.Generator, cube: CubeIndex | None = None,
              k0: int | None = None, rank: int | None = None, fill: float | None = None) -> AtomSpec:
    """Random atom satisfying every defining condition exactly up to round-off.

    ``fill`` in (0, 1] is the fraction of the allowed size used (random if None).
    """
    if kind not in ATOM_KINDS:
        raise ValueError(f"unknown atom kind {kind!r}; choose from {ATOM_KINDS}")
    fill = rng.uniform(0.05, 1.0) if fill is None else fill
    shape = grid.shape(grid.K) + (d, d)
    b = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    if kind == "unit_A1":
        A = b[(0,) * grid.n]
        a = MatFn.constant(grid, A)
        return AtomSpec(kind, a * (fill / lp_norm(a, 1)))
    if kind.startswith("mei"):
        if cube is None:
            g = int(rng.integers(0, grid.K))
            cube = CubeIndex(g, tuple(int(c) for c in rng.integers(0, 2**g, grid.n)))
        if cube.k > grid.K - 1:
            raise ValueError(f"cube {cube} holds a single leaf; no mean-zero atom fits")
        mask = np.zeros(grid.shape(grid.K), bool)
        mask[cube.leaf_slice(grid.K)] = True
        inside = b[mask]
        b = np.where(mask[..., None, None], b - inside.mean(axis=0), 0.0)
        a = MatFn(grid, b)
        side = "column" if kind == "mei_column" else "row"
        scale = fill / (np.sqrt(cube.volume) * l1_l2c(a, cube, side))
        return AtomSpec(kind, a * scale, cube=cube)
    # Perrin atoms
    k0 = int(rng.integers(0, grid.K)) if k0 is None else k0
    if not 0 <= k0 <= grid.K:
        raise ValueError(f"k0 = {k0} outside 0..{grid.K}")
    e = _random_projection(grid, k0, d, rng, rank)
    if _phi_proj(e) == 0:
        raise ValueError("the projection e is zero; no atom is supported on it")
    eL = _leaf(grid, e, k0)
    a = b @ eL if kind == "perrin_c" else eL @ b
    mean = _leaf(grid, coarsen(a, grid.n, grid.K - k0), k0)
    a = a - mean
    a = a @ eL if kind == "perrin_c" else eL @ a
    f = MatFn(grid, a)
    norm = lp_norm(f, 2)
    if norm == 0:
        raise ValueError("atom vanished after removing its mean; choose a finer k0")
    return AtomSpec(kind, f * (fill / (norm * np.sqrt(_phi_proj(eL)))), k0=k0, e=e)


def _random_projection(grid: Grid, k: int, d: int, rng: np.random.Generator, rank: int | None) -> np.ndarray:
    shape = grid.shape(k)
    out = np.zeros(shape + (d, d), complex)
    for idx in np.ndindex(*shape):
        r = int(rng.integers(0, d + 1)) if rank is None else rank
        if r == 0:
            continue
        G = rng.standard_normal((d, r)) + 1j * rng.standard_normal((d, r))
        U, _ = np.linalg.qr(G)
        out[idx] = U @ adjoint(U)
    if rank is None and not np.any(out):
        out[(0,) * grid.n] = np.eye(d)
    return out


def verify_atom(atom: AtomSpec, tol: float = 1e-10) -> dict[str, float]:
    """Recompute the defining conditions; values <= 0 (up to ``tol``) mean satisfied."""
    a = atom.a
    grid = a.grid
    if atom.kind == "unit_A1":
        var = float(np.abs(a.values - _leaf(grid, a.coarse(0), 0)).max())
        return {"measurable": var, "size": lp_norm(a, 1) - 1.0}
    if atom.kind.startswith("mei"):
        Q = atom.cube
        mask = np.zeros(grid.shape(grid.K), bool)
        mask[Q.leaf_slice(grid.K)] = True
        outside = float(np.abs(a.values[~mask]).max(initial=0.0))
        mean = float(np.abs(a.values[mask].sum(axis=0) * grid.leaf_volume).max())
        side = "column" if atom.kind == "mei_column" else "row"
        size = l1_l2c(a, Q, side) - 1.0 / np.sqrt(Q.volume)
        return {"support": outside, "mean": mean, "size": size}
    eL = atom.e_leaf()
    fixed = a.values @ eL if atom.kind == "perrin_c" else eL @ a.values
    dev = float(np.abs(fixed - a.values).max())
    cond = float(np.abs(a.coarse(atom.k0)).max())
    size = lp_norm(a, 2) - _phi_proj(eL) ** -0.5
    return {"projection": dev, "mean": cond, "size": size}


def atom_ok(atom: AtomSpec, tol: float = 1e-10) -> bool:
    rep = verify_atom(atom)
    return all(v <= tol * max(1.0, lp_norm(atom.a, 2)) for v in rep.values())


def hansen_check(atom: AtomSpec) -> tuple[float, float]:
    """(tau int_Q |a|, sqrt|Q| tau[(int_Q |a|^2)^{1/2}]) for a Mei atom."""
    a = atom.a
    Q = atom.cube
    side = "column" if atom.kind == "mei_column" else "row"
    return lp_norm(a, 1), float(np.sqrt(Q.volume) * l1_l2c(a, Q, side))


def atom_operator_bound(op, atoms: Iterable[AtomSpec], apply) -> ProbeReport:
    """Per-atom L1 bounds for T applied to atoms; ``apply(op, f)`` evaluates the operator.

    Mei atoms: total, near part on the parent cube (dyadic stand-in for 2Q),
    far part, and the Hansen pair. Perrin atoms: ||T a e - T a|| and the chain
    ||T(a) e||_1 <= ||T a||_2 ||e||_2 (e on the right for column atoms).
    """
    rep = ProbeReport("atom_operator_bound", asserted=True, ceiling=None)
    for atom in atoms:
        a = atom.a
        grid = a.grid
        Ta = apply(op, a)
        total = lp_norm(Ta, 1)
        row = {"total": total}
        if atom.kind.startswith("mei"):
            near_mask = np.zeros(grid.shape(grid.K), bool)
            near_mask[atom.cube.parent().leaf_slice(grid.K)] = True
            near = lp_norm(Ta.like(Ta.values * near_mask[..., None, None]), 1)
            far = lp_norm(Ta.like(Ta.values * (~near_mask)[..., None, None]), 1)
            lhs, rhs = hansen_check(atom)
            row.update(near=near, far=far, hansen_lhs=lhs, hansen_rhs=rhs, hansen_gap=lhs - rhs,
                       l1=lp_norm(a, 1))
        elif atom.kind.startswith("perrin"):
            eL = atom.e_leaf()
            Tae = Ta.values @ eL if atom.kind == "perrin_c" else eL @ Ta.values
            chain_lhs = lp_norm(Ta.like(Tae), 1)
            chain_rhs = lp_norm(Ta, 2) * np.sqrt(_phi_proj(eL))
            row.update(localized=float(np.abs(Tae - Ta.values).max()), chain_lhs=chain_lhs,
                       chain_rhs=chain_rhs, chain_gap=chain_lhs - chain_rhs)
        rep.add(**row)
    return rep


# ---------------------------------------------------------------------------
# paraproduct estimates


def paraproduct_bmo_estimate(rho: MatFn, fs: Iterable[MatFn]) -> ProbeReport:
    """||Pi_rho^c f||_{BMO_r} <= ||rho||_{BMO_r} ||f||_inf per sample, plus the bmo / h1d ratio."""
    from .operators import TransformSpec, mart_paraproduct

    spec = TransformSpec(rho.grid, rho=rho, kind="paraproduct")
    rho_bmo = bmo_norms(rho)
    rep = ProbeReport("paraproduct_bmo_estimate", asserted=True)
    grid = rho.grid
    rho_means = level_means(rho.values, grid.n, grid.K)
    for f in fs:
        P = mart_paraproduct(spec, f)
        lhs = bmo_norms(P).BMOr
        rhs = rho_bmo.BMOr * f.norm_inf()
        # Pi f = sum_{j>=0} (rho - rho_j) df_j with df_0 = E_0 f
        f_means = level_means(f.values, grid.n, grid.K)
        dfs = [_leaf(grid, f_means[0], 0)] + _diffs(f)
        tele = sum((rho.values - _leaf(grid, rho_means[j], j)) @ dfs[j] for j in range(grid.K + 1))
        h1d = hardy_norms(f).h1d
        jn = lp_norm(P, 1) / (rho_bmo.bmo * h1d) if rho_bmo.bmo * h1d > 0 else 0.0
        rep.add(lhs=lhs, rhs=rhs, gap=lhs - rhs, telescope=float(np.abs(tele - P.values).max()),
                h1d_ratio=jn)
    return rep


def john_nirenberg_sample(f: MatFn, rng: np.random.Generator, draws: int = 16) -> dict[str, float]:
    """Sampled lower bound for the atomic-section bmo quantity with rank-one beta.

    beta = (d / |Q|) 1_Q u v* with unit u, v has ||beta||_1 = 1 (normalized trace).
    """
    grid = f.grid
    d = f.d
    means = level_means(f.values, grid.n, grid.K)
    best = max((_maxnorm(df) for df in _diffs(f)), default=0.0)
    for k in range(grid.K + 1):
        g = f.values - _leaf(grid, means[k], k)
        for Q in grid.cubes(k):
            block = g[Q.leaf_slice(grid.K)].reshape(-1, d, d)
            for _ in range(draws):
                v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
                v /= np.linalg.norm(v)
                # || beta g ||_1 = mean over Q of ||g(x)* v||; || g beta ||_1 = mean of ||g(x) v||
                left = np.linalg.norm(adjoint(block) @ v, axis=-1).mean()
                right = np.linalg.norm(block @ v, axis=-1).mean()
                best = max(best, float(left), float(right))
    bmo = bmo_norms(f).bmo
    return {"sampled": best, "bmo": bmo, "ratio": best / bmo if bmo > 0 else 0.0}
