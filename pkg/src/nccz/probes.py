"""Gundy and left/right CZ decompositions, truncation probes and sample ensembles.

None of the quantities measured here has a known constant; reports are
measured-only unless a check is an exact algebraic identity.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import cuculescu as cz
from .dyadic import Grid, MatFn, coarsen, level_diffs, level_means, lp_norm, refine
from .ncalg import adjoint, join_from_sum, opnorm, support_left, support_right
from .records import ProbeReport


def _leaf(grid: Grid, arr: np.ndarray, k: int) -> np.ndarray:
    return refine(arr, grid.n, grid.K - k)


def _maxnorm(x: np.ndarray) -> float:
    return float(opnorm(x).max(initial=0.0)) if x.size else 0.0


# ---------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True)
class EnsembleSpec:
    """Deterministic sample family; sample i draws from SeedSequence(seed).spawn(samples)[i].

    Positive samples are G*G with complex Gaussian G, zero outside the
    generation-``pad`` subcube, plus ``spikes`` rank-one bursts of size
    ``spike_scale`` on random leaves.
    """

    samples: int = 50
    seed: int = 0
    d: int = 2
    K: int = 4
    n: int = 1
    pad: int = 0
    scale: float = 1.0
    spikes: int = 0
    spike_scale: float = 50.0

    def __post_init__(self):
        if self.samples < 0:
            raise ValueError("sample count must be >= 0")
        if self.d < 1:
            raise ValueError("matrix size d must be >= 1")
        Grid(self.n, self.K, self.pad)

    @property
    def grid(self) -> Grid:
        return Grid(self.n, self.K, self.pad)

    def rng(self, i: int) -> np.random.Generator:
        if not 0 <= i < self.samples:
            raise IndexError(f"sample {i} outside 0..{self.samples - 1}")
        child = np.random.SeedSequence(self.seed).spawn(self.samples)[i]
        return np.random.default_rng(child)

    def rngs(self) -> list[np.random.Generator]:
        return [np.random.default_rng(c) for c in np.random.SeedSequence(self.seed).spawn(self.samples)]

    def positive(self, rng: np.random.Generator) -> MatFn:
        return positive_sample(self.grid, self.d, rng, self.scale, self.spikes, self.spike_scale)

    def positives(self) -> list[MatFn]:
        return [self.positive(r) for r in self.rngs()]


def positive_sample(grid: Grid, d: int, rng: np.random.Generator, scale: float = 1.0, spikes: int = 0,
                    spike_scale: float = 50.0) -> MatFn:
    shape = grid.shape(grid.K) + (d, d)
    G = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    vals = scale * (adjoint(G) @ G) / d
    mask = grid.support_mask()
    for _ in range(spikes):
        idx = tuple(int(rng.integers(0, 2 ** (grid.K - grid.pad))) for _ in range(grid.n))
        v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        vals[idx] = vals[idx] + spike_scale * np.outer(v, v.conj()) / np.vdot(v, v).real
    vals = vals * mask[..., None, None]
    return MatFn(grid, 0.5 * (vals + adjoint(vals)), hermitian=True)


def map_samples(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """Order-preserving map; ``jobs > 1`` needs a picklable ``fn``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Gundy decomposition


def supp_star(a: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """1 - (largest q with q a q = 0), taken as the join of left and right supports."""
    L = support_left(a, tol)
    R = support_right(a, tol)
    return join_from_sum(L + R, 2)


@dataclass(frozen=True, eq=False)
class GundyParts:
    """Differences on the leaf grid, index k = 0..K; entry 0 carries the root average."""

    f: MatFn
    lam: float
    seq: cz.CuculescuSeq
    d_alpha: tuple[np.ndarray, ...]
    d_beta: tuple[np.ndarray, ...]
    d_gamma: tuple[np.ndarray, ...]

    def _sum(self, parts) -> MatFn:
        return self.f.like(np.sum(parts, axis=0))

    @property
    def alpha(self) -> MatFn:
        return self._sum(self.d_alpha)

    @property
    def beta(self) -> MatFn:
        return self._sum(self.d_beta)

    @property
    def gamma(self) -> MatFn:
        return self._sum(self.d_gamma)

    def sum_defect(self) -> float:
        grid = self.f.grid
        means = level_means(self.f.values, grid.n, grid.K)
        dfs = [means[0]] + level_diffs(means, grid.n)[1:]
        worst = 0.0
        for k in range(grid.K + 1):
            tot = self.d_alpha[k] + self.d_beta[k] + self.d_gamma[k]
            worst = max(worst, float(np.abs(tot - _leaf(grid, dfs[k], k)).max()))
        return worst

    def gamma_support(self) -> np.ndarray:
        """join_k supp* d gamma_k with supp* from left and right supports."""
        S = np.zeros_like(self.f.values)
        for g in self.d_gamma:
            S = S + supp_star(g)
        return join_from_sum(S, len(self.d_gamma))

    def estimates(self) -> dict[str, float]:
        """The three quantities divided by ||f||_1.

        ``gamma_stop`` replaces supp* d gamma_k by 1 - q_{k-1}, which also
        satisfies q_{k-1} d gamma_k q_{k-1} = 0; its join is 1 - q_{K-1}.
        """
        l1 = lp_norm(self.f, 1)
        if l1 == 0:
            return {"alpha": 0.0, "beta": 0.0, "gamma": 0.0, "gamma_stop": 0.0}
        a = lp_norm(self.alpha, 2) ** 2 / self.lam
        b = sum(lp_norm(self.f.like(x), 1) for x in self.d_beta)
        g = self.lam * cz.proj_mass(self.gamma_support())
        stop = self.lam * (1 - cz.proj_mass(self.seq.q_leaf(self.f.grid.K - 1)))
        return {"alpha": a / l1, "beta": b / l1, "gamma": g / l1, "gamma_stop": stop / l1}


def gundy_decompose(f: MatFn, lam: float, seq: cz.CuculescuSeq | None = None) -> GundyParts:
    """d alpha_k = q_k df_k q_k - E_{k-1}(q_k df_k q_k), d beta_k = q_{k-1} df_k q_{k-1} - q_k df_k q_k
    + E_{k-1}(q_k df_k q_k), d gamma_k = df_k - q_{k-1} df_k q_{k-1}.

    The root step uses df_0 = E_0 f and E_{-1} = 0, so f = alpha + beta + gamma.
    """
    seq = seq if seq is not None else cz.cuculescu_run(f, lam)
    grid = f.grid
    n, K = grid.n, grid.K
    means = level_means(f.values, n, K)
    dfs = [means[0]] + level_diffs(means, n)[1:]
    da, db, dg = [], [], []
    for k in range(K + 1):
        df = dfs[k]
        qk = seq.q(k)
        qp = seq.q(k - 1) if k == 0 else refine(seq.q(k - 1), n, 1)
        inner = qk @ df @ qk
        outer = qp @ df @ qp
        cond = np.zeros_like(inner) if k == 0 else refine(coarsen(inner, n, 1), n, 1)
        da.append(_leaf(grid, inner - cond, k))
        db.append(_leaf(grid, outer - inner + cond, k))
        dg.append(_leaf(grid, df - outer, k))
    return GundyParts(f, float(lam), seq, tuple(da), tuple(db), tuple(dg))


# ---------------------------------------------------------------------------
# left/right CZ decomposition


@dataclass(frozen=True, eq=False)
class LeftRightCZ:
    f: MatFn
    lam: float
    split: cz.RowColSplit
    qhat: cz.QHat
    g_r: MatFn
    b_r: MatFn
    g_c: MatFn
    b_c: MatFn
    b_terms: float      # sum_k ||p^_k (f_r - E_k f_r)||_1 + ||(f_c - E_k f_c) p^_k||_1

    def ratios(self) -> dict[str, float]:
        l1 = lp_norm(self.f, 1)
        if l1 == 0:
            return {"g_r": 0.0, "g_c": 0.0, "open": 0.0}
        return {"g_r": lp_norm(self.g_r, 2) ** 2 / (self.lam * l1),
                "g_c": lp_norm(self.g_c, 2) ** 2 / (self.lam * l1),
                "open": self.b_terms / l1}

    def defects(self) -> dict[str, float]:
        return {"row_sum": float(np.abs((self.g_r + self.b_r - self.split.f_r).values).max()),
                "col_sum": float(np.abs((self.g_c + self.b_c - self.split.f_c).values).max())}


def leftright_cz(f: MatFn, ell: int, s_min: int, s_max: int, fam: cz.LacunaryFamily | None = None) -> LeftRightCZ:
    """g_r = q^ f_r + sum_k p^_k E_k f_r and b_r = sum_k p^_k (f_r - E_k f_r); the
    column parts put q^ and p^_k on the right. lambda = 2^ell."""
    fam = fam if fam is not None else cz.lacunary_build(f, s_min, s_max)
    split = cz.row_col_split(f, s_min, s_max, fam)
    qh = cz.qhat_build(fam, ell)
    grid = f.grid
    K = grid.K
    fr, fc = split.f_r.values, split.f_c.values
    mr = level_means(fr, grid.n, K)
    mc = level_means(fc, grid.n, K)
    g_r = qh.q @ fr
    g_c = fc @ qh.q
    b_r = np.zeros_like(fr)
    b_c = np.zeros_like(fc)
    terms = 0.0
    for k in range(K + 1):
        ph = qh.level_leaf(grid, k - 1) - qh.level_leaf(grid, k)
        Er = _leaf(grid, mr[k], k)
        Ec = _leaf(grid, mc[k], k)
        g_r = g_r + ph @ Er
        g_c = g_c + Ec @ ph
        br = ph @ (fr - Er)
        bc = (fc - Ec) @ ph
        b_r = b_r + br
        b_c = b_c + bc
        terms += lp_norm(f.like(br), 1) + lp_norm(f.like(bc), 1)
    return LeftRightCZ(f, 2.0**ell, split, qh, f.like(g_r), f.like(b_r), f.like(g_c), f.like(b_c), terms)


# ---------------------------------------------------------------------------
# triangular truncation probe


@dataclass(frozen=True, eq=False)
class TruncationSample:
    """Pairs (alpha_k, beta_k) for k = 0..K with truncations Tr_k from ``fam``."""

    fam: cz.LacunaryFamily
    alphas: tuple[MatFn, ...]
    betas: tuple[MatFn, ...]
    part: str = "upper"

    def ratios(self) -> tuple[float | None, float | None]:
        """(R1, R2); a ratio with zero denominator is None."""
        upper = self.part == "upper"
        total = np.zeros_like(self.alphas[0].values)
        den1 = 0.0
        den2 = 0.0
        top = 0.0
        for k, (a, b) in enumerate(zip(self.alphas, self.betas)):
            tb = cz.triangular_truncate(b, self.fam, k, self.part).values
            if upper:
                total = total + a.values @ tb
                den1 += lp_norm(a.like(a.values @ b.values), 1)
            else:
                total = total + tb @ a.values
                den1 += lp_norm(a.like(b.values @ a.values), 1)
            den2 += lp_norm(b, 1)
            top = max(top, a.norm_inf())
        num = lp_norm(self.alphas[0].like(total), 1)
        r1 = num / den1 if den1 > 0 else None
        r2 = num / (top * den2) if top * den2 > 0 else None
        return r1, r2

    def to_record(self) -> dict:
        f = self.fam.f
        return {"part": self.part, "s_min": self.fam.s_min, "s_max": self.fam.s_max,
                "driver": f.to_text(), "alphas": [a.to_text() for a in self.alphas],
                "betas": [b.to_text() for b in self.betas]}


def truncation_sample(f: MatFn, s_min: int, s_max: int, rng: np.random.Generator, part: str = "upper",
                      adversarial: bool = True, fam: cz.LacunaryFamily | None = None) -> TruncationSample:
    """Random contractions alpha_k and beta_k; adversarial beta_k are mostly UT_k of a Gaussian."""
    fam = fam if fam is not None else cz.lacunary_build(f, s_min, s_max)
    grid = f.grid
    d = f.d
    shape = grid.shape(grid.K) + (d, d)
    alphas, betas = [], []
    for k in range(grid.K + 1):
        A = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        A = A / max(_maxnorm(A), 1e-300)
        B = f.like(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        if adversarial:
            B = cz.triangular_truncate(B, fam, k, part) + 0.1 * B
        alphas.append(f.like(A))
        betas.append(B)
    return TruncationSample(fam, tuple(alphas), tuple(betas), part)


def truncation_probe(samples: Iterable[TruncationSample], ledger: str | Path | None = None) -> ProbeReport:
    """Measured-only R1/R2 scan; any sample beating the running maximum is appended
    in full to the JSON-lines ``ledger``."""
    rep = ProbeReport("truncation_probe", asserted=False)
    best = {"R1": -np.inf, "R2": -np.inf}
    fh = open(ledger, "a") if ledger is not None else None
    try:
        for i, smp in enumerate(samples):
            r1, r2 = smp.ratios()
            if r1 is None or r2 is None:
                rep.skipped += 1
                continue
            rep.add(R1=r1, R2=r2)
            beaten = [k for k, v in (("R1", r1), ("R2", r2)) if v > best[k]]
            for k in beaten:
                best[k] = {"R1": r1, "R2": r2}[k]
            if beaten and fh is not None:
                rec = {"sample": i, "R1": r1, "R2": r2, "beats": beaten, **smp.to_record()}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    finally:
        if fh is not None:
            fh.close()
    return rep


def read_ledger(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(ln) for ln in fh if ln.strip()]


def replay_ledger_record(rec: dict) -> TruncationSample:
    """Rebuild a ledger sample for reproduction."""
    f = MatFn.from_text(rec["driver"])
    fam = cz.lacunary_build(f, rec["s_min"], rec["s_max"])
    return TruncationSample(fam, tuple(MatFn.from_text(t) for t in rec["alphas"]),
                            tuple(MatFn.from_text(t) for t in rec["betas"]), rec["part"])
