"""Acceptance suite: one PASS/FAIL line per criterion.

Every experiment runs a 50-sample ensemble spread over the reference desk
(n = 1, d in 1..4, K in 4..6), one seed per (d, K) cell. Oracle and
property loops for criteria 3 to 5 are independent of the experiment code.

Run directly with ``python3 tests/test_acceptance.py`` or through pytest; the
criterion lines are repeated in the pytest terminal summary.
"""

import sys
import time
from collections import defaultdict

import numpy as np
import pytest

from nccz import cli
from nccz import cuculescu as cz
from nccz import hardy
from nccz import operators as ops
from nccz import probes
from nccz.dyadic import Grid, MatFn, expect, haar_coeffs, haar_indices, haar_synth, haar_values, lp_norm, random_matfn
from nccz.experiments import CATALOG
from nccz.ncalg import is_projection, proj_join, proj_leq, proj_meet

import scalar_oracle as so

SAMPLES = 50
CELLS = [(d, K) for d in (1, 2, 3, 4) for K in (4, 5, 6)]
IDENTITY_TOL = 1e-8
EXACT_TOL = 1e-10
CASES = 200

LINES: list[str] = []


def report(num: int, ok: bool, detail: str) -> None:
    line = f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}"
    LINES.append(line)
    print(line)


def per_cell(total: int) -> list[int]:
    base, extra = divmod(total, len(CELLS))
    return [base + (i < extra) for i in range(len(CELLS))]


def base(name: str) -> str:
    return name.split("[")[0]


@pytest.fixture(scope="module")
def sweep():
    """experiment -> list of (d, K, record) over all cells."""
    t0 = time.perf_counter()
    out = defaultdict(list)
    for exp in CATALOG:
        for idx, ((d, K), m) in enumerate(zip(CELLS, per_cell(SAMPLES))):
            cfg = cli.config_from_pairs({"experiment": exp, "d": str(d), "K": str(K), "samples": str(m),
                                         "seed": str(1000 + idx)})
            for rec in cli.run_experiment(cfg).records:
                out[exp].append((d, K, rec))
    out["_seconds"] = time.perf_counter() - t0
    return out


def select(sweep, names):
    return [(d, K, r) for exp in CATALOG for d, K, r in sweep[exp] if base(r.name) in names]


def worst(rows):
    return max((r.value for _, _, r in rows), default=0.0)


# --- 1: exact identities ----------------------------------------------------

IDENTITIES = {
    "cz.sum", "cz.g_series", "cz.delta_bd", "cz.delta_goff", "cz.q_b_d", "cz.q_g_off", "cz.q_b_off",
    "cz.commutative_off", "lacunary.qhat_pi", "lacunary.pi_p", "lacunary.trunc_qhat", "perfect.op_qhat",
    "shift.C", "shift.A_qhat", "shift.B_zeta", "transform.op_qhat", "paraproduct.op_qhat", "gundy.sum",
}


def test_criterion_1_identities(sweep):
    rows = select(sweep, IDENTITIES)
    seen = {base(r.name) for _, _, r in rows}
    bad = [(d, K, r.name, r.value) for d, K, r in rows
           if r.failed or not r.value <= (EXACT_TOL if base(r.name) == "shift.C" else IDENTITY_TOL)]
    shift_c = worst([x for x in rows if base(x[2].name) == "shift.C"])
    ok = not bad and seen == IDENTITIES
    report(1, ok, f"{len(rows)} identity records over {len(CELLS)} cells, worst {worst(rows):.1e} "
                  f"(tol 1e-8), shift C worst {shift_c:.1e} (tol 1e-10)")
    assert seen == IDENTITIES, IDENTITIES - seen
    assert not bad, bad[:5]


# --- 2: explicit-constant inequalities --------------------------------------

INEQUALITIES = {
    "cuculescu.weak_mass", "cz.diag_gd", "cz.diag_bd", "lacunary.qhat_mass", "dilation.mass", "shift.l2",
    "transform.l2", "bmo.paraproduct", "atom.hansen", "lacunary.psi_residual",
}


def test_criterion_2_inequalities(sweep):
    rows = select(sweep, INEQUALITIES)
    seen = {base(r.name) for _, _, r in rows}
    bad = [(d, K, r.name, r.value, r.bound) for d, K, r in rows if r.failed]
    tight = max((r.value / r.bound for _, _, r in rows if r.bound), default=0.0)
    ok = not bad and seen == INEQUALITIES
    report(2, ok, f"{len(rows)} inequality records, {len(seen)} families, max value/bound {tight:.3f}")
    assert seen == INEQUALITIES, INEQUALITIES - seen
    assert not bad, bad[:5]


# --- 3: scalar oracle equivalence -------------------------------------------

def scalar(x):
    return MatFn(Grid(1, int(np.log2(len(x)))), np.asarray(x, float)[:, None, None], hermitian=True)


def scalar_case(i: int) -> float:
    """Largest deviation from the classical scalar constructions for sample i."""
    rng = np.random.default_rng(5000 + i)
    K = 4 + i % 3
    N = 2**K
    x = rng.exponential(1.0, N) * rng.choice([1.0, 16.0], N)
    f = scalar(x)
    top = int(np.ceil(np.log2(x.max())))
    dev = 0.0
    for ell in range(-1, top + 1):
        lam = 2.0**ell
        seq = cz.cuculescu_run(f, lam)
        for k, ref in enumerate(so.q_levels(x, lam)):
            dev = max(dev, np.abs(seq.q_leaf(k)[:, 0, 0] - ref).max())
        parts = cz.cz_decompose(f, lam, seq)
        g, b = so.cz_split(x, lam)
        dev = max(dev, np.abs(parts.g_d.values[:, 0, 0] - g).max(), np.abs(parts.b_d.values[:, 0, 0] - b).max(),
                  np.abs(parts.g_off.values).max(), np.abs(parts.b_off.values).max())
        G = probes.gundy_decompose(f, lam)
        for k, (a, bb, c) in enumerate(zip(*so.gundy(x, lam))):
            dev = max(dev, np.abs(G.d_alpha[k][:, 0, 0] - a).max(), np.abs(G.d_beta[k][:, 0, 0] - bb).max(),
                      np.abs(G.d_gamma[k][:, 0, 0] - c).max())
    s_min = -2
    s_max = max(top, s_min + 1)
    lams = [2.0**l for l in range(s_min + 1, s_max + 1)]
    signs = rng.choice([-1.0, 1.0], K)
    xi = tuple(np.full(f.grid.shape(k) + (1, 1), signs[k]) for k in range(K))
    ours = ops.weak_type_ratio(ops.TransformSpec(f.grid, xi), f, lams, s_min, s_max)
    return max(dev, abs(ours["ratio"] - so.weak_ratio(x, signs, s_min, lams)))


def test_criterion_3_scalar_oracles():
    devs = [scalar_case(i) for i in range(SAMPLES)]
    ok = max(devs) <= EXACT_TOL
    report(3, ok, f"{SAMPLES} scalar samples (K 4..6): stopping time, CZ split, Gundy, weak scan; "
                  f"max deviation {max(devs):.1e} (tol 1e-10)")
    assert ok


# --- 4: dual-path agreement -------------------------------------------------

DUAL = {"perfect.dual_path", "transform.dual_path", "paraproduct.dual_path", "shift.dense"}


def dense_apply(ker, F, side):
    """T f(x) = mean_y k(x, y) f(y) or f(y) k(x, y) with an explicit double loop."""
    N = F.shape[0]
    out = np.zeros_like(ker[:, 0])
    for a in range(N):
        for b in range(N):
            out[a] += (ker[a, b] @ F[b] if side == "column" else F[b] @ ker[a, b]) / N
    return out


def shift_case(i: int) -> float:
    rng = np.random.default_rng(7000 + i)
    g = Grid(1, 4)
    d = 1 + i % 4
    r, s = int(rng.integers(0, 3)), int(rng.integers(0, 3))
    side = ops.SIDES[i % 2]
    spec = ops.random_haar_shift(g, d, r, s, rng, side)
    ker = np.zeros((16, 16, d, d), complex)
    for a in range(d):
        for b in range(d):
            ker[:, :, a, b] = so.shift_kernel([al[..., a, b] for al in spec.alpha], r, s, 4)
    f = random_matfn(g, d, rng)
    fast = ops.apply_haar_shift(spec, f)
    return float(np.abs(fast.values - dense_apply(ker, f.values, side)).max())


def perfect_case(i: int) -> float:
    rng = np.random.default_rng(8000 + i)
    g = Grid(1, 4)
    d = 1 + i % 4
    kind = ops.PERFECT_KINDS[i % len(ops.PERFECT_KINDS)]
    spec = ops.PerfectDyadicSpec(kind, g, xi=ops.random_xi(g, d, rng), rho=ops.random_symbol(g, d, rng),
                                 side=ops.SIDES[(i // 3) % 2])
    f = random_matfn(g, d, rng)
    a = ops.apply_perfect_dyadic(spec, f)
    b = ops.apply_perfect_dyadic(spec, f, path="kernel")
    return float(np.abs(a.values - b.values).max())


def test_criterion_4_dual_paths(sweep):
    rows = select(sweep, DUAL)
    shifts = [shift_case(i) for i in range(SAMPLES)]
    perfect = [perfect_case(i) for i in range(SAMPLES)]
    top = max(worst(rows), max(shifts), max(perfect))
    ok = top <= EXACT_TOL and not any(r.failed for _, _, r in rows)
    report(4, ok, f"{len(rows)} sweep records + {SAMPLES} shifts vs dense oracle (n=1, K=4) "
                  f"+ {SAMPLES} kernel vs martingale; max deviation {top:.1e} (tol 1e-10)")
    assert ok


# --- 5: structural invariants -----------------------------------------------

def rand_proj(rng, d):
    r = int(rng.integers(0, d + 1))
    if r == 0:
        return np.zeros((d, d), complex)
    Q, _ = np.linalg.qr(rng.standard_normal((d, r)) + 1j * rng.standard_normal((d, r)))
    return Q @ Q.conj().T


def lacunary_case(i):
    rng = np.random.default_rng(9000 + i)
    f = probes.positive_sample(Grid(1, 3 + i % 3), 1 + i % 4, rng, spikes=1, spike_scale=10)
    s_max = max(int(np.ceil(np.log2(f.norm_inf()))), -1)
    return max(cz.lacunary_defects(cz.lacunary_build(f, -2, s_max)).values()) <= IDENTITY_TOL


def lattice_case(i):
    rng = np.random.default_rng(10000 + i)
    d = 1 + i % 5
    P, Q = rand_proj(rng, d), rand_proj(rng, d)
    one = np.eye(d)
    M, J = proj_meet([P, Q]), proj_join([P, Q])
    tr = lambda X: int(round(np.trace(X).real))
    return (is_projection(M) and is_projection(J) and proj_leq(M, P) and proj_leq(M, Q)
            and proj_leq(P, J) and proj_leq(Q, J)
            and np.allclose(proj_meet([P, J]), P, atol=1e-7) and np.allclose(proj_join([P, M]), P, atol=1e-7)
            and np.allclose(one - M, proj_join([one - P, one - Q]), atol=1e-7)
            and tr(J) + tr(M) == tr(P) + tr(Q))


def haar_case(i):
    rng = np.random.default_rng(11000 + i)
    n = 1 + i % 2
    g = Grid(n, 1 + i % (4 if n == 1 else 2))
    d = 1 + i % 3
    H = np.array([haar_values(g, h).ravel() for h in haar_indices(g)])
    ortho = np.allclose(H @ H.T * g.leaf_volume, np.eye(len(H)), atol=1e-12) and len(H) + 1 == g.leaves
    f = random_matfn(g, d, rng)
    cs = haar_coeffs(f)
    back = haar_synth(g, cs, f.coarse(0)[(0,) * n])
    energy = sum(float(np.sum(np.abs(c) ** 2)) for c in cs) / d
    parseval = abs(energy - lp_norm(f - expect(f, 0), 2) ** 2) < 1e-10 * max(1.0, energy)
    return ortho and back.allclose(f, 1e-10) and parseval


def symmetry_case(i):
    rng = np.random.default_rng(12000 + i)
    n = 1 + i % 2
    f = random_matfn(Grid(n, 3 if n == 1 else 2), 1 + i % 3, rng)
    a, b = hardy.all_norms(f, [2]), hardy.all_norms(f.adj(), [2])
    pairs = ((a.H1r, b.H1c), (a.h1r, b.h1c), (a.BMOr, b.BMOc), (a.bmor, b.bmoc), (a.h1d, b.h1d),
             (a.Hp["H2r"], b.Hp["H2c"]))
    return all(abs(x - y) <= 1e-12 * max(1.0, abs(x)) for x, y in pairs)


def test_criterion_5_structure():
    suites = {"lacunary completeness/orthogonality": lacunary_case, "lattice laws": lattice_case,
              "haar orthonormality/reconstruction": haar_case, "norm symmetry": symmetry_case}
    counts = {name: sum(bool(fn(i)) for i in range(CASES)) for name, fn in suites.items()}
    ok = all(c == CASES for c in counts.values())
    report(5, ok, ", ".join(f"{name} {c}/{CASES}" for name, c in counts.items()))
    assert ok, counts


# --- 6: measured probes, determinism ----------------------------------------

PROBES = ("gundy", "leftright_cz", "truncation_probe", "weak_type_scan")


def test_criterion_6_measured(sweep, tmp_path):
    measured = [r for exp in PROBES for _, _, r in sweep[exp] if r.status == "measured"]
    failed = [r.name for exp in PROBES for _, _, r in sweep[exp] if r.failed]
    worst_by = defaultdict(float)
    for r in measured:
        key = base(r.name)
        worst_by[key] = max(worst_by[key], r.value)
    same = True
    for exp in PROBES:
        pairs = {"experiment": exp, "d": "3", "K": "4", "samples": "4", "seed": "77"}
        texts = [cli.render(cli.run_experiment(cli.config_from_pairs(pairs)), "json") for _ in range(2)]
        same &= texts[0] == texts[1]
    ledgers = []
    for tag in ("a", "b"):
        path = tmp_path / f"ledger_{tag}.jsonl"
        cli.run_experiment(cli.config_from_pairs({"experiment": "truncation_probe", "d": "2", "K": "4",
                                                  "samples": "4", "seed": "3", "probe.ledger": str(path)}))
        ledgers.append(path.read_bytes())
    same &= ledgers[0] == ledgers[1] and len(ledgers[0]) > 0
    ok = bool(measured) and not failed and same
    summary = ", ".join(f"{k} {v:.3g}" for k, v in sorted(worst_by.items()))
    report(6, ok, f"{len(measured)} measured records, none failing, reports and ledger bitwise "
                  f"{'deterministic' if same else 'NOT deterministic'}; worst: {summary}")
    assert ok


def test_sweep_clean_and_fast(sweep):
    """Every asserted record of the sweep passes and the sweep stays inside the time budget."""
    bad = [(exp, d, K, r.name) for exp in CATALOG for d, K, r in sweep[exp] if r.failed]
    print(f"sweep: {sum(len(sweep[e]) for e in CATALOG)} records in {sweep['_seconds']:.0f} s")
    assert not bad, bad[:5]
    assert sweep["_seconds"] < 300


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
