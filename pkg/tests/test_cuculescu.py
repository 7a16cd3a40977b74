import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nccz import cuculescu as cz
from nccz.dyadic import Grid, MatFn, lp_norm
from nccz.ncalg import is_projection
from nccz.probes import positive_sample

import scalar_oracle as so


def scalar(x):
    x = np.asarray(x, float)
    return MatFn(Grid(1, int(np.log2(len(x)))), x[:, None, None], hermitian=True)


def leaf(seq_arr, K, k):
    return np.repeat(seq_arr, 2 ** (K - k), axis=0)


# --- Cuculescu -------------------------------------------------------------

def test_hand_example():
    f = scalar([4, 0, 0, 0])
    seq = cz.cuculescu_run(f, 1.0)
    assert np.allclose(seq.q(0)[..., 0, 0], [1])
    assert np.allclose(seq.q(1)[..., 0, 0], [0, 1])
    assert np.allclose(seq.q(2)[..., 0, 0], [0, 0, 1, 1])
    assert seq.weak_mass() == pytest.approx(0.5)
    assert seq.weak_mass() <= lp_norm(f, 1) / 1.0


def test_trivial_case():
    g = Grid(1, 3)
    f = MatFn.constant(g, 0.5 * np.eye(3), hermitian=True)
    seq = cz.cuculescu_run(f, 1.0)
    for k in range(4):
        assert np.allclose(seq.q(k), np.eye(3))
        assert np.allclose(seq.p(k), 0)


def test_closed_level_kept():
    # f_k = lam exactly is not stopped
    seq = cz.cuculescu_run(scalar([2, 0, 0, 0]), 0.5)
    assert seq.root_trivial


@pytest.mark.parametrize("seed", range(10))
def test_scalar_stopping_time(seed):
    rng = np.random.default_rng(seed)
    x = rng.exponential(1.0, 32) * rng.choice([1, 8], 32)
    f = scalar(x)
    for lam in (0.5, 1.0, 2.0, 5.0):
        seq = cz.cuculescu_run(f, lam)
        for k, ref in enumerate(so.q_levels(x, lam)):
            assert np.array_equal(seq.q_leaf(k)[:, 0, 0].real, ref)


def test_rejects_non_positive():
    with pytest.raises(ValueError, match="not positive"):
        cz.cuculescu_run(scalar([1, -1]), 1.0)
    with pytest.raises(ValueError, match="positive"):
        cz.cuculescu_run(scalar([1, 1]), 0.0)


@pytest.mark.parametrize("d,n,K", [(2, 1, 4), (3, 1, 5), (2, 2, 3)])
def test_properties_and_weak_bound(d, n, K, rng):
    for _ in range(3):
        f = positive_sample(Grid(n, K), d, rng, spikes=2, spike_scale=30)
        for lam in (0.5, 2.0, 8.0):
            seq = cz.cuculescu_run(f, lam)
            defects = cz.cuculescu_defects(seq, f)
            assert max(defects.values()) < 1e-8, defects
            assert all(is_projection(seq.q(k)) for k in range(K + 1))
            assert lam * seq.weak_mass() <= lp_norm(f, 1) + 1e-12


# --- CZ decomposition ------------------------------------------------------

def test_cz_trivial():
    g = Grid(1, 3)
    f = MatFn.constant(g, 0.25 * np.eye(2), hermitian=True)
    parts = cz.cz_decompose(f, 1.0)
    assert parts.g_d.allclose(f, 1e-14)
    for name in ("b_d", "b_off", "g_off"):
        assert np.abs(getattr(parts, name).values).max() == 0


@pytest.mark.parametrize("seed", range(8))
def test_cz_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.exponential(1.0, 16) * rng.choice([1, 10], 16)
    for lam in (0.7, 2.0):
        parts = cz.cz_decompose(scalar(x), lam)
        g, b = so.cz_split(x, lam)
        assert np.allclose(parts.g_d.values[:, 0, 0], g, atol=1e-12)
        assert np.allclose(parts.b_d.values[:, 0, 0], b, atol=1e-12)
        assert np.abs(parts.g_off.values).max() < 1e-12
        assert np.abs(parts.b_off.values).max() < 1e-12


@pytest.mark.parametrize("d,n,K", [(2, 1, 4), (3, 1, 4), (4, 1, 3), (2, 2, 2)])
def test_cz_identities_and_estimates(d, n, K, rng):
    for _ in range(3):
        f = positive_sample(Grid(n, K), d, rng, spikes=1, spike_scale=20)
        root = float(np.linalg.norm(f.coarse(0).reshape(d, d), 2))
        for lam in (f.norm_inf() / 4, 1.5, 1.01 * root):
            parts = cz.cz_decompose(f, lam)
            res = cz.delta_formulas_check(f, lam, parts)
            assert max(res.values()) < 1e-9, res
            est = cz.diagonal_estimates(parts)
            assert est["bd_l1_sum"] <= est["bd_bound"] + 1e-9
            if parts.seq.root_trivial:
                assert est["gd_l2_sq"] <= est["gd_bound"] + 1e-9


def test_g_series_bad_index():
    parts = cz.cz_decompose(scalar([1, 2, 3, 4]), 1.0)
    with pytest.raises(ValueError):
        parts.g_series(0, 0)


# --- lacunary family -------------------------------------------------------

def test_lacunary_trivial():
    g = Grid(1, 3)
    f = MatFn.constant(g, 0.1 * np.eye(2), hermitian=True)
    fam = cz.lacunary_build(f, -2, 1)
    for k in range(4):
        assert np.allclose(fam.psi(k), np.eye(2))
        for j in fam.levels():
            assert np.allclose(fam.pi(j, k), 0)


def test_lacunary_scalar_oracle(rng):
    x = rng.exponential(1.0, 32) * rng.choice([1, 16], 32)
    f = scalar(x)
    s_max = int(np.ceil(np.log2(x.max())))
    fam = cz.lacunary_build(f, -2, s_max)
    K = 5
    for k in range(K + 1):
        acc = leaf(fam.psi(k), K, k)[:, 0, 0].real
        assert np.array_equal(acc, so.lacunary_tail(x, -2, k))
        for j in fam.levels():
            p = leaf(fam.pi(j, k), K, k)[:, 0, 0].real
            want = so.lacunary_tail(x, j, k) - so.lacunary_tail(x, j - 1, k)
            assert np.array_equal(p, want)
            assert np.all(p * acc == 0)
            acc = acc + p
        assert np.array_equal(acc, np.ones(32))


def test_lacunary_rejects_low_top():
    f = scalar([8, 0])
    with pytest.raises(ValueError, match="s_max >= 3"):
        cz.lacunary_build(f, -1, 2)


@settings(max_examples=200)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 3), K=st.integers(2, 4))
def test_lacunary_completeness(seed, d, K):
    rng = np.random.default_rng(seed)
    f = positive_sample(Grid(1, K), d, rng, spikes=1, spike_scale=10)
    s_max = max(int(np.ceil(np.log2(f.norm_inf()))), -1)
    fam = cz.lacunary_build(f, -2, s_max)
    assert max(cz.lacunary_defects(fam).values()) < 1e-8
    assert max(cz.nesting_defects(fam).values()) < 1e-8


@pytest.mark.parametrize("d,K,pad", [(2, 4, 0), (3, 5, 0), (2, 5, 2)])
def test_psi_residual_and_key_identities(d, K, pad, rng):
    for _ in range(3):
        f = positive_sample(Grid(1, K, pad), d, rng, spikes=1, spike_scale=40)
        s_max = int(np.ceil(np.log2(f.norm_inf())))
        fam = cz.lacunary_build(f, -3, s_max)
        vals, bound = cz.psi_residuals(fam)
        assert vals.max() <= bound
        for ell in fam.levels():
            assert max(cz.key_identities(fam, ell).values()) < 1e-8


# --- truncations and the split ---------------------------------------------

def test_single_block_truncation():
    g = Grid(1, 2)
    f = MatFn.constant(g, np.diag([3.0, 3.0]), hermitian=True)
    fam = cz.lacunary_build(f, 0, 2)
    # every entry lands in the single block pi_{2,k} = 1
    x = MatFn(g, np.arange(16, dtype=float).reshape(4, 2, 2))
    for k in range(3):
        assert cz.triangular_truncate(x, fam, k, "upper").allclose(x, 1e-12)
        assert np.abs(cz.triangular_truncate(x, fam, k, "lower").values).max() < 1e-12


def test_split_scalar_oracle(rng):
    x = rng.exponential(1.0, 16) * rng.choice([1, 16], 16)
    f = scalar(x)
    s_max = int(np.ceil(np.log2(x.max())))
    split = cz.row_col_split(f, -2, s_max)
    assert np.abs(split.f_r.values).max() < 1e-12
    assert np.allclose(split.f_c.values[:, 0, 0], so.column_part(x, -2), atol=1e-12)
    fam = cz.lacunary_build(f, -2, s_max)
    df = MatFn(f.grid, rng.standard_normal((16, 1, 1)))
    for k in range(5):
        ut = cz.triangular_truncate(df, fam, k, "upper").values[:, 0, 0]
        assert np.allclose(ut, (1 - so.lacunary_tail(x, -2, k)) * df.values[:, 0, 0])


@pytest.mark.parametrize("d", [2, 3, 4])
def test_split_sum_and_contraction(d, rng):
    f = positive_sample(Grid(1, 4), d, rng, spikes=2, spike_scale=20)
    s_max = int(np.ceil(np.log2(f.norm_inf())))
    fam = cz.lacunary_build(f, -2, s_max)
    split = cz.row_col_split(f, -2, s_max, fam)
    assert (split.f_r + split.f_c + split.residual).allclose(f, 1e-12)
    assert split.residual_norm() <= cz.residual_bounds(fam)["derived"]
    for k in range(5):
        x = MatFn(f.grid, rng.standard_normal(f.values.shape) + 1j * rng.standard_normal(f.values.shape))
        for part in ("upper", "lower"):
            assert lp_norm(cz.triangular_truncate(x, fam, k, part), 2) <= lp_norm(x, 2) + 1e-12


def test_deep_pad_residual(rng):
    f = positive_sample(Grid(1, 6, 3), 2, rng)
    s_max = int(np.ceil(np.log2(f.norm_inf())))
    fam = cz.lacunary_build(f, -8, s_max)
    split = cz.row_col_split(f, -8, s_max, fam)
    bounds = cz.residual_bounds(fam)
    assert lp_norm(split.residual, 1) <= split.residual_norm() <= bounds["derived"]


# --- q-hat and zeta --------------------------------------------------------

def test_qhat_trivial_and_scalar(rng):
    g = Grid(1, 3)
    f = MatFn.constant(g, 0.3 * np.eye(2), hermitian=True)
    fam = cz.lacunary_build(f, -3, 0)
    assert np.allclose(cz.qhat_build(fam, -1).q, np.eye(2))
    x = rng.exponential(1.0, 16) * rng.choice([1, 16], 16)
    s_max = int(np.ceil(np.log2(x.max())))
    fam = cz.lacunary_build(scalar(x), -2, s_max)
    for ell in fam.levels():
        qh = cz.qhat_build(fam, ell)
        assert np.array_equal(qh.q[:, 0, 0].real, so.lacunary_tail(x, ell, 4))


@pytest.mark.parametrize("d,n,K", [(2, 1, 5), (3, 1, 4), (2, 2, 3)])
def test_qhat_and_zeta_bounds(d, n, K, rng):
    for _ in range(2):
        f = positive_sample(Grid(n, K), d, rng, spikes=2, spike_scale=30)
        l1 = lp_norm(f, 1)
        s_max = int(np.ceil(np.log2(f.norm_inf())))
        fam = cz.lacunary_build(f, -2, s_max)
        for ell in fam.levels():
            qh = cz.qhat_build(fam, ell)
            assert 2.0**ell * (1 - cz.proj_mass(qh.q)) <= 2 * l1 + 1e-12
            for s in (0, 1, 2):
                z = cz.zeta_build(fam, ell, s, qh)
                assert 2.0**ell * (1 - cz.proj_mass(z.zeta)) <= 2.0 ** (s * n + 1) * l1 + 1e-12
                assert cz.zeta_order_defect(fam, qh, z) < 1e-8
                assert cz.rho_orthogonality_defect(z, f.grid) < 1e-8
                if s == 0:
                    assert np.abs(z.zeta - qh.q).max() < 1e-8


def test_zeta_trivial():
    f = MatFn.constant(Grid(1, 3), 0.2 * np.eye(2), hermitian=True)
    fam = cz.lacunary_build(f, -3, 0)
    assert np.allclose(cz.zeta_build(fam, -1, 2).zeta, np.eye(2))
    with pytest.raises(ValueError):
        cz.zeta_build(fam, -1, -1)
