import numpy as np
import pytest

from hmat.compressors import (CompressorKind, CountingMap, DenseMap,
                              LinearMap, aca, bilanczos, compress,
                              dense_svd_compress, randomized_adaptive,
                              randomized_fixed, stop_criterion)
from hmat.lowrank import EpsRank, FixedRank, select_rank


def decay_matrix(m, n, theta, seed=1):
    """Orthogonal factors with geometric singular values theta**i."""
    rng = np.random.default_rng(seed)
    u, _ = np.linalg.qr(rng.standard_normal((m, min(m, n))))
    v, _ = np.linalg.qr(rng.standard_normal((n, min(m, n))))
    return u * theta ** np.arange(min(m, n)) @ v.T


def exact_rank_matrix(m, n, r, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, r + 2)) @ rng.standard_normal((r + 2, n))
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    return (u[:, :r] * s[:r]) @ vt[:r]


def rel_err(lr, a):
    return np.linalg.norm(lr.to_dense() - a) / np.linalg.norm(a)


# ---------------------------------------------------------------- LinearMap

def test_linearity_statistical():
    a = decay_matrix(30, 25, 0.5)
    m = DenseMap(a)
    rng = np.random.default_rng(2)
    for _ in range(20):
        u, v = rng.standard_normal((2, 25))
        al, be = rng.standard_normal(2)
        lhs = m.apply(al * u + be * v)
        rhs = al * m.apply(u) + be * m.apply(v)
        assert np.linalg.norm(lhs - rhs) <= 1e-11 * np.linalg.norm(rhs)


def test_rows_cols_derived_from_products():
    a = np.arange(12.0).reshape(3, 4)
    m = DenseMap(a)
    assert np.allclose(m.row(1), a[1])
    assert np.allclose(m.col(2), a[:, 2])


def test_counting_map_counts_blocked():
    m = CountingMap(DenseMap(np.eye(5)))
    m.apply(np.ones(5))
    m.apply_mat(np.ones((5, 3)))
    m.apply_transpose(np.ones(5))
    assert m.n_apply == 4 and m.n_apply_transpose == 1 and m.total == 5


# ----------------------------------------------------------- stop criterion

def test_stop_criterion_zero_update():
    assert stop_criterion(np.zeros(4), np.ones(3), 1.0, 1e-12)


def test_stop_criterion_direct_inequality():
    l = np.array([1e-13])
    u = np.array([1.0])
    assert stop_criterion(l, u, 1.0, 1e-12)
    assert not stop_criterion(np.array([1e-11]), u, 1.0, 1e-12)


@pytest.mark.parametrize("theta", [0.3, 0.5, 0.7])
@pytest.mark.parametrize("eps", [1e-6, 1e-10])
def test_adaptive_schemes_meet_tolerance_on_decay_suite(theta, eps):
    for seed in (1, 2, 3):
        a = decay_matrix(90, 80, theta, seed=seed)
        assert rel_err(aca(DenseMap(a), EpsRank(eps)), a) <= 2 * eps
        assert rel_err(bilanczos(DenseMap(a), EpsRank(eps), seed=3), a) \
            <= 2 * eps
        assert rel_err(randomized_adaptive(DenseMap(a), eps, seed=3), a) \
            <= 2 * eps


def test_stop_criterion_error_vs_theory_bound():
    # with reduction rate theta the guaranteed bound is eps/(1-theta)
    theta, eps = 0.5, 1e-8
    a = decay_matrix(64, 64, theta, seed=5)
    lr = aca(DenseMap(a), EpsRank(eps))
    assert rel_err(lr, a) <= eps / (1 - theta)


# ------------------------------------------------------------------- ACA

def test_aca_rank1_single_cross():
    rng = np.random.default_rng(0)
    a = np.outer(rng.standard_normal(12), rng.standard_normal(9))
    cm = CountingMap(DenseMap(a))
    lr = aca(cm, EpsRank(1e-8))
    assert lr.rank == 1
    assert np.linalg.norm(lr.to_dense() - a) <= 1e-13 * np.linalg.norm(a)


def test_aca_zero_map():
    lr = aca(DenseMap(np.zeros((7, 5))), EpsRank(1e-8))
    assert lr.rank == 0
    assert not lr.degraded


def test_aca_eps_rank_close_to_svd_rank():
    rng = np.random.default_rng(6)
    u, _ = np.linalg.qr(rng.standard_normal((32, 32)))
    v, _ = np.linalg.qr(rng.standard_normal((32, 32)))
    a = u * 2.0 ** -np.arange(32) @ v.T
    svd_rank = select_rank(np.linalg.svd(a, compute_uv=False), EpsRank(1e-8))
    lr = aca(DenseMap(a), EpsRank(1e-8))
    assert abs(lr.rank - svd_rank) <= 2


def test_aca_fixed_rank_cap():
    a = decay_matrix(40, 30, 0.7, seed=2)
    lr = aca(DenseMap(a), FixedRank(7))
    assert lr.rank == 7


def test_aca_skips_zero_rows():
    a = np.zeros((6, 5))
    a[4] = [0.0, 1.0, 2.0, 0.5, -1.0]
    lr = aca(DenseMap(a), EpsRank(1e-10))
    assert np.linalg.norm(lr.to_dense() - a) <= 1e-13
    assert lr.rank == 1


# ------------------------------------------------------------- BiLanczos

def test_bilanczos_symmetric_rank2_exact():
    rng = np.random.default_rng(5)
    q = np.linalg.qr(rng.standard_normal((30, 2)))[0]
    a = q @ np.diag([2.0, 1.0]) @ q.T
    lr = bilanczos(DenseMap(a), EpsRank(1e-10), seed=1)
    assert lr.rank == 2
    assert rel_err(lr, a) <= 1e-12


def test_bilanczos_null_start_restarts_and_converges():
    a = np.zeros((6, 6))
    a[0, 0] = 1.0
    w0 = np.zeros(6)
    w0[1] = 1.0  # exactly in the null space: first coupling vanishes
    lr = bilanczos(DenseMap(a), EpsRank(1e-10), seed=2, w0=w0)
    assert np.linalg.norm(lr.to_dense() - a) <= 1e-12


def test_bilanczos_factor_orthonormality():
    a = np.random.default_rng(7).standard_normal((64, 64))
    lr = bilanczos(DenseMap(a), FixedRank(20), seed=0)
    right = lr.right
    assert np.abs(right.T @ right - np.eye(right.shape[1])).max() <= 1e-10
    left_dirs = lr.left / np.linalg.norm(lr.left, axis=0)
    assert np.abs(left_dirs.T @ left_dirs
                  - np.eye(left_dirs.shape[1])).max() <= 1e-10


# ------------------------------------------------------------ randomized

def test_randomized_adaptive_zero_map():
    lr = randomized_adaptive(DenseMap(np.zeros((8, 5))), 1e-10, seed=0)
    assert lr.rank == 0


def test_randomized_adaptive_rank3():
    a = exact_rank_matrix(25, 18, 3, seed=9)
    lr = randomized_adaptive(DenseMap(a), 1e-10, seed=42)
    assert 3 <= lr.rank <= 5
    assert rel_err(lr, a) <= 1e-9


def test_randomized_adaptive_deterministic():
    a = decay_matrix(30, 26, 0.5, seed=3)
    l1 = randomized_adaptive(DenseMap(a), 1e-8, seed=11)
    l2 = randomized_adaptive(DenseMap(a), 1e-8, seed=11)
    assert np.array_equal(l1.left, l2.left)
    assert np.array_equal(l1.right, l2.right)


def test_randomized_fixed_full_rank_exact():
    a = decay_matrix(20, 14, 0.6, seed=4)
    for q in (0, 1):
        lr = randomized_fixed(DenseMap(a), 14, q=q, seed=0)
        assert rel_err(lr, a) <= 1e-12


def test_randomized_fixed_recovers_exact_rank():
    a = exact_rank_matrix(30, 24, 5, seed=8)
    lr = randomized_fixed(DenseMap(a), 5, q=1, seed=1)
    assert np.linalg.norm(lr.to_dense() - a) <= 1e-11 * np.linalg.norm(a)


def test_randomized_fixed_orthonormal_left():
    a = decay_matrix(30, 24, 0.5, seed=5)
    lr = randomized_fixed(DenseMap(a), 6, q=1, seed=2)
    assert np.abs(lr.left.T @ lr.left - np.eye(6)).max() <= 1e-12


def test_randomized_fixed_rank_validation():
    a = decay_matrix(10, 8, 0.5)
    with pytest.raises(ValueError):
        randomized_fixed(DenseMap(a), 9)
    with pytest.raises(ValueError):
        randomized_fixed(DenseMap(a), 0)


# -------------------------------------------------------------- dense SVD

def test_dense_svd_eckart_young_exact():
    a = decay_matrix(22, 19, 0.6, seed=6)
    s = np.linalg.svd(a, compute_uv=False)
    for k in (3, 7):
        lr = dense_svd_compress(DenseMap(a), FixedRank(k))
        err = np.linalg.norm(lr.to_dense() - a)
        assert err == pytest.approx(np.sqrt(np.sum(s[k:] ** 2)), rel=1e-10)


def test_dense_svd_diag321():
    lr = dense_svd_compress(DenseMap(np.diag([3.0, 2.0, 1.0])), FixedRank(2))
    assert np.linalg.norm(lr.to_dense() - np.diag([3.0, 2.0, 1.0])) == \
        pytest.approx(1.0, rel=1e-12)


def test_aca_within_2x_of_dense_svd_on_kernel_blocks():
    from hmat.clustering import build_block_cluster_tree, build_cluster_tree
    from hmat.geometry import build_sphere_mesh, kernel_block
    p = build_sphere_mesh(3)
    t = build_cluster_tree(p, 16)
    b = build_block_cluster_tree(t, 2.0)
    perm = t.permutation
    for leaf in b.far_leaves()[::9]:
        rows = perm[leaf.tau.lo:leaf.tau.hi]
        cols = perm[leaf.sigma.lo:leaf.sigma.hi]
        a = kernel_block("exp", p, rows, cols)
        err_svd = np.linalg.norm(
            dense_svd_compress(DenseMap(a), EpsRank(1e-8)).to_dense() - a)
        err_aca = np.linalg.norm(
            aca(DenseMap(a), EpsRank(1e-8)).to_dense() - a)
        assert err_aca <= 2 * err_svd + 1e-12 * np.linalg.norm(a)


# --------------------------------------------------------- shared contracts

def test_matvec_budget_2k_plus_constant():
    # two products per step, plus a bounded overhead from the stopping
    # confirmation and the final recompression trimming a few crosses
    for theta in (0.5, 0.7):
        for seed in (1, 3):
            a = decay_matrix(90, 80, theta, seed=seed)
            cm = CountingMap(DenseMap(a))
            lr = aca(cm, EpsRank(1e-10))
            assert cm.total <= 2 * lr.rank + 20
            cm = CountingMap(DenseMap(a))
            lr = bilanczos(cm, EpsRank(1e-10), seed=0)
            assert cm.total <= 2 * lr.rank + 20


def test_rank_r_recovery_in_r_steps():
    for r in (1, 3, 6):
        a = exact_rank_matrix(40, 35, r, seed=r)
        cm = CountingMap(DenseMap(a))
        la = aca(cm, EpsRank(1e-10))
        assert la.rank == r and rel_err(la, a) <= 1e-12
        assert cm.total <= 2 * r + 4
        cm = CountingMap(DenseMap(a))
        lb = bilanczos(cm, EpsRank(1e-10), seed=0)
        assert lb.rank == r and rel_err(lb, a) <= 1e-12
        assert cm.total <= 2 * r + 8


def test_compress_dispatch():
    a = decay_matrix(20, 18, 0.5, seed=1)
    for tag in CompressorKind.TAGS:
        lr = compress(DenseMap(a), FixedRank(4), CompressorKind(tag, seed=3))
        assert lr.rank <= 4
        lr = compress(DenseMap(a), EpsRank(1e-6), CompressorKind(tag, seed=3))
        assert rel_err(lr, a) <= 2e-6


def test_compressor_kind_validation():
    with pytest.raises(ValueError):
        CompressorKind("nope")
    with pytest.raises(ValueError):
        CompressorKind("aca", q=-1)


def test_tiny_eps_clamped_with_warning():
    a = decay_matrix(10, 9, 0.5)
    with pytest.warns(UserWarning):
        aca(DenseMap(a), EpsRank(1e-30))
