import numpy as np
import pytest

from hmat.clustering import (FAR, INNER, NEAR, Cluster, admissible,
                             build_block_cluster_tree, build_cluster_tree,
                             dump_tree, sparsity_constant)
from hmat.geometry import build_sphere_mesh

# brute-force reference values for the sphere mesh with N=96, n_min=6,
# eta=2: independent recursion over plain index sets
BRUTE_FAR_96 = 96
BRUTE_NEAR_96 = 160

# sparsity constants at the default parameters (n_min=16, eta=2.0)
CSP_BY_LEVEL = [1, 2, 8, 24, 30, 32]


def box_cluster(lo, hi):
    return Cluster(lo=0, hi=1, box_lo=np.array(lo, dtype=float),
                   box_hi=np.array(hi, dtype=float), level=0, id=0)


def test_single_node_tree():
    p = build_sphere_mesh(0)
    t = build_cluster_tree(p, n_min=6)
    assert t.depth == 0
    assert t.root.is_leaf
    assert t.root.size == 6


def test_balanced_bisection_24_panels():
    t = build_cluster_tree(build_sphere_mesh(1), n_min=6)
    assert t.depth == 2
    leaves = [c for c in t.clusters if c.is_leaf]
    assert sorted(c.size for c in leaves) == [6, 6, 6, 6]


@pytest.mark.parametrize("level,n_min", [(1, 6), (2, 6), (2, 16), (3, 16)])
def test_leaf_ranges_concatenate(level, n_min):
    t = build_cluster_tree(build_sphere_mesh(level), n_min)
    leaves = sorted((c for c in t.clusters if c.is_leaf), key=lambda c: c.lo)
    pos = 0
    for c in leaves:
        assert c.lo == pos
        pos = c.hi
    assert pos == t.n
    assert sorted(t.permutation) == list(range(t.n))


def test_nonleaf_children_partition():
    t = build_cluster_tree(build_sphere_mesh(2), 6)
    for c in t.clusters:
        if not c.is_leaf:
            left, right = c.children
            assert (left.lo, right.hi) == (c.lo, c.hi)
            assert left.hi == right.lo
            assert left.size > 0 and right.size > 0


def test_depth_logarithmic():
    for level, n_min in ((2, 6), (3, 16), (4, 16)):
        t = build_cluster_tree(build_sphere_mesh(level), n_min)
        assert t.depth <= np.ceil(np.log2(max(t.n / n_min, 1))) + 1


def test_empty_and_bad_nmin():
    p = build_sphere_mesh(0)
    with pytest.raises(ValueError):
        build_cluster_tree(p, 0)
    empty = type(p)(centers=p.centers[:0], areas=p.areas[:0],
                    corners=p.corners[:0], level=0)
    with pytest.raises(ValueError):
        build_cluster_tree(empty, 4)


def test_admissible_diagonal_block_never():
    c = box_cluster([0, 0, 0], [1, 1, 1])
    assert not admissible(c, c, eta=1.0)


def test_admissible_hand_computed_boxes():
    # unit box against shifted unit boxes: diameter sqrt(3), gaps 1/2/3
    a = box_cluster([0, 0, 0], [1, 1, 1])
    near = box_cluster([2, 2, 2], [3, 3, 3])  # sqrt(3) <= 1*1 fails
    b = box_cluster([3, 3, 3], [4, 4, 4])     # sqrt(3) <= 1*2 holds
    c = box_cluster([4, 4, 4], [5, 5, 5])     # sqrt(3) <= 1*3 holds
    assert not admissible(a, near, eta=1.0)
    assert admissible(a, b, eta=1.0)
    assert admissible(a, c, eta=1.0)


def test_admissible_symmetric_on_random_boxes():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        lo1 = rng.uniform(-2, 2, 3)
        lo2 = rng.uniform(-2, 2, 3)
        a = box_cluster(lo1, lo1 + rng.uniform(0.1, 2, 3))
        b = box_cluster(lo2, lo2 + rng.uniform(0.1, 2, 3))
        eta = rng.uniform(0.3, 3.0)
        assert admissible(a, b, eta) == admissible(b, a, eta)


def test_admissible_monotone_under_descent():
    t = build_cluster_tree(build_sphere_mesh(2), 6)
    clusters = t.clusters
    for tau in clusters[::3]:
        for sigma in clusters[::5]:
            if admissible(tau, sigma, 2.0):
                for tc in tau.children or (tau,):
                    for sc in sigma.children or (sigma,):
                        assert admissible(tc, sc, 2.0)


def test_block_tree_single_near_root():
    t = build_cluster_tree(build_sphere_mesh(0), n_min=6)
    b = build_block_cluster_tree(t, 2.0)
    assert b.root.is_leaf and b.root.kind == NEAR
    assert len(b.nodes) == 1


@pytest.mark.parametrize("level,n_min", [(1, 6), (2, 6)])
def test_block_leaves_partition_index_square(level, n_min):
    t = build_cluster_tree(build_sphere_mesh(level), n_min)
    b = build_block_cluster_tree(t, 2.0)
    n = t.n
    cover = np.zeros((n, n), dtype=int)
    for leaf in b.leaves:
        cover[leaf.tau.lo:leaf.tau.hi, leaf.sigma.lo:leaf.sigma.hi] += 1
    assert (cover == 1).all()


def test_block_tree_level_conserving():
    t = build_cluster_tree(build_sphere_mesh(2), 6)
    b = build_block_cluster_tree(t, 2.0)
    for node in b.nodes:
        assert node.tau.level == node.sigma.level == node.level
        if node.kind == INNER:
            assert len(node.children) == (len(node.tau.children)
                                          * len(node.sigma.children))
        if node.kind == FAR:
            assert admissible(node.tau, node.sigma, b.eta)


def test_far_near_counts_against_brute_force():
    t = build_cluster_tree(build_sphere_mesh(2), 6)
    b = build_block_cluster_tree(t, 2.0)
    assert len(b.far_leaves()) == BRUTE_FAR_96
    assert len(b.near_leaves()) == BRUTE_NEAR_96


def test_block_depth_bounded_by_cluster_depth():
    for level, n_min in ((2, 6), (3, 16)):
        t = build_cluster_tree(build_sphere_mesh(level), n_min)
        b = build_block_cluster_tree(t, 2.0)
        assert b.depth <= t.depth


def test_sparsity_constant_trivial_tree():
    t = build_cluster_tree(build_sphere_mesh(0), n_min=6)
    assert sparsity_constant(build_block_cluster_tree(t, 2.0)) == 1


def test_sparsity_constant_grows_then_saturates():
    values = []
    for level in range(6):
        t = build_cluster_tree(build_sphere_mesh(level), 16)
        values.append(sparsity_constant(build_block_cluster_tree(t, 2.0)))
    assert values == CSP_BY_LEVEL
    assert all(a <= b for a, b in zip(values, values[1:]))
    # saturation: late growth is marginal compared to the early doubling
    assert values[5] - values[4] <= 2
    assert all(v >= 1 for v in values)


GOLDEN_DUMP_24 = """\
level 0 rows [0,24) cols [0,24) inner
level 1 rows [0,12) cols [0,12) inner
level 2 rows [0,6) cols [0,6) near
level 2 rows [0,6) cols [6,12) near
level 2 rows [6,12) cols [0,6) near
level 2 rows [6,12) cols [6,12) near
level 1 rows [0,12) cols [12,24) inner
level 2 rows [0,6) cols [12,18) near
level 2 rows [0,6) cols [18,24) near
level 2 rows [6,12) cols [12,18) near
level 2 rows [6,12) cols [18,24) near
level 1 rows [12,24) cols [0,12) inner
level 2 rows [12,18) cols [0,6) near
level 2 rows [12,18) cols [6,12) near
level 2 rows [18,24) cols [0,6) near
level 2 rows [18,24) cols [6,12) near
level 1 rows [12,24) cols [12,24) inner
level 2 rows [12,18) cols [12,18) near
level 2 rows [12,18) cols [18,24) near
level 2 rows [18,24) cols [12,18) near
level 2 rows [18,24) cols [18,24) near
"""


def test_dump_golden_file():
    t = build_cluster_tree(build_sphere_mesh(1), 6)
    b = build_block_cluster_tree(t, 2.0)
    assert dump_tree(b) == GOLDEN_DUMP_24
