"""Cluster trees and block-cluster trees.

Clusters are contiguous ranges of a permuted panel index array, built by
cardinality-balanced bisection along the longest bounding-box axis.  The
block-cluster tree pairs same-level clusters; a block becomes a low-rank
(farfield) leaf when the admissibility condition

    min{diam(box_tau), diam(box_sigma)} <= eta * dist(box_tau, box_sigma)

holds, a dense (nearfield) leaf when it is inadmissible and either
cluster cannot be split further, and an inner node otherwise.  Diameters
are Euclidean; box distance is the largest per-axis gap.
"""

from dataclasses import dataclass, field

import numpy as np

INNER = "inner"
FAR = "far"
NEAR = "near"

DEFAULT_NMIN = 16
# calibrated so that rank-16 products on the sphere meshes land at
# relative errors around 1e-8..1e-7 once coarse farfield blocks appear
DEFAULT_ETA = 2.0


@dataclass
class Cluster:
    lo: int
    hi: int
    box_lo: np.ndarray
    box_hi: np.ndarray
    level: int
    id: int
    children: tuple = ()

    @property
    def size(self):
        return self.hi - self.lo

    @property
    def is_leaf(self):
        return not self.children


@dataclass
class ClusterTree:
    root: Cluster
    permutation: np.ndarray  # tree position -> original panel index
    n_min: int
    depth: int
    clusters: list = field(default_factory=list, repr=False)

    @property
    def n(self):
        return self.root.size


def build_cluster_tree(panels, n_min=DEFAULT_NMIN):
    """Bisect panel centers into a balanced binary cluster tree."""
    if n_min < 1:
        raise ValueError("n_min must be >= 1")
    n = len(panels)
    if n == 0:
        raise ValueError("empty panel set")

    centers = panels.centers
    perm = np.arange(n)
    clusters = []

    def rec(lo, hi, level):
        pts = centers[perm[lo:hi]]
        node = Cluster(lo=lo, hi=hi, box_lo=pts.min(axis=0),
                       box_hi=pts.max(axis=0), level=level, id=len(clusters))
        clusters.append(node)
        if hi - lo > n_min:
            axis = int(np.argmax(node.box_hi - node.box_lo))
            order = np.argsort(pts[:, axis], kind="stable")
            perm[lo:hi] = perm[lo:hi][order]
            mid = lo + (hi - lo) // 2
            node.children = (rec(lo, mid, level + 1), rec(mid, hi, level + 1))
        return node

    root = rec(0, n, 0)
    depth = max(c.level for c in clusters)
    return ClusterTree(root=root, permutation=perm, n_min=n_min,
                       depth=depth, clusters=clusters)


def _box_diam(lo, hi):
    return float(np.linalg.norm(hi - lo))


def _box_dist(alo, ahi, blo, bhi):
    # largest per-axis gap between the boxes; zero when they overlap
    gaps = np.maximum(alo - bhi, blo - ahi)
    return float(max(0.0, gaps.max()))


def admissible(tau, sigma, eta=DEFAULT_ETA):
    """Symmetric, descent-monotone low-rank admissibility test."""
    d = min(_box_diam(tau.box_lo, tau.box_hi),
            _box_diam(sigma.box_lo, sigma.box_hi))
    return d <= eta * _box_dist(tau.box_lo, tau.box_hi,
                                sigma.box_lo, sigma.box_hi)


@dataclass
class BlockNode:
    tau: Cluster
    sigma: Cluster
    kind: str
    level: int
    id: int
    children: tuple = ()

    @property
    def shape(self):
        return (self.tau.size, self.sigma.size)

    @property
    def is_leaf(self):
        return self.kind != INNER


@dataclass
class BlockClusterTree:
    root: BlockNode
    tree: ClusterTree
    eta: float
    nodes: list = field(default_factory=list, repr=False)

    @property
    def n(self):
        return self.tree.n

    @property
    def depth(self):
        return max(b.level for b in self.nodes)

    @property
    def leaves(self):
        return [b for b in self.nodes if b.is_leaf]

    def far_leaves(self):
        return [b for b in self.nodes if b.kind == FAR]

    def near_leaves(self):
        return [b for b in self.nodes if b.kind == NEAR]


def build_block_cluster_tree(tree, eta=DEFAULT_ETA):
    """Pair clusters level by level, splitting inadmissible blocks."""
    nodes = []

    def rec(tau, sigma, level):
        node = BlockNode(tau=tau, sigma=sigma, kind=NEAR, level=level,
                         id=len(nodes))
        nodes.append(node)
        if admissible(tau, sigma, eta):
            node.kind = FAR
        elif tau.children and sigma.children:
            node.kind = INNER
            node.children = tuple(
                rec(t, s, level + 1)
                for t in tau.children for s in sigma.children)
        return node

    root = rec(tree.root, tree.root, 0)
    return BlockClusterTree(root=root, tree=tree, eta=eta, nodes=nodes)


def sparsity_constant(bct):
    """Largest number of blocks sharing one row cluster."""
    count = {}
    for b in bct.nodes:
        count[b.tau.id] = count.get(b.tau.id, 0) + 1
    return max(count.values())


def product_rank_constant(bct):
    """Bound constant for ranks of untruncated block products.

    For each leaf block tau x sigma, counts the descendant pairs
    (tau', sigma') that are coupled through some middle cluster rho' with
    both tau' x rho' and rho' x sigma' present in the block tree; returns
    the maximum over leaves.  Diagnostic only, computed exhaustively.
    """
    cols_of = {}
    rows_of = {}
    for b in bct.nodes:
        cols_of.setdefault(b.tau.id, set()).add(b.sigma.id)
        rows_of.setdefault(b.sigma.id, set()).add(b.tau.id)

    def successors(c):
        out = [c]
        for ch in c.children:
            out.extend(successors(ch))
        return out

    best = 0
    for leaf in bct.leaves:
        count = 0
        for t in successors(leaf.tau):
            tcols = cols_of.get(t.id)
            if not tcols:
                continue
            for s in successors(leaf.sigma):
                srows = rows_of.get(s.id)
                if srows and not tcols.isdisjoint(srows):
                    count += 1
        best = max(best, count)
    return best


def dump_tree(bct):
    """Textual block listing (one line per node) for golden-file tests."""
    lines = []

    def rec(b):
        lines.append(f"level {b.level} rows [{b.tau.lo},{b.tau.hi}) "
                     f"cols [{b.sigma.lo},{b.sigma.hi}) {b.kind}")
        for c in b.children:
            rec(c)

    rec(bct.root)
    return "\n".join(lines) + "\n"
