"""Hierarchical matrix container, assembly, and matrix-vector products.

An HMatrix stores one payload per leaf of a block-cluster tree: a dense
array on nearfield leaves and a LowRank on farfield leaves (dense on a
farfield leaf only as a flagged fallback when compression failed).  All
vectors are in tree ordering; callers working in original panel order
apply the cluster-tree permutation at the boundary.

Serialization format (little endian), for caching assembled operators:

    magic   4 bytes  b"HMX1"
    version u32      currently 1
    n       u64      matrix dimension
    hash    32 bytes sha256 of the block-tree text dump
    count   u64      number of leaf payload records

followed by `count` records, each

    node_id u64
    kind    u8       0 dense payload, 1 low-rank payload
    degraded u8     1 when compression fell back or was flagged
    dense:    m u32, n u32, m*n f64 row-major
    low-rank: m u32, n u32, k u32, m*k f64 (left), n*k f64 (right)
"""

import hashlib
import struct

import numpy as np

from . import clustering, geometry
from .compressors import LinearMap, aca
from .lowrank import LowRank

MAX_DENSE = 6144


class OpCounter:
    """Accumulates fused multiply-add counts of leaf products."""

    def __init__(self):
        self.madds = 0

    def add(self, n):
        self.madds += int(n)


class HMatrix:
    def __init__(self, bct, data, degraded=None):
        self.bct = bct
        self.data = data  # leaf node id -> ndarray or LowRank
        self.degraded = set(degraded or ())
        self.report = None

    @property
    def n(self):
        return self.bct.n

    @property
    def shape(self):
        return (self.n, self.n)

    def max_far_rank(self):
        ranks = [p.rank for p in self.data.values() if isinstance(p, LowRank)]
        return max(ranks, default=0)


class _KernelBlockMap(LinearMap):
    """Entry access into a kernel sub-block, in tree ordering."""

    def __init__(self, kind, panels, rows, cols):
        self.kind = kind
        self.panels = panels
        self.rows = rows
        self.cols = cols
        self.shape = (len(rows), len(cols))

    def row(self, i):
        return geometry.kernel_block(self.kind, self.panels,
                                     self.rows[i:i + 1], self.cols)[0]

    def col(self, j):
        return geometry.kernel_block(self.kind, self.panels, self.rows,
                                     self.cols[j:j + 1])[:, 0]

    def apply(self, v):
        return self.to_dense() @ v

    def apply_transpose(self, w):
        return self.to_dense().T @ w

    def to_dense(self):
        return geometry.kernel_block(self.kind, self.panels,
                                     self.rows, self.cols)


def assemble_hmatrix(kind, bct, policy, panels):
    """Fill nearfield blocks densely and compress farfield blocks by ACA.

    A farfield block whose cross approximation cannot certify
    convergence falls back to dense storage and is flagged.
    """
    perm = bct.tree.permutation
    data = {}
    degraded = set()
    for leaf in bct.leaves:
        rows = perm[leaf.tau.lo:leaf.tau.hi]
        cols = perm[leaf.sigma.lo:leaf.sigma.hi]
        if leaf.kind == clustering.NEAR:
            data[leaf.id] = geometry.kernel_block(kind, panels, rows, cols)
        else:
            block = aca(_KernelBlockMap(kind, panels, rows, cols), policy)
            if block.degraded:
                degraded.add(leaf.id)
                data[leaf.id] = geometry.kernel_block(kind, panels, rows, cols)
            else:
                data[leaf.id] = block
    return HMatrix(bct, data, degraded)


def _leaf_matvec(payload, x, transpose, counter):
    if isinstance(payload, LowRank):
        if payload.rank == 0:
            return 0.0
        m, n = payload.shape
        if transpose:
            y = payload.right @ (payload.left.T @ x)
        else:
            y = payload.left @ (payload.right.T @ x)
        if counter is not None:
            counter.add(payload.rank * (m + n))
        return y
    if counter is not None:
        counter.add(payload.size)
    return payload.T @ x if transpose else payload @ x


def hmat_vec(h, x, counter=None):
    """y = H x by recursive descent over the block tree."""
    x = np.asarray(x, dtype=float)
    if x.shape != (h.n,):
        raise ValueError(f"expected vector of length {h.n}, got {x.shape}")
    y = np.zeros(h.n)

    def rec(node):
        if node.is_leaf:
            y[node.tau.lo:node.tau.hi] += _leaf_matvec(
                h.data[node.id], x[node.sigma.lo:node.sigma.hi],
                False, counter)
        else:
            for c in node.children:
                rec(c)

    rec(h.bct.root)
    return y


def hmat_vec_transpose(h, x, counter=None):
    """y = H.T x, the same descent with block roles swapped."""
    x = np.asarray(x, dtype=float)
    if x.shape != (h.n,):
        raise ValueError(f"expected vector of length {h.n}, got {x.shape}")
    y = np.zeros(h.n)

    def rec(node):
        if node.is_leaf:
            y[node.sigma.lo:node.sigma.hi] += _leaf_matvec(
                h.data[node.id], x[node.tau.lo:node.tau.hi], True, counter)
        else:
            for c in node.children:
                rec(c)

    rec(h.bct.root)
    return y


def _node_matmat(h, node, x, transpose=False):
    """Product of one block with an (n_block, q) matrix, block local."""
    if node.is_leaf:
        payload = h.data[node.id]
        if isinstance(payload, LowRank):
            if payload.rank == 0:
                rows = node.sigma.size if transpose else node.tau.size
                return np.zeros((rows, x.shape[1]))
            if transpose:
                return payload.right @ (payload.left.T @ x)
            return payload.left @ (payload.right.T @ x)
        return payload.T @ x if transpose else payload @ x

    if transpose:
        out = np.zeros((node.sigma.size, x.shape[1]))
        for c in node.children:
            sub = x[c.tau.lo - node.tau.lo:c.tau.hi - node.tau.lo]
            out[c.sigma.lo - node.sigma.lo:c.sigma.hi - node.sigma.lo] += \
                _node_matmat(h, c, sub, True)
        return out
    out = np.zeros((node.tau.size, x.shape[1]))
    for c in node.children:
        sub = x[c.sigma.lo - node.sigma.lo:c.sigma.hi - node.sigma.lo]
        out[c.tau.lo - node.tau.lo:c.tau.hi - node.tau.lo] += \
            _node_matmat(h, c, sub, False)
    return out


class HBlock:
    """View of one block of an HMatrix, possibly a dense sub-slice.

    Sub-slices arise when a product descends into a dense nearfield leaf
    whose middle cluster cannot be split; such views stay dense and only
    shrink.  Tree blocks keep their node identity so the recursion can
    descend structurally.
    """

    def __init__(self, hmat, node, r0=None, r1=None, c0=None, c1=None):
        self.hmat = hmat
        self.node = node
        self.r0 = node.tau.lo if r0 is None else r0
        self.r1 = node.tau.hi if r1 is None else r1
        self.c0 = node.sigma.lo if c0 is None else c0
        self.c1 = node.sigma.hi if c1 is None else c1

    @property
    def shape(self):
        return (self.r1 - self.r0, self.c1 - self.c0)

    @property
    def is_view(self):
        return (self.r0, self.r1, self.c0, self.c1) != (
            self.node.tau.lo, self.node.tau.hi,
            self.node.sigma.lo, self.node.sigma.hi)

    @property
    def is_inner(self):
        return not self.is_view and self.node.kind == clustering.INNER

    @property
    def is_far(self):
        return (not self.is_view and self.node.kind == clustering.FAR
                and isinstance(self.hmat.data[self.node.id], LowRank))

    @property
    def is_dense(self):
        return not (self.is_inner or self.is_far)

    def lowrank(self):
        return self.hmat.data[self.node.id]

    def to_dense(self):
        if self.is_inner:
            return self.matmat(np.eye(self.shape[1]))
        payload = self.hmat.data[self.node.id]
        if isinstance(payload, LowRank):
            return payload.to_dense()
        return payload[self.r0 - self.node.tau.lo:self.r1 - self.node.tau.lo,
                       self.c0 - self.node.sigma.lo:self.c1 - self.node.sigma.lo]

    def subview(self, r0, r1, c0, c1):
        return HBlock(self.hmat, self.node, r0, r1, c0, c1)

    def matmat(self, x):
        if self.is_dense and not self.is_inner:
            return self.to_dense() @ x
        return _node_matmat(self.hmat, self.node, x, transpose=False)

    def matmat_transpose(self, x):
        if self.is_dense and not self.is_inner:
            return self.to_dense().T @ x
        return _node_matmat(self.hmat, self.node, x, transpose=True)


def to_dense(h):
    """Materialize the H-matrix in tree ordering."""
    if h.n > MAX_DENSE:
        raise ValueError(f"dense conversion capped at {MAX_DENSE}, got {h.n}")
    out = np.zeros((h.n, h.n))
    for leaf in h.bct.leaves:
        payload = h.data[leaf.id]
        block = payload.to_dense() if isinstance(payload, LowRank) else payload
        out[leaf.tau.lo:leaf.tau.hi, leaf.sigma.lo:leaf.sigma.hi] = block
    return out


def frobenius_norm(h):
    """Blockwise Frobenius norm; low-rank blocks via the Gram trick."""
    total = 0.0
    for payload in h.data.values():
        if isinstance(payload, LowRank):
            total += payload.norm() ** 2
        else:
            total += float(np.sum(payload * payload))
    return float(np.sqrt(total))


def matvec_op_bound(bct, k):
    """Multiply-add budget for one H-matrix-vector product."""
    csp = clustering.sparsity_constant(bct)
    p = bct.depth
    n = bct.n
    return 2 * csp * max(k, bct.tree.n_min) * (p + 1) * 2 * n


def identity_hmatrix(bct):
    """Identity operator on the tree: diagonal dense blocks, rank-0 far."""
    data = {}
    for leaf in bct.leaves:
        m, n = leaf.shape
        if leaf.kind == clustering.FAR:
            data[leaf.id] = LowRank(np.zeros((m, 0)), np.zeros((n, 0)))
        else:
            block = np.zeros((m, n))
            for r in range(leaf.tau.lo, leaf.tau.hi):
                c = r - leaf.sigma.lo
                if 0 <= c < n:
                    block[r - leaf.tau.lo, c] = 1.0
            data[leaf.id] = block
    return HMatrix(bct, data)


def from_dense(a, bct):
    """Scatter a dense tree-ordered matrix into H-matrix form (exact)."""
    a = np.asarray(a, dtype=float)
    data = {}
    for leaf in bct.leaves:
        block = a[leaf.tau.lo:leaf.tau.hi, leaf.sigma.lo:leaf.sigma.hi]
        if leaf.kind == clustering.FAR:
            u, s, vt = np.linalg.svd(block, full_matrices=False)
            r = int(np.sum(s > s[0] * 1e-15)) if len(s) else 0
            data[leaf.id] = LowRank(u[:, :r] * s[:r], vt[:r].T.copy())
        else:
            data[leaf.id] = block.copy()
    return HMatrix(bct, data)


def tree_fingerprint(bct):
    return hashlib.sha256(clustering.dump_tree(bct).encode()).digest()


def save_hmatrix(h, path):
    """Write the leaf payloads in the documented binary layout."""
    with open(path, "wb") as f:
        f.write(b"HMX1")
        f.write(struct.pack("<IQ", 1, h.n))
        f.write(tree_fingerprint(h.bct))
        f.write(struct.pack("<Q", len(h.data)))
        for node_id in sorted(h.data):
            payload = h.data[node_id]
            flag = 1 if node_id in h.degraded else 0
            if isinstance(payload, LowRank):
                m, n = payload.shape
                f.write(struct.pack("<QBBIII", node_id, 1, flag,
                                    m, n, payload.rank))
                f.write(np.ascontiguousarray(payload.left).tobytes())
                f.write(np.ascontiguousarray(payload.right).tobytes())
            else:
                m, n = payload.shape
                f.write(struct.pack("<QBBII", node_id, 0, flag, m, n))
                f.write(np.ascontiguousarray(payload).tobytes())


def load_hmatrix(path, bct):
    """Read payloads back; the tree must match the stored fingerprint."""
    with open(path, "rb") as f:
        if f.read(4) != b"HMX1":
            raise ValueError("not an H-matrix file")
        version, n = struct.unpack("<IQ", f.read(12))
        if version != 1:
            raise ValueError(f"unsupported version {version}")
        if n != bct.n:
            raise ValueError(f"dimension mismatch: file {n}, tree {bct.n}")
        if f.read(32) != tree_fingerprint(bct):
            raise ValueError("block tree does not match the stored operator")
        (count,) = struct.unpack("<Q", f.read(8))
        data = {}
        degraded = set()
        for _ in range(count):
            node_id, kind, flag = struct.unpack("<QBB", f.read(10))
            if flag:
                degraded.add(node_id)
            if kind == 1:
                m, nn, k = struct.unpack("<III", f.read(12))
                left = np.frombuffer(f.read(8 * m * k)).reshape(m, k)
                right = np.frombuffer(f.read(8 * nn * k)).reshape(nn, k)
                data[node_id] = LowRank(left.copy(), right.copy())
            else:
                m, nn = struct.unpack("<II", f.read(8))
                block = np.frombuffer(f.read(8 * m * nn)).reshape(m, nn)
                data[node_id] = block.copy()
    return HMatrix(bct, data, degraded)
