"""Sum-expressions: implicit representations of product blocks.

A product of two H-matrices is never formed globally.  Instead each
target block carries a sum-expression, a queued sum of

* factored low-rank terms (sliced without arithmetic when descending),
* pairs of H-matrix blocks (H restricted to tau x rho, K restricted to
  rho x sigma) whose product is pending.

Descending to a child block splits every pending pair over the children
of its middle cluster; sub-pairs with a low-rank factor are multiplied
out into explicit low-rank terms by thin products, the rest stay
pending.  Pending pairs reference only dense or subdivided blocks on
both sides.  No step of the descent truncates anything: the represented
value is exactly the corresponding sub-block of the product, and the
one approximation happens when a farfield target block is finally
compressed.

A sum-expression acts as a linear operator (products with it cost a few
thin multiplies and block H-matrix products), which is exactly the
access the compressors need.
"""

import numpy as np

from .compressors import LinearMap
from .hmatrix import HBlock
from .lowrank import LowRank

MAX_EVAL = 6144


class SumExpression(LinearMap):
    def __init__(self, node, lowrank_terms, product_terms):
        self.node = node
        self.lowrank_terms = tuple(lowrank_terms)
        self.product_terms = tuple(product_terms)
        self.shape = (node.tau.size, node.sigma.size)
        self._stack = None

    def _stacked(self):
        # one fat factor pair for all low-rank terms, built lazily so a
        # compressor's many products pay the concatenation only once
        if self._stack is None:
            terms = [t for t in self.lowrank_terms if t.rank > 0]
            if terms:
                self._stack = (np.hstack([t.left for t in terms]),
                               np.hstack([t.right for t in terms]))
            else:
                self._stack = (None, None)
        return self._stack

    def apply(self, v):
        return self.apply_mat(v[:, None])[:, 0]

    def apply_transpose(self, w):
        return self.apply_transpose_mat(w[:, None])[:, 0]

    def apply_mat(self, v):
        out = np.zeros((self.shape[0], v.shape[1]))
        left, right = self._stacked()
        if left is not None:
            out += left @ (right.T @ v)
        for p, q in self.product_terms:
            out += p.matmat(q.matmat(v))
        return out

    def apply_transpose_mat(self, w):
        out = np.zeros((self.shape[1], w.shape[1]))
        left, right = self._stacked()
        if left is not None:
            out += right @ (left.T @ w)
        for p, q in self.product_terms:
            out += q.matmat_transpose(p.matmat_transpose(w))
        return out


def sumexpr_root(h, k):
    """The full product H K as a single pending pair on the root block."""
    if h.bct is not k.bct:
        raise ValueError("factors must live on the same block-cluster tree")
    root = h.bct.root
    return SumExpression(root, (), ((HBlock(h, root), HBlock(k, root)),))


def _find_child(node, tau, sigma):
    for c in node.children:
        if c.tau is tau and c.sigma is sigma:
            return c
    raise ValueError("child block not found")


def _thin_product(p, q):
    """Low-rank product of two blocks, at least one of them factored.

    The smaller-rank factor is pushed through the other operator, so the
    result rank never exceeds the smaller factor rank.
    """
    if p.is_far and q.is_far:
        lp, lq = p.lowrank(), q.lowrank()
        if min(lp.rank, lq.rank) == 0:
            return LowRank(np.zeros((p.shape[0], 0)),
                           np.zeros((q.shape[1], 0)))
        core = lp.right.T @ lq.left
        if lp.rank <= lq.rank:
            return LowRank(lp.left, lq.right @ core.T)
        return LowRank(lp.left @ core, lq.right)
    if p.is_far:
        lp = p.lowrank()
        if lp.rank == 0:
            return LowRank(np.zeros((p.shape[0], 0)),
                           np.zeros((q.shape[1], 0)))
        return LowRank(lp.left, q.matmat_transpose(lp.right))
    lq = q.lowrank()
    if lq.rank == 0:
        return LowRank(np.zeros((p.shape[0], 0)), np.zeros((q.shape[1], 0)))
    return LowRank(p.matmat(lq.left), lq.right)


def _split_pair(p, q, tau_child, sigma_child):
    """Sub-pairs of a pending pair restricted to one child block."""
    if p.is_inner:
        # the middle cluster splits with the tree
        out = []
        for rho_child in p.node.sigma.children:
            pc = HBlock(p.hmat, _find_child(p.node, tau_child, rho_child))
            qc = HBlock(q.hmat, _find_child(q.node, rho_child, sigma_child))
            out.append((pc, qc))
        return out
    # dense pair: the middle cluster is a leaf and never splits
    pc = p.subview(tau_child.lo, tau_child.hi, p.c0, p.c1)
    qc = q.subview(q.r0, q.r1, sigma_child.lo, sigma_child.hi)
    return [(pc, qc)]


def restrict(s, child):
    """Sum-expression of a child block; exact, no truncation anywhere."""
    if child not in s.node.children:
        raise ValueError("not a child of this block")
    t0, t1 = child.tau.lo - s.node.tau.lo, child.tau.hi - s.node.tau.lo
    c0, c1 = child.sigma.lo - s.node.sigma.lo, child.sigma.hi - s.node.sigma.lo

    lowrank_terms = [LowRank(t.left[t0:t1], t.right[c0:c1])
                     for t in s.lowrank_terms if t.rank > 0]
    product_terms = []
    for p, q in s.product_terms:
        for pc, qc in _split_pair(p, q, child.tau, child.sigma):
            if pc.is_far or qc.is_far:
                term = _thin_product(pc, qc)
                if term.rank > 0:
                    lowrank_terms.append(term)
            else:
                product_terms.append((pc, qc))
    return SumExpression(child, lowrank_terms, product_terms)


def sumexpr_apply(s, v):
    return s.apply(np.asarray(v, dtype=float))


def sumexpr_apply_transpose(s, w):
    return s.apply_transpose(np.asarray(w, dtype=float))


def evaluate_dense(s):
    """Materialize the expression by applying it to identity columns."""
    m, n = s.shape
    if m * n > MAX_EVAL ** 2:
        raise ValueError("block too large to materialize")
    return s.apply_mat(np.eye(n))
