"""Factorized low-rank matrices and SVD-based truncation.

A LowRank stores the factors of M = left @ right.T explicitly; rank zero
is a first-class value (empty factors, zero matrix).  Truncation goes
through an exact thin SVD of the factorization: QR both factors, SVD the
small core, recombine.  Singular values are absorbed into the left
factor, keeping the right factor orthonormal.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LowRank:
    left: np.ndarray   # (m, k)
    right: np.ndarray  # (n, k), stored untransposed
    degraded: bool = field(default=False, compare=False)

    def __post_init__(self):
        if self.left.ndim != 2 or self.right.ndim != 2:
            raise ValueError("factors must be 2-d")
        if self.left.shape[1] != self.right.shape[1]:
            raise ValueError("factor ranks differ")

    @property
    def shape(self):
        return (self.left.shape[0], self.right.shape[0])

    @property
    def rank(self):
        return self.left.shape[1]

    def to_dense(self):
        return self.left @ self.right.T

    def norm(self):
        """Frobenius norm via the k x k Gram trick."""
        if self.rank == 0:
            return 0.0
        g = (self.left.T @ self.left) @ (self.right.T @ self.right)
        return float(np.sqrt(max(np.trace(g), 0.0)))


def zero_lowrank(m, n):
    return LowRank(np.zeros((m, 0)), np.zeros((n, 0)))


def from_dense(a, policy):
    """Truncated SVD of a dense matrix as a LowRank."""
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    r = select_rank(s, policy)
    return LowRank(u[:, :r] * s[:r], vt[:r].T.copy())


@dataclass(frozen=True)
class FixedRank:
    k_max: int

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")


@dataclass(frozen=True)
class EpsRank:
    eps: float

    def __post_init__(self):
        if not self.eps > 0.0:
            raise ValueError("eps must be positive")


def select_rank(s, policy):
    """Number of leading singular values kept by the policy.

    EpsRank keeps the smallest r with sqrt(sum_{i>r} s_i^2) within
    eps * sqrt(sum_i s_i^2), the relative Frobenius tail criterion.
    """
    if isinstance(policy, FixedRank):
        return min(len(s), policy.k_max)
    if isinstance(policy, EpsRank):
        if len(s) == 0:
            return 0
        tail = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]  # tail[r] = ||s[r:]||
        total = tail[0]
        keep = np.nonzero(tail <= policy.eps * total)[0]
        return int(keep[0]) if len(keep) else len(s)
    raise TypeError(f"unknown truncation policy {policy!r}")


def lowrank_svd(m):
    """Exact SVD (U, s, V) of a LowRank, M = U diag(s) V.T.

    U is (m, k) and V is (n, k) with orthonormal columns, s descending.
    """
    if m.rank == 0:
        return (np.zeros((m.shape[0], 0)), np.zeros(0),
                np.zeros((m.shape[1], 0)))
    ql, rl = np.linalg.qr(m.left)
    qr_, rr = np.linalg.qr(m.right)
    uu, s, vvt = np.linalg.svd(rl @ rr.T)
    return ql @ uu, s, qr_ @ vvt.T


def truncate(m, policy):
    """Best approximation of a LowRank under the given policy."""
    if m.rank == 0:
        return m
    u, s, v = lowrank_svd(m)
    r = select_rank(s, policy)
    return LowRank(u[:, :r] * s[:r], v[:, :r])


def add(a, b):
    """Exact sum by factor concatenation."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return LowRank(np.hstack([a.left, b.left]), np.hstack([a.right, b.right]))


def fast_truncate_sum(terms, policy):
    """Pairwise truncated summation of low-rank terms.

    The first two terms are added and truncated; every further term is
    folded into the running truncated sum.  Cheaper than one big SVD of
    the concatenated factors, at the price of extra truncation error.
    """
    terms = list(terms)
    if not terms:
        raise ValueError("need at least one term")
    if len(terms) == 1:
        return truncate(terms[0], policy)
    acc = truncate(add(terms[0], terms[1]), policy)
    for t in terms[2:]:
        acc = truncate(add(acc, t), policy)
    return acc
