"""Matrix-free low-rank approximation of an abstract linear map.

All schemes touch the target operator only through matrix-vector
products with the map and its transpose (rows and columns are derived as
transpose/forward products with unit vectors).  Available schemes:

* adaptive cross approximation with partial pivoting,
* Golub-Kahan-Lanczos bidiagonalization with full reorthogonalization,
* adaptive randomized range approximation,
* blocked fixed-rank randomized approximation with subspace iterations,
* dense SVD of the materialized operator (best-approximation reference).

The adaptive schemes share one stopping rule: a step is negligible once

    ||l|| * ||u|| <= eps * ||current approximant||_F

for its update vectors l, u.  Since update norms fluctuate, the
iteration ends only after two consecutive negligible steps (which are
retained); a step whose update vanishes outright ends it immediately.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .lowrank import (EpsRank, FixedRank, LowRank, select_rank, truncate,
                      zero_lowrank)

EPS_FLOOR = 1e-15
MAX_DENSE = 6144


class LinearMap:
    """Abstract m x n operator exposing forward and transpose products."""

    shape = (0, 0)

    def apply(self, v):
        raise NotImplementedError

    def apply_transpose(self, w):
        raise NotImplementedError

    def apply_mat(self, v):
        """Forward product with an (n, q) block; default loops columns."""
        return np.column_stack([self.apply(v[:, j]) for j in range(v.shape[1])])

    def apply_transpose_mat(self, w):
        return np.column_stack(
            [self.apply_transpose(w[:, j]) for j in range(w.shape[1])])

    def row(self, i):
        e = np.zeros(self.shape[0])
        e[i] = 1.0
        return self.apply_transpose(e)

    def col(self, j):
        e = np.zeros(self.shape[1])
        e[j] = 1.0
        return self.apply(e)

    def to_dense(self):
        m, n = self.shape
        if n > MAX_DENSE:
            raise ValueError(f"materialization capped at {MAX_DENSE} columns")
        return self.apply_mat(np.eye(n))


class DenseMap(LinearMap):
    def __init__(self, a):
        self.a = np.asarray(a, dtype=float)
        self.shape = self.a.shape

    def apply(self, v):
        return self.a @ v

    def apply_transpose(self, w):
        return self.a.T @ w

    def apply_mat(self, v):
        return self.a @ v

    def apply_transpose_mat(self, w):
        return self.a.T @ w


class CountingMap(LinearMap):
    """Wrapper counting operator products; the only access it grants.

    Vector products count 1, blocked products count one per column, so
    the counter reflects the matrix-vector budget of a compression run.
    """

    def __init__(self, base):
        self.base = base
        self.shape = base.shape
        self.n_apply = 0
        self.n_apply_transpose = 0

    @property
    def total(self):
        return self.n_apply + self.n_apply_transpose

    def apply(self, v):
        self.n_apply += 1
        return self.base.apply(v)

    def apply_transpose(self, w):
        self.n_apply_transpose += 1
        return self.base.apply_transpose(w)

    def apply_mat(self, v):
        self.n_apply += v.shape[1]
        return self.base.apply_mat(v)

    def apply_transpose_mat(self, w):
        self.n_apply_transpose += w.shape[1]
        return self.base.apply_transpose_mat(w)


@dataclass(frozen=True)
class CompressorKind:
    """Which matrix-free scheme realizes the truncation operator.

    tag is one of "aca", "bilanczos", "randomized", "dense-svd"; q and
    seed only matter for the randomized scheme (and the start vector of
    bilanczos), where the seed makes runs reproducible.
    """

    tag: str
    q: int = 1
    seed: int = 0

    TAGS = ("aca", "bilanczos", "randomized", "dense-svd")

    def __post_init__(self):
        if self.tag not in self.TAGS:
            raise ValueError(f"unknown compressor {self.tag!r}")
        if self.q < 0:
            raise ValueError("q must be >= 0")


def _clamp_eps(eps):
    if eps <= np.finfo(float).eps:
        warnings.warn(f"tolerance {eps:g} is below machine precision, "
                      f"clamping to {EPS_FLOOR:g}")
        return EPS_FLOOR
    return eps


def stop_criterion(l, u, accumulated_norm, eps):
    """True when the candidate update l * u.T is negligible.

    accumulated_norm is the Frobenius norm of the current approximant;
    at rank zero, pass the norm of the first computed update instead, so
    the first update is accepted unless it vanishes identically.
    """
    return np.linalg.norm(l) * np.linalg.norm(u) <= eps * accumulated_norm


def aca(map_, policy):
    """Adaptive cross approximation with partial pivoting.

    Builds crosses from residual rows and columns: the residual row at
    the pivot row is normalized by its largest entry (the column pivot)
    and paired with the residual column there.  The next pivot row is
    the largest-modulus entry of the current residual column among
    unused rows.  Rows whose residual vanishes are skipped; if all rows
    are exhausted before convergence the result is flagged degraded.

    Update norms fluctuate from cross to cross, so the adaptive stop
    must fire on two consecutive crosses before the iteration ends; the
    confirming crosses are retained.  The stacked crosses carry slightly
    redundant directions, so the adaptive mode finishes with an exact
    SVD recompression at half the tolerance, which brings the achieved
    rank in line with the tolerance rank of the target.
    """
    m, n = map_.shape
    k_cap = min(m, n)
    eps = _clamp_eps(policy.eps) if isinstance(policy, EpsRank) else None
    k_max = policy.k_max if isinstance(policy, FixedRank) else k_cap

    ls, us = [], []
    used_rows = np.zeros(m, dtype=bool)
    used_cols = np.zeros(n, dtype=bool)
    norm_sq = 0.0
    i = 0
    rows_sampled_zero = 0
    degraded = False
    hits = 0

    while len(ls) < min(k_max, k_cap):
        if i is None or used_rows[i]:
            free = np.nonzero(~used_rows)[0]
            if len(free) == 0:
                # ran out of rows; certified zero only if every row of the
                # original map was sampled as zero before any cross
                degraded = not (len(ls) == 0 and rows_sampled_zero == m)
                break
            i = int(free[0])
        used_rows[i] = True

        u_hat = map_.row(i) - _eval_row(ls, us, i)
        masked = np.where(used_cols, 0.0, np.abs(u_hat))
        j = int(np.argmax(masked))
        pivot = u_hat[j]
        scale = np.sqrt(norm_sq)
        if masked[j] <= 1e-14 * scale or masked[j] == 0.0:
            # residual row carries no signal
            if len(ls) > 0:
                break  # negligible against the approximant: converged
            rows_sampled_zero += 1
            i = None
            continue

        u = u_hat / pivot
        l = map_.col(j) - _eval_col(ls, us, j)
        update = np.linalg.norm(l) * np.linalg.norm(u)
        if update <= 1e-15 * scale or update == 0.0:
            break  # cross adds nothing

        if eps is not None:
            acc = scale if len(ls) else update
            if stop_criterion(l, u, acc, eps):
                hits += 1
            else:
                hits = 0
        used_cols[j] = True
        # incremental ||L U||_F^2 update, all in cross space
        cross = sum(np.dot(lk, l) * np.dot(uk, u) for lk, uk in zip(ls, us))
        norm_sq += 2.0 * cross + update * update
        ls.append(l)
        us.append(u)
        if hits >= 2:
            break

        remaining = np.where(used_rows, 0.0, np.abs(l))
        i = int(np.argmax(remaining)) if remaining.any() else None

    if not ls:
        out = zero_lowrank(m, n)
        return LowRank(out.left, out.right, degraded=degraded)
    out = LowRank(np.column_stack(ls), np.column_stack(us))
    if eps is not None and out.rank > 1:
        out = truncate(out, EpsRank(0.5 * eps))
    return LowRank(out.left, out.right, degraded=degraded)


def _eval_row(ls, us, i):
    if not ls:
        return 0.0
    coeff = np.array([l[i] for l in ls])
    return np.column_stack(us) @ coeff


def _eval_col(ls, us, j):
    if not ls:
        return 0.0
    coeff = np.array([u[j] for u in us])
    return np.column_stack(ls) @ coeff


def _reorth(basis, v):
    """Two-pass classical Gram-Schmidt of v against the given columns."""
    for _ in range(2):
        v = v - basis @ (basis.T @ v)
    return v


def bilanczos(map_, policy, seed=0, w0=None):
    """Golub-Kahan-Lanczos bidiagonalization of the map.

    Alternates products with the map and its transpose to build coupled
    orthonormal bases Q (left) and W (right) with an upper bidiagonal
    core, diagonalizes the core and recombines into factored form.  Each
    new basis vector is fully reorthogonalized for stability.

    The rows of the right factor are accumulated directly as
    alpha_r * w_r + beta_r * w_{r+1}, which equals the projection of the
    map onto the captured left basis; this keeps the result exact on
    that subspace even across restarts.  A vanishing left coupling
    restarts the recursion with a fresh random direction orthogonal to
    the current right basis; three consecutive empty probes certify that
    the range is captured.  The adaptive stop discards a step whose
    couplings are negligible against the accumulated core norm.
    """
    m, n = map_.shape
    k_cap = min(m, n)
    eps = _clamp_eps(policy.eps) if isinstance(policy, EpsRank) else None
    k_max = policy.k_max if isinstance(policy, FixedRank) else k_cap

    rng = np.random.default_rng(seed)
    qs, ws, rows = [], [], []
    norm_sq = 0.0
    probes = 0
    hits = 0

    if w0 is None:
        w = rng.standard_normal(n)
    else:
        w = np.array(w0, dtype=float)
    w /= np.linalg.norm(w)
    beta_prev = 0.0
    q_prev = np.zeros(m)

    while len(qs) < min(k_max, k_cap):
        q = map_.apply(w) - beta_prev * q_prev
        if qs:
            q = _reorth(np.column_stack(qs), q)
        alpha = np.linalg.norm(q)
        if alpha <= 1e-14 * max(np.sqrt(norm_sq), 1e-300):
            # breakdown: probe a fresh direction orthogonal to span(W)
            if probes >= 3 or len(ws) >= n:
                break
            probes += 1
            w = rng.standard_normal(n)
            if ws:
                w = _reorth(np.column_stack(ws), w)
            nw = np.linalg.norm(w)
            if nw == 0.0:
                break
            w /= nw
            beta_prev = 0.0
            continue

        if eps is not None and qs:
            update = np.hypot(alpha, beta_prev)
            if stop_criterion(np.array([update]), np.array([1.0]),
                              np.sqrt(max(norm_sq, 0.0)), eps):
                hits += 1
            else:
                hits = 0

        q /= alpha
        qs.append(q)
        ws.append(w)
        probes = 0

        w_next = map_.apply_transpose(q) - alpha * w
        w_next = _reorth(np.column_stack(ws), w_next)
        beta = np.linalg.norm(w_next)
        norm_sq += alpha * alpha + beta * beta
        if beta <= 1e-14 * np.sqrt(norm_sq):
            rows.append(alpha * w)  # invariant subspace, no tail coupling
            break
        w_next /= beta
        rows.append(alpha * w + beta * w_next)
        if hits >= 2:
            break
        q_prev = q
        beta_prev = beta
        w = w_next

    if not qs:
        return zero_lowrank(m, n)

    # exact SVD recombination of Q @ R with R the stacked rows
    qmat = np.column_stack(qs)
    rmat = np.row_stack(rows)
    uu, s, vvt = np.linalg.svd(rmat, full_matrices=False)
    r = select_rank(s, policy) if eps is not None else min(len(qs), len(s))
    left = (qmat @ uu[:, :r]) * s[:r]
    right = vvt[:r].T.copy()
    return LowRank(left, right)


def randomized_adaptive(map_, eps, seed):
    """Rank-adaptive randomized range approximation.

    Each step projects the image of a fresh Gaussian vector onto the
    orthogonal complement of the current range basis; the matching row
    of the right factor is one transpose product.  Because a single
    Gaussian probe can understate the remaining mass, the stopping rule
    must fire on two consecutive steps before the iteration ends.
    Deterministic for a fixed seed.
    """
    m, n = map_.shape
    eps = _clamp_eps(eps)
    rng = np.random.default_rng(seed)

    basis = np.zeros((m, 0))
    rows = []
    norm_sq = 0.0  # = ||U||_F^2 since the basis is orthonormal
    hits = 0

    for _ in range(min(m, n)):
        omega = rng.standard_normal(n)
        l = map_.apply(omega)
        l_orth = _reorth(basis, l)
        l_norm = np.linalg.norm(l_orth)
        if l_norm <= 1e-14 * max(np.sqrt(norm_sq), np.linalg.norm(l)):
            break  # image already captured
        l_hat = l_orth / l_norm
        u = map_.apply_transpose(l_hat)
        basis = np.column_stack([basis, l_hat])
        rows.append(u)
        norm_sq += float(np.dot(u, u))
        if len(rows) > 1 and stop_criterion(l_hat, u, np.sqrt(norm_sq), eps):
            hits += 1
            if hits >= 2:
                break
        else:
            hits = 0

    if not rows:
        return zero_lowrank(m, n)
    return LowRank(basis, np.column_stack(rows))


def _orthonormalize(a):
    q, _ = np.linalg.qr(a)
    return q


def randomized_fixed(map_, k, q=1, seed=0):
    """Blocked randomized rank-k approximation with q subspace iterations."""
    m, n = map_.shape
    if not 1 <= k <= min(m, n):
        raise ValueError(f"rank {k} out of range for shape {map_.shape}")
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((n, k))
    left = _orthonormalize(map_.apply_mat(omega))
    for _ in range(q):
        right = _orthonormalize(map_.apply_transpose_mat(left))
        left = _orthonormalize(map_.apply_mat(right))
    right = map_.apply_transpose_mat(left)
    return LowRank(left, right)


def dense_svd_compress(map_, policy):
    """Best-approximation reference: materialize, SVD, truncate."""
    a = map_.to_dense()
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if isinstance(policy, EpsRank):
        policy = EpsRank(_clamp_eps(policy.eps))
    r = select_rank(s, policy)
    return LowRank(u[:, :r] * s[:r], vt[:r].T.copy())


def compress(map_, policy, kind):
    """Run the scheme selected by a CompressorKind under the policy."""
    if kind.tag == "aca":
        return aca(map_, policy)
    if kind.tag == "bilanczos":
        return bilanczos(map_, policy, seed=kind.seed)
    if kind.tag == "randomized":
        if isinstance(policy, FixedRank):
            k = min(policy.k_max, *map_.shape)
            return randomized_fixed(map_, k, q=kind.q, seed=kind.seed)
        return randomized_adaptive(map_, policy.eps, seed=kind.seed)
    return dense_svd_compress(map_, policy)
