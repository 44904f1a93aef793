"""Low-rank preconditioner family for the Schur-complement / Newton systems.

Both solvers lead to systems with a matrix of the form

    H = sum_i  A_i' (Phi_i x Psi_i) A_i  +  (diagonal linear-block term),

where the per-block matrices develop a handful of outlying eigenvalues as the
solver converges.  Splitting each scaling matrix W = W0 + U U' at a threshold
tau separates the cluster from the outliers; approximating the clustered part
by a multiple of the identity (or of diag(A'A)) leaves a diagonal-plus-low-rank
preconditioner whose inverse is applied through the Sherman-Morrison-Woodbury
identity with a small factored inner Schur complement.

Kinds exposed to the drivers: alpha | beta | hybrid | tilde | gamma | delta |
none.  ``hybrid`` starts with beta and switches to alpha once the CG iteration
count justifies the setup cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .linalg import NotPositiveDefinite, chol, chol_solve, sym, sym_eig
from .model import SdpProblem


@dataclass
class SplitBlock:
    """Spectral split W = w0 + u u' of one scaling block.

    ``tau`` is the cluster threshold; ``u`` has the k outlier columns scaled
    by sqrt(lambda - tau).  ``eigs`` keeps the full ascending spectrum of W
    for the cheap scalar summaries the gamma/delta bases need.
    """

    w0: np.ndarray
    u: np.ndarray
    tau: float
    k: int
    eigs: np.ndarray
    degenerate: bool = False

    @property
    def dim(self) -> int:
        return self.w0.shape[0]

    def min_eig_w0(self) -> float:
        return float(min(self.eigs[0], self.tau))

    def mean_eig_w0(self) -> float:
        m = self.dim
        return float((self.eigs[: m - self.k].sum() + self.k * self.tau) / m)


def tau_cluster_mean(eigs: np.ndarray, k: int) -> float:
    """Cluster threshold lambda_1 + 0.5 * mean(lambda_1..lambda_{m-k})."""
    m = eigs.size
    if k >= m:
        raise ValueError("rank hint must be smaller than the block dimension")
    return float(eigs[0] + 0.5 * np.mean(eigs[: m - k]))


def tau_min_eig(eigs: np.ndarray, k: int) -> float:
    """Alternative threshold: the smallest eigenvalue itself."""
    return float(eigs[0])


TAU_RULES: dict[str, Callable[[np.ndarray, int], float]] = {
    "cluster_mean": tau_cluster_mean,
    "min": tau_min_eig,
}


def detect_rank(eigs: np.ndarray) -> int:
    """Outlier count for auto rank detection.

    The cluster boundary is the largest relative gap in the sorted spectrum
    when that gap exceeds 100x (a median-based count fails when fewer than
    half the eigenvalues belong to the cluster); without such a gap, fall
    back to counting eigenvalues above 100x the median.
    """
    m = eigs.size
    if m < 2:
        return 0
    ratios = eigs[1:] / np.maximum(eigs[:-1], 1e-300)
    i = int(np.argmax(ratios))
    if ratios[i] >= 100.0:
        return min(m - 1 - i, m - 1)
    k = int(np.sum(eigs > 100.0 * np.median(eigs)))
    return min(k, m - 1)


def spectral_split(
    w: np.ndarray, k: int | str, tau_rule: str | float = "cluster_mean"
) -> SplitBlock:
    """Split a positive definite scaling matrix into cluster + rank-k part.

    ``k`` may be "auto" to derive the outlier count from the spectrum.  When
    the requested tau exceeds the largest cluster eigenvalue the split is
    degenerate; tau is pulled just below it so the decomposition identity
    still holds exactly.
    """
    m = w.shape[0]
    lam, q = sym_eig(w)
    if k == "auto":
        k = detect_rank(lam)
    if k >= m:
        raise ValueError(f"rank hint k={k} must be < block dim {m}")
    if isinstance(tau_rule, str):
        tau = TAU_RULES[tau_rule](lam, k)
    else:
        tau = float(tau_rule)
    lam_edge = lam[m - k - 1]  # largest eigenvalue kept in the cluster
    degenerate = tau > lam_edge
    if degenerate:
        tau = lam_edge * (1.0 - 1e-8)
    q_top = q[:, m - k :]
    u = q_top * np.sqrt(np.maximum(lam[m - k :] - tau, 0.0))
    w0_eigs = np.concatenate([lam[: m - k], np.full(k, tau)])
    w0 = sym((q * w0_eigs) @ q.T)
    return SplitBlock(w0, u, tau, k, lam, degenerate)


def low_rank_factor(a_op: sp.csr_matrix, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Columns A'(vec of outer(left[:,a], right[:,b])) for all (a, b).

    ``left`` is the m x k tall outlier factor, ``right`` a full m x m factor;
    the result is the n x (k m) low-rank block of the preconditioner.
    """
    m = right.shape[0]
    k = left.shape[1]
    cols = []
    at = a_op.T.tocsr()
    for a in range(k):
        block = np.kron(left[:, a : a + 1], right)  # (m^2, m)
        cols.append(at @ block)
    if not cols:
        return np.zeros((a_op.shape[1], 0))
    return np.hstack(cols)


@dataclass
class SmwPreconditioner:
    """base + V V' preconditioner applied through the SMW identity.

    ``base_solve`` applies the inverse of the base (diagonal or factored);
    ``theta_l`` is the Cholesky factor of Theta = I + V' base^{-1} V.
    """

    kind: str
    base_solve: Callable[[np.ndarray], np.ndarray]
    v: np.ndarray
    binv_v: np.ndarray
    theta_l: np.ndarray
    a_diag: np.ndarray | None = None
    base_dense: np.ndarray | None = None

    @property
    def rank(self) -> int:
        return int(self.v.shape[1])

    def apply_inv(self, x: np.ndarray) -> np.ndarray:
        t = self.base_solve(x)
        if self.rank == 0:
            return t
        s = chol_solve(self.theta_l, self.v.T @ t)
        return t - self.binv_v @ s

    def dense(self) -> np.ndarray:
        """Dense assembly base + V V' (diagnostic sizes only)."""
        if self.base_dense is not None:
            b = self.base_dense.copy()
        elif self.a_diag is not None:
            b = np.diag(self.a_diag)
        else:
            raise ValueError("no dense base available")
        if self.rank:
            b = b + self.v @ self.v.T
        return b


def _smw_from_diag(kind: str, a_diag: np.ndarray, v: np.ndarray) -> SmwPreconditioner:
    if np.any(a_diag <= 0.0):
        raise ValueError(f"{kind}: nonpositive base diagonal entry")
    binv_v = v / a_diag[:, None] if v.size else v
    theta = np.eye(v.shape[1]) + v.T @ binv_v
    theta_l = chol(theta, f"{kind} inner Schur complement")
    return SmwPreconditioner(
        kind=kind,
        base_solve=lambda x: x / a_diag,
        v=v,
        binv_v=binv_v,
        theta_l=theta_l,
        a_diag=a_diag,
    )


def build_h_alpha(
    prob: SdpProblem, splits: Sequence[SplitBlock], lin_diag: np.ndarray | None
) -> SmwPreconditioner:
    """Diagonal-plus-low-rank preconditioner from the scaling splits.

    Base: sum_i tau_i^2 I + diag(linear term).  Low-rank part: per block
    A_i'(U_i x Gamma_i) with Gamma_i Gamma_i' = 2 W_i^0 + U_i U_i'.
    A factorization failure (stale split) propagates NotPositiveDefinite so
    the caller can refresh the split or fall back to beta.
    """
    n = prob.n
    a_diag = np.full(n, sum(s.tau**2 for s in splits))
    if lin_diag is not None:
        a_diag = a_diag + lin_diag
    cols = []
    for a_op, s in zip(prob.A, splits):
        gamma = chol(2.0 * s.w0 + s.u @ s.u.T, "alpha block factor")
        cols.append(low_rank_factor(a_op, s.u, gamma))
    v = np.hstack(cols) if cols else np.zeros((n, 0))
    return _smw_from_diag("alpha", a_diag, v)


def build_h_beta(
    splits: Sequence[SplitBlock], lin_diag: np.ndarray | None, n: int
) -> SmwPreconditioner:
    """Diagonal-only simplification: sum tau_i^2 + linear diagonal."""
    a_diag = np.full(n, sum(s.tau**2 for s in splits))
    if lin_diag is not None:
        a_diag = a_diag + lin_diag
    return _smw_from_diag("beta", a_diag, np.zeros((n, 0)))


def build_h_tilde(
    prob: SdpProblem,
    splits: Sequence[SplitBlock],
    lin_diag: np.ndarray | None,
    dense_limit: int = 4000,
) -> SmwPreconditioner:
    """Variant with base sum tau_i^2 A_i'A_i + diag(linear term).

    The base is no longer diagonal and must be factored once per build; on
    problems where A'A has no convenient structure this is exactly the cost
    the alpha variant avoids.  Refuses n beyond ``dense_limit``.
    """
    n = prob.n
    if n > dense_limit:
        raise ValueError(
            f"tilde base factorization refused for n={n} > {dense_limit}: "
            "A'A is not cheaply invertible at this size"
        )
    base = np.zeros((n, n))
    for a_op, s in zip(prob.A, splits):
        gram = (a_op.T @ a_op).toarray()
        base += s.tau**2 * gram
    if lin_diag is not None:
        base[np.diag_indices(n)] += lin_diag
    try:
        base_l = chol(base, "tilde base")
    except NotPositiveDefinite as exc:
        # the defining assumption (cheaply invertible A'A base) failed
        raise ValueError(f"tilde base factorization failed: {exc}") from exc
    cols = []
    for a_op, s in zip(prob.A, splits):
        gamma = chol(2.0 * s.w0 + s.u @ s.u.T, "tilde block factor")
        cols.append(low_rank_factor(a_op, s.u, gamma))
    v = np.hstack(cols) if cols else np.zeros((n, 0))
    binv_v = chol_solve(base_l, v) if v.size else v
    theta = np.eye(v.shape[1]) + v.T @ binv_v
    theta_l = chol(theta, "tilde inner Schur complement")
    return SmwPreconditioner(
        kind="tilde",
        base_solve=lambda x: chol_solve(base_l, x),
        v=v,
        binv_v=binv_v,
        theta_l=theta_l,
        base_dense=base,
    )


def column_norms_sq(a_op: sp.csr_matrix) -> np.ndarray:
    """diag(A'A): squared Frobenius norms of the per-variable matrices."""
    return np.asarray(a_op.multiply(a_op).sum(axis=0)).ravel()


def build_h_gamma(
    prob: SdpProblem,
    w_splits: Sequence[SplitBlock],
    v_mats: Sequence[np.ndarray],
    h_lin_diag: np.ndarray,
) -> SmwPreconditioner:
    """Augmented-Lagrangian preconditioner: only the multiplier-side scaling
    W is split; the companion matrices V (eigenvalues in (0,1] at feasible
    points) enter whole through their Cholesky factors.

    Base: h_lin_diag + sum_i tau1_i tau2_i diag(A_i'A_i) with tau1 = 10 *
    lambda_min(W_i^0) and tau2 the mean eigenvalue of V_i.  The factor 2 of
    the Hessian is carried in the low-rank columns.
    """
    n = prob.n
    a_diag = h_lin_diag.astype(float).copy()
    cols = []
    for a_op, s, v_mat in zip(prob.A, w_splits, v_mats):
        tau1 = 10.0 * s.min_eig_w0()
        tau2 = float(np.trace(v_mat)) / v_mat.shape[0]
        a_diag += tau1 * tau2 * column_norms_sq(a_op)
        delta = chol(sym(v_mat), "gamma companion factor")
        cols.append(math.sqrt(2.0) * low_rank_factor(a_op, s.u, delta))
    v = np.hstack(cols) if cols else np.zeros((n, 0))
    return _smw_from_diag("gamma", a_diag, v)


def build_h_delta(
    prob: SdpProblem,
    w_splits: Sequence[SplitBlock],
    v_splits: Sequence[SplitBlock],
    h_lin_diag: np.ndarray,
) -> SmwPreconditioner:
    """Augmented-Lagrangian preconditioner with both factors split.

    Low-rank part stacks (W-outliers x Theta_i) and (V-outliers x Gamma_i)
    with Gamma_i Gamma_i' = W_i^0 + 0.5 U_i^W (U_i^W)' and Theta_i Theta_i' =
    V_i^0 + 0.5 U_i^V (U_i^V)'.  With no V outliers it degenerates to the
    gamma structure.
    """
    n = prob.n
    a_diag = h_lin_diag.astype(float).copy()
    cols = []
    for a_op, sw, sv in zip(prob.A, w_splits, v_splits):
        tau1 = 10.0 * sw.min_eig_w0()
        tau2 = sv.mean_eig_w0()
        a_diag += tau1 * tau2 * column_norms_sq(a_op)
        gamma = chol(sw.w0 + 0.5 * sw.u @ sw.u.T, "delta W factor")
        theta = chol(sv.w0 + 0.5 * sv.u @ sv.u.T, "delta V factor")
        root2 = math.sqrt(2.0)
        if sw.k:
            cols.append(root2 * low_rank_factor(a_op, sw.u, theta))
        if sv.k:
            cols.append(root2 * low_rank_factor(a_op, sv.u, gamma))
    v = np.hstack(cols) if cols else np.zeros((n, 0))
    return _smw_from_diag("delta", a_diag, v)


def hybrid_should_switch(
    n: int, p: int, k: int, iter_index: int, last_cg_count: int
) -> bool:
    """Heuristic for trading the cheap diagonal preconditioner for the
    low-rank one: CG count grew past k p sqrt(n)/10 and the outer iteration
    index past sqrt(n)/60."""
    return last_cg_count > k * p * math.sqrt(n) / 10.0 and iter_index > math.sqrt(n) / 60.0


# ---------------------------------------------------------------------------
# Dense diagnostics (n <= 400): conditioning of the preconditioned operator
# and the split-approximation bound it must respect.
# ---------------------------------------------------------------------------


def dense_sandwich(a_op: sp.csr_matrix, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Dense A'(left x right)A; small problems only."""
    kron = np.kron(left, right)
    a_dense = a_op.toarray()
    return a_dense.T @ kron @ a_dense


def inv_sqrt(mat: np.ndarray) -> np.ndarray:
    lam, q = sym_eig(mat)
    if lam[0] <= 0:
        raise NotPositiveDefinite(0, "inverse square root")
    return (q / np.sqrt(lam)) @ q.T


@dataclass
class ConditioningReport:
    kappa_raw: float
    kappa_preconditioned: float
    bound: float
    eps_hi: list[float]
    eps_lo: list[float]


def conditioning_report(
    h_dense: np.ndarray,
    precond: SmwPreconditioner,
    block_terms: Sequence[np.ndarray],
    block_approx: Sequence[np.ndarray],
) -> ConditioningReport:
    """Measured condition numbers against the split-approximation bound.

    ``block_terms`` are the exact per-block contributions B_i that the
    preconditioner approximates by ``block_approx`` (for alpha: the clustered
    sandwich A'(W0 x W0)A versus tau^2 I).  The bound is
    (1 + sum eps_hi) / (1 + sum eps_lo) with eps the extreme eigenvalues of
    P^{-1/2}(B_i - Btilde_i)P^{-1/2}.
    """
    p_dense = precond.dense()
    pih = inv_sqrt(p_dense)
    m_pre = sym(pih @ h_dense @ pih)
    lam_pre = np.linalg.eigvalsh(m_pre)
    lam_h = np.linalg.eigvalsh(sym(h_dense))
    eps_hi, eps_lo = [], []
    for b, bt in zip(block_terms, block_approx):
        e = np.linalg.eigvalsh(sym(pih @ (b - bt) @ pih))
        eps_hi.append(float(e[-1]))
        eps_lo.append(float(e[0]))
    denom = 1.0 + sum(eps_lo)
    bound = math.inf if denom <= 0 else (1.0 + sum(eps_hi)) / denom
    return ConditioningReport(
        kappa_raw=float(lam_h[-1] / lam_h[0]),
        kappa_preconditioned=float(lam_pre[-1] / lam_pre[0]),
        bound=bound,
        eps_hi=eps_hi,
        eps_lo=eps_lo,
    )
