"""Primal-dual augmented Lagrangian solver with penalty rescaling.

The dual problem max b'y with A0(y) - C <= 0 and D y <= d is solved by
minimizing the generalized augmented Lagrangian

    F(y) = -b'y + r/2 ||y - y_prox||^2 + sum_i X_i . Phi_pi(A0_i(y) - C_i)
         + sum_j x_j phi_pi((D y - d)_j),

where Phi/phi are penalty rescalings that vanish at the constraint boundary
and blow up as the argument approaches the penalty parameter pi.  LMI blocks
use the hyperbolic penalty t -> t / (1 - t), whose matrix lift needs only the
resolvent Z = (pi I - A)^{-1} and admits the closed multiplier update
Xbar = pi^2 Z X Z; box rows use the quadratic-extrapolated logarithm.

Each outer iteration solves the stationarity condition as a primal-dual
system in (y, X) by damped Newton steps; the n x n Newton matrix (the
Hessian of F) is applied matrix-free and solved by PCG with the gamma/delta
preconditioners.  An early-stopping rule hands control back to the outer
loop as soon as the combined primal-dual error halves, which near the
solution reduces the inner loop to a single Newton step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve

from . import precond as pc
from .ip import SolverFailure
from .linalg import NotPositiveDefinite, chol, is_pd, sym, vec
from .model import (
    BlockSymMatrix,
    PrimalDualPoint,
    SdpProblem,
    apply_A,
    apply_A_adjoint,
    data_inf_norms,
    dimacs,
    dual_slack,
    objective_values,
)
from .pcg import CgTolerance, next_tolerance, pcg_solve
from .report import SolveReport, spectrum_summary


class InnerCgFailure(RuntimeError):
    """PCG failed inside an inner Newton solve."""


class DomainViolation(Exception):
    """Penalty argument left the domain; the caller must shrink the step or
    enlarge the penalty parameter."""


@dataclass(frozen=True)
class PenaltyFn:
    """Scalar penalty: increasing, convex, value 0 and slope 1 at 0.

    qlog is the logarithm -log(1-t) extrapolated twice-differentiably by its
    quadratic Taylor polynomial beyond tau_q; tau_q >= 1 disables the
    extrapolation (pure barrier with domain t < 1).  hyperbolic is
    t / (1 - t) with domain t < 1 and is the function lifted to matrix
    arguments for the LMI blocks.
    """

    kind: str = "qlog"
    tau_q: float = 0.9


def penalty_eval(fn: PenaltyFn, t, pi: float):
    """(value, first, second derivative) of the scaled penalty pi*phi(t/pi).

    Vectorized over t.  Raises DomainViolation outside the domain.
    """
    t = np.asarray(t, dtype=float)
    s = t / pi
    if fn.kind == "hyperbolic":
        if np.any(s >= 1.0):
            raise DomainViolation("hyperbolic penalty argument >= pi")
        denom = 1.0 - s
        return pi * s / denom, 1.0 / denom**2, 2.0 / (pi * denom**3)
    if fn.kind != "qlog":
        raise ValueError(f"unknown penalty kind {fn.kind!r}")
    tau = fn.tau_q
    if tau >= 1.0:
        if np.any(s >= 1.0):
            raise DomainViolation("log barrier argument >= pi")
        denom = 1.0 - s
        return -pi * np.log(denom), 1.0 / denom, 1.0 / (pi * denom**2)
    log_mask = s <= tau
    denom = np.where(log_mask, 1.0 - s, 1.0)
    l1 = 1.0 / (1.0 - tau)
    ds = np.where(log_mask, 0.0, s - tau)
    val = np.where(
        log_mask,
        -np.log(denom),
        -np.log(1.0 - tau) + l1 * ds + 0.5 * l1**2 * ds**2,
    )
    d1 = np.where(log_mask, 1.0 / denom, l1 + l1**2 * ds)
    d2 = np.where(log_mask, 1.0 / denom**2, l1**2)
    return pi * val, d1, d2 / pi


def z_matrix(a_lmi: np.ndarray, pi: float) -> np.ndarray:
    """Resolvent Z = (pi I - A)^{-1}; positive definite iff A < pi I."""
    m = a_lmi.shape[0]
    try:
        l = chol(pi * np.eye(m) - a_lmi, "penalty resolvent")
    except NotPositiveDefinite as exc:
        raise DomainViolation("largest constraint eigenvalue reached pi") from exc
    return sym(cho_solve((l, True), np.eye(m)))


def multiplier_update_lmi(z: np.ndarray, x: np.ndarray, pi: float) -> np.ndarray:
    """Closed-form multiplier update pi^2 Z X Z; positive definite for
    positive definite inputs."""
    return sym(pi**2 * z @ x @ z)


def multiplier_update_lin(t_lin: np.ndarray, x_lin: np.ndarray, pi: float, fn: PenaltyFn) -> np.ndarray:
    """Componentwise update x_j phi'_pi((D y - d)_j)."""
    _, d1, _ = penalty_eval(fn, t_lin, pi)
    return x_lin * d1


@dataclass
class PdalConfig:
    """Algorithmic parameters; the tru/vib columns of the parameter table
    are available through :func:`pdal_config_profile`."""

    pi_lin_min: float = 1e-9
    pi_lmi_min: float = 1e-5
    pi_lin_upd: float = 0.5
    pi_lmi_upd: float = 0.5
    gamma_lin: float = 0.5
    gamma_lmi: float = 0.5
    r: float = 0.01
    eps: float = 1e-6              # outer primal-dual error target
    eps_dimacs: float = 1e-5
    qlog_tau: float = 0.5          # box-penalty extrapolation point
    rank: int | list[int] | str = 1  # outlier count per block, or "auto"
    precond: str = "gamma"
    tau_rule: str = "cluster_mean"
    cg_tol: CgTolerance = field(default_factory=CgTolerance)
    cg_maxiter: int = 100000
    max_outer: int = 500
    max_inner: int = 100
    inner_eps0: float = 1e-2
    inner_eps_decay: float = 0.3
    inner_eps_min: float = 1e-14
    armijo: float = 0.05
    ls_max_halvings: int = 40
    diag: bool = False
    diag_limit: int = 400

    def __post_init__(self):
        if not (0.0 < self.pi_lin_upd < 1.0 and 0.0 < self.pi_lmi_upd < 1.0):
            raise ValueError("penalty decrease factors must lie in (0, 1)")
        if not (0.0 <= self.gamma_lin <= 1.0 and 0.0 <= self.gamma_lmi <= 1.0):
            raise ValueError("multiplier damping factors must lie in [0, 1]")
        if self.pi_lin_min <= 0 or self.pi_lmi_min <= 0:
            raise ValueError("penalty floors must be positive")

    def lin_penalty(self) -> PenaltyFn:
        return PenaltyFn("qlog", self.qlog_tau)


def pdal_config_profile(profile: str, **overrides) -> PdalConfig:
    """Parameter presets: 'tru' (box penalty extrapolated at 0.5) and 'vib'
    (pure box barrier, slower penalty decay, undamped linear multipliers).

    The vib floor pi_lin_min is kept at 1e-6 rather than the nominal 1e-11:
    with a pure barrier the inner Newton needs the active box slacks resolved
    to O(pi_lin), which float64 cannot deliver much below 1e-8."""
    if profile == "tru":
        cfg = PdalConfig()
    elif profile == "vib":
        cfg = PdalConfig(
            pi_lin_min=1e-6,
            pi_lin_upd=0.3,
            pi_lmi_upd=0.3,
            gamma_lin=1.0,
            gamma_lmi=0.8,
            qlog_tau=1.0,
        )
    else:
        raise ValueError(f"unknown profile {profile!r}")
    return replace(cfg, **overrides)


@dataclass
class OuterCtx:
    """Quantities frozen during one inner solve: proximal center, multiplier
    estimates and penalty parameters."""

    prob: SdpProblem
    y_prox: np.ndarray
    x_blocks: list[np.ndarray]
    x_lin: np.ndarray
    pi_lmi: float
    pi_lin: float
    r: float
    fn_lin: PenaltyFn

    @property
    def b_min(self) -> np.ndarray:
        return -self.prob.b


@dataclass
class PointEval:
    """Penalty state at a trial point y: resolvents, updated multipliers and
    the gradient of the augmented Lagrangian."""

    y: np.ndarray
    a_blocks: list[np.ndarray]     # A0_i(y) - C_i
    z_blocks: list[np.ndarray]
    xbar_blocks: list[np.ndarray]  # pi^2 Z X Z
    t_lin: np.ndarray              # D y - d
    xbar_lin: np.ndarray
    wbar_lin: np.ndarray           # x phi''_pi, the linear Hessian weights
    grad: np.ndarray


def evaluate_point(ctx: OuterCtx, y: np.ndarray) -> PointEval:
    prob = ctx.prob
    ay = apply_A_adjoint(prob, y)
    a_blocks = [ay.blocks[i] - prob.c_dense(i) for i in range(prob.p)]
    z_blocks = [z_matrix(a, ctx.pi_lmi) for a in a_blocks]
    xbar_blocks = [
        multiplier_update_lmi(z, x, ctx.pi_lmi)
        for z, x in zip(z_blocks, ctx.x_blocks)
    ]
    t_lin = ay.lin - prob.d
    _, d1, d2 = penalty_eval(ctx.fn_lin, t_lin, ctx.pi_lin)
    xbar_lin = ctx.x_lin * d1
    wbar_lin = ctx.x_lin * d2
    grad = ctx.b_min + ctx.r * (y - ctx.y_prox)
    for a_op, xbar in zip(prob.A, xbar_blocks):
        grad = grad + a_op.T @ vec(xbar)
    grad = grad + prob.D.T @ xbar_lin
    return PointEval(y, a_blocks, z_blocks, xbar_blocks, t_lin, xbar_lin, wbar_lin, grad)


def aug_lagrangian_value(ctx: OuterCtx, y: np.ndarray) -> float:
    """F(y); only needed by derivative checks, the solver works with grad."""
    prob = ctx.prob
    ay = apply_A_adjoint(prob, y)
    val = float(ctx.b_min @ y) + 0.5 * ctx.r * float(np.sum((y - ctx.y_prox) ** 2))
    for i in range(prob.p):
        a = ay.blocks[i] - prob.c_dense(i)
        z = z_matrix(a, ctx.pi_lmi)
        val += ctx.pi_lmi**2 * float(np.tensordot(ctx.x_blocks[i], z))
        val -= ctx.pi_lmi * float(np.trace(ctx.x_blocks[i]))
    v, _, _ = penalty_eval(ctx.fn_lin, ay.lin - prob.d, ctx.pi_lin)
    val += float(ctx.x_lin @ v)
    return val


def hessian_matvec(ctx: OuterCtx, ev: PointEval, dy: np.ndarray) -> np.ndarray:
    """(r I + 2 sum_i A_i'(Xbar_i x Z_i) A_i + D' Wbar D) dy, matrix-free."""
    prob = ctx.prob
    out = ctx.r * dy + prob.D.T @ (ev.wbar_lin * (prob.D @ dy))
    for a_op, xbar, z in zip(prob.A, ev.xbar_blocks, ev.z_blocks):
        m = xbar.shape[0]
        mat = np.asarray(a_op @ dy).reshape(m, m)
        out = out + a_op.T @ vec(xbar @ mat @ z + z @ mat @ xbar)
    return out


def pd_residuals(
    ctx: OuterCtx, ev: PointEval, x_hat: BlockSymMatrix
) -> tuple[np.ndarray, BlockSymMatrix]:
    """G1 = grad of the Lagrangian part at (y, Xhat); G2 = Xhat - Xbar(y)."""
    prob = ctx.prob
    g1 = ctx.b_min + ctx.r * (ev.y - ctx.y_prox)
    for a_op, xb in zip(prob.A, x_hat.blocks):
        g1 = g1 + a_op.T @ vec(xb)
    g1 = g1 + prob.D.T @ x_hat.lin
    g2 = BlockSymMatrix(
        [x_hat.blocks[i] - ev.xbar_blocks[i] for i in range(prob.p)],
        x_hat.lin - ev.xbar_lin,
    )
    return g1, g2


def merit(g1: np.ndarray, g2: BlockSymMatrix) -> float:
    return 0.5 * (float(g1 @ g1) + g2.dot(g2))


def merit_dderiv(
    ctx: OuterCtx,
    ev: PointEval,
    g1: np.ndarray,
    g2: BlockSymMatrix,
    dy: np.ndarray,
    dx: BlockSymMatrix,
) -> float:
    """Directional derivative of the merit function along (dy, dx).

    dG2 = -G2 holds exactly by construction of dx; dG1 picks up the PCG
    residual, so it is evaluated honestly from the Jacobian.
    """
    prob = ctx.prob
    dg1 = ctx.r * dy
    for a_op, b in zip(prob.A, dx.blocks):
        dg1 = dg1 + a_op.T @ vec(b)
    dg1 = dg1 + prob.D.T @ dx.lin
    return float(g1 @ dg1) - g2.dot(g2)


def newton_direction(
    ctx: OuterCtx,
    ev: PointEval,
    x_hat: BlockSymMatrix,
    g2: BlockSymMatrix,
    dy: np.ndarray,
) -> BlockSymMatrix:
    """dX = -G2 + linearized multiplier change along dy (exact given dy)."""
    prob = ctx.prob
    ady = apply_A_adjoint(prob, dy)
    blocks = []
    for i in range(prob.p):
        t = ev.xbar_blocks[i] @ ady.blocks[i] @ ev.z_blocks[i]
        blocks.append(-g2.blocks[i] + t + t.T)
    lin = -g2.lin + ev.wbar_lin * ady.lin
    return BlockSymMatrix(blocks, lin)


def pd_error(prob: SdpProblem, y: np.ndarray, x: BlockSymMatrix) -> float:
    """max of primal feasibility, dual cone violation and normalized gap."""
    bnorm, cnorm = data_inf_norms(prob)
    pf = float(np.linalg.norm(prob.b - apply_A(prob, x))) / (1.0 + bnorm)
    slack = dual_slack(prob, y)
    viol = 0.0
    for blk in slack.blocks:
        viol = max(viol, -float(np.linalg.eigvalsh(sym(blk))[0]))
    if slack.lin is not None and slack.lin.size:
        viol = max(viol, -float(slack.lin.min()))
    df = max(0.0, viol) / (1.0 + cnorm)
    pobj, dobj = objective_values(prob, PrimalDualPoint(y, x, slack))
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return max(pf, df, gap)


def _block_pd(x: BlockSymMatrix, tol: float = 0.0) -> bool:
    """Positive (semi)definiteness of the multiplier candidate.

    The stopping tests pass a small relative tolerance: at the merit's
    float64 floor the candidate carries harmless round-off negativity, and
    inactive-bound multipliers legitimately underflow to zero.
    """
    for b in x.blocks:
        if tol > 0.0:
            floor = -tol * max(1.0, float(np.abs(b).max()))
            if float(np.linalg.eigvalsh(sym(b))[0]) < floor:
                return False
        elif not is_pd(b):
            return False
    if x.lin is not None and x.lin.size:
        floor = -tol * max(1.0, float(np.abs(x.lin).max())) if tol > 0.0 else 0.0
        if x.lin.min() < floor:
            return False
    return True


def _pdal_preconditioner(ctx: OuterCtx, ev: PointEval, cfg: PdalConfig, ranks: list[int]):
    kind = cfg.precond
    if kind == "none":
        return None
    prob = ctx.prob
    h_lin_diag = ctx.r + np.asarray(
        prob.D.multiply(prob.D).T @ ev.wbar_lin
    ).ravel()
    w_mats = [xb / ctx.pi_lmi for xb in ev.xbar_blocks]
    v_mats = [ctx.pi_lmi * z for z in ev.z_blocks]
    w_splits = [pc.spectral_split(w, k, cfg.tau_rule) for w, k in zip(w_mats, ranks)]
    if kind in ("alpha", "gamma", "hybrid"):
        # alpha/hybrid are interior-point vocabulary; the Lagrangian analog
        # of the low-rank kind is gamma
        try:
            return pc.build_h_gamma(prob, w_splits, v_mats, h_lin_diag)
        except NotPositiveDefinite:
            kind = "beta"
    if kind == "delta":
        v_splits = [pc.spectral_split(v, k, cfg.tau_rule) for v, k in zip(v_mats, ranks)]
        try:
            return pc.build_h_delta(prob, w_splits, v_splits, h_lin_diag)
        except NotPositiveDefinite:
            kind = "beta"
    if kind == "tilde":
        try:
            return pc.build_h_tilde(prob, w_splits, h_lin_diag)
        except NotPositiveDefinite:
            kind = "beta"
    if kind == "beta":
        a_diag = h_lin_diag.copy()
        for a_op, s, v_mat in zip(prob.A, w_splits, v_mats):
            tau2 = float(np.trace(v_mat)) / v_mat.shape[0]
            a_diag += 10.0 * s.min_eig_w0() * tau2 * pc.column_norms_sq(a_op)
        return pc.SmwPreconditioner(
            kind="beta",
            base_solve=lambda xx: xx / a_diag,
            v=np.zeros((prob.n, 0)),
            binv_v=np.zeros((prob.n, 0)),
            theta_l=np.zeros((0, 0)),
            a_diag=a_diag,
        )
    raise ValueError(f"unknown preconditioner kind {cfg.precond!r}")


@dataclass
class InnerResult:
    y: np.ndarray
    x: BlockSymMatrix
    iterations: int
    cg_iterations: int
    merit: float
    early_stop: bool
    converged: bool
    line_search_failures: int = 0


def inner_solve(
    ctx: OuterCtx,
    y0: np.ndarray,
    x0: BlockSymMatrix,
    eps_inner: float,
    cfg: PdalConfig,
    cg_tol: float,
    ranks: list[int],
    e_outer: float,
    diagnostics: list[dict] | None = None,
    outer_index: int = 0,
) -> InnerResult:
    """Damped Newton on the primal-dual stationarity system.

    Stops when the merit drops below eps_inner with a positive definite
    multiplier, or when the early-stopping conjunction (outer error halved,
    both residuals small, multiplier positive definite) fires.
    """
    prob = ctx.prob
    y = y0.copy()
    x_hat = x0.copy()
    ev = evaluate_point(ctx, y)
    cg_total = 0
    ls_failures = 0

    for ell in range(cfg.max_inner):
        g1, g2 = pd_residuals(ctx, ev, x_hat)
        m_val = merit(g1, g2)
        if m_val <= eps_inner and _block_pd(x_hat, tol=1e-10):
            return InnerResult(y, x_hat, ell, cg_total, m_val, False, True, ls_failures)
        if ell > 0:
            e_now = pd_error(prob, y, x_hat)
            g2n = g2.dot(g2)
            g1n = float(g1 @ g1)
            if (
                e_now < 0.5 * e_outer
                and g2n < 0.1
                and g1n < 0.05 * max(1.0, float(np.linalg.norm(ev.grad)))
                and _block_pd(x_hat, tol=1e-10)
            ):
                return InnerResult(y, x_hat, ell, cg_total, m_val, True, True, ls_failures)

        prec = _pdal_preconditioner(ctx, ev, cfg, ranks)
        prec_apply = prec.apply_inv if prec is not None else None
        if diagnostics is not None and prob.n <= cfg.diag_limit:
            diagnostics.append(
                _dense_hessian_record(ctx, ev, outer_index, ell)
            )
        op = lambda v: hessian_matvec(ctx, ev, v)  # noqa: E731
        dy, rep = pcg_solve(op, prec_apply, -ev.grad, tol=cg_tol, maxiter=cfg.cg_maxiter)
        cg_total += rep.iterations
        if rep.failed and not (rep.stagnated and rep.relres <= 0.1):
            # stagnation at the float64 residual floor still yields a usable
            # direction; everything else aborts the solve
            raise InnerCgFailure(
                f"inner Newton CG failed (outer {outer_index}, inner {ell}, "
                f"breakdown={rep.breakdown})"
            )
        dx = newton_direction(ctx, ev, x_hat, g2, dy)

        slope = merit_dderiv(ctx, ev, g1, g2, dy, dx)
        if slope >= 0:
            slope = 0.0
        alpha = 1.0
        accepted = False
        for _ in range(cfg.ls_max_halvings):
            try:
                ev_trial = evaluate_point(ctx, y + alpha * dy)
            except DomainViolation:
                alpha *= 0.5
                continue
            x_trial = x_hat + alpha * dx
            g1t, g2t = pd_residuals(ctx, ev_trial, x_trial)
            if merit(g1t, g2t) <= m_val + cfg.armijo * alpha * slope:
                y = ev_trial.y
                x_hat = x_trial
                ev = ev_trial
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # step collapsed below ~1e-12 (merit at its float64 floor): hand
            # the best point back so the outer loop can refresh multipliers
            ls_failures += 1
            g1, g2 = pd_residuals(ctx, ev, x_hat)
            m_best = merit(g1, g2)
            ok = m_best <= eps_inner and _block_pd(x_hat, tol=1e-10)
            return InnerResult(
                y, x_hat, ell + 1, cg_total, m_best, False, ok, ls_failures
            )

    g1, g2 = pd_residuals(ctx, ev, x_hat)
    return InnerResult(y, x_hat, cfg.max_inner, cg_total, merit(g1, g2), False, False, ls_failures)


def _dense_hessian_record(ctx: OuterCtx, ev: PointEval, outer: int, inner: int) -> dict:
    prob = ctx.prob
    h = ctx.r * np.eye(prob.n) + (
        prob.D.T @ sp.diags(ev.wbar_lin) @ prob.D
    ).toarray()
    for a_op, xbar, z in zip(prob.A, ev.xbar_blocks, ev.z_blocks):
        h += 2.0 * pc.dense_sandwich(a_op, xbar, z)
    lam = np.linalg.eigvalsh(sym(h))
    return {
        "outer": outer,
        "inner": inner,
        "hessian_min_eig": float(lam[0]),
        "hessian_max_eig": float(lam[-1]),
        "r": ctx.r,
    }


def penalty_update(
    pi_lin: float, pi_lmi: float, cfg: PdalConfig, lam_max_lmi: float, t_lin_max: float
) -> tuple[float, float]:
    """Penalty decrease with the domain guards: the LMI penalty stays above
    the largest constraint eigenvalue, and a pure box barrier additionally
    keeps the box rows inside its domain."""
    new_lin = max(cfg.pi_lin_min, cfg.pi_lin_upd * pi_lin)
    if cfg.qlog_tau >= 1.0 and t_lin_max > 0:
        new_lin = max(new_lin, 1.01 * t_lin_max)
    new_lmi = max(cfg.pi_lmi_min, cfg.pi_lmi_upd * pi_lmi, 1.01 * lam_max_lmi)
    return new_lin, new_lmi


def pdal_solve(prob: SdpProblem, config: PdalConfig | None = None) -> tuple[PrimalDualPoint, SolveReport]:
    """Outer loop: inner primal-dual solve, damped multiplier update, penalty
    decrease, until the primal-dual error or the DIMACS measures converge."""
    cfg = config or PdalConfig()
    t0 = time.perf_counter()
    n = prob.n
    fn_lin = cfg.lin_penalty()
    if cfg.rank == "auto":
        ranks: list[int | str] = ["auto"] * prob.p
    else:
        ranks = [cfg.rank] * prob.p if isinstance(cfg.rank, int) else list(cfg.rank)
        ranks = [min(max(0, k), m - 1) for k, m in zip(ranks, prob.block_dims)]

    y = np.zeros(n)
    x = BlockSymMatrix([np.eye(m) for m in prob.block_dims], np.ones(prob.nu))
    ay = apply_A_adjoint(prob, y)
    lam0 = max(
        float(np.linalg.eigvalsh(sym(ay.blocks[i] - prob.c_dense(i)))[-1])
        for i in range(prob.p)
    )
    pi_lmi = 1.1 * max(1.0, lam0)
    pi_lin = 1.0
    if fn_lin.tau_q >= 1.0:
        t0_lin = float((ay.lin - prob.d).max(initial=0.0))
        if t0_lin > 0:
            pi_lin = max(pi_lin, 1.1 * t0_lin)

    cg_tol = cfg.cg_tol
    cg_total = 0
    trace: list[dict] = []
    diagnostics: list[dict] = [] if cfg.diag else None
    status = "max_iterations"

    def current_point() -> PrimalDualPoint:
        return PrimalDualPoint(y, x, dual_slack(prob, y))

    def finish(stat: str) -> SolveReport:
        pt = current_point()
        pobj, dobj = objective_values(prob, pt)
        final_errs = dimacs(prob, pt)
        if stat == "max_iterations" and (
            final_errs.max() <= cfg.eps_dimacs or pd_error(prob, y, x) < cfg.eps
        ):
            stat = "optimal"
        return SolveReport(
            solver="pdal",
            status=stat,
            iterations=len(trace),
            cg_total=cg_total,
            wall_time=time.perf_counter() - t0,
            primal_objective=pobj,
            dual_objective=dobj,
            dimacs=final_errs,
            precond=cfg.precond,
            trace=trace,
            spectra=spectrum_summary(x.blocks),
            diagnostics=diagnostics or [],
        )

    for k in range(cfg.max_outer):
        e_outer = pd_error(prob, y, x)
        errs = dimacs(prob, current_point())
        if e_outer < cfg.eps or errs.max() <= cfg.eps_dimacs:
            status = "optimal"
            break

        ctx = OuterCtx(
            prob=prob,
            y_prox=y,
            x_blocks=[b.copy() for b in x.blocks],
            x_lin=x.lin.copy(),
            pi_lmi=pi_lmi,
            pi_lin=pi_lin,
            r=cfg.r,
            fn_lin=fn_lin,
        )
        eps_k = max(cfg.inner_eps_min, cfg.inner_eps0 * cfg.inner_eps_decay**k)
        try:
            res = inner_solve(
                ctx, y, x, eps_k, cfg, cg_tol.current, ranks, e_outer,
                diagnostics, k,
            )
        except InnerCgFailure as exc:
            report = finish("cg_failure")
            raise SolverFailure(str(exc), report) from exc
        cg_total += res.cg_iterations

        y = res.y
        x_new_blocks = []
        ev_new = None
        for i in range(prob.p):
            cand = (1.0 - cfg.gamma_lmi) * x.blocks[i] + cfg.gamma_lmi * res.x.blocks[i]
            if not is_pd(cand):
                # blend with the always-positive closed-form update instead
                if ev_new is None:
                    ev_new = evaluate_point(ctx, y)
                cand = (1.0 - cfg.gamma_lmi) * x.blocks[i] + cfg.gamma_lmi * ev_new.xbar_blocks[i]
            x_new_blocks.append(sym(cand))
        x_lin_new = (1.0 - cfg.gamma_lin) * x.lin + cfg.gamma_lin * res.x.lin
        if x_lin_new.size and x_lin_new.min() <= 0:
            if ev_new is None:
                ev_new = evaluate_point(ctx, y)
            bad = x_lin_new <= 0
            x_lin_new[bad] = (
                (1.0 - cfg.gamma_lin) * x.lin[bad] + cfg.gamma_lin * ev_new.xbar_lin[bad]
            )
        x = BlockSymMatrix(x_new_blocks, x_lin_new)

        ay = apply_A_adjoint(prob, y)
        lam_max = max(
            float(np.linalg.eigvalsh(sym(ay.blocks[i] - prob.c_dense(i)))[-1])
            for i in range(prob.p)
        )
        t_lin_max = float((ay.lin - prob.d).max(initial=0.0))
        pi_lin, pi_lmi = penalty_update(pi_lin, pi_lmi, cfg, lam_max, t_lin_max)

        trace.append(
            {
                "iteration": k,
                "inner_iterations": res.iterations,
                "cg": res.cg_iterations,
                "merit": res.merit,
                "early_stop": res.early_stop,
                "inner_converged": res.converged,
                "pd_error": e_outer,
                "pi_lin": pi_lin,
                "pi_lmi": pi_lmi,
                "cg_tol": cg_tol.current,
                "dimacs_max": errs.max(),
                "time": time.perf_counter() - t0,
            }
        )
        cg_tol = next_tolerance(cg_tol)

    return current_point(), finish(status)
