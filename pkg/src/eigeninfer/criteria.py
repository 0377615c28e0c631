"""Criterion functions whose maximizer is the moment-equation root.

Three interchangeable log-criteria drive the generalized posterior:

* ``M``: sum over j of the antiderivative of the weighted residual,
  so its gradient is n times the averaged moment vector.
* ``GMM``: negative quadratic form of the averaged moment vector under
  an inverse second-moment weighting frozen at the embedding row.
* ``ETEL``: log product of entropy-tilted empirical probabilities
  constrained to zero reweighted moments, computed through the dual.

Evaluation failures (weight domain, dual non-convergence) are reported
as "criterion undefined"; samplers treat undefined as log-density -inf.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss

from .estimator import RowContext, moment_sum, moment_values, moment_outer_mean
from .weights import WeightDomainError

GAUSS_NODES, GAUSS_WEIGHTS = leggauss(16)
COND_LIMIT = 1e12
ETEL_MAX_ITER = 50
ETEL_GRAD_TOL = 1e-8
ETEL_MAX_HALVINGS = 30

CRITERION_KINDS = ("M", "GMM", "ETEL")


class CriterionUndefined(Exception):
    """The criterion has no finite value at the requested point."""


@dataclass(frozen=True)
class Criterion:
    """A criterion kind plus its per-row evaluation state.

    For GMM the inverse weighting matrix is computed once per row and
    cached here; for ETEL the dual-solver settings are carried along.
    """

    kind: str
    gmm_cache: Optional[np.ndarray] = None
    etel_max_iter: int = ETEL_MAX_ITER
    etel_tol: float = ETEL_GRAD_TOL

    def __post_init__(self):
        if self.kind not in CRITERION_KINDS:
            raise ValueError(f"criterion kind must be one of {CRITERION_KINDS}")

    def for_row(self, ctx: RowContext) -> "Criterion":
        """Return a copy with any per-row cache filled in."""
        if self.kind == "GMM" and self.gmm_cache is None:
            return replace(self, gmm_cache=gmm_weight_matrix(ctx))
        return self


def m_criterion(ctx: RowContext, x: np.ndarray) -> float:
    """Antiderivative criterion: sum_j int_0^{x.xt_j} (a_j - t) h(s_j, t) dt.

    Uses the weight's closed-form antiderivative when declared and
    16-node Gauss-Legendre quadrature per term otherwise (exact to
    machine precision for smooth bounded integrands at this scale).
    Integration-path domain violations make the criterion undefined.
    """
    x = np.asarray(x, dtype=float)
    s = ctx.s_row
    a = ctx.a_row
    u = ctx.embedding.Xtilde @ x
    dom = ctx.weight.in_domain
    with np.errstate(all="ignore"):
        ok = dom(s, u) & dom(s, np.zeros_like(u))
        if ctx.weight.antiderivative is not None:
            if not np.all(ok):
                j = int(np.argmin(ok))
                raise CriterionUndefined(
                    f"integration path for term j={j} leaves the weight domain"
                )
            vals = ctx.weight.antiderivative(s, a, u)
            total = float(np.sum(vals))
        else:
            # t_k = u * (node + 1) / 2 maps the nodes onto [0, u]
            tq = u[:, None] * (GAUSS_NODES[None, :] + 1.0) / 2.0
            ok &= dom(s[:, None], tq).all(axis=1)
            if not np.all(ok):
                j = int(np.argmin(ok))
                raise CriterionUndefined(
                    f"integration path for term j={j} leaves the weight domain"
                )
            integrand = (a[:, None] - tq) * ctx.weight.h(s[:, None], tq)
            total = float(np.sum((integrand @ GAUSS_WEIGHTS) * u / 2.0))
    if not np.isfinite(total):
        raise CriterionUndefined("criterion value is not finite")
    return total


def gmm_weight_matrix(ctx: RowContext) -> np.ndarray:
    """Inverse of the moment second-moment matrix at the embedding row."""
    Omega = moment_outer_mean(ctx, ctx.embedding.row(ctx.i))
    if np.linalg.cond(Omega) > COND_LIMIT:
        raise np.linalg.LinAlgError(
            f"row {ctx.i}: moment second-moment matrix at the embedding row "
            f"is singular (condition > {COND_LIMIT:g})"
        )
    return np.linalg.inv(Omega)


def gmm_criterion(ctx: RowContext, x: np.ndarray, cache: np.ndarray) -> float:
    """Quadratic-form criterion -(n/2) gbar' C gbar; always <= 0."""
    try:
        gbar = moment_sum(ctx, x)
    except WeightDomainError as exc:
        raise CriterionUndefined(str(exc)) from exc
    val = -0.5 * ctx.n * float(gbar @ cache @ gbar)
    if not np.isfinite(val):
        raise CriterionUndefined("criterion value is not finite")
    return val


@dataclass(frozen=True)
class EtelSolution:
    """Dual solution of the tilted empirical-probability problem.

    ``lam`` is the length-d multiplier, ``probs`` the n empirical
    probabilities (positive, summing to one), and ``dual_value`` the
    attained dual objective mean_j exp(lam . g_j).
    """

    lam: np.ndarray
    probs: np.ndarray
    converged: bool
    dual_value: float


EXPONENT_CAP = 500.0


def _etel_dual_from_moments(G: np.ndarray, max_iter: int = ETEL_MAX_ITER,
                            tol: float = ETEL_GRAD_TOL,
                            lam0: np.ndarray | None = None) -> EtelSolution:
    """Newton with step halving on lam -> mean_j exp(lam . g_j).

    Convergence is declared when the probability-weighted moment mean
    sum_j p_j g_j (the reweighted moments that the tilt must zero out)
    has norm at most tol; the Newton direction is computed from the
    unnormalized dual, whose shift-stabilized gradient and Hessian give
    the same step.  Runaway exponents signal that zero lies outside the
    convex hull of the moments, in which case the infimum is not
    attained and the solve reports non-convergence.
    """
    n, d = G.shape
    lam = np.zeros(d) if lam0 is None else np.asarray(lam0, dtype=float).copy()

    def pieces(lam_):
        u = G @ lam_
        m = float(u.max())
        w = np.exp(u - m)
        log_dual = m + np.log(w.mean())
        return u, m, w, log_dual

    u, m, w, log_dual = pieces(lam)
    converged = False
    for _ in range(max_iter):
        wg = (w[:, None] * G).sum(axis=0)
        r = wg / w.sum()  # reweighted moment mean
        if float(np.linalg.norm(r)) <= tol:
            converged = True
            break
        if np.abs(u).max() > EXPONENT_CAP:
            break  # escape direction: zero outside the moment hull
        H = (G * w[:, None]).T @ G
        try:
            if np.linalg.cond(H) > COND_LIMIT:
                break
            step = np.linalg.solve(H, wg)
        except np.linalg.LinAlgError:
            break
        improved = False
        scale = 1.0
        for _ in range(ETEL_MAX_HALVINGS + 1):
            lam_try = lam - scale * step
            u_t, m_t, w_t, log_dual_t = pieces(lam_try)
            # plateau slack: accept steps that change the objective by less
            # than rounding so the gradient check can terminate us
            if log_dual_t <= log_dual + 1e-12:
                lam, u, m, w, log_dual = lam_try, u_t, m_t, w_t, log_dual_t
                improved = True
                break
            scale *= 0.5
        if not improved:
            break
    else:
        r = (w[:, None] * G).sum(axis=0) / w.sum()
        converged = float(np.linalg.norm(r)) <= tol

    lse = m + np.log(np.exp(u - m).sum())
    probs = np.exp(u - lse)
    return EtelSolution(
        lam=lam, probs=probs, converged=converged,
        dual_value=float(np.exp(np.clip(log_dual, -745.0, 709.0))),
    )


def etel_dual(ctx: RowContext, x: np.ndarray,
              max_iter: int = ETEL_MAX_ITER, tol: float = ETEL_GRAD_TOL) -> EtelSolution:
    """Solve the tilted-probability dual at x for row ctx.i."""
    G = moment_values(ctx, np.asarray(x, dtype=float))
    return _etel_dual_from_moments(G, max_iter=max_iter, tol=tol)


def etel_criterion(ctx: RowContext, x: np.ndarray) -> float:
    """Sum of log empirical probabilities; equals -n log n at the root."""
    try:
        sol = etel_dual(ctx, x)
    except WeightDomainError as exc:
        raise CriterionUndefined(str(exc)) from exc
    if not sol.converged:
        raise CriterionUndefined(
            "tilted-probability dual did not converge "
            "(zero may lie outside the moment hull)"
        )
    return float(np.log(sol.probs).sum())


def criterion_eval(kind, ctx: RowContext, x: np.ndarray) -> float | None:
    """Evaluate a criterion, mapping failures to None instead of raising.

    ``kind`` is a Criterion or one of the strings 'M', 'GMM', 'ETEL';
    a bare 'GMM' computes the weighting cache on the fly.
    """
    crit = Criterion(kind) if isinstance(kind, str) else kind
    try:
        if crit.kind == "M":
            return m_criterion(ctx, x)
        if crit.kind == "GMM":
            cache = crit.gmm_cache
            if cache is None:
                cache = gmm_weight_matrix(ctx)
            return gmm_criterion(ctx, x, cache)
        sol_val = etel_criterion(ctx, x)
        return sol_val
    except (CriterionUndefined, WeightDomainError, np.linalg.LinAlgError):
        return None
