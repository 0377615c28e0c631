"""Per-row moment equations, the damped-Newton root finder, and the
plug-in sandwich covariance.

For row i with data row ``a`` and embedding rows ``xt_1..xt_n``, the
moment vector of entry j at a candidate point x is

    g_j(x) = (a_j - x.xt_j) * h(xt_i.xt_j, x.xt_j) * xt_j

and the estimator solves ``mean_j g_j(x) = 0`` inside the ball
``||x|| <= theta_radius``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .spectral import Embedding
from .weights import WeightFunction

RESIDUAL_TOL = 1e-10
MAX_NEWTON_ITER = 100
MAX_HALVINGS = 30
COND_LIMIT = 1e12


class SingularJacobianError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class RowContext:
    """Everything needed to evaluate row i's moments and criteria."""

    i: int
    a_row: np.ndarray
    embedding: Embedding
    weight: WeightFunction
    theta_radius: float
    # inner products xt_i . xt_j, fixed data for the weight's s argument
    s_row: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a = np.asarray(self.a_row, dtype=float)
        if a.shape != (self.embedding.n,):
            raise ValueError(
                f"a_row has length {a.shape[0]}, embedding has {self.embedding.n} rows"
            )
        if self.theta_radius <= 0.0:
            raise ValueError("theta_radius must be positive")
        xi = self.embedding.row(self.i)
        if np.linalg.norm(xi) > self.theta_radius:
            warnings.warn(
                f"embedding row {self.i} lies outside the parameter ball "
                f"(|x| = {np.linalg.norm(xi):.4g} > {self.theta_radius:g})",
                stacklevel=2,
            )
        object.__setattr__(self, "a_row", a)
        object.__setattr__(self, "s_row", self.embedding.Xtilde @ xi)

    @property
    def n(self) -> int:
        return self.embedding.n

    @property
    def d(self) -> int:
        return self.embedding.d

    def in_ball(self, x: np.ndarray) -> bool:
        return float(np.linalg.norm(x)) <= self.theta_radius * (1.0 + 1e-12)


def build_row_contexts(A: np.ndarray, embedding: Embedding,
                       weight: WeightFunction, theta_radius: float) -> list[RowContext]:
    """One RowContext per row of a symmetric data matrix."""
    M = np.asarray(A, dtype=float)
    return [
        RowContext(i=i, a_row=M[i], embedding=embedding, weight=weight,
                   theta_radius=theta_radius)
        for i in range(M.shape[0])
    ]


def moment_values(ctx: RowContext, x: np.ndarray) -> np.ndarray:
    """The n individual moment vectors g_j(x), stacked as an (n, d) array."""
    x = np.asarray(x, dtype=float)
    t = ctx.embedding.Xtilde @ x
    h = ctx.weight.evaluate(ctx.s_row, t)
    return ((ctx.a_row - t) * h)[:, None] * ctx.embedding.Xtilde


def moment_sum(ctx: RowContext, x: np.ndarray) -> np.ndarray:
    """The averaged moment vector mean_j g_j(x), a length-d array."""
    return moment_values(ctx, x).mean(axis=0)


def moment_jacobian(ctx: RowContext, x: np.ndarray) -> np.ndarray:
    """Exact d x d Jacobian of moment_sum at x.

    Differentiating (a_j - t) h(s_j, t) in t gives the coefficient
    ``(a_j - t) dh/dt - h`` on the rank-one block xt_j xt_j'.
    """
    x = np.asarray(x, dtype=float)
    Xt = ctx.embedding.Xtilde
    t = Xt @ x
    h = ctx.weight.evaluate(ctx.s_row, t)
    dh = ctx.weight.evaluate_dt(ctx.s_row, t)
    coef = (ctx.a_row - t) * dh - h
    return (Xt * coef[:, None]).T @ Xt / ctx.n


def moment_outer_mean(ctx: RowContext, x: np.ndarray) -> np.ndarray:
    """mean_j g_j(x) g_j(x)', the d x d second-moment matrix."""
    G = moment_values(ctx, x)
    return G.T @ G / ctx.n


class ZEstimate(NamedTuple):
    x: np.ndarray
    iterations: int
    residual_norm: float


def _clip_to_ball(x: np.ndarray, radius: float) -> np.ndarray:
    nrm = float(np.linalg.norm(x))
    if nrm > radius:
        return x * (radius / nrm)
    return x


def z_estimate(ctx: RowContext) -> ZEstimate:
    """Root of the moment equation by damped Newton from the embedding row.

    Steps are halved until the residual norm decreases and radially
    clipped onto the parameter ball; a stall or a singular Jacobian is an
    error rather than a silent partial answer.  If the weight is not
    evaluable at the starting point (an embedding row can overshoot the
    weight domain in small samples), the start is shrunk toward the
    origin until it is.
    """
    x = _clip_to_ball(ctx.embedding.row(ctx.i).copy(), ctx.theta_radius)
    g = None
    for _ in range(60):
        try:
            g = moment_sum(ctx, x)
            break
        except Exception:
            x = 0.8 * x
    if g is None:
        raise ConvergenceError(
            f"row {ctx.i}: no evaluable starting point on the ray to the origin"
        )
    res = float(np.linalg.norm(g))
    for it in range(1, MAX_NEWTON_ITER + 1):
        if res <= RESIDUAL_TOL:
            return ZEstimate(x=x, iterations=it - 1, residual_norm=res)
        J = moment_jacobian(ctx, x)
        if np.linalg.cond(J) > COND_LIMIT:
            raise SingularJacobianError(
                f"row {ctx.i}: Jacobian condition number exceeds {COND_LIMIT:g}"
            )
        step = np.linalg.solve(J, g)
        accepted = False
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            x_new = _clip_to_ball(x - scale * step, ctx.theta_radius)
            try:
                g_new = moment_sum(ctx, x_new)
            except Exception:
                scale *= 0.5
                continue
            res_new = float(np.linalg.norm(g_new))
            if res_new < res:
                x, g, res = x_new, g_new, res_new
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            raise ConvergenceError(
                f"row {ctx.i}: Newton stalled at residual {res:.3g} "
                f"after {it} iterations"
            )
    if res <= RESIDUAL_TOL:
        return ZEstimate(x=x, iterations=MAX_NEWTON_ITER, residual_norm=res)
    raise ConvergenceError(
        f"row {ctx.i}: no convergence after {MAX_NEWTON_ITER} iterations "
        f"(residual {res:.3g})"
    )


@dataclass(frozen=True)
class SandwichCovariance:
    """Plug-in pieces of the estimator's asymptotic covariance.

    ``cov = inv(G) @ Omega @ inv(G).T / n`` where G is the moment
    Jacobian and Omega the moment second-moment matrix, both at xhat.
    """

    G: np.ndarray
    Omega: np.ndarray
    cov: np.ndarray


def sandwich_covariance(ctx: RowContext, xhat: np.ndarray) -> SandwichCovariance:
    G = moment_jacobian(ctx, xhat)
    Omega = moment_outer_mean(ctx, xhat)
    if np.linalg.cond(G) > COND_LIMIT:
        raise SingularJacobianError(f"row {ctx.i}: plug-in Jacobian is singular")
    Ginv = np.linalg.inv(G)
    cov = Ginv @ Omega @ Ginv.T / ctx.n
    cov = 0.5 * (cov + cov.T)
    return SandwichCovariance(G=G, Omega=Omega, cov=cov)
