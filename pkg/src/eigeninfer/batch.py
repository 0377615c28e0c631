"""Vectorized criterion evaluation over blocks of rows.

Internal engine behind the samplers: a block stacks several row
contexts that share one embedding and weight, and each evaluator maps a
matrix of candidate points (one per row) to criterion values plus a
defined-mask.  Values agree with the per-row functions in
``criteria`` up to floating-point summation order.
"""

from __future__ import annotations

import numpy as np

from .criteria import (
    Criterion,
    GAUSS_NODES,
    GAUSS_WEIGHTS,
    COND_LIMIT,
)
from .estimator import RowContext


class RowBlock:
    """Shared data for a batch of rows: data rows, embedding, weight."""

    def __init__(self, contexts: list[RowContext]):
        if not contexts:
            raise ValueError("empty block")
        emb = contexts[0].embedding
        wt = contexts[0].weight
        for c in contexts:
            if c.embedding is not emb or c.weight is not wt:
                raise ValueError("block rows must share embedding and weight")
        self.contexts = contexts
        self.Xt = emb.Xtilde
        self.n = emb.n
        self.d = emb.d
        self.R = len(contexts)
        self.A = np.stack([c.a_row for c in contexts])
        self.S = np.stack([c.s_row for c in contexts])
        self.weight = wt


class _Evaluator:
    def values(self, X: np.ndarray):
        raise NotImplementedError

    def commit(self, accepted: np.ndarray) -> None:
        """Hook called after accept/reject with the accepted-row mask."""


class CallableEvaluator(_Evaluator):
    """Adapter for a user-supplied log-criterion x -> float | None."""

    def __init__(self, fn, R: int):
        self.fn = fn
        self.R = R

    def values(self, X: np.ndarray):
        vals = np.full(self.R, -np.inf)
        defined = np.zeros(self.R, dtype=bool)
        for r in range(self.R):
            v = self.fn(X[r])
            if v is not None and np.isfinite(v):
                vals[r] = float(v)
                defined[r] = True
        return vals, defined


class MEvaluator(_Evaluator):
    def __init__(self, block: RowBlock):
        self.b = block
        w = block.weight
        with np.errstate(all="ignore"):
            self.zero_ok = w.in_domain(block.S, np.zeros_like(block.S)).all(axis=1)

    def values(self, X: np.ndarray):
        b = self.b
        w = b.weight
        T = X @ b.Xt.T
        with np.errstate(all="ignore"):
            ok = w.in_domain(b.S, T)
            if w.antiderivative is not None:
                vals = np.sum(w.antiderivative(b.S, b.A, T), axis=1)
            else:
                TQ = T[:, :, None] * (GAUSS_NODES + 1.0) / 2.0
                ok &= w.in_domain(b.S[:, :, None], TQ).all(axis=2)
                integrand = (b.A[:, :, None] - TQ) * w.h(b.S[:, :, None], TQ)
                vals = np.sum((integrand @ GAUSS_WEIGHTS) * T / 2.0, axis=1)
        defined = self.zero_ok & ok.all(axis=1) & np.isfinite(vals)
        vals[~defined] = -np.inf
        return vals, defined


class GMMEvaluator(_Evaluator):
    def __init__(self, block: RowBlock, caches: np.ndarray):
        self.b = block
        self.caches = np.asarray(caches, dtype=float)  # (R, d, d)

    def values(self, X: np.ndarray):
        b = self.b
        T = X @ b.Xt.T
        with np.errstate(all="ignore"):
            ok = b.weight.in_domain(b.S, T)
            H = b.weight.h(b.S, T)
            gbar = ((b.A - T) * H) @ b.Xt / b.n
            quad = np.einsum("rd,rde,re->r", gbar, self.caches, gbar)
            vals = -0.5 * b.n * quad
        defined = ok.all(axis=1) & np.isfinite(vals)
        vals[~defined] = -np.inf
        return vals, defined


def _batch_dual(coef: np.ndarray, Xt: np.ndarray, lam0: np.ndarray,
                max_iter: int, tol: float):
    """Row-batched Newton for the tilted-probability dual.

    coef[r, j] is the scalar moment coefficient of entry j for row r,
    so the moment vector is coef[r, j] * Xt[j].  A row converges when
    its probability-weighted moment mean has norm at most tol; runaway
    exponents (zero outside the moment hull) end the row unconverged.
    Returns the multiplier matrix and per-row convergence flags.
    """
    from .criteria import EXPONENT_CAP

    R, n = coef.shape
    d = Xt.shape[1]
    lam = lam0.copy()
    conv = np.zeros(R, dtype=bool)
    failed = np.zeros(R, dtype=bool)

    def state(lam_rows, rows):
        P = lam_rows @ Xt.T
        U = coef[rows] * P
        m = U.max(axis=1)
        W = np.exp(U - m[:, None])
        logf = m + np.log(W.mean(axis=1))
        maxabs = np.maximum(m, -U.min(axis=1))
        return m, W, logf, maxabs

    m = np.empty(R)
    W = np.empty((R, n))
    logf = np.empty(R)
    maxabs = np.empty(R)
    act = np.arange(R)
    m[act], W[act], logf[act], maxabs[act] = state(lam, act)

    for _ in range(max_iter):
        Wa = W[act]
        Ca = coef[act]
        WC = Wa * Ca
        wg = WC @ Xt
        resid = wg / Wa.sum(axis=1)[:, None]
        done = np.linalg.norm(resid, axis=1) <= tol
        escaped = ~done & (maxabs[act] > EXPONENT_CAP)
        conv[act[done]] = True
        failed[act[escaped]] = True
        keep = ~done & ~escaped
        act = act[keep]
        if act.size == 0:
            break
        WC = WC[keep]
        wg = wg[keep]
        Ca = Ca[keep]
        step = np.zeros((R, d))
        if d == 1:
            h = (WC * Ca) @ (Xt[:, 0] ** 2)
            sing = ~(h > 0.0)
            if sing.any():
                failed[act[sing]] = True
            step[act, 0] = np.where(sing, 0.0, wg[:, 0] / np.where(sing, 1.0, h))
            act = act[~sing]
        else:
            Hd = np.einsum("kn,nd,ne->kde", WC * Ca, Xt, Xt)
            good = np.ones(act.size, dtype=bool)
            for k, r in enumerate(act):
                try:
                    if np.linalg.cond(Hd[k]) > COND_LIMIT:
                        raise np.linalg.LinAlgError
                    step[r] = np.linalg.solve(Hd[k], wg[k])
                except np.linalg.LinAlgError:
                    failed[r] = True
                    good[k] = False
            act = act[good]
        if act.size == 0:
            break
        pending = act.copy()
        scale = np.ones(R)
        for _ in range(31):
            if pending.size == 0:
                break
            lam_try = lam[pending] - scale[pending, None] * step[pending]
            m_t, W_t, logf_t, ma_t = state(lam_try, pending)
            # plateau slack: near the optimum a Newton step may change the
            # objective by less than rounding, which still counts as progress
            better = logf_t <= logf[pending] + 1e-12
            good = pending[better]
            lam[good] = lam_try[better]
            m[good] = m_t[better]
            W[good] = W_t[better]
            logf[good] = logf_t[better]
            maxabs[good] = ma_t[better]
            pending = pending[~better]
            scale[pending] *= 0.5
        failed[pending] = True
        act = act[~np.isin(act, pending)] if pending.size else act
    else:
        if act.size:
            Wa = W[act]
            resid = (Wa * coef[act]) @ Xt / Wa.sum(axis=1)[:, None]
            conv[act[np.linalg.norm(resid, axis=1) <= tol]] = True
    return lam, conv & ~failed


class ETELEvaluator(_Evaluator):
    """Batched tilted-likelihood criterion with warm-started duals.

    The dual multiplier of the current chain state seeds the Newton
    solve for each proposal; the optimum is unique, so warm starting
    only saves iterations.
    """

    def __init__(self, block: RowBlock, max_iter: int = 50, tol: float = 1e-8):
        self.b = block
        self.max_iter = max_iter
        self.tol = tol
        self.lam_state = np.zeros((block.R, block.d))
        self._lam_prop = np.zeros((block.R, block.d))

    def values(self, X: np.ndarray):
        b = self.b
        T = X @ b.Xt.T
        with np.errstate(all="ignore"):
            ok = b.weight.in_domain(b.S, T)
            H = b.weight.h(b.S, T)
            coef = (b.A - T) * H
        row_ok = ok.all(axis=1) & np.isfinite(coef).all(axis=1)
        coef = np.where(row_ok[:, None], coef, 0.0)
        lam, conv = _batch_dual(coef, b.Xt, self.lam_state, self.max_iter, self.tol)
        self._lam_prop = lam
        U = coef * (lam @ b.Xt.T)
        m = U.max(axis=1)
        lse = m + np.log(np.exp(U - m[:, None]).sum(axis=1))
        vals = U.sum(axis=1) - b.n * lse
        defined = row_ok & conv & np.isfinite(vals)
        vals[~defined] = -np.inf
        return vals, defined

    def commit(self, accepted: np.ndarray) -> None:
        self.lam_state[accepted] = self._lam_prop[accepted]


def make_evaluator(kind, contexts: list[RowContext], caches=None) -> _Evaluator:
    """Build the block evaluator for a criterion kind or callable."""
    if callable(kind) and not isinstance(kind, (str, Criterion)):
        return CallableEvaluator(kind, len(contexts))
    crit = Criterion(kind) if isinstance(kind, str) else kind
    block = RowBlock(contexts)
    if crit.kind == "M":
        return MEvaluator(block)
    if crit.kind == "GMM":
        if caches is None:
            caches = [crit.for_row(ctx).gmm_cache for ctx in contexts]
        return GMMEvaluator(block, np.stack(caches))
    return ETELEvaluator(block, max_iter=crit.etel_max_iter, tol=crit.etel_tol)
