"""Random-walk Metropolis over each row's generalized posterior.

The prior is uniform on the parameter ball, so with the symmetric
Gaussian proposal the acceptance ratio reduces to the criterion
difference; proposals outside the ball or with an undefined criterion
are rejected outright.  Each (row, chain) owns a derived random stream
and consumes it in a fixed order (all proposal increments, then all
acceptance uniforms), so results do not depend on scheduling.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc

from .batch import make_evaluator
from .criteria import Criterion
from .estimator import RowContext, build_row_contexts
from .model import ObservedMatrix
from .spectral import spectral_embed
from .streams import derive_rng
from .weights import WeightFunction

BLOCK_ROWS = 256
ACCEPT_TARGET = 0.3
ADAPT_DECAY = 0.6


@dataclass(frozen=True)
class ChainConfig:
    """Metropolis run lengths, proposal scale, and stream seed."""

    burnin: int = 1000
    samples: int = 2000
    proposal_scale: float = 0.1
    seed: int = 0
    chains: int = 1
    adapt: bool = True

    def __post_init__(self):
        if self.burnin < 0:
            raise ValueError("burnin must be nonnegative")
        if self.samples < 1:
            raise ValueError("need at least one post-burn-in sample")
        if self.proposal_scale <= 0.0:
            raise ValueError("proposal_scale must be positive")
        if self.chains < 1:
            raise ValueError("chains must be >= 1")


@dataclass(frozen=True)
class RowPosterior:
    """Post-burn-in draws and bookkeeping for one row's chain."""

    row_index: int
    chain_id: int
    draws: np.ndarray
    acceptance_rate: float
    criterion_trace: np.ndarray


def _pregenerate(rng: np.random.Generator, total: int, d: int):
    # fixed consumption order: increments first, uniforms second
    z = rng.standard_normal((total, d))
    u = rng.random(total)
    return z, u


def _run_block(evaluator, x0: np.ndarray, radius: float, cfg: ChainConfig,
               units: list[tuple[int, int]], streams: list[np.random.Generator]):
    """Run one Metropolis chain per block row; returns posteriors or None."""
    R, d = x0.shape
    total = cfg.burnin + cfg.samples
    Z = np.empty((R, total, d))
    U = np.empty((R, total))
    for k, rng in enumerate(streams):
        Z[k], U[k] = _pregenerate(rng, total, d)

    X = x0.copy()
    norms = np.linalg.norm(X, axis=1)
    over = norms > radius
    if over.any():
        X[over] *= (radius / norms[over])[:, None]

    vals, ok_init = evaluator.values(X)
    evaluator.commit(np.ones(R, dtype=bool))

    log_scale = np.full(R, np.log(cfg.proposal_scale))
    scale = np.exp(log_scale)
    draws = np.empty((R, cfg.samples, d))
    trace = np.empty((R, cfg.samples))
    accepted_count = np.zeros(R, dtype=np.int64)
    r2 = radius * radius

    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        for t in range(total):
            prop = X + scale[:, None] * Z[:, t, :]
            within = (prop * prop).sum(axis=1) <= r2
            pvals, pdef = evaluator.values(prop)
            cand = within & pdef & ok_init
            delta = np.where(cand, pvals - vals, -np.inf)
            accept = cand & (np.log(U[:, t]) <= delta)
            if accept.any():
                X[accept] = prop[accept]
                vals[accept] = pvals[accept]
            evaluator.commit(accept)
            if cfg.adapt and t < cfg.burnin:
                acc_prob = np.exp(np.minimum(delta, 0.0))
                log_scale += (t + 1.0) ** (-ADAPT_DECAY) * (acc_prob - ACCEPT_TARGET)
                scale = np.exp(log_scale)
            if t >= cfg.burnin:
                k = t - cfg.burnin
                draws[:, k, :] = X
                trace[:, k] = vals
                accepted_count += accept

    out = []
    for k, (row, chain) in enumerate(units):
        if not ok_init[k]:
            out.append(None)
            continue
        out.append(RowPosterior(
            row_index=row,
            chain_id=chain,
            draws=draws[k].copy(),
            acceptance_rate=float(accepted_count[k]) / cfg.samples,
            criterion_trace=trace[k].copy(),
        ))
    return out


def mh_row(ctx: RowContext, kind, prior_radius: float | None = None,
           cfg: ChainConfig | None = None, rng: np.random.Generator | None = None,
           chain_id: int = 0) -> RowPosterior:
    """Sample one row's generalized posterior with a single chain.

    ``kind`` is 'M' | 'GMM' | 'ETEL', a Criterion, or a callable
    log-criterion ``x -> float | None`` (None meaning undefined).
    The chain starts at the embedding row; an undefined criterion
    there is an error.
    """
    cfg = cfg or ChainConfig()
    radius = ctx.theta_radius if prior_radius is None else prior_radius
    evaluator = make_evaluator(kind, [ctx])
    stream = rng if rng is not None else derive_rng(cfg.seed, ctx.i, chain_id)
    x0 = ctx.embedding.row(ctx.i)[None, :]
    result = _run_block(evaluator, x0, radius, cfg, [(ctx.i, chain_id)], [stream])[0]
    if result is None:
        raise ValueError(
            f"row {ctx.i}: criterion is undefined at the initial point"
        )
    return result


def run_row_chains(ctx: RowContext, kind, cfg: ChainConfig,
                   prior_radius: float | None = None) -> list[RowPosterior]:
    """Run cfg.chains independent chains for one row (for diagnostics)."""
    radius = ctx.theta_radius if prior_radius is None else prior_radius
    contexts = [ctx] * cfg.chains
    evaluator = make_evaluator(kind, contexts)
    units = [(ctx.i, c) for c in range(cfg.chains)]
    streams = [derive_rng(cfg.seed, ctx.i, c) for c in range(cfg.chains)]
    x0 = np.tile(ctx.embedding.row(ctx.i), (cfg.chains, 1))
    out = _run_block(evaluator, x0, radius, cfg, units, streams)
    if any(p is None for p in out):
        raise ValueError(
            f"row {ctx.i}: criterion is undefined at the initial point"
        )
    return out


def run_all_rows(A, d: int, kind, weight: WeightFunction, cfg: ChainConfig,
                 theta_radius: float, workers: int = 1):
    """Sample every row's posterior with independent derived streams.

    Rows are processed in fixed-size blocks, so the output is identical
    whether blocks run serially or on a thread pool.  Rows that fail
    (weighting-cache breakdown or an undefined initial criterion) come
    back as None, with a warning naming the row; all other rows still
    complete.  With cfg.chains > 1 each entry is a list of chains.
    """
    M = A.A if isinstance(A, ObservedMatrix) else np.asarray(A, dtype=float)
    embedding = spectral_embed(M, d)
    contexts = build_row_contexts(M, embedding, weight, theta_radius)
    return sample_rows(contexts, kind, cfg, theta_radius, workers=workers)


def sample_rows(contexts: list[RowContext], kind, cfg: ChainConfig,
                theta_radius: float, workers: int = 1):
    """run_all_rows on prebuilt row contexts (one per data row)."""
    n = len(contexts)

    crit = kind if (callable(kind) and not isinstance(kind, (str, Criterion))) \
        else (Criterion(kind) if isinstance(kind, str) else kind)

    caches = None
    failed: dict[int, str] = {}
    if isinstance(crit, Criterion) and crit.kind == "GMM":
        caches = [None] * n
        for i, ctx in enumerate(contexts):
            try:
                caches[i] = crit.for_row(ctx).gmm_cache
            except Exception as exc:
                failed[i] = str(exc)

    units = [(i, c) for i in range(n) if i not in failed
             for c in range(cfg.chains)]
    blocks = [units[k:k + BLOCK_ROWS] for k in range(0, len(units), BLOCK_ROWS)]

    def one_block(block_units):
        ctxs = [contexts[i] for i, _ in block_units]
        block_caches = [caches[i] for i, _ in block_units] if caches is not None else None
        evaluator = make_evaluator(crit, ctxs, caches=block_caches)
        streams = [derive_rng(cfg.seed, i, c) for i, c in block_units]
        x0 = np.stack([contexts[i].embedding.row(i) for i, _ in block_units])
        return _run_block(evaluator, x0, theta_radius, cfg, block_units, streams)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            block_results = list(pool.map(one_block, blocks))
    else:
        block_results = [one_block(b) for b in blocks]

    per_row: list = [None] * n
    for block_units, results in zip(blocks, block_results):
        for (i, c), post in zip(block_units, results):
            if post is None:
                failed.setdefault(i, "criterion undefined at the initial point")
                continue
            if cfg.chains == 1:
                per_row[i] = post
            else:
                if per_row[i] is None:
                    per_row[i] = []
                per_row[i].append(post)

    for i, msg in sorted(failed.items()):
        warnings.warn(f"row {i} failed: {msg}", stacklevel=2)
        per_row[i] = None
    if n and all(p is None for p in per_row):
        raise RuntimeError("all rows failed to sample")
    return per_row


def posterior_mean(post: RowPosterior) -> np.ndarray:
    """Sample mean of the draws."""
    if post.draws.shape[0] < 2:
        raise ValueError("need at least two draws")
    return post.draws.mean(axis=0)


def posterior_cov(post: RowPosterior) -> np.ndarray:
    """Unbiased sample covariance of the draws (d x d)."""
    if post.draws.shape[0] < 2:
        raise ValueError("need at least two draws")
    dev = post.draws - post.draws.mean(axis=0)
    return dev.T @ dev / (post.draws.shape[0] - 1)


def chi2_quantile(prob: float, df: int) -> float:
    """Quantile of the chi-square distribution with df degrees of freedom.

    Inverts the regularized lower incomplete gamma CDF by bisection to
    an absolute tolerance of 1e-10.
    """
    if not (0.0 < prob < 1.0):
        raise ValueError(f"prob must lie in (0, 1), got {prob}")
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")

    def cdf(x):
        return gammainc(df / 2.0, x / 2.0)

    lo, hi = 0.0, float(max(df, 1))
    for _ in range(200):
        if cdf(hi) >= prob:
            break
        hi *= 2.0
    else:  # pragma: no cover - prob < 1 always brackets
        raise RuntimeError("failed to bracket the quantile")
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if cdf(mid) < prob:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class CredibleSet:
    """Ellipse {x : (x - center)' inv(Vhat) (x - center) <= q}."""

    center: np.ndarray
    Vhat: np.ndarray
    q: float
    alpha: float


def credible_ellipse(post: RowPosterior, xhat: np.ndarray, alpha: float) -> CredibleSet:
    """Large-sample credible ellipse from the posterior covariance."""
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    Vhat = posterior_cov(post)
    if not np.isfinite(np.linalg.cond(Vhat)) or np.linalg.cond(Vhat) > 1e12:
        raise np.linalg.LinAlgError("posterior covariance is singular")
    q = chi2_quantile(1.0 - alpha, Vhat.shape[0])
    return CredibleSet(center=np.asarray(xhat, dtype=float), Vhat=Vhat, q=q, alpha=alpha)


def ellipse_contains(cs: CredibleSet, point: np.ndarray) -> bool:
    dev = np.asarray(point, dtype=float) - cs.center
    return float(dev @ np.linalg.solve(cs.Vhat, dev)) <= cs.q


def entrywise_interval(post: RowPosterior, alpha: float) -> np.ndarray:
    """Equal-tailed per-coordinate interval, shape (d, 2).

    Quantiles use linear interpolation between order statistics
    (numpy's default rule).
    """
    if post.draws.shape[0] < 40:
        raise ValueError("need at least 40 draws for quantile intervals")
    qs = np.quantile(post.draws, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0,
                     method="linear")
    return qs.T
