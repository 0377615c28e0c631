"""Convergence diagnostics: potential scale reduction and trace export."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import f as f_dist

from .sampler import RowPosterior


@dataclass(frozen=True)
class PsrfReport:
    """Per-coordinate potential scale reduction factors.

    ``point_estimate[k]`` compares pooled to within-chain variance for
    coordinate k; values near 1 indicate the chains agree.
    """

    point_estimate: np.ndarray
    upper_ci: np.ndarray
    chains_used: int
    per_coordinate: bool = True


def gelman_rubin(chains: Sequence[RowPosterior], upper_prob: float = 0.975) -> PsrfReport:
    """Potential scale reduction factor from m parallel chains.

    With m chains of length L, per coordinate:

        W = mean of within-chain sample variances (ddof=1)
        B = L * variance of the chain means (ddof=1)
        point = sqrt(((L-1)/L * W + B/L) / W)

    The upper confidence limit multiplies the between-chain term by an
    F quantile: upper^2 = (L-1)/L + (m+1)/m * B/(L*W) * F_q(m-1, df2),
    where df2 moment-matches the chi-square approximation of W
    (df2 = 2*W^2 / var(s_c^2), capped when the within variances agree
    too well for the moment estimate).
    """
    m = len(chains)
    if m < 2:
        raise ValueError(f"need at least two chains, got {m}")
    L = chains[0].draws.shape[0]
    d = chains[0].draws.shape[1]
    for c in chains:
        if c.draws.shape != (L, d):
            raise ValueError("all chains must have identical draw shapes")
    if L < 10:
        raise ValueError(f"chains too short for diagnostics (length {L})")

    stacked = np.stack([c.draws for c in chains])  # (m, L, d)
    means = stacked.mean(axis=1)                   # (m, d)
    variances = stacked.var(axis=1, ddof=1)        # (m, d)
    W = variances.mean(axis=0)
    if np.any(W <= 0.0):
        k = int(np.argmax(W <= 0.0))
        raise ValueError(f"zero within-chain variance in coordinate {k}")
    B = L * means.var(axis=0, ddof=1)

    point = np.sqrt((L - 1.0) / L + B / (L * W))

    var_s2 = variances.var(axis=0, ddof=1)
    with np.errstate(divide="ignore"):
        df2 = np.where(var_s2 > 0.0, 2.0 * W**2 / np.maximum(var_s2, 1e-300), np.inf)
    df2 = np.minimum(df2, 1e8)
    fq = f_dist.ppf(upper_prob, m - 1, df2)
    upper = np.sqrt((L - 1.0) / L + (m + 1.0) / m * B / (L * W) * fq)

    return PsrfReport(point_estimate=point, upper_ci=upper, chains_used=m)


def trace_export(posteriors: Sequence[RowPosterior], path) -> None:
    """Write draws and criterion values to CSV.

    Columns: row_index, chain_id, iteration (1-based, post burn-in),
    criterion_value, coord_1..coord_d.  Floats carry 17 significant
    digits so a read-back reproduces them exactly.
    """
    posteriors = list(posteriors)
    with open(path, "w", encoding="utf-8") as fh:
        base = "row_index,chain_id,iteration,criterion_value"
        if not posteriors:
            fh.write(base + "\n")
            return
        d = posteriors[0].draws.shape[1]
        cols = base + "".join(f",coord_{k + 1}" for k in range(d))
        fh.write(cols + "\n")
        for post in posteriors:
            if post.draws.shape[1] != d:
                raise ValueError("posteriors mix different dimensions")
            for t in range(post.draws.shape[0]):
                coords = ",".join(f"{v:.17g}" for v in post.draws[t])
                fh.write(
                    f"{post.row_index},{post.chain_id},{t + 1},"
                    f"{post.criterion_trace[t]:.17g},{coords}\n"
                )
