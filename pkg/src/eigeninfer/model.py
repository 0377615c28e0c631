"""Ground-truth factors and synthetic generators for symmetric
signal-plus-noise matrices.

The observed matrix is ``A = rho * X0 @ X0.T + E`` with symmetric noise
``E``.  Entries are sampled on the index set ``i <= j`` (diagonal
included) and mirrored, so the output is exactly symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GroundTruth:
    """Latent factor matrix X0 (n x d) and global scale rho in (0, 1]."""

    X0: np.ndarray
    rho: float = 1.0

    def __post_init__(self):
        X0 = np.asarray(self.X0, dtype=float)
        if X0.ndim != 2:
            raise ValueError("X0 must be a 2-d array (n x d)")
        if not (0.0 < self.rho <= 1.0):
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        object.__setattr__(self, "X0", X0)

    @property
    def n(self) -> int:
        return self.X0.shape[0]

    @property
    def d(self) -> int:
        return self.X0.shape[1]

    def signal(self) -> np.ndarray:
        """The noise-free signal matrix rho * X0 @ X0.T."""
        return self.rho * (self.X0 @ self.X0.T)


@dataclass(frozen=True)
class ObservedMatrix:
    """A symmetric n x n data matrix."""

    A: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        object.__setattr__(self, "A", A)

    @property
    def n(self) -> int:
        return self.A.shape[0]


def generate_latent_curve(n: int) -> GroundTruth:
    """One-dimensional latent positions sampled from a fixed sine bump.

    Row i gets the value ``0.1 + 0.8*sin(pi*t_i)`` with t_1..t_n
    equidistant on [0, 1].  All pairwise products lie in (0, 0.81], so
    the result is a valid Bernoulli-probability factor.
    """
    if n < 2:
        raise ValueError(f"need n >= 2 equidistant points, got {n}")
    t = np.linspace(0.0, 1.0, n)
    x = 0.1 + 0.8 * np.sin(np.pi * t)
    return GroundTruth(X0=x.reshape(n, 1), rho=1.0)


def _symmetrize_upper(M: np.ndarray) -> np.ndarray:
    """Mirror the upper triangle (diagonal kept) onto the lower one."""
    out = np.triu(M)
    return out + np.triu(M, 1).T


def sample_rdpg(truth: GroundTruth, rng: np.random.Generator) -> ObservedMatrix:
    """Draw a random adjacency matrix with edge probabilities rho*x_i'x_j.

    Entries on ``i <= j`` (diagonal included) are independent Bernoulli;
    the lower triangle mirrors the upper.
    """
    P = truth.rho * (truth.X0 @ truth.X0.T)
    bad = (P < 0.0) | (P > 1.0)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValueError(
            f"edge probability {P[i, j]:.6g} at entry ({i}, {j}) is outside [0, 1]"
        )
    U = rng.random(P.shape)
    A = _symmetrize_upper((U < P).astype(float))
    return ObservedMatrix(A=A)


def sample_matrix_completion(
    truth: GroundTruth,
    sigma: float,
    p: float,
    rng: np.random.Generator,
) -> ObservedMatrix:
    """Noisy entries of the signal, each observed with probability p.

    The dense matrix ``A* = rho*X0@X0.T + E`` has i.i.d. Normal(0, sigma^2)
    noise on the upper triangle (symmetrized).  Each entry is kept with
    probability p and rescaled by 1/p, missing entries become zero, so the
    output is unbiased for the signal.
    """
    if not (0.0 < p <= 1.0):
        raise ValueError(f"observation probability p must lie in (0, 1], got {p}")
    if sigma < 0.0:
        raise ValueError(f"noise s.d. must be nonnegative, got {sigma}")
    n = truth.n
    E = _symmetrize_upper(rng.normal(0.0, sigma, size=(n, n))) if sigma > 0 else 0.0
    A_star = truth.signal() + E
    if p < 1.0:
        Z = _symmetrize_upper((rng.random((n, n)) < p).astype(float))
        A = Z * A_star / p
    else:
        A = A_star
    return ObservedMatrix(A=A)


def contaminate(A: ObservedMatrix, v: float, rng: np.random.Generator) -> ObservedMatrix:
    """Add symmetric Gaussian noise with s.d. v to an observed matrix."""
    if v < 0.0:
        raise ValueError(f"contamination s.d. must be nonnegative, got {v}")
    if v == 0.0:
        return ObservedMatrix(A=A.A.copy())
    E = _symmetrize_upper(rng.normal(0.0, v, size=A.A.shape))
    return ObservedMatrix(A=A.A + E)
