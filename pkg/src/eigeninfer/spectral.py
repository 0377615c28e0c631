"""Dense symmetric eigendecomposition, scaled-eigenvector embedding,
orthogonal alignment, and embedding error metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ObservedMatrix

SYMMETRY_TOL = 1e-12


class IndefiniteSpectrumError(ValueError):
    """Raised when a retained leading eigenvalue is not strictly positive."""


@dataclass(frozen=True)
class Embedding:
    """Top-d scaled eigenvector matrix ``Xtilde = U * sqrt(lambda)``.

    ``eigenvalues`` holds the d retained eigenvalues (largest magnitude
    first, all positive); the unscaled eigenvectors are recoverable as
    ``Xtilde / sqrt(eigenvalues)``.
    """

    Xtilde: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n(self) -> int:
        return self.Xtilde.shape[0]

    @property
    def d(self) -> int:
        return self.Xtilde.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.Xtilde[i]


@dataclass(frozen=True)
class AlignmentMatrix:
    """d x d orthogonal matrix mapping one factor frame onto another."""

    W: np.ndarray


def _check_symmetric(A: np.ndarray) -> None:
    gap = np.abs(A - A.T).max() if A.size else 0.0
    if gap > SYMMETRY_TOL:
        raise ValueError(f"matrix is not symmetric (max |A_ij - A_ji| = {gap:.3g})")


def top_eigen(A: ObservedMatrix | np.ndarray, d: int):
    """The d eigenpairs of largest magnitude of a symmetric matrix.

    Returns (eigenvalues, eigenvectors) sorted by |eigenvalue| descending;
    eigenvectors are orthonormal columns.
    """
    M = A.A if isinstance(A, ObservedMatrix) else np.asarray(A, dtype=float)
    _check_symmetric(M)
    n = M.shape[0]
    if not (1 <= d <= n):
        raise ValueError(f"rank d={d} must satisfy 1 <= d <= n={n}")
    try:
        evals, evecs = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise RuntimeError("eigendecomposition failed to converge") from exc
    order = np.argsort(-np.abs(evals), kind="stable")[:d]
    return evals[order], evecs[:, order]


def spectral_embed(A: ObservedMatrix | np.ndarray, d: int) -> Embedding:
    """Scaled top-d eigenvector embedding of a symmetric matrix.

    Requires the d largest-magnitude eigenvalues to be strictly positive,
    since the embedding scales eigenvectors by sqrt(eigenvalue).
    """
    evals, evecs = top_eigen(A, d)
    if (evals <= 0.0).any():
        k = int(np.argmax(evals <= 0.0))
        raise IndefiniteSpectrumError(
            f"indefinite top spectrum: retained eigenvalue {k + 1} of {d} "
            f"is {evals[k]:.6g} <= 0"
        )
    return Embedding(Xtilde=evecs * np.sqrt(evals), eigenvalues=evals)


def align(Xhat: np.ndarray, Xref: np.ndarray) -> AlignmentMatrix:
    """Orthogonal W minimizing ||Xhat @ W - Xref||_F (Procrustes).

    Computed from the SVD of Xhat.T @ Xref; fails if that cross-product
    is rank deficient, in which case the minimizer is not unique.
    """
    Xhat = np.asarray(Xhat, dtype=float)
    Xref = np.asarray(Xref, dtype=float)
    if Xhat.shape != Xref.shape:
        raise ValueError(f"shape mismatch: {Xhat.shape} vs {Xref.shape}")
    C = Xhat.T @ Xref
    U, s, Vt = np.linalg.svd(C)
    if s.size == 0 or s[-1] <= 1e-12 * max(s[0], 1.0):
        raise ValueError("cross-product is rank deficient; alignment is not unique")
    return AlignmentMatrix(W=U @ Vt)


def sse(Xhat: np.ndarray, Xref: np.ndarray) -> float:
    """Squared Frobenius error after the best orthogonal alignment."""
    W = align(Xhat, Xref).W
    diff = Xhat @ W - Xref
    return float(np.sum(diff * diff))
