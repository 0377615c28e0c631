"""Weight functions for the moment equations.

A weight ``h(s, t)`` rescales the residual of entry (i, j); ``s`` is the
embedding inner product of rows i and j (fixed data) and ``t`` is the
inner product of the candidate point with embedding row j (moves with
the parameter).  A weight must be strictly positive on its declared
domain, and the canonical choice inverts the noise variance at s = t.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class WeightDomainError(ValueError):
    """Evaluation of a weight outside its declared (s, t) domain."""


@dataclass(frozen=True)
class WeightFunction:
    """A positive weight h(s, t) with its partial derivative in t.

    ``h`` and ``dh_dt`` are vectorized over broadcastable arrays.
    ``in_domain`` returns a boolean mask of valid (s, t) pairs.
    ``antiderivative``, when present, evaluates
    ``F(s, a, u) = integral_0^u (a - t) h(s, t) dt`` in closed form and
    lets criterion code skip numerical quadrature.
    """

    name: str
    h: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dh_dt: Callable[[np.ndarray, np.ndarray], np.ndarray]
    in_domain: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(
        default=lambda s, t: np.ones(np.broadcast(s, t).shape, dtype=bool)
    )
    antiderivative: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None
    domain_note: str = "all of R^2"

    def evaluate(self, s, t) -> np.ndarray:
        """h(s, t) with the domain and positivity guard enforced."""
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        ok = self.in_domain(s, t)
        if not np.all(ok):
            j = int(np.argmin(np.asarray(ok, dtype=bool).ravel()))
            raise WeightDomainError(
                f"weight '{self.name}' undefined at flat index {j} "
                f"(domain: {self.domain_note})"
            )
        vals = np.asarray(self.h(s, t), dtype=float)
        if not np.all(vals > 0.0):
            j = int(np.argmin((vals > 0.0).ravel()))
            raise WeightDomainError(
                f"weight '{self.name}' is not positive at flat index {j}"
            )
        return vals

    def evaluate_dt(self, s, t) -> np.ndarray:
        return np.asarray(self.dh_dt(np.asarray(s, float), np.asarray(t, float)), dtype=float)


def constant_weight() -> WeightFunction:
    """h = 1 everywhere; reproduces the plain spectral embedding."""
    return WeightFunction(
        name="constant",
        h=lambda s, t: np.ones(np.broadcast(s, t).shape),
        dh_dt=lambda s, t: np.zeros(np.broadcast(s, t).shape),
        antiderivative=lambda s, a, u: a * u - 0.5 * u * u,
    )


def rdpg_weight() -> WeightFunction:
    """h(s, t) = 1 / (s (1 - t)), the Bernoulli inverse-variance form.

    Valid for s in (0, 1) and t < 1.
    """

    def F(s, a, u):
        # int_0^u (a - t)/(s(1-t)) dt = (u - (a - 1) log(1 - u)) / s
        return (u - (a - 1.0) * np.log1p(-u)) / s

    return WeightFunction(
        name="rdpg",
        h=lambda s, t: 1.0 / (s * (1.0 - t)),
        dh_dt=lambda s, t: 1.0 / (s * (1.0 - t) ** 2),
        in_domain=lambda s, t: (s > 0.0) & (s < 1.0) & (t < 1.0),
        antiderivative=F,
        domain_note="s in (0, 1), t < 1",
    )


def completion_weight(p: float) -> WeightFunction:
    """h(s, t) = p / ((1 - p) t^2 + 1) for entry-sampling probability p."""
    if not (0.0 < p <= 1.0):
        raise ValueError(f"observation probability p must lie in (0, 1], got {p}")
    b = 1.0 - p

    def F(s, a, u):
        if b == 0.0:
            return a * u - 0.5 * u * u
        rb = np.sqrt(b)
        return (a * p / rb) * np.arctan(rb * u) - (p / (2.0 * b)) * np.log1p(b * u * u)

    return WeightFunction(
        name="completion",
        h=lambda s, t: p / (b * t * t + 1.0),
        dh_dt=lambda s, t: -2.0 * p * b * t / (b * t * t + 1.0) ** 2,
        antiderivative=F,
        domain_note="all of R^2",
    )


def inverse_variance_weight(var_fn: Callable[[np.ndarray], np.ndarray],
                            name: str = "inverse_variance") -> WeightFunction:
    """h(s, t) = 1 / var_fn(s): invert a known noise-variance profile.

    The weight depends on s only, so its t-derivative vanishes and the
    criterion integral has the same closed form as the constant weight.
    """

    def h(s, t):
        v = np.asarray(var_fn(np.asarray(s, float)), dtype=float)
        return np.broadcast_to(1.0 / v, np.broadcast(s, t).shape)

    return WeightFunction(
        name=name,
        h=h,
        dh_dt=lambda s, t: np.zeros(np.broadcast(s, t).shape),
        in_domain=lambda s, t: np.broadcast_to(
            np.asarray(var_fn(np.asarray(s, float))) > 0.0, np.broadcast(s, t).shape
        ),
        antiderivative=lambda s, a, u: (a * u - 0.5 * u * u) / np.asarray(var_fn(np.asarray(s, float))),
        domain_note="var_fn(s) > 0",
    )


def noisy_rdpg_weight(v: float) -> WeightFunction:
    """h(s, t) = 1 / (s (1 - t) + v^2) for an adjacency matrix observed
    through additive Gaussian noise with s.d. v.

    The domain is positivity of the denominator; at v = 0 this is the
    plain Bernoulli form without the s < 1 restriction, which matters
    for noisy graphs whose estimated inner products overshoot 1.
    """
    if v < 0.0:
        raise ValueError(f"noise s.d. must be nonnegative, got {v}")
    c = v * v

    def F(s, a, u):
        # int_0^u (a - t)/(s(1-t) + c) dt with q = (s + c)/s
        q = (s + c) / s
        return (u - (a - q) * (np.log1p(-u / q))) / s

    return WeightFunction(
        name=f"noisy_rdpg(v={v:g})",
        h=lambda s, t: 1.0 / (s * (1.0 - t) + c),
        dh_dt=lambda s, t: s / (s * (1.0 - t) + c) ** 2,
        in_domain=lambda s, t: (s * (1.0 - t) + c) > 0.0,
        antiderivative=F,
        domain_note="s(1 - t) + v^2 > 0",
    )


def builtin_weight(kind: str, p: float | None = None,
                   var_fn: Callable | None = None,
                   v: float | None = None) -> WeightFunction:
    """Construct one of the named weights.

    kind is one of 'constant', 'rdpg', 'completion' (needs p),
    'inverse_variance' (needs var_fn), or 'noisy_rdpg' (needs v).
    """
    if kind == "constant":
        return constant_weight()
    if kind == "rdpg":
        return rdpg_weight()
    if kind == "completion":
        if p is None:
            raise ValueError("completion weight needs the observation probability p")
        return completion_weight(p)
    if kind == "inverse_variance":
        if var_fn is None:
            raise ValueError("inverse_variance weight needs var_fn")
        return inverse_variance_weight(var_fn)
    if kind == "noisy_rdpg":
        if v is None:
            raise ValueError("noisy_rdpg weight needs the contamination s.d. v")
        return noisy_rdpg_weight(v)
    raise ValueError(f"unknown weight kind '{kind}'")
