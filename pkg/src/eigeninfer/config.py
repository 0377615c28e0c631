"""Run configuration with a fixed JSON schema."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

SCENARIOS = ("rdpg_curve", "completion", "file")
CRITERIA = ("M", "GMM", "ETEL", "all")
WEIGHT_KINDS = ("constant", "rdpg", "completion", "inverse_variance", "noisy_rdpg")


@dataclass(frozen=True)
class RunConfig:
    """Everything a harness run needs, serializable to a flat JSON object.

    The JSON document carries exactly these keys; unknown or missing
    keys are rejected on load so configs stay round-trippable.
    """

    scenario: str = "rdpg_curve"
    n: int = 200
    d: int = 1
    p: float = 0.6
    sigma: float = 1.0
    v: float = 0.0
    weight: str = "rdpg"
    criterion: str = "all"
    theta_radius: float = 1.0
    burnin: int = 1000
    samples: int = 2000
    proposal_scale: float = 0.1
    chains: int = 1
    adapt: bool = True
    replicates: int = 1
    seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")
        if self.weight not in WEIGHT_KINDS:
            raise ValueError(f"weight must be one of {WEIGHT_KINDS}")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.d < 1:
            raise ValueError("d must be at least 1")
        if not (0.0 < self.p <= 1.0):
            raise ValueError("p must lie in (0, 1]")
        if self.sigma < 0.0 or self.v < 0.0:
            raise ValueError("noise levels must be nonnegative")
        if self.theta_radius <= 0.0:
            raise ValueError("theta_radius must be positive")
        if self.burnin < 0 or self.samples < 1:
            raise ValueError("invalid chain lengths")
        if self.proposal_scale <= 0.0:
            raise ValueError("proposal_scale must be positive")
        if self.chains < 1 or self.replicates < 1:
            raise ValueError("chains and replicates must be >= 1")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ValueError("config document must be a JSON object")
        expected = {f.name for f in fields(cls)}
        unknown = set(data) - expected
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        missing = expected - set(data)
        if missing:
            raise ValueError(f"missing config keys: {sorted(missing)}")
        return cls(**data)

    def chain_config(self, seed: int):
        from .sampler import ChainConfig

        return ChainConfig(burnin=self.burnin, samples=self.samples,
                           proposal_scale=self.proposal_scale, seed=seed,
                           chains=self.chains, adapt=self.adapt)


def scenario_one(n: int = 800, **overrides) -> RunConfig:
    """Bernoulli adjacency sampling of the sine-bump curve."""
    base = dict(scenario="rdpg_curve", n=n, d=1, weight="rdpg",
                theta_radius=1.0)
    base.update(overrides)
    return RunConfig(**base)


def scenario_two(n: int = 400, **overrides) -> RunConfig:
    """Masked noisy observation of the sine-bump signal matrix."""
    base = dict(scenario="completion", n=n, d=1, p=0.6, sigma=1.0,
                weight="completion", theta_radius=1.2)
    base.update(overrides)
    return RunConfig(**base)
