"""Synthetic respondent pools with known abilities.

Randomness comes from numpy's PCG64 generator. Each sampling step draws
from its own child stream of ``SeedSequence(seed)`` (thetas use spawn key
0, responses 1, masks 2), so one user seed drives a whole simulation
without the steps sharing bits.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import DataError, ResponseMatrix
from .rasch import rasch_prob

THETA_STREAM, RESPONSE_STREAM, MASK_STREAM = 0, 1, 2


def rng_for(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(stream,)))


@dataclass(frozen=True)
class Component:
    label: str
    n: int
    mean: float
    sd: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"component {self.label!r} needs n >= 1")
        if not self.sd >= 0:
            raise ValueError(f"component {self.label!r} needs sd >= 0")


@dataclass(frozen=True)
class PopulationSpec:
    components: tuple[Component, ...]
    missing_rate: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if not self.components:
            raise ValueError("population needs at least one component")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError("missing_rate must lie in [0, 1)")
        if self.seed is not None and self.seed < 0:
            raise ValueError("seed must be a non-negative integer")

    def component(self, label: str) -> Component:
        for c in self.components:
            if c.label == label:
                return c
        raise KeyError(label)

    @property
    def size(self) -> int:
        return sum(c.n for c in self.components)

    def to_dict(self):
        return {"components": [{"label": c.label, "n": c.n, "mean": c.mean, "sd": c.sd}
                               for c in self.components],
                "missing_rate": self.missing_rate, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        try:
            comps = tuple(Component(str(c["label"]), int(c["n"]), float(c["mean"]),
                                    float(c["sd"])) for c in d["components"])
            seed = d.get("seed")
            return cls(comps, float(d.get("missing_rate", 0.0)),
                       None if seed is None else int(seed))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"invalid population spec: {exc}") from None


@dataclass(frozen=True)
class LabelledThetas:
    respondent_ids: tuple[str, ...]
    sources: tuple[str, ...]
    values: np.ndarray = field(repr=False)


def sample_thetas(spec: PopulationSpec, seed: int | None = None) -> LabelledThetas:
    """Normal draws per component, in component order; ``sd == 0`` gives constants."""
    seed = spec.seed if seed is None else seed
    if seed is None:
        raise ValueError("a seed is required")
    rng = rng_for(seed, THETA_STREAM)
    ids, sources, values = [], [], []
    for c in spec.components:
        draws = rng.normal(c.mean, c.sd, size=c.n) if c.sd > 0 else np.full(c.n, float(c.mean))
        values.append(draws)
        ids.extend(f"{c.label}_{k + 1:04d}" for k in range(c.n))
        sources.extend([c.label] * c.n)
    return LabelledThetas(tuple(ids), tuple(sources), np.concatenate(values))


def simulate_responses(thetas: LabelledThetas, betas, missing_rate: float = 0.0,
                       seed: int = 0, item_ids=None) -> ResponseMatrix:
    """Bernoulli responses at Rasch probabilities, then MCAR masking.

    A row masked entirely is re-masked once; if it is still empty the call
    fails.
    """
    betas = np.asarray(betas, dtype=float)
    theta = np.asarray(thetas.values, dtype=float)
    if not 0.0 <= missing_rate < 1.0:
        raise ValueError("missing_rate must lie in [0, 1)")
    p = rasch_prob(theta[:, None], betas[None, :])
    u = rng_for(seed, RESPONSE_STREAM).random(p.shape)
    data = (u < p).astype(float)
    if missing_rate > 0:
        mask_rng = rng_for(seed, MASK_STREAM)
        mask = mask_rng.random(p.shape) < missing_rate
        empty = mask.all(axis=1)
        if empty.any():
            mask[empty] = mask_rng.random((int(empty.sum()), p.shape[1])) < missing_rate
            if mask.all(axis=1).any():
                raise DataError("masking left a respondent with no observed responses")
        data[mask] = np.nan
    if item_ids is None:
        item_ids = [f"q{j + 1}" for j in range(betas.shape[0])]
    return ResponseMatrix(thetas.respondent_ids, thetas.sources, item_ids, data)


# Means and SDs of the proficiency distributions reported for college
# students and six LLMs; 150 synthetic respondents per model, 100 humans.
PAPER_ANALOGUE = (
    ("human", 100, 0.00, 0.98),
    ("gpt3.5", 150, 0.27, 0.58),
    ("gpt4", 150, 0.00, 0.31),
    ("gemini", 150, -0.54, 0.29),
    ("cohere", 150, -0.40, 0.34),
    ("llama2", 150, -1.81, 0.44),
    ("llama3", 150, 0.37, 0.51),
)


def paper_analogue_population(seed: int | None = None, missing_rate: float = 0.0) -> PopulationSpec:
    return PopulationSpec(tuple(Component(*row) for row in PAPER_ANALOGUE), missing_rate, seed)


def simulate_population(spec: PopulationSpec, betas, seed: int | None = None,
                        item_ids=None) -> tuple[LabelledThetas, ResponseMatrix]:
    """Draw thetas and responses for ``spec`` from a single seed."""
    seed = spec.seed if seed is None else seed
    thetas = sample_thetas(spec, seed)
    return thetas, simulate_responses(thetas, betas, spec.missing_rate, seed, item_ids)
