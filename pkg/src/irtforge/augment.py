"""Human-centroid matching and proportional resampling of synthetic respondents.

Each human respondent is paired with the nearest synthetic respondent
(normalized Hamming distance over jointly observed items). The source mix
of the matched set then drives resampling of larger synthetic pools.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from typing import Mapping, Sequence

import numpy as np

from .dataio import DataError, ResponseMatrix
from .simulate import rng_for

HUMAN = "human"
CONDITIONS = ("benchmark", "exp1", "exp2", "exp3", "exp4")
RESAMPLE_STREAM = 3


@dataclass(frozen=True)
class MatchPair:
    human_id: str
    synthetic_id: str
    distance: float
    overlap: int


@dataclass(frozen=True)
class MatchPlan:
    pairs: tuple[MatchPair, ...]

    def __len__(self):
        return len(self.pairs)

    def for_humans(self, human_ids: Sequence[str]) -> "MatchPlan":
        by_human = {p.human_id: p for p in self.pairs}
        missing = [h for h in human_ids if h not in by_human]
        if missing:
            raise DataError(f"match plan has no pair for {', '.join(missing)}")
        return MatchPlan(tuple(by_human[h] for h in human_ids))

    def to_dict(self):
        return {"pairs": [{"human_id": p.human_id, "synthetic_id": p.synthetic_id,
                           "distance": p.distance, "overlap": p.overlap} for p in self.pairs]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(MatchPair(r["human_id"], r["synthetic_id"], float(r["distance"]),
                                   int(r["overlap"])) for r in d["pairs"]))


def _aligned(humans: ResponseMatrix, synthetic: ResponseMatrix) -> ResponseMatrix:
    if set(humans.item_ids) != set(synthetic.item_ids):
        raise DataError("human and synthetic pools must share the same items")
    return synthetic.reorder_items(humans.item_ids)


def match_centroids(humans: ResponseMatrix, synthetic: ResponseMatrix) -> MatchPlan:
    """Nearest synthetic respondent for every human, with replacement.

    Distance is the share of disagreements among jointly observed items.
    Ties go to the lexicographically smallest synthetic id, so the result
    does not depend on synthetic row order.
    """
    synthetic = _aligned(humans, synthetic)
    order = sorted(range(synthetic.n_respondents), key=lambda k: synthetic.respondent_ids[k])
    syn = synthetic.take(order)

    def split(m):
        obs = m.observed.astype(float)
        ones = np.where(m.observed, m.data, 0.0)
        return ones, obs - ones, obs

    h1, h0, hobs = split(humans)
    s1, s0, sobs = split(syn)
    disagree = h1 @ s0.T + h0 @ s1.T
    joint = hobs @ sobs.T
    if (joint == 0).any():
        i, k = map(int, np.argwhere(joint == 0)[0])
        raise DataError(f"human {humans.respondent_ids[i]!r} and synthetic "
                        f"{syn.respondent_ids[k]!r} share no observed items")
    # equal rationals divide to identical doubles, so exact ties stay ties
    dist = disagree / joint
    best = np.argmin(dist, axis=1)  # first minimum == smallest id
    pairs = tuple(MatchPair(hid, syn.respondent_ids[b], float(dist[i, b]), int(joint[i, b]))
                  for i, (hid, b) in enumerate(zip(humans.respondent_ids, best)))
    return MatchPlan(pairs)


class MixingProportions(Mapping[str, float]):
    """Source label -> fraction, normalized to sum to one, keys sorted."""

    def __init__(self, fractions: Mapping[str, float]):
        if not fractions:
            raise ValueError("mixing proportions need at least one source")
        vals = {str(k): float(v) for k, v in fractions.items()}
        if any(v < 0 or not math.isfinite(v) for v in vals.values()):
            raise ValueError("fractions must be finite and non-negative")
        total = sum(vals.values())
        if total <= 0:
            raise ValueError("fractions must not all be zero")
        self._fractions = {k: vals[k] / total for k in sorted(vals)}

    def __getitem__(self, key):
        return self._fractions[key]

    def __iter__(self):
        return iter(self._fractions)

    def __len__(self):
        return len(self._fractions)

    def __repr__(self):
        return f"MixingProportions({self._fractions!r})"

    def to_dict(self):
        return {"fractions": dict(self._fractions)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["fractions"])


def learn_proportions(plan: MatchPlan, synthetic: ResponseMatrix) -> MixingProportions:
    """Share of each source among the matched synthetic respondents (with multiplicity)."""
    if not plan.pairs:
        raise ValueError("match plan is empty")
    source_of = dict(zip(synthetic.respondent_ids, synthetic.sources))
    counts: dict[str, int] = {}
    for p in plan.pairs:
        s = source_of[p.synthetic_id]
        counts[s] = counts.get(s, 0) + 1
    return MixingProportions({s: c / len(plan.pairs) for s, c in counts.items()})


def apportion(proportions: Mapping[str, float], n: int) -> dict[str, int]:
    """Largest-remainder allocation of ``n`` seats.

    Remainders are compared at 12 decimal places so float noise cannot
    split a genuine tie; ties go to the lexicographically smallest source.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    total = sum(proportions.values())
    quotas = {s: n * f / total for s, f in proportions.items()}
    seats = {s: int(math.floor(q + 1e-12)) for s, q in quotas.items()}
    left = n - sum(seats.values())
    rem = {s: round(Decimal(repr(quotas[s] - seats[s])), 12) for s in quotas}
    for s in sorted(quotas, key=lambda s: (-rem[s], s))[:left]:
        seats[s] += 1
    return dict(sorted(seats.items()))


def resample_pool(synthetic: ResponseMatrix, proportions: Mapping[str, float], n: int,
                  seed: int, tag: str = "r") -> ResponseMatrix:
    """Draw ``n`` synthetic respondents with per-source counts fixed by apportionment.

    Within a source, respondents are sampled uniformly with replacement.
    New ids are ``<original id>#<tag><k>`` with ``k`` the draw index.
    """
    counts = apportion(proportions, n)
    rows_by_source: dict[str, list[int]] = {}
    for k, s in enumerate(synthetic.sources):
        rows_by_source.setdefault(s, []).append(k)
    absent = [s for s, c in counts.items() if c > 0 and s not in rows_by_source]
    if absent:
        raise DataError(f"sources absent from synthetic pool: {', '.join(absent)}")
    rng = rng_for(seed, RESAMPLE_STREAM)
    picked = []
    for s, c in counts.items():  # sorted by source
        if c:
            rows = rows_by_source[s]
            picked.extend(rows[j] for j in rng.integers(0, len(rows), size=c))
    return synthetic.take(picked, [f"{synthetic.respondent_ids[r]}#{tag}{k + 1}"
                                   for k, r in enumerate(picked)])


@dataclass(frozen=True)
class ExperimentPool:
    condition: str
    matrix: ResponseMatrix
    seed: int

    @property
    def composition(self) -> dict[str, int]:
        return self.matrix.source_counts()

    @property
    def size(self) -> int:
        return self.matrix.n_respondents


def half_sample_ids(humans: ResponseMatrix, ids: Sequence[str] | None = None) -> list[str]:
    """The designated human half: first ceil(N/2) ids in sorted order unless given."""
    if ids is not None:
        unknown = [i for i in ids if i not in set(humans.respondent_ids)]
        if unknown:
            raise DataError(f"unknown human ids: {', '.join(unknown)}")
        return list(ids)
    return sorted(humans.respondent_ids)[: math.ceil(humans.n_respondents / 2)]


def build_experiment_pool(condition: str, humans: ResponseMatrix, synthetic: ResponseMatrix,
                          plan: MatchPlan | None = None,
                          proportions: Mapping[str, float] | None = None,
                          seed: int = 0, half_ids: Sequence[str] | None = None) -> ExperimentPool:
    """Respondent pool for one condition.

    benchmark: all humans. exp1: the human half. exp2: the half plus the
    synthetic respondent each of them matched. exp3: the half plus an
    equal number resampled by ``proportions``. exp4: N resampled only.
    """
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    half = humans.select_ids(half_sample_ids(humans, half_ids))
    if condition == "benchmark":
        matrix = humans
    elif condition == "exp1":
        matrix = half
    elif condition == "exp2":
        if plan is None:
            raise ValueError("exp2 needs a match plan")
        pairs = plan.for_humans(half.respondent_ids).pairs
        syn = _aligned(humans, synthetic)
        row = {rid: k for k, rid in enumerate(syn.respondent_ids)}
        matched = syn.take([row[p.synthetic_id] for p in pairs],
                           [f"{p.synthetic_id}#m{k + 1}" for k, p in enumerate(pairs)])
        matrix = ResponseMatrix.concat([half, matched])
    else:
        if proportions is None:
            raise ValueError(f"{condition} needs mixing proportions")
        syn = _aligned(humans, synthetic)
        n = half.n_respondents if condition == "exp3" else humans.n_respondents
        drawn = resample_pool(syn, proportions, n, seed)
        matrix = ResponseMatrix.concat([half, drawn]) if condition == "exp3" else drawn
    return ExperimentPool(condition, matrix, seed)
