"""Multi-step analyses chaining calibration, FPC, augmentation and evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .augment import (CONDITIONS, ExperimentPool, MatchPlan, MixingProportions,
                      build_experiment_pool, half_sample_ids, learn_proportions,
                      match_centroids)
from .calibrate import OK, Calibration, ItemEstimate, ItemParams, QuadratureGrid, calibrate_mml
from .dataio import Convergence, ResponseMatrix
from .evaluate import ComparisonReport, DistStats, compare_calibrations, dist_stats
from .fpc import AbilityEstimates, LatentDist, LatentFit, eap_scores, estimate_latent_mwu_mem, person_fit


def scoring_params(params: ItemParams) -> ItemParams:
    """Items usable for scoring: extreme items kept at their clamp value."""
    return ItemParams([ItemEstimate(i.item_id, i.beta, i.se, OK) for i in params.items
                       if i.beta is not None])


def _scorable(matrix: ResponseMatrix, params: ItemParams) -> ResponseMatrix:
    """Columns restricted to ``params`` items; rows left empty are dropped."""
    known = set(params.item_ids)
    cols = [j for j, i in enumerate(matrix.item_ids) if i in known]
    if len(cols) == matrix.n_items:
        return matrix
    data = matrix.data[:, cols]
    rows = [r for r in range(matrix.n_respondents) if not np.isnan(data[r]).all()]
    return ResponseMatrix([matrix.respondent_ids[r] for r in rows],
                          [matrix.sources[r] for r in rows],
                          [matrix.item_ids[j] for j in cols], data[rows])


def calibration_scores(matrix: ResponseMatrix, calibration: Calibration,
                       threads: int = 1) -> AbilityEstimates:
    """EAP abilities and person fit under the calibration's N(0, 1) prior."""
    params = scoring_params(calibration.item_params)
    latent = LatentDist.from_grid(calibration.grid)
    sub = _scorable(matrix, params)
    return person_fit(sub, params, eap_scores(sub, params, latent, threads))


@dataclass
class GroupProficiency:
    pooled: LatentFit
    per_source: dict[str, LatentFit]
    abilities: AbilityEstimates
    stats: list[DistStats]

    @property
    def convergence(self) -> Convergence:
        fits = [self.pooled, *self.per_source.values()]
        return Convergence(self.pooled.convergence.cycles,
                           max(f.convergence.max_param_change for f in fits),
                           all(f.convergence.converged for f in fits))


def group_proficiency(matrix: ResponseMatrix, fixed: ItemParams, grid: QuadratureGrid,
                      inner_updates: int = 10, tol: float = 1e-4, max_cycles: int = 500,
                      threads: int = 1) -> GroupProficiency:
    """Latent density per source group (and pooled) with items fixed, then EAP.

    Each source is scored under its own estimated density so groups are not
    shrunk toward one another.
    """
    matrix = _scorable(matrix, fixed)
    args = (grid, inner_updates, tol, max_cycles, threads)
    pooled = estimate_latent_mwu_mem(matrix, fixed, *args)
    per_source, parts = {}, []
    for source in matrix.source_counts():
        group = matrix.where_source(source)
        fit = estimate_latent_mwu_mem(group, fixed, *args)
        per_source[source] = fit
        parts.append(person_fit(group, fixed, eap_scores(group, fixed, fit.latent, threads)))
    index = {rid: k for k, rid in enumerate(matrix.respondent_ids)}
    order = sorted(((index[rid], p, k) for p in parts for k, rid in enumerate(p.respondent_ids)))
    abilities = AbilityEstimates(
        [matrix.respondent_ids[i] for i, _, _ in order],
        [matrix.sources[i] for i, _, _ in order],
        [p.theta_hat[k] for _, p, k in order], [p.se[k] for _, p, k in order],
        [p.n_observed[k] for _, p, k in order], [p.infit[k] for _, p, k in order],
        [p.outfit[k] for _, p, k in order])
    stats = [dist_stats(v, s) for s, v in abilities.by_source().items() if len(v) >= 2]
    return GroupProficiency(pooled, per_source, abilities, stats)


@dataclass
class ConditionResult:
    pool: ExperimentPool
    calibration: Calibration
    abilities: AbilityEstimates


@dataclass
class ExperimentResult:
    conditions: dict[str, ConditionResult]
    plan: MatchPlan
    proportions: MixingProportions
    half_ids: list[str]
    report: ComparisonReport
    stats: list[DistStats] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return all(c.calibration.convergence.converged for c in self.conditions.values())


def run_experiment(humans: ResponseMatrix, synthetic: ResponseMatrix, seed: int,
                   grid: QuadratureGrid, tol: float = 1e-4, max_cycles: int = 500,
                   inner_updates: int = 10, anchor: bool = False,
                   half_ids: Sequence[str] | None = None, threads: int = 1) -> ExperimentResult:
    """Benchmark plus Experiments 1-4, each calibrated and compared to the benchmark.

    Proficiency summaries score every pool against the benchmark difficulties.
    """
    half = half_sample_ids(humans, half_ids)
    plan = match_centroids(humans.select_ids(half), synthetic)
    proportions = learn_proportions(plan, synthetic)
    results: dict[str, ConditionResult] = {}
    for cond in CONDITIONS:
        pool = build_experiment_pool(cond, humans, synthetic, plan, proportions, seed, half)
        cal = calibrate_mml(pool.matrix, grid, tol, max_cycles, threads)
        results[cond] = ConditionResult(pool, cal, calibration_scores(pool.matrix, cal, threads))
    bench = results["benchmark"].calibration.item_params
    report = compare_calibrations(bench, [(c, r.calibration.item_params)
                                          for c, r in results.items()], anchor)
    fixed = ItemParams([i for i in bench.items if i.status == OK])
    stats = []
    for cond, r in results.items():
        sub = _scorable(r.pool.matrix, fixed)
        fit = estimate_latent_mwu_mem(sub, fixed, grid, inner_updates, tol, max_cycles, threads)
        stats.append(dist_stats(eap_scores(sub, fixed, fit.latent, threads).theta_hat, cond))
    return ExperimentResult(results, plan, proportions, half, report, stats)
