"""Fixed-parameter calibration: latent distribution, EAP scores, person fit.

Item difficulties are frozen. The latent density is re-estimated on the
quadrature grid by repeated weight updates (several per EM cycle), and
respondents are scored by posterior mean under that density.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._estep import map_chunks, normalize_rows
from .calibrate import ItemParams, QuadratureGrid, make_grid
from .dataio import Convergence, DataError, ResponseMatrix
from .rasch import loglik_grid, rasch_prob
from .validation import check_responses

logger = logging.getLogger(__name__)


def _moments(nodes, weights):
    mean = float(np.dot(weights, nodes))
    c = nodes - mean
    m2 = float(np.dot(weights, c**2))
    m4 = float(np.dot(weights, c**4))
    kurt = m4 / m2**2 if m2 > 0 else math.nan
    return mean, math.sqrt(m2), kurt


class LatentDist:
    """Discrete latent density on fixed nodes with its exact moments.

    ``kurtosis`` is raw (a normal density gives 3).
    """

    def __init__(self, nodes, weights):
        self.grid = QuadratureGrid(nodes, weights)
        self.mean, self.sd, self.kurtosis = _moments(self.grid.nodes, self.grid.weights)

    @classmethod
    def from_grid(cls, grid: QuadratureGrid) -> "LatentDist":
        return cls(grid.nodes, grid.weights)

    @property
    def nodes(self):
        return self.grid.nodes

    @property
    def weights(self):
        return self.grid.weights

    def to_dict(self):
        d = {"nodes": self.nodes.tolist(), "weights": self.weights.tolist(),
             "mean": self.mean, "sd": self.sd}
        if math.isfinite(self.kurtosis):
            d["kurtosis"] = self.kurtosis
        return d

    @classmethod
    def from_dict(cls, d):
        w = np.asarray(d["weights"], dtype=float)
        return cls(d["nodes"], w / w.sum())

    def __repr__(self):
        return (f"LatentDist(mean={self.mean:.3f}, sd={self.sd:.3f}, "
                f"kurtosis={self.kurtosis:.3f}, nodes={self.grid.size})")


@dataclass(frozen=True)
class LatentFit:
    latent: LatentDist
    convergence: Convergence
    loglik_history: tuple[float, ...]


class AbilityEstimates:
    """Per-respondent EAP ability, posterior SD and person-fit mean squares.

    ``infit``/``outfit`` are NaN until :func:`person_fit` fills them.
    """

    def __init__(self, respondent_ids, sources, theta_hat, se, n_observed,
                 infit=None, outfit=None):
        self.respondent_ids = tuple(respondent_ids)
        self.sources = tuple(sources)
        n = len(self.respondent_ids)
        self.theta_hat = np.asarray(theta_hat, dtype=float)
        self.se = np.asarray(se, dtype=float)
        self.n_observed = np.asarray(n_observed, dtype=int)
        self.infit = np.full(n, np.nan) if infit is None else np.asarray(infit, dtype=float)
        self.outfit = np.full(n, np.nan) if outfit is None else np.asarray(outfit, dtype=float)
        for arr in (self.theta_hat, self.se, self.n_observed, self.infit, self.outfit):
            if arr.shape != (n,):
                raise ValueError("ability arrays must have one entry per respondent")
        if n and (self.n_observed.min() < 1 or not np.all(self.se > 0)):
            raise ValueError("every respondent needs >= 1 observed item and se > 0")

    def __len__(self):
        return len(self.respondent_ids)

    def by_source(self) -> dict[str, np.ndarray]:
        groups: dict[str, list[float]] = {}
        for s, t in zip(self.sources, self.theta_hat):
            groups.setdefault(s, []).append(t)
        return {s: np.array(v) for s, v in sorted(groups.items())}

    def to_dict(self):
        rows = []
        for k, rid in enumerate(self.respondent_ids):
            rows.append({
                "respondent_id": rid, "source": self.sources[k],
                "theta_hat": float(self.theta_hat[k]), "se": float(self.se[k]),
                "n_observed": int(self.n_observed[k]),
                "infit": None if math.isnan(self.infit[k]) else float(self.infit[k]),
                "outfit": None if math.isnan(self.outfit[k]) else float(self.outfit[k]),
            })
        return {"respondents": rows}

    @classmethod
    def from_dict(cls, d):
        rows = d["respondents"]

        def col(key):
            return [np.nan if r.get(key) is None else r[key] for r in rows]

        return cls([r["respondent_id"] for r in rows], [r["source"] for r in rows],
                   col("theta_hat"), col("se"), [r["n_observed"] for r in rows],
                   col("infit"), col("outfit"))


def _aligned_betas(matrix: ResponseMatrix, fixed: ItemParams) -> np.ndarray:
    """Difficulties in matrix column order; every column must be an ok fixed item."""
    ok = fixed.ok_betas()
    unknown = [i for i in matrix.item_ids if i not in set(fixed.item_ids)]
    if unknown:
        raise DataError(f"items without fixed difficulty: {', '.join(unknown)}")
    not_ok = [i for i in matrix.item_ids if i not in ok]
    if not_ok:
        raise DataError(f"fixed items must have status ok: {', '.join(not_ok)}")
    return np.array([ok[i] for i in matrix.item_ids])


def _loglik(matrix, betas, nodes, threads):
    parts = map_chunks(lambda rows: loglik_grid(matrix.data[rows], betas, nodes),
                       matrix.n_respondents, threads)
    return np.vstack(parts)


def _log(w):
    with np.errstate(divide="ignore"):
        return np.log(w)


def estimate_latent_mwu_mem(matrix, fixed: ItemParams, grid: QuadratureGrid | None = None,
                            inner_updates: int = 10, tol: float = 1e-4,
                            max_cycles: int = 500, threads: int = 1,
                            callback=None) -> LatentFit:
    """Re-estimate quadrature weights for a group with item difficulties held fixed.

    Each EM cycle applies ``inner_updates`` updates ``w_k <- mean_i post_ik``,
    recomputing posteriors in between. Iteration stops once a full cycle
    moves no weight by ``tol`` or more. ``callback(weights)``, if given, sees
    the weights after every update.
    """
    matrix = check_responses(matrix)
    if matrix.n_respondents == 0:
        raise DataError("empty effective matrix")
    if inner_updates < 1 or max_cycles < 1:
        raise ValueError("inner_updates and max_cycles must be positive")
    grid = make_grid() if grid is None else grid
    betas = _aligned_betas(matrix, fixed)
    L = _loglik(matrix, betas, grid.nodes, threads)
    # items are frozen, so the node likelihoods never change: scale once
    row_max = L.max(axis=1)
    lik = np.exp(L - row_max[:, None])
    base = float(row_max.sum())
    n = matrix.n_respondents

    def marginal(w):
        return lik @ w

    w = grid.weights.copy()
    history = []
    change = math.inf
    converged = False
    cycles = 0
    while cycles < max_cycles:
        start = w
        for _ in range(inner_updates):
            m = marginal(w)
            history.append(base + float(np.log(m).sum()))
            w = w * (lik.T @ (1.0 / m)) / n
            w /= w.sum()
            if callback is not None:
                callback(w.copy())
        cycles += 1
        change = float(np.max(np.abs(w - start)))
        if change < tol:
            converged = True
            break
    history.append(base + float(np.log(marginal(w)).sum()))
    if not converged:
        logger.warning("MWU-MEM stopped after %d cycles (max weight change %.3g)", cycles, change)
    return LatentFit(LatentDist(grid.nodes, w), Convergence(cycles, change, converged),
                     tuple(history))


def eap_scores(matrix, fixed: ItemParams, latent: LatentDist, threads: int = 1) -> AbilityEstimates:
    """Posterior mean ability and posterior SD with ``latent`` as the prior."""
    matrix = check_responses(matrix)
    betas = _aligned_betas(matrix, fixed)
    n_obs = matrix.observed.sum(axis=1)
    if n_obs.size and n_obs.min() == 0:
        rid = matrix.respondent_ids[int(np.argmin(n_obs))]
        raise DataError(f"respondent {rid!r} has no observed items")
    nodes = latent.nodes
    post, _ = normalize_rows(_loglik(matrix, betas, nodes, threads) + _log(latent.weights))
    theta = post @ nodes
    var = post @ nodes**2 - theta**2
    se = np.sqrt(np.maximum(var, np.finfo(float).tiny))
    return AbilityEstimates(matrix.respondent_ids, matrix.sources, theta, se, n_obs)


def person_fit(matrix, fixed: ItemParams, abilities: AbilityEstimates) -> AbilityEstimates:
    """Fill infit and outfit mean squares from residuals at the EAP abilities."""
    matrix = check_responses(matrix)
    if matrix.respondent_ids != abilities.respondent_ids:
        raise ValueError("abilities must cover the matrix respondents in order")
    betas = _aligned_betas(matrix, fixed)
    p = rasch_prob(abilities.theta_hat[:, None], betas[None, :])
    obs = matrix.observed
    x = np.where(obs, matrix.data, 0.0)
    var = p * (1.0 - p)
    sq = np.where(obs, (x - p) ** 2, 0.0)
    n_obs = obs.sum(axis=1)
    outfit = np.where(obs, sq / var, 0.0).sum(axis=1) / n_obs
    infit = sq.sum(axis=1) / np.where(obs, var, 0.0).sum(axis=1)
    return AbilityEstimates(abilities.respondent_ids, abilities.sources, abilities.theta_hat,
                            abilities.se, abilities.n_observed, infit, outfit)


class FixedParameterCalibrator(TransformerMixin, BaseEstimator):
    """Latent-distribution estimation and EAP scoring against frozen items.

    ``difficulties`` is an :class:`ItemParams` or an array aligned with the
    columns of ``X``. ``fit`` runs MWU-MEM; ``transform`` returns EAP
    abilities under the fitted density as a single column.
    """

    def __init__(self, difficulties=None, grid_count=41, grid_span=5.0, inner_updates=10,
                 tol=1e-4, max_cycles=500, n_threads=1):
        self.difficulties = difficulties
        self.grid_count = grid_count
        self.grid_span = grid_span
        self.inner_updates = inner_updates
        self.tol = tol
        self.max_cycles = max_cycles
        self.n_threads = n_threads

    def _fixed(self, matrix):
        if self.difficulties is None:
            raise ValueError("difficulties must be supplied")
        if isinstance(self.difficulties, ItemParams):
            return self.difficulties
        betas = np.asarray(self.difficulties, dtype=float)
        if betas.shape != (matrix.n_items,):
            raise ValueError("difficulties must have one entry per column of X")
        return ItemParams.from_arrays(matrix.item_ids, betas)

    def fit(self, X, y=None):
        matrix = check_responses(X)
        self.fixed_params_ = self._fixed(matrix)
        grid = make_grid(self.grid_count, self.grid_span)
        fit = estimate_latent_mwu_mem(matrix, self.fixed_params_, grid, self.inner_updates,
                                      self.tol, self.max_cycles, self.n_threads)
        self.latent_ = fit.latent
        self.convergence_ = fit.convergence
        self.loglik_history_ = fit.loglik_history
        self.n_iter_ = fit.convergence.cycles
        self.n_features_in_ = matrix.n_items
        return self

    def abilities(self, X) -> AbilityEstimates:
        check_is_fitted(self, "latent_")
        matrix = check_responses(X, item_ids=None if isinstance(X, ResponseMatrix)
                                 else list(self.fixed_params_.item_ids))
        est = eap_scores(matrix, self.fixed_params_, self.latent_, self.n_threads)
        return person_fit(matrix, self.fixed_params_, est)

    def transform(self, X):
        check_is_fitted(self, "latent_")
        matrix = check_responses(X, item_ids=None if isinstance(X, ResponseMatrix)
                                 else list(self.fixed_params_.item_ids))
        return eap_scores(matrix, self.fixed_params_, self.latent_, self.n_threads).theta_hat[:, None]
