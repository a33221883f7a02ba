"""Item difficulty estimation by marginal maximum likelihood (EM).

The latent distribution is held at a discretized N(0, 1) throughout, which
pins the scale: difficulties are reported relative to a population mean of
zero.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._estep import expected_counts
from .dataio import Convergence, DataError, ItemBank, ResponseMatrix
from .rasch import _sigmoid
from .validation import check_responses, check_same_items

logger = logging.getLogger(__name__)

CLAMP = 6.0
OK = "ok"
EXTREME_CORRECT = "extreme_all_correct"
EXTREME_INCORRECT = "extreme_all_incorrect"
EXCLUDED = "excluded"
STATUSES = (OK, EXTREME_CORRECT, EXTREME_INCORRECT, EXCLUDED)


@dataclass(frozen=True)
class QuadratureGrid:
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape != weights.shape or nodes.ndim != 1:
            raise ValueError("nodes and weights must be 1-D and equally long")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    def with_weights(self, weights) -> "QuadratureGrid":
        return QuadratureGrid(self.nodes, weights)


def make_grid(count: int = 41, span: float = 5.0) -> QuadratureGrid:
    """Equally spaced nodes on [-span, span] weighted by the standard normal density."""
    if not isinstance(count, (int, np.integer)) or count < 11 or count % 2 == 0:
        raise ValueError(f"grid count must be an odd integer >= 11, got {count!r}")
    if not (span > 0 and math.isfinite(span)):
        raise ValueError(f"grid span must be positive, got {span!r}")
    nodes = np.linspace(-span, span, int(count))
    nodes[count // 2] = 0.0
    dens = np.exp(-0.5 * nodes**2)
    dens = 0.5 * (dens + dens[::-1])  # exact symmetry
    return QuadratureGrid(nodes, dens / dens.sum())


@dataclass(frozen=True)
class ItemEstimate:
    item_id: str
    beta: float | None
    se: float | None
    status: str

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown item status {self.status!r}")
        if self.status == EXCLUDED:
            if self.beta is not None:
                raise ValueError("excluded items carry no difficulty")
        elif self.beta is None or not math.isfinite(self.beta):
            raise ValueError(f"item {self.item_id!r} needs a finite difficulty")
        if self.status in (EXTREME_CORRECT, EXTREME_INCORRECT) and self.se is not None:
            raise ValueError("extreme items carry no standard error")
        if self.se is not None and not self.se > 0:
            raise ValueError(f"item {self.item_id!r} has non-positive standard error")


class ItemParams:
    """Per-item difficulty, standard error and estimation status."""

    def __init__(self, items: Sequence[ItemEstimate]):
        self.items = tuple(items)
        ids = self.item_ids
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate item_id in ItemParams")

    @classmethod
    def from_arrays(cls, item_ids, betas, ses=None, statuses=None) -> "ItemParams":
        n = len(item_ids)
        ses = [None] * n if ses is None else ses
        statuses = [OK] * n if statuses is None else statuses
        items = []
        for iid, b, s, st in zip(item_ids, betas, ses, statuses):
            b = None if b is None or (isinstance(b, float) and math.isnan(b)) else float(b)
            s = None if s is None or (isinstance(s, float) and math.isnan(s)) else float(s)
            items.append(ItemEstimate(str(iid), b, s, st))
        return cls(items)

    @classmethod
    def from_bank(cls, bank: ItemBank) -> "ItemParams":
        return cls.from_arrays(bank.item_ids, bank.fixed_difficulties())

    @property
    def item_ids(self) -> tuple[str, ...]:
        return tuple(i.item_id for i in self.items)

    @property
    def betas(self) -> np.ndarray:
        return np.array([np.nan if i.beta is None else i.beta for i in self.items])

    @property
    def ses(self) -> np.ndarray:
        return np.array([np.nan if i.se is None else i.se for i in self.items])

    @property
    def statuses(self) -> tuple[str, ...]:
        return tuple(i.status for i in self.items)

    @property
    def ok_mask(self) -> np.ndarray:
        return np.array([i.status == OK for i in self.items], dtype=bool)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, item_id: str) -> ItemEstimate:
        for item in self.items:
            if item.item_id == item_id:
                return item
        raise KeyError(item_id)

    def ok_betas(self) -> dict[str, float]:
        return {i.item_id: i.beta for i in self.items if i.status == OK}

    def reorder(self, item_ids) -> "ItemParams":
        by_id = {i.item_id: i for i in self.items}
        return ItemParams([by_id[i] for i in item_ids])

    def to_dict(self) -> dict:
        return {"items": [{"item_id": i.item_id, "beta": i.beta, "se": i.se,
                           "status": i.status} for i in self.items]}

    @classmethod
    def from_dict(cls, d) -> "ItemParams":
        return cls([ItemEstimate(r["item_id"],
                                 None if r.get("beta") is None else float(r["beta"]),
                                 None if r.get("se") is None else float(r["se"]),
                                 r["status"]) for r in d["items"]])

    def __eq__(self, other):
        return isinstance(other, ItemParams) and self.items == other.items

    __hash__ = None

    def __repr__(self):
        n_ok = int(self.ok_mask.sum())
        return f"ItemParams({len(self)} items, {n_ok} ok)"


@dataclass(frozen=True)
class Calibration:
    item_params: ItemParams
    convergence: Convergence
    loglik_history: tuple[float, ...]
    grid: QuadratureGrid


def _newton_difficulties(correct, attempted, nodes, beta0, max_iter=100, tol=1e-10):
    """Solve sum_k (r_jk - n_jk P(node_k, beta_j)) = 0 for each item.

    Damped Newton: each step is clamped to one logit and the iterate to the
    clamp bound.
    """
    beta = beta0.copy()
    for _ in range(max_iter):
        p = _sigmoid(nodes[None, :] - beta[:, None])
        f = (correct - attempted * p).sum(axis=1)
        fprime = (attempted * p * (1.0 - p)).sum(axis=1)
        step = np.clip(-f / fprime, -1.0, 1.0)
        beta = np.clip(beta + step, -CLAMP, CLAMP)
        if np.max(np.abs(step)) < tol:
            break
    return beta


def calibrate_mml(matrix: ResponseMatrix, grid: QuadratureGrid | None = None,
                  tol: float = 1e-4, max_cycles: int = 500, threads: int = 1) -> Calibration:
    """Rasch difficulties by MML-EM with the latent density fixed at ``grid``.

    Items without at least one observed 0 and one observed 1 are flagged
    (``extreme_all_correct`` at -6, ``extreme_all_incorrect`` at +6,
    ``excluded`` when never observed) and left out of the EM loop.
    Non-convergence is reported in the result, not raised.
    """
    grid = make_grid() if grid is None else grid
    if max_cycles < 1:
        raise ValueError("max_cycles must be at least 1")
    # fixed internal column order makes results independent of input column order
    order = np.argsort(np.array(matrix.item_ids, dtype=object), kind="stable")
    data = np.ascontiguousarray(matrix.data[:, order])
    ids = [matrix.item_ids[j] for j in order]

    obs = ~np.isnan(data)
    n_att = obs.sum(axis=0)
    n_cor = np.where(obs, data, 0.0).sum(axis=0)
    status = np.full(len(ids), OK, dtype=object)
    status[n_att == 0] = EXCLUDED
    status[(n_att > 0) & (n_cor == n_att)] = EXTREME_CORRECT
    status[(n_att > 0) & (n_cor == 0)] = EXTREME_INCORRECT
    active = status == OK
    if not active.any():
        raise DataError("no calibratable items: every item is extreme or unobserved")

    sub = np.ascontiguousarray(data[:, active])
    nodes = grid.nodes
    log_w = np.log(grid.weights)
    beta = np.clip(np.log((n_att[active] - n_cor[active]) / n_cor[active]), -CLAMP, CLAMP)

    history = []
    change = math.inf
    converged = False
    cycles = 0
    while cycles < max_cycles:
        correct, attempted, ll = expected_counts(sub, beta, nodes, log_w, threads)
        history.append(ll)
        new_beta = _newton_difficulties(correct, attempted, nodes, beta)
        change = float(np.max(np.abs(new_beta - beta)))
        beta = new_beta
        cycles += 1
        logger.debug("EM cycle %d: loglik %.6f, max change %.3g", cycles, ll, change)
        if change < tol:
            converged = True
            break

    _, attempted, ll = expected_counts(sub, beta, nodes, log_w, threads)
    history.append(ll)
    p = _sigmoid(nodes[None, :] - beta[:, None])
    se = 1.0 / np.sqrt((attempted * p * (1.0 - p)).sum(axis=1))
    if not converged:
        logger.warning("MML-EM stopped after %d cycles (max change %.3g >= tol %.3g)",
                       cycles, change, tol)

    betas = np.full(len(ids), np.nan)
    ses = np.full(len(ids), np.nan)
    betas[active] = beta
    ses[active] = se
    betas[status == EXTREME_CORRECT] = -CLAMP
    betas[status == EXTREME_INCORRECT] = CLAMP
    back = np.argsort(order, kind="stable")
    params = ItemParams.from_arrays(matrix.item_ids, betas[back], ses[back], list(status[back]))
    return Calibration(params, Convergence(cycles, change, converged), tuple(history), grid)


def anchor_shift(params: ItemParams, reference: ItemParams) -> float:
    """Additive constant that equates mean difficulty over shared ok items."""
    ours, ref = params.ok_betas(), reference.ok_betas()
    shared = [i for i in params.item_ids if i in ours and i in ref]
    if len(shared) < 2:
        raise ValueError(f"anchoring needs at least 2 shared ok items, found {len(shared)}")
    return float(np.mean([ref[i] for i in shared]) - np.mean([ours[i] for i in shared]))


def anchor_to(params: ItemParams, reference: ItemParams) -> ItemParams:
    """Translate ``params`` onto the scale of ``reference`` (mean-mean, unit slope).

    Only ok items move; extreme items keep their flagged clamp value.
    """
    c = anchor_shift(params, reference)
    return ItemParams([ItemEstimate(i.item_id, i.beta + c, i.se, i.status) if i.status == OK
                       else i for i in params.items])


class RaschCalibrator(TransformerMixin, BaseEstimator):
    """Rasch item calibration as a scikit-learn transformer.

    ``fit`` estimates item difficulties by MML-EM; ``transform`` returns EAP
    ability estimates under the N(0, 1) calibration prior, one column.

    Parameters
    ----------
    grid_count, grid_span : quadrature grid size and half-width in logits.
    tol : convergence threshold on the largest difficulty change per cycle.
    max_cycles : EM cycle cap; hitting it sets ``convergence_.converged`` False.
    n_threads : worker cap for the E-step. Results do not depend on it.
    """

    def __init__(self, grid_count=41, grid_span=5.0, tol=1e-4, max_cycles=500, n_threads=1):
        self.grid_count = grid_count
        self.grid_span = grid_span
        self.tol = tol
        self.max_cycles = max_cycles
        self.n_threads = n_threads

    def fit(self, X, y=None):
        matrix = check_responses(X)
        grid = make_grid(self.grid_count, self.grid_span)
        result = calibrate_mml(matrix, grid, self.tol, self.max_cycles, self.n_threads)
        self.item_params_ = result.item_params
        self.difficulties_ = result.item_params.betas
        self.standard_errors_ = result.item_params.ses
        self.convergence_ = result.convergence
        self.loglik_history_ = result.loglik_history
        self.n_iter_ = result.convergence.cycles
        self.grid_ = grid
        self.item_ids_ = matrix.item_ids
        self.n_features_in_ = matrix.n_items
        return self

    def _checked(self, X):
        check_is_fitted(self, "item_params_")
        matrix = check_responses(X, item_ids=None if isinstance(X, ResponseMatrix)
                                 else list(self.item_ids_))
        return check_same_items(matrix, self.item_ids_)

    def transform(self, X):
        from .fpc import LatentDist, eap_scores

        matrix = self._checked(X)
        usable = _usable_params(self.item_params_)
        est = eap_scores(matrix, usable, LatentDist.from_grid(self.grid_))
        return est.theta_hat[:, None]

    def score(self, X, y=None):
        """Mean marginal log-likelihood per respondent."""
        matrix = self._checked(X)
        usable = _usable_params(self.item_params_)
        mask = usable.ok_mask
        data = np.ascontiguousarray(matrix.data[:, mask])
        _, _, ll = expected_counts(data, usable.betas[mask], self.grid_.nodes,
                                   np.log(self.grid_.weights))
        return ll / matrix.n_respondents


def _usable_params(params: ItemParams) -> ItemParams:
    """Extreme items scored at their clamp value; excluded ones dropped by status."""
    return ItemParams([ItemEstimate(i.item_id, i.beta, i.se, OK if i.beta is not None
                                    else EXCLUDED) for i in params.items])
