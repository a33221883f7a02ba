"""Rasch (1PL) response model: probability, log-likelihood and information."""
from __future__ import annotations

import numpy as np


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ValueError("Rasch parameters must be finite")


def _sigmoid(x):
    """Logistic function, branching on sign so exp never overflows."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _log_sigmoid(x):
    """log(sigmoid(x)) without cancellation at large |x|."""
    x = np.asarray(x, dtype=float)
    return -np.logaddexp(0.0, -x)


def rasch_prob(theta, beta):
    """Probability of a correct response, ``exp(theta - beta) / (1 + exp(theta - beta))``.

    Broadcasts over array inputs; returns a Python float for scalar inputs.
    """
    _check_finite(theta, beta)
    p = _sigmoid(np.subtract(theta, beta, dtype=float))
    return float(p) if p.ndim == 0 else p


def item_information(theta, beta):
    """Fisher information ``P(1 - P)`` of a Rasch item at ``theta``."""
    _check_finite(theta, beta)
    d = np.subtract(theta, beta, dtype=float)
    # P(1-P) == sigmoid(d) * sigmoid(-d); avoids 1 - P rounding to zero
    info = _sigmoid(d) * _sigmoid(-d)
    return float(info) if info.ndim == 0 else info


def response_loglik(pattern, theta, betas):
    """Log-likelihood of one response pattern at ability ``theta``.

    ``pattern`` holds 0, 1 or a missing marker (``None`` or NaN). Missing
    cells contribute nothing, so an all-missing pattern scores 0.
    """
    x = np.array([np.nan if v is None else v for v in pattern], dtype=float)
    b = np.asarray(betas, dtype=float)
    if x.shape != b.shape:
        raise ValueError(
            f"pattern length {x.shape[0]} does not match {b.shape[0]} item difficulties"
        )
    _check_finite(theta, b)
    obs = ~np.isnan(x)
    if not obs.any():
        return 0.0
    d = theta - b[obs]
    xo = x[obs]
    return float(np.sum(xo * _log_sigmoid(d) + (1.0 - xo) * _log_sigmoid(-d)))


def loglik_grid(data, betas, nodes):
    """Per-respondent log-likelihood at every quadrature node.

    ``data`` is an (n, j) float array with NaN for missing cells. Returns an
    (n, k) array whose entry (i, k) is ``response_loglik(data[i], nodes[k], betas)``.
    """
    data = np.asarray(data, dtype=float)
    obs = ~np.isnan(data)
    x = np.where(obs, data, 0.0)
    d = np.asarray(nodes, dtype=float)[None, :] - np.asarray(betas, dtype=float)[:, None]
    log_p = _log_sigmoid(d)  # (j, k)
    log_q = _log_sigmoid(-d)
    correct = x
    wrong = obs.astype(float) - x
    return correct @ log_p + wrong @ log_q
