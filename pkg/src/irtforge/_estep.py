"""Posterior evaluation over a quadrature grid, shared by MML and FPC.

Rows are processed in fixed-size chunks and chunk results are reduced in
chunk order, so the output is bit-identical for any worker count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .rasch import loglik_grid

CHUNK_ROWS = 512


def _chunks(n):
    return [slice(s, min(s + CHUNK_ROWS, n)) for s in range(0, n, CHUNK_ROWS)]


def map_chunks(fn, n, threads=1):
    """Apply ``fn(slice)`` to each row chunk; results come back in chunk order."""
    slices = _chunks(n)
    if threads is None or threads <= 1 or len(slices) == 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, slices))


def normalize_rows(logpost):
    """Row-normalize log-posteriors; returns (posterior, per-row log marginal)."""
    m = logpost.max(axis=1, keepdims=True)
    post = np.exp(logpost - m)
    s = post.sum(axis=1, keepdims=True)
    post /= s
    return post, (m + np.log(s))[:, 0]


def expected_counts(data, betas, nodes, log_weights, threads=1):
    """E-step of Rasch MML.

    Returns ``(correct, attempted, loglik)`` where ``correct[j, k]`` and
    ``attempted[j, k]`` are posterior-expected counts at node ``k`` over
    observed cells of item ``j``, and ``loglik`` is the marginal
    log-likelihood of the data.
    """
    obs = ~np.isnan(data)
    x = np.where(obs, data, 0.0)
    obs_f = obs.astype(float)

    def work(rows):
        post, ll = normalize_rows(loglik_grid(data[rows], betas, nodes) + log_weights)
        return x[rows].T @ post, obs_f[rows].T @ post, ll.sum()

    parts = map_chunks(work, data.shape[0], threads)
    correct, attempted, loglik = parts[0][0].copy(), parts[0][1].copy(), parts[0][2]
    for r, n, ll in parts[1:]:
        correct += r
        attempted += n
        loglik += ll
    return correct, attempted, float(loglik)
