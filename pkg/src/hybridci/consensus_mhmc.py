"""Metropolis-Hastings averaging weights and one averaging round."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import sparse

from .network import GraphSnapshot


def mh_weights(graph: GraphSnapshot) -> sparse.csr_matrix:
    """Symmetric doubly stochastic weights ``1 / (1 + max(d_i, d_j))`` on edges.

    Degrees count neighbours only (no self-loop); the diagonal takes the
    remaining mass so every row sums to one.
    """
    n = graph.n_agents
    d = graph.degrees()
    rows, cols, vals = [], [], []
    diag = np.ones(n)
    for i, j in sorted(graph.edges):
        g = 1.0 / (1.0 + max(d[i], d[j]))
        rows += [i, j]
        cols += [j, i]
        vals += [g, g]
        diag[i] -= g
        diag[j] -= g
    rows += list(range(n))
    cols += list(range(n))
    vals += list(diag)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def mh_average_round(values: Sequence[np.ndarray], weights: sparse.spmatrix) -> list[np.ndarray]:
    """Replace each agent's value with its weighted neighbourhood average."""
    arrays = [np.asarray(v, dtype=float) for v in values]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"agent values have mismatched shapes {sorted(shapes)}")
    if weights.shape != (len(arrays), len(arrays)):
        raise ValueError(f"weights are {weights.shape} for {len(arrays)} agents")
    (shape,) = shapes
    flat = np.stack([a.ravel() for a in arrays])
    mixed = weights @ flat
    return [row.reshape(shape) for row in mixed]
