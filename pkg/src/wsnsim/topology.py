"""Node deployment: uniform random placement and connectivity checks."""
from __future__ import annotations

import math

import numpy as np
from scipy.sparse.csgraph import connected_components


def uniform_deployment(n_nodes: int, field_m: float, bs_pos, rng: np.random.Generator) -> np.ndarray:
    """Positions array with the BS in row 0 and ``n_nodes`` sensors after it."""
    pos = np.empty((n_nodes + 1, 2))
    pos[0] = bs_pos
    pos[1:] = rng.uniform(0.0, field_m, size=(n_nodes, 2))
    return pos


def source_sink_deployment(n_nodes: int, field_m: float, bs_pos, rng: np.random.Generator,
                           source_distance_m: float = 350.0, n_sources: int = 2) -> np.ndarray:
    """Sources pinned ``source_distance_m`` from the BS, the rest uniform.

    Rows 1..n_sources hold the sources, spread over the quarter arc that
    stays inside the field.
    """
    pos = uniform_deployment(n_nodes, field_m, bs_pos, rng)
    bx, by = bs_pos
    for i in range(n_sources):
        theta = (i + 1) * (math.pi / 2) / (n_sources + 1)
        x = min(max(bx + source_distance_m * math.cos(theta), 0.0), field_m)
        y = min(max(by + source_distance_m * math.sin(theta), 0.0), field_m)
        pos[1 + i] = (x, y)
    return pos


def is_connected(pos: np.ndarray, radius_m: float) -> bool:
    diff = pos[:, None, :] - pos[None, :, :]
    adj = (diff**2).sum(axis=2) <= radius_m**2
    n_comp, _ = connected_components(adj, directed=False)
    return n_comp == 1


def connected_deployment(n_nodes: int, field_m: float, bs_pos, radius_m: float,
                         rng: np.random.Generator, max_tries: int = 1000) -> np.ndarray:
    """Redraw uniform deployments until the unit-disk graph (BS included) is connected."""
    for _ in range(max_tries):
        pos = uniform_deployment(n_nodes, field_m, bs_pos, rng)
        if is_connected(pos, radius_m):
            return pos
    raise RuntimeError(f"no connected deployment after {max_tries} draws")
