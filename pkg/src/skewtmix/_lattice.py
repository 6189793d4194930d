"""Rank-1 lattice generating vectors for randomized quasi-Monte Carlo.

The vectors were constructed offline by a component-by-component search
minimizing the worst-case error in the order-2 weighted Korobov space
(product weights 0.9**j).  Because the construction is componentwise, a
prefix of each vector is itself a valid generating vector for fewer
dimensions.
"""
from __future__ import annotations

import numpy as np

# N (prime) -> generating vector, 12 components.
GENERATING_VECTORS: dict[int, tuple[int, ...]] = {
    509: (1, 151, 232, 168, 34, 102, 2, 70, 68, 66, 34, 34),
    1021: (1, 374, 156, 285, 342, 453, 389, 399, 508, 451, 171, 57),
    2039: (1, 462, 711, 566, 182, 915, 235, 905, 6, 2, 192, 190),
    4093: (1, 1210, 1542, 1785, 942, 1069, 1723, 1495, 1247, 238, 1599, 1009),
    8191: (1, 2431, 3799, 1141, 3300, 2593, 3126, 343, 2360, 2813, 783, 3361),
    16381: (1, 6789, 1848, 6013, 7428, 3026, 8022, 149, 6711, 5233, 5519, 3473),
    32749: (1, 9726, 14974, 8575, 11069, 8706, 14102, 8018, 1438, 6465, 13797, 5967),
}

LATTICE_SIZES: tuple[int, ...] = tuple(sorted(GENERATING_VECTORS))

MAX_DIM = 12


def shifted_lattice(n_points: int, dim: int, shift: np.ndarray) -> np.ndarray:
    """Return a randomly shifted rank-1 lattice with the baker (tent) transform.

    Parameters
    ----------
    n_points : int
        Lattice size; must be a key of ``GENERATING_VECTORS``.
    dim : int
        Number of coordinates (``<= MAX_DIM``).
    shift : ndarray of shape (dim,)
        Uniform random shift in [0, 1)^dim.

    Returns
    -------
    ndarray of shape (n_points, dim) with entries in [0, 1].
    """
    if dim > MAX_DIM:
        raise ValueError(f"lattice tables cover at most {MAX_DIM} dimensions, got {dim}")
    z = np.asarray(GENERATING_VECTORS[n_points][:dim], dtype=np.int64)
    k = np.arange(n_points, dtype=np.int64)[:, None]
    pts = (k * z[None, :] / n_points + shift[None, :]) % 1.0
    return np.abs(2.0 * pts - 1.0)
