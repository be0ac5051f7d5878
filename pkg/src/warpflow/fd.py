"""Finite-difference stencils on nonuniform 1D grids.

Weights come from Fornberg's recursion, so the same code serves uniform,
geometric and logarithmic grids.  Interior rows use centred stencils of
``width`` points; the first and last ``width // 2`` rows fall back to
one-sided stencils built from the nearest ``width`` nodes.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp


def fornberg_weights(x0, x, m):
    """Weights ``w[d, i]`` so that ``f^(d)(x0) ~ sum_i w[d, i] f(x[i])``.

    Returns an array of shape ``(m + 1, len(x))`` holding the weights for
    derivative orders 0..m.
    """
    x = np.asarray(x, dtype=float)
    npts = x.size
    if m >= npts:
        raise ValueError("need more nodes than the derivative order")
    c = np.zeros((npts, m + 1))
    c1 = 1.0
    c4 = x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, npts):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c.T


def _stencil_rows(x, order, width):
    n = x.size
    half = width // 2
    rows, cols, vals = [], [], []
    for i in range(n):
        lo = min(max(i - half, 0), n - width)
        idx = np.arange(lo, lo + width)
        w = fornberg_weights(x[i], x[idx], order)[order]
        rows.extend([i] * width)
        cols.extend(idx.tolist())
        vals.extend(w.tolist())
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


@lru_cache(maxsize=64)
def _cached_matrices(key, width):
    x = np.frombuffer(key, dtype=float)
    return _stencil_rows(x, 1, width), _stencil_rows(x, 2, width)


class Stencil:
    """First and second derivative matrices on a fixed grid."""

    def __init__(self, grid, width=5):
        grid = np.ascontiguousarray(grid, dtype=float)
        if grid.ndim != 1 or grid.size < width:
            raise ValueError(f"grid needs at least {width} points")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        self.grid = grid
        self.width = width
        self.D1, self.D2 = _cached_matrices(grid.tobytes(), width)

    def d1(self, f):
        return self.D1 @ f

    def d2(self, f):
        return self.D2 @ f

    def interior(self):
        """Indices that carry a genuinely centred stencil."""
        half = self.width // 2
        return np.arange(half, self.grid.size - half)


def derivatives(grid, f, width=5):
    """Return ``(f', f'')`` on ``grid``."""
    st = Stencil(grid, width)
    return st.d1(f), st.d2(f)


def parity_extend(grid, f, parity, side="left", nghost=2):
    """Mirror ``nghost`` nodes across the end point of ``grid``.

    ``parity`` is +1 for an even function and -1 for an odd one about the
    end point.  Returns the extended grid and values, with the original
    data starting at index ``nghost`` when ``side == "left"``.
    """
    grid = np.asarray(grid, dtype=float)
    f = np.asarray(f, dtype=float)
    if parity not in (1, -1):
        raise ValueError("parity must be +1 or -1")
    if side == "left":
        x0 = grid[0]
        gx = 2 * x0 - grid[nghost:0:-1]
        gf = parity * f[nghost:0:-1]
        return np.concatenate([gx, grid]), np.concatenate([gf, f])
    if side == "right":
        x0 = grid[-1]
        gx = 2 * x0 - grid[-2:-nghost - 2:-1]
        gf = parity * f[-2:-nghost - 2:-1]
        return np.concatenate([grid, gx]), np.concatenate([f, gf])
    raise ValueError("side must be 'left' or 'right'")


def parity_derivatives(grid, f, parity_left=None, parity_right=None, width=5):
    """Derivatives using mirrored ghost nodes at whichever ends are poles."""
    x, g = np.asarray(grid, dtype=float), np.asarray(f, dtype=float)
    nghost = width // 2
    lo = 0
    if parity_left is not None:
        x, g = parity_extend(x, g, parity_left, "left", nghost)
        lo = nghost
    if parity_right is not None:
        x, g = parity_extend(x, g, parity_right, "right", nghost)
    d1, d2 = derivatives(x, g, width)
    n = len(grid)
    return d1[lo:lo + n], d2[lo:lo + n]


def robin_elimination(grid, rate, side="left", width=5):
    """Coefficients expressing an end value through its neighbours.

    Enforces ``f'(x_end) = rate * f(x_end)`` with a one-sided stencil and
    returns ``c`` so that ``f_end = c @ f[neighbours]`` where the neighbours
    are the next ``width - 1`` nodes inward.
    """
    grid = np.asarray(grid, dtype=float)
    if side == "left":
        pts = grid[:width]
    else:
        pts = grid[-width:][::-1]
    w = fornberg_weights(pts[0], pts, 1)[1]
    denom = rate - w[0]
    if abs(denom) < 1e-14 * np.abs(w).max():
        raise ValueError("degenerate Robin condition")
    return w[1:] / denom


def geometric_grid(x0, x1, n, ratio):
    """``n`` points on ``[x0, x1]`` whose spacing grows by ``ratio`` per cell."""
    if n < 2:
        raise ValueError("need at least two points")
    if ratio == 1.0:
        return np.linspace(x0, x1, n)
    steps = ratio ** np.arange(n - 1)
    pos = np.concatenate([[0.0], np.cumsum(steps)])
    return x0 + (x1 - x0) * pos / pos[-1]


def log_grid(a, b, n):
    if a <= 0 or b <= a:
        raise ValueError("log grid needs 0 < a < b")
    return np.geomspace(a, b, n)
