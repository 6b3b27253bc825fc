"""Campbell2D analytical test field on a 64-by-64 grid.

An 8-input, map-valued function used as a cheap stand-in for an expensive
simulator: a sum of four exponential terms evaluated on a fixed lattice.
Inputs live in [-1, 5]^8; physical inputs are mapped there by a fixed
componentwise affine transform with the eighth coordinate pinned to -1.

The batch evaluator exploits the lattice structure: each exponential's
argument depends on the pixel only through a linear combination of the two
grid coordinates, which takes few distinct values on the lattice, so the
exponentials are computed once per distinct value and gathered per pixel.
The result is bitwise identical to the direct per-pixel formula.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from raremap_quant.core import GridMap

__all__ = [
    "SIDE",
    "CampbellInput",
    "EvaluationGrid",
    "AFFINE_SUPPORTS",
    "evaluation_grid",
    "campbell2d_eval",
    "affine_transform",
    "affine_transform_batch",
    "campbell_map",
    "campbell_predictor",
    "campbell_grid_batch",
]

SIDE = 64

# Physical supports of the seven inputs (high tide, surge, phase, rising and
# falling durations, breach location, erosion rate), mapped onto [-1, 5].
AFFINE_SUPPORTS = (
    (0.52, 3.59),
    (0.65, 2.5),
    (-8.05, 8.05),
    (-12.0, 0.0),
    (0.0, 12.2),
    (1.0, 10.0),
    (0.0, 1.0),
)


@dataclass(frozen=True)
class CampbellInput:
    """A validated 8-vector in [-1, 5]^8 with nonzero first and fifth entries."""

    x: tuple[float, ...]

    def __post_init__(self):
        x = tuple(float(v) for v in self.x)
        if len(x) != 8:
            raise ValueError("expected 8 coordinates")
        if any(v < -1.0 or v > 5.0 for v in x):
            raise ValueError("coordinates must lie in [-1, 5]")
        if x[0] == 0.0 or x[4] == 0.0:
            raise ValueError("x_1 = 0 or x_5 = 0 is singular")
        object.__setattr__(self, "x", x)


@dataclass(frozen=True)
class EvaluationGrid:
    """The 64-by-64 lattice z_i = -90 + (i/64)*180, i = 1..64.

    Maps are stored row-major with the row index following the first grid
    coordinate: pixel (i, j) evaluates at (z1[i], z2[j]).
    """

    z1: np.ndarray
    z2: np.ndarray

    @property
    def flat_z1(self) -> np.ndarray:
        return np.repeat(self.z1, self.z2.size)

    @property
    def flat_z2(self) -> np.ndarray:
        return np.tile(self.z2, self.z1.size)


def evaluation_grid() -> EvaluationGrid:
    z = -90.0 + (np.arange(1, SIDE + 1) / 64.0) * 180.0
    return EvaluationGrid(z1=z, z2=z.copy())


def campbell2d_eval(x, z) -> float:
    """The four-term formula at one point z = (z1, z2) for one 8-vector x."""
    if isinstance(x, CampbellInput):
        x = x.x
    x = [float(v) for v in x]
    if len(x) != 8:
        raise ValueError("expected 8 coordinates")
    x1, x2, x3, x4, x5, x6, x7, x8 = x
    if x1 == 0.0 or x5 == 0.0:
        raise ValueError("x_1 = 0 or x_5 = 0 is singular")
    z1, z2 = float(z[0]), float(z[1])
    u1 = 0.8 * z1 + 0.2 * z2
    u2 = 0.5 * z1 + 0.5 * z2
    u3 = 0.4 * z1 + 0.6 * z2
    u4 = 0.3 * z1 + 0.7 * z2
    t1 = u1 - 10.0 * x2
    t3 = u3 - 20.0 * x6
    e1 = x1 * math.exp(-(t1 * t1) / (60.0 * x1 * x1))
    e2 = (x2 + x4) * math.exp(u2 * x1 / 500.0)
    e3 = x5 * (x3 - 2.0) * math.exp(-(t3 * t3) / (40.0 * x5 * x5))
    e4 = (x6 + x8) * math.exp(u4 * x7 / 250.0)
    return (e1 + e2) + (e3 + e4)


def _grid_tables():
    g = evaluation_grid()
    Z1, Z2 = g.flat_z1, g.flat_z2
    tables = []
    for a, b in ((0.8, 0.2), (0.5, 0.5), (0.4, 0.6), (0.3, 0.7)):
        u = a * Z1 + b * Z2
        uq, inv = np.unique(u, return_inverse=True)
        tables.append((uq, inv.astype(np.int64)))
    return tables


_TABLES = _grid_tables()
_UQ1, _G1 = _TABLES[0]
_UQ2, _G2 = _TABLES[1]
_UQ3, _G3 = _TABLES[2]
_UQ4, _G4 = _TABLES[3]


@njit(cache=True, nogil=True)
def _eval_grid_kernel(X, uq1, uq2, uq3, uq4, g1, g2, g3, g4, out):  # pragma: no cover
    m1, m2, m3, m4 = uq1.shape[0], uq2.shape[0], uq3.shape[0], uq4.shape[0]
    npix = g1.shape[0]
    e1 = np.empty(m1)
    e2 = np.empty(m2)
    e3 = np.empty(m3)
    e4 = np.empty(m4)
    for b in range(X.shape[0]):
        x1 = X[b, 0]
        x2 = X[b, 1]
        x3 = X[b, 2]
        x4 = X[b, 3]
        x5 = X[b, 4]
        x6 = X[b, 5]
        x7 = X[b, 6]
        x8 = X[b, 7]
        c2 = x2 + x4
        c3 = x5 * (x3 - 2.0)
        c4 = x6 + x8
        d1 = 60.0 * x1 * x1
        d3 = 40.0 * x5 * x5
        for j in range(m1):
            t = uq1[j] - 10.0 * x2
            e1[j] = x1 * np.exp(-(t * t) / d1)
        for j in range(m2):
            e2[j] = c2 * np.exp(uq2[j] * x1 / 500.0)
        for j in range(m3):
            t = uq3[j] - 20.0 * x6
            e3[j] = c3 * np.exp(-(t * t) / d3)
        for j in range(m4):
            e4[j] = c4 * np.exp(uq4[j] * x7 / 250.0)
        o = out[b]
        for p in range(npix):
            o[p] = (e1[g1[p]] + e2[g2[p]]) + (e3[g3[p]] + e4[g4[p]])


def campbell_grid_batch(X8, out: np.ndarray | None = None) -> np.ndarray:
    """Evaluate the formula on the full grid for each row of an (n, 8) array.

    Returns an (n, 4096) array of flat row-major maps, bitwise equal to
    calling campbell2d_eval pixel by pixel.
    """
    X8 = np.ascontiguousarray(X8, dtype=np.float64)
    if X8.ndim != 2 or X8.shape[1] != 8:
        raise ValueError("expected an (n, 8) array")
    if not np.all(np.isfinite(X8)):
        raise ValueError("inputs must be finite")
    if np.any(X8[:, 0] == 0.0) or np.any(X8[:, 4] == 0.0):
        raise ValueError("x_1 = 0 or x_5 = 0 is singular")
    if out is None:
        out = np.empty((X8.shape[0], SIDE * SIDE))
    _eval_grid_kernel(X8, _UQ1, _UQ2, _UQ3, _UQ4, _G1, _G2, _G3, _G4, out)
    return out


def affine_transform_batch(X) -> np.ndarray:
    """Componentwise map of (n, 7) physical inputs onto [-1, 5]^7."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 7:
        raise ValueError("expected an (n, 7) array")
    out = np.empty_like(X)
    for j, (lo, hi) in enumerate(AFFINE_SUPPORTS):
        col = X[:, j]
        if np.any(col < lo) or np.any(col > hi):
            raise ValueError(f"coordinate {j + 1} outside its support [{lo}, {hi}]")
        out[:, j] = -1.0 + 6.0 * (col - lo) / (hi - lo)
    return out


def affine_transform(x) -> np.ndarray:
    """Map one physical 7-vector onto [-1, 5]^7; rejects out-of-support inputs."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (7,):
        raise ValueError("expected a 7-vector")
    return affine_transform_batch(x[None, :])[0]


def campbell_predictor(X) -> np.ndarray:
    """Maps for (n, 7) physical inputs: affine transform, x_8 = -1, grid eval."""
    A = affine_transform_batch(X)
    X8 = np.column_stack([A, np.full(A.shape[0], -1.0)])
    return campbell_grid_batch(X8)


def campbell_map(x) -> GridMap:
    """The map of one physical 7-vector input."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (7,):
        raise ValueError("expected a 7-vector")
    return GridMap(SIDE, campbell_predictor(x[None, :])[0])
