"""Map compression: 2D wavelet decomposition plus PCA on retained coefficients.

Forward path: a full-depth separable Daubechies-4 transform with periodic
boundaries (exactly orthonormal, so energies are preserved), an energy-based
selection of the coefficients that matter on the training set, and a PCA
reducing those to a handful of coordinates.  Inverse path: rebuild retained
coefficients from the coordinates, fill the rest with their training means,
and invert the wavelet transform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from raremap_quant.core import GridMap

__all__ = [
    "WaveletCoefficients",
    "FpcaModel",
    "dwt2_forward",
    "dwt2_inverse",
    "dwt2_batch",
    "idwt2_batch",
    "fit_fpca",
    "fpca_project",
    "fpca_project_batch",
    "fpca_inverse",
    "fpca_inverse_batch",
]

_SQRT3 = math.sqrt(3.0)
_NORM = 4.0 * math.sqrt(2.0)
# Daubechies-4 scaling filter; the wavelet filter is its alternating flip.
_H = np.array([(1 + _SQRT3) / _NORM, (3 + _SQRT3) / _NORM, (3 - _SQRT3) / _NORM, (1 - _SQRT3) / _NORM])
_G = np.array([_H[3], -_H[2], _H[1], -_H[0]])


@lru_cache(maxsize=None)
def _wavelet_matrix(m: int) -> np.ndarray:
    """Orthonormal one-level analysis matrix for a periodic signal of even length m.

    Rows 0..m/2-1 produce approximation coefficients, rows m/2..m-1 details.
    Wraparound at m = 2 folds filter taps onto the same column (their sum),
    which keeps the matrix exactly orthogonal.
    """
    W = np.zeros((m, m))
    half = m // 2
    for j in range(half):
        for t in range(4):
            col = (2 * j + t) % m
            W[j, col] += _H[t]
            W[half + j, col] += _G[t]
    W.setflags(write=False)
    return W


def _check_side(side: int) -> int:
    if side < 1 or side & (side - 1) != 0:
        raise ValueError(f"side must be a power of two, got {side}")
    return int(math.log2(side))


@dataclass(frozen=True, eq=False)
class WaveletCoefficients:
    """Flat row-major multiresolution coefficient array of a square map.

    The layout nests approximation blocks top-left: after each level the
    leading m-by-m block splits into quadrants [[LL, LH], [HL, HH]] and the
    next level recurses on LL, down to a single overall-mean coefficient.
    """

    side: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        levels = _check_side(self.side)
        c = np.ascontiguousarray(np.asarray(self.coeffs, dtype=np.float64).reshape(-1))
        if c.size != self.side * self.side:
            raise ValueError("coefficient count must equal side * side")
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "_levels", levels)

    @property
    def levels(self) -> int:
        return self._levels


def dwt2_batch(Y: np.ndarray, side: int) -> np.ndarray:
    """Full-depth forward transform of each flat row-major map in Y (n, side^2)."""
    _check_side(side)
    C = np.array(Y, dtype=np.float64).reshape(-1, side, side)
    m = side
    while m >= 2:
        W = _wavelet_matrix(m)
        block = C[:, :m, :m]
        C[:, :m, :m] = np.matmul(W, np.matmul(block, W.T))
        m //= 2
    return C.reshape(-1, side * side)


def idwt2_batch(A: np.ndarray, side: int) -> np.ndarray:
    """Exact inverse of dwt2_batch."""
    _check_side(side)
    C = np.array(A, dtype=np.float64).reshape(-1, side, side)
    m = 2
    while m <= side:
        W = _wavelet_matrix(m)
        block = C[:, :m, :m]
        C[:, :m, :m] = np.matmul(W.T, np.matmul(block, W))
        m *= 2
    return C.reshape(-1, side * side)


def dwt2_forward(y: GridMap) -> WaveletCoefficients:
    """Orthonormal full-depth 2D wavelet transform of one map."""
    return WaveletCoefficients(y.side, dwt2_batch(y.values[None, :], y.side)[0])


def dwt2_inverse(c: WaveletCoefficients) -> GridMap:
    """Reconstruct the map from its wavelet coefficients."""
    return GridMap(c.side, idwt2_batch(c.coeffs[None, :], c.side)[0])


@dataclass(eq=False)
class FpcaModel:
    """Wavelet-coefficient selection plus PCA, fitted on a training set.

    retained_indices are the K-tilde coefficient positions (ascending) whose
    mean energy share reaches p_energy; projection is the (n_pc, K-tilde)
    matrix of orthonormal eigenvector rows; coeff_means holds the training
    mean of every coefficient (used both for centering the retained block
    and for filling non-retained coefficients on reconstruction).
    """

    side: int
    p_energy: float
    n_pc: int
    retained_indices: np.ndarray
    energies: np.ndarray
    coeff_means: np.ndarray
    projection: np.ndarray
    pc_variances: np.ndarray


def fit_fpca(training_maps, p_energy: float = 0.98, n_pc: int = 2) -> FpcaModel:
    """Fit the compression model on training maps.

    Energies are the per-coefficient empirical means of alpha_k^2 over the
    squared coefficient norm; all-zero maps are excluded from that average
    (their share is undefined).  The smallest set of coefficients, taken by
    descending energy, whose total reaches p_energy is retained; the PCA is
    an eigendecomposition of the centered retained block's covariance, with
    each eigenvector's largest-magnitude entry made positive.
    """
    if not 0.0 < p_energy <= 1.0:
        raise ValueError("p_energy must lie in (0, 1]")
    if isinstance(training_maps, np.ndarray):
        Y = np.asarray(training_maps, dtype=np.float64)
        side = int(round(math.sqrt(Y.shape[1])))
    else:
        side = training_maps[0].side
        if any(m.side != side for m in training_maps):
            raise ValueError("training maps must all share one side")
        Y = np.stack([m.values for m in training_maps])
    n = Y.shape[0]
    if n < 2:
        raise ValueError("need at least two training maps")
    A = dwt2_batch(Y, side)
    norms2 = np.einsum("ij,ij->i", A, A)
    nonzero = norms2 > 0
    if not np.any(nonzero):
        raise ValueError("all training maps are zero; energies undefined")
    shares = A[nonzero] ** 2 / norms2[nonzero, None]
    energies = shares.mean(axis=0)

    order = np.argsort(-energies, kind="stable")
    cum = np.cumsum(energies[order])
    target = p_energy * float(energies.sum())
    k = int(np.searchsorted(cum, target - 1e-12)) + 1
    k = min(k, energies.size)
    retained = np.sort(order[:k])

    if not 1 <= n_pc <= min(n - 1, k):
        raise ValueError(f"n_pc must lie in [1, {min(n - 1, k)}] here, got {n_pc}")

    means = A.mean(axis=0)
    B = A[:, retained] - means[retained]
    cov = (B.T @ B) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    take = np.argsort(evals)[::-1][:n_pc]
    omega = evecs[:, take].T.copy()
    for r in range(n_pc):
        lead = np.argmax(np.abs(omega[r]))
        if omega[r, lead] < 0:
            omega[r] = -omega[r]
    return FpcaModel(
        side=side,
        p_energy=p_energy,
        n_pc=n_pc,
        retained_indices=retained,
        energies=energies,
        coeff_means=means,
        projection=omega,
        pc_variances=np.maximum(evals[take], 0.0),
    )


def fpca_project_batch(model: FpcaModel, Y: np.ndarray) -> np.ndarray:
    """Coordinates of each flat map in Y (n, side^2) as an (n, n_pc) array."""
    A = dwt2_batch(Y, model.side)
    B = A[:, model.retained_indices] - model.coeff_means[model.retained_indices]
    return B @ model.projection.T


def fpca_project(model: FpcaModel, y: GridMap) -> np.ndarray:
    """Principal coordinates t of one map."""
    if y.side != model.side:
        raise ValueError("map side does not match the fitted model")
    return fpca_project_batch(model, y.values[None, :])[0]


def fpca_inverse_batch(model: FpcaModel, T: np.ndarray) -> np.ndarray:
    """Maps reconstructed from coordinate rows T (n, n_pc), flat (n, side^2)."""
    T = np.asarray(T, dtype=np.float64)
    if T.ndim != 2 or T.shape[1] != model.n_pc:
        raise ValueError(f"expected (n, {model.n_pc}) coordinates")
    A = np.tile(model.coeff_means, (T.shape[0], 1))
    A[:, model.retained_indices] += T @ model.projection
    return idwt2_batch(A, model.side)


def fpca_inverse(model: FpcaModel, t) -> GridMap:
    """Map reconstructed from one coordinate vector."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    return GridMap(model.side, fpca_inverse_batch(model, t[None, :])[0])
