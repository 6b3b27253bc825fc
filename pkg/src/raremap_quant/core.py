"""Grid maps, weighted inner products, and nearest-prototype assignment.

A map is a square field of real values stored row-major as a flat float64
array.  Distances between maps come from a weighted inner product with
strictly positive per-pixel weights, which keeps conditional means optimal
for the quantizer built on top of this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridMap",
    "InnerProductWeights",
    "PrototypeSet",
    "VoronoiAssignment",
    "weighted_inner_product",
    "nearest_prototype",
    "empirical_quantization_error",
]


def _as_flat_values(values, side: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        if arr.shape != (side, side):
            raise ValueError(f"{what}: expected shape ({side}, {side}), got {arr.shape}")
        arr = arr.reshape(-1)
    elif arr.ndim == 1:
        if arr.size != side * side:
            raise ValueError(f"{what}: expected {side * side} entries, got {arr.size}")
    else:
        raise ValueError(f"{what}: expected a 1-d or 2-d array")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what}: entries must be finite")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True, eq=False)
class GridMap:
    """A square field of values on an s-by-s pixel grid.

    Parameters
    ----------
    side : int
        Pixels per edge, s >= 1.
    values : array_like
        Either a flat row-major array of length s*s or an (s, s) matrix.
        Stored flat as float64; all entries must be finite.
    """

    side: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.side < 1:
            raise ValueError("side must be >= 1")
        object.__setattr__(self, "values", _as_flat_values(self.values, self.side, "GridMap"))

    @classmethod
    def from_matrix(cls, matrix) -> "GridMap":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("from_matrix expects a square 2-d array")
        return cls(matrix.shape[0], matrix)

    @property
    def matrix(self) -> np.ndarray:
        return self.values.reshape(self.side, self.side)

    def total_volume(self) -> float:
        """Sum of all pixel values (the 'water volume' of a flood map)."""
        return float(self.values.sum())


@dataclass(frozen=True, eq=False)
class InnerProductWeights:
    """Strictly positive per-pixel weights defining <a, b> = sum_i lam_i a_i b_i."""

    side: int
    lam: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.side < 1:
            raise ValueError("side must be >= 1")
        object.__setattr__(self, "lam", _as_flat_values(self.lam, self.side, "InnerProductWeights"))
        if not np.all(self.lam > 0):
            raise ValueError("all inner-product weights must be strictly positive")

    @classmethod
    def uniform(cls, side: int) -> "InnerProductWeights":
        return cls(side, np.ones(side * side))


@dataclass(eq=False)
class PrototypeSet:
    """An ordered list of prototype maps, optionally with probability masses.

    Probabilities, when present, lie in [0, 1] per cell; their sum equals the
    mean importance-sampling weight of the sample they were estimated on, so
    it need not be exactly 1.
    """

    prototypes: list[GridMap]
    probabilities: np.ndarray | None = None

    def __post_init__(self):
        if len(self.prototypes) < 1:
            raise ValueError("a prototype set needs at least one prototype")
        sides = {p.side for p in self.prototypes}
        if len(sides) != 1:
            raise ValueError(f"prototypes must share one side, got {sorted(sides)}")
        if self.probabilities is not None:
            p = np.asarray(self.probabilities, dtype=np.float64)
            if p.shape != (len(self.prototypes),):
                raise ValueError("probabilities must have one entry per prototype")
            if np.any(p < 0) or np.any(p > 1):
                raise ValueError("probabilities must lie in [0, 1]")
            self.probabilities = p

    @property
    def ell(self) -> int:
        return len(self.prototypes)

    @property
    def side(self) -> int:
        return self.prototypes[0].side

    @property
    def matrix(self) -> np.ndarray:
        """Prototypes stacked as an (ell, s*s) array."""
        return np.stack([p.values for p in self.prototypes])


@dataclass(frozen=True)
class VoronoiAssignment:
    """Nearest-prototype result: 1-based cell index and the weighted distance."""

    cell_index: int
    distance: float


def _check_side(side: int, *objs) -> None:
    for obj in objs:
        if obj.side != side:
            raise ValueError(f"side mismatch: {obj.side} != {side}")


def weighted_inner_product(a: GridMap, b: GridMap, w: InnerProductWeights) -> float:
    """<a, b> = sum over pixels of lam_i * a_i * b_i."""
    _check_side(a.side, b, w)
    return float(np.dot(w.lam * a.values, b.values))


def maps_matrix(maps) -> np.ndarray:
    """Stack a sequence of GridMaps (or a ready (n, s*s) array) as one array."""
    if isinstance(maps, np.ndarray):
        if maps.ndim != 2:
            raise ValueError("expected an (n, s*s) array")
        return np.ascontiguousarray(maps, dtype=np.float64)
    return np.stack([m.values for m in maps])


def assign_maps(Y: np.ndarray, G: np.ndarray, lam: np.ndarray, yy: np.ndarray | None = None):
    """Assign each row of Y to the nearest row of G under the lam-weighted norm.

    Vectorized via the expansion |y - g|^2 = <y,y> - 2<y,g> + <g,g>, which
    multiplies lam into the (small) prototype matrix so Y is never copied.
    Pass yy = einsum("ij,j,ij->i", Y, lam, Y) to reuse the per-map norms
    across calls with the same Y.

    Returns
    -------
    (idx, d2) : 0-based assignment indices (ties -> lowest index) and the
        squared weighted distance to the chosen prototype, clipped at 0.
    """
    GL = G * lam  # (ell, K), small
    gg = np.einsum("ij,ij->i", GL, G)
    if yy is None:
        yy = np.einsum("ij,j,ij->i", Y, lam, Y)
    d2 = yy[:, None] - 2.0 * (Y @ GL.T) + gg[None, :]
    idx = np.argmin(d2, axis=1)
    d2min = np.take_along_axis(d2, idx[:, None], axis=1)[:, 0]
    np.maximum(d2min, 0.0, out=d2min)
    return idx, d2min


def nearest_prototype(y: GridMap, gamma: PrototypeSet, w: InnerProductWeights) -> VoronoiAssignment:
    """Index of the prototype minimizing the weighted norm of y - gamma_i.

    Ties are broken by the lowest index.  Distances are computed directly as
    sum(lam * (y - g)^2) per prototype, so an exact match reports distance 0.
    """
    _check_side(y.side, gamma.prototypes[0], w)
    diffs = gamma.matrix - y.values[None, :]
    d2 = np.einsum("ij,j,ij->i", diffs, w.lam, diffs)
    i = int(np.argmin(d2))
    return VoronoiAssignment(cell_index=i + 1, distance=float(np.sqrt(max(d2[i], 0.0))))


def empirical_quantization_error(
    gamma: PrototypeSet,
    maps,
    is_weights,
    w: InnerProductWeights,
) -> float:
    """Importance-weighted RMS distance to the nearest prototype.

    Returns sqrt((1/n) * sum_k weight_k * |y_k - q(y_k)|^2) where q assigns
    each map to its nearest prototype under w.
    """
    Y = maps_matrix(maps)
    wts = np.asarray(is_weights, dtype=np.float64)
    if wts.ndim != 1 or wts.shape[0] != Y.shape[0]:
        raise ValueError("maps and is_weights must have equal length")
    if wts.shape[0] < 1:
        raise ValueError("need at least one map")
    if np.any(wts < 0):
        raise ValueError("importance weights must be nonnegative")
    _check_side(gamma.side, w)
    if Y.shape[1] != gamma.side * gamma.side:
        raise ValueError("map size does not match prototype side")
    _, d2 = assign_maps(Y, gamma.matrix, w.lam)
    return float(np.sqrt(max(float(np.dot(wts, d2)) / wts.shape[0], 0.0)))
