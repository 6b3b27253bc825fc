"""Lloyd quantization of predicted maps with importance-sampled statistics.

Cell probabilities and centroids are estimated under the target density f
from samples drawn under a biased density g, reweighted by f/g.  The main
entry point runs Lloyd iterations on a held in-memory sample of n_maps
predicted maps, then re-estimates the cell probabilities on a longer
streamed sample of n_tilde maps whose first n_maps points coincide with the
iteration sample (one seed stream, extended).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from raremap_quant.core import (
    GridMap,
    InnerProductWeights,
    PrototypeSet,
    assign_maps,
    maps_matrix,
)
from raremap_quant.sampling import DensitySpec, SampleStream, is_weight_batch, named_seed

__all__ = [
    "EmptyCellError",
    "LloydConfig",
    "QuantizationResult",
    "cell_probability",
    "cell_centroid",
    "lloyd_step",
    "prototype_maps_algorithm",
    "initialize_prototypes",
]

# Rows per centroid-accumulation matmul and per streamed probability chunk.
# Fixed constants: chunk boundaries set the floating-point summation order,
# so they must not depend on the environment.
_CENTROID_CHUNK = 16384
_STREAM_CHUNK = 4096


class EmptyCellError(ValueError):
    """A Voronoi cell carries zero importance mass, so its centroid is undefined."""


@dataclass(frozen=True)
class LloydConfig:
    """Run parameters for the prototype maps algorithm.

    n_maps is the held-in-memory iteration sample; n_tilde >= n_maps is the
    streamed sample for the final probabilities.  reseed_empty moves the
    prototype of an emptied cell onto the sample map farthest from its
    assigned prototype instead of keeping the previous prototype.
    """

    ell: int
    n_maps: int
    n_tilde: int
    min_distance: float = 1e-16
    max_iterations: int = 100
    seed: int = 0
    reseed_empty: bool = False

    def __post_init__(self):
        if self.ell < 1:
            raise ValueError("ell must be >= 1")
        if not self.n_tilde >= self.n_maps >= self.ell:
            raise ValueError("need n_tilde >= n_maps >= ell")
        if not self.min_distance > 0:
            raise ValueError("min_distance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(eq=False)
class QuantizationResult:
    """Lloyd output: prototypes, their probabilities, and the error trace.

    probabilities are the importance-sampling cell masses on the n_tilde
    sample (nonnegative; they sum to the sample's mean weight, not exactly
    1).  error_trace[k] is the empirical quantization error of the k-th
    iterate on the held sample, including the initial state and the final
    one, so its length is iterations + 1.
    """

    prototypes: PrototypeSet
    probabilities: np.ndarray
    iterations: int
    error_trace: np.ndarray = field(repr=False)
    converged: bool = True


def _as_weighted_sample(gamma: PrototypeSet, maps, is_weights, w: InnerProductWeights):
    Y = maps_matrix(maps)
    wts = np.asarray(is_weights, dtype=np.float64).reshape(-1)
    if wts.shape[0] != Y.shape[0]:
        raise ValueError("maps and is_weights must have equal length")
    if np.any(wts < 0) or not np.all(np.isfinite(wts)):
        raise ValueError("importance weights must be finite and nonnegative")
    if gamma.side != w.side or Y.shape[1] != gamma.side * gamma.side:
        raise ValueError("maps, prototypes and pixel weights must share one side")
    return Y, wts


def cell_probability(gamma: PrototypeSet, j: int, maps, is_weights, w: InnerProductWeights) -> float:
    """IS estimate (1/n) sum of weights of the maps assigned to cell j (1-based)."""
    if not 1 <= j <= gamma.ell:
        raise ValueError(f"cell index must lie in 1..{gamma.ell}")
    Y, wts = _as_weighted_sample(gamma, maps, is_weights, w)
    idx, _ = assign_maps(Y, gamma.matrix, w.lam)
    return float(np.sum(wts[idx == j - 1])) / Y.shape[0]


def cell_centroid(gamma: PrototypeSet, j: int, maps, is_weights, w: InnerProductWeights) -> GridMap:
    """IS-weighted mean of the maps assigned to cell j; the 1/n factors cancel."""
    if not 1 <= j <= gamma.ell:
        raise ValueError(f"cell index must lie in 1..{gamma.ell}")
    Y, wts = _as_weighted_sample(gamma, maps, is_weights, w)
    idx, _ = assign_maps(Y, gamma.matrix, w.lam)
    mask = idx == j - 1
    mass = float(np.sum(wts[mask]))
    if mass == 0.0:
        raise EmptyCellError(f"cell {j} has zero importance mass")
    return GridMap(gamma.side, (wts[mask] @ Y[mask]) / mass)


def _weighted_cell_sums(Y: np.ndarray, idx: np.ndarray, wts: np.ndarray, ell: int):
    """Per-cell weighted map sums and masses, accumulated in fixed chunk order."""
    sums = np.zeros((ell, Y.shape[1]))
    for start in range(0, Y.shape[0], _CENTROID_CHUNK):
        stop = min(start + _CENTROID_CHUNK, Y.shape[0])
        onehot = np.zeros((stop - start, ell))
        onehot[np.arange(stop - start), idx[start:stop]] = wts[start:stop]
        sums += onehot.T @ Y[start:stop]
    masses = np.bincount(idx, weights=wts, minlength=ell)
    return sums, masses


def _update_prototypes(G, Y, idx, d2, wts, ell, reseed_empty):
    sums, masses = _weighted_cell_sums(Y, idx, wts, ell)
    new = G.copy()
    occupied = masses > 0
    new[occupied] = sums[occupied] / masses[occupied, None]
    empty = np.flatnonzero(~occupied)
    if reseed_empty and empty.size:
        score = wts * d2
        order = np.argsort(-score, kind="stable")
        for rank, j in enumerate(empty):
            k = order[rank]
            if score[k] > 0:
                new[j] = Y[k]
    return new


def lloyd_step(gamma: PrototypeSet, maps, is_weights, w: InnerProductWeights) -> PrototypeSet:
    """One Lloyd update: each prototype moves to its cell's weighted centroid.

    Cells with zero importance mass keep their previous prototype.
    """
    Y, wts = _as_weighted_sample(gamma, maps, is_weights, w)
    G = gamma.matrix
    idx, d2 = assign_maps(Y, G, w.lam)
    new = _update_prototypes(G, Y, idx, d2, wts, gamma.ell, reseed_empty=False)
    return PrototypeSet([GridMap(gamma.side, row) for row in new])


def _predict_batch(predictor, X: np.ndarray, n_pixels: int) -> np.ndarray:
    Y = np.ascontiguousarray(predictor(X), dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] != X.shape[0] or Y.shape[1] != n_pixels:
        raise ValueError(f"predictor must return an ({X.shape[0]}, {n_pixels}) array")
    return Y


def prototype_maps_algorithm(
    cfg: LloydConfig,
    predictor,
    f: DensitySpec,
    g: DensitySpec,
    init: PrototypeSet,
    w: InnerProductWeights,
) -> QuantizationResult:
    """Lloyd iterations on predicted maps, then streamed probability re-estimation.

    predictor maps an (m, dim) input array to an (m, s*s) array of flat maps.
    Inputs are drawn from g; all statistics are reweighted by f/g.  The run is
    deterministic given (cfg.seed, init, f, g, predictor).
    """
    if init.ell != cfg.ell:
        raise ValueError("init must provide exactly cfg.ell prototypes")
    if init.side != w.side:
        raise ValueError("init and pixel weights must share one side")
    n_pixels = init.side * init.side
    lam = w.lam

    stream = SampleStream(g, named_seed(cfg.seed, "sampling"))
    X = stream.draw(cfg.n_maps)
    wts = is_weight_batch(f, g, X)
    Y = _predict_batch(predictor, X, n_pixels)
    if not np.all(np.isfinite(Y)):
        raise ValueError("predictor returned non-finite map values")

    G = init.matrix
    yy = np.einsum("ij,j,ij->i", Y, lam, Y)
    trace = []
    converged = False
    iterations = 0
    for _ in range(cfg.max_iterations):
        idx, d2 = assign_maps(Y, G, lam, yy=yy)
        trace.append(np.sqrt(max(float(wts @ d2) / cfg.n_maps, 0.0)))
        new = _update_prototypes(G, Y, idx, d2, wts, cfg.ell, cfg.reseed_empty)
        displacement = np.sqrt(np.max((new - G) ** 2 @ lam))
        G = new
        iterations += 1
        if displacement <= cfg.min_distance:
            converged = True
            break

    # Final assignment of the held sample: closes the error trace and seeds the
    # probability masses with the first n_maps points of the n_tilde sample.
    idx, d2 = assign_maps(Y, G, lam, yy=yy)
    trace.append(np.sqrt(max(float(wts @ d2) / cfg.n_maps, 0.0)))
    masses = np.bincount(idx, weights=wts, minlength=cfg.ell)
    remaining = cfg.n_tilde - cfg.n_maps
    while remaining > 0:
        m = min(_STREAM_CHUNK, remaining)
        X2 = stream.draw(m)
        w2 = is_weight_batch(f, g, X2)
        Y2 = _predict_batch(predictor, X2, n_pixels)
        idx2, _ = assign_maps(Y2, G, lam)
        masses += np.bincount(idx2, weights=w2, minlength=cfg.ell)
        remaining -= m
    probabilities = masses / cfg.n_tilde

    prototypes = [GridMap(init.side, row) for row in G]
    attach = probabilities if np.all(probabilities <= 1.0) else None
    return QuantizationResult(
        prototypes=PrototypeSet(prototypes, probabilities=attach),
        probabilities=probabilities,
        iterations=iterations,
        error_trace=np.asarray(trace),
        converged=converged,
    )


def initialize_prototypes(training_maps, ell: int) -> PrototypeSet:
    """Training maps at the ell midpoint volume quantiles, in ascending order.

    Maps are ranked by total volume (pixel sum); prototype i is the map at
    rank ceil((2i-1) n / (2 ell)) for i = 1..ell, the empirical quantile at
    level (2i-1)/(2 ell).
    """
    Y = maps_matrix(training_maps)
    n = Y.shape[0]
    if ell < 1:
        raise ValueError("ell must be >= 1")
    if n < ell:
        raise ValueError(f"need at least ell={ell} training maps, got {n}")
    side = int(round(np.sqrt(Y.shape[1])))
    if side * side != Y.shape[1]:
        raise ValueError("maps must be square")
    volumes = Y.sum(axis=1)
    order = np.argsort(volumes, kind="stable")
    ranks = [-(-((2 * i - 1) * n) // (2 * ell)) for i in range(1, ell + 1)]
    rows = [order[r - 1] for r in ranks]
    return PrototypeSet([GridMap(side, Y[k].copy()) for k in rows])
