"""Performance metrics for quantizers and map surrogates.

Four scalar diagnostics: excess quantization error of a fitted prototype set
against a reference set, relative cell-probability error of surrogate maps
against true maps, and two bootstrap uncertainty measures of the importance
sampling estimators (coefficient of variation of a cell probability, and the
90% pixel quantile of the centroid's standard deviation).  Prototype
perturbation builds the family of random quantizations these distributions
are evaluated over.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from raremap_quant.core import (
    GridMap,
    InnerProductWeights,
    PrototypeSet,
    assign_maps,
    empirical_quantization_error,
    maps_matrix,
)
from raremap_quant.sampling import named_seed

__all__ = [
    "PerturbationConfig",
    "BootstrapConfig",
    "AssignedSample",
    "perturb_prototypes",
    "assign_sample",
    "excess_quantization_error",
    "relative_probability_error",
    "is_probability_cv",
    "is_centroid_std",
    "metric_summary",
]


@dataclass(frozen=True)
class PerturbationConfig:
    """Family size and relative magnitude of random prototype perturbations."""

    n_gamma: int = 100
    scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_gamma < 1:
            raise ValueError("need n_gamma >= 1")
        if not math.isfinite(self.scale) or self.scale < 0:
            raise ValueError("scale must be finite and >= 0")


@dataclass(frozen=True)
class BootstrapConfig:
    """Resample count and seed for the bootstrap uncertainty metrics."""

    n_boot: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_boot < 2:
            raise ValueError("need n_boot >= 2")


def perturb_prototypes(gamma: PrototypeSet, cfg: PerturbationConfig) -> list[PrototypeSet]:
    """n_gamma independent Gaussian-perturbed copies of a prototype set.

    Prototype j of replicate r receives i.i.d. zero-mean pixel noise with
    standard deviation cfg.scale * ||gamma_j|| / s (the prototype's root mean
    square pixel value), drawn from a stream keyed by (seed, r, j).
    """
    side = gamma.side
    children = named_seed(cfg.seed, "perturbation").spawn(cfg.n_gamma * gamma.ell)
    out = []
    for r in range(cfg.n_gamma):
        protos = []
        for j, p in enumerate(gamma.prototypes):
            sigma = cfg.scale * float(np.linalg.norm(p.values)) / side
            rng = np.random.default_rng(children[r * gamma.ell + j])
            protos.append(GridMap(side, p.values + rng.normal(0.0, sigma, p.values.size)))
        probs = None if gamma.probabilities is None else gamma.probabilities.copy()
        out.append(PrototypeSet(protos, probs))
    return out


@dataclass(eq=False)
class AssignedSample:
    """A weighted map sample with its cell assignments frozen in.

    Bootstrap metrics resample the (weight, assignment, map) triples jointly,
    so the assignment is computed once per prototype set and reused across
    cells and replicates.
    """

    maps: np.ndarray
    weights: np.ndarray
    assignments: np.ndarray

    def __post_init__(self):
        if not (len(self.maps) == len(self.weights) == len(self.assignments)):
            raise ValueError("maps, weights and assignments must have equal length")
        if len(self.weights) < 1:
            raise ValueError("need a nonempty sample")


def assign_sample(gamma: PrototypeSet, maps, is_weights, w: InnerProductWeights) -> AssignedSample:
    """Assign every map to its nearest prototype under the w-weighted norm."""
    Y = maps_matrix(maps)
    wts = np.asarray(is_weights, dtype=np.float64)
    if wts.shape != (Y.shape[0],):
        raise ValueError("need one weight per map")
    if np.any(wts < 0):
        raise ValueError("importance weights must be nonnegative")
    idx, _ = assign_maps(Y, gamma.matrix, w.lam)
    return AssignedSample(maps=Y, weights=wts, assignments=idx)


def excess_quantization_error(gamma_hat, gamma_star, maps, is_weights, w) -> float:
    """Relative excess of gamma_hat's empirical error over gamma_star's.

    Both errors are estimated on the same weighted sample.  The value is
    negative when gamma_hat quantizes the sample better than the reference.
    """
    e_star = empirical_quantization_error(gamma_star, maps, is_weights, w)
    if e_star == 0.0:
        raise ValueError("reference quantization error is zero; excess undefined")
    e_hat = empirical_quantization_error(gamma_hat, maps, is_weights, w)
    return (e_hat - e_star) / e_star


def _cell_index(gamma: PrototypeSet, j: int) -> int:
    if not 1 <= j <= gamma.ell:
        raise ValueError(f"cell index must lie in [1, {gamma.ell}], got {j}")
    return j - 1


def relative_probability_error(gamma, j, maps_true, maps_pred, is_weights, w) -> float:
    """|P_hat(true) - P_hat(pred)| / P_hat(true) for cell j.

    Both probabilities use the same sample and weights; only the maps differ,
    so the value isolates the surrogate's effect on cell membership.  An
    empty cell under the true maps makes the ratio undefined: returns NaN.
    """
    cell = _cell_index(gamma, j)
    Y_true = maps_matrix(maps_true)
    Y_pred = maps_matrix(maps_pred)
    if Y_true.shape != Y_pred.shape:
        raise ValueError("true and predicted maps must have identical shape")
    wts = np.asarray(is_weights, dtype=np.float64)
    n = Y_true.shape[0]
    lam = w.lam
    G = gamma.matrix
    p_true = float(wts[assign_maps(Y_true, G, lam)[0] == cell].sum()) / n
    if p_true == 0.0:
        return math.nan
    p_pred = float(wts[assign_maps(Y_pred, G, lam)[0] == cell].sum()) / n
    return abs(p_true - p_pred) / p_true


def _as_assigned(gamma, sample_source, w) -> AssignedSample:
    if isinstance(sample_source, AssignedSample):
        return sample_source
    maps, is_weights = sample_source
    return assign_sample(gamma, maps, is_weights, w)


def is_probability_cv(gamma, j, sample_source, cfg: BootstrapConfig, w=None) -> float:
    """Bootstrap coefficient of variation of the cell-j probability estimate.

    sample_source is an AssignedSample, or a (maps, is_weights) pair assigned
    here (which then needs w).  Resamples n-out-of-n with replacement n_boot
    times and returns std/mean of the replicate probabilities; NaN when the
    replicate mean is zero.
    """
    sample = _as_assigned(gamma, sample_source, w)
    cell = _cell_index(gamma, j)
    member = sample.assignments == cell
    if not member.any():
        raise ValueError(f"cell {j} is empty in the base sample")
    mw = np.where(member, sample.weights, 0.0)
    n = mw.size
    reps = np.empty(cfg.n_boot)
    for r, child in enumerate(named_seed(cfg.seed, "bootstrap").spawn(cfg.n_boot)):
        idx = np.random.default_rng(child).integers(0, n, size=n)
        reps[r] = mw[idx].sum() / n
    mean = reps.mean()
    if mean == 0.0:
        return math.nan
    return float(reps.std(ddof=1) / mean)


def is_centroid_std(gamma, j, sample_source, cfg: BootstrapConfig, w=None) -> float:
    """Bootstrap pixel-level standard deviation of the cell-j centroid.

    Returns the 90% empirical quantile over pixels of the per-pixel standard
    deviation of the replicated centroids, in map units.  Replicates where
    the cell has zero mass are dropped; NaN if fewer than two remain.
    """
    sample = _as_assigned(gamma, sample_source, w)
    cell = _cell_index(gamma, j)
    member = sample.assignments == cell
    if not member.any():
        raise ValueError(f"cell {j} is empty in the base sample")
    mw = np.where(member, sample.weights, 0.0)
    n = mw.size
    centroids = []
    for child in named_seed(cfg.seed, "bootstrap").spawn(cfg.n_boot):
        idx = np.random.default_rng(child).integers(0, n, size=n)
        wts = mw[idx]
        mass = wts.sum()
        if mass == 0.0:
            continue
        rows = np.flatnonzero(wts)
        centroids.append((wts[rows] @ sample.maps[idx[rows]]) / mass)
    if len(centroids) < 2:
        return math.nan
    stds = np.std(np.asarray(centroids), axis=0, ddof=1)
    return float(np.quantile(stds, 0.9))


def metric_summary(values) -> dict:
    """Median and quartiles of a metric distribution, NaNs counted separately."""
    arr = np.asarray(values, dtype=np.float64)
    defined = arr[~np.isnan(arr)]
    summary = {"n": int(arr.size), "n_undefined": int(arr.size - defined.size)}
    if defined.size:
        q1, med, q3 = np.quantile(defined, [0.25, 0.5, 0.75])
        summary.update(median=float(med), q1=float(q1), q3=float(q3))
    else:
        summary.update(median=math.nan, q1=math.nan, q3=math.nan)
    return summary
