"""Hurdle map predictor: forest gate, per-regime FPCA + GP, clipping.

The simulator replacement works in three stages.  A random-forest classifier
(written here from scratch: CART trees, Gini splits, bootstrap resampling,
sqrt(d) feature subsampling) predicts whether an input floods at all; gated-off
inputs get the exact zero map.  Flooded inputs are routed to a regime (breach
present or absent) whose own FPCA basis and per-component Gaussian processes
reconstruct the map; negative pixels are clipped to zero for water depths.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from raremap_quant.core import GridMap
from raremap_quant.fpca import FpcaModel, fit_fpca, fpca_inverse_batch, fpca_project_batch
from raremap_quant.gp import GpModel, fit_gp, gp_mean_batch
from raremap_quant.sampling import named_seed

__all__ = [
    "ForestConfig",
    "MetamodelConfig",
    "HurdleClassifier",
    "MapMetamodel",
    "fit_classifier",
    "out_of_bag_error",
    "fit_metamodel",
    "predict_map",
    "predict_maps",
    "cross_validate_metamodel",
]

logger = logging.getLogger(__name__)

_PREDICT_CHUNK = 4096


@dataclass(frozen=True)
class ForestConfig:
    """Random-forest hyperparameters."""

    n_trees: int = 100
    max_depth: int = 12

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1:
            raise ValueError("need n_trees >= 1 and max_depth >= 1")


@dataclass(frozen=True)
class MetamodelConfig:
    """Fit-time options for the full map predictor.

    use_hurdle=False bypasses the classifier gate and the regime split (a
    configuration without any empty-map mass); regime_column names the input
    coordinate holding the breach location, where 0 means no breach.
    """

    volume_threshold: float = 0.0
    p_energy: float = 0.98
    n_pc: int = 2
    use_hurdle: bool = True
    regime_column: int | None = None
    min_regime_size: int = 20
    clip_negatives: bool = True
    forest: ForestConfig = field(default_factory=ForestConfig)
    gp_nugget: float | None = None
    gp_restarts: int = 10
    seed: int = 0


@dataclass(eq=False)
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    oob_mask: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        cur = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[cur]
            alive = np.flatnonzero(f >= 0)
            if alive.size == 0:
                break
            fc = f[alive]
            goleft = X[alive, fc] <= self.threshold[cur[alive]]
            cur[alive] = np.where(goleft, self.left[cur[alive]], self.right[cur[alive]])
        return self.value[cur].astype(bool)


@dataclass(eq=False)
class HurdleClassifier:
    """Bagged CART forest; prediction is a strict-majority vote (tie -> False)."""

    trees: list[_Tree]
    n_features: int
    config: ForestConfig
    seed: int
    volume_threshold: float = 0.0

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected (n, {self.n_features}) inputs")
        votes = np.zeros(X.shape[0], dtype=np.int64)
        for tree in self.trees:
            votes += tree.predict(X)
        return 2 * votes > len(self.trees)


def _best_split(x: np.ndarray, y: np.ndarray):
    """Threshold minimizing the weighted Gini of one feature; None if constant.

    Returns (weighted_gini, threshold) with weighted_gini = nL*gini_L + nR*gini_R.
    """
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]
    n = xs.size
    cut = np.flatnonzero(xs[:-1] < xs[1:])
    if cut.size == 0:
        return None
    nL = (cut + 1).astype(np.float64)
    nR = n - nL
    posL = np.cumsum(ys)[cut].astype(np.float64)
    posR = float(ys.sum()) - posL
    # nL * gini_L = nL - (posL^2 + negL^2) / nL
    gL = nL - (posL**2 + (nL - posL) ** 2) / nL
    gR = nR - (posR**2 + (nR - posR) ** 2) / nR
    score = gL + gR
    k = int(np.argmin(score))
    i = cut[k]
    return float(score[k]), 0.5 * (xs[i] + xs[i + 1])


def _grow_tree(X: np.ndarray, y: np.ndarray, cfg: ForestConfig, rng, mtry: int):
    feature, threshold, left, right, value = [], [], [], [], []

    def leaf(node_y):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(2 * int(node_y.sum()) > node_y.size)
        return len(feature) - 1

    def build(rows, depth):
        node_y = y[rows]
        pos = int(node_y.sum())
        if depth >= cfg.max_depth or rows.size < 2 or pos == 0 or pos == rows.size:
            return leaf(node_y)
        n = rows.size
        parent = n - (pos**2 + (n - pos) ** 2) / n
        subset = np.sort(rng.choice(X.shape[1], size=mtry, replace=False))
        best = None
        for f in subset:
            found = _best_split(X[rows, f], node_y)
            if found is not None and found[0] < parent - 1e-12 and (best is None or found[0] < best[0]):
                best = (found[0], f, found[1])
        if best is None:
            return leaf(node_y)
        _, f, thr = best
        go = X[rows, f] <= thr
        node = leaf(node_y)  # placeholder entries, overwritten below
        feature[node] = int(f)
        threshold[node] = float(thr)
        left[node] = build(rows[go], depth + 1)
        right[node] = build(rows[~go], depth + 1)
        return node

    boot = rng.integers(0, X.shape[0], size=X.shape[0])
    oob = np.ones(X.shape[0], dtype=bool)
    oob[boot] = False
    build(boot, 0)
    return _Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=bool),
        oob_mask=oob,
    )


def fit_classifier(inputs, labels, cfg: ForestConfig = ForestConfig(), seed: int = 0) -> HurdleClassifier:
    """Train the bagged forest on boolean labels; deterministic in seed."""
    X = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a nonempty (n, d) design")
    if y.shape != (X.shape[0],):
        raise ValueError("labels must have one entry per input row")
    mtry = max(1, int(round(math.sqrt(X.shape[1]))))
    children = named_seed(seed, "forest").spawn(cfg.n_trees)
    trees = [_grow_tree(X, y, cfg, np.random.default_rng(ss), mtry) for ss in children]
    return HurdleClassifier(trees=trees, n_features=X.shape[1], config=cfg, seed=seed)


def out_of_bag_error(clf: HurdleClassifier, inputs, labels) -> float:
    """Vote each training point only with trees that did not see it.

    Points never out of bag are excluded from the error rate.
    """
    X = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    pos = np.zeros(X.shape[0], dtype=np.int64)
    tot = np.zeros(X.shape[0], dtype=np.int64)
    for tree in clf.trees:
        m = tree.oob_mask
        if m.any():
            pos[m] += tree.predict(X[m])
            tot[m] += 1
    voted = tot > 0
    pred = 2 * pos[voted] > tot[voted]
    return float(np.mean(pred != y[voted]))


@dataclass(eq=False)
class _RegimeModel:
    fpca: FpcaModel
    gps: list[GpModel]

    def __post_init__(self):
        if len(self.gps) != self.fpca.n_pc:
            raise ValueError("need exactly one GP per principal component")


@dataclass(eq=False)
class MapMetamodel:
    """Fitted hurdle predictor; treat as immutable.

    regimes maps a regime key to its _RegimeModel, or to None when the regime
    had no flooded training maps (it then always predicts the empty map).
    """

    classifier: HurdleClassifier | None
    regimes: dict
    side: int
    clip_negatives: bool
    regime_column: int | None
    config: MetamodelConfig


def _regime_keys_from_inputs(X: np.ndarray, column: int | None, n: int):
    if column is None:
        return np.zeros(n, dtype=bool)
    if not 0 <= column < X.shape[1]:
        raise ValueError(f"regime_column {column} outside the input dimension")
    return X[:, column] != 0


def fit_metamodel(inputs, maps, regime_keys=None, cfg: MetamodelConfig = MetamodelConfig()) -> MapMetamodel:
    """Fit the gate, the regime FPCA bases, and the per-component GPs.

    A map counts as flooded when its total volume exceeds cfg.volume_threshold.
    regime_keys overrides the per-row regime labels; by default they derive
    from cfg.regime_column (0 = no breach), or collapse to a single regime.
    """
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a nonempty (n, d) design")
    if isinstance(maps, np.ndarray):
        Y = np.asarray(maps, dtype=np.float64)
        side = int(round(math.sqrt(Y.shape[1])))
    else:
        side = maps[0].side
        Y = np.stack([m.values for m in maps])
    if Y.shape[0] != X.shape[0]:
        raise ValueError("need one map per input row")

    if regime_keys is None:
        keys = _regime_keys_from_inputs(X, cfg.regime_column, X.shape[0])
    else:
        keys = np.asarray(regime_keys)
        if keys.shape != (X.shape[0],):
            raise ValueError("regime_keys must have one entry per input row")
        keys = keys.astype(bool)  # breach present / absent
        if np.unique(keys).size > 1 and cfg.regime_column is None:
            raise ValueError("several regimes require cfg.regime_column for prediction")

    volumes = Y.sum(axis=1)
    flooded = volumes > cfg.volume_threshold

    classifier = None
    if cfg.use_hurdle:
        classifier = fit_classifier(X, flooded, cfg.forest, seed=cfg.seed)
        classifier.volume_threshold = cfg.volume_threshold
    else:
        flooded = np.ones(X.shape[0], dtype=bool)
        keys = np.zeros(X.shape[0], dtype=bool)

    regime_values = sorted(set(keys.tolist()), key=str)
    gp_seeds = named_seed(cfg.seed, "gp").spawn(len(regime_values) * cfg.n_pc)
    regimes = {}
    for ridx, key in enumerate(regime_values):
        rows = np.flatnonzero((keys == key) & flooded)
        if rows.size == 0:
            logger.warning("regime %r has no flooded training maps; it will predict the empty map", key)
            regimes[key] = None
            continue
        if rows.size < cfg.min_regime_size:
            raise ValueError(
                f"regime {key!r} has only {rows.size} flooded maps; need at least "
                f"{cfg.min_regime_size} (min_regime_size)"
            )
        fpca = fit_fpca(Y[rows], p_energy=cfg.p_energy, n_pc=cfg.n_pc)
        T = fpca_project_batch(fpca, Y[rows])
        gps = [
            fit_gp(
                X[rows],
                T[:, j],
                nugget=cfg.gp_nugget,
                n_restarts=cfg.gp_restarts,
                seed=gp_seeds[ridx * cfg.n_pc + j],
            )
            for j in range(cfg.n_pc)
        ]
        regimes[key] = _RegimeModel(fpca=fpca, gps=gps)
    return MapMetamodel(
        classifier=classifier,
        regimes=regimes,
        side=side,
        clip_negatives=cfg.clip_negatives,
        regime_column=cfg.regime_column if cfg.use_hurdle else None,
        config=cfg,
    )


def _predict_chunk(model: MapMetamodel, X: np.ndarray) -> np.ndarray:
    out = np.zeros((X.shape[0], model.side * model.side))
    if model.classifier is not None:
        flooded = model.classifier.predict(X)
    else:
        flooded = np.ones(X.shape[0], dtype=bool)
    keys = _regime_keys_from_inputs(X, model.regime_column, X.shape[0])
    for key in np.unique(keys[flooded]) if flooded.any() else []:
        rows = np.flatnonzero(flooded & (keys == key))
        if bool(key) not in model.regimes:
            logger.warning("regime %r was not seen at fit time; predicting the empty map", key)
            continue
        regime = model.regimes[bool(key)]
        if regime is None:
            continue
        T = np.column_stack([gp_mean_batch(gp, X[rows]) for gp in regime.gps])
        maps = fpca_inverse_batch(regime.fpca, T)
        if model.clip_negatives:
            np.maximum(maps, 0.0, out=maps)
        out[rows] = maps
    return out


def predict_maps(model: MapMetamodel, inputs) -> np.ndarray:
    """Predicted flat maps for each input row, chunked to bound peak memory."""
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected an (n, d) input array")
    out = np.empty((X.shape[0], model.side * model.side))
    for start in range(0, X.shape[0], _PREDICT_CHUNK):
        stop = min(start + _PREDICT_CHUNK, X.shape[0])
        out[start:stop] = _predict_chunk(model, X[start:stop])
    return out


def predict_map(model: MapMetamodel, x) -> GridMap:
    """Predicted map of one input vector."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return GridMap(model.side, predict_maps(model, x[None, :])[0])


def cross_validate_metamodel(inputs, maps, cfg: MetamodelConfig, n_folds: int = 10, threads: int = 1):
    """Out-of-fold predicted maps for every training row.

    Rows are dealt to folds round-robin in input order (deterministic); each
    fold's rows are predicted by a model fitted on the other folds.  Folds
    are independent, so the result does not depend on the thread count.
    """
    X = np.asarray(inputs, dtype=np.float64)
    Y = maps if isinstance(maps, np.ndarray) else np.stack([m.values for m in maps])
    n = X.shape[0]
    if not 2 <= n_folds <= n:
        raise ValueError("need 2 <= n_folds <= n")
    fold = np.arange(n) % n_folds

    def predict_fold(k):
        hold = fold == k
        model = fit_metamodel(X[~hold], Y[~hold], None, cfg)
        return hold, predict_maps(model, X[hold])

    out = np.empty_like(np.asarray(Y, dtype=np.float64))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(predict_fold, range(n_folds)))
    else:
        results = [predict_fold(k) for k in range(n_folds)]
    for hold, pred in results:
        out[hold] = pred
    return out
