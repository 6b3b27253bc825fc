"""Command-line workflows: fit surrogates, quantize, compute metrics, export.

Commands share one JSON run configuration (schema-validated, unknown keys
rejected).  All outputs are deterministic for a fixed config and seed; the
only timestamps live in a separate metadata.json.  Exit codes: 0 success,
1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import io as _io
import json
import math
import os
import struct
import sys
import zipfile
import zlib
from datetime import datetime, timezone
from pathlib import Path

import jsonschema
import numpy as np

from raremap_quant.campbell import campbell_grid_batch
from raremap_quant.core import InnerProductWeights, PrototypeSet, GridMap
from raremap_quant.fpca import FpcaModel, fpca_project_batch
from raremap_quant.gp import Matern52Params, gp_from_params
from raremap_quant.metamodel import (
    ForestConfig,
    HurdleClassifier,
    MapMetamodel,
    MetamodelConfig,
    _RegimeModel,
    _Tree,
    cross_validate_metamodel,
    fit_metamodel,
    predict_maps,
)
from raremap_quant.metrics import (
    BootstrapConfig,
    PerturbationConfig,
    assign_sample,
    excess_quantization_error,
    is_centroid_std,
    is_probability_cv,
    metric_summary,
    perturb_prototypes,
    relative_probability_error,
)
from raremap_quant.quantizer import LloydConfig, initialize_prototypes, lloyd_step, prototype_maps_algorithm
from raremap_quant.sampling import (
    SampleStream,
    density_from_config,
    is_weight_batch,
    named_seed,
)

__all__ = [
    "UsageError",
    "DataError",
    "NumericalError",
    "resolve_config",
    "read_map_archive",
    "write_map_archive",
    "save_bundle",
    "load_bundle",
    "main",
]


class UsageError(Exception):
    exit_code = 1


class DataError(Exception):
    exit_code = 2


class NumericalError(Exception):
    exit_code = 3


# ---------------------------------------------------------------------------
# Run configuration

_DENSITY_REF = {"$ref": "#/$defs/density"}

_DENSITY_DEF = {
    "oneOf": [
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["type", "breaks", "densities"],
            "properties": {
                "type": {"const": "piecewise_uniform"},
                "breaks": {"type": "array", "items": {"type": "number"}, "minItems": 2},
                "densities": {"type": "array", "items": {"type": "number"}, "minItems": 1},
            },
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["type", "family", "params", "lower", "upper"],
            "properties": {
                "type": {"const": "truncated_parametric"},
                "family": {"type": "string"},
                "params": {"type": "object"},
                "lower": {"type": "number"},
                "upper": {"type": "number"},
            },
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["type", "atoms"],
            "properties": {
                "type": {"const": "discrete_uniform"},
                "atoms": {"type": "array", "items": {"type": "number"}, "minItems": 1},
            },
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["type", "atom", "atom_mass", "lower", "upper", "uniform_mass"],
            "properties": {
                "type": {"const": "atom_plus_uniform"},
                "atom": {"type": "number"},
                "atom_mass": {"type": "number"},
                "lower": {"type": "number"},
                "upper": {"type": "number"},
                "uniform_mass": {"type": "number"},
            },
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["type", "location", "erosion"],
            "properties": {
                "type": {"const": "breach_pair"},
                "location": _DENSITY_REF,
                "erosion": _DENSITY_REF,
            },
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["type", "components"],
            "properties": {
                "type": {"const": "product"},
                "components": {"type": "array", "items": _DENSITY_REF, "minItems": 1},
            },
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["type", "offshore", "embankment_height"],
            "properties": {
                "type": {"const": "flood_inputs"},
                "offshore": {"type": "array", "items": _DENSITY_REF, "minItems": 5, "maxItems": 5},
                "embankment_height": {"type": "number"},
                "p_high": {"type": "number"},
                "p_low": {"type": "number"},
                "crest_fraction": {"type": "number"},
                "period_hours": {"type": "number"},
                "step_minutes": {"type": "number"},
            },
        },
    ]
}

_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer"},
        "densities": {
            "type": "object",
            "additionalProperties": False,
            "required": ["f", "g"],
            "properties": {"f": _DENSITY_REF, "g": _DENSITY_REF},
        },
        "quantizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ell": {"type": "integer", "minimum": 1},
                "n_maps": {"type": "integer", "minimum": 1},
                "n_tilde": {"type": "integer", "minimum": 1},
                "min_distance": {"type": "number", "exclusiveMinimum": 0},
                "max_iterations": {"type": "integer", "minimum": 1},
                "seed": {"type": ["integer", "null"]},
                "predictor": {"enum": ["bundle", "campbell", "identity"]},
                "pilot_size": {"type": "integer", "minimum": 1},
            },
        },
        "metamodel": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "volume_threshold": {"type": "number"},
                "p_energy": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "n_pc": {"type": "integer", "minimum": 1},
                "use_hurdle": {"type": "boolean"},
                "regime_column": {"type": ["integer", "null"], "minimum": 0},
                "min_regime_size": {"type": "integer", "minimum": 1},
                "clip_negatives": {"type": "boolean"},
                "forest": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "n_trees": {"type": "integer", "minimum": 1},
                        "max_depth": {"type": "integer", "minimum": 1},
                    },
                },
                "gp_nugget": {"type": ["number", "null"], "minimum": 0},
                "gp_restarts": {"type": "integer", "minimum": 1},
                "cv_folds": {"type": "integer", "minimum": 0},
            },
        },
        "metrics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_gamma": {"type": "integer", "minimum": 1},
                "scale": {"type": "number", "minimum": 0},
                "n_boot": {"type": "integer", "minimum": 2},
                "n_e": {"type": "integer", "minimum": 1},
            },
        },
        "io": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "inputs": {"type": "string"},
                "maps": {"type": "string"},
                "truth": {"type": ["string", "null"]},
                "bundle": {"type": "string"},
                "output_dir": {"type": "string"},
                "prototypes": {"type": ["string", "null"]},
                "image_range": {
                    "type": ["array", "null"],
                    "items": {"type": "number"},
                    "minItems": 2,
                    "maxItems": 2,
                },
                "png": {"type": "boolean"},
                "contour_level": {"type": ["number", "null"]},
                "fpca_sample_size": {"type": "integer", "minimum": 1},
                "fpca_bins": {"type": "integer", "minimum": 2},
            },
        },
    },
    "$defs": {"density": _DENSITY_DEF},
}

_DEFAULTS = {
    "seed": 0,
    "quantizer": {
        "n_maps": 1000,
        "n_tilde": 10_000,
        "min_distance": 1e-16,
        "max_iterations": 100,
        "seed": None,
        "predictor": "bundle",
        "pilot_size": 256,
    },
    "metamodel": {
        "volume_threshold": 0.0,
        "p_energy": 0.98,
        "n_pc": 2,
        "use_hurdle": True,
        "regime_column": None,
        "min_regime_size": 20,
        "clip_negatives": True,
        "forest": {"n_trees": 100, "max_depth": 12},
        "gp_nugget": None,
        "gp_restarts": 10,
        "cv_folds": 10,
    },
    "metrics": {"n_gamma": 100, "scale": 0.1, "n_boot": 100, "n_e": 1_000_000},
    "io": {
        "inputs": "inputs.csv",
        "maps": "maps.rmq",
        "truth": None,
        "bundle": "metamodel.bundle",
        "output_dir": "out",
        "prototypes": None,
        "image_range": None,
        "png": False,
        "contour_level": None,
        "fpca_sample_size": 10_000,
        "fpca_bins": 40,
    },
}

_PATH_KEYS = ("inputs", "maps", "truth", "bundle", "output_dir", "prototypes")


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(raw: dict, seed_override: int | None = None, base_dir: str | os.PathLike = ".") -> dict:
    """Merge defaults, apply the seed override, validate, resolve io paths.

    The returned document is the frozen provenance copy embedded in outputs.
    """
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    cfg = _merge(_DEFAULTS, raw)
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
        cfg.get("quantizer", {})["seed"] = None
    if cfg.get("quantizer", {}).get("seed") is None:
        cfg.setdefault("quantizer", {})["seed"] = cfg["seed"]
    try:
        jsonschema.validate(cfg, _SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "(root)"
        raise UsageError(f"invalid config at {path}: {exc.message}") from None
    base = Path(base_dir)
    for key in _PATH_KEYS:
        value = cfg["io"].get(key)
        if value is not None:
            cfg["io"][key] = str((base / value).resolve()) if not Path(value).is_absolute() else value
    return cfg


def _load_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from None


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [_json_safe(v) for v in obj.tolist()]
    return obj


def _dump_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_json_safe(obj), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_metadata(outdir, command):
    try:
        from importlib.metadata import version

        pkg_version = version("raremap-quant")
    except Exception:
        pkg_version = "unknown"
    _dump_json(
        Path(outdir) / "metadata.json",
        {
            "command": command,
            "created_utc": datetime.now(timezone.utc).isoformat(),
            "version": pkg_version,
        },
    )


# ---------------------------------------------------------------------------
# Map archives

_MAGIC = b"RMQ1"
_HEADER = struct.Struct("<4sIII")


def write_map_archive(path, side: int, maps: np.ndarray) -> None:
    """Binary map container: RMQ1 magic, count/side/format header, f64 LE payload."""
    Y = np.ascontiguousarray(maps, dtype="<f8")
    if Y.ndim != 2 or Y.shape[1] != side * side:
        raise DataError(f"maps must be (n, {side * side}) for side {side}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, Y.shape[0], side, 1))
        fh.write(Y.tobytes())


def read_map_archive(path) -> tuple[int, np.ndarray]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read archive: {exc}") from None
    if len(blob) < _HEADER.size:
        raise DataError("truncated archive header")
    magic, count, side, flag = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise DataError("bad archive magic")
    if flag != 1:
        raise DataError(f"unsupported archive value format {flag}")
    expected = count * side * side * 8
    if len(blob) - _HEADER.size != expected:
        raise DataError("archive count does not match payload length")
    Y = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).reshape(count, side * side)
    return side, Y.astype(np.float64)


def _load_inputs(path) -> np.ndarray:
    try:
        X = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except OSError as exc:
        raise DataError(f"cannot read inputs: {exc}") from None
    except ValueError as exc:
        raise DataError(f"malformed inputs CSV: {exc}") from None
    return X


# ---------------------------------------------------------------------------
# Metamodel bundles (deterministic ZIP of manifest.json + arrays/*.npy)


def _npy_bytes(arr) -> bytes:
    buf = _io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _npy_load(data: bytes) -> np.ndarray:
    return np.lib.format.read_array(_io.BytesIO(data), allow_pickle=False)


def _write_zip(path, entries: dict[str, bytes]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(entries):
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            info.external_attr = 0o644 << 16
            zf.writestr(info, entries[name])


def _metamodel_config_dict(cfg: MetamodelConfig) -> dict:
    return {
        "volume_threshold": cfg.volume_threshold,
        "p_energy": cfg.p_energy,
        "n_pc": cfg.n_pc,
        "use_hurdle": cfg.use_hurdle,
        "regime_column": cfg.regime_column,
        "min_regime_size": cfg.min_regime_size,
        "clip_negatives": cfg.clip_negatives,
        "forest": {"n_trees": cfg.forest.n_trees, "max_depth": cfg.forest.max_depth},
        "gp_nugget": cfg.gp_nugget,
        "gp_restarts": cfg.gp_restarts,
        "seed": cfg.seed,
    }


def _metamodel_config_from_dict(d: dict) -> MetamodelConfig:
    forest = ForestConfig(**d["forest"])
    rest = {k: v for k, v in d.items() if k != "forest"}
    return MetamodelConfig(forest=forest, **rest)


def save_bundle(path, model: MapMetamodel, run_config: dict, extra: dict | None = None) -> None:
    """Serialize a fitted metamodel with its provenance config.

    Stores forest trees and per-regime FPCA arrays verbatim, and GP models as
    (training data, hyperparameters, beta); factorizations are rebuilt on
    load, which reproduces identical predictions.
    """
    arrays: dict[str, np.ndarray] = {}
    manifest = {
        "format": "raremap-quant-bundle",
        "version": 1,
        "side": model.side,
        "clip_negatives": model.clip_negatives,
        "regime_column": model.regime_column,
        "metamodel_config": _metamodel_config_dict(model.config),
        "run_config": run_config,
    }
    if extra:
        manifest.update(extra)

    clf = model.classifier
    if clf is None:
        manifest["classifier"] = None
    else:
        manifest["classifier"] = {
            "n_trees": clf.config.n_trees,
            "max_depth": clf.config.max_depth,
            "seed": clf.seed,
            "n_features": clf.n_features,
            "volume_threshold": clf.volume_threshold,
        }
        offsets = np.zeros(len(clf.trees) + 1, dtype=np.int64)
        for i, tree in enumerate(clf.trees):
            offsets[i + 1] = offsets[i] + tree.feature.size
        arrays["classifier_offsets"] = offsets
        for field in ("feature", "threshold", "left", "right", "value"):
            arrays[f"classifier_{field}"] = np.concatenate(
                [getattr(t, field) for t in clf.trees]
            )
        arrays["classifier_oob"] = np.stack([t.oob_mask for t in clf.trees])

    regime_entries = []
    for i, (key, regime) in enumerate(model.regimes.items()):
        entry = {"key": bool(key), "empty": regime is None}
        if regime is not None:
            fp = regime.fpca
            entry.update(n_pc=fp.n_pc, p_energy=fp.p_energy)
            arrays[f"regime{i}_retained"] = fp.retained_indices
            arrays[f"regime{i}_energies"] = fp.energies
            arrays[f"regime{i}_means"] = fp.coeff_means
            arrays[f"regime{i}_projection"] = fp.projection
            arrays[f"regime{i}_pc_variances"] = fp.pc_variances
            arrays[f"regime{i}_X"] = regime.gps[0].X_train
            arrays[f"regime{i}_T"] = np.column_stack([gp.z_train for gp in regime.gps])
            entry["gps"] = [
                {
                    "beta": gp.beta,
                    "variance": gp.params.variance,
                    "lengthscales": [float(v) for v in gp.params.lengthscales],
                    "nugget": gp.params.nugget,
                }
                for gp in regime.gps
            ]
        regime_entries.append(entry)
    manifest["regimes"] = regime_entries

    entries = {"manifest.json": json.dumps(_json_safe(manifest), sort_keys=True, indent=2).encode()}
    for name, arr in arrays.items():
        entries[f"arrays/{name}.npy"] = _npy_bytes(arr)
    _write_zip(path, entries)


def load_bundle(path) -> tuple[MapMetamodel, dict]:
    """Reconstruct a saved metamodel; returns (model, manifest)."""
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise DataError(f"cannot read bundle: {exc}") from None
    with zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
        except KeyError:
            raise DataError("not a metamodel bundle (missing manifest)") from None
        if manifest.get("format") != "raremap-quant-bundle":
            raise DataError("not a metamodel bundle")
        arrays = {
            Path(name).stem: _npy_load(zf.read(name))
            for name in zf.namelist()
            if name.startswith("arrays/")
        }

    classifier = None
    spec = manifest["classifier"]
    if spec is not None:
        offsets = arrays["classifier_offsets"]
        oob = arrays["classifier_oob"]
        trees = []
        for i in range(spec["n_trees"]):
            lo, hi = offsets[i], offsets[i + 1]
            trees.append(
                _Tree(
                    feature=arrays["classifier_feature"][lo:hi],
                    threshold=arrays["classifier_threshold"][lo:hi],
                    left=arrays["classifier_left"][lo:hi],
                    right=arrays["classifier_right"][lo:hi],
                    value=arrays["classifier_value"][lo:hi],
                    oob_mask=oob[i],
                )
            )
        classifier = HurdleClassifier(
            trees=trees,
            n_features=spec["n_features"],
            config=ForestConfig(n_trees=spec["n_trees"], max_depth=spec["max_depth"]),
            seed=spec["seed"],
            volume_threshold=spec["volume_threshold"],
        )

    regimes = {}
    for i, entry in enumerate(manifest["regimes"]):
        key = bool(entry["key"])
        if entry["empty"]:
            regimes[key] = None
            continue
        fpca = FpcaModel(
            side=manifest["side"],
            p_energy=entry["p_energy"],
            n_pc=entry["n_pc"],
            retained_indices=arrays[f"regime{i}_retained"],
            energies=arrays[f"regime{i}_energies"],
            coeff_means=arrays[f"regime{i}_means"],
            projection=arrays[f"regime{i}_projection"],
            pc_variances=arrays[f"regime{i}_pc_variances"],
        )
        X = arrays[f"regime{i}_X"]
        T = arrays[f"regime{i}_T"]
        gps = [
            gp_from_params(
                X,
                T[:, j],
                Matern52Params(
                    variance=g["variance"],
                    lengthscales=np.asarray(g["lengthscales"]),
                    nugget=g["nugget"],
                ),
                beta=g["beta"],
            )
            for j, g in enumerate(entry["gps"])
        ]
        regimes[key] = _RegimeModel(fpca=fpca, gps=gps)

    model = MapMetamodel(
        classifier=classifier,
        regimes=regimes,
        side=manifest["side"],
        clip_negatives=manifest["clip_negatives"],
        regime_column=manifest["regime_column"],
        config=_metamodel_config_from_dict(manifest["metamodel_config"]),
    )
    return model, manifest


# ---------------------------------------------------------------------------
# Rendering


def _intensity(values: np.ndarray, side: int, lo: float, hi: float) -> np.ndarray:
    if not hi > lo:
        raise DataError("image range must satisfy hi > lo")
    t = np.clip((values.reshape(side, side) - lo) / (hi - lo), 0.0, 1.0)
    return np.rint(t * 255.0).astype(np.uint8)


def _pgm_bytes(values, side, lo, hi) -> bytes:
    pix = _intensity(values, side, lo, hi)
    return b"P5\n%d %d\n255\n" % (side, side) + pix.tobytes()


def _png_bytes(rgb: np.ndarray) -> bytes:
    h, w, _ = rgb.shape
    raw = b"".join(b"\x00" + rgb[i].tobytes() for i in range(h))

    def chunk(tag, data):
        body = tag + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    header = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", header)
        + chunk(b"IDAT", zlib.compress(raw, 9))
        + chunk(b"IEND", b"")
    )


def _render_png(values, side, lo, hi, contour_level) -> bytes:
    # white-to-blue ramp; optional contour at a fixed depth drawn dark
    t = _intensity(values, side, lo, hi)
    rgb = np.empty((side, side, 3), dtype=np.uint8)
    rgb[..., 0] = 255 - t
    rgb[..., 1] = 255 - t
    rgb[..., 2] = 255
    if contour_level is not None:
        depth = values.reshape(side, side)
        wet = depth >= contour_level
        dry = ~wet
        edge = np.zeros_like(wet)
        edge[:-1, :] |= wet[:-1, :] & dry[1:, :]
        edge[1:, :] |= wet[1:, :] & dry[:-1, :]
        edge[:, :-1] |= wet[:, :-1] & dry[:, 1:]
        edge[:, 1:] |= wet[:, 1:] & dry[:, :-1]
        rgb[edge] = (16, 16, 96)
    return _png_bytes(rgb)


# ---------------------------------------------------------------------------
# Commands


def _densities(cfg):
    section = cfg.get("densities")
    if section is None:
        return None, None
    try:
        return density_from_config(section["f"]), density_from_config(section["g"])
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad density config: {exc}") from None


def _weights_for(cfg, X) -> np.ndarray:
    f, g = _densities(cfg)
    if f is None:
        return np.ones(X.shape[0])
    if f.dim != X.shape[1]:
        raise DataError(f"densities have dimension {f.dim}, inputs have {X.shape[1]}")
    return is_weight_batch(f, g, X)


def _relative_l2_summary(Y_true, Y_pred) -> dict:
    denom = np.linalg.norm(Y_true, axis=1)
    num = np.linalg.norm(Y_pred - Y_true, axis=1)
    rel = np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), math.nan)
    return metric_summary(rel)


def cmd_fit(cfg: dict, threads: int = 1) -> int:
    X = _load_inputs(cfg["io"]["inputs"])
    side, Y = read_map_archive(cfg["io"]["maps"])
    if X.shape[0] != Y.shape[0]:
        raise DataError(
            f"inputs row count {X.shape[0]} does not equal archive map count {Y.shape[0]}"
        )
    mm = dict(cfg["metamodel"])
    folds = mm.pop("cv_folds")
    mm_cfg = _metamodel_config_from_dict({**mm, "seed": cfg["seed"]})

    cv = None
    if folds >= 2 and X.shape[0] >= folds:
        pred = cross_validate_metamodel(X, Y, mm_cfg, n_folds=folds, threads=threads)
        cv = {"folds": folds, "map_relative_l2": _relative_l2_summary(Y, pred)}

    model = fit_metamodel(X, Y, None, mm_cfg)
    save_bundle(cfg["io"]["bundle"], model, cfg, extra={"cv": cv})
    print(json.dumps(_json_safe({"bundle": cfg["io"]["bundle"], "cv": cv}), sort_keys=True))
    return 0


def _predictor_for(cfg, kind):
    if kind == "bundle":
        model, _ = load_bundle(cfg["io"]["bundle"])
        return (lambda X: predict_maps(model, X)), model.side
    if kind == "campbell":
        return campbell_grid_batch, 64
    if kind == "identity":
        return (lambda X: np.asarray(X, dtype=np.float64)), 1
    raise UsageError(f"unknown predictor {kind!r}")


def _require_ell(cfg) -> int:
    ell = cfg["quantizer"].get("ell")
    if ell is None:
        raise UsageError("quantizer.ell is required for this command")
    return ell


def cmd_quantize(cfg: dict, analytic: str | None = None, threads: int = 1) -> int:
    del threads  # the quantization pipeline is sequential by construction
    q = cfg["quantizer"]
    ell = _require_ell(cfg)
    predictor, side = _predictor_for(cfg, analytic or q["predictor"])
    f, g = _densities(cfg)
    if f is None:
        raise UsageError("quantize requires a densities section")
    w = InnerProductWeights(side, np.ones(side * side))

    pilot_X = SampleStream(g, named_seed(q["seed"], "init")).draw(q["pilot_size"])
    init = initialize_prototypes(predictor(pilot_X), ell)
    lloyd_cfg = LloydConfig(
        ell=ell,
        n_maps=q["n_maps"],
        n_tilde=q["n_tilde"],
        min_distance=q["min_distance"],
        max_iterations=q["max_iterations"],
        seed=q["seed"],
    )
    res = prototype_maps_algorithm(lloyd_cfg, predictor, f, g, init, w)

    outdir = Path(cfg["io"]["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    write_map_archive(outdir / "prototypes.rmq", side, res.prototypes.matrix)

    probs = [float(p) for p in res.probabilities]
    freqs = [int(round(1.0 / p)) if p > 0 else None for p in probs]
    _dump_json(
        outdir / "result.json",
        {
            "ell": ell,
            "side": side,
            "probabilities": probs,
            "frequencies": freqs,
            "iterations": res.iterations,
            "converged": res.converged,
            "config": cfg,
        },
    )
    with open(outdir / "error_trace.csv", "w", encoding="utf-8") as fh:
        fh.write("iteration,error\n")
        for i, err in enumerate(res.error_trace):
            fh.write(f"{i},{float(err)!r}\n")

    G = res.prototypes.matrix
    if cfg["io"]["image_range"] is not None:
        lo, hi = cfg["io"]["image_range"]
    else:
        lo, hi = float(G.min()), float(G.max())
        if hi <= lo:
            hi = lo + 1.0
    for j in range(ell):
        (outdir / f"prototype_{j + 1}.pgm").write_bytes(_pgm_bytes(G[j], side, lo, hi))
        if cfg["io"]["png"]:
            png = _render_png(G[j], side, lo, hi, cfg["io"]["contour_level"])
            (outdir / f"prototype_{j + 1}.png").write_bytes(png)

    _dump_json(outdir / "config_resolved.json", cfg)
    _write_metadata(outdir, "quantize")
    print(json.dumps(_json_safe({"output_dir": str(outdir), "converged": res.converged}), sort_keys=True))
    return 0


def _lloyd_fixed_sample(init, Y, wts, w, max_iterations, min_distance):
    gamma = init
    lam = w.lam
    for _ in range(max_iterations):
        new = lloyd_step(gamma, Y, wts, w)
        disp = math.sqrt(max(float(np.max(((new.matrix - gamma.matrix) ** 2) @ lam)), 0.0))
        gamma = new
        if disp <= min_distance:
            break
    return gamma


def cmd_metrics(cfg: dict, threads: int = 1) -> int:
    model, _ = load_bundle(cfg["io"]["bundle"])
    X = _load_inputs(cfg["io"]["inputs"])
    truth_path = cfg["io"]["truth"] or cfg["io"]["maps"]
    side, Y_true = read_map_archive(truth_path)
    if X.shape[0] != Y_true.shape[0]:
        raise DataError("truth archive is not aligned with inputs")
    if side != model.side:
        raise DataError(f"truth maps have side {side}, bundle predicts side {model.side}")

    n_e = min(cfg["metrics"]["n_e"], X.shape[0])
    X, Y_true = X[:n_e], Y_true[:n_e]
    wts = _weights_for(cfg, X)
    Y_pred = predict_maps(model, X)
    w = InnerProductWeights(side, np.ones(side * side))

    q = cfg["quantizer"]
    ell = _require_ell(cfg)
    init = initialize_prototypes(Y_true, ell)
    gamma_star = _lloyd_fixed_sample(init, Y_true, wts, w, q["max_iterations"], q["min_distance"])
    gamma_hat = _lloyd_fixed_sample(init, Y_pred, wts, w, q["max_iterations"], q["min_distance"])
    excess = excess_quantization_error(gamma_hat, gamma_star, Y_true, wts, w)

    m = cfg["metrics"]
    family = perturb_prototypes(
        gamma_star, PerturbationConfig(n_gamma=m["n_gamma"], scale=m["scale"], seed=cfg["seed"])
    )
    boot_cfg = BootstrapConfig(n_boot=m["n_boot"], seed=cfg["seed"])

    def rows_for(r):
        gamma_r = family[r]
        sample_r = assign_sample(gamma_r, Y_true, wts, w)
        rows = []
        for j in range(1, ell + 1):
            rows.append((r, j, "relative_probability_error",
                         relative_probability_error(gamma_r, j, Y_true, Y_pred, wts, w)))
            try:
                cv = is_probability_cv(gamma_r, j, sample_r, boot_cfg)
            except ValueError:
                cv = math.nan
            rows.append((r, j, "is_probability_cv", cv))
            try:
                std = is_centroid_std(gamma_r, j, sample_r, boot_cfg)
            except ValueError:
                std = math.nan
            rows.append((r, j, "is_centroid_std", std))
        return rows

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_r = list(pool.map(rows_for, range(m["n_gamma"])))
    else:
        per_r = [rows_for(r) for r in range(m["n_gamma"])]

    all_rows = [(-1, 0, "excess_quantization_error", excess)]
    for rows in per_r:
        all_rows.extend(rows)

    outdir = Path(cfg["io"]["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "metrics.csv", "w", encoding="utf-8") as fh:
        fh.write("r,j,metric,value\n")
        for r, j, name, value in all_rows:
            fh.write(f"{r},{j},{name},{float(value)!r}\n")

    by_metric = {}
    for _, _, name, value in all_rows[1:]:
        by_metric.setdefault(name, []).append(value)
    summary = {name: metric_summary(values) for name, values in sorted(by_metric.items())}
    summary["excess_quantization_error"] = excess
    _dump_json(outdir / "metrics_summary.json", {"summary": summary, "config": cfg})
    _write_metadata(outdir, "metrics")
    print(json.dumps(_json_safe({"output_dir": str(outdir), "summary": summary}), sort_keys=True))
    return 0


def cmd_fpca_axes(cfg: dict) -> int:
    model, _ = load_bundle(cfg["io"]["bundle"])
    regime = next((r for r in model.regimes.values() if r is not None), None)
    if regime is None:
        raise DataError("bundle has no fitted regime to project with")
    if regime.fpca.n_pc < 2:
        raise DataError("fpca-axes needs a metamodel with at least two principal components")

    f, g = _densities(cfg)
    if f is None:
        raise UsageError("fpca-axes requires a densities section")
    n = cfg["io"]["fpca_sample_size"]
    X = SampleStream(g, named_seed(cfg["seed"], "sampling")).draw(n)
    wts = is_weight_batch(f, g, X)
    maps = predict_maps(model, X)
    T = fpca_project_batch(regime.fpca, maps)

    proto_path = cfg["io"]["prototypes"] or str(Path(cfg["io"]["output_dir"]) / "prototypes.rmq")
    proto_side, G = read_map_archive(proto_path)
    if proto_side != model.side:
        raise DataError("prototype archive side does not match the bundle")
    gamma = PrototypeSet([GridMap(proto_side, row) for row in G])
    sample = assign_sample(gamma, maps, wts, InnerProductWeights(proto_side, np.ones(G.shape[1])))
    cells = sample.assignments + 1

    bins = cfg["io"]["fpca_bins"]
    t1, t2 = T[:, 0], T[:, 1]
    weight_sums, xe, ye = np.histogram2d(t1, t2, bins=bins, weights=wts)
    ix = np.clip(np.searchsorted(xe, t1, side="right") - 1, 0, bins - 1)
    iy = np.clip(np.searchsorted(ye, t2, side="right") - 1, 0, bins - 1)
    with np.errstate(divide="ignore"):
        log_bin = np.log(weight_sums)

    outdir = Path(cfg["io"]["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "fpca_axes.csv", "w", encoding="utf-8") as fh:
        fh.write("t1,t2,cell,bin_log_weight\n")
        for k in range(n):
            fh.write(
                f"{float(t1[k])!r},{float(t2[k])!r},{int(cells[k])},"
                f"{float(log_bin[ix[k], iy[k]])!r}\n"
            )
    counts, _, _ = np.histogram2d(t1, t2, bins=[xe, ye])
    with open(outdir / "fpca_bins.csv", "w", encoding="utf-8") as fh:
        fh.write("bin_i,bin_j,log_weight\n")
        for i, j in zip(*np.nonzero(counts > 0)):
            fh.write(f"{i},{j},{float(log_bin[i, j])!r}\n")

    _dump_json(outdir / "config_resolved.json", cfg)
    _write_metadata(outdir, "fpca-axes")
    print(json.dumps({"output_dir": str(outdir), "samples": int(n)}, sort_keys=True))
    return 0


def cmd_campbell_demo(cfg: dict) -> int:
    """Generate a synthetic input/map dataset from the analytic test field."""
    _, g = _densities(cfg)
    n = cfg["quantizer"]["n_maps"]
    if g is not None:
        if g.dim != 8:
            raise UsageError("campbell-demo needs an 8-dimensional sampling density")
        X = SampleStream(g, named_seed(cfg["seed"], "sampling")).draw(n)
    else:
        rng = np.random.default_rng(named_seed(cfg["seed"], "sampling"))
        X = rng.uniform(-1.0, 5.0, size=(n, 8))
    Y = campbell_grid_batch(X)

    inputs_path = Path(cfg["io"]["inputs"])
    inputs_path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(inputs_path, X, delimiter=",", fmt="%.17g")
    write_map_archive(cfg["io"]["maps"], 64, Y)
    outdir = Path(cfg["io"]["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    _dump_json(outdir / "config_resolved.json", cfg)
    _write_metadata(outdir, "campbell-demo")
    print(json.dumps({"count": int(n), "inputs": str(inputs_path), "maps": cfg["io"]["maps"]},
                     sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# Entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="raremap-quant", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("fit", "quantize", "metrics", "fpca-axes", "campbell-demo"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: RMQ_THREADS or 1)")
        if name == "quantize":
            p.add_argument("--analytic", choices=("campbell", "identity"), default=None,
                           help="quantize an analytic field instead of a bundle")
    return parser


def _resolve_threads(value) -> int:
    if value is None:
        value = os.environ.get("RMQ_THREADS", "1")
    try:
        threads = int(value)
    except (TypeError, ValueError):
        raise UsageError(f"invalid thread count {value!r}") from None
    if threads < 1:
        raise UsageError("thread count must be >= 1")
    return threads


_NUMERICAL_HINTS = ("positive definite", "non-finite", "did not converge", "no finite")


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        threads = _resolve_threads(args.threads)
        raw = _load_json(args.config)
        cfg = resolve_config(raw, seed_override=args.seed, base_dir=Path(args.config).parent)
        if args.command == "fit":
            return cmd_fit(cfg, threads=threads)
        if args.command == "quantize":
            return cmd_quantize(cfg, analytic=args.analytic, threads=threads)
        if args.command == "metrics":
            return cmd_metrics(cfg, threads=threads)
        if args.command == "fpca-axes":
            return cmd_fpca_axes(cfg)
        return cmd_campbell_demo(cfg)
    except (UsageError, DataError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except np.linalg.LinAlgError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        numerical = any(hint in str(exc) for hint in _NUMERICAL_HINTS)
        print(f"error: {exc}", file=sys.stderr)
        return 3 if numerical else 2


if __name__ == "__main__":
    sys.exit(main())
