"""File formats: datasets, targets, checkpoints and traces.

JSON floats are written with repr precision so every format round-trips
exactly. Non-finite floats are stored as the strings "inf", "-inf", "nan".
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np

from . import __version__
from .hermite import make_activation
from .hierarchy import BrainDumpModel, Dataset, Hierarchy, JuntaDef, ProximityMap
from .ptf import PtfClaim, SparsePoly
from .resnet import ResNetParams
from .train import TRACE_COLUMNS, TrainTrace

FORMAT_VERSION = 1


class FormatError(ValueError):
    """Corrupt file or unsupported format version."""


def _enc(v):
    if isinstance(v, float) and not np.isfinite(v):
        return "nan" if np.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, (np.floating,)):
        return _enc(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.ndarray):
        return [_enc(x) for x in v.tolist()]
    if isinstance(v, dict):
        return {str(k): _enc(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_enc(x) for x in v]
    return v


_SPECIAL = {"inf": float("inf"), "-inf": float("-inf"), "nan": float("nan")}


def _dec_float(v):
    return _SPECIAL[v] if isinstance(v, str) else float(v)


def canonical_json(obj) -> str:
    return json.dumps(_enc(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_json(path, obj):
    Path(path).write_text(json.dumps(_enc(obj), sort_keys=True, indent=1, allow_nan=False) + "\n",
                          encoding="utf-8")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: corrupt JSON ({e})") from None


def _check_version(obj, path):
    v = obj.get("format_version")
    if v != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {v!r}")


# ---------------------------------------------------------------- dataset

def save_dataset(ds: Dataset, path, manifest: str | None = None):
    meta = dict(ds.meta)
    if manifest is not None:
        meta["manifest"] = manifest
    samples = [{"x": ds.X[i].tolist(), "y": ds.Y[i].tolist()} for i in range(ds.m)]
    write_json(path, {"format_version": FORMAT_VERSION, "meta": meta, "samples": samples})


def load_dataset(path) -> Dataset:
    obj = read_json(path)
    _check_version(obj, path)
    try:
        meta = obj["meta"]
        S = obj["samples"]
        if not S:
            X = np.zeros((0, meta["G"], meta["d"]))
            Y = np.zeros((0, meta["G"], meta["n"]))
        else:
            X = np.array([s["x"] for s in S], dtype=float)
            Y = np.array([s["y"] for s in S], dtype=float)
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed dataset ({e})") from None
    return Dataset(X, Y, meta)


# ---------------------------------------------------------------- targets

def _claim_json(c: PtfClaim):
    return {"K": c.K, "M": c.M, "B": c.B, "xi": c.xi, "witness": c.witness.to_json()}


def _claim_from(obj):
    return PtfClaim(int(obj["K"]), float(obj["M"]), float(obj["B"]), float(obj["xi"]),
                    SparsePoly.from_json(obj["witness"]))


def target_to_json(target) -> dict:
    if isinstance(target, BrainDumpModel):
        return {"kind": "braindump", "d": target.d, "r": target.r, "K": target.K, "k": target.k,
                "q_labels": target.q_labels, "deps": target.deps, "tables": target.tables,
                "weights": target.weights}
    if isinstance(target, Hierarchy):
        return {"kind": "junta", "d": target.d, "n": target.n, "K": target.K,
                "levels": [np.asarray(L) for L in target.levels],
                "proximity": target.proximity.to_json(),
                "defs": [{"level": f.level, "deps": list(f.deps), "table": list(f.table)}
                         for f in target.defs],
                "witnesses": None if target.witnesses is None
                else [_claim_json(c) for c in target.witnesses]}
    raise TypeError(f"unsupported target type {type(target).__name__}")


def target_from_json(obj):
    kind = obj.get("kind")
    if kind == "braindump":
        return BrainDumpModel(int(obj["d"]), int(obj["r"]), int(obj["K"]), int(obj["k"]),
                              int(obj["q_labels"]), np.array(obj["deps"], dtype=np.int64),
                              np.array(obj["tables"], dtype=float),
                              np.array(obj["weights"], dtype=np.int8))
    if kind == "junta":
        defs = [JuntaDef(int(f["level"]), tuple(int(v) for v in f["deps"]),
                         tuple(float(v) for v in f["table"])) for f in obj["defs"]]
        wits = obj.get("witnesses")
        return Hierarchy(int(obj["d"]), int(obj["n"]), int(obj["K"]),
                         [np.array(L, dtype=np.int64) for L in obj["levels"]],
                         ProximityMap(np.array(obj["proximity"]["table"], dtype=np.int64)), defs,
                         None if wits is None else [_claim_from(c) for c in wits])
    raise FormatError(f"unknown target kind {kind!r}")


def save_target(target, path, manifest: str | None = None):
    obj = target_to_json(target)
    obj["format_version"] = FORMAT_VERSION
    if manifest is not None:
        obj["manifest"] = manifest
    write_json(path, obj)


def load_target(path):
    obj = read_json(path)
    _check_version(obj, path)
    try:
        return target_from_json(obj)
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path}: malformed target ({e})") from None


# ---------------------------------------------------------------- checkpoints

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _write_npz(path, arrays: dict):
    """npz with fixed member timestamps so equal arrays give equal bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_ZIP_DATE), buf.getvalue())


def save_checkpoint(params: ResNetParams, stem, manifest: str | None = None, extra=None):
    """Writes <stem>.npz (tensors) and <stem>.json (header with shapes and config)."""
    stem = Path(stem)
    arrays = {"WD": params.WD}
    for k in range(1, params.D):
        arrays[f"W1_{k}"] = params.W1[k - 1]
        arrays[f"b_{k}"] = params.b[k - 1]
        arrays[f"W2_{k}"] = params.W2[k - 1]
    _write_npz(stem.with_suffix(".npz"), arrays)
    header = {"format_version": FORMAT_VERSION, "library_version": __version__,
              "d": params.d, "n": params.n, "q_width": params.q_width, "D": params.D,
              "beta": params.beta, "seed": params.seed, "proximity": params.proximity.to_json(),
              "activation": {"name": params.activation.name, "K": params.activation.K},
              "shapes": {k: list(v.shape) for k, v in sorted(arrays.items())},
              "tensors": stem.with_suffix(".npz").name}
    if manifest is not None:
        header["manifest"] = manifest
    if extra:
        header["extra"] = extra
    write_json(stem.with_suffix(".json"), header)


def load_checkpoint(stem, tol: float = 1e-8) -> ResNetParams:
    stem = Path(stem)
    h = read_json(stem.with_suffix(".json"))
    _check_version(h, stem.with_suffix(".json"))
    try:
        with np.load(stem.with_suffix(".npz"), allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError, zipfile.BadZipFile) as e:
        raise FormatError(f"{stem}.npz: cannot read tensors ({e})") from None
    for k, shp in h["shapes"].items():
        if k not in arrays or list(arrays[k].shape) != shp:
            raise FormatError(f"{stem}.npz: tensor {k} missing or misshaped")
    D = int(h["D"])
    act = make_activation(h["activation"]["name"], K=int(h["activation"]["K"]))
    p = ResNetParams(int(h["d"]), int(h["n"]), int(h["q_width"]), D,
                     ProximityMap(np.array(h["proximity"]["table"], dtype=np.int64)),
                     float(h["beta"]),
                     [arrays[f"W1_{k}"] for k in range(1, D)],
                     [arrays[f"b_{k}"] for k in range(1, D)],
                     [arrays[f"W2_{k}"] for k in range(1, D)],
                     arrays["WD"], act, h.get("seed"))
    p.check(tol)
    return p


# ---------------------------------------------------------------- traces

def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def trace_csv_text(trace: TrainTrace, manifest: str | None = None) -> str:
    """CSV with RFC quoting and \n line ends. A leading "# manifest" line
    records the manifest hash; readers skip lines starting with '#'."""
    buf = io.StringIO()
    if manifest is not None:
        buf.write(f"# manifest {manifest}\n")
    w = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(TRACE_COLUMNS)
    for r in trace.records:
        w.writerow([_cell(r[c]) for c in TRACE_COLUMNS])
    return buf.getvalue()


def save_trace_csv(trace: TrainTrace, path, manifest: str | None = None):
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(trace_csv_text(trace, manifest))


def load_trace_csv(path) -> TrainTrace:
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(line for line in f if not line.startswith("#")))
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise FormatError(f"{path}: unexpected trace header")
    recs = []
    for row in rows[1:]:
        r = dict(zip(TRACE_COLUMNS, row))
        recs.append({"layer": int(r["layer"]), "label": int(r["label"]), "loss": float(r["loss"]),
                     "worst_margin": float(r["worst_margin"]), "feasible": r["feasible"] == "true",
                     "cert": float(r["cert"]), "iters": int(r["iters"]), "status": r["status"]})
    return TrainTrace(recs)


def save_trace_json(trace: TrainTrace, path, manifest: str | None = None):
    obj = {"format_version": FORMAT_VERSION, "columns": list(TRACE_COLUMNS),
           "records": trace.records, "layers": trace.layers, "meta": trace.meta}
    if manifest is not None:
        obj["manifest"] = manifest
    write_json(path, obj)


def load_trace_json(path) -> TrainTrace:
    obj = read_json(path)
    _check_version(obj, path)
    recs = []
    for r in obj["records"]:
        r = dict(r)
        for c in ("loss", "worst_margin", "cert"):
            r[c] = _dec_float(r[c])
        recs.append(r)
    layers = []
    for e in obj["layers"]:
        layers.append({k: (_dec_float(v) if k != "layer" else int(v)) for k, v in e.items()})
    return TrainTrace(recs, layers, obj.get("meta", {}))
