"""File formats: a named-tensor model container and tab-separated result tables."""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import IoFailure

MAGIC = b"CBRSTNS\x00"
CONTAINER_VERSION = 1
TABLE_VERSION = 1
_TABLE_MAGIC = "# cbrs-sense table"
_UMASK = os.umask(0)
os.umask(_UMASK)


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        os.chmod(tmp, 0o666 & ~_UMASK)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------- tensor container


def save_tensors(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    """Layout: magic, u32 version, u32 header length, JSON header, then raw little-endian payloads."""
    entries, blobs, offset = [], [], 0
    for name in tensors:
        arr = np.asarray(tensors[name])
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8")
        elif arr.dtype.kind in "iub":
            arr = arr.astype("<i8")
        else:
            raise IoFailure(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr).tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode()
    data = MAGIC + struct.pack("<II", CONTAINER_VERSION, len(header)) + header + b"".join(blobs)
    try:
        _atomic_write(Path(path), data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_tensors(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not data.startswith(MAGIC) or len(data) < len(MAGIC) + 8:
        raise IoFailure(f"{path} is not a model container")
    version, hlen = struct.unpack_from("<II", data, len(MAGIC))
    if version != CONTAINER_VERSION:
        raise IoFailure(f"unsupported container version {version}")
    start = len(MAGIC) + 8
    try:
        header = json.loads(data[start:start + hlen])
    except ValueError as exc:
        raise IoFailure(f"corrupt container header in {path}") from exc
    base = start + hlen
    tensors = {}
    for e in header["tensors"]:
        lo = base + e["offset"]
        if lo + e["nbytes"] > len(data):
            raise IoFailure(f"truncated tensor {e['name']!r} in {path}")
        tensors[e["name"]] = np.frombuffer(data, dtype=e["dtype"], count=int(np.prod(e["shape"], dtype=np.int64)),
                                           offset=lo).reshape(e["shape"]).copy()
    return header["meta"], tensors


# --------------------------------------------------------------------------- model persistence


def save_model(path, model) -> None:
    from .ml import GmmModel, KnnModel, SvmModel
    from .nn.params import Params

    if isinstance(model, Params):
        save_tensors(path, {"model": model.kind, **model.meta()}, model.tensors())
    elif isinstance(model, KnnModel):
        save_tensors(path, {"model": "knn", "k": model.k, "feature_mode": model.feature_mode},
                     {"X": model.X, "y": model.y})
    elif isinstance(model, SvmModel):
        k = model.kernel
        meta = {"model": "svm", "kernel": {"kind": k.kind, "gamma": k.gamma, "degree": k.degree, "coef0": k.coef0},
                "C": model.C, "bias": model.bias, "converged": model.converged, "n_iter": model.n_iter,
                "feature_mode": model.feature_mode}
        t = {"center": model.center}
        if model.w is not None:
            t["w"] = model.w
        else:
            t["support_vectors"] = model.support_vectors
            t["dual_coef"] = model.dual_coef
        save_tensors(path, meta, t)
    elif isinstance(model, GmmModel):
        meta = {"model": "gmm", "positive_component": model.positive_component, "converged": model.converged,
                "floored": model.floored, "feature_mode": model.feature_mode}
        save_tensors(path, meta, {"weights": model.weights, "means": model.means, "variances": model.variances,
                                  "log_likelihood": np.asarray(model.log_likelihood, dtype=np.float64)})
    elif isinstance(model, dict) and model.get("model") in ("ed", "si-ed"):
        save_tensors(path, model, {})
    else:
        raise IoFailure(f"cannot persist {type(model).__name__}")


def load_model(path):
    from .ml import GmmModel, Kernel, KnnModel, SvmModel
    from .nn.params import Params

    meta, t = load_tensors(path)
    kind = meta.get("model")
    if kind in ("cnn3", "lstm"):
        return Params.from_tensors(meta, t)
    if kind == "knn":
        return KnnModel(t["X"].astype(np.float64), t["y"].astype(np.int8), int(meta["k"]), meta["feature_mode"])
    if kind == "svm":
        return SvmModel(Kernel(**meta["kernel"]), meta["C"], t["center"], meta["bias"], w=t.get("w"),
                        support_vectors=t.get("support_vectors"), dual_coef=t.get("dual_coef"),
                        converged=meta["converged"], n_iter=meta["n_iter"], feature_mode=meta["feature_mode"])
    if kind == "gmm":
        return GmmModel(t["weights"], t["means"], t["variances"], int(meta["positive_component"]),
                        t["log_likelihood"].tolist(), meta["converged"], meta["floored"], meta["feature_mode"])
    if kind in ("ed", "si-ed"):
        return meta
    raise IoFailure(f"unknown model kind {kind!r} in {path}")


# --------------------------------------------------------------------------- tables


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    s = str(v)
    if "\t" in s or "\n" in s:
        raise IoFailure(f"value {s!r} contains a separator")
    return s


def write_table(path, kind: str, columns: dict[str, np.ndarray | list], meta: dict | None = None) -> None:
    """Tab-separated table with a versioned comment header and ``key=value`` metadata lines."""
    names = list(columns)
    cols = [list(columns[n]) for n in names]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise IoFailure("table columns differ in length")
    lines = [f"{_TABLE_MAGIC} v{TABLE_VERSION}", f"# kind={kind}"]
    for k in sorted(meta or {}):
        lines.append(f"# {k}={_fmt((meta or {})[k])}")
    lines.append("\t".join(names))
    for i in range(n):
        lines.append("\t".join(_fmt(c[i]) for c in cols))
    try:
        _atomic_write(Path(path), ("\n".join(lines) + "\n").encode())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _parse(v: str):
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def read_table(path, text_columns=()) -> tuple[str, dict, dict[str, list]]:
    """Returns (kind, meta, columns) with values parsed as int, float or str.

    Columns named in ``text_columns`` are kept as strings.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or not lines[0].startswith(_TABLE_MAGIC):
        raise IoFailure(f"{path} is not a result table")
    if lines[0] != f"{_TABLE_MAGIC} v{TABLE_VERSION}":
        raise IoFailure(f"unsupported table version in {path}")
    meta, kind, i = {}, None, 1
    while i < len(lines) and lines[i].startswith("# "):
        key, _, val = lines[i][2:].partition("=")
        if key == "kind":
            kind = val
        else:
            meta[key] = _parse(val)
        i += 1
    if i >= len(lines):
        raise IoFailure(f"{path} has no column header")
    names = lines[i].split("\t")
    cols: dict[str, list] = {n: [] for n in names}
    for ln in lines[i + 1:]:
        parts = ln.split("\t")
        if len(parts) != len(names):
            raise IoFailure(f"malformed row in {path}: {ln!r}")
        for n, p in zip(names, parts):
            cols[n].append(p if n in text_columns else _parse(p))
    return kind, meta, cols


def write_scored(path, scored, meta: dict | None = None) -> None:
    from .eval import as_scored

    s = as_scored(scored)
    write_table(path, "scored", {"spectrogram_id": [str(i) for i in s.ids], "channel_mhz": s.channels,
                                 "score": s.scores, "label": s.labels.astype(int)}, meta)


def read_scored(path):
    from .eval import ScoredSet

    kind, meta, cols = read_table(path, text_columns=("spectrogram_id",))
    if kind != "scored":
        raise IoFailure(f"{path} holds a {kind!r} table, not scored channels")
    return ScoredSet(cols["spectrogram_id"], cols["channel_mhz"],
                     np.asarray(cols["score"], dtype=np.float64), np.asarray(cols["label"]) == 1)
