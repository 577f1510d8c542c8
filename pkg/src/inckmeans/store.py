"""Result store: persisted cluster means, run parameters and membership.

A model lives in two JSON files written atomically side by side::

    model.json            {"format", "version", "meta": {...}, "clusters": [...]}
    model.members.json    {"fingerprint", "clusters": [[{"id", "label", "values"}, ...], ...]}

``meta`` holds k, metric, tie_break, iterations, square_error, record_count,
inserted_since_fit, dimension, attribute_names, fingerprint and created_at.
Each ``clusters`` entry holds index, member_count, sse and the centroid in
attribute order. Floats are written with Python's shortest round-trip repr,
so centroids reload bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Cluster, ClusterModel, Metric, TieBreak

FORMAT_TAG = "inckmeans-model"
FORMAT_VERSION = 1


class ModelFileError(Exception):
    def __init__(self, message, path=None):
        super().__init__(f"{path}: {message}" if path is not None else message)
        self.path = path


class ModelNotFoundError(ModelFileError):
    pass


class MalformedModelError(ModelFileError):
    pass


class UnknownMetricError(MalformedModelError):
    pass


class ModelDimensionError(MalformedModelError):
    pass


class ModelWriteError(ModelFileError):
    pass


@dataclass(eq=False)
class StoredModel:
    model: ClusterModel
    attribute_names: list
    dataset_fingerprint: str
    created_at: str
    record_count: int
    inserted_since_fit: int = 0
    labels: dict = field(default_factory=dict)
    vectors: dict = field(default_factory=dict)

    def data_lookup(self) -> dict:
        return self.vectors

    def __eq__(self, other):
        if not isinstance(other, StoredModel):
            return NotImplemented
        return (
            self.model == other.model
            and self.attribute_names == other.attribute_names
            and self.dataset_fingerprint == other.dataset_fingerprint
            and self.created_at == other.created_at
            and self.record_count == other.record_count
            and self.inserted_since_fit == other.inserted_since_fit
            and self.labels == other.labels
            and self.vectors.keys() == other.vectors.keys()
            and all(np.array_equal(v, other.vectors[k]) for k, v in self.vectors.items())
        )


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".members.json")


def fingerprint(attribute_names, X) -> str:
    """sha256 of the canonical CSV rendering (header + repr floats)."""
    h = hashlib.sha256()
    h.update((",".join(attribute_names) + "\n").encode())
    for row in np.asarray(X, dtype=np.float64).reshape(len(X), -1):
        h.update((",".join(repr(float(v)) for v in row) + "\n").encode())
    return "sha256:" + h.hexdigest()


def timestamp() -> str:
    """Current UTC time, or SOURCE_DATE_EPOCH when set (reproducible output)."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (datetime.fromtimestamp(int(epoch), tz=timezone.utc) if epoch
            else datetime.now(timezone.utc))
    return when.replace(microsecond=0).isoformat()


def _finite_list(vec, what, path):
    out = [float(v) for v in np.asarray(vec).reshape(-1)]
    if not all(math.isfinite(v) for v in out):
        raise ModelWriteError(f"{what} contains a non-finite value", path)
    return out


def _check_id(rid, path):
    if isinstance(rid, bool) or not isinstance(rid, (int, str)):
        raise ModelWriteError(f"record id {rid!r} must be an int or str", path)
    return rid


def _atomic_write(path: Path, text: str):
    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
        tmp = None
    except OSError as exc:
        raise ModelWriteError(f"write failed: {exc}", path) from exc
    finally:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)


def save_model(stored: StoredModel, path) -> None:
    path = Path(path)
    m = stored.model
    if len(stored.attribute_names) != m.dimension:
        raise ModelWriteError(
            f"{len(stored.attribute_names)} attribute names for dimension {m.dimension}", path)
    if not math.isfinite(m.square_error):
        raise ModelWriteError("square_error is not finite", path)

    doc = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "meta": {
            "k": m.k,
            "metric": m.metric.value,
            "tie_break": m.tie_break.value,
            "iterations": m.iterations,
            "square_error": float(m.square_error),
            "record_count": stored.record_count,
            "inserted_since_fit": stored.inserted_since_fit,
            "dimension": m.dimension,
            "attribute_names": list(stored.attribute_names),
            "fingerprint": stored.dataset_fingerprint,
            "created_at": stored.created_at,
        },
        "clusters": [
            {
                "index": j,
                "member_count": c.member_count,
                "sse": _finite_list([c.sse], f"cluster {j} sse", path)[0],
                "centroid": _finite_list(c.centroid, f"cluster {j} centroid", path),
            }
            for j, c in enumerate(m.clusters)
        ],
    }
    members = {
        "fingerprint": stored.dataset_fingerprint,
        "clusters": [
            [
                {
                    "id": _check_id(rid, path),
                    "label": stored.labels.get(rid),
                    "values": _finite_list(stored.vectors[rid], f"record {rid!r}", path)
                    if rid in stored.vectors else None,
                }
                for rid in c.member_ids
            ]
            for c in m.clusters
        ],
    }
    _atomic_write(sidecar_path(path), json.dumps(members, indent=1, allow_nan=False) + "\n")
    _atomic_write(path, json.dumps(doc, indent=2, allow_nan=False) + "\n")


def _read_json(path: Path, what: str):
    if not path.exists():
        raise ModelNotFoundError(f"{what} not found", path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFileError(f"cannot read {what}: {exc}", path) from exc
    if not text.strip():
        raise MalformedModelError(f"{what} is empty", path)
    try:
        return json.loads(text, parse_constant=lambda c: float("nan"))
    except json.JSONDecodeError as exc:
        raise MalformedModelError(f"{what} is not valid JSON: {exc}", path) from exc


def _field(obj, key, kind, path, where="meta"):
    if not isinstance(obj, dict) or key not in obj:
        raise MalformedModelError(f"missing field {where}.{key}", path)
    value = obj[key]
    ok = isinstance(value, kind) and not isinstance(value, bool)
    if kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok:
            value = float(value)
            ok = math.isfinite(value)
    if not ok:
        raise MalformedModelError(f"bad value for {where}.{key}: {value!r}", path)
    return value


def _vector(values, path, where):
    if not isinstance(values, list) or not values:
        raise MalformedModelError(f"{where} must be a non-empty list", path)
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise MalformedModelError(f"{where} holds a non-finite or non-numeric value", path)
        out.append(float(v))
    return np.array(out, dtype=np.float64)


def load_model(path) -> StoredModel:
    path = Path(path)
    doc = _read_json(path, "model file")
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_TAG:
        raise MalformedModelError("not a model file (format tag missing)", path)
    meta = doc.get("meta")
    if not isinstance(meta, dict):
        raise MalformedModelError("missing section 'meta'", path)

    k = _field(meta, "k", int, path)
    tag = _field(meta, "metric", str, path)
    try:
        metric = Metric(tag)
    except ValueError:
        raise UnknownMetricError(f"unknown metric tag {tag!r}", path) from None
    try:
        tie_break = TieBreak(meta.get("tie_break", TieBreak.LOWEST.value))
    except ValueError:
        raise MalformedModelError(f"bad tie_break {meta.get('tie_break')!r}", path) from None
    iterations = _field(meta, "iterations", int, path)
    sq_err = _field(meta, "square_error", float, path)
    record_count = _field(meta, "record_count", int, path)
    inserted = meta.get("inserted_since_fit", 0)
    dimension = _field(meta, "dimension", int, path)
    names = _field(meta, "attribute_names", list, path)
    fp = _field(meta, "fingerprint", str, path)
    created = _field(meta, "created_at", str, path)
    if k < 1 or dimension < 1 or iterations < 0 or record_count < 0 or sq_err < 0:
        raise MalformedModelError("meta values out of range", path)
    if not all(isinstance(n, str) for n in names):
        raise MalformedModelError("attribute_names must be strings", path)
    if len(names) != dimension:
        raise ModelDimensionError(
            f"{len(names)} attribute names but dimension {dimension}", path)

    entries = doc.get("clusters")
    if not isinstance(entries, list):
        raise MalformedModelError("missing section 'clusters'", path)
    if len(entries) != k:
        raise MalformedModelError(f"meta.k is {k} but {len(entries)} clusters listed", path)

    counts, centroids, sses = [], [], []
    for j, entry in enumerate(entries):
        where = f"clusters[{j}]"
        if _field(entry, "index", int, path, where) != j:
            raise MalformedModelError(f"{where}.index out of order", path)
        counts.append(_field(entry, "member_count", int, path, where))
        sses.append(_field(entry, "sse", float, path, where))
        c = _vector(entry.get("centroid"), path, f"{where}.centroid")
        if c.shape[0] != dimension:
            raise ModelDimensionError(
                f"cluster {j} centroid has dimension {c.shape[0]}, expected {dimension}", path)
        centroids.append(c)

    members = [[] for _ in range(k)]
    labels, vectors = {}, {}
    side = sidecar_path(path)
    if side.exists() or any(counts):
        sdoc = _read_json(side, "membership file")
        groups = sdoc.get("clusters") if isinstance(sdoc, dict) else None
        if not isinstance(groups, list) or len(groups) != k:
            raise MalformedModelError("membership file does not list every cluster", side)
        for j, group in enumerate(groups):
            if not isinstance(group, list) or len(group) != counts[j]:
                raise MalformedModelError(
                    f"cluster {j}: member_count {counts[j]} disagrees with membership file", side)
            for rec in group:
                rid = rec.get("id") if isinstance(rec, dict) else None
                if isinstance(rid, bool) or not isinstance(rid, (int, str)) or rid in labels:
                    raise MalformedModelError(f"bad or repeated record id {rid!r}", side)
                members[j].append(rid)
                labels[rid] = rec.get("label")
                if rec.get("values") is not None:
                    v = _vector(rec["values"], side, f"record {rid!r}")
                    if v.shape[0] != dimension:
                        raise ModelDimensionError(
                            f"record {rid!r} has dimension {v.shape[0]}, expected {dimension}", side)
                    vectors[rid] = v
        labels = {rid: lab for rid, lab in labels.items() if lab is not None}

    model = ClusterModel(
        clusters=[Cluster(centroids[j], members[j], sses[j]) for j in range(k)],
        metric=metric,
        iterations=iterations,
        square_error=sq_err,
        tie_break=tie_break,
    )
    return StoredModel(
        model=model,
        attribute_names=list(names),
        dataset_fingerprint=fp,
        created_at=created,
        record_count=record_count,
        inserted_since_fit=int(inserted),
        labels=labels,
        vectors=vectors,
    )


def membership_fingerprint(path) -> Optional[str]:
    side = sidecar_path(path)
    if not side.exists():
        return None
    doc = _read_json(side, "membership file")
    return doc.get("fingerprint") if isinstance(doc, dict) else None
