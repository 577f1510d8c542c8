import json
import os

import numpy as np
import pytest

from inckmeans.core import Cluster, ClusterModel, Metric, TieBreak, lloyd_fit
from inckmeans.store import (
    MalformedModelError,
    ModelDimensionError,
    ModelNotFoundError,
    ModelWriteError,
    StoredModel,
    UnknownMetricError,
    fingerprint,
    load_model,
    save_model,
    sidecar_path,
    timestamp,
)

AIR_MEANS = [
    [321.376238, 164.366337, 10.128713, 92.415842],
    [252.600000, 118.562500, 8.425000, 72.187500],
    [93.458824, 36.176471, 5.158824, 41.523529],
    [165.196721, 75.983607, 6.704918, 57.04918],
    [388.943182, 202.022727, 12.034091, 107.102273],
]


@pytest.fixture
def table_model():
    model = ClusterModel(
        clusters=[Cluster(np.array(row), []) for row in AIR_MEANS],
        metric=Metric.EUCLIDEAN,
        iterations=35,
        square_error=12.53647,
    )
    return StoredModel(model, ["SPM", "RPM", "SO2", "NOx"], "sha256:00", "2012-01-01T00:00:00+00:00", 0)


@pytest.fixture
def fitted_stored():
    X = np.array([[1.0, 2.0], [1.5, 1.8], [5.0, 8.0], [8.0, 8.0], [1.0, 0.6], [9.0, 11.0]])
    ids = ["r0", "r1", "r2", 3, 4, "r5"]
    model = lloyd_fit(X, 2, ids=ids, tie_break=TieBreak.HIGHEST)
    return StoredModel(model, ["a", "b"], fingerprint(["a", "b"], X), timestamp(), 6,
                       labels={"r0": "first"}, vectors=dict(zip(ids, X)))


def test_table_values_round_trip(tmp_path, table_model):
    path = tmp_path / "model.json"
    save_model(table_model, path)
    doc = json.loads(path.read_text())
    assert doc["clusters"][0]["centroid"][0] == 321.376238
    loaded = load_model(path)
    assert loaded == table_model
    m = loaded.model
    assert (m.k, m.metric, m.iterations, m.square_error) == (5, Metric.EUCLIDEAN, 35, 12.53647)


def test_zero_centroid(tmp_path):
    stored = StoredModel(ClusterModel([Cluster(np.zeros(3), [])], Metric.MANHATTAN),
                         ["x", "y", "z"], "fp", "t", 0)
    save_model(stored, tmp_path / "m.json")
    assert load_model(tmp_path / "m.json") == stored


def test_fitted_round_trip(tmp_path, fitted_stored):
    path = tmp_path / "m.json"
    save_model(fitted_stored, path)
    assert sidecar_path(path).exists()
    loaded = load_model(path)
    assert loaded == fitted_stored
    assert loaded.model.membership() == fitted_stored.model.membership()


def test_file_layout(tmp_path, fitted_stored):
    path = tmp_path / "m.json"
    save_model(fitted_stored, path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"format", "version", "meta", "clusters"}
    assert set(doc["meta"]) == {
        "k", "metric", "tie_break", "iterations", "square_error", "record_count",
        "inserted_since_fit", "dimension", "attribute_names", "fingerprint", "created_at"}
    assert set(doc["clusters"][0]) == {"index", "member_count", "sse", "centroid"}
    side = json.loads(sidecar_path(path).read_text())
    assert side["fingerprint"] == fitted_stored.dataset_fingerprint


def test_missing_file(tmp_path):
    with pytest.raises(ModelNotFoundError):
        load_model(tmp_path / "nope.json")


def test_empty_file(tmp_path):
    (tmp_path / "m.json").write_text("")
    with pytest.raises(MalformedModelError, match="empty"):
        load_model(tmp_path / "m.json")


def _saved_doc(tmp_path, stored):
    path = tmp_path / "m.json"
    save_model(stored, path)
    return path, json.loads(path.read_text())


def test_wrong_centroid_dimension(tmp_path, table_model):
    path, doc = _saved_doc(tmp_path, table_model)
    doc["clusters"][3]["centroid"] = [1.0, 2.0]
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelDimensionError, match="cluster 3"):
        load_model(path)


def test_names_dimension_mismatch(tmp_path, table_model):
    path, doc = _saved_doc(tmp_path, table_model)
    doc["meta"]["attribute_names"] = ["SPM"]
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelDimensionError):
        load_model(path)


def test_unknown_metric(tmp_path, table_model):
    path, doc = _saved_doc(tmp_path, table_model)
    doc["meta"]["metric"] = "cosine"
    path.write_text(json.dumps(doc))
    with pytest.raises(UnknownMetricError, match="cosine"):
        load_model(path)


@pytest.mark.parametrize("field, value", [("k", "five"), ("iterations", -1), ("square_error", None)])
def test_malformed_field(tmp_path, table_model, field, value):
    path, doc = _saved_doc(tmp_path, table_model)
    doc["meta"][field] = value
    path.write_text(json.dumps(doc))
    with pytest.raises(MalformedModelError):
        load_model(path)


def test_membership_count_mismatch(tmp_path, fitted_stored):
    path, doc = _saved_doc(tmp_path, fitted_stored)
    doc["clusters"][0]["member_count"] += 1
    path.write_text(json.dumps(doc))
    with pytest.raises(MalformedModelError, match="member_count"):
        load_model(path)


def test_non_finite_rejected(tmp_path, table_model):
    table_model.model.clusters[1].centroid[2] = np.inf
    with pytest.raises(ModelWriteError, match="non-finite"):
        save_model(table_model, tmp_path / "m.json")
    assert not (tmp_path / "m.json").exists()


def test_unwritable_path(tmp_path, table_model):
    with pytest.raises(ModelWriteError, match=str(tmp_path / "missing")):
        save_model(table_model, tmp_path / "missing" / "m.json")


def test_crash_before_rename_keeps_previous(tmp_path, fitted_stored, monkeypatch):
    path = tmp_path / "m.json"
    save_model(fitted_stored, path)
    before = path.read_text()

    def boom(src, dst):
        raise OSError("simulated crash")

    monkeypatch.setattr(os, "replace", boom)
    fitted_stored.model.iterations += 1
    with pytest.raises(ModelWriteError):
        save_model(fitted_stored, path)
    assert path.read_text() == before
    assert sorted(p.name for p in tmp_path.iterdir()) == ["m.json", "m.members.json"]


def test_fingerprint_sensitive_to_values():
    X = np.array([[1.0], [2.0]])
    assert fingerprint(["x"], X) == fingerprint(["x"], X.copy())
    assert fingerprint(["x"], X) != fingerprint(["x"], X + 1e-12)
    assert fingerprint(["x"], X) != fingerprint(["y"], X)


def test_timestamp_honours_source_date_epoch(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    assert timestamp() == "1970-01-01T00:00:00+00:00"
