import os
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cbrs_sense.errors import IoFailure
from cbrs_sense.eval import ScoredSet
from cbrs_sense.io import (
    MAGIC,
    load_model,
    load_tensors,
    read_scored,
    read_table,
    save_model,
    save_tensors,
    write_scored,
    write_table,
)
from cbrs_sense.ml import gmm_fit, knn_fit, svm_fit


def test_tensor_roundtrip(tmp_path, rng):
    t = {"a": rng.normal(size=(3, 4)), "b": np.arange(5), "c": np.zeros((0, 2)), "d": np.float32(1.5) * np.ones(2)}
    save_tensors(tmp_path / "x.bin", {"hello": [1, 2]}, t)
    meta, back = load_tensors(tmp_path / "x.bin")
    assert meta == {"hello": [1, 2]}
    assert list(back) == ["a", "b", "c", "d"]
    for k in t:
        assert np.array_equal(back[k], t[k])
        assert back[k].shape == np.asarray(t[k]).shape
    assert back["b"].dtype == np.dtype("<i8")


def test_container_layout(tmp_path):
    save_tensors(tmp_path / "x.bin", {}, {"v": np.array([1.0, 2.0])})
    data = (tmp_path / "x.bin").read_bytes()
    assert data.startswith(MAGIC)
    version, hlen = struct.unpack_from("<II", data, len(MAGIC))
    assert version == 1
    assert data[-16:] == np.array([1.0, 2.0], "<f8").tobytes()


def test_container_errors(tmp_path):
    with pytest.raises(IoFailure):
        load_tensors(tmp_path / "missing.bin")
    (tmp_path / "junk.bin").write_bytes(b"hello world")
    with pytest.raises(IoFailure):
        load_tensors(tmp_path / "junk.bin")
    save_tensors(tmp_path / "t.bin", {}, {"v": np.ones(100)})
    data = (tmp_path / "t.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(data[:-8])
    with pytest.raises(IoFailure):
        load_tensors(tmp_path / "t.bin")
    bad = bytearray(data)
    bad[len(MAGIC)] = 9
    (tmp_path / "v.bin").write_bytes(bytes(bad))
    with pytest.raises(IoFailure):
        load_tensors(tmp_path / "v.bin")
    with pytest.raises(IoFailure):
        save_tensors(tmp_path / "s.bin", {}, {"s": np.array(["x"])})


def test_write_is_atomic_and_world_readable(tmp_path):
    save_tensors(tmp_path / "m.bin", {}, {"v": np.ones(3)})
    assert [p.name for p in tmp_path.iterdir()] == ["m.bin"]
    umask = os.umask(0)
    os.umask(umask)
    assert (tmp_path / "m.bin").stat().st_mode & 0o777 == 0o666 & ~umask


def _toy(rng):
    X = np.r_[rng.normal(0, 1, (20, 3)), rng.normal(4, 1, (20, 3))]
    return X, np.r_[np.zeros(20), np.ones(20)].astype(int)


@pytest.mark.parametrize("which", ["knn", "svm-linear", "svm-rbf", "gmm", "ed", "si-ed"])
def test_model_roundtrip(which, tmp_path, rng):
    X, y = _toy(rng)
    if which == "knn":
        m = knn_fit(X, y, 5, feature_mode="timeagg")
    elif which == "svm-linear":
        m = svm_fit(X, y, "linear", 1.0, feature_mode="full")
    elif which == "svm-rbf":
        m = svm_fit(X, y, "rbf", 1.0, feature_mode="center2")
    elif which == "gmm":
        m = gmm_fit(X, y, seed=0, feature_mode="full")
    else:
        m = {"model": which}
    save_model(tmp_path / "m.cbrs", m)
    back = load_model(tmp_path / "m.cbrs")
    if isinstance(m, dict):
        assert back == m
        return
    from cbrs_sense.ml import gmm_score, knn_score, svm_score

    score = {"knn": knn_score, "svm": svm_score, "gmm": gmm_score}[which.split("-")[0]]
    assert np.array_equal(np.asarray(score(back, X)), np.asarray(score(m, X)))
    assert back.feature_mode == m.feature_mode


def test_unknown_model(tmp_path):
    with pytest.raises(IoFailure):
        save_model(tmp_path / "m.cbrs", object())
    save_tensors(tmp_path / "m.cbrs", {"model": "forest"}, {})
    with pytest.raises(IoFailure):
        load_model(tmp_path / "m.cbrs")


def test_table_roundtrip(tmp_path):
    cols = {"threshold": [np.inf, 0.5, -np.inf], "x": [0, 0.25, 1.0], "name": ["a", "b", "c"]}
    write_table(tmp_path / "t.tsv", "roc", cols, {"auc": 0.75, "n": 4, "flag": True})
    kind, meta, back = read_table(tmp_path / "t.tsv")
    assert kind == "roc"
    assert meta == {"auc": 0.75, "flag": 1, "n": 4}
    assert back["threshold"] == [np.inf, 0.5, -np.inf]
    assert back["x"] == [0, 0.25, 1.0]
    assert back["name"] == ["a", "b", "c"]
    text = (tmp_path / "t.tsv").read_text().splitlines()
    assert text[0] == "# cbrs-sense table v1"
    assert text[1] == "# kind=roc"


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=0, max_size=20))
def test_table_floats_exact(tmp_path_factory, values):
    p = tmp_path_factory.mktemp("t") / "f.tsv"
    write_table(p, "x", {"v": values})
    back = read_table(p)[2]["v"]
    assert back == values
    assert all(isinstance(v, float) for v in back)


def test_table_errors(tmp_path):
    with pytest.raises(IoFailure):
        write_table(tmp_path / "t.tsv", "x", {"a": [1, 2], "b": [1]})
    with pytest.raises(IoFailure):
        write_table(tmp_path / "t.tsv", "x", {"a": ["tab\there"]})
    (tmp_path / "n.tsv").write_text("a\tb\n1\t2\n")
    with pytest.raises(IoFailure):
        read_table(tmp_path / "n.tsv")
    (tmp_path / "v.tsv").write_text("# cbrs-sense table v9\n# kind=x\na\n")
    with pytest.raises(IoFailure):
        read_table(tmp_path / "v.tsv")
    (tmp_path / "r.tsv").write_text("# cbrs-sense table v1\n# kind=x\na\tb\n1\n")
    with pytest.raises(IoFailure):
        read_table(tmp_path / "r.tsv")


def test_scored_roundtrip(tmp_path):
    s = ScoredSet(["007", "007", "x1"], [3550, 3560, 3550], [0.5, -1e-300, 12.0], [True, False, False])
    write_scored(tmp_path / "s.tsv", s, {"detector": "ed"})
    back = read_scored(tmp_path / "s.tsv")
    assert list(back.ids) == ["007", "007", "x1"]
    assert np.array_equal(back.scores, s.scores)
    assert np.array_equal(back.labels, s.labels)
    assert np.array_equal(back.channels, s.channels)
    write_table(tmp_path / "r.tsv", "roc", {"x": [1]})
    with pytest.raises(IoFailure):
        read_scored(tmp_path / "r.tsv")
