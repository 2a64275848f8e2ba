import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from kernelsplit.blockadmm import Model
from kernelsplit.featuremap import TransformDescriptor
from kernelsplit.matrixio import (
    BlockLayout,
    DatasetError,
    LabelEncoding,
    ModelFormatError,
    as_dense,
    balanced_offsets,
    col_block,
    decode_labels,
    encode_labels,
    load_dataset,
    load_model,
    row_block,
    save_csv,
    save_model,
)


def test_as_dense_rejects_non_finite():
    with pytest.raises(ValueError):
        as_dense([[1.0, np.nan]])
    with pytest.raises(ValueError):
        as_dense(np.zeros((2, 2, 2)))
    assert as_dense([1.0, 2.0]).shape == (2, 1)
    A = as_dense([[1, 2]])
    assert A.dtype == np.float64 and A.flags.c_contiguous


def test_balanced_offsets_front_loads_remainder():
    assert balanced_offsets(10, 3).tolist() == [0, 4, 7, 10]
    assert balanced_offsets(4, 4).tolist() == [0, 1, 2, 3, 4]
    with pytest.raises(ValueError):
        balanced_offsets(2, 3)


def test_layout_validation():
    with pytest.raises(ValueError):
        BlockLayout([0, 2, 2], [0, 1])
    with pytest.raises(ValueError):
        BlockLayout([1, 2], [0, 1])
    lay = BlockLayout.balanced(7, 5, 2, 2)
    assert (lay.R, lay.C, lay.n, lay.s) == (2, 2, 7, 5)


def test_row_block_examples():
    X = np.arange(8.0).reshape(4, 2)
    lay = BlockLayout.balanced(4, 3, 2, 1)
    np.testing.assert_array_equal(row_block(X, lay, 1), X[2:4])
    one = BlockLayout.balanced(4, 3, 1, 1)
    np.testing.assert_array_equal(row_block(X, one, 0), X)
    with pytest.raises(IndexError):
        row_block(X, lay, 2)
    W = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(col_block(W, BlockLayout.balanced(4, 3, 1, 2), 1), W[2:])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 6), st.data())
def test_partition_completeness(n, d, data):
    R = data.draw(st.integers(1, n))
    X = data.draw(hnp.arrays(np.float64, (n, d), elements=st.floats(-1e6, 1e6)))
    lay = BlockLayout.balanced(n, 1, R, 1)
    sizes = np.diff(lay.row_offsets)
    assert sizes.min() >= 1 and sizes.max() - sizes.min() <= 1
    np.testing.assert_array_equal(np.vstack([row_block(X, lay, i) for i in range(R)]), X)


def test_csv_example(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1,2,3\n4,5,6")
    X, y = load_dataset(p)
    np.testing.assert_array_equal(X, [[1, 2], [4, 5]])
    np.testing.assert_array_equal(y, [3, 6])
    X, y = load_dataset(p, label_column=0)
    np.testing.assert_array_equal(X, [[2, 3], [5, 6]])


def test_csv_string_labels(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("0.5,cat\n1.5,dog\n")
    X, y = load_dataset(p)
    assert list(y) == ["cat", "dog"]


def test_csv_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1,2,3\n4,5\n")
    with pytest.raises(DatasetError, match="line 2"):
        load_dataset(p)
    p.write_text("1,2,3\n4,x,6\n")
    with pytest.raises(DatasetError, match="line 2"):
        load_dataset(p)
    p.write_text("")
    with pytest.raises(DatasetError):
        load_dataset(p)


def test_svmlight_example(tmp_path):
    p = tmp_path / "a.svm"
    p.write_text("-1 1:0.5 3:2.0\n")
    X, y = load_dataset(p, "svmlight", n_features=3)
    np.testing.assert_array_equal(X, [[0.5, 0.0, 2.0]])
    np.testing.assert_array_equal(y, [-1])
    with pytest.raises(DatasetError):
        load_dataset(p, "svmlight", n_features=2)
    p.write_text("")
    with pytest.raises(DatasetError):
        load_dataset(p, "svmlight")


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        load_dataset(tmp_path / "nope.csv")


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 4)),
                  elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_csv_round_trip_is_bit_exact(X):
    import tempfile, os

    labels = np.arange(X.shape[0], dtype=np.float64) - 0.5
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "x.csv")
        save_csv(path, X, labels)
        X2, y2 = load_dataset(path)
    assert X2.tobytes() == X.tobytes()
    assert y2.tobytes() == labels.tobytes()


def test_encode_examples():
    enc = LabelEncoding(("a", "b"))
    np.testing.assert_array_equal(encode_labels(["a", "b", "a"], enc), [[1, -1], [-1, 1], [1, -1]])
    reg = LabelEncoding.fit([0.5, 2.0], "regression")
    np.testing.assert_array_equal(encode_labels([0.5, 2.0], reg), [[0.5], [2.0]])
    with pytest.raises(ValueError, match="unknown label"):
        encode_labels(["c"], enc)


def test_fit_sorts_and_decode_breaks_ties_low():
    enc = LabelEncoding.fit(np.array([3.0, 1.0, 2.0, 1.0]))
    assert enc.class_labels == (1.0, 2.0, 3.0)
    assert decode_labels(np.zeros((2, 3)), enc) == [1.0, 1.0]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["x", "y", "z", "w"]), min_size=1, max_size=30))
def test_decode_inverts_encode(labels):
    enc = LabelEncoding.fit(labels)
    Y = encode_labels(labels, enc)
    assert np.all((Y == 1).sum(axis=1) == 1)
    assert decode_labels(Y, enc) == labels


def _model(s=3, m=2, seed=7):
    desc = TransformDescriptor(sigma=0.3, col_offsets=np.array([0, 2, s]), seed=seed)
    W = np.random.default_rng(0).normal(size=(s, m))
    enc = LabelEncoding(tuple(range(m)))
    return Model(weights=W, transform=desc, encoding=enc, loss="hinge", d=4)


def test_model_round_trip(tmp_path):
    model = _model()
    p = tmp_path / "m.bin"
    save_model(p, model)
    back = load_model(p)
    assert back.weights.tobytes() == model.weights.tobytes()
    assert back.transform == model.transform
    assert back.transform.seed == 7 and back.transform.sigma == 0.3
    assert back.encoding == model.encoding and back.loss == "hinge" and back.d == 4
    save_model(tmp_path / "m2.bin", back)
    assert (tmp_path / "m2.bin").read_bytes() == p.read_bytes()


def test_model_corruption(tmp_path):
    p = tmp_path / "m.bin"
    save_model(p, _model())
    raw = p.read_bytes()
    p.write_bytes(raw[:-5])
    with pytest.raises(ModelFormatError, match="truncated"):
        load_model(p)
    p.write_bytes(raw[:-1] + bytes([raw[-1] ^ 1]))
    with pytest.raises(ModelFormatError, match="checksum"):
        load_model(p)
    p.write_bytes(b"NOTAMODL" + raw[8:])
    with pytest.raises(ModelFormatError, match="magic"):
        load_model(p)
    p.write_bytes(raw[:8] + struct.pack("<I", 99) + raw[12:])
    with pytest.raises(ModelFormatError, match="version"):
        load_model(p)
    p.write_bytes(raw[:4])
    with pytest.raises(ModelFormatError):
        load_model(p)


def test_model_shape_mismatch(tmp_path):
    m = _model()
    bad = Model(weights=np.zeros((4, 2)), transform=m.transform, encoding=m.encoding, loss="hinge", d=4)
    with pytest.raises(ValueError):
        save_model(tmp_path / "x.bin", bad)
