"""Dense matrix helpers, row/column block layouts, dataset and model files.

Matrices are plain C-contiguous ``float64`` numpy arrays.  Everything
handed out by this module is finite and two dimensional.
"""

from __future__ import annotations

import csv
import io
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "BlockLayout",
    "LabelEncoding",
    "DatasetError",
    "ModelFormatError",
    "as_dense",
    "balanced_offsets",
    "load_dataset",
    "save_csv",
    "encode_labels",
    "decode_labels",
    "row_block",
    "col_block",
    "save_model",
    "load_model",
]


class DatasetError(ValueError):
    """Raised for unparseable or inconsistent dataset files."""


class ModelFormatError(ValueError):
    """Raised for bad model headers, truncation or checksum failures."""


def as_dense(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite, 2-D, C-contiguous float64 array."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def balanced_offsets(total: int, parts: int) -> np.ndarray:
    """Offsets splitting ``total`` into ``parts`` near-equal pieces.

    The first ``total % parts`` pieces get one extra element, as
    ``np.array_split`` does.
    """
    if parts < 1:
        raise ValueError("number of parts must be >= 1")
    if total < parts:
        raise ValueError(f"cannot split {total} items into {parts} non-empty blocks")
    base, extra = divmod(total, parts)
    sizes = np.full(parts, base, dtype=np.int64)
    sizes[:extra] += 1
    return np.concatenate([[0], np.cumsum(sizes)])


def _check_offsets(offsets: np.ndarray, what: str) -> None:
    if offsets.ndim != 1 or len(offsets) < 2:
        raise ValueError(f"{what} offsets need at least two entries")
    if offsets[0] != 0:
        raise ValueError(f"{what} offsets must start at 0")
    if np.any(np.diff(offsets) < 1):
        raise ValueError(f"{what} offsets must be strictly increasing")


@dataclass(frozen=True)
class BlockLayout:
    """R x C logical partition of the implicit n x s feature matrix."""

    row_offsets: np.ndarray
    col_offsets: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.row_offsets, dtype=np.int64)
        cols = np.asarray(self.col_offsets, dtype=np.int64)
        _check_offsets(rows, "row")
        _check_offsets(cols, "column")
        object.__setattr__(self, "row_offsets", rows)
        object.__setattr__(self, "col_offsets", cols)

    @classmethod
    def balanced(cls, n: int, s: int, R: int, C: int) -> "BlockLayout":
        return cls(balanced_offsets(n, R), balanced_offsets(s, C))

    @property
    def R(self) -> int:
        return len(self.row_offsets) - 1

    @property
    def C(self) -> int:
        return len(self.col_offsets) - 1

    @property
    def n(self) -> int:
        return int(self.row_offsets[-1])

    @property
    def s(self) -> int:
        return int(self.col_offsets[-1])

    def row_slice(self, i: int) -> slice:
        if not 0 <= i < self.R:
            raise IndexError(f"row block {i} out of range [0, {self.R})")
        return slice(int(self.row_offsets[i]), int(self.row_offsets[i + 1]))

    def col_slice(self, j: int) -> slice:
        if not 0 <= j < self.C:
            raise IndexError(f"column block {j} out of range [0, {self.C})")
        return slice(int(self.col_offsets[j]), int(self.col_offsets[j + 1]))


def row_block(X: np.ndarray, layout: BlockLayout, i: int) -> np.ndarray:
    """View of rows ``[rowOffsets[i], rowOffsets[i+1])`` of ``X``."""
    if X.shape[0] != layout.n:
        raise ValueError(f"matrix has {X.shape[0]} rows, layout expects {layout.n}")
    return X[layout.row_slice(i)]


def col_block(W: np.ndarray, layout: BlockLayout, j: int) -> np.ndarray:
    """View of the j-th row block of an s x m model matrix."""
    if W.shape[0] != layout.s:
        raise ValueError(f"matrix has {W.shape[0]} rows, layout expects {layout.s}")
    return W[layout.col_slice(j)]


# --------------------------------------------------------------------------
# datasets


def _parse_label(tok: str):
    try:
        return float(tok)
    except ValueError:
        return tok


def _labels_array(labels: list) -> np.ndarray:
    if all(isinstance(v, float) for v in labels):
        return np.asarray(labels, dtype=np.float64)
    return np.asarray([str(v) for v in labels], dtype=object)


def _load_csv(text: str, label_column: int | None) -> tuple[np.ndarray, np.ndarray]:
    rows: list[list[float]] = []
    labels: list = []
    width = None
    for lineno, rec in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not rec or all(not tok.strip() for tok in rec):
            continue
        if width is None:
            width = len(rec)
            if width < 2:
                raise DatasetError(f"line {lineno}: need at least one feature and a label")
        elif len(rec) != width:
            raise DatasetError(
                f"line {lineno}: expected {width} columns, found {len(rec)}"
            )
        col = width - 1 if label_column is None else label_column % width
        feats = []
        for k, tok in enumerate(rec):
            if k == col:
                continue
            try:
                v = float(tok)
            except ValueError:
                raise DatasetError(f"line {lineno}: cannot parse {tok.strip()!r} as a number") from None
            if not np.isfinite(v):
                raise DatasetError(f"line {lineno}: non-finite value {tok.strip()!r}")
            feats.append(v)
        rows.append(feats)
        labels.append(_parse_label(rec[col].strip()))
    if not rows:
        raise DatasetError("line 1: empty dataset")
    return np.array(rows, dtype=np.float64), _labels_array(labels)


def _load_svmlight(text: str, n_features: int | None) -> tuple[np.ndarray, np.ndarray]:
    entries: list[dict[int, float]] = []
    labels: list = []
    max_index = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        labels.append(_parse_label(toks[0].replace("−", "-")))
        row: dict[int, float] = {}
        for tok in toks[1:]:
            if tok.startswith("qid:"):
                continue
            idx, sep, val = tok.partition(":")
            try:
                k = int(idx)
                v = float(val.replace("−", "-"))
            except ValueError:
                raise DatasetError(f"line {lineno}: bad feature token {tok!r}") from None
            if not sep or k < 1:
                raise DatasetError(f"line {lineno}: bad feature token {tok!r}")
            if not np.isfinite(v):
                raise DatasetError(f"line {lineno}: non-finite value in {tok!r}")
            if n_features is not None and k > n_features:
                raise DatasetError(
                    f"line {lineno}: feature index {k} exceeds declared dimension {n_features}"
                )
            row[k] = v
            max_index = max(max_index, k)
        entries.append(row)
    if not entries:
        raise DatasetError("line 1: empty dataset")
    d = n_features if n_features is not None else max_index
    X = np.zeros((len(entries), d))
    for r, row in enumerate(entries):
        for k, v in row.items():
            X[r, k - 1] = v
    return X, _labels_array(labels)


def load_dataset(
    path,
    format: str = "csv",
    *,
    label_column: int | None = None,
    n_features: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Read ``(X, labels)`` from a csv or svmlight file.

    Parameters
    ----------
    path : str or Path
        File to read.
    format : {"csv", "svmlight"}
    label_column : int, optional
        csv only; defaults to the last column.
    n_features : int, optional
        svmlight only; declared input dimension.  Inferred from the
        largest feature index when omitted.

    Returns
    -------
    X : ndarray, shape (n, d)
    labels : ndarray, shape (n,)
        float64 when every label parses as a number, otherwise strings.
    """
    text = Path(path).read_text()
    if format == "csv":
        return _load_csv(text, label_column)
    if format in ("svmlight", "libsvm"):
        return _load_svmlight(text, n_features)
    raise ValueError(f"unknown dataset format {format!r}")


def save_csv(path, X: np.ndarray, labels: Sequence) -> None:
    """Write ``X`` with labels as the last column; floats round-trip exactly."""
    X = as_dense(X, "X")
    if len(labels) != X.shape[0]:
        raise ValueError("labels length does not match X rows")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row, lab in zip(X, labels):
            lab_txt = repr(float(lab)) if isinstance(lab, (float, np.floating, int, np.integer)) else str(lab)
            w.writerow([repr(float(v)) for v in row] + [lab_txt])


# --------------------------------------------------------------------------
# labels


@dataclass(frozen=True)
class LabelEncoding:
    class_labels: tuple = ()
    mode: str = "one-vs-all"

    def __post_init__(self):
        if self.mode not in ("regression", "one-vs-all"):
            raise ValueError(f"unknown label mode {self.mode!r}")
        object.__setattr__(self, "class_labels", tuple(self.class_labels))
        if len(set(self.class_labels)) != len(self.class_labels):
            raise ValueError("class labels must be distinct")

    @classmethod
    def fit(cls, labels, mode: str = "one-vs-all") -> "LabelEncoding":
        if mode == "regression":
            return cls((), mode)
        classes = sorted(set(_plain(v) for v in labels), key=lambda v: (isinstance(v, str), v))
        return cls(tuple(classes), mode)

    @property
    def m(self) -> int:
        return 1 if self.mode == "regression" else len(self.class_labels)


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


def encode_labels(labels, encoding: LabelEncoding) -> np.ndarray:
    """Targets matrix Y: raw values (n x 1) or one-vs-all +/-1 (n x m)."""
    if encoding.mode == "regression":
        return as_dense(np.asarray(labels, dtype=np.float64).reshape(-1, 1), "labels")
    index = {c: k for k, c in enumerate(encoding.class_labels)}
    Y = -np.ones((len(labels), len(index)))
    for r, lab in enumerate(labels):
        try:
            Y[r, index[_plain(lab)]] = 1.0
        except KeyError:
            raise ValueError(f"unknown label {lab!r} at row {r}") from None
    return Y


def decode_labels(scores: np.ndarray, encoding: LabelEncoding) -> list:
    """Arg-max over score columns; ties go to the lowest class index."""
    if encoding.mode == "regression":
        return list(np.asarray(scores)[:, 0])
    idx = np.argmax(scores, axis=1)
    return [encoding.class_labels[k] for k in idx]


# --------------------------------------------------------------------------
# model files
#
# layout (all little endian):
#   magic[8] version:u32 header_len:u32 header_json[header_len]
#   payload_crc32:u32 payload: s*m float64
# header_json keys: s, m, d, sigma_hex, seed, col_offsets, kernel, loss,
#                   label_mode, class_labels

MAGIC = b"KSPLTMDL"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


def save_model(path, model) -> None:
    W = np.ascontiguousarray(model.weights, dtype="<f8")
    desc = model.transform
    if W.shape[0] != desc.s:
        raise ValueError(f"weights have {W.shape[0]} rows but the transform has s={desc.s}")
    if W.shape[1] != model.encoding.m:
        raise ValueError("weights columns do not match the label encoding")
    header = {
        "s": int(desc.s),
        "m": int(W.shape[1]),
        "d": int(model.d),
        "sigma_hex": float(desc.sigma).hex(),
        "seed": int(desc.seed),
        "col_offsets": [int(v) for v in desc.col_offsets],
        "kernel": desc.kernel,
        "loss": model.loss,
        "label_mode": model.encoding.mode,
        "class_labels": [_plain(c) for c in model.encoding.class_labels],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    payload = W.tobytes()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", zlib.crc32(payload)))
        fh.write(payload)


def load_model(path):
    from .blockadmm import Model
    from .featuremap import TransformDescriptor

    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise ModelFormatError("truncated model file (no header)")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    pos = _PREFIX.size
    if len(raw) < pos + hlen + 4:
        raise ModelFormatError("truncated model file (header)")
    try:
        header = json.loads(raw[pos:pos + hlen])
    except ValueError as exc:
        raise ModelFormatError(f"corrupt model header: {exc}") from None
    pos += hlen
    (crc,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    s, m = header["s"], header["m"]
    payload = raw[pos:]
    if len(payload) != 8 * s * m:
        raise ModelFormatError(
            f"truncated model file: payload has {len(payload)} bytes, expected {8 * s * m}"
        )
    if zlib.crc32(payload) != crc:
        raise ModelFormatError("model payload checksum mismatch")
    desc = TransformDescriptor(
        sigma=float.fromhex(header["sigma_hex"]),
        col_offsets=np.asarray(header["col_offsets"], dtype=np.int64),
        seed=header["seed"],
        kernel=header["kernel"],
    )
    if desc.s != s:
        raise ModelFormatError(f"descriptor s={desc.s} does not match weights rows {s}")
    W = np.frombuffer(payload, dtype="<f8").reshape(s, m).astype(np.float64)
    enc = LabelEncoding(tuple(header["class_labels"]), header["label_mode"])
    return Model(weights=W, transform=desc, encoding=enc, loss=header["loss"], d=header["d"])
