"""Binary file formats: embedding tables, region-feature files, checkpoints.

Every multi-byte integer is little-endian and every float block is raw
IEEE-754, row-major. Precision fields hold the float width in bytes
(4 or 8).
"""

from __future__ import annotations

import struct

import numpy as np

EMB_MAGIC = b"QEMB"
FEAT_MAGIC = b"RGNF"
CKPT_MAGIC = b"HVQC"
FORMAT_VERSION = 1


class DataError(ValueError):
    """Malformed file, unresolved reference, or schema violation."""


def _dtype_for(precision: int):
    if precision == 4:
        return np.dtype("<f4")
    if precision == 8:
        return np.dtype("<f8")
    raise DataError(f"unsupported float precision {precision}, expected 4 or 8")


def _precision_of(arr: np.ndarray) -> int:
    return 8 if arr.dtype == np.float64 else 4


# Embedding table: magic, version, vocab_size, dim, precision, then rows.

def write_embeddings(path, rows: np.ndarray) -> None:
    rows = np.asarray(rows)
    if rows.ndim != 2:
        raise DataError(f"embedding rows must be 2-D, got shape {rows.shape}")
    prec = _precision_of(rows)
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIIII", EMB_MAGIC, FORMAT_VERSION,
                            rows.shape[0], rows.shape[1], prec))
        f.write(np.ascontiguousarray(rows, dtype=_dtype_for(prec)).tobytes())


def read_embeddings(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(20)
        if len(head) < 20:
            raise DataError(f"{path}: truncated embedding header")
        magic, version, vocab, dim, prec = struct.unpack("<4sIIII", head)
        if magic != EMB_MAGIC:
            raise DataError(f"{path}: bad embedding magic {magic!r}")
        if version != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported embedding version {version}")
        dt = _dtype_for(prec)
        raw = f.read(vocab * dim * prec)
    if len(raw) != vocab * dim * prec:
        raise DataError(f"{path}: embedding payload shorter than header promises")
    return np.frombuffer(raw, dtype=dt).reshape(vocab, dim).copy()


def write_vocab(path, tokens: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for tok in tokens:
            f.write(tok + "\n")


def read_vocab(path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


# Region features: magic, k, d_v, precision, then back-to-back k x d_v records.

_FEAT_HEADER = struct.Struct("<4sIII")


def write_features(path, records: np.ndarray) -> None:
    records = np.asarray(records)
    if records.ndim != 3:
        raise DataError(f"feature records must be n x k x d_v, got shape {records.shape}")
    prec = _precision_of(records)
    with open(path, "wb") as f:
        f.write(_FEAT_HEADER.pack(FEAT_MAGIC, records.shape[1], records.shape[2], prec))
        f.write(np.ascontiguousarray(records, dtype=_dtype_for(prec)).tobytes())


def read_feature_header(path) -> tuple[int, int, int, int]:
    """Return (k, d_v, precision, record_count) for a feature file."""
    import os

    size = os.path.getsize(path)
    with open(path, "rb") as f:
        head = f.read(_FEAT_HEADER.size)
    if len(head) < _FEAT_HEADER.size:
        raise DataError(f"{path}: truncated feature header")
    magic, k, d_v, prec = _FEAT_HEADER.unpack(head)
    if magic != FEAT_MAGIC:
        raise DataError(f"{path}: bad feature magic {magic!r}")
    _dtype_for(prec)
    payload = size - _FEAT_HEADER.size
    rec_bytes = k * d_v * prec
    if rec_bytes == 0 or payload % rec_bytes:
        raise DataError(f"{path}: payload is not a whole number of {k}x{d_v} records")
    return k, d_v, prec, payload // rec_bytes


def read_feature_record(path, index: int) -> np.ndarray:
    k, d_v, prec, count = read_feature_header(path)
    if not 0 <= index < count:
        raise DataError(f"{path}: record {index} out of range, file holds {count}")
    rec_bytes = k * d_v * prec
    with open(path, "rb") as f:
        f.seek(_FEAT_HEADER.size + index * rec_bytes)
        raw = f.read(rec_bytes)
    return np.frombuffer(raw, dtype=_dtype_for(prec)).reshape(k, d_v).copy()


# Named array blocks, used by checkpoints: name length, utf-8 name, ndim,
# dims, raw floats.

def write_named_arrays(f, items: list[tuple[str, np.ndarray]]) -> None:
    for name, arr in items:
        raw_name = name.encode("utf-8")
        prec = _precision_of(arr)
        f.write(struct.pack("<I", len(raw_name)))
        f.write(raw_name)
        f.write(struct.pack("<II", prec, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(np.ascontiguousarray(arr, dtype=_dtype_for(prec)).tobytes())


def read_named_arrays(f) -> list[tuple[str, np.ndarray]]:
    items = []
    while True:
        head = f.read(4)
        if not head:
            return items
        if len(head) < 4:
            raise DataError("truncated parameter block")
        (name_len,) = struct.unpack("<I", head)
        name = f.read(name_len).decode("utf-8")
        prec, ndim = struct.unpack("<II", f.read(8))
        shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
        dt = _dtype_for(prec)
        n = int(np.prod(shape)) if shape else 1
        raw = f.read(n * prec)
        if len(raw) != n * prec:
            raise DataError(f"parameter block {name!r} is truncated")
        items.append((name, np.frombuffer(raw, dtype=dt).reshape(shape).copy()))
