"""Question and image inputs: embedding lookup, the LSTM question encoder,
and ingestion of precomputed region features.

Word embeddings are consumed pre-trained and stay frozen; no gradient ever
reaches the table. Region features likewise arrive precomputed in feature
files and are wrapped, never recomputed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fileio
from .tensor import (
    DEFAULT_DTYPE,
    Tensor,
    add,
    concat,
    elementwise_product,
    matmul,
    parameter,
    sigmoid,
    tanh,
)

PAD_ID = 0
PAD_TOKEN = "<pad>"


class EmbeddingTable:
    """Frozen word-embedding matrix; the pad row is pinned to zeros."""

    def __init__(self, rows: np.ndarray, pad_id: int = PAD_ID):
        rows = np.ascontiguousarray(np.asarray(rows))
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ValueError(f"embedding table must be a non-empty 2-D array, got shape {rows.shape}")
        if not 0 <= pad_id < rows.shape[0]:
            raise ValueError(f"pad id {pad_id} outside vocabulary of size {rows.shape[0]}")
        rows[pad_id, :] = 0.0
        self.rows = rows
        self.pad_id = pad_id

    @property
    def vocab_size(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def lookup(self, token_ids) -> Tensor:
        """Stack the embedding rows for a token id sequence (constant output)."""
        ids = np.asarray(list(token_ids), dtype=np.int64)
        if ids.size == 0:
            raise ValueError("cannot look up an empty token sequence")
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            bad = ids[(ids < 0) | (ids >= self.vocab_size)][0]
            raise ValueError(f"token id {bad} outside vocabulary of size {self.vocab_size}")
        return Tensor(self.rows[ids])

    def save(self, path) -> None:
        fileio.write_embeddings(path, self.rows)

    @classmethod
    def load(cls, path, pad_id: int = PAD_ID) -> "EmbeddingTable":
        return cls(fileio.read_embeddings(path), pad_id=pad_id)


def pad_or_truncate(tokens, n_w: int, pad_id: int = PAD_ID) -> list[int]:
    """Fix a token sequence to length n_w: keep the first n_w, right-pad."""
    if n_w < 1:
        raise ValueError(f"sequence length must be at least 1, got {n_w}")
    out = [int(t) for t in tokens][:n_w]
    out.extend([pad_id] * (n_w - len(out)))
    return out


@dataclass
class LstmParams:
    """Gate weights over the concatenated (input, previous hidden) vector.

    Each gate matrix is d_q x (d_w + d_q); each bias is length d_q.
    """

    w_i: Tensor
    w_f: Tensor
    w_c: Tensor
    w_o: Tensor
    b_i: Tensor
    b_f: Tensor
    b_c: Tensor
    b_o: Tensor

    def __post_init__(self):
        d_q, din = self.w_i.shape
        for w in (self.w_f, self.w_c, self.w_o):
            if w.shape != (d_q, din):
                raise ValueError(f"gate weight shape {w.shape} differs from {(d_q, din)}")
        for b in (self.b_i, self.b_f, self.b_c, self.b_o):
            if b.shape != (d_q,):
                raise ValueError(f"gate bias shape {b.shape} differs from ({d_q},)")

    @property
    def d_q(self) -> int:
        return self.w_i.shape[0]

    @property
    def d_w(self) -> int:
        return self.w_i.shape[1] - self.w_i.shape[0]

    @classmethod
    def create(cls, rng: np.random.Generator, d_w: int, d_q: int, dtype=DEFAULT_DTYPE) -> "LstmParams":
        """Uniform +-1/sqrt(d_w + d_q) gate weights; forget bias 1, others 0."""
        din = d_w + d_q
        bound = 1.0 / math.sqrt(din)

        def w():
            return parameter(rng.uniform(-bound, bound, (d_q, din)), dtype=dtype)

        return cls(
            w_i=w(), w_f=w(), w_c=w(), w_o=w(),
            b_i=parameter(np.zeros(d_q), dtype=dtype),
            b_f=parameter(np.ones(d_q), dtype=dtype),
            b_c=parameter(np.zeros(d_q), dtype=dtype),
            b_o=parameter(np.zeros(d_q), dtype=dtype),
        )

    def parameters(self) -> list[Tensor]:
        return [self.w_i, self.w_f, self.w_c, self.w_o,
                self.b_i, self.b_f, self.b_c, self.b_o]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        names = ("lstm.w_i", "lstm.w_f", "lstm.w_c", "lstm.w_o",
                 "lstm.b_i", "lstm.b_f", "lstm.b_c", "lstm.b_o")
        return list(zip(names, self.parameters()))


def encode_question(tokens, table: EmbeddingTable, lstm: LstmParams) -> Tensor:
    """Run the LSTM over the full (already padded) sequence; return the last
    hidden state.

    Padding steps are processed like any other step; their embeddings are
    the zero pad row. Start state is zero for both hidden and cell.
    """
    if table.dim != lstm.d_w:
        raise ValueError(f"embedding dim {table.dim} differs from LSTM input dim {lstm.d_w}")
    emb = table.lookup(tokens)
    dtype = lstm.w_i.dtype
    h = Tensor(np.zeros(lstm.d_q, dtype=dtype))
    c = Tensor(np.zeros(lstm.d_q, dtype=dtype))
    for j in range(emb.shape[0]):
        x = Tensor(emb.data[j].astype(dtype, copy=False))
        xh = concat(x, h)
        gi = sigmoid(add(matmul(lstm.w_i, xh), lstm.b_i))
        gf = sigmoid(add(matmul(lstm.w_f, xh), lstm.b_f))
        gc = tanh(add(matmul(lstm.w_c, xh), lstm.b_c))
        go = sigmoid(add(matmul(lstm.w_o, xh), lstm.b_o))
        c = add(elementwise_product(gf, c), elementwise_product(gi, gc))
        h = elementwise_product(go, tanh(c))
    return h


class RegionFeatures:
    """The k x d_v stack of precomputed region feature vectors for one image."""

    def __init__(self, features: np.ndarray):
        features = np.ascontiguousarray(np.asarray(features))
        if features.ndim != 2 or features.shape[0] < 1:
            raise ValueError(f"region features must be k x d_v with k >= 1, got shape {features.shape}")
        if not np.isfinite(features).all():
            raise ValueError("region features contain non-finite entries")
        self.features = features

    @property
    def k(self) -> int:
        return self.features.shape[0]

    @property
    def d_v(self) -> int:
        return self.features.shape[1]


def load_region_features(path, offset: int, k: int, d_v: int) -> RegionFeatures:
    """Read one feature record and check it against the run configuration."""
    file_k, file_dv, _, _ = fileio.read_feature_header(path)
    if (file_k, file_dv) != (k, d_v):
        raise fileio.DataError(
            f"{path}: feature file declares k={file_k}, d_v={file_dv} "
            f"but the run is configured for k={k}, d_v={d_v}")
    arr = fileio.read_feature_record(path, offset)
    if not np.isfinite(arr).all():
        raise fileio.DataError(f"{path}: record {offset} contains non-finite entries")
    return RegionFeatures(arr)
