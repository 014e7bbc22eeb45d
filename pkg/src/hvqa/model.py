"""The hierarchical answering head and the flat ablation baseline.

Level 1 classifies the fused feature into a question category; level 2
holds one answer predictor per category, each over that category's answer
subset. At inference the category argmax hard-selects exactly one
predictor. Training routes the answer loss either through the predicted
category (the literal rule, which can strand a sample whose ground-truth
answer is missing from the selected subset) or through the ground-truth
category (teacher forcing, the default).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .attention import FusionParams, attend_and_fuse, project
from .encoders import (
    EmbeddingTable,
    LstmParams,
    RegionFeatures,
    encode_question,
    pad_or_truncate,
)
from .tensor import (
    DEFAULT_DTYPE,
    Tensor,
    add,
    cross_entropy,
    matmul,
    one_hot,
    parameter,
    relu,
    softmax,
    softmax_cross_entropy,
)

PREDICTED = "predicted"
TEACHER_FORCED = "teacher_forced"
ROUTING_MODES = (PREDICTED, TEACHER_FORCED)

_KIND_HIER = 1
_KIND_FLAT = 2


class AnswerSpace:
    """Decomposition of the global answer set into per-category subsets.

    Subsets may overlap; the union must cover the global set. Answer
    strings own identity; integer ids are assigned here and nowhere else.
    """

    def __init__(self, category_names: list[str], global_answers: list[str],
                 subsets: list[list[int]]):
        if len(category_names) != len(subsets):
            raise ValueError(f"{len(category_names)} category names but {len(subsets)} subsets")
        if len(set(global_answers)) != len(global_answers):
            raise ValueError("global answer list contains duplicates")
        self.category_names = list(category_names)
        self.global_answers = list(global_answers)
        self.subsets = [list(map(int, s)) for s in subsets]
        self.global_index = {a: i for i, a in enumerate(self.global_answers)}

        covered = set()
        for r, subset in enumerate(self.subsets):
            if not subset:
                raise ValueError(f"category {r} ({category_names[r]!r}) has an empty answer subset")
            if len(set(subset)) != len(subset):
                raise ValueError(f"category {r} subset repeats an answer id")
            for gid in subset:
                if not 0 <= gid < len(self.global_answers):
                    raise ValueError(f"category {r} references unknown answer id {gid}")
            covered.update(subset)
        if covered != set(range(len(self.global_answers))):
            raise ValueError("union of category subsets does not cover the global answer set")

        self._local = [{gid: j for j, gid in enumerate(subset)} for subset in self.subsets]

    @property
    def n_c(self) -> int:
        return len(self.subsets)

    @property
    def n_a(self) -> list[int]:
        return [len(s) for s in self.subsets]

    def local_index(self, category: int, answer: str) -> int | None:
        """Position of an answer inside a category's subset, or None."""
        gid = self.global_index.get(answer)
        if gid is None:
            return None
        return self._local[category].get(gid)

    def to_dict(self) -> dict:
        return {
            "category_names": self.category_names,
            "global_answers": self.global_answers,
            "subsets": self.subsets,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnswerSpace":
        return cls(d["category_names"], d["global_answers"], d["subsets"])


def build_answer_space(records, category_names: list[str]) -> AnswerSpace:
    """Derive the per-category answer subsets from (category, answer) pairs.

    Subsets and the global set are ordered lexicographically so rebuilding
    from the same data is deterministic.
    """
    records = list(records)
    if not records:
        raise ValueError("cannot build an answer space from an empty training set")
    n_c = len(category_names)
    per_cat: list[set[str]] = [set() for _ in range(n_c)]
    for rec in records:
        if not 0 <= rec.category < n_c:
            raise ValueError(f"record category {rec.category} out of range for {n_c} categories")
        per_cat[rec.category].add(rec.answer)
    for r, answers in enumerate(per_cat):
        if not answers:
            raise ValueError(f"category {r} ({category_names[r]!r}) has no training samples; "
                             "the model could never route to it")
    global_answers = sorted(set().union(*per_cat))
    gid = {a: i for i, a in enumerate(global_answers)}
    subsets = [[gid[a] for a in sorted(answers)] for answers in per_cat]
    return AnswerSpace(category_names, global_answers, subsets)


@dataclass
class MlpHead:
    """One hidden layer with ReLU, then a linear output layer."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def create(cls, rng: np.random.Generator, d_in: int, hidden: int, n_out: int,
               dtype=DEFAULT_DTYPE) -> "MlpHead":
        def w(fan_in, shape):
            bound = 1.0 / math.sqrt(fan_in)
            return parameter(rng.uniform(-bound, bound, shape), dtype=dtype)

        return cls(
            w1=w(d_in, (d_in, hidden)),
            b1=parameter(np.zeros(hidden), dtype=dtype),
            w2=w(hidden, (hidden, n_out)),
            b2=parameter(np.zeros(n_out), dtype=dtype),
        )

    def logits(self, x: Tensor) -> Tensor:
        hidden = relu(add(matmul(x, self.w1), self.b1))
        return add(matmul(hidden, self.w2), self.b2)

    def logits_np(self, x: np.ndarray) -> np.ndarray:
        hidden = np.maximum(x @ self.w1.data + self.b1.data, 0)
        return hidden @ self.w2.data + self.b2.data

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    def named_parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1),
                (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2)]


CategorizerParams = MlpHead
PredictorParams = MlpHead


def categorize(h_a: Tensor, params: CategorizerParams) -> Tensor:
    """Category probabilities for a fused feature."""
    return softmax(params.logits(h_a))


def route(p_q) -> int:
    """Hard category selection: smallest index attaining the maximum.

    No gradient flows through this choice.
    """
    arr = p_q.data if isinstance(p_q, Tensor) else np.asarray(p_q)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"routing needs a non-empty probability vector, got shape {arr.shape}")
    return int(np.argmax(arr))


def predict_answer(h_a: Tensor, r: int, predictors: list[PredictorParams],
                   space: AnswerSpace) -> tuple[Tensor, int]:
    """Evaluate exactly the r-th predictor; return its probabilities and the
    global id of its argmax answer."""
    if not 0 <= r < space.n_c:
        raise ValueError(f"category index {r} out of range for {space.n_c} predictors")
    probs = softmax(predictors[r].logits(h_a))
    local = int(np.argmax(probs.data))
    return probs, space.subsets[r][local]


def loss_q(p_q: Tensor, category: int) -> Tensor:
    """Cross entropy of the category probabilities against the true category."""
    n = p_q.data.size
    if not 0 <= category < n:
        raise ValueError(f"category id {category} out of range for {n} categories")
    return cross_entropy(p_q, one_hot(category, n, dtype=p_q.dtype))


def loss_aa(h_a: Tensor, p_q: Tensor, answer: str, category: int, mode: str,
            predictors: list[PredictorParams], space: AnswerSpace) -> tuple[Tensor, bool]:
    """Routed answer loss. Returns (loss, missed).

    Exactly one predictor is evaluated: the predicted category's in
    ``predicted`` mode, the ground-truth category's in ``teacher_forced``
    mode. In predicted mode a sample whose answer is absent from the
    selected subset has no defined target; its loss is skipped (constant
    zero) and ``missed`` is True.
    """
    if mode not in ROUTING_MODES:
        raise ValueError(f"unknown routing mode {mode!r}, expected one of {ROUTING_MODES}")
    if mode == PREDICTED:
        rho = route(p_q)
        local = space.local_index(rho, answer)
        if local is None:
            return Tensor(np.zeros((), dtype=h_a.dtype)), True
    else:
        rho = category
        local = space.local_index(rho, answer)
        if local is None:
            raise ValueError(f"answer {answer!r} is not in the subset of category {rho}")
    return softmax_cross_entropy(predictors[rho].logits(h_a), local), False


def baseline_predict(h_a: Tensor, head: MlpHead) -> Tensor:
    """Flat-classifier probabilities over the full global answer set."""
    return softmax(head.logits(h_a))


@dataclass
class StepStats:
    """Per-sample numbers surfaced to the training loop."""

    loss_q: float | None
    loss_aa: float | None
    missed: bool | None
    category_correct: bool | None
    answer_correct: bool


@dataclass
class Prediction:
    """Inference output for one record (ground truth never consulted)."""

    answer: str
    answer_probs: np.ndarray
    category: int | None = None
    category_name: str | None = None
    category_probs: np.ndarray | None = None
    answer_ids: list[int] = field(default_factory=list)


class _TrunkMixin:
    """Shared encode + fuse path: tokens and features to the fused vector.

    The region count k is a property of the data, not of the parameters;
    any k >= 1 fuses through the same weights.
    """

    def fuse(self, record) -> Tensor:
        tokens = pad_or_truncate(record.tokens, self.n_w)
        f_q = encode_question(tokens, self.table, self.lstm)
        feats = record.features
        if feats.ndim != 2 or feats.shape[1] != self.d_v:
            raise ValueError(
                f"record features have shape {feats.shape}, expected (k, {self.d_v})")
        v_tilde, fq_tilde = project(RegionFeatures(feats), f_q, self.fusion)
        return attend_and_fuse(v_tilde, fq_tilde, self.fusion).fused


class HierarchicalModel(_TrunkMixin):
    """Categorizer plus per-category answer predictors over a shared trunk."""

    kind = "hierarchical"

    def __init__(self, table: EmbeddingTable, lstm: LstmParams, fusion: FusionParams,
                 categorizer: CategorizerParams, predictors: list[PredictorParams],
                 space: AnswerSpace, d_v: int, n_w: int):
        if len(predictors) != space.n_c:
            raise ValueError(f"{len(predictors)} predictors for {space.n_c} categories")
        self.table = table
        self.lstm = lstm
        self.fusion = fusion
        self.categorizer = categorizer
        self.predictors = predictors
        self.space = space
        self.d_v = d_v
        self.n_w = n_w

    @classmethod
    def build(cls, rng: np.random.Generator, space: AnswerSpace, table: EmbeddingTable, *,
              d_v: int, d_q: int, d_f: int, n_w: int,
              h_cq: int | None = None, h_ap: int | None = None,
              dtype=DEFAULT_DTYPE) -> "HierarchicalModel":
        # Trunk first: the ablation comparison relies on the baseline drawing
        # identical trunk weights from an identically seeded generator.
        lstm = LstmParams.create(rng, table.dim, d_q, dtype=dtype)
        fusion = FusionParams.create(rng, d_v, d_q, d_f, dtype=dtype)
        categorizer = MlpHead.create(rng, d_f, h_cq or d_f, space.n_c, dtype=dtype)
        predictors = [MlpHead.create(rng, d_f, h_ap or d_f, n, dtype=dtype)
                      for n in space.n_a]
        return cls(table, lstm, fusion, categorizer, predictors, space, d_v, n_w)

    @property
    def dtype(self):
        return self.lstm.w_i.dtype

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = self.lstm.named_parameters() + self.fusion.named_parameters()
        named += self.categorizer.named_parameters("categorizer")
        for r, pred in enumerate(self.predictors):
            named += pred.named_parameters(f"predictor{r}")
        return named

    def sample_loss(self, record, mode: str = TEACHER_FORCED) -> tuple[Tensor, StepStats]:
        """Total loss (category term plus routed answer term) for one record."""
        h_a = self.fuse(record)
        logits_c = self.categorizer.logits(h_a)
        p_q = softmax(logits_c)
        lq = softmax_cross_entropy(logits_c, record.category)
        laa, missed = loss_aa(h_a, p_q, record.answer, record.category, mode,
                              self.predictors, self.space)
        total = add(lq, laa)

        rho = route(p_q)
        # Accuracy is reported on the inference path (predicted routing),
        # off-tape so it leaves the recorded step untouched.
        local = int(np.argmax(self.predictors[rho].logits_np(h_a.data)))
        answer = self.space.global_answers[self.space.subsets[rho][local]]
        return total, StepStats(
            loss_q=lq.item(),
            loss_aa=laa.item(),
            missed=missed,
            category_correct=rho == record.category,
            answer_correct=answer == record.answer,
        )

    def predict(self, record) -> Prediction:
        h_a = self.fuse(record)
        p_q = categorize(h_a, self.categorizer)
        rho = route(p_q)
        probs, gid = predict_answer(h_a, rho, self.predictors, self.space)
        return Prediction(
            answer=self.space.global_answers[gid],
            answer_probs=probs.data.copy(),
            category=rho,
            category_name=self.space.category_names[rho],
            category_probs=p_q.data.copy(),
            answer_ids=list(self.space.subsets[rho]),
        )


class FlatModel(_TrunkMixin):
    """No-hierarchy ablation: one classifier over the whole answer set,
    on the same attended-and-fused features."""

    kind = "flat"

    def __init__(self, table: EmbeddingTable, lstm: LstmParams, fusion: FusionParams,
                 head: MlpHead, space: AnswerSpace, d_v: int, n_w: int):
        self.table = table
        self.lstm = lstm
        self.fusion = fusion
        self.head = head
        self.space = space
        self.d_v = d_v
        self.n_w = n_w

    @classmethod
    def build(cls, rng: np.random.Generator, space: AnswerSpace, table: EmbeddingTable, *,
              d_v: int, d_q: int, d_f: int, n_w: int,
              h_flat: int | None = None, dtype=DEFAULT_DTYPE) -> "FlatModel":
        lstm = LstmParams.create(rng, table.dim, d_q, dtype=dtype)
        fusion = FusionParams.create(rng, d_v, d_q, d_f, dtype=dtype)
        head = MlpHead.create(rng, d_f, h_flat or d_f, len(space.global_answers), dtype=dtype)
        return cls(table, lstm, fusion, head, space, d_v, n_w)

    @property
    def dtype(self):
        return self.lstm.w_i.dtype

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return (self.lstm.named_parameters() + self.fusion.named_parameters()
                + self.head.named_parameters("flat"))

    def sample_loss(self, record, mode: str = TEACHER_FORCED) -> tuple[Tensor, StepStats]:
        h_a = self.fuse(record)
        gid = self.space.global_index.get(record.answer)
        if gid is None:
            raise ValueError(f"answer {record.answer!r} is not in the global answer set")
        logits = self.head.logits(h_a)
        loss = softmax_cross_entropy(logits, gid)
        return loss, StepStats(
            loss_q=None, loss_aa=None, missed=None, category_correct=None,
            answer_correct=int(np.argmax(logits.data)) == gid,
        )

    def predict(self, record) -> Prediction:
        h_a = self.fuse(record)
        probs = baseline_predict(h_a, self.head)
        gid = int(np.argmax(probs.data))
        return Prediction(
            answer=self.space.global_answers[gid],
            answer_probs=probs.data.copy(),
            answer_ids=list(range(len(self.space.global_answers))),
        )


# Checkpoints: header, answer space, then named parameter blocks in the
# order named_parameters() yields.

_CKPT_HEAD = struct.Struct("<4sIIIIIIIII")


def save_checkpoint(path, model) -> None:
    kind = _KIND_HIER if isinstance(model, HierarchicalModel) else _KIND_FLAT
    prec = 8 if model.dtype == np.float64 else 4
    space = model.space
    with open(path, "wb") as f:
        f.write(_CKPT_HEAD.pack(fileio.CKPT_MAGIC, fileio.FORMAT_VERSION, kind, prec,
                                model.d_v, model.table.dim, model.lstm.d_q,
                                model.fusion.d_f, model.n_w, space.n_c))
        f.write(struct.pack(f"<{space.n_c}I", *space.n_a))
        blob = json.dumps(space.to_dict(), sort_keys=True).encode("utf-8")
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        fileio.write_named_arrays(f, [(n, t.data) for n, t in model.named_parameters()])


def load_checkpoint(path, table: EmbeddingTable):
    """Rebuild a model from a checkpoint; the embedding table ships separately."""
    with open(path, "rb") as f:
        head = f.read(_CKPT_HEAD.size)
        if len(head) < _CKPT_HEAD.size:
            raise fileio.DataError(f"{path}: truncated checkpoint header")
        magic, version, kind, prec, d_v, d_w, d_q, d_f, n_w, n_c = _CKPT_HEAD.unpack(head)
        if magic != fileio.CKPT_MAGIC:
            raise fileio.DataError(f"{path}: bad checkpoint magic {magic!r}")
        if version != fileio.FORMAT_VERSION:
            raise fileio.DataError(f"{path}: unsupported checkpoint version {version}")
        if kind not in (_KIND_HIER, _KIND_FLAT):
            raise fileio.DataError(f"{path}: unknown model kind {kind}")
        struct.unpack(f"<{n_c}I", f.read(4 * n_c))  # n_a, re-derived from the space
        (blob_len,) = struct.unpack("<I", f.read(4))
        space = AnswerSpace.from_dict(json.loads(f.read(blob_len).decode("utf-8")))
        arrays = dict(fileio.read_named_arrays(f))
    if table.dim != d_w:
        raise fileio.DataError(
            f"{path}: checkpoint expects embedding dim {d_w}, table has {table.dim}")

    dtype = np.float64 if prec == 8 else np.float32
    # k is recoverable from the region projection shape.
    k = None

    def pull(name):
        if name not in arrays:
            raise fileio.DataError(f"{path}: missing parameter block {name!r}")
        return parameter(arrays[name], dtype=dtype)

    lstm = LstmParams(*(pull(n) for n in
                        ("lstm.w_i", "lstm.w_f", "lstm.w_c", "lstm.w_o",
                         "lstm.b_i", "lstm.b_f", "lstm.b_c", "lstm.b_o")))
    fusion = FusionParams(*(pull(n) for n in
                            ("fusion.vq_w", "fusion.vq_b", "fusion.qq_w", "fusion.qq_b",
                             "fusion.att_w", "fusion.att_b")))
    if fusion.vq_w.shape[0] != d_v or lstm.d_q != d_q or fusion.d_f != d_f:
        raise fileio.DataError(f"{path}: parameter shapes disagree with the checkpoint header")

    def pull_head(prefix):
        return MlpHead(pull(f"{prefix}.w1"), pull(f"{prefix}.b1"),
                       pull(f"{prefix}.w2"), pull(f"{prefix}.b2"))

    if kind == _KIND_HIER:
        categorizer = pull_head("categorizer")
        predictors = [pull_head(f"predictor{r}") for r in range(space.n_c)]
        return HierarchicalModel(table, lstm, fusion, categorizer, predictors,
                                 space, d_v, n_w)
    return FlatModel(table, lstm, fusion, pull_head("flat"), space, d_v, n_w)
