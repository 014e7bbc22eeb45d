"""Dataset manifests and the synthetic desk-scale generator.

A manifest is line-delimited JSON: one header object (split name, category
names, dims block) followed by one record object per line. Records hold
raw token ids and a (feature file, record offset) reference; feature
payloads live in sidecar binary files so manifests stay diff-able.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .fileio import DataError

MANIFEST_NAME = "manifest.jsonl"
FEATURES_NAME = "features.bin"
EMBEDDINGS_NAME = "embeddings.emb"
VOCAB_NAME = "vocab.txt"

TOKENS_PER_CATEGORY = 8


@dataclass
class Dims:
    """Data-side dimensions a manifest commits to."""

    k: int
    d_v: int
    d_w: int
    n_w: int

    def to_dict(self) -> dict:
        return {"k": self.k, "d_v": self.d_v, "d_w": self.d_w, "n_w": self.n_w}

    @classmethod
    def from_dict(cls, d: dict) -> "Dims":
        try:
            return cls(int(d["k"]), int(d["d_v"]), int(d["d_w"]), int(d["n_w"]))
        except KeyError as e:
            raise DataError(f"dims block is missing {e.args[0]!r}") from None


@dataclass
class Record:
    """One training or evaluation example."""

    tokens: list[int]
    category: int
    answer: str
    features: np.ndarray = field(repr=False)
    source: tuple[str, int] | None = None  # (feature file, record offset)


@dataclass
class DatasetManifest:
    split: str
    categories: list[str]
    dims: Dims
    records: list[Record]
    answer_source: str = "records"

    @property
    def n_c(self) -> int:
        return len(self.categories)


def load_manifest(path) -> DatasetManifest:
    """Parse, validate, and materialize a manifest (features loaded eagerly)."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as f:
        lines = [line for line in (l.strip() for l in f) if line]
    if not lines:
        raise DataError(f"{path}: empty manifest")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: header is not valid JSON: {e}") from None
    for key in ("split", "categories", "dims"):
        if key not in header:
            raise DataError(f"{path}: header is missing {key!r}")
    dims = Dims.from_dict(header["dims"])
    categories = list(header["categories"])
    n_c = len(categories)

    headers_seen: dict[str, tuple[int, int, int, int]] = {}
    records = []
    for i, line in enumerate(lines[1:]):
        try:
            obj = json.loads(line)
            tokens = [int(t) for t in obj["tokens"]]
            feat_path = obj["features"]
            offset = int(obj["offset"])
            category = int(obj["category"])
            answer = str(obj["answer"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataError(f"{path}: record {i} violates the schema: {e}") from None
        if not 0 <= category < n_c:
            raise DataError(f"{path}: record {i} category id {category} out of range "
                            f"for {n_c} categories")
        full = os.path.join(base, feat_path)
        if full not in headers_seen:
            if not os.path.exists(full):
                raise DataError(f"{path}: record {i} references missing feature file {feat_path!r}")
            headers_seen[full] = fileio.read_feature_header(full)
        k, d_v, _, count = headers_seen[full]
        if (k, d_v) != (dims.k, dims.d_v):
            raise DataError(f"{path}: record {i} feature file declares k={k}, d_v={d_v}, "
                            f"manifest dims say k={dims.k}, d_v={dims.d_v}")
        if not 0 <= offset < count:
            raise DataError(f"{path}: record {i} feature offset {offset} dangles; "
                            f"{feat_path!r} holds {count} records")
        features = fileio.read_feature_record(full, offset)
        records.append(Record(tokens=tokens, category=category, answer=answer,
                              features=features, source=(feat_path, offset)))
    return DatasetManifest(split=header["split"], categories=categories, dims=dims,
                           records=records,
                           answer_source=header.get("answer_source", "records"))


def write_manifest(path, manifest: DatasetManifest) -> None:
    with open(path, "w", encoding="utf-8") as f:
        header = {"split": manifest.split, "categories": manifest.categories,
                  "dims": manifest.dims.to_dict(), "answer_source": manifest.answer_source}
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for i, rec in enumerate(manifest.records):
            if rec.source is None:
                raise DataError(f"record {i} has no feature file reference to persist")
            row = {"tokens": rec.tokens, "features": rec.source[0],
                   "offset": rec.source[1], "category": rec.category,
                   "answer": rec.answer}
            f.write(json.dumps(row, sort_keys=True) + "\n")


@dataclass
class SyntheticSpec:
    """Knobs for the separable synthetic dataset.

    One Gaussian prototype is drawn per (category, answer) pair in region
    feature space; each category owns a disjoint token-id band. Samples
    scatter around their prototype inside a noise ball small enough that
    nearest-prototype classification is exact, with slack set by margin.
    """

    categories: int
    answers_per_category: int
    samples_per_category: int
    dims: dict
    margin: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.categories < 1 or self.answers_per_category < 1 or self.samples_per_category < 1:
            raise DataError("category, answer, and sample counts must all be at least 1")
        if not 0.0 < self.margin <= 1.0:
            raise DataError(
                f"margin {self.margin} too small to guarantee separability given the "
                "noise scale; it must lie in (0, 1]")


@dataclass
class GenerationResult:
    manifest: DatasetManifest
    manifest_path: str
    prototypes: np.ndarray  # categories x answers x k x d_v
    token_bands: list[tuple[int, int]]


def generate_synthetic(spec: SyntheticSpec, out_dir) -> GenerationResult:
    """Write a manifest, feature file, embedding table, and vocab file.

    Deterministic per seed, down to the bytes on disk.
    """
    dims = Dims.from_dict(spec.dims)
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    n_c, n_a = spec.categories, spec.answers_per_category

    vocab_size = 1 + n_c * TOKENS_PER_CATEGORY
    emb = rng.normal(0.0, 1.0 / np.sqrt(dims.d_w), (vocab_size, dims.d_w))
    emb[0, :] = 0.0
    tokens = ["<pad>"] + [f"tok{i}" for i in range(1, vocab_size)]
    bands = [(1 + r * TOKENS_PER_CATEGORY, 1 + (r + 1) * TOKENS_PER_CATEGORY)
             for r in range(n_c)]

    protos = rng.normal(0.0, 1.0, (n_c, n_a, dims.k, dims.d_v))
    flat = protos.reshape(n_c * n_a, -1)
    diff = flat[:, None, :] - flat[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    np.fill_diagonal(dist, np.inf)
    d_min = float(dist.min())
    radius = (1.0 - spec.margin) * d_min / 2.0

    feats = np.empty((n_c * spec.samples_per_category, dims.k, dims.d_v))
    records = []
    for r in range(n_c):
        lo, hi = bands[r]
        for s in range(spec.samples_per_category):
            a = s % n_a  # answers cycle so every predictor output is covered
            direction = rng.normal(0.0, 1.0, dims.k * dims.d_v)
            direction /= np.linalg.norm(direction)
            rho = rng.uniform(0.0, radius)
            i = r * spec.samples_per_category + s
            feats[i] = protos[r, a] + (rho * direction).reshape(dims.k, dims.d_v)
            length = int(rng.integers(max(1, dims.n_w // 2), dims.n_w + 1))
            toks = rng.integers(lo, hi, size=length).tolist()
            records.append(Record(tokens=[int(t) for t in toks], category=r,
                                  answer=f"c{r}a{a}", features=feats[i],
                                  source=(FEATURES_NAME, i)))

    fileio.write_features(os.path.join(out_dir, FEATURES_NAME), feats)
    fileio.write_embeddings(os.path.join(out_dir, EMBEDDINGS_NAME), emb)
    fileio.write_vocab(os.path.join(out_dir, VOCAB_NAME), tokens)
    manifest = DatasetManifest(split="train",
                               categories=[f"cat{r}" for r in range(n_c)],
                               dims=dims, records=records)
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    write_manifest(manifest_path, manifest)
    return GenerationResult(manifest=manifest, manifest_path=manifest_path,
                            prototypes=protos, token_bands=bands)


def split(manifest: DatasetManifest, ratios: tuple[float, float],
          seed: int = 0) -> tuple[DatasetManifest, DatasetManifest]:
    """Seeded stratified split preserving per-category proportions within one
    record."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios {ratios} do not sum to 1")
    rng = np.random.default_rng(seed)
    by_cat: dict[int, list[int]] = {}
    for i, rec in enumerate(manifest.records):
        by_cat.setdefault(rec.category, []).append(i)

    first_idx: list[int] = []
    second_idx: list[int] = []
    for cat in sorted(by_cat):
        idx = by_cat[cat]
        if len(idx) < 2:
            raise DataError(f"category {cat} has {len(idx)} record(s), fewer than the 2 splits")
        order = rng.permutation(len(idx))
        take = int(np.floor(ratios[0] * len(idx) + 0.5))
        take = min(max(take, 1), len(idx) - 1)  # both splits keep the category
        first_idx.extend(idx[j] for j in order[:take])
        second_idx.extend(idx[j] for j in order[take:])

    def subset(name, picked):
        return DatasetManifest(split=name, categories=manifest.categories,
                               dims=manifest.dims,
                               records=[manifest.records[i] for i in sorted(picked)],
                               answer_source=manifest.answer_source)

    return subset("train", first_idx), subset("val", second_idx)
