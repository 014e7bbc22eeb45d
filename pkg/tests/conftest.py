"""Shared toy fixtures: a two-category model at gradient-check scale
(d_w=4, d_q=3, d_f=4, k=3, answer subsets of sizes 2 and 3)."""

import numpy as np
import pytest

from hvqa.data import Record
from hvqa.encoders import EmbeddingTable
from hvqa.model import HierarchicalModel, FlatModel, build_answer_space

TOY = dict(d_w=4, d_q=3, d_f=4, k=3, d_v=5, n_w=3, n_c=2)


def toy_records(rng, n=8, k=TOY["k"], d_v=TOY["d_v"], n_w=TOY["n_w"]):
    answers = [["a", "b"], ["c", "d", "e"]]
    records = []
    for i in range(n):
        cat = i % 2
        records.append(Record(
            tokens=[int(t) for t in rng.integers(1, 9, size=n_w)],
            category=cat,
            answer=answers[cat][(i // 2) % len(answers[cat])],
            features=rng.normal(size=(k, d_v)),
        ))
    return records


def toy_table(rng, vocab=10, dtype=np.float64):
    return EmbeddingTable(rng.normal(size=(vocab, TOY["d_w"])).astype(dtype))


@pytest.fixture
def toy():
    rng = np.random.default_rng(42)
    records = toy_records(rng)
    table = toy_table(rng)
    space = build_answer_space(records, ["cat0", "cat1"])
    model = HierarchicalModel.build(
        np.random.default_rng(7), space, table,
        d_v=TOY["d_v"], d_q=TOY["d_q"], d_f=TOY["d_f"], n_w=TOY["n_w"],
        dtype=np.float64)
    return model, records, table, space


@pytest.fixture
def toy_flat():
    rng = np.random.default_rng(43)
    records = toy_records(rng)
    table = toy_table(rng)
    space = build_answer_space(records, ["cat0", "cat1"])
    model = FlatModel.build(
        np.random.default_rng(7), space, table,
        d_v=TOY["d_v"], d_q=TOY["d_q"], d_f=TOY["d_f"], n_w=TOY["n_w"],
        dtype=np.float64)
    return model, records, table, space
