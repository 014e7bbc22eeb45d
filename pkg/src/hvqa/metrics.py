"""Evaluation: per-category accuracy tables and the three summary metrics.

Overall accuracy micro-averages over samples; the two mean-per-type
metrics average per-category accuracies, arithmetically and harmonically.
The harmonic mean punishes any weak category and is defined as 0 when a
category scores 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass
class CategoryScore:
    name: str
    count: int
    correct: int

    @property
    def accuracy(self) -> float:
        """Percentage correct; 0 for an empty category."""
        return 100.0 * self.correct / self.count if self.count else 0.0


@dataclass
class EvalReport:
    categories: list[CategoryScore]
    overall: float
    arithmetic_mpt: float
    harmonic_mpt: float
    category_accuracy: float | None = None  # level-1 classifier, hierarchical only
    routing_miss_rate: float | None = None

    def to_dict(self) -> dict:
        return {
            "categories": [
                {"name": c.name, "count": c.count, "correct": c.correct,
                 "accuracy": round(c.accuracy, 2)}
                for c in self.categories
            ],
            "overall": round(self.overall, 2),
            "arithmetic_mpt": round(self.arithmetic_mpt, 2),
            "harmonic_mpt": round(self.harmonic_mpt, 2),
            "category_accuracy": None if self.category_accuracy is None
            else round(self.category_accuracy, 2),
            "routing_miss_rate": None if self.routing_miss_rate is None
            else round(self.routing_miss_rate, 4),
        }

    def format_table(self) -> str:
        """Aligned text table: category, count, accuracy, then the three
        aggregate footer rows."""
        width = max([len("category")] + [len(c.name) for c in self.categories])
        lines = [f"{'category':<{width}}  {'count':>7}  {'accuracy':>8}"]
        for c in self.categories:
            lines.append(f"{c.name:<{width}}  {c.count:>7}  {round(c.accuracy, 2):>8.2f}")
        lines.append("-" * (width + 19))
        for label, value in (("Overall", self.overall),
                             ("Arithmetic-MPT", self.arithmetic_mpt),
                             ("Harmonic-MPT", self.harmonic_mpt)):
            lines.append(f"{label:<{width}}  {'':>7}  {round(value, 2):>8.2f}")
        return "\n".join(lines)


def overall_accuracy(scores: list[CategoryScore]) -> float:
    """Micro-averaged percentage: total correct over total count.

    Args:
        scores: per-category counts.

    Returns:
        Percentage in [0, 100].
    """
    total = sum(c.count for c in scores)
    if total == 0:
        raise ValueError("overall accuracy of an empty evaluation set is undefined")
    return 100.0 * sum(c.correct for c in scores) / total


def arithmetic_mpt(accuracies) -> float:
    """Unweighted mean of per-category accuracy percentages."""
    accs = list(accuracies)
    if not accs:
        raise ValueError("arithmetic mean per type needs at least one category")
    return float(np.mean(accs))


def harmonic_mpt(accuracies) -> float:
    """Harmonic mean of per-category accuracy percentages; 0 if any is 0."""
    accs = list(accuracies)
    if not accs:
        raise ValueError("harmonic mean per type needs at least one category")
    if min(accs) <= 0.0:
        return 0.0
    return len(accs) / sum(1.0 / a for a in accs)


def evaluate(model, records) -> EvalReport:
    """Score a model over records with the full inference path.

    A sample counts as correct iff the predicted global answer string
    equals the ground truth string. Ground-truth answers missing from the
    model's answer space are counted incorrect and warned about once each.
    The per-category table buckets by ground-truth category; the level-1
    accuracy and routing-miss fields apply to hierarchical models only.
    """
    records = list(records)
    if not records:
        raise ValueError("evaluation set is empty")
    names = model.space.category_names
    scores = [CategoryScore(name=n, count=0, correct=0) for n in names]
    hierarchical = hasattr(model, "categorizer")
    cat_hits = 0
    misses = 0
    unknown_warned: set[str] = set()

    for rec in records:
        if not 0 <= rec.category < len(scores):
            raise ValueError(f"record category {rec.category} out of range for "
                             f"{len(scores)} categories")
        if rec.answer not in model.space.global_index and rec.answer not in unknown_warned:
            unknown_warned.add(rec.answer)
            warnings.warn(f"ground-truth answer {rec.answer!r} is outside the model's "
                          "answer space; such samples count as incorrect")
        pred = model.predict(rec)
        scores[rec.category].count += 1
        scores[rec.category].correct += pred.answer == rec.answer
        if hierarchical:
            cat_hits += pred.category == rec.category
            gid = model.space.global_index.get(rec.answer)
            misses += gid is None or model.space.local_index(pred.category, rec.answer) is None

    accs = [c.accuracy for c in scores]
    return EvalReport(
        categories=scores,
        overall=overall_accuracy(scores),
        arithmetic_mpt=arithmetic_mpt(accs),
        harmonic_mpt=harmonic_mpt(accs),
        category_accuracy=100.0 * cat_hits / len(records) if hierarchical else None,
        routing_miss_rate=misses / len(records) if hierarchical else None,
    )
