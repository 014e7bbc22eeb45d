"""Adamax updates, the step-decay schedule, and the training loop."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import TEACHER_FORCED
from .tensor import NumericError, Tape, Tensor, add, scale

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class Adamax:
    """Infinity-norm Adam variant.

    m <- b1*m + (1-b1)*g ; u <- max(b2*u, |g|) ; p <- p - lr/(1-b1^t) * m/(u+eps)
    """

    def __init__(self, params: list[Tensor], beta1: float = BETA1,
                 beta2: float = BETA2, eps: float = EPS):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._u = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        for p in self.params:
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NumericError("NaN/Inf gradient; optimizer step aborted")
        self.t += 1
        corr = 1.0 - self.beta1 ** self.t
        for p, m, u in zip(self.params, self._m, self._u):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            np.maximum(self.beta2 * u, np.abs(g), out=u)
            p.data -= (lr / corr) * m / (u + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def lr_at(epoch: int, lr0: float = 0.002, decay: float = 0.1, period: int = 5) -> float:
    """Step-decayed learning rate: lr0 * decay^(epoch // period), epoch 0-based."""
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    return lr0 * decay ** (epoch // period)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    loss: float
    loss_q: float | None
    loss_aa: float | None
    miss_rate: float | None
    category_accuracy: float | None
    answer_accuracy: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch, "lr": self.lr, "loss": self.loss,
            "loss_q": self.loss_q, "loss_aa": self.loss_aa,
            "miss_rate": self.miss_rate,
            "category_accuracy": self.category_accuracy,
            "answer_accuracy": self.answer_accuracy,
        }


def train(model, records, *, epochs: int, batch_size: int,
          lr0: float = 0.002, decay: float = 0.1, period: int = 5,
          seed: int = 0, mode: str = TEACHER_FORCED,
          log_fn=None) -> list[EpochLog]:
    """End-to-end training over all trainable parameters.

    Each epoch reshuffles with the seeded generator; each batch runs one
    tape: per-sample forward, mean loss, backward, one Adamax step, zero
    grads. The final partial batch is kept. Single-threaded and
    deterministic for a fixed seed.
    """
    records = list(records)
    if not records:
        raise ValueError("training set is empty")
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch size must be positive")
    rng = np.random.default_rng(seed)
    opt = Adamax(model.parameters())
    history: list[EpochLog] = []

    for epoch in range(epochs):
        lr = lr_at(epoch, lr0, decay, period)
        order = rng.permutation(len(records))
        n = len(records)
        sum_loss = sum_lq = sum_laa = 0.0
        n_lq = misses = n_missable = 0
        cat_hits = ans_hits = n_cat = 0

        for b, start in enumerate(range(0, n, batch_size)):
            idx = order[start:start + batch_size]
            try:
                with Tape() as tape:
                    batch_loss = None
                    for i in idx:
                        loss, st = model.sample_loss(records[int(i)], mode)
                        batch_loss = loss if batch_loss is None else add(batch_loss, loss)
                        sum_loss += loss.item()
                        if st.loss_q is not None:
                            sum_lq += st.loss_q
                            sum_laa += st.loss_aa
                            n_lq += 1
                        if st.missed is not None:
                            n_missable += 1
                            misses += st.missed
                        if st.category_correct is not None:
                            cat_hits += st.category_correct
                            n_cat += 1
                        ans_hits += st.answer_correct
                    tape.backward(scale(batch_loss, 1.0 / len(idx)))
            except NumericError as e:
                raise NumericError(f"training diverged at epoch {epoch}, batch {b}: {e}") from e
            opt.step(lr)
            opt.zero_grad()

        log = EpochLog(
            epoch=epoch, lr=lr, loss=sum_loss / n,
            loss_q=sum_lq / n_lq if n_lq else None,
            loss_aa=sum_laa / n_lq if n_lq else None,
            miss_rate=misses / n_missable if n_missable else None,
            category_accuracy=cat_hits / n_cat if n_cat else None,
            answer_accuracy=ans_hits / n,
        )
        history.append(log)
        if log_fn is not None:
            log_fn(log.to_dict())
    return history


def write_jsonl_line(f, payload: dict) -> None:
    f.write(json.dumps(payload, sort_keys=True) + "\n")
    f.flush()
