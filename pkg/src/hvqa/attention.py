"""Top-down attention fusion of region and question features.

Both modalities are mapped into a shared width by single affine layers
(no hidden layer, no activation). Each region is scored against the
question through an elementwise interaction, scores are normalized with a
softmax over the regions, and the fused output is the question projection
gated by the score-weighted sum of region projections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoders import RegionFeatures
from .tensor import (
    DEFAULT_DTYPE,
    Tensor,
    add,
    broadcast_to,
    elementwise_product,
    matmul,
    parameter,
    softmax,
)


@dataclass
class FusionParams:
    """Affine region projection, affine question projection, scoring head."""

    vq_w: Tensor  # d_v x d_f
    vq_b: Tensor  # d_f
    qq_w: Tensor  # d_q x d_f
    qq_b: Tensor  # d_f
    att_w: Tensor  # d_f
    att_b: Tensor  # length-1

    @property
    def d_f(self) -> int:
        return self.vq_w.shape[1]

    @classmethod
    def create(cls, rng: np.random.Generator, d_v: int, d_q: int, d_f: int,
               dtype=DEFAULT_DTYPE) -> "FusionParams":
        def w(fan_in, shape):
            bound = 1.0 / math.sqrt(fan_in)
            return parameter(rng.uniform(-bound, bound, shape), dtype=dtype)

        return cls(
            vq_w=w(d_v, (d_v, d_f)),
            vq_b=parameter(np.zeros(d_f), dtype=dtype),
            qq_w=w(d_q, (d_q, d_f)),
            qq_b=parameter(np.zeros(d_f), dtype=dtype),
            att_w=w(d_f, (d_f,)),
            att_b=parameter(np.zeros(1), dtype=dtype),
        )

    def parameters(self) -> list[Tensor]:
        return [self.vq_w, self.vq_b, self.qq_w, self.qq_b, self.att_w, self.att_b]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        names = ("fusion.vq_w", "fusion.vq_b", "fusion.qq_w", "fusion.qq_b",
                 "fusion.att_w", "fusion.att_b")
        return list(zip(names, self.parameters()))


@dataclass
class AttentionResult:
    scores: Tensor  # length k, positive, sums to 1
    fused: Tensor   # length d_f


def project(features: RegionFeatures, f_q: Tensor, params: FusionParams) -> tuple[Tensor, Tensor]:
    """Map the k region vectors and the question vector into the fused width."""
    v = Tensor(features.features.astype(params.vq_w.dtype, copy=False))
    k = features.k
    v_tilde = add(matmul(v, params.vq_w), broadcast_to(params.vq_b, (k, params.d_f)))
    fq_tilde = add(matmul(f_q, params.qq_w), params.qq_b)
    return v_tilde, fq_tilde


def attend_and_fuse(v_tilde: Tensor, fq_tilde: Tensor, params: FusionParams) -> AttentionResult:
    """Score each region against the question and fuse.

    u_i is the elementwise product of a projected region with the projected
    question; the scoring head maps each u_i to a raw score, the softmax
    over regions normalizes them, and the fused vector is the projected
    question times the score-weighted region sum.
    """
    k = v_tilde.shape[0]
    if k == 0:
        raise ValueError("attention needs at least one region")
    u = elementwise_product(v_tilde, broadcast_to(fq_tilde, (k, params.d_f)))
    z = add(matmul(u, params.att_w), broadcast_to(params.att_b, (k,)))
    scores = softmax(z)
    weighted = matmul(scores, v_tilde)
    fused = elementwise_product(fq_tilde, weighted)
    return AttentionResult(scores=scores, fused=fused)
