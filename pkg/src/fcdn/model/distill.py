"""Layer-wise feature distillation between a teacher and a student
transformer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import nn
from ..autodiff import tensor as T
from .deit import VitOutput


class DistillError(ValueError):
    pass


@dataclass
class DistillOutput:
    l_cls: T.Tensor
    sims: np.ndarray
    q: np.ndarray
    similarity_term: T.Tensor
    l_distill: T.Tensor

    def __post_init__(self):
        if not np.isfinite(float(self.l_distill.data)):
            raise FloatingPointError("non-finite distillation loss")


class Projector(nn.Module):
    """One linear map per layer from teacher width to student width.
    Equal widths start from the identity."""

    def __init__(self, teacher_dim, student_dim, depth, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.maps = []
        for _ in range(depth):
            lin = nn.Linear(teacher_dim, student_dim, bias=False, rng=rng)
            if teacher_dim == student_dim:
                lin.weight.data = np.eye(student_dim, dtype=lin.weight.data.dtype)
            self.maps.append(lin)

    def forward(self, i, x):
        return self.maps[i](x)


def attention_mass(attn, n_prefix: int):
    """Mean attention weight the class token puts on patch tokens (a
    scalar tensor, differentiable through the attention weights)."""
    attn = T.as_tensor(attn)
    return T.mean(T.tsum(attn[:, :, 0, n_prefix:], axis=-1))


def distillation_loss(student: VitOutput, teacher: VitOutput | None, labels,
                      projector: Projector | None = None, alpha=1.0, beta=0.5) -> DistillOutput:
    """alpha * CE(class head) + beta * sum_i (1 - cos(P_i T_i, S_i)) q_i.

    ``T_i``/``S_i`` are the patch-token states after block ``i`` (flattened
    per sample, cosine averaged over the batch). ``q_i`` is the student's
    class-token attention mass on patches at layer ``i``, normalized over
    layers; gradients flow through it. Teacher states are constants.
    """
    if teacher is None:
        raise DistillError("distillation needs a teacher output")
    n = len(student.hidden)
    if len(teacher.hidden) != n or n == 0:
        raise DistillError(f"layer mismatch: student {n}, teacher {len(teacher.hidden)}")
    l_cls = T.cross_entropy(student.logits_cls, labels)
    mass = [attention_mass(a, student.n_prefix) for a in student.attentions]
    total = mass[0]
    for m in mass[1:]:
        total = total + m
    if float(total.data) <= 0:
        raise DistillError("student attention puts no mass on patch tokens")
    q = [m / total for m in mass]
    sims = np.zeros(n)
    term = None
    for i in range(n):
        s = student.hidden[i][:, student.n_prefix:]
        t = T.Tensor(teacher.hidden[i].data[:, teacher.n_prefix:])
        if projector is not None:
            t = projector(i, t)
        elif t.shape[-1] != s.shape[-1]:
            raise DistillError("teacher width differs from student width and no projector given")
        if t.shape[:2] != s.shape[:2]:
            raise DistillError(f"token mismatch at layer {i}: {t.shape} vs {s.shape}")
        b = s.shape[0]
        cos = T.cosine_similarity(s.reshape(b, -1), t.reshape(b, -1), axis=-1)
        d = T.mean(1.0 - cos)
        sims[i] = float(d.data)
        term = d * q[i] if term is None else term + d * q[i]
    l_distill = l_cls * float(alpha) + term * float(beta)
    q_values = np.array([float(v.data) for v in q])
    return DistillOutput(l_cls, sims, q_values, term, l_distill)
