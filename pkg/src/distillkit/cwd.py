"""Channel-wise knowledge distillation loss.

Each feature channel's spatial activations are turned into a probability
distribution with a temperature-scaled softmax; the loss is the KL
divergence from the student's distribution to the teacher's, summed over
channels and scaled by temperature squared.  When student and teacher
channel counts differ, a learnable 1x1 convolution aligns the student
first.  Gradients are hand-derived: with respect to the aligned student
activations the gradient is simply T * (softmax(student) - softmax(teacher)).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import (
    ConvLayer,
    ConvLayerGrads,
    Tensor4,
    _conv2d,
    _conv2d_backward,
    _spatial_softmax64,
)

__all__ = ["CwdConfig", "cwd_loss", "cwd_grad_student", "cwd_backward", "cwd_total", "logit_kd_loss"]

# Probabilities are clamped here before any log to keep KL finite.
PROB_FLOOR = 1e-12


@dataclass
class CwdConfig:
    """Channel-wise distillation settings.

    temperature: softmax sharpness (higher flattens the attention maps).
    feature_weight: multiplier on the feature loss in the combined objective.
    logit_weight: multiplier on the optional softened-logit term (0 disables).
    align: 1x1 convolution applied to the student when its channel count
        differs from the teacher's; must be absent when counts match.
    """

    temperature: float
    feature_weight: float = 50.0
    logit_weight: float = 3.0
    align: Optional[ConvLayer] = None

    def __post_init__(self):
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ValueError("temperature must be a positive real")
        if not (np.isfinite(self.feature_weight) and self.feature_weight >= 0):
            raise ValueError("feature_weight must be non-negative")
        if not (np.isfinite(self.logit_weight) and self.logit_weight >= 0):
            raise ValueError("logit_weight must be non-negative")
        if self.align is not None and self.align.kernel_size != 1:
            raise ValueError("alignment layer must be a 1x1 convolution")


def _aligned_student64(teacher: Tensor4, student: Tensor4, cfg: CwdConfig) -> np.ndarray:
    if (student.n, student.h, student.w) != (teacher.n, teacher.h, teacher.w):
        raise ValueError(f"teacher dims {teacher.dims} and student dims {student.dims} disagree")
    if cfg.align is None:
        if student.c != teacher.c:
            raise ValueError(
                f"student has {student.c} channels, teacher has {teacher.c}: an alignment layer is required"
            )
        return student.astype64()
    if student.c == teacher.c:
        raise ValueError("alignment layer present but channel counts already match")
    if cfg.align.in_channels != student.c or cfg.align.out_channels != teacher.c:
        raise ValueError(
            f"alignment layer maps {cfg.align.in_channels}->{cfg.align.out_channels} channels, "
            f"need {student.c}->{teacher.c}"
        )
    return _conv2d(student.astype64(), cfg.align.weight.astype(np.float64), cfg.align.bias.astype(np.float64))


def _kl_per_channel(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """sum_n sum_i p log(p/q) per channel, probabilities clamped below."""
    pc = np.maximum(p, PROB_FLOOR)
    qc = np.maximum(q, PROB_FLOOR)
    terms = pc * (np.log(pc) - np.log(qc))
    return terms.sum(axis=(0, 2, 3))


def cwd_loss(teacher: Tensor4, student: Tensor4, cfg: CwdConfig) -> tuple[float, np.ndarray]:
    """Channel-wise KL loss and its per-channel breakdown.

    Returns ``(loss, per_channel)`` where ``loss`` equals
    ``temperature**2 * per_channel.sum()``.
    """
    s64 = _aligned_student64(teacher, student, cfg)
    p = _spatial_softmax64(teacher.astype64(), cfg.temperature)
    q = _spatial_softmax64(s64, cfg.temperature)
    per_channel = _kl_per_channel(p, q)
    loss = float(cfg.temperature**2 * per_channel.sum())
    return loss, per_channel


def cwd_backward(
    teacher: Tensor4, student: Tensor4, cfg: CwdConfig
) -> tuple[float, np.ndarray, Tensor4, Optional[ConvLayerGrads]]:
    """Loss, per-channel terms and gradients for the student (and alignment).

    Returns ``(loss, per_channel, grad_student, grad_align)``;
    ``grad_align`` is None when no alignment layer is configured.
    """
    s64 = _aligned_student64(teacher, student, cfg)
    p = _spatial_softmax64(teacher.astype64(), cfg.temperature)
    q = _spatial_softmax64(s64, cfg.temperature)
    per_channel = _kl_per_channel(p, q)
    loss = float(cfg.temperature**2 * per_channel.sum())
    # d(loss)/d(aligned student): one 1/T from the softmax Jacobian cancels
    # against the T^2 prefactor.
    g_aligned = cfg.temperature * (q - p)
    if cfg.align is None:
        return loss, per_channel, Tensor4(g_aligned), None
    gx, gw, gb = _conv2d_backward(
        student.astype64(), cfg.align.weight.astype(np.float64), g_aligned
    )
    return loss, per_channel, Tensor4(gx), ConvLayerGrads(gw.astype(np.float32), gb.astype(np.float32))


def cwd_grad_student(teacher: Tensor4, student: Tensor4, cfg: CwdConfig) -> Tensor4:
    """Gradient of cwd_loss with respect to the raw student activations."""
    return cwd_backward(teacher, student, cfg)[2]


def cwd_total(task_loss: float, feature_loss: float, cfg: CwdConfig) -> float:
    """Combined objective: task loss plus weighted feature-distillation loss."""
    if not (np.isfinite(task_loss) and np.isfinite(feature_loss)):
        raise ValueError("losses must be finite")
    return float(task_loss + cfg.feature_weight * feature_loss)


def logit_kd_loss(teacher_logits, student_logits, temperature: float) -> float:
    """Softened-logit KL distillation term, scaled by temperature squared.

    Zero exactly when both logit vectors induce the same softened
    distribution.  This is the optional companion to the feature loss;
    a zero logit_weight in the combined objective disables it.
    """
    if not (np.isfinite(temperature) and temperature > 0):
        raise ValueError("temperature must be a positive real")
    t = np.asarray(teacher_logits, dtype=np.float64).ravel()
    s = np.asarray(student_logits, dtype=np.float64).ravel()
    if t.shape != s.shape or t.size == 0:
        raise ValueError("logit vectors must share a non-zero length")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(s))):
        raise ValueError("logits must be finite")

    def soften(v: np.ndarray) -> np.ndarray:
        z = v / temperature
        z = z - z.max()
        e = np.exp(z)
        return e / e.sum()

    p = np.maximum(soften(t), PROB_FLOOR)
    q = np.maximum(soften(s), PROB_FLOOR)
    return float(temperature**2 * np.sum(p * (np.log(p) - np.log(q))))
