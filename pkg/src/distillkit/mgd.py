"""Masked generative distillation loss.

The student's feature map is multiplied by a random binary spatial mask
(shared across channels), aligned to the teacher's channel count with an
optional 1x1 convolution, and pushed through a two-stage 3x3 conv
projector with a ReLU in between.  The loss is the raw sum of squared
differences between the teacher features and the projector output; the
small weight in the combined objective absorbs the scale of that sum.

Backward passes are hand-derived chain rules through the square, the two
convolutions, the ReLU (subgradient 0 at 0) and the mask product.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import (
    ConvLayer,
    ConvLayerGrads,
    Rng,
    Tensor4,
    _conv2d,
    _conv2d_backward,
    sample_mask,
    save_ten1,
    tensor_from_ten1,
)

__all__ = [
    "MgdConfig",
    "MgdGradients",
    "mgd_loss",
    "mgd_backward",
    "mgd_total",
    "mgd_train_step",
    "save_checkpoint",
    "load_checkpoint",
    "pack_tensors",
    "unpack_tensors",
    "grads_blob",
]


@dataclass
class MgdConfig:
    """Masked generative distillation settings.

    mask_ratio: probability that a spatial cell of the student map is zeroed.
    loss_weight: multiplier on the reconstruction loss in the combined
        objective (the loss itself is an unnormalized sum, hence the 1e-5
        scale of useful weights).
    align: optional 1x1 convolution mapping student channels to teacher
        channels; required exactly when the counts differ.
    projector: two channel-preserving 3x3 convolutions applied to the
        masked, aligned student features with a ReLU in between.
    """

    projector: tuple[ConvLayer, ConvLayer]
    mask_ratio: float = 0.5
    loss_weight: float = 2e-5
    align: Optional[ConvLayer] = None

    def __post_init__(self):
        if not (np.isfinite(self.mask_ratio) and 0.0 <= self.mask_ratio <= 1.0):
            raise ValueError("mask_ratio must lie in [0, 1]")
        if not (np.isfinite(self.loss_weight) and self.loss_weight >= 0):
            raise ValueError("loss_weight must be non-negative")
        p1, p2 = self.projector
        if p1.kernel_size != 3 or p2.kernel_size != 3:
            raise ValueError("projector stages must be 3x3 convolutions")
        if not (p1.in_channels == p1.out_channels == p2.in_channels == p2.out_channels):
            raise ValueError("projector stages must preserve a single channel count")
        if self.align is not None:
            if self.align.kernel_size != 1:
                raise ValueError("alignment layer must be a 1x1 convolution")
            if self.align.out_channels != p1.in_channels:
                raise ValueError("alignment output channels must match the projector")

    @property
    def channels(self) -> int:
        return self.projector[0].in_channels

    @classmethod
    def create(
        cls,
        rng: Rng,
        teacher_channels: int,
        student_channels: int,
        mask_ratio: float = 0.5,
        loss_weight: float = 2e-5,
    ) -> "MgdConfig":
        """Fresh config with uniformly initialized projector (and alignment
        layer when the channel counts differ)."""
        align = None
        if student_channels != teacher_channels:
            align = ConvLayer.init_uniform(rng.split(1), teacher_channels, student_channels, 1)
        p1 = ConvLayer.init_uniform(rng.split(2), teacher_channels, teacher_channels, 3)
        p2 = ConvLayer.init_uniform(rng.split(3), teacher_channels, teacher_channels, 3)
        return cls(projector=(p1, p2), mask_ratio=mask_ratio, loss_weight=loss_weight, align=align)


@dataclass
class MgdGradients:
    """Gradient blocks whose shapes mirror their parameters exactly."""

    grad_student: Tensor4
    grad_projector: tuple[ConvLayerGrads, ConvLayerGrads]
    grad_align: Optional[ConvLayerGrads] = None


def _check_mask(mask: Tensor4, teacher: Tensor4) -> np.ndarray:
    if mask.c != 1:
        raise ValueError("mask must have a single channel (it broadcasts across channels)")
    if (mask.h, mask.w) != (teacher.h, teacher.w):
        raise ValueError(f"mask spatial dims {(mask.h, mask.w)} do not match features {(teacher.h, teacher.w)}")
    if mask.n not in (1, teacher.n):
        raise ValueError("mask batch dim must be 1 or match the features")
    m = mask.astype64()
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("mask values must be exactly 0 or 1")
    return m


def _forward_parts(teacher: Tensor4, student: Tensor4, mask: Tensor4, cfg: MgdConfig):
    if teacher.c != cfg.channels:
        raise ValueError(f"teacher has {teacher.c} channels but projector expects {cfg.channels}")
    if (student.n, student.h, student.w) != (teacher.n, teacher.h, teacher.w):
        raise ValueError(f"teacher dims {teacher.dims} and student dims {student.dims} disagree")
    if cfg.align is None:
        if student.c != teacher.c:
            raise ValueError(
                f"student has {student.c} channels, teacher has {teacher.c}: an alignment layer is required"
            )
        aligned = student.astype64()
    else:
        if cfg.align.in_channels != student.c:
            raise ValueError(
                f"alignment layer expects {cfg.align.in_channels} input channels, student has {student.c}"
            )
        aligned = _conv2d(student.astype64(), cfg.align.weight.astype(np.float64), cfg.align.bias.astype(np.float64))
    m = _check_mask(mask, teacher)
    p1, p2 = cfg.projector
    masked = aligned * m
    z1 = _conv2d(masked, p1.weight.astype(np.float64), p1.bias.astype(np.float64))
    r = np.maximum(z1, 0.0)
    z2 = _conv2d(r, p2.weight.astype(np.float64), p2.bias.astype(np.float64))
    resid = z2 - teacher.astype64()
    return aligned, m, masked, z1, r, resid


def mgd_loss(teacher: Tensor4, student: Tensor4, mask: Tensor4, cfg: MgdConfig) -> float:
    """Sum of squared reconstruction errors against the teacher features."""
    resid = _forward_parts(teacher, student, mask, cfg)[-1]
    return float(np.sum(resid * resid))


def mgd_backward(teacher: Tensor4, student: Tensor4, mask: Tensor4, cfg: MgdConfig) -> MgdGradients:
    """Gradients of mgd_loss for the student, projector and alignment layer."""
    aligned, m, masked, z1, r, resid = _forward_parts(teacher, student, mask, cfg)
    p1, p2 = cfg.projector
    g_z2 = 2.0 * resid
    g_r, gw2, gb2 = _conv2d_backward(r, p2.weight.astype(np.float64), g_z2)
    g_z1 = g_r * (z1 > 0.0)
    g_masked, gw1, gb1 = _conv2d_backward(masked, p1.weight.astype(np.float64), g_z1)
    g_aligned = g_masked * m
    grads2 = ConvLayerGrads(gw2.astype(np.float32), gb2.astype(np.float32))
    grads1 = ConvLayerGrads(gw1.astype(np.float32), gb1.astype(np.float32))
    if cfg.align is None:
        return MgdGradients(Tensor4(g_aligned), (grads1, grads2), None)
    gx, gwa, gba = _conv2d_backward(student.astype64(), cfg.align.weight.astype(np.float64), g_aligned)
    return MgdGradients(
        Tensor4(gx), (grads1, grads2), ConvLayerGrads(gwa.astype(np.float32), gba.astype(np.float32))
    )


def mgd_total(task_loss: float, mgd_loss_value: float, cfg: MgdConfig) -> float:
    """Combined objective: task loss plus weighted reconstruction loss."""
    if not (np.isfinite(task_loss) and np.isfinite(mgd_loss_value)):
        raise ValueError("losses must be finite")
    return float(task_loss + cfg.loss_weight * mgd_loss_value)


def _sgd_update(layer: ConvLayer, grads: ConvLayerGrads, lr: float) -> None:
    layer.weight -= (lr * grads.weight.astype(np.float64)).astype(np.float32)
    layer.bias -= (lr * grads.bias.astype(np.float64)).astype(np.float32)


def mgd_train_step(teacher: Tensor4, student: Tensor4, cfg: MgdConfig, rng: Rng, lr: float) -> float:
    """One SGD step on the alignment and projector parameters.

    Samples a fresh mask from ``rng``, updates cfg's layers in place
    (single writer) and returns the loss measured before the update.
    """
    if not (np.isfinite(lr) and lr > 0) and lr != 0.0:
        raise ValueError("learning rate must be a non-negative real")
    mask = sample_mask(rng, (teacher.h, teacher.w), cfg.mask_ratio)
    loss = mgd_loss(teacher, student, mask, cfg)
    if lr == 0.0:
        return loss
    grads = mgd_backward(teacher, student, mask, cfg)
    _sgd_update(cfg.projector[0], grads.grad_projector[0], lr)
    _sgd_update(cfg.projector[1], grads.grad_projector[1], lr)
    if cfg.align is not None and grads.grad_align is not None:
        _sgd_update(cfg.align, grads.grad_align, lr)
    return loss


# ---------------------------------------------------------------------------
# Parameter checkpoints: TEN1 tensors concatenated in manifest order.  The
# manifest is plain text, one "name role" line per tensor; biases are stored
# as (1, c, 1, 1) tensors since TEN1 is always rank 4.
# ---------------------------------------------------------------------------

def _layer_entries(name: str, layer: ConvLayer):
    w = layer.weight.astype(np.float32)
    b = layer.bias.astype(np.float32).reshape(1, -1, 1, 1)
    return [(f"{name}.weight", "conv_weight", Tensor4(w)), (f"{name}.bias", "conv_bias", Tensor4(b))]


def pack_tensors(entries: list[tuple[str, str, Tensor4]]) -> tuple[str, bytes]:
    """(manifest text, concatenated TEN1 blob) for named tensors."""
    manifest_lines = []
    buf = io.BytesIO()
    for name, role, tensor in entries:
        manifest_lines.append(f"{name} {role}")
        save_ten1(tensor, buf)
    return "\n".join(manifest_lines) + "\n", buf.getvalue()


def save_checkpoint(cfg: MgdConfig) -> tuple[str, bytes]:
    """Serialize parameters to (manifest text, concatenated TEN1 blob)."""
    entries = []
    if cfg.align is not None:
        entries += _layer_entries("align", cfg.align)
    entries += _layer_entries("projector1", cfg.projector[0])
    entries += _layer_entries("projector2", cfg.projector[1])
    return pack_tensors(entries)


def grads_blob(grads: MgdGradients) -> tuple[str, bytes]:
    """Serialize a gradient set in the checkpoint wire format."""
    entries = [("student.grad", "feature_grad", grads.grad_student)]
    if grads.grad_align is not None:
        g = grads.grad_align
        entries.append(("align.weight.grad", "conv_weight", Tensor4(g.weight)))
        entries.append(("align.bias.grad", "conv_bias", Tensor4(g.bias.reshape(1, -1, 1, 1))))
    for i, g in enumerate(grads.grad_projector, start=1):
        entries.append((f"projector{i}.weight.grad", "conv_weight", Tensor4(g.weight)))
        entries.append((f"projector{i}.bias.grad", "conv_bias", Tensor4(g.bias.reshape(1, -1, 1, 1))))
    return pack_tensors(entries)


def unpack_tensors(manifest: str, blob: bytes) -> dict[str, Tensor4]:
    names = []
    for line in manifest.strip().splitlines():
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"malformed manifest line: {line!r}")
        names.append(parts[0])
    tensors: dict[str, Tensor4] = {}
    offset = 0
    for name in names:
        if offset + 24 > len(blob):
            raise ValueError("checkpoint blob shorter than manifest promises")
        rank, n, c, h, w = struct.unpack("<5I", blob[offset + 4 : offset + 24])
        size = 24 + 4 * n * c * h * w
        tensors[name] = tensor_from_ten1(blob[offset : offset + size])
        offset += size
    if offset != len(blob):
        raise ValueError("checkpoint blob longer than manifest promises")
    return tensors


def load_checkpoint(
    manifest: str, blob: bytes, mask_ratio: float = 0.5, loss_weight: float = 2e-5
) -> MgdConfig:
    """Rebuild an MgdConfig from its checkpoint serialization."""
    tensors = unpack_tensors(manifest, blob)

    def layer(name: str) -> ConvLayer:
        try:
            w = tensors[f"{name}.weight"].data
            b = tensors[f"{name}.bias"].data
        except KeyError as exc:
            raise ValueError(f"checkpoint is missing tensor {exc.args[0]}") from None
        return ConvLayer(np.array(w), np.array(b).reshape(-1))

    align = layer("align") if "align.weight" in tensors else None
    return MgdConfig(
        projector=(layer("projector1"), layer("projector2")),
        mask_ratio=mask_ratio,
        loss_weight=loss_weight,
        align=align,
    )
