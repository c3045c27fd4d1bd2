"""Desk-scale distillation demos on synthetic features.

A fixed "teacher" feature map is synthesized from coarse seeded noise
(bilinearly upsampled, channel-mixed, scale-normalized: smooth enough
that masked cells are recoverable from their neighbours), a "student" is
derived from it, and either the student activations are trained against
the channel-wise KL loss or a generative projector is trained against
the masked reconstruction loss.  Runs are deterministic given the seed;
a diverging run is reported with a flag rather than raised.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cwd import CwdConfig, cwd_backward
from .mgd import MgdConfig, mgd_train_step
from .tensor import ConvLayer, ConvLayerGrads, Rng, Tensor4, spatial_softmax

__all__ = [
    "DemoScenario",
    "TrajectoryReport",
    "run_demo",
    "attention_map",
    "attention_l1",
    "pgm_bytes",
    "write_outputs",
    "synth_teacher",
    "derive_student",
]

FEATURE_RMS = 0.33


def _upsample_bilinear(z: np.ndarray, factor: int) -> np.ndarray:
    n, c, h, w = z.shape
    ys = (np.arange(h * factor) + 0.5) / factor - 0.5
    xs = (np.arange(w * factor) + 0.5) / factor - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[None, None, :, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, None, None, :]
    a = z[:, :, y0][:, :, :, x0]
    b = z[:, :, y0][:, :, :, x1]
    c_ = z[:, :, y1][:, :, :, x0]
    d = z[:, :, y1][:, :, :, x1]
    return a * (1 - wy) * (1 - wx) + b * (1 - wy) * wx + c_ * wy * (1 - wx) + d * wy * wx


def synth_teacher(rng: Rng, n: int, c: int, h: int, w: int, rms: float = FEATURE_RMS) -> Tensor4:
    """Smooth synthetic feature map: coarse noise, upsampled and channel-mixed."""
    coarse = 2
    if h % coarse or w % coarse:
        raise ValueError("demo dims must be multiples of 2")
    z = rng.uniform_signed(n * c * coarse * coarse).reshape(n, c, coarse, coarse)
    z = _upsample_bilinear(z, h // coarse)
    mix = rng.uniform_signed(c * c).reshape(c, c)
    z = np.einsum("ncij,dc->ndij", z, mix, optimize=False)
    z = z / math.sqrt(float((z**2).mean())) * rms
    return Tensor4(z)


def derive_student(rng: Rng, teacher: Tensor4, c_student: int, noise_scale: float = 0.1) -> Tensor4:
    """Student features correlated with the teacher, plus seeded noise.

    When the channel counts differ the teacher channels are blended by a
    fixed random matrix first (so the alignment layer has real work to do).
    """
    t64 = teacher.astype64()
    if c_student != teacher.c:
        blend = rng.uniform_signed(c_student * teacher.c).reshape(c_student, teacher.c)
        t64 = np.einsum("ncij,dc->ndij", t64, blend, optimize=False)
        t64 = t64 / math.sqrt(float((t64**2).mean())) * FEATURE_RMS
    noise = rng.uniform_signed(t64.size).reshape(t64.shape) * (noise_scale * FEATURE_RMS)
    return Tensor4(t64 + noise)


@dataclass
class DemoScenario:
    """One reproducible demo run."""

    seed: int = 0
    n: int = 1
    c_teacher: int = 4
    c_student: int = 4
    h: int = 8
    w: int = 8
    method: str = "mgd"
    steps: int = 200
    lr: float = 1e-3
    temperature: float = 2.0
    mask_ratio: float = 0.5
    noise_scale: float = 0.1

    def __post_init__(self):
        if self.method not in ("cwd", "mgd"):
            raise ValueError("method must be 'cwd' or 'mgd'")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.c_student > self.c_teacher:
            raise ValueError("student channel count must not exceed the teacher's")
        if not (np.isfinite(self.lr) and self.lr >= 0):
            raise ValueError("lr must be a non-negative real")

    @classmethod
    def mgd_fixture(cls) -> "DemoScenario":
        """The pinned convergence fixture: 1x4x4x8x8, 200 steps, lr 1e-3."""
        return cls(seed=0, method="mgd")


@dataclass
class TrajectoryReport:
    method: str
    losses: list[float]
    initial_loss: float
    final_loss: float
    loss_ratio: float
    diverged: bool
    steps_run: int
    wall_time_s: float
    attention_l1_before: Optional[float] = None
    attention_l1_after: Optional[float] = None
    maps: dict = field(default_factory=dict, repr=False)  # name -> Tensor4, for PGM output

    def trajectory_lines(self) -> list[str]:
        """Deterministic JSON-lines serialization of the loss trajectory."""
        return [json.dumps({"step": i, "loss": v}) for i, v in enumerate(self.losses)]

    def summary(self) -> dict:
        return {
            "method": self.method,
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "loss_ratio": self.loss_ratio,
            "diverged": self.diverged,
            "steps_run": self.steps_run,
            "wall_time_s": self.wall_time_s,
            "attention_l1_before": self.attention_l1_before,
            "attention_l1_after": self.attention_l1_after,
        }


def attention_map(x: Tensor4, temperature: float) -> Tensor4:
    """Per-channel normalized spatial attention (softmax over cells)."""
    return spatial_softmax(x, temperature)


def attention_l1(a: Tensor4, b: Tensor4) -> float:
    return float(np.abs(a.astype64() - b.astype64()).mean())


def _run_cwd(scn: DemoScenario, teacher: Tensor4, student: Tensor4, rng: Rng):
    align = None
    if scn.c_student != scn.c_teacher:
        align = ConvLayer.init_uniform(rng.split(2), scn.c_teacher, scn.c_student, 1)
    cfg = CwdConfig(temperature=scn.temperature, align=align)
    losses: list[float] = []
    diverged = False
    for _ in range(scn.steps):
        try:
            loss, _, grad, grad_align = cwd_backward(teacher, student, cfg)
        except ValueError:
            diverged = True
            break
        if not math.isfinite(loss):
            diverged = True
            break
        losses.append(loss)
        if scn.lr:
            student = Tensor4(student.astype64() - scn.lr * grad.astype64())
            if align is not None and grad_align is not None:
                _apply_sgd(align, grad_align, scn.lr)
    return losses, diverged, student


def _apply_sgd(layer: ConvLayer, grads: ConvLayerGrads, lr: float) -> None:
    with np.errstate(over="ignore", invalid="ignore"):
        layer.weight -= (lr * grads.weight.astype(np.float64)).astype(np.float32)
        layer.bias -= (lr * grads.bias.astype(np.float64)).astype(np.float32)


def _run_mgd(scn: DemoScenario, teacher: Tensor4, student: Tensor4, rng: Rng):
    cfg = MgdConfig.create(rng.split(2), scn.c_teacher, scn.c_student, mask_ratio=scn.mask_ratio)
    mask_rng = rng.split(3)
    losses: list[float] = []
    diverged = False
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(scn.steps):
            try:
                loss = mgd_train_step(teacher, student, cfg, mask_rng, scn.lr)
            except ValueError:
                diverged = True
                break
            if not math.isfinite(loss):
                diverged = True
                break
            losses.append(loss)
    return losses, diverged, student


def run_demo(scn: DemoScenario) -> TrajectoryReport:
    """Run a scenario and collect its loss trajectory and attention maps."""
    start = time.perf_counter()
    rng = Rng(scn.seed)
    teacher = synth_teacher(rng.split(0), scn.n, scn.c_teacher, scn.h, scn.w)
    student0 = derive_student(rng.split(1), teacher, scn.c_student, scn.noise_scale)

    if scn.method == "cwd":
        losses, diverged, student = _run_cwd(scn, teacher, student0, rng)
    else:
        losses, diverged, student = _run_mgd(scn, teacher, student0, rng)

    wall = time.perf_counter() - start
    initial = losses[0] if losses else float("nan")
    final = losses[-1] if losses else float("nan")
    ratio = final / initial if losses and initial else float("nan")

    report = TrajectoryReport(
        method=scn.method,
        losses=losses,
        initial_loss=initial,
        final_loss=final,
        loss_ratio=ratio,
        diverged=diverged,
        steps_run=len(losses),
        wall_time_s=wall,
    )
    if not diverged and losses:
        t_att = attention_map(teacher, scn.temperature)
        report.maps["teacher"] = t_att
        if scn.method == "cwd" and scn.c_student == scn.c_teacher:
            before = attention_map(student0, scn.temperature)
            after = attention_map(student, scn.temperature)
            report.maps["student_before"] = before
            report.maps["student_after"] = after
            report.attention_l1_before = attention_l1(before, t_att)
            report.attention_l1_after = attention_l1(after, t_att)
        else:
            report.maps["student"] = attention_map(student, scn.temperature)
    return report


# ---------------------------------------------------------------------------
# PGM rendering (binary P5, one image per channel, max-normalized).
# ---------------------------------------------------------------------------

def pgm_bytes(plane: np.ndarray) -> bytes:
    if plane.ndim != 2:
        raise ValueError("PGM rendering expects a 2-D plane")
    vmax = float(plane.max())
    scaled = np.zeros_like(plane, dtype=np.float64) if vmax <= 0 else plane / vmax * 255.0
    pixels = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    header = f"P5\n{plane.shape[1]} {plane.shape[0]}\n255\n".encode()
    return header + pixels.tobytes()


def render_attention_pgms(report: TrajectoryReport) -> dict[str, bytes]:
    """name -> PGM bytes for every channel of every recorded map (batch 0)."""
    out: dict[str, bytes] = {}
    for name, tensor in report.maps.items():
        for ch in range(tensor.c):
            out[f"{name}_att_c{ch}.pgm"] = pgm_bytes(tensor.data[0, ch].astype(np.float64))
    return out


def write_outputs(report: TrajectoryReport, outdir: str) -> list[str]:
    """Write trajectory.jsonl, summary.json and attention PGMs; return paths."""
    os.makedirs(outdir, exist_ok=True)
    written = []
    traj = os.path.join(outdir, "trajectory.jsonl")
    with open(traj, "w", encoding="utf-8") as fh:
        for line in report.trajectory_lines():
            fh.write(line + "\n")
    written.append(traj)
    summary = os.path.join(outdir, "summary.json")
    with open(summary, "w", encoding="utf-8") as fh:
        json.dump(report.summary(), fh, indent=2)
        fh.write("\n")
    written.append(summary)
    for name, blob in render_attention_pgms(report).items():
        path = os.path.join(outdir, name)
        with open(path, "wb") as fh:
            fh.write(blob)
        written.append(path)
    return written
