"""Finite-difference validation of the analytic gradients.

Central differences at h = 1e-3; the divisor is the actually realized
float32 parameter step, which removes storage-rounding bias.  Agreement
is measured as a norm-relative error per gradient block.  A non-zero
``corrupt_scale`` deliberately skews the analytic gradients (negative
control for the harness itself).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .cwd import CwdConfig, cwd_backward, cwd_loss
from .mgd import MgdConfig, mgd_backward, mgd_loss
from .tensor import ConvLayer, Rng, Tensor4, conv2d_backward, conv2d_forward, sample_mask

__all__ = ["GradCheckReport", "run_gradcheck", "finite_diff", "rel_error"]

DEFAULT_TOLERANCE = 1e-3
FD_STEP = 1e-3
# Pre-activations this close to zero get the instance regenerated: a bias
# perturbation shifts every pre-activation by the full FD step and a weight
# perturbation by up to ~9x it, so the guard must exceed FD_STEP by a
# comfortable factor or central differences straddle the ReLU kink.
RELU_KINK_GUARD = 2e-2


def finite_diff(loss_fn: Callable[[np.ndarray], float], values32: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of ``loss_fn`` over a float32 array."""
    base = np.ascontiguousarray(values32, dtype=np.float32)
    grad = np.zeros(base.shape, dtype=np.float64)
    flat = base.ravel()
    for i in range(flat.size):
        up = flat.copy()
        down = flat.copy()
        up[i] = np.float32(float(flat[i]) + h)
        down[i] = np.float32(float(flat[i]) - h)
        h_eff = float(up[i]) - float(down[i])
        grad.ravel()[i] = (loss_fn(up.reshape(base.shape)) - loss_fn(down.reshape(base.shape))) / h_eff
    return grad


def rel_error(analytic: np.ndarray, estimate: np.ndarray) -> float:
    na = float(np.linalg.norm(np.asarray(analytic, dtype=np.float64).ravel()))
    ne = float(np.linalg.norm(np.asarray(estimate, dtype=np.float64).ravel()))
    diff = float(np.linalg.norm(np.asarray(analytic, dtype=np.float64).ravel() - np.asarray(estimate, dtype=np.float64).ravel()))
    denom = max(na, ne, 1e-12)
    return diff / denom


@dataclass
class BlockCheck:
    trial: int
    block: str
    rel_error: float


@dataclass
class GradCheckReport:
    module: str
    trials: int
    tolerance: float
    max_rel_error: float
    passed: bool
    checks: list[BlockCheck] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "module": self.module,
            "trials": self.trials,
            "tolerance": self.tolerance,
            "max_rel_error": self.max_rel_error,
            "passed": self.passed,
            "blocks": [
                {"trial": c.trial, "block": c.block, "rel_error": c.rel_error} for c in self.checks
            ],
        }


def _rand_tensor(rng: Rng, n: int, c: int, h: int, w: int, scale: float = 1.0) -> Tensor4:
    return Tensor4(rng.uniform_signed(n * c * h * w).reshape(n, c, h, w) * scale)


def _check_conv(rng: Rng, trial: int, corrupt: float, checks: list[BlockCheck]) -> None:
    for k in (1, 3):
        sub = rng.split(trial * 2 + k)
        layer = ConvLayer.init_uniform(sub.split(0), 3, 2, k)
        x = _rand_tensor(sub.split(1), 2, 2, 4, 4)
        probe = _rand_tensor(sub.split(2), 2, 3, 4, 4)

        grad_x, grad_layer = conv2d_backward(x, layer, probe)
        gx = grad_x.astype64() * (1.0 + corrupt)
        gw = grad_layer.weight.astype(np.float64) * (1.0 + corrupt)
        gb = grad_layer.bias.astype(np.float64) * (1.0 + corrupt)

        def loss_x(vals):
            return float(np.sum(conv2d_forward(Tensor4(vals), layer).astype64() * probe.astype64()))

        def loss_w(vals):
            return float(np.sum(conv2d_forward(x, ConvLayer(vals, layer.bias)).astype64() * probe.astype64()))

        def loss_b(vals):
            return float(np.sum(conv2d_forward(x, ConvLayer(layer.weight, vals)).astype64() * probe.astype64()))

        checks.append(BlockCheck(trial, f"conv{k}x{k}.input", rel_error(gx, finite_diff(loss_x, x.data))))
        checks.append(BlockCheck(trial, f"conv{k}x{k}.weight", rel_error(gw, finite_diff(loss_w, layer.weight))))
        checks.append(BlockCheck(trial, f"conv{k}x{k}.bias", rel_error(gb, finite_diff(loss_b, layer.bias))))


def _check_cwd(rng: Rng, trial: int, corrupt: float, checks: list[BlockCheck], temperature: Optional[float]) -> None:
    sub = rng.split(trial)
    temp = temperature if temperature is not None else float(1 + trial % 4)
    with_align = temperature is None and trial % 3 == 2
    teacher = _rand_tensor(sub.split(0), 2, 4, 5, 5)
    if with_align:
        student = _rand_tensor(sub.split(1), 2, 3, 5, 5)
        align = ConvLayer.init_uniform(sub.split(2), 4, 3, 1)
        cfg = CwdConfig(temperature=temp, align=align)
    else:
        student = _rand_tensor(sub.split(1), 2, 4, 5, 5)
        cfg = CwdConfig(temperature=temp)

    _, _, grad_student, grad_align = cwd_backward(teacher, student, cfg)
    gs = grad_student.astype64() * (1.0 + corrupt)

    def loss_s(vals):
        return cwd_loss(teacher, Tensor4(vals), cfg)[0]

    checks.append(BlockCheck(trial, f"cwd(T={temp:g}).student", rel_error(gs, finite_diff(loss_s, student.data))))
    if with_align and grad_align is not None:
        gaw = grad_align.weight.astype(np.float64) * (1.0 + corrupt)

        def loss_aw(vals):
            cfg2 = CwdConfig(temperature=temp, align=ConvLayer(vals, cfg.align.bias))
            return cwd_loss(teacher, student, cfg2)[0]

        checks.append(BlockCheck(trial, f"cwd(T={temp:g}).align.weight", rel_error(gaw, finite_diff(loss_aw, cfg.align.weight))))


def _mgd_instance(rng: Rng, trial: int):
    """Random MGD instance regenerated until pre-activations avoid the ReLU kink."""
    for attempt in range(300):
        sub = rng.split(trial * 512 + attempt)
        with_align = trial % 3 == 2
        c_t, c_s = (3, 2) if with_align else (2, 2)
        teacher = _rand_tensor(sub.split(0), 1, c_t, 4, 4, scale=3.0)
        student = _rand_tensor(sub.split(1), 1, c_s, 4, 4, scale=3.0)
        cfg = MgdConfig.create(sub.split(2), c_t, c_s, mask_ratio=0.5)
        mask = sample_mask(sub.split(3), (4, 4), 0.5)
        from .mgd import _forward_parts

        z1 = _forward_parts(teacher, student, mask, cfg)[3]
        if np.abs(z1).min() > RELU_KINK_GUARD:
            return teacher, student, mask, cfg
    raise RuntimeError("could not find a kink-free MGD instance")


def _check_mgd(rng: Rng, trial: int, corrupt: float, checks: list[BlockCheck]) -> None:
    teacher, student, mask, cfg = _mgd_instance(rng, trial)
    grads = mgd_backward(teacher, student, mask, cfg)
    scale = 1.0 + corrupt

    def loss_student(vals):
        return mgd_loss(teacher, Tensor4(vals), mask, cfg)

    checks.append(
        BlockCheck(trial, "mgd.student", rel_error(grads.grad_student.astype64() * scale, finite_diff(loss_student, student.data)))
    )

    p1, p2 = cfg.projector

    def swap_projector(stage: int, weight=None, bias=None) -> MgdConfig:
        layers = [p1.copy(), p2.copy()]
        if weight is not None:
            layers[stage] = ConvLayer(weight, layers[stage].bias)
        if bias is not None:
            layers[stage] = ConvLayer(layers[stage].weight, bias)
        return MgdConfig(projector=(layers[0], layers[1]), mask_ratio=cfg.mask_ratio, loss_weight=cfg.loss_weight, align=cfg.align)

    for stage, layer in ((0, p1), (1, p2)):
        def loss_w(vals, stage=stage):
            return mgd_loss(teacher, student, mask, swap_projector(stage, weight=vals))

        def loss_b(vals, stage=stage):
            return mgd_loss(teacher, student, mask, swap_projector(stage, bias=vals))

        gw = grads.grad_projector[stage].weight.astype(np.float64) * scale
        gb = grads.grad_projector[stage].bias.astype(np.float64) * scale
        checks.append(BlockCheck(trial, f"mgd.projector{stage + 1}.weight", rel_error(gw, finite_diff(loss_w, layer.weight))))
        checks.append(BlockCheck(trial, f"mgd.projector{stage + 1}.bias", rel_error(gb, finite_diff(loss_b, layer.bias))))

    if cfg.align is not None and grads.grad_align is not None:
        def loss_aw(vals):
            cfg2 = MgdConfig(projector=cfg.projector, mask_ratio=cfg.mask_ratio, loss_weight=cfg.loss_weight, align=ConvLayer(vals, cfg.align.bias))
            return mgd_loss(teacher, student, mask, cfg2)

        gaw = grads.grad_align.weight.astype(np.float64) * scale
        checks.append(BlockCheck(trial, "mgd.align.weight", rel_error(gaw, finite_diff(loss_aw, cfg.align.weight))))


def run_gradcheck(
    module: str,
    trials: int,
    seed: int,
    tolerance: float = DEFAULT_TOLERANCE,
    corrupt_scale: float = 0.0,
    temperature: Optional[float] = None,
) -> GradCheckReport:
    """Run finite-difference checks; passes iff every block beats the tolerance."""
    if module not in ("conv", "cwd", "mgd"):
        raise ValueError("module must be one of conv, cwd, mgd")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = Rng(seed)
    checks: list[BlockCheck] = []
    for trial in range(trials):
        if module == "conv":
            _check_conv(rng, trial, corrupt_scale, checks)
        elif module == "cwd":
            _check_cwd(rng, trial, corrupt_scale, checks, temperature)
        else:
            _check_mgd(rng, trial, corrupt_scale, checks)
    worst = max(c.rel_error for c in checks)
    return GradCheckReport(module, trials, tolerance, worst, worst < tolerance, checks)
