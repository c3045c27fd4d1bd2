"""Distillation loss kernels, detection metrics and seed-sweep statistics."""

from .tensor import ConvLayer, ConvLayerGrads, Rng, Tensor4, conv2d_backward, conv2d_forward, sample_mask, spatial_softmax
from .cwd import CwdConfig, cwd_backward, cwd_grad_student, cwd_loss, cwd_total, logit_kd_loss
from .mgd import MgdConfig, MgdGradients, mgd_backward, mgd_loss, mgd_total, mgd_train_step
from .deteval import (
    Box,
    Detection,
    EvalConfig,
    EvalResult,
    GroundTruthBox,
    average_precision,
    evaluate,
    iou,
    match_detections,
    pr_curve,
)
from .stats import SeedRunSet, StatisticError, paired_t_test, summarize, wilcoxon_signed_rank

__version__ = "0.1.0"
