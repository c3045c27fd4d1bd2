"""Pydantic request/response models for the HTTP service.

Tensors travel as base64-encoded TEN1 blobs so float32 payloads survive
the JSON boundary bit-exactly; scalar losses are float64 JSON numbers,
which round-trip exactly as well.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class AlignParams(BaseModel):
    """1x1 alignment convolution: weight as TEN1 b64, bias as a float list."""

    weight: str
    bias: list[float]


class CwdLossRequest(BaseModel):
    teacher: str = Field(description="TEN1 tensor, base64")
    student: str = Field(description="TEN1 tensor, base64")
    temperature: float = 2.0
    feature_weight: float = 50.0
    include_grad: bool = False
    align: Optional[AlignParams] = None


class AlignGrads(BaseModel):
    weight: str
    bias: list[float]


class CwdLossResponse(BaseModel):
    loss: float
    per_channel: list[float]
    grad: Optional[str] = None
    align_grad: Optional[AlignGrads] = None


class LogitKdRequest(BaseModel):
    teacher_logits: list[float]
    student_logits: list[float]
    temperature: float = 2.0


class LogitKdResponse(BaseModel):
    loss: float


class MgdInitRequest(BaseModel):
    seed: int = 0
    teacher_channels: int
    student_channels: int
    mask_ratio: float = 0.5
    loss_weight: float = 2e-5


class MgdParamsResponse(BaseModel):
    manifest: str
    blob: str


class MgdLossRequest(BaseModel):
    teacher: str
    student: str
    mask_seed: int
    mask_ratio: float = 0.5
    loss_weight: float = 2e-5
    params_manifest: str
    params_blob: str
    include_grads: bool = False


class MgdLossResponse(BaseModel):
    loss: float
    grads_manifest: Optional[str] = None
    grads_blob: Optional[str] = None


class BoxModel(BaseModel):
    x: float
    y: float
    w: float
    h: float


class DetectionModel(BaseModel):
    image_id: str
    class_id: int
    bbox: list[float] = Field(min_length=4, max_length=4)
    score: float


class GroundTruthModel(BaseModel):
    image_id: str
    class_id: int
    bbox: list[float] = Field(min_length=4, max_length=4)


class EvalRequest(BaseModel):
    detections: list[DetectionModel]
    ground_truth: list[GroundTruthModel]
    excluded_class_ids: list[int] = Field(default_factory=list)
    iou_set: Literal["ap50", "ap5095"] = "ap5095"
    score_threshold: float = 0.0


class ClassMetrics(BaseModel):
    precision: float
    recall: float
    ap50: float
    ap50_95: float
    counts: dict[str, dict[str, int]]


class EvalResponse(BaseModel):
    map50: float
    map50_95: float
    included_class_ids: list[int]
    per_class: dict[str, ClassMetrics]


class GradCheckRequest(BaseModel):
    module: Literal["conv", "cwd", "mgd"]
    trials: int = 20
    seed: int = 0
    tolerance: float = 1e-3
    corrupt_scale: float = 0.0
    temperature: Optional[float] = None


class GradCheckBlock(BaseModel):
    trial: int
    block: str
    rel_error: float


class GradCheckResponse(BaseModel):
    module: str
    trials: int
    tolerance: float
    max_rel_error: float
    passed: bool
    blocks: list[GradCheckBlock]


class SweepRequest(BaseModel):
    method: Literal["cwd", "mgd"]
    params: list[float] = Field(min_length=1)
    seeds: list[int] = Field(min_length=2)
    steps: int = 100
    lr: Optional[float] = None


class SweepRow(BaseModel):
    param: float
    mean: float
    std: float
    values: list[float]


class SweepTest(BaseModel):
    param: float
    t: Optional[float] = None
    p_t: Optional[float] = None
    df: Optional[int] = None
    w: Optional[float] = None
    p_w: Optional[float] = None
    note: Optional[str] = None


class SweepResponse(BaseModel):
    method: str
    metric: str
    baseline_param: float
    rows: list[SweepRow]
    tests: list[SweepTest]


class BenchRequest(BaseModel):
    op: Literal["cwd", "mgd", "eval"]
    warmup: int = 2
    runs: int = 10
    size: Optional[list[int]] = Field(default=None, min_length=4, max_length=4)
    boxes: int = 1000
    seed: int = 0


class BenchResponse(BaseModel):
    op: str
    warmup: int
    runs: int
    mean_ms: float
    std_ms: float
    p50_ms: float
    p95_ms: float
    times_ms: list[float]


class DemoRequest(BaseModel):
    seed: int = 0
    n: int = 1
    c_teacher: int = 4
    c_student: int = 4
    h: int = 8
    w: int = 8
    method: Literal["cwd", "mgd"] = "mgd"
    steps: int = 200
    lr: float = 1e-3
    temperature: float = 2.0
    mask_ratio: float = 0.5
    noise_scale: float = 0.1


class DemoSummary(BaseModel):
    method: str
    initial_loss: float
    final_loss: float
    loss_ratio: float
    diverged: bool
    steps_run: int
    wall_time_s: float
    attention_l1_before: Optional[float] = None
    attention_l1_after: Optional[float] = None


class DemoResponse(BaseModel):
    summary: DemoSummary
    trajectory: list[float]
    pgms: dict[str, str]


class StatsRun(BaseModel):
    label: str
    values: list[float] = Field(min_length=2)


class StatsRequest(BaseModel):
    runs: list[StatsRun] = Field(min_length=1)
    baseline_label: Optional[str] = None


class StatsSummary(BaseModel):
    label: str
    n: int
    mean: float
    std: float


class StatsComparison(BaseModel):
    label: str
    baseline: str
    t: Optional[float] = None
    p_t: Optional[float] = None
    df: Optional[int] = None
    w: Optional[float] = None
    p_w: Optional[float] = None
    note: Optional[str] = None


class StatsResponse(BaseModel):
    summaries: list[StatsSummary]
    comparisons: list[StatsComparison]


def load_schema(name: str) -> dict:
    """Load one of the shipped JSON schemas (e.g. 'eval_report')."""
    import json
    from importlib import resources

    with resources.files("distillkit.schemas").joinpath(f"{name}.json").open("r") as fh:
        return json.load(fh)
