"""FastAPI service wrapping the numeric core.

Every compute surface of the toolkit is an endpoint; the CLI is a thin
client of this app (in-process by default, over TCP with --server).
Domain validation errors surface as HTTP 400 with the library's own
message, so remote callers see the same text local callers do.
"""

from __future__ import annotations

import base64

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..bench import DEFAULT_SIZE, run_bench
from ..cwd import CwdConfig, cwd_backward, cwd_loss, logit_kd_loss
from ..demo import DemoScenario, render_attention_pgms, run_demo
from ..deteval import (
    AP50_95_THRESHOLDS,
    AP50_THRESHOLDS,
    Box,
    Detection,
    EvalConfig,
    GroundTruthBox,
    evaluate,
)
from ..gradcheck import run_gradcheck
from ..mgd import MgdConfig, grads_blob, load_checkpoint, mgd_backward, mgd_loss, save_checkpoint
from ..stats import SeedRunSet, StatisticError, paired_t_test, summarize, wilcoxon_signed_rank
from ..tensor import ConvLayer, Rng, Tensor4, sample_mask, ten1_bytes, tensor_from_ten1
from . import schemas as sc

__all__ = ["app", "create_app"]


def _b64_tensor(payload: str, field: str) -> Tensor4:
    try:
        return tensor_from_ten1(base64.b64decode(payload))
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=f"{field}: {exc}") from None


def _tensor_b64(t: Tensor4) -> str:
    return base64.b64encode(ten1_bytes(t)).decode("ascii")


def _align_layer(params: sc.AlignParams | None) -> ConvLayer | None:
    if params is None:
        return None
    weight = _b64_tensor(params.weight, "align.weight")
    return ConvLayer(weight.data, np.asarray(params.bias, dtype=np.float32))


def create_app() -> FastAPI:
    app = FastAPI(title="distillkit", version=__version__)

    @app.get("/healthz", response_model=sc.HealthResponse)
    def healthz() -> sc.HealthResponse:
        return sc.HealthResponse(status="ok", version=__version__)

    @app.post("/cwd/loss", response_model=sc.CwdLossResponse, response_model_exclude_none=True)
    def cwd_loss_endpoint(req: sc.CwdLossRequest) -> sc.CwdLossResponse:
        teacher = _b64_tensor(req.teacher, "teacher")
        student = _b64_tensor(req.student, "student")
        try:
            cfg = CwdConfig(
                temperature=req.temperature,
                feature_weight=req.feature_weight,
                align=_align_layer(req.align),
            )
            if req.include_grad:
                loss, per_channel, grad, align_grad = cwd_backward(teacher, student, cfg)
                g64 = _tensor_b64(grad)
                ag = None
                if align_grad is not None:
                    ag = sc.AlignGrads(
                        weight=_tensor_b64(Tensor4(align_grad.weight)),
                        bias=[float(v) for v in align_grad.bias],
                    )
                return sc.CwdLossResponse(loss=loss, per_channel=[float(v) for v in per_channel], grad=g64, align_grad=ag)
            loss, per_channel = cwd_loss(teacher, student, cfg)
            return sc.CwdLossResponse(loss=loss, per_channel=[float(v) for v in per_channel])
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None

    @app.post("/cwd/logit-loss", response_model=sc.LogitKdResponse)
    def logit_loss_endpoint(req: sc.LogitKdRequest) -> sc.LogitKdResponse:
        try:
            return sc.LogitKdResponse(loss=logit_kd_loss(req.teacher_logits, req.student_logits, req.temperature))
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None

    @app.post("/mgd/init", response_model=sc.MgdParamsResponse)
    def mgd_init_endpoint(req: sc.MgdInitRequest) -> sc.MgdParamsResponse:
        try:
            cfg = MgdConfig.create(
                Rng(req.seed), req.teacher_channels, req.student_channels, req.mask_ratio, req.loss_weight
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        manifest, blob = save_checkpoint(cfg)
        return sc.MgdParamsResponse(manifest=manifest, blob=base64.b64encode(blob).decode("ascii"))

    @app.post("/mgd/loss", response_model=sc.MgdLossResponse, response_model_exclude_none=True)
    def mgd_loss_endpoint(req: sc.MgdLossRequest) -> sc.MgdLossResponse:
        teacher = _b64_tensor(req.teacher, "teacher")
        student = _b64_tensor(req.student, "student")
        try:
            cfg = load_checkpoint(
                req.params_manifest, base64.b64decode(req.params_blob), req.mask_ratio, req.loss_weight
            )
            mask = sample_mask(Rng(req.mask_seed), (teacher.h, teacher.w), req.mask_ratio)
            loss = mgd_loss(teacher, student, mask, cfg)
            if not req.include_grads:
                return sc.MgdLossResponse(loss=loss)
            manifest, blob = grads_blob(mgd_backward(teacher, student, mask, cfg))
            return sc.MgdLossResponse(
                loss=loss, grads_manifest=manifest, grads_blob=base64.b64encode(blob).decode("ascii")
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None

    @app.post("/eval", response_model=sc.EvalResponse)
    def eval_endpoint(req: sc.EvalRequest) -> sc.EvalResponse:
        try:
            dets = [
                Detection(d.image_id, d.class_id, Box(*d.bbox), d.score) for d in req.detections
            ]
            gts = [GroundTruthBox(g.image_id, g.class_id, Box(*g.bbox)) for g in req.ground_truth]
            thresholds = AP50_THRESHOLDS if req.iou_set == "ap50" else AP50_95_THRESHOLDS
            cfg = EvalConfig(
                iou_thresholds=thresholds,
                excluded_class_ids=frozenset(req.excluded_class_ids),
                score_threshold=req.score_threshold,
            )
            result = evaluate(dets, gts, cfg)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        return sc.EvalResponse(**result.to_dict())

    @app.post("/gradcheck", response_model=sc.GradCheckResponse)
    def gradcheck_endpoint(req: sc.GradCheckRequest) -> sc.GradCheckResponse:
        try:
            report = run_gradcheck(
                req.module,
                req.trials,
                req.seed,
                tolerance=req.tolerance,
                corrupt_scale=req.corrupt_scale,
                temperature=req.temperature,
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        return sc.GradCheckResponse(**report.to_dict())

    @app.post("/sweep", response_model=sc.SweepResponse)
    def sweep_endpoint(req: sc.SweepRequest) -> sc.SweepResponse:
        try:
            return run_sweep(req)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None

    @app.post("/bench", response_model=sc.BenchResponse)
    def bench_endpoint(req: sc.BenchRequest) -> sc.BenchResponse:
        try:
            size = tuple(req.size) if req.size else DEFAULT_SIZE
            result = run_bench(req.op, req.warmup, req.runs, size=size, boxes=req.boxes, seed=req.seed)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        return sc.BenchResponse(**result.to_dict())

    @app.post("/demo", response_model=sc.DemoResponse)
    def demo_endpoint(req: sc.DemoRequest) -> sc.DemoResponse:
        try:
            scn = DemoScenario(**req.model_dump())
            report = run_demo(scn)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        pgms = {name: base64.b64encode(blob).decode("ascii") for name, blob in render_attention_pgms(report).items()}
        return sc.DemoResponse(
            summary=sc.DemoSummary(**report.summary()), trajectory=report.losses, pgms=pgms
        )

    @app.post("/stats", response_model=sc.StatsResponse, response_model_exclude_none=True)
    def stats_endpoint(req: sc.StatsRequest) -> sc.StatsResponse:
        try:
            return run_stats(req)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None

    return app


def run_sweep(req: sc.SweepRequest) -> sc.SweepResponse:
    """Demo-loss sweep over one hyperparameter, with paired tests vs the baseline.

    cwd sweeps the softmax temperature; mgd sweeps the distillation weight,
    which enters training as a gradient multiplier relative to the first
    (baseline) parameter value.  The per-seed metric is the final/initial
    loss ratio of the demo trajectory.
    """
    baseline_param = req.params[0]
    base_lr = req.lr if req.lr is not None else (1.0 if req.method == "cwd" else 1e-3)
    rows: list[sc.SweepRow] = []
    for param in req.params:
        if req.method == "cwd":
            if param <= 0:
                raise ValueError("cwd sweep parameters are temperatures and must be positive")
            scenarios = [
                DemoScenario(seed=s, method="cwd", steps=req.steps, lr=base_lr, temperature=param)
                for s in req.seeds
            ]
        else:
            if param <= 0 or baseline_param <= 0:
                raise ValueError("mgd sweep parameters are loss weights and must be positive")
            lr = base_lr * (param / baseline_param)
            scenarios = [DemoScenario(seed=s, method="mgd", steps=req.steps, lr=lr) for s in req.seeds]
        values = []
        for scn in scenarios:
            report = run_demo(scn)
            values.append(float("nan") if report.diverged else report.loss_ratio)
        runset = SeedRunSet(label=f"{req.method}={param:g}", values=values)
        mean, std = summarize(runset)
        rows.append(sc.SweepRow(param=param, mean=mean, std=std, values=values))

    tests: list[sc.SweepTest] = []
    baseline = SeedRunSet(label="baseline", values=rows[0].values)
    for row in rows[1:]:
        candidate = SeedRunSet(label=f"{row.param:g}", values=row.values)
        test = sc.SweepTest(param=row.param)
        try:
            t, p_t, df = paired_t_test(candidate, baseline)
            test.t, test.p_t, test.df = t, p_t, df
        except StatisticError as exc:
            test.note = str(exc)
        try:
            w, p_w = wilcoxon_signed_rank(candidate, baseline)
            test.w, test.p_w = w, p_w
        except StatisticError as exc:
            test.note = (test.note + "; " if test.note else "") + str(exc)
        tests.append(test)
    return sc.SweepResponse(
        method=req.method,
        metric="final/initial loss ratio",
        baseline_param=baseline_param,
        rows=rows,
        tests=tests,
    )


def run_stats(req: sc.StatsRequest) -> sc.StatsResponse:
    runsets = [SeedRunSet(label=r.label, values=r.values) for r in req.runs]
    by_label = {r.label: r for r in runsets}
    if len(by_label) != len(runsets):
        raise ValueError("duplicate run labels")
    summaries = []
    for r in runsets:
        mean, std = summarize(r)
        summaries.append(sc.StatsSummary(label=r.label, n=len(r), mean=mean, std=std))
    baseline_label = req.baseline_label or runsets[0].label
    if baseline_label not in by_label:
        raise ValueError(f"unknown baseline label {baseline_label!r}")
    baseline = by_label[baseline_label]
    comparisons = []
    for r in runsets:
        if r.label == baseline_label:
            continue
        comp = sc.StatsComparison(label=r.label, baseline=baseline_label)
        try:
            comp.t, comp.p_t, comp.df = paired_t_test(r, baseline)
        except (StatisticError, ValueError) as exc:
            comp.note = str(exc)
        try:
            comp.w, comp.p_w = wilcoxon_signed_rank(r, baseline)
        except (StatisticError, ValueError) as exc:
            comp.note = (comp.note + "; " if comp.note else "") + str(exc)
        comparisons.append(comp)
    return sc.StatsResponse(summaries=summaries, comparisons=comparisons)


app = create_app()
