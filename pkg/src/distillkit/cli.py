"""Command-line client for the distillkit service.

Subcommands marshal local files (TEN1 tensors, JSONL detections, CSV
metrics) into requests against the HTTP API — in-process by default,
remote with --server — and write responses back to local files.

Exit codes: 0 success, 1 validation error (bad flags or inputs),
2 runtime failure (including a failed gradient check).
"""

from __future__ import annotations

import argparse
import base64
import csv
import json
import os
import sys
from typing import Optional

import httpx

__all__ = ["main", "build_parser"]


class CliError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with the validation code (1), not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def make_client(server: Optional[str]) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app)


def call(client: httpx.Client, method: str, path: str, **kwargs) -> dict:
    try:
        response = client.request(method, path, **kwargs)
    except httpx.HTTPError as exc:
        raise CliError(f"service request failed: {exc}", code=2) from None
    if response.status_code >= 500:
        raise CliError(f"service error {response.status_code}: {response.text}", code=2)
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise CliError(f"{detail}", code=1)
    return response.json()


def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None


def _tensor_b64_from_file(path: str) -> str:
    from .tensor import tensor_from_ten1

    blob = _read_bytes(path)
    try:
        tensor_from_ten1(blob)  # validate before shipping
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from None
    return base64.b64encode(blob).decode("ascii")


def _emit(report: dict, out: Optional[str]) -> None:
    text = json.dumps(report, indent=2)
    print(text)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _parse_int_list(raw: str, flag: str) -> list[int]:
    if not raw.strip():
        return []
    try:
        return [int(tok) for tok in raw.split(",")]
    except ValueError:
        raise CliError(f"{flag} expects a comma-separated integer list, got {raw!r}") from None


def _parse_float_list(raw: str, flag: str) -> list[float]:
    try:
        return [float(tok) for tok in raw.split(",")]
    except ValueError:
        raise CliError(f"{flag} expects a comma-separated number list, got {raw!r}") from None


# ---------------------------------------------------------------------------
# Subcommand handlers.
# ---------------------------------------------------------------------------

def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("distillkit.service:app", host=args.host, port=args.port, log_level="info")
    return 0


def cmd_eval(args, client: httpx.Client) -> int:
    from .deteval import parse_detections_jsonl, parse_ground_truth_jsonl

    try:
        dets = parse_detections_jsonl(_read_text(args.det))
        gts = parse_ground_truth_jsonl(_read_text(args.gt))
    except ValueError as exc:
        raise CliError(str(exc)) from None
    class_names = None
    if args.class_names:
        try:
            class_names = json.loads(_read_text(args.class_names))
        except ValueError as exc:
            raise CliError(f"{args.class_names}: invalid JSON ({exc})") from None
    request = {
        "detections": [
            {"image_id": d.image_id, "class_id": d.class_id, "bbox": [d.box.x, d.box.y, d.box.w, d.box.h], "score": d.score}
            for d in dets
        ],
        "ground_truth": [
            {"image_id": g.image_id, "class_id": g.class_id, "bbox": [g.box.x, g.box.y, g.box.w, g.box.h]}
            for g in gts
        ],
        "excluded_class_ids": _parse_int_list(args.exclude_classes, "--exclude-classes"),
        "iou_set": args.iou_set,
        "score_threshold": args.score_threshold,
    }
    report = call(client, "POST", "/eval", json=request)
    if class_names:
        for cid, entry in report["per_class"].items():
            entry["name"] = class_names.get(cid)
    _emit(report, args.out)
    return 0


def cmd_loss(args, client: httpx.Client) -> int:
    teacher = _tensor_b64_from_file(args.teacher)
    student = _tensor_b64_from_file(args.student)
    if args.method == "cwd":
        request = {
            "teacher": teacher,
            "student": student,
            "temperature": args.temperature,
            "feature_weight": args.feature_weight,
            "include_grad": args.grad,
        }
        report = call(client, "POST", "/cwd/loss", json=request)
        if args.grad and args.grad_out:
            with open(args.grad_out, "wb") as fh:
                fh.write(base64.b64decode(report.pop("grad")))
            report["grad_file"] = args.grad_out
        _emit(report, args.out)
        return 0
    if args.params:
        manifest = _read_text(args.params + ".manifest")
        blob = _read_bytes(args.params + ".params")
    else:
        init = call(
            client,
            "POST",
            "/mgd/init",
            json={
                "seed": args.init_seed,
                "teacher_channels": args.teacher_channels or 0,
                "student_channels": args.student_channels or 0,
            },
        )
        manifest, blob = init["manifest"], base64.b64decode(init["blob"])
    request = {
        "teacher": teacher,
        "student": student,
        "mask_seed": args.mask_seed,
        "mask_ratio": args.mask_ratio,
        "loss_weight": args.loss_weight,
        "params_manifest": manifest,
        "params_blob": base64.b64encode(blob).decode("ascii"),
        "include_grads": args.grad,
    }
    report = call(client, "POST", "/mgd/loss", json=request)
    if args.grad and args.grad_out:
        with open(args.grad_out + ".manifest", "w", encoding="utf-8") as fh:
            fh.write(report.pop("grads_manifest"))
        with open(args.grad_out + ".params", "wb") as fh:
            fh.write(base64.b64decode(report.pop("grads_blob")))
        report["grads_file"] = args.grad_out
    _emit(report, args.out)
    return 0


def cmd_mgd_init(args, client: httpx.Client) -> int:
    report = call(
        client,
        "POST",
        "/mgd/init",
        json={
            "seed": args.seed,
            "teacher_channels": args.teacher_channels,
            "student_channels": args.student_channels,
            "mask_ratio": args.mask_ratio,
            "loss_weight": args.loss_weight,
        },
    )
    with open(args.out + ".manifest", "w", encoding="utf-8") as fh:
        fh.write(report["manifest"])
    with open(args.out + ".params", "wb") as fh:
        fh.write(base64.b64decode(report["blob"]))
    print(json.dumps({"written": [args.out + ".manifest", args.out + ".params"]}, indent=2))
    return 0


def cmd_gradcheck(args, client: httpx.Client) -> int:
    request = {
        "module": args.module,
        "trials": args.trials,
        "seed": args.seed,
        "tolerance": args.tolerance,
        "corrupt_scale": args.corrupt_scale,
        "temperature": args.temperature,
    }
    report = call(client, "POST", "/gradcheck", json=request)
    summary = {k: report[k] for k in ("module", "trials", "tolerance", "max_rel_error", "passed")}
    _emit(summary if not args.verbose else report, args.out)
    return 0 if report["passed"] else 2


def cmd_sweep(args, client: httpx.Client) -> int:
    request = {
        "method": args.method,
        "params": _parse_float_list(args.params, "--params"),
        "seeds": _parse_int_list(args.seeds, "--seeds"),
        "steps": args.steps,
    }
    if args.lr is not None:
        request["lr"] = args.lr
    report = call(client, "POST", "/sweep", json=request)
    for row in report["rows"]:
        print(f"# {report['method']} param={row['param']:g}: {row['mean']:.6f} +- {row['std']:.6f}", file=sys.stderr)
    _emit(report, args.out)
    return 0


def cmd_bench(args, client: httpx.Client) -> int:
    request = {
        "op": args.op,
        "warmup": args.warmup,
        "runs": args.runs,
        "boxes": args.boxes,
        "seed": args.seed,
    }
    if args.size:
        size = _parse_int_list(args.size, "--size")
        if len(size) != 4:
            raise CliError("--size expects n,c,h,w")
        request["size"] = size
    report = call(client, "POST", "/bench", json=request)
    _emit(report, args.out)
    return 0


def cmd_demo(args, client: httpx.Client) -> int:
    request = {
        "seed": args.seed,
        "n": args.n,
        "c_teacher": args.c_teacher,
        "c_student": args.c_student,
        "h": args.height,
        "w": args.width,
        "method": args.method,
        "steps": args.steps,
        "lr": args.lr,
        "temperature": args.temperature,
        "mask_ratio": args.mask_ratio,
        "noise_scale": args.noise_scale,
    }
    report = call(client, "POST", "/demo", json=request)
    os.makedirs(args.out, exist_ok=True)
    traj_path = os.path.join(args.out, "trajectory.jsonl")
    with open(traj_path, "w", encoding="utf-8") as fh:
        for i, loss in enumerate(report["trajectory"]):
            fh.write(json.dumps({"step": i, "loss": loss}) + "\n")
    summary_path = os.path.join(args.out, "summary.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(report["summary"], fh, indent=2)
        fh.write("\n")
    for name, payload in report["pgms"].items():
        with open(os.path.join(args.out, name), "wb") as fh:
            fh.write(base64.b64decode(payload))
    print(json.dumps(report["summary"], indent=2))
    return 0


def _load_metric_csv(path: str, metric: Optional[str]) -> dict[str, list[tuple[int, float]]]:
    text = _read_text(path)
    reader = csv.reader(text.splitlines())
    rows = list(reader)
    if not rows:
        raise CliError(f"{path}: empty CSV")
    header = [h.strip() for h in rows[0]]
    if header != ["label", "seed", "metric", "value"]:
        raise CliError(f"{path}: header must be label,seed,metric,value")
    metrics_seen = []
    by_label: dict[str, list[tuple[int, float]]] = {}
    for line_no, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 4:
            raise CliError(f"{path}: line {line_no}: expected 4 columns")
        label, seed_raw, met, value_raw = (cell.strip() for cell in row)
        if met not in metrics_seen:
            metrics_seen.append(met)
        if metric and met != metric:
            continue
        try:
            seed = int(seed_raw)
            value = float(value_raw)
        except ValueError:
            raise CliError(f"{path}: line {line_no}: bad seed or value") from None
        by_label.setdefault(label, []).append((seed, value))
    if not by_label:
        hint = f"; metrics present: {metrics_seen}" if metrics_seen else ""
        raise CliError(f"{path}: no rows for metric {metric!r}{hint}")
    if not metric and len(metrics_seen) > 1:
        raise CliError(f"{path}: multiple metrics present {metrics_seen}; pick one with --metric")
    return by_label


def cmd_stats(args, client: httpx.Client) -> int:
    by_label = _load_metric_csv(args.csv, args.metric)
    runs = []
    for label, pairs in by_label.items():
        pairs.sort()  # pair across labels by seed order
        runs.append({"label": label, "values": [v for _, v in pairs]})
    request = {"runs": runs}
    if args.baseline:
        request["baseline_label"] = args.baseline
    report = call(client, "POST", "/stats", json=request)
    _emit(report, args.out)
    return 0


# ---------------------------------------------------------------------------
# Parser wiring.
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="distillkit", description=__doc__)
    parser.add_argument("--server", help="base URL of a running service (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    p = sub.add_parser("eval", help="evaluate detections against ground truth")
    p.add_argument("--gt", required=True, help="ground-truth JSONL file")
    p.add_argument("--det", required=True, help="detections JSONL file")
    p.add_argument("--exclude-classes", default="", help="comma-separated class ids to drop")
    p.add_argument("--iou-set", choices=["ap50", "ap5095"], default="ap5095")
    p.add_argument("--score-threshold", type=float, default=0.0)
    p.add_argument("--class-names", help="JSON file mapping class id to name")
    p.add_argument("--out", help="write the JSON report here as well")

    p = sub.add_parser("loss", help="compute a distillation loss from TEN1 feature dumps")
    p.add_argument("--method", choices=["cwd", "mgd"], required=True)
    p.add_argument("--teacher", required=True, help="teacher TEN1 file")
    p.add_argument("--student", required=True, help="student TEN1 file")
    p.add_argument("--temperature", type=float, default=2.0)
    p.add_argument("--feature-weight", type=float, default=50.0)
    p.add_argument("--mask-seed", type=int, default=0)
    p.add_argument("--mask-ratio", type=float, default=0.5)
    p.add_argument("--loss-weight", type=float, default=2e-5)
    p.add_argument("--params", help="prefix of .manifest/.params files (mgd)")
    p.add_argument("--init-seed", type=int, default=0, help="init seed when --params is absent (mgd)")
    p.add_argument("--teacher-channels", type=int, help="needed with --init-seed")
    p.add_argument("--student-channels", type=int, help="needed with --init-seed")
    p.add_argument("--grad", action="store_true", help="also return gradients")
    p.add_argument("--grad-out", help="file (cwd) or prefix (mgd) for gradient output")
    p.add_argument("--out")

    p = sub.add_parser("mgd-init", help="initialize and save MGD parameters")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--teacher-channels", type=int, required=True)
    p.add_argument("--student-channels", type=int, required=True)
    p.add_argument("--mask-ratio", type=float, default=0.5)
    p.add_argument("--loss-weight", type=float, default=2e-5)
    p.add_argument("--out", required=True, help="prefix for .manifest/.params files")

    p = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    p.add_argument("--module", choices=["conv", "cwd", "mgd"], required=True)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--corrupt-scale", type=float, default=0.0, help=argparse.SUPPRESS)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out")

    p = sub.add_parser("sweep", help="hyperparameter sweep over demo runs")
    p.add_argument("--method", choices=["cwd", "mgd"], required=True)
    p.add_argument("--params", required=True, help="comma-separated parameter values")
    p.add_argument("--seeds", required=True, help="comma-separated seeds")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--out")

    p = sub.add_parser("bench", help="microbenchmark a kernel")
    p.add_argument("--op", choices=["cwd", "mgd", "eval"], required=True)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--size", help="n,c,h,w tensor size for cwd/mgd")
    p.add_argument("--boxes", type=int, default=1000, help="detection count for eval")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("demo", help="run a distillation demo and save its artifacts")
    p.add_argument("--method", choices=["cwd", "mgd"], default="mgd")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--c-teacher", type=int, default=4)
    p.add_argument("--c-student", type=int, default=4)
    p.add_argument("--height", type=int, default=8)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--temperature", type=float, default=2.0)
    p.add_argument("--mask-ratio", type=float, default=0.5)
    p.add_argument("--noise-scale", type=float, default=0.1)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("stats", help="summaries and paired tests from a per-seed metric CSV")
    p.add_argument("--csv", required=True, help="CSV with columns label,seed,metric,value")
    p.add_argument("--metric", help="metric name to select when several are present")
    p.add_argument("--baseline", help="baseline label (default: first label)")
    p.add_argument("--out")

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "serve":
            return cmd_serve(args)
        with make_client(args.server) as client:
            handler = {
                "eval": cmd_eval,
                "loss": cmd_loss,
                "mgd-init": cmd_mgd_init,
                "gradcheck": cmd_gradcheck,
                "sweep": cmd_sweep,
                "bench": cmd_bench,
                "demo": cmd_demo,
                "stats": cmd_stats,
            }[args.command]
            return handler(args, client)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # unexpected: runtime failure
        print(f"unexpected failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
