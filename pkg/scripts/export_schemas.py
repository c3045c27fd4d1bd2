"""Regenerate the JSON schemas shipped inside the package.

Run from the repository root after changing any response model:

    python scripts/export_schemas.py
"""

import json
import os

from distillkit.service import schemas as sc

SHIPPED = {
    "eval_report": sc.EvalResponse,
    "cwd_loss": sc.CwdLossResponse,
    "mgd_loss": sc.MgdLossResponse,
    "gradcheck_report": sc.GradCheckResponse,
    "sweep_report": sc.SweepResponse,
    "bench_report": sc.BenchResponse,
    "demo_response": sc.DemoResponse,
    "demo_summary": sc.DemoSummary,
    "stats_report": sc.StatsResponse,
}


def main() -> None:
    here = os.path.dirname(os.path.abspath(__file__))
    outdir = os.path.join(here, "..", "src", "distillkit", "schemas")
    os.makedirs(outdir, exist_ok=True)
    for name, model in SHIPPED.items():
        path = os.path.join(outdir, f"{name}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(model.model_json_schema(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {os.path.relpath(path)}")


if __name__ == "__main__":
    main()
