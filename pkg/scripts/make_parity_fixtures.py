"""Generate the shared parity fixture suite for the TypeScript client.

Writes frontend/fixtures/parity.json: 50 instances (20 cwd, 20 mgd,
10 eval) with inputs in wire encoding and expected outputs computed
directly by the primary implementation.  The client test suite replays
each instance over HTTP and demands bit-exact agreement.

    python scripts/make_parity_fixtures.py
"""

import base64
import json
import math
import os

import numpy as np

from distillkit.cwd import CwdConfig, cwd_backward, cwd_loss
from distillkit.deteval import AP50_95_THRESHOLDS, AP50_THRESHOLDS, EvalConfig, evaluate
from distillkit.fixtures import CROP_CLASS_ID, random_scene, table6_scene
from distillkit.mgd import MgdConfig, grads_blob, mgd_backward, mgd_loss, save_checkpoint
from distillkit.tensor import ConvLayer, Rng, Tensor4, sample_mask, ten1_bytes


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def t64(t: Tensor4) -> str:
    return b64(ten1_bytes(t))


def rand_tensor(rng: Rng, n, c, h, w, scale=1.0) -> Tensor4:
    return Tensor4(rng.uniform_signed(n * c * h * w).reshape(n, c, h, w) * scale)


def cwd_instances():
    out = []
    # hand-oracle pair and exact-zero pair lead the suite
    teacher = Tensor4(np.array([0.0, math.log(2.0)], dtype=np.float32).reshape(1, 1, 1, 2))
    student = Tensor4(np.zeros((1, 1, 1, 2), dtype=np.float32))
    for name, t, s, temp in [
        ("hand-oracle", teacher, student, 1.0),
        ("identical", rand_tensor(Rng(900), 1, 2, 3, 3), None, 2.0),
    ]:
        s = t if s is None else s
        loss, per_channel, grad, _ = cwd_backward(t, s, CwdConfig(temperature=temp))
        out.append(
            {
                "name": name,
                "teacher": t64(t),
                "student": t64(s),
                "temperature": temp,
                "loss": loss,
                "per_channel": [float(v) for v in per_channel],
                "grad": b64(ten1_bytes(grad)),
            }
        )
    for i in range(18):
        rng = Rng(1000 + i)
        dims = (1 + i % 2, 2 + i % 3, 3 + i % 3, 3 + (i // 2) % 3)
        t = rand_tensor(rng.split(0), *dims, scale=1.5)
        s = rand_tensor(rng.split(1), *dims, scale=1.5)
        temp = float(1 + i % 4)
        loss, per_channel, grad, _ = cwd_backward(t, s, CwdConfig(temperature=temp))
        out.append(
            {
                "name": f"random-{i}",
                "teacher": t64(t),
                "student": t64(s),
                "temperature": temp,
                "loss": loss,
                "per_channel": [float(v) for v in per_channel],
                "grad": b64(ten1_bytes(grad)),
            }
        )
    return out


def mgd_instances():
    out = []
    # perfect reconstruction: identity projector, mask ratio 0 (all ones)
    teacher = Tensor4(np.abs(Rng(901).uniform_signed(1 * 2 * 4 * 4)).reshape(1, 2, 4, 4))
    identity_cfg = MgdConfig(
        projector=(ConvLayer.identity(2, 3), ConvLayer.identity(2, 3)), mask_ratio=0.0
    )
    manifest, blob = save_checkpoint(identity_cfg)
    mask = sample_mask(Rng(0), (4, 4), 0.0)
    loss = mgd_loss(teacher, teacher, mask, identity_cfg)
    gman, gblob = grads_blob(mgd_backward(teacher, teacher, mask, identity_cfg))
    out.append(
        {
            "name": "perfect-reconstruction",
            "teacher": t64(teacher),
            "student": t64(teacher),
            "mask_seed": 0,
            "mask_ratio": 0.0,
            "loss_weight": 2e-5,
            "params_manifest": manifest,
            "params_blob": b64(blob),
            "loss": loss,
            "grads_manifest": gman,
            "grads_blob": b64(gblob),
        }
    )
    for i in range(19):
        rng = Rng(2000 + i)
        with_align = i % 3 == 2
        c_t, c_s = (3, 2) if with_align else (2, 2)
        h = w = 4
        t = rand_tensor(rng.split(0), 1, c_t, h, w)
        s = rand_tensor(rng.split(1), 1, c_s, h, w)
        cfg = MgdConfig.create(rng.split(2), c_t, c_s, mask_ratio=0.5)
        manifest, blob = save_checkpoint(cfg)
        mask_seed = 3000 + i
        mask = sample_mask(Rng(mask_seed), (h, w), 0.5)
        loss = mgd_loss(t, s, mask, cfg)
        gman, gblob = grads_blob(mgd_backward(t, s, mask, cfg))
        out.append(
            {
                "name": f"random-{i}",
                "teacher": t64(t),
                "student": t64(s),
                "mask_seed": mask_seed,
                "mask_ratio": 0.5,
                "loss_weight": 2e-5,
                "params_manifest": manifest,
                "params_blob": b64(blob),
                "loss": loss,
                "grads_manifest": gman,
                "grads_blob": b64(gblob),
            }
        )
    return out


def det_records(dets):
    return [
        {"image_id": d.image_id, "class_id": d.class_id, "bbox": [d.box.x, d.box.y, d.box.w, d.box.h], "score": d.score}
        for d in dets
    ]


def gt_records(gts):
    return [
        {"image_id": g.image_id, "class_id": g.class_id, "bbox": [g.box.x, g.box.y, g.box.w, g.box.h]}
        for g in gts
    ]


def eval_instances():
    out = []
    dets, gts = table6_scene()
    res = evaluate(dets, gts, EvalConfig(iou_thresholds=AP50_THRESHOLDS, excluded_class_ids={CROP_CLASS_ID}))
    out.append(
        {
            "name": "table6-reconstruction",
            "detections": det_records(dets),
            "ground_truth": gt_records(gts),
            "excluded_class_ids": [CROP_CLASS_ID],
            "iou_set": "ap50",
            "report": res.to_dict(),
        }
    )
    # a perfect single-class scene
    from distillkit.deteval import Box, Detection, GroundTruthBox

    perfect_gts = [GroundTruthBox(f"i{k}", 1, Box(10.0 * k, 0.0, 5.0, 5.0)) for k in range(4)]
    perfect_dets = [Detection(f"i{k}", 1, Box(10.0 * k, 0.0, 5.0, 5.0), 0.9 - 0.01 * k) for k in range(4)]
    res = evaluate(perfect_dets, perfect_gts, EvalConfig())
    out.append(
        {
            "name": "perfect-scene",
            "detections": det_records(perfect_dets),
            "ground_truth": gt_records(perfect_gts),
            "excluded_class_ids": [],
            "iou_set": "ap5095",
            "report": res.to_dict(),
        }
    )
    for i in range(8):
        dets, gts = random_scene(Rng(4000 + i))
        iou_set = "ap50" if i % 2 == 0 else "ap5095"
        thresholds = AP50_THRESHOLDS if iou_set == "ap50" else AP50_95_THRESHOLDS
        res = evaluate(dets, gts, EvalConfig(iou_thresholds=thresholds))
        out.append(
            {
                "name": f"random-{i}",
                "detections": det_records(dets),
                "ground_truth": gt_records(gts),
                "excluded_class_ids": [],
                "iou_set": iou_set,
                "report": res.to_dict(),
            }
        )
    return out


def error_cases():
    teacher = rand_tensor(Rng(42), 1, 2, 3, 3)
    student = rand_tensor(Rng(43), 1, 3, 3, 3)
    try:
        cwd_loss(teacher, student, CwdConfig(temperature=2.0))
        raise AssertionError("expected a channel mismatch error")
    except ValueError as exc:
        message = str(exc)
    return [
        {
            "name": "cwd-channel-mismatch",
            "teacher": t64(teacher),
            "student": t64(student),
            "temperature": 2.0,
            "message": message,
        }
    ]


def main() -> None:
    fixture = {
        "cwd": cwd_instances(),
        "mgd": mgd_instances(),
        "eval": eval_instances(),
        "errors": error_cases(),
    }
    count = len(fixture["cwd"]) + len(fixture["mgd"]) + len(fixture["eval"])
    assert count == 50, count
    here = os.path.dirname(os.path.abspath(__file__))
    outdir = os.path.join(here, "..", "frontend", "fixtures")
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "parity.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fixture, fh)
        fh.write("\n")
    print(f"wrote {os.path.relpath(path)}: {count} instances")


if __name__ == "__main__":
    main()
