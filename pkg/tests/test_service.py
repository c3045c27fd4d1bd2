import base64

import numpy as np
import pytest
from fastapi.testclient import TestClient

from distillkit.cwd import CwdConfig, cwd_backward, cwd_loss
from distillkit.deteval import AP50_THRESHOLDS, EvalConfig, evaluate
from distillkit.fixtures import CROP_CLASS_ID, table6_scene
from distillkit.mgd import MgdConfig, grads_blob, mgd_backward, mgd_loss, save_checkpoint
from distillkit.service import app
from distillkit.tensor import Rng, Tensor4, sample_mask, ten1_bytes, tensor_from_ten1


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


def b64(t: Tensor4) -> str:
    return base64.b64encode(ten1_bytes(t)).decode("ascii")


def rand_tensor(seed, n, c, h, w):
    return Tensor4(Rng(seed).uniform_signed(n * c * h * w).reshape(n, c, h, w))


def detection_records(dets):
    return [
        {"image_id": d.image_id, "class_id": d.class_id, "bbox": [d.box.x, d.box.y, d.box.w, d.box.h], "score": d.score}
        for d in dets
    ]


def gt_records(gts):
    return [
        {"image_id": g.image_id, "class_id": g.class_id, "bbox": [g.box.x, g.box.y, g.box.w, g.box.h]}
        for g in gts
    ]


class TestHealth:
    def test_healthz(self, client):
        body = client.get("/healthz").json()
        assert body["status"] == "ok"


class TestCwdEndpoint:
    def test_loss_matches_direct_call_exactly(self, client):
        teacher = rand_tensor(1, 1, 3, 4, 4)
        student = rand_tensor(2, 1, 3, 4, 4)
        want, per_channel = cwd_loss(teacher, student, CwdConfig(temperature=3.0))
        body = client.post(
            "/cwd/loss", json={"teacher": b64(teacher), "student": b64(student), "temperature": 3.0}
        ).json()
        assert body["loss"] == want  # bit-exact via JSON float round-trip
        assert body["per_channel"] == [float(v) for v in per_channel]

    def test_grad_bytes_match_direct_call(self, client):
        teacher = rand_tensor(3, 1, 2, 3, 3)
        student = rand_tensor(4, 1, 2, 3, 3)
        _, _, grad, _ = cwd_backward(teacher, student, CwdConfig(temperature=2.0))
        body = client.post(
            "/cwd/loss",
            json={"teacher": b64(teacher), "student": b64(student), "temperature": 2.0, "include_grad": True},
        ).json()
        assert base64.b64decode(body["grad"]) == ten1_bytes(grad)

    def test_dim_mismatch_is_400_with_library_message(self, client):
        teacher = rand_tensor(1, 1, 2, 3, 3)
        student = rand_tensor(2, 1, 3, 3, 3)
        resp = client.post("/cwd/loss", json={"teacher": b64(teacher), "student": b64(student)})
        assert resp.status_code == 400
        with pytest.raises(ValueError) as err:
            cwd_loss(teacher, student, CwdConfig(temperature=2.0))
        assert resp.json()["detail"] == str(err.value)

    def test_bad_blob_rejected(self, client):
        resp = client.post(
            "/cwd/loss",
            json={"teacher": base64.b64encode(b"junk").decode(), "student": b64(rand_tensor(1, 1, 1, 2, 2))},
        )
        assert resp.status_code == 400

    def test_logit_loss(self, client):
        body = client.post(
            "/cwd/logit-loss",
            json={"teacher_logits": [0.0, float(np.log(2.0))], "student_logits": [0.0, 0.0], "temperature": 1.0},
        ).json()
        assert body["loss"] == pytest.approx(0.056633, abs=1e-5)


class TestMgdEndpoints:
    def test_init_then_loss_parity(self, client):
        teacher = rand_tensor(5, 1, 2, 4, 4)
        student = rand_tensor(6, 1, 2, 4, 4)
        init = client.post(
            "/mgd/init", json={"seed": 11, "teacher_channels": 2, "student_channels": 2}
        ).json()
        cfg = MgdConfig.create(Rng(11), 2, 2)
        manifest, blob = save_checkpoint(cfg)
        assert init["manifest"] == manifest
        assert base64.b64decode(init["blob"]) == blob

        mask = sample_mask(Rng(21), (4, 4), 0.5)
        want = mgd_loss(teacher, student, mask, cfg)
        body = client.post(
            "/mgd/loss",
            json={
                "teacher": b64(teacher),
                "student": b64(student),
                "mask_seed": 21,
                "params_manifest": init["manifest"],
                "params_blob": init["blob"],
                "include_grads": True,
            },
        ).json()
        assert body["loss"] == want
        want_manifest, want_blob = grads_blob(mgd_backward(teacher, student, mask, cfg))
        assert body["grads_manifest"] == want_manifest
        assert base64.b64decode(body["grads_blob"]) == want_blob

    def test_mask_determinism_via_seed(self, client):
        teacher = rand_tensor(7, 1, 2, 4, 4)
        student = rand_tensor(8, 1, 2, 4, 4)
        init = client.post("/mgd/init", json={"seed": 1, "teacher_channels": 2, "student_channels": 2}).json()
        payload = {
            "teacher": b64(teacher),
            "student": b64(student),
            "mask_seed": 5,
            "params_manifest": init["manifest"],
            "params_blob": init["blob"],
        }
        a = client.post("/mgd/loss", json=payload).json()["loss"]
        b = client.post("/mgd/loss", json=payload).json()["loss"]
        assert a == b

    def test_channel_mismatch_rejected(self, client):
        init = client.post("/mgd/init", json={"seed": 1, "teacher_channels": 3, "student_channels": 3}).json()
        resp = client.post(
            "/mgd/loss",
            json={
                "teacher": b64(rand_tensor(1, 1, 2, 3, 3)),
                "student": b64(rand_tensor(2, 1, 2, 3, 3)),
                "mask_seed": 0,
                "params_manifest": init["manifest"],
                "params_blob": init["blob"],
            },
        )
        assert resp.status_code == 400


class TestEvalEndpoint:
    def test_table6_scene(self, client):
        dets, gts = table6_scene()
        body = client.post(
            "/eval",
            json={
                "detections": detection_records(dets),
                "ground_truth": gt_records(gts),
                "excluded_class_ids": [CROP_CLASS_ID],
                "iou_set": "ap50",
            },
        ).json()
        want = evaluate(dets, gts, EvalConfig(iou_thresholds=AP50_THRESHOLDS, excluded_class_ids={CROP_CLASS_ID}))
        assert body["map50"] == want.map50
        assert abs(body["map50"] - 0.931) < 5e-4
        assert body["included_class_ids"] == [1, 2, 3, 4]

    def test_empty_after_exclusion_rejected(self, client):
        dets, gts = table6_scene()
        resp = client.post(
            "/eval",
            json={
                "detections": detection_records(dets),
                "ground_truth": gt_records(gts),
                "excluded_class_ids": [0, 1, 2, 3, 4],
            },
        )
        assert resp.status_code == 400

    def test_validation_error_is_422(self, client):
        resp = client.post("/eval", json={"detections": "nope", "ground_truth": []})
        assert resp.status_code == 422


class TestGradcheckEndpoint:
    def test_pass_and_negative_control(self, client):
        ok = client.post("/gradcheck", json={"module": "conv", "trials": 2, "seed": 3}).json()
        assert ok["passed"] is True
        bad = client.post(
            "/gradcheck", json={"module": "conv", "trials": 1, "seed": 3, "corrupt_scale": 0.05}
        ).json()
        assert bad["passed"] is False


class TestSweepEndpoint:
    def test_shape_contract(self, client):
        body = client.post(
            "/sweep",
            json={"method": "cwd", "params": [1, 2, 3, 4], "seeds": [0, 1, 2, 3, 4], "steps": 10},
        ).json()
        assert len(body["rows"]) == 4
        for row in body["rows"]:
            assert len(row["values"]) == 5
        assert len(body["tests"]) == 3
        assert body["baseline_param"] == 1.0

    def test_mgd_sweep_runs(self, client):
        body = client.post(
            "/sweep",
            json={"method": "mgd", "params": [2e-5, 4e-5], "seeds": [0, 1], "steps": 10},
        ).json()
        assert body["method"] == "mgd"
        assert len(body["rows"]) == 2


class TestDemoEndpoint:
    def test_summary_and_artifacts(self, client):
        body = client.post("/demo", json={"method": "mgd", "seed": 2, "steps": 20}).json()
        assert body["summary"]["steps_run"] == 20
        assert len(body["trajectory"]) == 20
        assert any(name.endswith(".pgm") for name in body["pgms"])
        sample = base64.b64decode(next(iter(body["pgms"].values())))
        assert sample.startswith(b"P5\n")


class TestStatsEndpoint:
    def test_all_positive_differences(self, client):
        body = client.post(
            "/stats",
            json={
                "runs": [
                    {"label": "baseline", "values": [0.836, 0.84, 0.835, 0.841, 0.838]},
                    {"label": "distilled", "values": [0.858, 0.861, 0.856, 0.862, 0.859]},
                ]
            },
        ).json()
        comp = body["comparisons"][0]
        assert comp["w"] == 0.0
        assert comp["p_w"] == pytest.approx(0.0625)
        assert comp["p_t"] < 0.05

    def test_degenerate_differences_noted(self, client):
        body = client.post(
            "/stats",
            json={
                "runs": [
                    {"label": "a", "values": [1.0, 2.0, 3.0]},
                    {"label": "b", "values": [1.0, 2.0, 3.0]},
                ]
            },
        ).json()
        comp = body["comparisons"][0]
        assert comp.get("t") is None
        assert "note" in comp


class TestBenchEndpoint:
    def test_reports_statistics(self, client):
        body = client.post(
            "/bench", json={"op": "cwd", "warmup": 1, "runs": 4, "size": [1, 2, 16, 16]}
        ).json()
        assert body["runs"] == 4
        assert len(body["times_ms"]) == 4
        assert all(t > 0 for t in body["times_ms"])
        assert body["p50_ms"] <= body["p95_ms"]

    def test_run_minimum(self, client):
        resp = client.post("/bench", json={"op": "cwd", "runs": 1})
        assert resp.status_code == 400


class TestShippedSchemas:
    """Machine-readable outputs validate against the schemas in the package."""

    @pytest.mark.parametrize(
        "name,request_fn",
        [
            ("cwd_loss", lambda c: c.post("/cwd/loss", json={"teacher": b64(rand_tensor(1, 1, 2, 3, 3)), "student": b64(rand_tensor(2, 1, 2, 3, 3))})),
            ("gradcheck_report", lambda c: c.post("/gradcheck", json={"module": "conv", "trials": 1, "seed": 0})),
            ("bench_report", lambda c: c.post("/bench", json={"op": "cwd", "warmup": 0, "runs": 2, "size": [1, 1, 8, 8]})),
            ("demo_response", lambda c: c.post("/demo", json={"method": "mgd", "steps": 5})),
            ("sweep_report", lambda c: c.post("/sweep", json={"method": "cwd", "params": [1, 2], "seeds": [0, 1], "steps": 5})),
        ],
    )
    def test_response_validates(self, client, name, request_fn):
        import jsonschema

        from distillkit.service.schemas import load_schema

        response = request_fn(client)
        assert response.status_code == 200
        jsonschema.validate(response.json(), load_schema(name))

    def test_eval_report_validates(self, client):
        import jsonschema

        from distillkit.service.schemas import load_schema

        dets, gts = table6_scene()
        body = client.post(
            "/eval",
            json={
                "detections": detection_records(dets),
                "ground_truth": gt_records(gts),
                "excluded_class_ids": [CROP_CLASS_ID],
                "iou_set": "ap50",
            },
        ).json()
        jsonschema.validate(body, load_schema("eval_report"))
