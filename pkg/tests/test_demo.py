import json

import numpy as np
import pytest

from distillkit.demo import (
    DemoScenario,
    attention_l1,
    attention_map,
    derive_student,
    pgm_bytes,
    render_attention_pgms,
    run_demo,
    synth_teacher,
    write_outputs,
)
from distillkit.tensor import Rng, Tensor4


class TestScenario:
    def test_method_validation(self):
        with pytest.raises(ValueError):
            DemoScenario(method="nope")

    def test_student_not_wider_than_teacher(self):
        with pytest.raises(ValueError):
            DemoScenario(c_teacher=2, c_student=4)

    def test_steps_validation(self):
        with pytest.raises(ValueError):
            DemoScenario(steps=0)


class TestSynthetic:
    def test_teacher_deterministic(self):
        a = synth_teacher(Rng(4), 1, 4, 8, 8)
        b = synth_teacher(Rng(4), 1, 4, 8, 8)
        assert a == b

    def test_student_channel_reduction(self):
        teacher = synth_teacher(Rng(5), 1, 4, 8, 8)
        student = derive_student(Rng(6), teacher, 2)
        assert student.dims == (1, 2, 8, 8)

    def test_student_correlates_with_teacher(self):
        teacher = synth_teacher(Rng(7), 1, 4, 8, 8)
        student = derive_student(Rng(8), teacher, 4, noise_scale=0.1)
        t = teacher.astype64().ravel()
        s = student.astype64().ravel()
        corr = np.corrcoef(t, s)[0, 1]
        assert corr > 0.9


class TestMgdDemo:
    def test_fixture_converges(self):
        report = run_demo(DemoScenario.mgd_fixture())
        assert not report.diverged
        assert report.steps_run == 200
        assert report.loss_ratio < 0.2
        assert report.wall_time_s > 0

    def test_moving_average_non_increasing_across_windows(self):
        # fresh masks make single steps noisy; the 50-step moving average,
        # compared across disjoint windows, must not increase after step 50
        report = run_demo(DemoScenario.mgd_fixture())
        losses = np.array(report.losses)
        ma = np.convolve(losses, np.ones(50) / 50, mode="valid")
        for j in range(50, len(ma)):
            assert ma[j] <= ma[j - 50] + 1e-12

    def test_trajectories_bit_identical(self):
        a = run_demo(DemoScenario.mgd_fixture())
        b = run_demo(DemoScenario.mgd_fixture())
        assert a.trajectory_lines() == b.trajectory_lines()
        assert "\n".join(a.trajectory_lines()).encode() == "\n".join(b.trajectory_lines()).encode()

    def test_divergence_reported_not_raised(self):
        report = run_demo(DemoScenario(seed=0, method="mgd", lr=1e9, steps=30))
        assert report.diverged
        assert report.steps_run < 30

    def test_alignment_path_trains(self):
        report = run_demo(DemoScenario(seed=1, method="mgd", c_teacher=4, c_student=2))
        assert not report.diverged
        assert report.final_loss < report.initial_loss


class TestCwdDemo:
    def test_flat_zero_when_student_equals_teacher(self):
        report = run_demo(DemoScenario(seed=3, method="cwd", noise_scale=0.0, lr=1.0))
        assert report.losses == [0.0] * len(report.losses)

    def test_loss_decreases(self):
        report = run_demo(DemoScenario(seed=3, method="cwd", lr=1.0))
        assert report.final_loss < 0.1 * report.initial_loss

    def test_attention_moves_toward_teacher(self):
        report = run_demo(DemoScenario(seed=3, method="cwd", lr=1.0))
        assert report.attention_l1_before is not None
        assert report.attention_l1_after is not None
        assert report.attention_l1_after < report.attention_l1_before

    def test_determinism(self):
        scn = DemoScenario(seed=9, method="cwd", lr=1.0, steps=50)
        assert run_demo(scn).trajectory_lines() == run_demo(scn).trajectory_lines()


class TestAttentionMaps:
    def test_uniform_channel_gives_constant_map(self):
        x = Tensor4(np.zeros((1, 1, 4, 4), dtype=np.float32))
        maps = attention_map(x, 1.0)
        plane = maps.data[0, 0]
        assert np.all(plane == plane[0, 0])
        pgm = pgm_bytes(plane.astype(np.float64))
        pixels = set(pgm.split(b"\n", 3)[3])
        assert len(pixels) == 1  # uniform gray

    def test_single_spike_gives_single_bright_cell(self):
        data = np.zeros((1, 1, 4, 4), dtype=np.float32)
        data[0, 0, 1, 2] = 12.0
        maps = attention_map(Tensor4(data), 1.0)
        pgm = pgm_bytes(maps.data[0, 0].astype(np.float64))
        pixels = np.frombuffer(pgm.split(b"\n", 3)[3], dtype=np.uint8).reshape(4, 4)
        assert pixels[1, 2] == 255
        others = pixels.copy()
        others[1, 2] = 0
        assert others.max() < 10

    def test_l1_metric(self):
        a = Tensor4(np.zeros((1, 1, 2, 2), dtype=np.float32))
        b = Tensor4(np.ones((1, 1, 2, 2), dtype=np.float32))
        assert attention_l1(a, b) == pytest.approx(1.0)

    def test_pgm_header(self):
        blob = pgm_bytes(np.ones((3, 5)))
        assert blob.startswith(b"P5\n5 3\n255\n")
        assert len(blob) == len(b"P5\n5 3\n255\n") + 15


class TestOutputs:
    def test_write_outputs_layout(self, tmp_path):
        report = run_demo(DemoScenario(seed=2, method="mgd", steps=20))
        files = write_outputs(report, str(tmp_path))
        names = {f.split("/")[-1] for f in files}
        assert "trajectory.jsonl" in names
        assert "summary.json" in names
        assert any(n.startswith("teacher_att_c") and n.endswith(".pgm") for n in names)

    def test_trajectory_jsonl_readable_and_stable(self, tmp_path):
        scn = DemoScenario(seed=2, method="mgd", steps=20)
        blobs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            write_outputs(run_demo(scn), str(out))
            blobs.append((out / "trajectory.jsonl").read_bytes())
        assert blobs[0] == blobs[1]
        lines = blobs[0].decode().strip().splitlines()
        assert len(lines) == 20
        first = json.loads(lines[0])
        assert set(first) == {"step", "loss"}

    def test_render_names_cover_channels(self):
        report = run_demo(DemoScenario(seed=2, method="mgd", steps=10))
        pgms = render_attention_pgms(report)
        teacher_maps = [n for n in pgms if n.startswith("teacher_att_c")]
        assert len(teacher_maps) == 4
