"""End-to-end command line tests (subprocess level)."""

import os
import subprocess
import sys

import pytest

from skelfield.articulation import DensityWeightNet, DrnConfig
from skelfield.body import (
    BodyParams,
    SyntheticBodyConfig,
    load_body_archive,
    make_synthetic_body,
    save_body_archive,
)
from skelfield.field import FieldConfig, RadianceField, save_checkpoint
from skelfield.ppm import decode_ppm
from skelfield.scene import MotionClip, save_motion


def run_cli(*args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "skelfield.cli", *[str(a) for a in args]],
        capture_output=True, text=True, cwd=cwd)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Directory with a small body archive, checkpoint, and motion clip."""
    root = tmp_path_factory.mktemp("cli")
    body = make_synthetic_body(SyntheticBodyConfig(tessellation=1))
    save_body_archive(root / "body.sklf", body)
    field = RadianceField.create(
        FieldConfig(n_freq=4, hidden=(16, 16), channels=4), seed=5)
    net = DensityWeightNet.create(DrnConfig(n_freq=3, hidden=(16,)), seed=6)
    save_checkpoint(root / "avatar.ckpt", field, net)
    frames = []
    for i in range(2):
        p = BodyParams.identity(body)
        p.pose[3, 0] = 0.15 * i
        frames.append(p)
    save_motion(root / "wave.motion", MotionClip(frames=frames, fps=8.0))
    (root / "demo.scene").write_text(
        "SKLF-SCENE v1\navatar checkpoint=avatar.ckpt body=body.sklf\n")
    return root


class TestUsage:
    def test_help_lists_subcommands(self):
        proc = run_cli("--help")
        assert proc.returncode == 0
        for name in ("make-body", "render-skeleton", "init", "train-static",
                     "train-anim", "render", "animate", "compose", "check"):
            assert name in proc.stdout

    def test_unknown_flag_exits_2(self):
        proc = run_cli("make-body", "--bogus")
        assert proc.returncode == 2
        assert "usage" in proc.stderr

    def test_unknown_command_exits_2(self):
        proc = run_cli("transmogrify")
        assert proc.returncode == 2

    def test_missing_required_flag_exits_2(self):
        proc = run_cli("make-body")
        assert proc.returncode == 2

    def test_runtime_error_exits_1_with_one_line(self, tmp_path):
        proc = run_cli("render-skeleton", "--body", tmp_path / "missing.sklf",
                       "--out", tmp_path / "x.ppm")
        assert proc.returncode == 1
        lines = [ln for ln in proc.stderr.splitlines() if ln]
        assert len(lines) == 1
        assert lines[0].startswith("error: ")


class TestMakeBody:
    def test_archive_loads_and_validates(self, tmp_path):
        out = tmp_path / "body.sklf"
        proc = run_cli("make-body", "--out", out, "--tessellation", 1)
        assert proc.returncode == 0, proc.stderr
        body = load_body_archive(out)  # load runs full validation
        assert body.joint_count > 0
        assert len(body.joint_names) == body.joint_count


class TestRenderSkeleton:
    def test_golden_deterministic(self, workspace, tmp_path):
        a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
        for out in (a, b):
            proc = run_cli("render-skeleton", "--body", workspace / "body.sklf",
                           "--pose", "zero", "--camera", "front",
                           "--out", out, "--resolution", 64)
            assert proc.returncode == 0, proc.stderr
        assert a.read_bytes() == b.read_bytes()
        img = decode_ppm(a.read_bytes())
        assert img.shape == (64, 64, 3)
        assert img.any(), "skeleton map is all black"

    def test_posed_from_clip(self, workspace, tmp_path):
        out = tmp_path / "posed.ppm"
        proc = run_cli("render-skeleton", "--body", workspace / "body.sklf",
                       "--pose", f"{workspace / 'wave.motion'}:1",
                       "--out", out, "--resolution", 48)
        assert proc.returncode == 0, proc.stderr
        assert out.exists()


class TestTrainingPipeline:
    def test_init_writes_checkpoint_and_config(self, workspace, tmp_path):
        run_dir = tmp_path / "run0"
        proc = run_cli(
            "init", "--body", workspace / "body.sklf", "--out", run_dir,
            "--seed", 99, "--set", "run.init_iters=3",
            "--set", "render.resolution=12", "--set", "render.n_samples=8",
            "--hidden", "8,8", "--freq", 3)
        assert proc.returncode == 0, proc.stderr
        assert (run_dir / "checkpoint.ckpt").exists()
        text = (run_dir / "config.ini").read_text()
        assert "seed = 99" in text
        assert "init_iters = 3" in text

    def test_static_then_anim_then_render(self, workspace, tmp_path):
        common = ["--body", workspace / "body.sklf",
                  "--set", "render.resolution=12", "--set", "render.n_samples=8"]
        init_dir = tmp_path / "r0"
        proc = run_cli("init", "--out", init_dir, "--hidden", "8,8",
                       "--freq", 3, "--set", "run.init_iters=3", *common)
        assert proc.returncode == 0, proc.stderr
        static_dir = tmp_path / "r1"
        proc = run_cli("train-static", "--out", static_dir,
                       "--checkpoint", init_dir / "checkpoint.ckpt",
                       "--guidance", "echo", "--set", "run.static_iters=2",
                       *common)
        assert proc.returncode == 0, proc.stderr
        anim_dir = tmp_path / "r2"
        proc = run_cli("train-anim", "--out", anim_dir,
                       "--checkpoint", static_dir / "checkpoint.ckpt",
                       "--guidance", "echo", "--set", "run.anim_iters=2",
                       *common)
        assert proc.returncode == 0, proc.stderr
        frame = tmp_path / "frame.ppm"
        proc = run_cli("render", "--checkpoint", anim_dir / "checkpoint.ckpt",
                       "--body", workspace / "body.sklf", "--out", frame,
                       "--resolution", 16, "--samples", 8)
        assert proc.returncode == 0, proc.stderr
        assert decode_ppm(frame.read_bytes()).shape == (16, 16, 3)

    def test_bad_guidance_spec_exits_1(self, workspace, tmp_path):
        proc = run_cli("train-static", "--body", workspace / "body.sklf",
                       "--out", tmp_path / "r", "--checkpoint",
                       workspace / "avatar.ckpt", "--guidance", "oracle")
        assert proc.returncode == 1
        assert "error:" in proc.stderr

    def test_bad_config_key_exits_1(self, workspace, tmp_path):
        proc = run_cli("init", "--body", workspace / "body.sklf",
                       "--out", tmp_path / "r", "--set", "run.warp_speed=9")
        assert proc.returncode == 1
        assert "error:" in proc.stderr


class TestAnimateCompose:
    def test_animate_clip_writes_frames_and_manifest(self, workspace, tmp_path):
        out = tmp_path / "anim"
        proc = run_cli("animate", "--checkpoint", workspace / "avatar.ckpt",
                       "--body", workspace / "body.sklf",
                       "--clip", workspace / "wave.motion", "--out", out,
                       "--resolution", 16, "--samples", 8)
        assert proc.returncode == 0, proc.stderr
        assert sorted(os.listdir(out)) == [
            "frame_000000.ppm", "frame_000001.ppm", "manifest.txt"]

    def test_animate_reruns_byte_identical(self, workspace, tmp_path):
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            proc = run_cli("animate", "--scene", workspace / "demo.scene",
                           "--out", out, "--orbit", 2,
                           "--resolution", 12, "--samples", 8, "--threads", 1,
                           cwd=workspace)
            assert proc.returncode == 0, proc.stderr
            outs.append(out)
        for name in ("frame_000000.ppm", "frame_000001.ppm"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_compose_renders_scene_file(self, workspace, tmp_path):
        out = tmp_path / "composed.ppm"
        proc = run_cli("compose", "--scene", workspace / "demo.scene",
                       "--out", out, "--resolution", 16, "--samples", 8)
        assert proc.returncode == 0, proc.stderr
        assert decode_ppm(out.read_bytes()).shape == (16, 16, 3)

    def test_animate_needs_scene_or_checkpoint(self, tmp_path):
        proc = run_cli("animate", "--out", tmp_path / "x")
        assert proc.returncode == 1
        assert "error:" in proc.stderr


class TestCheck:
    def test_all_self_tests_pass(self):
        proc = run_cli("check")
        assert proc.returncode == 0, proc.stdout + proc.stderr
        assert "FAIL" not in proc.stdout
        assert f"{proc.stdout.count('ok ')}/" in proc.stdout
