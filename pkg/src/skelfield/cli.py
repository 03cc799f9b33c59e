"""Command line entry point: the whole pipeline behind one binary.

Subcommands mirror the pipeline stages: make-body builds the parametric
body archive, init regresses a fresh field onto its silhouette, the two
train commands run score-guided optimization, and render/animate/compose
turn checkpoints into images without touching any parameters.  check runs
quick self-tests of the core invariants.

Heavy imports happen inside the handlers so that --threads can cap the
BLAS pools before numpy loads, and so --help stays instant.

Exit codes: 0 success, 1 runtime failure (one-line `error: ...` on
stderr), 2 usage errors (argparse).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

# azimuth of the camera position relative to the body (y-up, front = +z)
_NAMED_VIEWS = {"front": 0.0, "right": 1.5707963267948966,
                "back": 3.141592653589793, "left": 4.71238898038469}


def _apply_thread_cap(argv) -> None:
    """Honor --threads before numpy import; BLAS pools read env at load."""
    value = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            value = argv[i + 1]
        elif arg.startswith("--threads="):
            value = arg.partition("=")[2]
    if value is None:
        return
    try:
        n = int(value)
    except ValueError:
        return  # argparse reports the usage error later
    if n >= 1:
        for var in _THREAD_ENV_VARS:
            os.environ[var] = str(n)


def _add_common(sub):
    sub.add_argument("--threads", type=int, metavar="N",
                     help="cap BLAS and worker thread count")
    return sub


def _add_train_common(sub):
    sub.add_argument("--body", required=True, help="body archive path")
    sub.add_argument("--out", required=True, metavar="DIR",
                     help="run directory (checkpoint + effective config)")
    sub.add_argument("--config", help="training config file (key = value)")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override one config key (repeatable); "
                          "plain or section.key form")
    sub.add_argument("--seed", type=int, help="override run.seed")


def _add_guidance(sub):
    sub.add_argument("--guidance", required=True, metavar="SPEC",
                     help="echo | mock:TARGET.npy | remote:URL")
    sub.add_argument("--prompt", default="a person",
                     help="text prompt for remote guidance")


def _add_camera(sub, resolution=256):
    sub.add_argument("--camera", default="front",
                     choices=sorted(_NAMED_VIEWS),
                     help="named view (azimuth preset)")
    sub.add_argument("--azimuth", type=float, help="camera azimuth (radians); "
                     "overrides --camera")
    sub.add_argument("--elevation", type=float, default=0.2,
                     help="camera elevation (radians)")
    sub.add_argument("--radius", type=float,
                     help="camera distance (default: auto-framed)")
    sub.add_argument("--fov", type=float, default=0.8,
                     help="vertical field of view (radians)")
    sub.add_argument("--resolution", type=int, default=resolution,
                     help="square image size in pixels")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skelfield",
        description="Create, optimize, animate and compose articulated "
                    "3D avatars.")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")

    p = _add_common(sub.add_parser(
        "make-body", help="write a synthetic parametric body archive"))
    p.add_argument("--out", required=True, help="output archive path")
    p.add_argument("--tessellation", type=int, default=2,
                   help="surface density level (1..8)")
    p.add_argument("--height", type=float, default=1.7,
                   help="body height in world units")
    p.set_defaults(handler=cmd_make_body)

    p = _add_common(sub.add_parser(
        "render-skeleton", help="rasterize the occlusion-culled skeleton map"))
    p.add_argument("--body", required=True)
    p.add_argument("--out", required=True, help="output PPM path")
    p.add_argument("--pose", default="zero",
                   help="'zero' or CLIP.motion[:FRAME]")
    _add_camera(p)
    p.set_defaults(handler=cmd_render_skeleton)

    p = _add_common(sub.add_parser(
        "init", help="regress a fresh field onto the body silhouette"))
    _add_train_common(p)
    p.add_argument("--channels", type=int, default=4,
                   help="feature channels of the new field")
    p.add_argument("--freq", type=int, default=6,
                   help="positional encoding frequencies")
    p.add_argument("--hidden", default="48,48,48",
                   help="hidden layer widths, comma-separated")
    p.add_argument("--density-bias", type=float, default=-2.0,
                   help="pre-softplus density shift of the fresh field")
    p.set_defaults(handler=cmd_init)

    p = _add_common(sub.add_parser(
        "train-static", help="score-guided optimization in the rest pose"))
    _add_train_common(p)
    p.add_argument("--checkpoint", required=True,
                   help="input checkpoint (from init)")
    _add_guidance(p)
    p.set_defaults(handler=cmd_train_static)

    p = _add_common(sub.add_parser(
        "train-anim", help="pose-sampled refinement with a weighting net"))
    _add_train_common(p)
    p.add_argument("--checkpoint", required=True,
                   help="input checkpoint (from train-static)")
    _add_guidance(p)
    p.set_defaults(handler=cmd_train_anim)

    p = _add_common(sub.add_parser(
        "render", help="render one posed frame from a checkpoint"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--body", required=True)
    p.add_argument("--out", required=True, help="output PPM path")
    p.add_argument("--pose", default="zero",
                   help="'zero' or CLIP.motion[:FRAME]")
    p.add_argument("--samples", type=int, default=64,
                   help="quadrature samples per ray")
    _add_camera(p)
    p.set_defaults(handler=cmd_render)

    p = _add_common(sub.add_parser(
        "animate", help="render a motion clip to numbered frames"))
    p.add_argument("--scene", help="scene file (alternative to "
                   "--checkpoint/--body/--clip)")
    p.add_argument("--checkpoint")
    p.add_argument("--body")
    p.add_argument("--clip", help="motion clip file")
    p.add_argument("--out", required=True, metavar="DIR",
                   help="frame output directory")
    p.add_argument("--orbit", type=int, default=1,
                   help="number of orbit cameras")
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--workers", type=int, default=1,
                   help="frames rendered in parallel")
    _add_camera(p, resolution=128)
    p.set_defaults(handler=cmd_animate)

    p = _add_common(sub.add_parser(
        "compose", help="render a multi-item scene to one frame"))
    p.add_argument("--scene", required=True, help="scene file")
    p.add_argument("--out", required=True, help="output PPM path")
    p.add_argument("--samples", type=int, default=64)
    _add_camera(p)
    p.set_defaults(handler=cmd_compose)

    p = _add_common(sub.add_parser(
        "check", help="run built-in invariant self-tests"))
    p.set_defaults(handler=cmd_check)

    return parser


# ---------------------------------------------------------------------------
# shared handler plumbing

def _load_train_config(args):
    from .trainer import TrainConfig, apply_overrides, load_config

    config = load_config(args.config) if args.config else TrainConfig()
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    return apply_overrides(config, overrides)


def _make_backend(args, config):
    from .guidance import EchoBackend, MockBackend, RemoteBackend, make_schedule

    schedule = make_schedule(config.diffusion_steps)
    spec = args.guidance
    if spec == "echo":
        return EchoBackend(), schedule
    if spec.startswith("mock:"):
        return MockBackend.from_npy(spec[5:], schedule), schedule
    if spec.startswith("remote:"):
        return RemoteBackend(spec[7:], prompt=args.prompt), schedule
    raise ValueError(
        f"guidance spec {spec!r} is not echo | mock:FILE.npy | remote:URL")


def _parse_pose(spec: str, body):
    from .body import BodyParams
    from .scene import load_motion

    if spec == "zero":
        return BodyParams.identity(body)
    path, _, frame = spec.rpartition(":")
    if path and frame.isdigit():
        clip = load_motion(path, body)
        index = int(frame)
        if index >= len(clip):
            raise ValueError(f"frame {index} outside clip of length {len(clip)}")
        return clip.frames[index]
    return load_motion(spec, body).frames[0]


def _camera_from_args(args, center, bound):
    from .conditioning import Camera

    import numpy as np

    azimuth = args.azimuth if args.azimuth is not None \
        else _NAMED_VIEWS[args.camera]
    radius = args.radius if args.radius is not None else 2.4 * bound
    e, a = args.elevation, azimuth
    offset = radius * np.array([
        np.cos(e) * np.sin(a), np.sin(e), np.cos(e) * np.cos(a)])
    return Camera(
        position=np.asarray(center, dtype=np.float64) + offset,
        look_at=center, vertical_fov=args.fov,
        width=args.resolution, height=args.resolution,
        near=max(0.05, radius - bound), far=radius + bound)


def _echo_config(out_dir, config) -> None:
    from .trainer import save_config

    os.makedirs(out_dir, exist_ok=True)
    save_config(os.path.join(out_dir, "config.ini"), config)


def _write_frame(path, out, camera) -> None:
    from .ppm import write_ppm
    from .scene import frame_rgb

    write_ppm(path, frame_rgb(out, camera))


# ---------------------------------------------------------------------------
# handlers

def cmd_make_body(args) -> int:
    from .body import SyntheticBodyConfig, make_synthetic_body, save_body_archive

    body = make_synthetic_body(SyntheticBodyConfig(
        height=args.height, tessellation=args.tessellation))
    save_body_archive(args.out, body)
    print(f"wrote {args.out}: {body.vertex_count} vertices, "
          f"{body.joint_count} joints")
    return 0


def cmd_render_skeleton(args) -> int:
    from .body import load_body_archive, skin
    from .conditioning import default_topology, make_conditioning_map
    from .ppm import write_ppm
    from .trainer import frame_body

    body = load_body_archive(args.body)
    mesh = skin(body, _parse_pose(args.pose, body))
    center, bound = frame_body(mesh)
    camera = _camera_from_args(args, center, bound)
    cmap = make_conditioning_map(default_topology(body.joint_count), mesh, camera)
    write_ppm(args.out, cmap.image)
    print(f"wrote {args.out}: {int(cmap.visible.sum())}/{len(cmap.visible)} "
          "keypoints visible")
    return 0


def cmd_init(args) -> int:
    from .body import BodyParams, load_body_archive, skin
    from .field import FieldConfig, RadianceField, save_checkpoint
    from .trainer import pretrain_init

    config = _load_train_config(args)
    body = load_body_archive(args.body)
    mesh = skin(body, BodyParams.identity(body))
    hidden = tuple(int(h) for h in args.hidden.split(","))
    field = RadianceField.create(
        FieldConfig(n_freq=args.freq, hidden=hidden, channels=args.channels,
                    density_bias=args.density_bias),
        seed=config.seed)
    _echo_config(args.out, config)
    history = pretrain_init(field, mesh, config)
    path = os.path.join(args.out, "checkpoint.ckpt")
    save_checkpoint(path, field)
    last = history[-1]["loss"] if history else float("nan")
    print(f"wrote {path}: {config.init_iters} iters, final loss {last:.5f}")
    return 0


def cmd_train_static(args) -> int:
    from .body import BodyParams, load_body_archive, skin
    from .conditioning import default_topology
    from .field import load_checkpoint, save_checkpoint
    from .trainer import train_static

    config = _load_train_config(args)
    body = load_body_archive(args.body)
    field, net = load_checkpoint(args.checkpoint)
    backend, schedule = _make_backend(args, config)
    mesh = skin(body, BodyParams.identity(body))
    _echo_config(args.out, config)
    train_static(field, backend, mesh, default_topology(body.joint_count),
                 config, schedule)
    path = os.path.join(args.out, "checkpoint.ckpt")
    save_checkpoint(path, field, net)
    print(f"wrote {path}: {config.static_iters} iters")
    return 0


def cmd_train_anim(args) -> int:
    from .articulation import DensityWeightNet
    from .body import load_body_archive
    from .conditioning import default_topology
    from .field import load_checkpoint, save_checkpoint
    from .trainer import pose_prior_from_config, train_animatable

    config = _load_train_config(args)
    body = load_body_archive(args.body)
    field, net = load_checkpoint(args.checkpoint)
    if net is None:
        net = DensityWeightNet.create(seed=config.seed)
    backend, schedule = _make_backend(args, config)
    prior = pose_prior_from_config(config, body)
    _echo_config(args.out, config)
    field, net, _ = train_animatable(
        field, net, backend, body, prior, config,
        topology=default_topology(body.joint_count), schedule=schedule)
    path = os.path.join(args.out, "checkpoint.ckpt")
    save_checkpoint(path, field, net)
    print(f"wrote {path}: {config.anim_iters} iters")
    return 0


def cmd_render(args) -> int:
    from .body import skin
    from .scene import Avatar, render_posed
    from .trainer import frame_body

    avatar = Avatar.load(args.checkpoint, args.body)
    pose = _parse_pose(args.pose, avatar.body)
    center, bound = frame_body(skin(avatar.body, pose))
    camera = _camera_from_args(args, center, bound)
    out = render_posed(avatar, pose, camera, n_samples=args.samples)
    _write_frame(args.out, out, camera)
    print(f"wrote {args.out}")
    return 0


def _scene_from_args(args):
    from .scene import Avatar, AvatarItem, Scene, load_motion, load_scene

    if args.scene:
        if args.checkpoint or args.body or args.clip:
            raise ValueError("--scene excludes --checkpoint/--body/--clip")
        return load_scene(args.scene)
    if not (args.checkpoint and args.body):
        raise ValueError("need --scene, or --checkpoint with --body")
    avatar = Avatar.load(args.checkpoint, args.body)
    clip = load_motion(args.clip, avatar.body) if args.clip else None
    return Scene([AvatarItem(avatar, clip=clip)])


def cmd_animate(args) -> int:
    from .scene import frame_scene, orbit_cameras, render_sequence

    scene = _scene_from_args(args)
    center, bound = frame_scene(scene)
    radius = args.radius if args.radius is not None else 2.4 * bound
    azimuth = args.azimuth if args.azimuth is not None \
        else _NAMED_VIEWS[args.camera]
    cameras = orbit_cameras(
        center, radius, args.orbit, elevation=args.elevation,
        vertical_fov=args.fov, resolution=args.resolution,
        start_azimuth=azimuth, bound=bound)
    paths = render_sequence(scene, cameras, args.out,
                            n_samples=args.samples, workers=args.workers)
    print(f"wrote {len(paths)} frames to {args.out}")
    return 0


def cmd_compose(args) -> int:
    from .scene import frame_scene, load_scene, render_composed

    scene = load_scene(args.scene)
    center, bound = frame_scene(scene)
    camera = _camera_from_args(args, center, bound)
    out = render_composed(scene, camera, n_samples=args.samples)
    _write_frame(args.out, out, camera)
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# self-tests

def _check_rng_replay():
    from .seeds import derive_rng

    import numpy as np

    a = derive_rng(7, "check", 3).standard_normal(8)
    b = derive_rng(7, "check", 3).standard_normal(8)
    assert np.array_equal(a, b), "keyed stream replay differs"


def _check_adam_fixed_point():
    from .trainer import adam_step, init_adam

    import numpy as np

    params = np.linspace(-1.0, 1.0, 16, dtype=np.float32)
    state = init_adam(params)
    stepped = adam_step(params, np.zeros(16), state, 1e-2)
    assert np.array_equal(params, stepped), "zero gradient moved parameters"


def _check_checkpoint_round_trip():
    import tempfile

    from .field import FieldConfig, RadianceField, load_checkpoint, save_checkpoint

    import numpy as np

    field = RadianceField.create(FieldConfig(n_freq=3, hidden=(8,)), seed=1)
    with tempfile.TemporaryDirectory() as td:
        path = os.path.join(td, "a.ckpt")
        save_checkpoint(path, field)
        back, net = load_checkpoint(path)
        assert net is None
        assert np.array_equal(field.params, back.params), "params changed"


def _check_render_deterministic():
    from .conditioning import Camera
    from .field import FieldConfig, RadianceField, generate_rays, render

    import numpy as np

    field = RadianceField.create(FieldConfig(n_freq=3, hidden=(8,)), seed=2)
    cam = Camera(position=(0, 0, 2.0), look_at=(0, 0, 0), width=8, height=8,
                 near=1.0, far=3.0)
    a = render(field, generate_rays(cam), 8)
    b = render(field, generate_rays(cam), 8)
    assert np.array_equal(a.features, b.features), "re-render differs"


def _check_posed_identity():
    from .body import BodyParams, SyntheticBodyConfig, make_synthetic_body, skin
    from .field import FieldConfig, RadianceField, generate_rays, render
    from .scene import Avatar, orbit_cameras, render_posed

    import numpy as np

    body = make_synthetic_body(SyntheticBodyConfig(tessellation=1))
    field = RadianceField.create(FieldConfig(n_freq=3, hidden=(8,)), seed=2)
    mesh = skin(body, BodyParams.identity(body))
    center = 0.5 * (mesh.vertices.min(axis=0) + mesh.vertices.max(axis=0))
    cam = orbit_cameras(center, 2.4, 1, resolution=12, bound=1.4)[0]
    static = render(field, generate_rays(cam), 12)
    posed = render_posed(Avatar(body, field), BodyParams.identity(body),
                         cam, n_samples=12)
    diff = float(np.abs(posed.features - static.features).mean())
    assert diff < 1e-3, f"identity articulation moved the render by {diff}"


def _check_composition_identity():
    from .body import SyntheticBodyConfig, make_synthetic_body
    from .body import BodyParams, skin
    from .field import FieldConfig, RadianceField
    from .scene import Avatar, AvatarItem, Scene, orbit_cameras, render_composed, render_posed

    import numpy as np

    body = make_synthetic_body(SyntheticBodyConfig(tessellation=1))
    field = RadianceField.create(FieldConfig(n_freq=3, hidden=(8,)), seed=2)
    avatar = Avatar(body, field)
    mesh = skin(body, BodyParams.identity(body))
    center = 0.5 * (mesh.vertices.min(axis=0) + mesh.vertices.max(axis=0))
    cam = orbit_cameras(center, 2.4, 1, resolution=10, bound=1.4)[0]
    solo = render_posed(avatar, BodyParams.identity(body), cam, n_samples=10)
    composed = render_composed(Scene([AvatarItem(avatar)]), cam, n_samples=10)
    assert np.array_equal(solo.features, composed.features), \
        "composition is not transparent for a single identity item"


def _check_motion_round_trip():
    import tempfile

    from .body import BodyParams, SyntheticBodyConfig, make_synthetic_body
    from .scene import MotionClip, load_motion, save_motion

    import numpy as np

    body = make_synthetic_body(SyntheticBodyConfig(tessellation=1))
    pose = BodyParams.identity(body)
    pose.pose[1, 0] = 0.25
    clip = MotionClip(frames=[BodyParams.identity(body), pose], fps=24.0)
    with tempfile.TemporaryDirectory() as td:
        path = os.path.join(td, "clip.motion")
        save_motion(path, clip)
        back = load_motion(path, body)
        assert len(back) == 2, "frame count changed"
        assert np.array_equal(back.frames[1].pose, pose.pose), "pose changed"


_CHECKS = (
    ("rng-replay", _check_rng_replay),
    ("adam-fixed-point", _check_adam_fixed_point),
    ("checkpoint-round-trip", _check_checkpoint_round_trip),
    ("render-deterministic", _check_render_deterministic),
    ("posed-identity", _check_posed_identity),
    ("composition-identity", _check_composition_identity),
    ("motion-round-trip", _check_motion_round_trip),
)


def cmd_check(args) -> int:
    failed = 0
    for name, fn in _CHECKS:
        try:
            fn()
        except Exception as err:  # report every failing check, then exit 1
            failed += 1
            print(f"FAIL {name}: {err}")
        else:
            print(f"ok {name}")
    print(f"{len(_CHECKS) - failed}/{len(_CHECKS)} checks passed")
    return 1 if failed else 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_thread_cap(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s",
                        stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 1
    except Exception as err:
        message = str(err).splitlines()[0] if str(err) else type(err).__name__
        print(f"error: {message}", file=sys.stderr)
        if os.environ.get("SKELFIELD_TRACE"):
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
