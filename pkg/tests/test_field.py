import numpy as np
import pytest

from skelfield import field as fieldmod
from skelfield import smallmlp
from skelfield.articulation import DensityWeightNet, DrnConfig
from skelfield.body import BodyParams, SyntheticBodyConfig, make_synthetic_body, skin
from skelfield.conditioning import Camera
from skelfield.field import (
    CheckpointError,
    FieldConfig,
    RadianceField,
    RenderError,
    backprop_render,
    generate_rays,
    load_checkpoint,
    render,
    sample_along_rays,
    save_checkpoint,
)
from skelfield.seeds import derive_rng


def tiny_camera(n=4):
    return Camera((0.0, 0.9, 2.5), (0.0, 0.9, 0.0), vertical_fov=0.6,
                  width=n, height=n, near=1.0, far=4.0)


def make_field(dtype=np.float64, seed=0, perturb=0.3, **kw):
    cfg = FieldConfig(n_freq=kw.pop("n_freq", 3), hidden=kw.pop("hidden", (10, 8)),
                      channels=kw.pop("channels", 3), **kw)
    f = RadianceField.create(cfg, seed=seed, dtype=dtype)
    if perturb:
        rng = np.random.default_rng(seed + 99)
        f.params = (f.params + perturb * rng.normal(size=f.params.size)).astype(dtype)
    return f


def reference_quadrature(tau, feat, delta, bg):
    """Scalar-loop oracle for the vectorized renderer."""
    m, n = tau.shape
    out = np.zeros((m, feat.shape[2]))
    opacity = np.zeros(m)
    for r in range(m):
        trans = 1.0
        acc = np.zeros(feat.shape[2])
        for i in range(n):
            alpha = 1.0 - np.exp(-tau[r, i] * delta[r, i])
            acc += trans * alpha * feat[r, i]
            trans *= np.exp(-tau[r, i] * delta[r, i])
        out[r] = acc + trans * bg
        opacity[r] = 1.0 - trans
    return out, opacity


def test_fresh_field_is_uniformly_transparent():
    cfg = FieldConfig(density_bias=-2.0, channels=4)
    f = RadianceField.create(cfg, seed=3)
    pts = np.random.default_rng(0).normal(size=(50, 3))
    tau, feat = f.query(pts)
    want = smallmlp.softplus(np.array([-2.0], dtype=np.float32))[0]
    assert np.all(tau == want)
    assert np.all(feat == 0.5)


def test_constant_field_matches_closed_form():
    cfg = FieldConfig(density_bias=-1.0, channels=3, background=(0.2, 0.4, 0.6))
    f = RadianceField.create(cfg, seed=1, dtype=np.float64)
    rays = generate_rays(tiny_camera(3), near=1.0, far=3.0)
    n = 16
    out = render(f, rays, n_samples=n, jitter_seed=None)
    t, _ = sample_along_rays(rays, n, None)
    c0 = float(smallmlp.softplus(np.array([-1.0]))[0])
    # constant density: transmittance closes in one exponential
    want_opacity = 1.0 - np.exp(-c0 * (3.0 - t[:, 0]))
    assert np.abs(out.opacity - want_opacity).max() < 1e-12
    bg = np.array([0.2, 0.4, 0.6])
    want_feat = want_opacity[:, None] * 0.5 + (1.0 - want_opacity)[:, None] * bg
    assert np.abs(out.features - want_feat).max() < 1e-12


def test_render_matches_scalar_reference():
    f = make_field()
    rays = generate_rays(tiny_camera(3), near=1.5, far=3.5)
    out = render(f, rays, n_samples=12, jitter_seed=7, keep_cache=True)
    cache = out.cache
    want_feat, want_op = reference_quadrature(
        cache.tau, cache.feat, cache.delta, cache.background
    )
    assert np.abs(out.features - want_feat).max() < 1e-12
    assert np.abs(out.opacity - want_op).max() < 1e-12


def test_quadrature_refinement_converges():
    f = make_field(seed=5)
    rays = generate_rays(tiny_camera(2), near=1.2, far=3.8)
    coarse = render(f, rays, n_samples=64, jitter_seed=None)
    fine = render(f, rays, n_samples=2048, jitter_seed=None)
    assert np.abs(coarse.features - fine.features).max() < 5e-3
    finer = render(f, rays, n_samples=256, jitter_seed=None)
    # midpoint quadrature error shrinks with sample count
    assert np.abs(finer.features - fine.features).max() < np.abs(
        coarse.features - fine.features
    ).max()


def test_stratified_samples_cover_bins():
    rays = generate_rays(tiny_camera(2), near=1.0, far=3.0)
    t, delta = sample_along_rays(rays, 8, jitter_seed=4)
    per_bin = (3.0 - 1.0) / 8
    lo = 1.0 + np.arange(8) * per_bin
    assert np.all(t >= lo) and np.all(t < lo + per_bin)
    assert np.all(delta > 0)
    assert np.abs(delta.sum(axis=1) - (3.0 - t[:, 0])).max() < 1e-12
    again, _ = sample_along_rays(rays, 8, jitter_seed=4)
    assert np.array_equal(t, again)
    other, _ = sample_along_rays(rays, 8, jitter_seed=5)
    assert not np.array_equal(t, other)


def test_render_validation():
    f = make_field()
    rays = generate_rays(tiny_camera(2), near=3.0, far=1.0)
    with pytest.raises(RenderError, match="near"):
        render(f, rays, n_samples=4)
    rays = generate_rays(tiny_camera(2), near=1.0, far=3.0)
    with pytest.raises(RenderError, match="samples"):
        render(f, rays, n_samples=1)
    with pytest.raises(RenderError, match="background"):
        render(f, rays, n_samples=4, background=np.zeros(7))
    with pytest.raises(RenderError, match="channels"):
        FieldConfig(channels=0)
    with pytest.raises(RenderError, match="background"):
        FieldConfig(channels=3, background=(1.0,))


def test_gradients_match_finite_differences():
    f = make_field(seed=11)
    rays = generate_rays(tiny_camera(3), near=1.4, far=3.4)
    rng = np.random.default_rng(0)
    g_feat = rng.normal(size=(len(rays), 3))
    g_op = rng.normal(size=len(rays))

    out = render(f, rays, n_samples=6, jitter_seed=2, keep_cache=True)
    grads = backprop_render(out.cache, g_feat, g_op)

    def loss():
        o = render(f, rays, n_samples=6, jitter_seed=2)
        return float(np.sum(o.features * g_feat) + np.sum(o.opacity * g_op))

    h = 1e-6
    fd = np.zeros_like(f.params)
    for i in range(f.params.size):
        orig = f.params[i]
        f.params[i] = orig + h
        up = loss()
        f.params[i] = orig - h
        dn = loss()
        f.params[i] = orig
        fd[i] = (up - dn) / (2 * h)

    denom = np.maximum(np.abs(fd), 1e-7)
    rel = np.abs(grads.field - fd) / denom
    assert np.quantile(rel, 0.99) < 1e-5
    assert rel.max() < 1e-3


def test_gradients_with_articulation_hook():
    from skelfield.articulation import DeformationField

    body = make_synthetic_body(SyntheticBodyConfig(tessellation=1))
    posed = skin(body, BodyParams.identity(body))
    net = DensityWeightNet.create(
        DrnConfig(n_freq=2, hidden=(8,), sharpness=0.05, init_shell=2.0),
        seed=4, dtype=np.float64,
    )
    rng = np.random.default_rng(1)
    net.params = net.params + 0.1 * rng.normal(size=net.params.size)
    hook = DeformationField(posed, net)
    f = make_field(seed=12)
    rays = generate_rays(tiny_camera(3), near=1.4, far=3.4)
    g_feat = rng.normal(size=(len(rays), 3))

    out = render(f, rays, n_samples=5, jitter_seed=3, deformation=hook, keep_cache=True)
    grads = backprop_render(out.cache, g_feat)
    assert grads.deformation is not None

    def loss():
        o = render(f, rays, n_samples=5, jitter_seed=3, deformation=hook)
        return float(np.sum(o.features * g_feat))

    h = 1e-6
    for params, got in ((f.params, grads.field), (net.params, grads.deformation)):
        fd = np.zeros_like(params)
        for i in range(params.size):
            orig = params[i]
            params[i] = orig + h
            up = loss()
            params[i] = orig - h
            dn = loss()
            params[i] = orig
            fd[i] = (up - dn) / (2 * h)
        denom = np.maximum(np.abs(fd), 1e-7)
        rel = np.abs(got - fd) / denom
        assert np.quantile(rel, 0.99) < 1e-4


def test_checkpoint_round_trip(tmp_path):
    f = make_field(dtype=np.float32, perturb=0.2)
    path = tmp_path / "field.sklf"
    save_checkpoint(path, f)
    loaded, net = load_checkpoint(path)
    assert net is None
    assert loaded.config == f.config
    assert np.array_equal(loaded.params, f.params)
    path2 = tmp_path / "again.sklf"
    save_checkpoint(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_with_deformation_net(tmp_path):
    f = make_field(dtype=np.float32)
    net = DensityWeightNet.create(DrnConfig(), seed=2)
    net.params = net.params + np.float32(0.01)
    path = tmp_path / "anim.sklf"
    save_checkpoint(path, f, net)
    loaded_f, loaded_net = load_checkpoint(path)
    assert loaded_net is not None
    assert loaded_net.config == net.config
    assert np.array_equal(loaded_net.params, net.params)
    assert np.array_equal(loaded_f.params, f.params)


def test_checkpoint_rejects_corruption(tmp_path):
    f = make_field(dtype=np.float32)
    path = tmp_path / "field.sklf"
    save_checkpoint(path, f)
    data = path.read_bytes()

    bad = tmp_path / "bad.sklf"
    bad.write_bytes(b"XKLF" + data[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad)
    bad.write_bytes(data[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(bad)
    bad.write_bytes(data + b"\x00\x00\x00\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(bad)


def test_generate_rays_bounds():
    cam = tiny_camera(4)
    rays = generate_rays(cam)
    assert len(rays) == 16
    assert np.all(rays.near == cam.near) and np.all(rays.far == cam.far)
    tight = generate_rays(cam, near=2.0, far=2.5)
    assert np.all(tight.near == 2.0) and np.all(tight.far == 2.5)
    assert np.abs(np.linalg.norm(tight.directions, axis=1) - 1.0).max() < 1e-12
