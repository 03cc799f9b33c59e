import numpy as np
import pytest

from skelfield import conditioning as cond
from skelfield.body import BodyParams, SyntheticBodyConfig, make_synthetic_body, skin
from skelfield.conditioning import (
    Camera,
    CameraError,
    TopologyError,
    camera_rays,
    default_topology,
    keypoint_world_positions,
    load_topology,
    make_conditioning_map,
    map_keypoints,
    occlusion_cull,
    project,
    rasterize_skeleton,
    render_silhouette,
    save_topology,
)


@pytest.fixture(scope="module")
def posed_body():
    body = make_synthetic_body(SyntheticBodyConfig(tessellation=1))
    return skin(body, BodyParams.identity(body))


def front_camera(width=64, height=64, dist=3.2):
    return Camera(
        position=(0.0, 0.95, dist),
        look_at=(0.0, 0.95, 0.0),
        vertical_fov=0.7,
        width=width,
        height=height,
    )


def test_camera_validation():
    with pytest.raises(CameraError, match="resolution"):
        Camera((0, 0, 1), (0, 0, 0), width=0)
    with pytest.raises(CameraError, match="fov"):
        Camera((0, 0, 1), (0, 0, 0), vertical_fov=4.0)
    with pytest.raises(CameraError, match="coincide"):
        Camera((0, 0, 1), (0, 0, 1))
    with pytest.raises(CameraError, match="parallel"):
        Camera((0, 0, 1), (0, 0, 0), up=(0, 0, 1))
    with pytest.raises(CameraError, match="near"):
        Camera((0, 0, 1), (0, 0, 0), near=5.0, far=2.0)


def test_project_center_and_known_point():
    cam = Camera((0, 0, 5), (0, 0, 0), vertical_fov=np.pi / 2, width=101, height=101)
    pix, depth, valid = project(cam, np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
    assert np.allclose(pix[0], [50.5, 50.5])  # exact image center
    assert depth[0] == pytest.approx(5.0)
    assert valid.all()
    # y=1 at depth 5 with tan(fov/2)=1: 1/5 of the half-height above center
    assert pix[1, 0] == pytest.approx(50.5)
    assert pix[1, 1] == pytest.approx((1.0 - 0.2) * 50.5)


def test_project_rejects_behind_and_too_close():
    cam = Camera((0, 0, 5), (0, 0, 0), near=0.5)
    pts = np.array([[0.0, 0.0, 10.0], [0.0, 0.0, 4.8], [0.0, 0.0, 4.0]])
    _, _, valid = project(cam, pts)
    assert valid.tolist() == [False, False, True]


def test_center_ray_points_at_look_at():
    cam = Camera((1.0, 2.0, 5.0), (0.5, 0.0, -1.0), width=65, height=65)
    origins, dirs = camera_rays(cam, np.array([[32.5, 32.5]]))
    fwd = np.subtract(cam.look_at, cam.position, dtype=float)
    fwd /= np.linalg.norm(fwd)
    assert np.allclose(origins[0], cam.position)
    assert np.allclose(dirs[0], fwd, atol=1e-12)


def test_rays_and_projection_agree():
    cam = Camera((0.3, 1.0, 4.0), (0.0, 0.8, 0.0), vertical_fov=0.9, width=37, height=53)
    rng = np.random.default_rng(2)
    pixels = np.stack(
        [rng.uniform(0, cam.width, 40), rng.uniform(0, cam.height, 40)], axis=-1
    )
    origins, dirs = camera_rays(cam, pixels)
    pts = origins + dirs * rng.uniform(1.0, 6.0, size=(40, 1))
    back, _, valid = project(cam, pts)
    assert valid.all()
    assert np.abs(back - pixels).max() < 1e-9


def test_map_keypoints_is_linear():
    topo = default_topology()
    rng = np.random.default_rng(0)
    j1, j2 = rng.normal(size=(2, 24, 3))
    lhs = map_keypoints(topo, j1 + j2)
    rhs = map_keypoints(topo, j1) + map_keypoints(topo, j2)
    assert np.allclose(lhs, rhs)
    # pure joint copies for the limb keypoints
    assert np.allclose(map_keypoints(topo, j1)[1], j1[12])


def test_facial_offsets_ride_head_rotation():
    body = make_synthetic_body(SyntheticBodyConfig(tessellation=1))
    topo = default_topology()
    straight = skin(body, BodyParams.identity(body))
    nose_straight = keypoint_world_positions(topo, straight)[0]
    head = straight.posed_joints()[15]
    assert nose_straight[2] > head[2] + 0.05  # proud of the face

    params = BodyParams.identity(body)
    params.pose[15] = [0.0, np.pi / 2, 0.0]  # turn the head
    turned = skin(body, params)
    nose_turned = keypoint_world_positions(topo, turned)[0]
    # rotating +90 degrees about y sends +z to +x
    assert nose_turned[0] > head[0] + 0.05
    assert abs(nose_turned[2] - head[2]) < 0.02


def test_occlusion_front_vs_back(posed_body):
    topo = default_topology()
    world = keypoint_world_positions(topo, posed_body)
    front = occlusion_cull(world, topo.facial, posed_body, front_camera())
    assert front[0]  # nose seen from the front
    assert front[~topo.facial].all()

    back_cam = Camera((0.0, 0.95, -3.2), (0.0, 0.95, 0.0), vertical_fov=0.7,
                      width=64, height=64)
    back = occlusion_cull(world, topo.facial, posed_body, back_cam)
    assert not back[0]  # nose hidden by the skull
    assert back[~topo.facial].all()  # limb markers drawn through the body


def test_occlusion_behind_camera_invisible(posed_body):
    topo = default_topology()
    world = keypoint_world_positions(topo, posed_body)
    cam = Camera((0.0, 0.95, -0.5), (0.0, 0.95, -4.0), width=32, height=32)
    vis = occlusion_cull(world, topo.facial, posed_body, cam)
    assert not vis.any()


def test_rasterize_black_when_invisible():
    topo = default_topology()
    img = rasterize_skeleton(
        topo, np.full((18, 2), 32.0), np.zeros(18, bool), 64, 64
    )
    assert img.shape == (64, 64, 3)
    assert not img.any()


def test_rasterize_keypoint_disc_and_color():
    topo = default_topology()
    pix = np.full((18, 2), -100.0)
    vis = np.zeros(18, bool)
    pix[4] = [20.0, 30.0]
    vis[4] = True
    img = rasterize_skeleton(topo, pix, vis, 64, 64, point_radius=3)
    assert np.array_equal(img[30, 20], topo.keypoint_colors[4])
    assert img[30, 23].any() and not img[30, 24].any()  # radius honored
    assert img[27, 20].any() and not img[26, 20].any()


def test_rasterize_bone_needs_both_endpoints():
    topo = default_topology()
    pix = np.full((18, 2), -100.0)
    vis = np.zeros(18, bool)
    pix[1], pix[2] = [10.0, 10.0], [50.0, 10.0]
    vis[1] = True
    img = rasterize_skeleton(topo, pix, vis, 64, 64)
    assert not img[10, 30].any()  # midpoint empty without the second endpoint
    vis[2] = True
    img = rasterize_skeleton(topo, pix, vis, 64, 64)
    assert img[10, 30].any()


def test_rasterize_deterministic(posed_body):
    topo = default_topology()
    a = make_conditioning_map(topo, posed_body, front_camera())
    b = make_conditioning_map(topo, posed_body, front_camera())
    assert np.array_equal(a.image, b.image)
    assert a.image.any()


def test_silhouette_contains_projected_vertices(posed_body):
    cam = front_camera(96, 96)
    mask = render_silhouette(posed_body, cam)
    assert mask.shape == (96, 96)
    cover = mask.mean()
    assert 0.02 < cover < 0.6
    assert not mask[0, 0] and not mask[-1, -1]

    # every surface vertex lands inside the mask or within one pixel of it
    # (tangent vertices on thin limbs can round half a pixel outside)
    dilated = mask.copy()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            dilated |= np.roll(np.roll(mask, dy, axis=0), dx, axis=1)
    pix, _, valid = project(cam, posed_body.vertices)
    assert valid.all()
    px = np.clip(np.rint(pix).astype(int), 0, 95)
    assert dilated[px[:, 1], px[:, 0]].all()
    center_pix, _, _ = project(cam, np.array([[0.0, 1.1, 0.0]]))
    cx, cy = np.rint(center_pix[0]).astype(int)
    assert mask[cy, cx]


def test_conditioning_map_integration(posed_body):
    topo = default_topology()
    cam = front_camera()
    cmap = make_conditioning_map(topo, posed_body, cam)
    assert cmap.image.any()
    assert cmap.visible[[1, 2, 5, 8, 11]].all()
    # neck sits near the vertical midline
    assert abs(cmap.keypoints[1, 0] - 32.0) < 2.0
    # background stays exact black outside strokes
    colors = np.unique(cmap.image.reshape(-1, 3), axis=0)
    assert any((c == 0).all() for c in colors)


def test_topology_round_trip(tmp_path):
    topo = default_topology()
    path = tmp_path / "topo.txt"
    save_topology(path, topo)
    loaded = load_topology(path)
    assert loaded.names == topo.names
    assert np.array_equal(loaded.joint_map, topo.joint_map)
    assert np.array_equal(loaded.bone_edges, topo.bone_edges)
    assert np.array_equal(loaded.facial, topo.facial)
    assert np.array_equal(loaded.offsets, topo.offsets)
    assert np.array_equal(loaded.offset_joints, topo.offset_joints)
    assert np.array_equal(loaded.keypoint_colors, topo.keypoint_colors)
    path2 = tmp_path / "topo2.txt"
    save_topology(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_topology_rejects_bad_rows(tmp_path):
    topo = default_topology()
    topo.joint_map = topo.joint_map.copy()
    topo.joint_map[3] *= 0.5
    with pytest.raises(TopologyError, match="sum to 1"):
        topo.validate()


def test_topology_parse_errors(tmp_path):
    path = tmp_path / "topo.txt"
    path.write_text("SKLF-TOPO v2\n")
    with pytest.raises(TopologyError, match="magic"):
        load_topology(path)
    path.write_text(
        "SKLF-TOPO v1\njoints 2\nkeypoints 1\nbones 0\n"
        "keypoint a facial=0 color=1,2,3 map=0:1 offset_joint=-1 offset=0,0,0\n"
        "weird x\n"
    )
    with pytest.raises(TopologyError, match="unknown record"):
        load_topology(path)
    path.write_text("SKLF-TOPO v1\njoints 2\nkeypoints 2\nbones 0\n"
                    "keypoint a facial=0 color=1,2,3 map=0:1\n")
    with pytest.raises(TopologyError, match="declared"):
        load_topology(path)


def test_default_topology_shape():
    topo = default_topology()
    assert topo.keypoint_count == 18
    assert topo.bone_edges.shape == (17, 2)
    assert topo.facial.sum() == 5
    topo.validate()
