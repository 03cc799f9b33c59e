import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from skelfield import body as bodymod
from skelfield.body import (
    ArchiveError,
    BodyError,
    BodyParams,
    SyntheticBodyConfig,
    forward_kinematics,
    joint_locations,
    load_body_archive,
    make_synthetic_body,
    rest_pose,
    rotation_from_axis_angle,
    save_body_archive,
    skin,
)


@pytest.fixture(scope="module")
def small_body():
    return make_synthetic_body(SyntheticBodyConfig(tessellation=1))


def test_rodrigues_against_scipy():
    rng = np.random.default_rng(0)
    aa = rng.normal(size=(50, 3)) * rng.uniform(0.01, 3.0, size=(50, 1))
    got = rotation_from_axis_angle(aa)
    want = Rotation.from_rotvec(aa).as_matrix()
    assert np.abs(got - want).max() < 1e-12


def test_rodrigues_small_angle_branch():
    aa = np.array([[1e-10, -2e-10, 5e-11], [0.0, 0.0, 0.0]])
    r = rotation_from_axis_angle(aa)
    assert np.allclose(r[1], np.eye(3))
    # R ~ I + [w]x to first order, smooth through zero
    assert np.abs(r[0] - np.eye(3)).max() < 1e-9
    assert r[0][0, 1] == pytest.approx(-aa[0, 2], abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3))
def test_rodrigues_is_rotation(vec):
    r = rotation_from_axis_angle(np.array(vec))
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-10)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-10)


def test_identity_pose_fk_is_identity(small_body):
    g = forward_kinematics(small_body, BodyParams.identity(small_body))
    assert np.abs(g - np.eye(4)).max() < 1e-12


def test_identity_pose_reproduces_template(small_body):
    posed = skin(small_body, BodyParams.identity(small_body))
    diff = np.abs(posed.vertices - small_body.template_vertices)
    assert diff.max() < 1e-6


def test_global_rigid_pose_is_rigid_motion(small_body):
    # rotating only the root plus translating must move every vertex rigidly
    params = BodyParams.identity(small_body)
    params.pose[0] = [0.3, 1.1, -0.4]
    params.global_translation = np.array([0.5, -0.2, 2.0])
    posed = skin(small_body, params)

    root = joint_locations(small_body, params.shape)[0]
    r = rotation_from_axis_angle(params.pose[0])
    expect = (small_body.template_vertices - root) @ r.T + root + params.global_translation
    assert np.abs(posed.vertices - expect).max() < 1e-5
    # every joint transform is that same rigid motion
    assert np.abs(posed.joint_transforms - posed.joint_transforms[0]).max() < 1e-10


def test_global_scale_about_origin(small_body):
    params = BodyParams.identity(small_body)
    params.global_scale = 2.5
    posed = skin(small_body, params)
    assert np.abs(posed.vertices - 2.5 * small_body.template_vertices).max() < 1e-5


def test_vertex_transform_inverses(small_body):
    rng = np.random.default_rng(3)
    params = BodyParams.identity(small_body)
    params.pose = rng.normal(scale=0.4, size=params.pose.shape)
    params.global_scale = 1.3
    params.global_translation = np.array([0.2, 0.1, -0.5])
    posed = skin(small_body, params)
    prod = posed.vertex_transforms @ posed.vertex_transform_inverses
    assert np.abs(prod - np.eye(4)).max() < 1e-6


def test_inverse_recovers_rest_position(small_body):
    rng = np.random.default_rng(4)
    params = BodyParams.identity(small_body)
    params.pose = rng.normal(scale=0.3, size=params.pose.shape)
    posed = skin(small_body, params)
    rest = rest_pose(small_body, params)
    ones = np.ones((rest.shape[0], 1))
    back = np.einsum(
        "nij,nj->ni", posed.vertex_transform_inverses, np.hstack([posed.vertices, ones])
    )[:, :3]
    assert np.abs(back - rest).max() < 1e-8


def test_posed_joints_track_regressed_vertices(small_body):
    rng = np.random.default_rng(5)
    params = BodyParams.identity(small_body)
    params.pose = rng.normal(scale=0.5, size=params.pose.shape)
    params.global_scale = 1.1
    params.global_translation = np.array([0.0, 0.3, 0.0])
    posed = skin(small_body, params)
    regressed = small_body.joint_regressor.astype(np.float64) @ posed.vertices
    assert np.abs(regressed - posed.posed_joints()).max() < 1e-5


def test_rest_pose_linear_in_shape(small_body):
    a = BodyParams.identity(small_body)
    b = BodyParams.identity(small_body)
    c = BodyParams.identity(small_body)
    a.shape[0], b.shape[3] = 1.0, 1.0
    c.shape[0], c.shape[3] = 1.0, 1.0
    base = rest_pose(small_body, BodyParams.identity(small_body))
    va, vb, vc = (rest_pose(small_body, p) for p in (a, b, c))
    assert np.abs((va - base) + (vb - base) - (vc - base)).max() < 1e-5


def test_joints_inside_support_bbox(small_body):
    joints = joint_locations(small_body, np.zeros(small_body.shape_dim))
    for j in range(small_body.joint_count):
        support = small_body.template_vertices[small_body.joint_regressor[j] > 0]
        lo, hi = support.min(axis=0), support.max(axis=0)
        assert np.all(joints[j] >= lo - 1e-6) and np.all(joints[j] <= hi + 1e-6)


def test_skinning_weight_rows_convex(small_body):
    w = small_body.skinning_weights
    assert w.min() >= 0.0
    assert np.abs(w.sum(axis=1) - 1.0).max() < 1e-5


def test_tessellation_scales_mesh_not_joints():
    lo = make_synthetic_body(SyntheticBodyConfig(tessellation=1))
    hi = make_synthetic_body(SyntheticBodyConfig(tessellation=3))
    assert hi.vertex_count > 2 * lo.vertex_count
    jlo = joint_locations(lo, np.zeros(lo.shape_dim))
    jhi = joint_locations(hi, np.zeros(hi.shape_dim))
    assert np.abs(jlo - jhi).max() < 1e-5


def test_synthetic_config_clamping():
    body = make_synthetic_body(SyntheticBodyConfig(tessellation=99, shape_dim=500))
    assert body.shape_dim == 16


def test_shape_mode_moves_joints_consistently(small_body):
    # mode 0 stretches height; regressed joints must follow the same field
    coeff = np.zeros(small_body.shape_dim)
    coeff[0] = 1.0
    j0 = joint_locations(small_body, np.zeros(small_body.shape_dim))
    j1 = joint_locations(small_body, coeff)
    pelvis_y = j0[0, 1]
    expect_dy = 0.12 * (j0[:, 1] - pelvis_y)
    assert np.abs((j1 - j0)[:, 1] - expect_dy).max() < 1e-4


def test_archive_round_trip_bit_exact(tmp_path, small_body):
    path = tmp_path / "body.sklb"
    save_body_archive(path, small_body)
    loaded = load_body_archive(path)
    for name in ("template_vertices", "faces", "shape_dirs", "pose_dirs",
                 "joint_regressor", "skinning_weights", "kinematic_parents"):
        assert np.array_equal(getattr(small_body, name), getattr(loaded, name)), name
    assert loaded.joint_names == small_body.joint_names
    # resaving the loaded body writes identical bytes
    path2 = tmp_path / "body2.sklb"
    save_body_archive(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_archive_rejects_bad_magic(tmp_path, small_body):
    path = tmp_path / "body.sklb"
    save_body_archive(path, small_body)
    data = bytearray(path.read_bytes())
    data[0] = ord("X")
    path.write_bytes(bytes(data))
    with pytest.raises(ArchiveError, match="magic"):
        load_body_archive(path)


def test_archive_rejects_truncation(tmp_path, small_body):
    path = tmp_path / "body.sklb"
    save_body_archive(path, small_body)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 17])
    with pytest.raises(ArchiveError, match="truncated"):
        load_body_archive(path)


def test_archive_rejects_trailing_bytes(tmp_path, small_body):
    path = tmp_path / "body.sklb"
    save_body_archive(path, small_body)
    path.write_bytes(path.read_bytes() + b"\x00\x00")
    with pytest.raises(ArchiveError, match="trailing"):
        load_body_archive(path)


def test_archive_rejects_bad_weights(tmp_path, small_body):
    broken = make_synthetic_body(SyntheticBodyConfig(tessellation=1))
    broken.skinning_weights = broken.skinning_weights * 0.5
    path = tmp_path / "body.sklb"
    with pytest.raises(BodyError, match="skinning_weights"):
        save_body_archive(path, broken)


def test_validate_rejects_bad_parent(small_body):
    broken = make_synthetic_body(SyntheticBodyConfig(tessellation=1))
    broken.kinematic_parents = broken.kinematic_parents.copy()
    broken.kinematic_parents[5] = 10  # parent after child
    with pytest.raises(BodyError, match="parent"):
        broken.validate()


def test_params_validation(small_body):
    params = BodyParams.identity(small_body)
    params.global_scale = -1.0
    with pytest.raises(BodyError, match="global_scale"):
        skin(small_body, params)
    params = BodyParams.identity(small_body)
    params.pose[3, 0] = np.nan
    with pytest.raises(BodyError, match="finite"):
        skin(small_body, params)
