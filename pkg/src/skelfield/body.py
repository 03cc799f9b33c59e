"""Articulated body model: blend shapes, kinematics, skinning, archive I/O.

The body is a template mesh plus linear shape/pose blendshapes, a convex
joint regressor, a kinematic tree and per-vertex skinning weights. Posing
runs shape blending, forward kinematics and linear blend skinning, and also
returns per-vertex affine transforms with inverses so points sampled near the
posed surface can be pulled back to the canonical body frame.

A procedural capsule-limb humanoid is included so the whole pipeline can run
without any external asset.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

ARCHIVE_MAGIC = b"SKLF-BODY v1"


class BodyError(ValueError):
    """Invalid body data or parameters."""


class ArchiveError(BodyError):
    """Malformed body archive file."""


class SkinningError(BodyError):
    """Degenerate skinning transform (non-invertible vertex matrix)."""


def rotation_from_axis_angle(axis_angle: np.ndarray) -> np.ndarray:
    """Rodrigues formula, batched.

    Args:
        axis_angle: (..., 3) rotation vectors; magnitude is the angle.

    Returns:
        (..., 3, 3) rotation matrices. Near zero angle the sin/cos factors
        switch to second-order Taylor expansions so the result stays smooth
        and exactly orthogonal to first order.
    """
    aa = np.asarray(axis_angle, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1)
    theta2 = theta * theta

    small = theta < 1e-8
    with np.errstate(divide="ignore", invalid="ignore"):
        k1 = np.where(small, 1.0 - theta2 / 6.0, np.sin(theta) / np.where(small, 1.0, theta))
        k2 = np.where(
            small, 0.5 - theta2 / 24.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, theta2)
        )

    x, y, z = aa[..., 0], aa[..., 1], aa[..., 2]
    zeros = np.zeros_like(x)
    cross = np.stack(
        [
            np.stack([zeros, -z, y], axis=-1),
            np.stack([z, zeros, -x], axis=-1),
            np.stack([-y, x, zeros], axis=-1),
        ],
        axis=-2,
    )
    eye = np.broadcast_to(np.eye(3), cross.shape)
    return eye + k1[..., None, None] * cross + k2[..., None, None] * (cross @ cross)


@dataclass
class ArticulatedBody:
    """Template mesh with blendshapes, joint regressor and skinning weights.

    Shapes (N vertices, K joints, F faces, S shape modes, P pose features):
        template_vertices: (N, 3) float32
        faces: (F, 3) int32
        shape_dirs: (N, 3, S) float32
        pose_dirs: (N, 3, P) float32, P = 9*(K-1)
        joint_regressor: (K, N) float32, rows convex
        skinning_weights: (N, K) float32, rows convex
        kinematic_parents: (K,) int32, root sentinel -1, parents[k] < k
    """

    template_vertices: np.ndarray
    faces: np.ndarray
    shape_dirs: np.ndarray
    pose_dirs: np.ndarray
    joint_regressor: np.ndarray
    skinning_weights: np.ndarray
    kinematic_parents: np.ndarray
    joint_names: tuple[str, ...] = ()

    @property
    def vertex_count(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def joint_count(self) -> int:
        return self.kinematic_parents.shape[0]

    @property
    def shape_dim(self) -> int:
        return self.shape_dirs.shape[2]

    def validate(self) -> None:
        n, k = self.vertex_count, self.joint_count
        if self.template_vertices.shape != (n, 3):
            raise BodyError(f"template_vertices shape {self.template_vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise BodyError(f"faces shape {self.faces.shape}")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            bad = np.unique(self.faces[(self.faces < 0) | (self.faces >= n)])
            raise BodyError(f"face indices out of range: {bad[:8].tolist()}")
        if self.shape_dirs.shape[:2] != (n, 3):
            raise BodyError(f"shape_dirs shape {self.shape_dirs.shape}")
        p = 9 * (k - 1)
        if self.pose_dirs.shape != (n, 3, p):
            raise BodyError(f"pose_dirs shape {self.pose_dirs.shape}, expected {(n, 3, p)}")
        if self.joint_regressor.shape != (k, n):
            raise BodyError(f"joint_regressor shape {self.joint_regressor.shape}")
        if self.skinning_weights.shape != (n, k):
            raise BodyError(f"skinning_weights shape {self.skinning_weights.shape}")
        if self.kinematic_parents[0] != -1:
            raise BodyError("kinematic_parents[0] must be -1 (root)")
        for j in range(1, k):
            parent = int(self.kinematic_parents[j])
            if not 0 <= parent < j:
                raise BodyError(f"joint {j}: parent {parent} must precede it in the tree")

        for name, mat in [("joint_regressor", self.joint_regressor),
                          ("skinning_weights", self.skinning_weights)]:
            if mat.min() < -1e-5:
                rows = np.unique(np.nonzero(mat < -1e-5)[0])
                raise BodyError(f"{name}: negative entries in rows {rows[:8].tolist()}")
            sums = mat.sum(axis=1)
            bad = np.nonzero(np.abs(sums - 1.0) > 1e-4)[0]
            if bad.size:
                raise BodyError(
                    f"{name}: rows {bad[:8].tolist()} sum to {sums[bad[:4]].tolist()}"
                )


@dataclass
class BodyParams:
    """Pose/shape configuration for one body instance.

    shape: (S,) blendshape coefficients
    pose: (K, 3) per-joint axis-angle, root included
    global_scale, global_translation: rigid placement applied after skinning
    """

    shape: np.ndarray
    pose: np.ndarray
    global_scale: float = 1.0
    global_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def identity(cls, body: ArticulatedBody) -> "BodyParams":
        return cls(
            shape=np.zeros(body.shape_dim),
            pose=np.zeros((body.joint_count, 3)),
        )

    def validate(self, body: ArticulatedBody) -> None:
        if self.shape.shape != (body.shape_dim,):
            raise BodyError(f"shape coefficients {self.shape.shape} != ({body.shape_dim},)")
        if self.pose.shape != (body.joint_count, 3):
            raise BodyError(f"pose {self.pose.shape} != ({body.joint_count}, 3)")
        if not (np.isfinite(self.global_scale) and self.global_scale > 0):
            raise BodyError(f"global_scale must be finite positive, got {self.global_scale}")
        if not (np.all(np.isfinite(self.shape)) and np.all(np.isfinite(self.pose))
                and np.all(np.isfinite(self.global_translation))):
            raise BodyError("non-finite body parameters")

    def with_pose(self, pose: np.ndarray) -> "BodyParams":
        return replace(self, pose=np.asarray(pose, dtype=np.float64))


@dataclass
class PosedMesh:
    """Output of skinning: posed geometry plus per-vertex affine transforms.

    vertices: (N, 3) posed positions in world space
    faces: (F, 3)
    joint_transforms: (K, 4, 4) rigid canonical-to-body transforms G_k
        (identity pose gives the identity for every joint)
    vertex_transforms: (N, 4, 4) full canonical-to-world affine per vertex,
        global scale/translation folded in
    vertex_transform_inverses: (N, 4, 4)
    rest_joints: (K, 3) joint centers in the canonical frame
    """

    vertices: np.ndarray
    faces: np.ndarray
    joint_transforms: np.ndarray
    vertex_transforms: np.ndarray
    vertex_transform_inverses: np.ndarray
    rest_joints: np.ndarray
    global_scale: float
    global_translation: np.ndarray

    def posed_joints(self) -> np.ndarray:
        """(K, 3) joint centers in world space."""
        moved = self.joint_transforms[:, :3, :3] @ self.rest_joints[..., None]
        moved = moved[..., 0] + self.joint_transforms[:, :3, 3]
        return self.global_scale * moved + self.global_translation

    def joint_world_rotations(self) -> np.ndarray:
        """(K, 3, 3) world-space rotation of each joint frame."""
        return self.joint_transforms[:, :3, :3]


def rest_pose(body: ArticulatedBody, params: BodyParams) -> np.ndarray:
    """Canonical-space vertices after shape and pose blendshapes.

    Returns (N, 3) float64: template + shape_dirs.shape_coeffs +
    pose_dirs.(vec of per-joint rotation offsets R_k - I, root excluded).
    """
    verts = body.template_vertices.astype(np.float64)
    if body.shape_dim:
        verts = verts + body.shape_dirs.astype(np.float64) @ params.shape
    rot = rotation_from_axis_angle(params.pose[1:])
    feat = (rot - np.eye(3)).reshape(-1)
    if feat.size:
        verts = verts + body.pose_dirs.astype(np.float64) @ feat
    return verts


def joint_locations(body: ArticulatedBody, shape: np.ndarray) -> np.ndarray:
    """(K, 3) canonical joint centers regressed from the shaped template."""
    shaped = body.template_vertices.astype(np.float64)
    if body.shape_dim:
        shaped = shaped + body.shape_dirs.astype(np.float64) @ np.asarray(shape, np.float64)
    return body.joint_regressor.astype(np.float64) @ shaped


def forward_kinematics(body: ArticulatedBody, params: BodyParams) -> np.ndarray:
    """Per-joint canonical-to-body transforms G_k, composed root to leaf.

    Returns (K, 4, 4). Each G_k carries points rigidly attached below joint k
    from the canonical frame into the posed body frame; at identity pose every
    G_k is exactly the identity matrix.
    """
    joints = joint_locations(body, params.shape)
    rots = rotation_from_axis_angle(params.pose)
    k = body.joint_count

    # chain transforms A_k: local frame of joint k -> body frame
    chained = np.zeros((k, 4, 4))
    chained[:, 3, 3] = 1.0
    chained[0, :3, :3] = rots[0]
    chained[0, :3, 3] = joints[0]
    for j in range(1, k):
        parent = int(body.kinematic_parents[j])
        local = np.eye(4)
        local[:3, :3] = rots[j]
        local[:3, 3] = joints[j] - joints[parent]
        chained[j] = chained[parent] @ local

    # subtract the rest joint so canonical points map directly
    result = chained.copy()
    shift = chained[:, :3, :3] @ joints[..., None]
    result[:, :3, 3] -= shift[..., 0]
    return result


def skin(body: ArticulatedBody, params: BodyParams) -> PosedMesh:
    """Pose the body: blendshapes, kinematics, linear blend skinning.

    Every vertex gets its own affine transform (the weight-blended mix of
    joint transforms, with global scale/translation composed on top) and the
    analytic inverse of that transform.
    """
    params.validate(body)
    verts_rest = rest_pose(body, params)
    joints = joint_locations(body, params.shape)
    g = forward_kinematics(body, params)

    weights = body.skinning_weights.astype(np.float64)
    blended = (weights @ g.reshape(body.joint_count, 16)).reshape(-1, 4, 4)

    s = float(params.global_scale)
    t = np.asarray(params.global_translation, dtype=np.float64)
    world = blended.copy()
    world[:, :3, :] *= s
    world[:, :3, 3] += t

    lin = world[:, :3, :3]
    det = np.linalg.det(lin)
    bad = np.nonzero(np.abs(det) < 1e-12)[0]
    if bad.size:
        raise SkinningError(
            f"singular vertex transforms at vertices {bad[:8].tolist()} "
            f"(|det| ~ {np.abs(det[bad[:4]]).tolist()})"
        )
    lin_inv = np.linalg.inv(lin)
    inverses = np.zeros_like(world)
    inverses[:, 3, 3] = 1.0
    inverses[:, :3, :3] = lin_inv
    inverses[:, :3, 3] = -(lin_inv @ world[:, :3, 3][..., None])[..., 0]

    posed = (world[:, :3, :3] @ verts_rest[..., None])[..., 0] + world[:, :3, 3]

    return PosedMesh(
        vertices=posed,
        faces=body.faces,
        joint_transforms=g,
        vertex_transforms=world,
        vertex_transform_inverses=inverses,
        rest_joints=joints,
        global_scale=s,
        global_translation=t,
    )


# ---------------------------------------------------------------------------
# archive format: magic, u64 counts (N K F S P), f32 arrays, i32 arrays

_HEADER = struct.Struct("<5Q")


def save_body_archive(path, body: ArticulatedBody) -> None:
    body.validate()
    n, k, f = body.vertex_count, body.joint_count, body.faces.shape[0]
    s, p = body.shape_dim, body.pose_dirs.shape[2]
    names = "\n".join(body.joint_names).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        fh.write(_HEADER.pack(n, k, f, s, p))
        for arr in (body.template_vertices, body.shape_dirs, body.pose_dirs,
                    body.joint_regressor, body.skinning_weights):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(body.faces, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(body.kinematic_parents, dtype="<i4").tobytes())
        fh.write(struct.pack("<I", len(names)))
        fh.write(names)


def load_body_archive(path) -> ArticulatedBody:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(ARCHIVE_MAGIC):
        raise ArchiveError(f"{path}: bad magic {data[:12]!r}")
    off = len(ARCHIVE_MAGIC)
    if len(data) < off + _HEADER.size:
        raise ArchiveError(f"{path}: truncated header")
    n, k, f, s, p = _HEADER.unpack_from(data, off)
    off += _HEADER.size
    if k < 1 or n < 1:
        raise ArchiveError(f"{path}: empty body (N={n}, K={k})")
    if p != 9 * (k - 1):
        raise ArchiveError(f"{path}: pose feature count {p} != 9*(K-1) = {9 * (k - 1)}")

    def take(count, dtype):
        nonlocal off
        nbytes = count * 4
        if off + nbytes > len(data):
            raise ArchiveError(f"{path}: truncated at byte {off}, need {nbytes} more")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=off).copy()
        off += nbytes
        return arr

    body = ArticulatedBody(
        template_vertices=take(n * 3, "<f4").reshape(n, 3),
        shape_dirs=None,  # placeholder, ordered reads below
        pose_dirs=None,
        joint_regressor=None,
        skinning_weights=None,
        faces=None,
        kinematic_parents=None,
    )
    body.shape_dirs = take(n * 3 * s, "<f4").reshape(n, 3, s)
    body.pose_dirs = take(n * 3 * p, "<f4").reshape(n, 3, p)
    body.joint_regressor = take(k * n, "<f4").reshape(k, n)
    body.skinning_weights = take(n * k, "<f4").reshape(n, k)
    body.faces = take(f * 3, "<i4").reshape(f, 3)
    body.kinematic_parents = take(k, "<i4")
    if off + 4 > len(data):
        raise ArchiveError(f"{path}: truncated joint name block")
    (name_len,) = struct.unpack_from("<I", data, off)
    off += 4
    if off + name_len > len(data):
        raise ArchiveError(f"{path}: truncated joint names")
    blob = data[off:off + name_len].decode("utf-8")
    off += name_len
    names = tuple(blob.split("\n")) if blob else ()
    if names and len(names) != k:
        raise ArchiveError(f"{path}: {len(names)} joint names for {k} joints")
    body.joint_names = names
    if off != len(data):
        raise ArchiveError(f"{path}: {len(data) - off} trailing bytes")
    try:
        body.validate()
    except BodyError as exc:
        raise ArchiveError(f"{path}: {exc}") from exc
    return body


# ---------------------------------------------------------------------------
# procedural capsule humanoid

_JOINT_TABLE = [
    # name, parent, position as (x, y, z) fractions of total height
    ("pelvis", -1, (0.0, 0.570, 0.0)),
    ("hip_l", 0, (0.058, 0.540, 0.0)),
    ("hip_r", 0, (-0.058, 0.540, 0.0)),
    ("spine_lower", 0, (0.0, 0.650, 0.0)),
    ("knee_l", 1, (0.062, 0.305, 0.0)),
    ("knee_r", 2, (-0.062, 0.305, 0.0)),
    ("spine_upper", 3, (0.0, 0.730, 0.0)),
    ("ankle_l", 4, (0.065, 0.048, 0.0)),
    ("ankle_r", 5, (-0.065, 0.048, 0.0)),
    ("chest", 6, (0.0, 0.790, 0.0)),
    ("foot_l", 7, (0.065, 0.018, 0.065)),
    ("foot_r", 8, (-0.065, 0.018, 0.065)),
    ("neck", 9, (0.0, 0.860, 0.0)),
    ("collar_l", 9, (0.042, 0.836, 0.0)),
    ("collar_r", 9, (-0.042, 0.836, 0.0)),
    ("head", 12, (0.0, 0.895, 0.0)),
    ("shoulder_l", 13, (0.112, 0.842, 0.0)),
    ("shoulder_r", 14, (-0.112, 0.842, 0.0)),
    ("elbow_l", 16, (0.260, 0.842, 0.0)),
    ("elbow_r", 17, (-0.260, 0.842, 0.0)),
    ("wrist_l", 18, (0.392, 0.842, 0.0)),
    ("wrist_r", 19, (-0.392, 0.842, 0.0)),
    ("hand_l", 20, (0.448, 0.842, 0.0)),
    ("hand_r", 21, (-0.448, 0.842, 0.0)),
]

# capsule segments: (joint_a, joint_b, radius fraction); b None is the skull
_SEGMENT_TABLE = [
    (0, 3, 0.078), (3, 6, 0.075), (6, 9, 0.072), (9, 12, 0.050),
    (12, 15, 0.028), (15, None, 0.050),
    (0, 1, 0.052), (0, 2, 0.052),
    (1, 4, 0.046), (2, 5, 0.046),
    (4, 7, 0.034), (5, 8, 0.034),
    (7, 10, 0.026), (8, 11, 0.026),
    (9, 13, 0.036), (9, 14, 0.036),
    (13, 16, 0.036), (14, 17, 0.036),
    (16, 18, 0.033), (17, 19, 0.033),
    (18, 20, 0.027), (19, 21, 0.027),
    (20, 22, 0.021), (21, 23, 0.021),
]

_SKULL_LENGTH = 0.052


@dataclass
class SyntheticBodyConfig:
    """Knobs for the procedural humanoid.

    tessellation scales vertex density only; joint locations depend solely on
    height, so the same animation drives any tessellation level.
    """

    height: float = 1.7
    tessellation: int = 2
    shape_dim: int = 10
    radius_scale: float = 1.0

    def clamped(self) -> "SyntheticBodyConfig":
        return SyntheticBodyConfig(
            height=float(np.clip(self.height, 0.2, 10.0)),
            tessellation=int(np.clip(self.tessellation, 1, 8)),
            shape_dim=int(np.clip(self.shape_dim, 1, 16)),
            radius_scale=float(np.clip(self.radius_scale, 0.5, 1.6)),
        )


def _perp_frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([0.0, 1.0, 0.0]) if abs(axis[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(axis, ref)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1)


def _capsule(p_a, p_b, radius, n_seg, n_mid, n_cap, blend=0.3):
    """Capsule mesh from p_a to p_b with hemispherical caps.

    Returns (verts, faces, weight_b, end_ring_a, end_ring_b) where weight_b
    is the per-vertex share assigned to the distal joint and end_ring_* are
    index arrays of the rings centered exactly on the segment endpoints.
    """
    axis = p_b - p_a
    length = np.linalg.norm(axis)
    axis = axis / length
    e1, e2 = _perp_frame(axis)
    ang = 2.0 * np.pi * np.arange(n_seg) / n_seg
    circle = np.outer(np.cos(ang), e1) + np.outer(np.sin(ang), e2)

    verts, wb, rings = [], [], []

    def ramp(s):
        return float(np.clip((s - (1.0 - blend)) / blend, 0.0, 1.0))

    # cap at a: pole plus latitude rings walking toward the shaft
    verts.append((p_a - radius * axis)[None, :])
    wb.append(np.zeros(1))
    for q in range(n_cap, 0, -1):
        phi = 0.5 * np.pi * q / (n_cap + 1)
        ring = p_a - radius * np.sin(phi) * axis + radius * np.cos(phi) * circle
        verts.append(ring)
        wb.append(np.zeros(n_seg))

    for s in np.linspace(0.0, 1.0, n_mid + 2):
        ring = p_a + s * length * axis + radius * circle
        verts.append(ring)
        wb.append(np.full(n_seg, ramp(s)))

    for q in range(1, n_cap + 1):
        phi = 0.5 * np.pi * q / (n_cap + 1)
        ring = p_b + radius * np.sin(phi) * axis + radius * np.cos(phi) * circle
        verts.append(ring)
        wb.append(np.ones(n_seg))
    verts.append((p_b + radius * axis)[None, :])
    wb.append(np.ones(1))

    counts = [v.shape[0] for v in verts]
    offsets = np.concatenate([[0], np.cumsum(counts)])
    n_rings_total = len(verts)

    faces = []
    # pole fan at a (vertex 0, first ring follows)
    first = offsets[1]
    for m in range(n_seg):
        faces.append([0, first + m, first + (m + 1) % n_seg])
    # tube quads between consecutive rings
    for r in range(1, n_rings_total - 2):
        a0, b0 = offsets[r], offsets[r + 1]
        for m in range(n_seg):
            m2 = (m + 1) % n_seg
            faces.append([a0 + m, b0 + m, b0 + m2])
            faces.append([a0 + m, b0 + m2, a0 + m2])
    # pole fan at b
    last_pole = offsets[-2]
    prev = offsets[-3]
    for m in range(n_seg):
        faces.append([last_pole, prev + (m + 1) % n_seg, prev + m])

    shaft_first = 1 + n_cap  # ring index of the s=0 ring
    end_a = np.arange(offsets[shaft_first], offsets[shaft_first + 1])
    shaft_last = shaft_first + n_mid + 1
    end_b = np.arange(offsets[shaft_last], offsets[shaft_last + 1])

    return (
        np.concatenate(verts, axis=0),
        np.asarray(faces, dtype=np.int64),
        np.concatenate(wb),
        end_a,
        end_b,
    )


def _shape_mode_fields(verts, joints, height, n_modes):
    """(N, 3, S) analytic displacement fields for the shape blendshapes."""
    n = verts.shape[0]
    dirs = np.zeros((n, 3, n_modes))
    y_pelvis = joints[0, 1]
    head_center = joints[15] + np.array([0.0, _SKULL_LENGTH * height, 0.0])

    def put(idx, disp):
        if idx < n_modes:
            dirs[:, :, idx] = disp

    taller = np.zeros((n, 3))
    taller[:, 1] = 0.12 * (verts[:, 1] - y_pelvis)
    put(0, taller)

    wider = np.zeros((n, 3))
    wider[:, 0] = 0.10 * verts[:, 0]
    put(1, wider)

    deeper = np.zeros((n, 3))
    deeper[:, 2] = 0.10 * verts[:, 2]
    put(2, deeper)

    rel = verts - head_center
    fall = np.exp(-((np.linalg.norm(rel, axis=1) / (0.12 * height)) ** 2))
    put(3, 0.5 * fall[:, None] * rel)

    arms = np.zeros((n, 3))
    reach = np.maximum(np.abs(verts[:, 0]) - 0.10 * height, 0.0)
    arms[:, 0] = 0.15 * reach * np.sign(verts[:, 0])
    put(4, arms)

    legs = np.zeros((n, 3))
    legs[:, 1] = -0.15 * np.maximum(y_pelvis - verts[:, 1], 0.0)
    put(5, legs)

    rho = np.sqrt(verts[:, 0] ** 2 + verts[:, 2] ** 2)
    radial = np.zeros((n, 3))
    nz = rho > 1e-9
    radial[nz, 0] = verts[nz, 0] / rho[nz]
    radial[nz, 2] = verts[nz, 2] / rho[nz]
    for j in range(6, n_modes):
        phase = 0.9 * (j - 6)
        ripple = 0.02 * height * np.sin(2.0 * np.pi * verts[:, 1] / height + phase)
        put(j, ripple[:, None] * radial)

    return dirs


def make_synthetic_body(config: SyntheticBodyConfig | None = None) -> ArticulatedBody:
    """Build the capsule-limb humanoid.

    One capsule per bone; each capsule's shaft rings sit exactly on the bone
    axis, so the ring centered on a joint doubles as that joint's regressor
    support. Skinning blends from the proximal to the distal joint over the
    last 30% of each bone.
    """
    cfg = (config or SyntheticBodyConfig()).clamped()
    h, tess = cfg.height, cfg.tessellation
    n_seg = 6 + 2 * (tess - 1)
    n_mid, n_cap = tess, tess

    names = tuple(row[0] for row in _JOINT_TABLE)
    parents = np.asarray([row[1] for row in _JOINT_TABLE], dtype=np.int32)
    joints = np.asarray([row[2] for row in _JOINT_TABLE], dtype=np.float64) * h
    k = len(names)

    all_verts, all_faces, all_weights = [], [], []
    joint_end_rings: dict[int, np.ndarray] = {}
    base = 0
    for a, b, radius in _SEGMENT_TABLE:
        p_a = joints[a]
        if b is None:
            p_b = p_a + np.array([0.0, _SKULL_LENGTH * h, 0.0])
            owner_a = owner_b = a
        else:
            p_b = joints[b]
            owner_a, owner_b = a, b
        verts, faces, wb, ring_a, ring_b = _capsule(
            p_a, p_b, radius * h * cfg.radius_scale, n_seg, n_mid, n_cap
        )
        weights = np.zeros((verts.shape[0], k))
        weights[:, owner_a] += 1.0 - wb
        weights[:, owner_b] += wb
        all_verts.append(verts)
        all_faces.append(faces + base)
        all_weights.append(weights)
        if b is not None and b not in joint_end_rings:
            joint_end_rings[b] = ring_b + base
        if a == 0 and 0 not in joint_end_rings:
            joint_end_rings[0] = ring_a + base
        base += verts.shape[0]

    verts = np.concatenate(all_verts, axis=0)
    faces = np.concatenate(all_faces, axis=0)
    weights = np.concatenate(all_weights, axis=0)

    regressor = np.zeros((k, verts.shape[0]))
    for j in range(k):
        ring = joint_end_rings[j]
        regressor[j, ring] = 1.0 / ring.size

    shape_dirs = _shape_mode_fields(verts, joints, h, cfg.shape_dim)
    pose_dirs = np.zeros((verts.shape[0], 3, 9 * (k - 1)))

    body = ArticulatedBody(
        template_vertices=verts.astype(np.float32),
        faces=faces.astype(np.int32),
        shape_dirs=shape_dirs.astype(np.float32),
        pose_dirs=pose_dirs.astype(np.float32),
        joint_regressor=regressor.astype(np.float32),
        skinning_weights=weights.astype(np.float32),
        kinematic_parents=parents,
        joint_names=names,
    )
    body.validate()
    return body
