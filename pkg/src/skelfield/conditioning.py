"""View-consistent skeleton conditioning images and silhouettes.

A posed body is reduced to a sparse set of keypoints (convex combinations of
joints, plus optional rigid offsets for face landmarks that sit proud of the
skull), projected into a camera, occlusion-tested against the posed mesh, and
rasterized as a colored stick figure on black. The same camera model and the
same mesh also produce binary silhouettes for shape initialization, so masks,
skeleton images and renders all agree pixel for pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .body import PosedMesh
from .raycast import TriangleRaycaster

TOPOLOGY_MAGIC = "SKLF-TOPO v1"


class CameraError(ValueError):
    """Invalid camera configuration."""


class TopologyError(ValueError):
    """Invalid skeleton topology data."""


@dataclass(frozen=True)
class Camera:
    """Pinhole camera. Pixel (0, 0) is the top-left corner; x right, y down.

    vertical_fov is in radians; the horizontal field of view follows from the
    aspect ratio. near/far bound visibility along the viewing ray.
    """

    position: tuple[float, float, float]
    look_at: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    vertical_fov: float = 0.8
    width: int = 512
    height: int = 512
    near: float = 0.05
    far: float = 100.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise CameraError(f"bad resolution {self.width}x{self.height}")
        if not 0.0 < self.vertical_fov < np.pi:
            raise CameraError(f"vertical_fov {self.vertical_fov} outside (0, pi)")
        if not 0.0 < self.near < self.far:
            raise CameraError(f"need 0 < near < far, got {self.near}, {self.far}")
        fwd = np.subtract(self.look_at, self.position, dtype=np.float64)
        if np.linalg.norm(fwd) < 1e-12:
            raise CameraError("position and look_at coincide")
        if np.linalg.norm(np.cross(fwd, np.asarray(self.up, np.float64))) < 1e-12:
            raise CameraError("up vector parallel to view direction")

    def basis(self):
        """(right, up, forward) orthonormal rows; forward points at look_at."""
        fwd = np.subtract(self.look_at, self.position, dtype=np.float64)
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, np.float64))
        right /= np.linalg.norm(right)
        true_up = np.cross(right, fwd)
        return right, true_up, fwd

    def tan_half(self):
        tan_v = np.tan(0.5 * self.vertical_fov)
        return tan_v * self.width / self.height, tan_v


def project(camera: Camera, points: np.ndarray):
    """World points to pixel coordinates.

    Args:
        points: (..., 3).

    Returns:
        (pixels, depth, valid): pixel coords (..., 2) with the image center at
        (W/2, H/2), depth along the view axis, and a validity mask that is
        False for points behind the near plane. Pixels for invalid points are
        still computed where finite but are meaningless.
    """
    pts = np.asarray(points, dtype=np.float64)
    right, up, fwd = camera.basis()
    rel = pts - np.asarray(camera.position, np.float64)
    x = rel @ right
    y = rel @ up
    z = rel @ fwd
    tan_h, tan_v = camera.tan_half()
    with np.errstate(divide="ignore", invalid="ignore"):
        px = (x / (z * tan_h) + 1.0) * 0.5 * camera.width
        py = (1.0 - y / (z * tan_v)) * 0.5 * camera.height
    pixels = np.stack([px, py], axis=-1)
    valid = (z >= camera.near) & np.isfinite(px) & np.isfinite(py)
    return pixels, z, valid


def camera_rays(camera: Camera, pixels: np.ndarray | None = None):
    """Normalized world-space rays through pixel centers.

    Args:
        pixels: (M, 2) float pixel coordinates, or None for every pixel in
            row-major order.

    Returns:
        (origins, directions): (M, 3) each, directions unit length.
    """
    if pixels is None:
        j, i = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
        pixels = np.stack([j.ravel() + 0.5, i.ravel() + 0.5], axis=-1).astype(np.float64)
    else:
        pixels = np.asarray(pixels, dtype=np.float64)
    right, up, fwd = camera.basis()
    tan_h, tan_v = camera.tan_half()
    ndc_x = 2.0 * pixels[:, 0] / camera.width - 1.0
    ndc_y = 1.0 - 2.0 * pixels[:, 1] / camera.height
    dirs = (
        fwd[None, :]
        + (ndc_x * tan_h)[:, None] * right[None, :]
        + (ndc_y * tan_v)[:, None] * up[None, :]
    )
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(np.asarray(camera.position, np.float64), dirs.shape).copy()
    return origins, dirs


@dataclass
class SkeletonTopology:
    """How body joints become drawable keypoints.

    joint_map: (D, K) convex rows; keypoint d = joint_map[d] . joints
    bone_edges: (B, 2) keypoint index pairs drawn as limbs
    facial: (D,) flags marking keypoints subject to occlusion culling
    offsets/offset_joints: optional rigid offset per keypoint, expressed in
        the named joint's local frame (rotated with it, scaled with the body);
        lets face landmarks sit proud of the skull while joint_map itself
        stays a plain convex combination
    """

    names: tuple[str, ...]
    joint_map: np.ndarray
    bone_edges: np.ndarray
    facial: np.ndarray
    keypoint_colors: np.ndarray
    bone_colors: np.ndarray
    offsets: np.ndarray = None
    offset_joints: np.ndarray = None

    def __post_init__(self):
        d = self.joint_map.shape[0]
        if self.offsets is None:
            self.offsets = np.zeros((d, 3))
        if self.offset_joints is None:
            self.offset_joints = np.full(d, -1, dtype=np.int32)

    @property
    def keypoint_count(self) -> int:
        return self.joint_map.shape[0]

    @property
    def joint_count(self) -> int:
        return self.joint_map.shape[1]

    def validate(self) -> None:
        d, k = self.joint_map.shape
        if len(self.names) != d:
            raise TopologyError(f"{len(self.names)} names for {d} keypoints")
        if self.joint_map.min() < -1e-9:
            rows = np.unique(np.nonzero(self.joint_map < -1e-9)[0])
            raise TopologyError(f"negative joint_map entries in rows {rows.tolist()}")
        sums = self.joint_map.sum(axis=1)
        bad = np.nonzero(np.abs(sums - 1.0) > 1e-6)[0]
        if bad.size:
            raise TopologyError(f"joint_map rows {bad.tolist()} do not sum to 1")
        if self.bone_edges.size and (
            self.bone_edges.min() < 0 or self.bone_edges.max() >= d
        ):
            raise TopologyError("bone edge endpoint out of range")
        if self.facial.shape != (d,):
            raise TopologyError(f"facial flags shape {self.facial.shape}")
        if np.any(self.offset_joints >= k):
            raise TopologyError("offset joint out of range")


def map_keypoints(topology: SkeletonTopology, joints: np.ndarray) -> np.ndarray:
    """Convex combination of joint positions, (K, 3) -> (D, 3)."""
    return topology.joint_map @ np.asarray(joints, dtype=np.float64)


def keypoint_world_positions(topology: SkeletonTopology, mesh: PosedMesh) -> np.ndarray:
    """Keypoints of a posed body, rigid facial offsets included."""
    base = map_keypoints(topology, mesh.posed_joints())
    carried = topology.offset_joints >= 0
    if np.any(carried):
        rots = mesh.joint_world_rotations()[topology.offset_joints[carried]]
        local = topology.offsets[carried]
        base[carried] += mesh.global_scale * (rots @ local[..., None])[..., 0]
    return base


def occlusion_cull(
    keypoints: np.ndarray,
    facial: np.ndarray,
    mesh: PosedMesh,
    camera: Camera,
    raycaster: TriangleRaycaster | None = None,
    eps: float | None = None,
) -> np.ndarray:
    """Visibility per keypoint.

    Points behind the near plane are invisible. Facial keypoints are ray
    tested against the posed mesh: any surface strictly in front of the
    keypoint (by at least eps, default 1e-3 of the mesh diagonal) hides it.
    Non-facial keypoints are treated as always visible, as limb markers are
    meant to be drawn through the body.
    """
    kps = np.asarray(keypoints, dtype=np.float64)
    _, depth, in_front = project(camera, kps)
    visible = in_front.copy()

    test = np.asarray(facial, bool) & in_front
    if np.any(test):
        if raycaster is None:
            raycaster = TriangleRaycaster(mesh.vertices, mesh.faces)
        if eps is None:
            span = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
            eps = 1e-3 * float(np.linalg.norm(span))
        origin = np.asarray(camera.position, np.float64)
        targets = kps[test]
        dirs = targets - origin
        dist = np.linalg.norm(dirs, axis=1)
        t_hi = 1.0 - eps / np.maximum(dist, 1e-12)
        t_lo = np.minimum(camera.near / np.maximum(dist, 1e-12), t_hi)
        blocked = raycaster.any_hit(
            np.broadcast_to(origin, dirs.shape).copy(), dirs, t_lo, t_hi
        )
        vis = visible[test]
        vis[blocked] = False
        visible[test] = vis
    return visible


@dataclass
class ConditioningMap:
    """Rasterized skeleton plus the 2D keypoints it was drawn from."""

    image: np.ndarray  # (H, W, 3) uint8, black background
    keypoints: np.ndarray  # (D, 2) float pixel coordinates
    depth: np.ndarray  # (D,) view-axis depth
    visible: np.ndarray  # (D,) bool


def _disc_offsets(radius: int) -> np.ndarray:
    r = max(int(radius), 0)
    span = np.arange(-r, r + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    keep = dy * dy + dx * dx <= r * r
    return np.stack([dy[keep], dx[keep]], axis=-1)


def _stamp(image, centers, offsets, color):
    pts = (centers[:, None, :] + offsets[None, :, :]).reshape(-1, 2)
    h, w = image.shape[:2]
    keep = (pts[:, 0] >= 0) & (pts[:, 0] < h) & (pts[:, 1] >= 0) & (pts[:, 1] < w)
    pts = pts[keep]
    image[pts[:, 0], pts[:, 1]] = color


def rasterize_skeleton(
    topology: SkeletonTopology,
    pixels: np.ndarray,
    visible: np.ndarray,
    width: int,
    height: int,
    line_width: int | None = None,
    point_radius: int | None = None,
) -> np.ndarray:
    """Draw the stick figure: bones first, keypoint discs on top.

    A bone is drawn only when both endpoints are visible. Stroke sizes
    default to 4px lines / 4px dot radius at 512px and scale with resolution.
    Output is (H, W, 3) uint8 on exact black.
    """
    scale = min(width, height) / 512.0
    if line_width is None:
        line_width = max(1, round(4 * scale))
    if point_radius is None:
        point_radius = max(1, round(4 * scale))

    image = np.zeros((height, width, 3), dtype=np.uint8)
    pix = np.asarray(pixels, dtype=np.float64)
    vis = np.asarray(visible, bool)
    brush = _disc_offsets(line_width // 2)
    dot = _disc_offsets(point_radius)

    for b, (i, j) in enumerate(np.asarray(topology.bone_edges, int)):
        if not (vis[i] and vis[j]):
            continue
        p0, p1 = pix[i], pix[j]
        if not (np.all(np.isfinite(p0)) and np.all(np.isfinite(p1))):
            continue
        steps = int(np.ceil(np.abs(p1 - p0).max())) + 1
        line = np.rint(np.linspace(p0, p1, steps)).astype(np.int64)
        _stamp(image, line[:, ::-1], brush, topology.bone_colors[b])

    for d in range(topology.keypoint_count):
        if not vis[d] or not np.all(np.isfinite(pix[d])):
            continue
        center = np.rint(pix[d][::-1]).astype(np.int64)[None, :]
        _stamp(image, center, dot, topology.keypoint_colors[d])
    return image


def render_silhouette(
    mesh: PosedMesh,
    camera: Camera,
    raycaster: TriangleRaycaster | None = None,
) -> np.ndarray:
    """(H, W) bool mask: True where the ray through the pixel hits the mesh."""
    if raycaster is None:
        raycaster = TriangleRaycaster(mesh.vertices, mesh.faces)
    origins, dirs = camera_rays(camera)
    hits = raycaster.any_hit(origins, dirs, camera.near, camera.far)
    return hits.reshape(camera.height, camera.width)


def make_conditioning_map(
    topology: SkeletonTopology,
    mesh: PosedMesh,
    camera: Camera,
    raycaster: TriangleRaycaster | None = None,
    line_width: int | None = None,
    point_radius: int | None = None,
) -> ConditioningMap:
    """Full conditioning pipeline for one view of one posed body."""
    world = keypoint_world_positions(topology, mesh)
    pixels, depth, _ = project(camera, world)
    visible = occlusion_cull(world, topology.facial, mesh, camera, raycaster)
    image = rasterize_skeleton(
        topology, pixels, visible, camera.width, camera.height, line_width, point_radius
    )
    return ConditioningMap(image=image, keypoints=pixels, depth=depth, visible=visible)


# ---------------------------------------------------------------------------
# topology file format and the default 18-keypoint layout

def save_topology(path, topology: SkeletonTopology) -> None:
    topology.validate()
    lines = [TOPOLOGY_MAGIC,
             f"joints {topology.joint_count}",
             f"keypoints {topology.keypoint_count}",
             f"bones {topology.bone_edges.shape[0]}"]
    for d in range(topology.keypoint_count):
        row = topology.joint_map[d]
        entries = ",".join(
            f"{j}:{row[j]:.17g}" for j in np.nonzero(row)[0]
        )
        color = ",".join(str(int(c)) for c in topology.keypoint_colors[d])
        off = ",".join(f"{v:.17g}" for v in topology.offsets[d])
        lines.append(
            f"keypoint {topology.names[d]} facial={int(topology.facial[d])} "
            f"color={color} map={entries} "
            f"offset_joint={int(topology.offset_joints[d])} offset={off}"
        )
    for b, (i, j) in enumerate(topology.bone_edges):
        color = ",".join(str(int(c)) for c in topology.bone_colors[b])
        lines.append(f"bone {int(i)} {int(j)} color={color}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_topology(path) -> SkeletonTopology:
    with open(path) as fh:
        raw = [ln.strip() for ln in fh if ln.strip()]
    if not raw or raw[0] != TOPOLOGY_MAGIC:
        raise TopologyError(f"{path}: bad magic line")
    header = {}
    idx = 1
    for key in ("joints", "keypoints", "bones"):
        parts = raw[idx].split()
        if len(parts) != 2 or parts[0] != key:
            raise TopologyError(f"{path}: expected '{key} N' on line {idx + 1}")
        header[key] = int(parts[1])
        idx += 1
    k, d, b = header["joints"], header["keypoints"], header["bones"]

    names, facial, kp_colors, offsets, offset_joints = [], [], [], [], []
    joint_map = np.zeros((d, k))
    edges, bone_colors = [], []

    def parse_kv(tokens, line_no):
        out = {}
        for tok in tokens:
            if "=" not in tok:
                raise TopologyError(f"{path}:{line_no}: expected key=value, got {tok!r}")
            key, val = tok.split("=", 1)
            out[key] = val
        return out

    for line_no, line in enumerate(raw[idx:], start=idx + 1):
        parts = line.split()
        if parts[0] == "keypoint":
            row = len(names)
            if row >= d:
                raise TopologyError(f"{path}: more keypoint lines than declared")
            kv = parse_kv(parts[2:], line_no)
            names.append(parts[1])
            facial.append(bool(int(kv.get("facial", "0"))))
            kp_colors.append([int(c) for c in kv["color"].split(",")])
            for entry in kv["map"].split(","):
                j, w = entry.split(":")
                joint_map[row, int(j)] = float(w)
            offset_joints.append(int(kv.get("offset_joint", "-1")))
            off = kv.get("offset", "0,0,0")
            offsets.append([float(v) for v in off.split(",")])
        elif parts[0] == "bone":
            kv = parse_kv(parts[3:], line_no)
            edges.append([int(parts[1]), int(parts[2])])
            bone_colors.append([int(c) for c in kv["color"].split(",")])
        else:
            raise TopologyError(f"{path}:{line_no}: unknown record {parts[0]!r}")

    if len(names) != d or len(edges) != b:
        raise TopologyError(
            f"{path}: declared {d} keypoints / {b} bones, found {len(names)} / {len(edges)}"
        )
    topo = SkeletonTopology(
        names=tuple(names),
        joint_map=joint_map,
        bone_edges=np.asarray(edges, dtype=np.int32).reshape(b, 2),
        facial=np.asarray(facial, bool),
        keypoint_colors=np.asarray(kp_colors, dtype=np.uint8),
        bone_colors=np.asarray(bone_colors, dtype=np.uint8),
        offsets=np.asarray(offsets),
        offset_joints=np.asarray(offset_joints, dtype=np.int32),
    )
    topo.validate()
    return topo


_PALETTE = np.asarray(
    [
        (255, 0, 0), (255, 85, 0), (255, 170, 0), (255, 255, 0), (170, 255, 0),
        (85, 255, 0), (0, 255, 0), (0, 255, 85), (0, 255, 170), (0, 255, 255),
        (0, 170, 255), (0, 85, 255), (0, 0, 255), (85, 0, 255), (170, 0, 255),
        (255, 0, 170), (255, 0, 85), (255, 0, 255),
    ],
    dtype=np.uint8,
)

# keypoint name, source joint, facial flag, offset in head-lengths of height
_DEFAULT_KEYPOINTS = [
    ("nose", 15, True, (0.0, 0.040, 0.056)),
    ("neck", 12, False, None),
    ("shoulder_r", 17, False, None),
    ("elbow_r", 19, False, None),
    ("wrist_r", 21, False, None),
    ("shoulder_l", 16, False, None),
    ("elbow_l", 18, False, None),
    ("wrist_l", 20, False, None),
    ("hip_r", 2, False, None),
    ("knee_r", 5, False, None),
    ("ankle_r", 8, False, None),
    ("hip_l", 1, False, None),
    ("knee_l", 4, False, None),
    ("ankle_l", 7, False, None),
    ("eye_r", 15, True, (-0.018, 0.048, 0.048)),
    ("eye_l", 15, True, (0.018, 0.048, 0.048)),
    ("ear_r", 15, True, (-0.052, 0.050, 0.0)),
    ("ear_l", 15, True, (0.052, 0.050, 0.0)),
]

_DEFAULT_BONES = [
    (1, 2), (1, 5), (2, 3), (3, 4), (5, 6), (6, 7), (1, 8), (8, 9), (9, 10),
    (1, 11), (11, 12), (12, 13), (1, 0), (0, 14), (14, 16), (0, 15), (15, 17),
]


def default_topology(joint_count: int = 24, height: float = 1.7) -> SkeletonTopology:
    """Stick-figure layout for the procedural humanoid.

    18 keypoints in the usual pose-detector order with its color palette;
    face landmarks ride on the head joint with small rigid offsets.
    """
    d = len(_DEFAULT_KEYPOINTS)
    joint_map = np.zeros((d, joint_count))
    facial = np.zeros(d, bool)
    offsets = np.zeros((d, 3))
    offset_joints = np.full(d, -1, dtype=np.int32)
    names = []
    for row, (name, joint, is_facial, offset) in enumerate(_DEFAULT_KEYPOINTS):
        names.append(name)
        joint_map[row, joint] = 1.0
        facial[row] = is_facial
        if offset is not None:
            offsets[row] = np.asarray(offset) * height
            offset_joints[row] = joint
    edges = np.asarray(_DEFAULT_BONES, dtype=np.int32)
    topo = SkeletonTopology(
        names=tuple(names),
        joint_map=joint_map,
        bone_edges=edges,
        facial=facial,
        keypoint_colors=_PALETTE.copy(),
        bone_colors=_PALETTE[edges[:, 1] % len(_PALETTE)].copy(),
        offsets=offsets,
        offset_joints=offset_joints,
    )
    topo.validate()
    return topo
