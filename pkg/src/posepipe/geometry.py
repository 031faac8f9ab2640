"""Rigid-body math: rotations, poses, camera projection, oriented-box IoU.

Rotations are stored as unit quaternions (w, x, y, z); matrices are derived
on demand. All angles are radians; degrees appear only at CLI/report
boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull
from scipy.spatial._qhull import QhullError


class GeometryError(ValueError):
    """Invalid geometric input (non-finite, degenerate, out of domain)."""


class BehindCameraError(GeometryError):
    """Point has non-positive depth and cannot be projected."""


def _as_finite(v, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(a)):
        raise GeometryError(f"{name} must be finite, got {a}")
    return a


@dataclass(frozen=True)
class Rotation:
    """Unit quaternion rotation. q and -q represent the same rotation."""

    q: np.ndarray  # (w, x, y, z), normalized in __post_init__

    def __post_init__(self):
        q = _as_finite(self.q, "quaternion")
        if q.shape != (4,):
            raise GeometryError(f"quaternion must have 4 components, got shape {q.shape}")
        n = np.linalg.norm(q)
        if n < 1e-12:
            raise GeometryError("zero quaternion")
        q = q / n
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "Rotation":
        axis = _as_finite(axis, "axis")
        n = np.linalg.norm(axis)
        if n < 1e-12:
            raise GeometryError("zero rotation axis")
        axis = axis / n
        half = 0.5 * float(angle)
        return Rotation(np.concatenate([[np.cos(half)], np.sin(half) * axis]))

    @staticmethod
    def from_matrix(m) -> "Rotation":
        """Shepperd's method: pick the numerically largest quaternion component."""
        m = _as_finite(m, "rotation matrix")
        t = np.trace(m)
        if t > 0:
            s = 0.5 / np.sqrt(t + 1.0)
            q = np.array([0.25 / s,
                          (m[2, 1] - m[1, 2]) * s,
                          (m[0, 2] - m[2, 0]) * s,
                          (m[1, 0] - m[0, 1]) * s])
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                          (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                          0.25 * s, (m[1, 2] + m[2, 1]) / s])
        else:
            s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                          (m[1, 2] + m[2, 1]) / s, 0.25 * s])
        return Rotation(q)

    def matrix(self) -> np.ndarray:
        w, x, y, z = self.q
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def compose(self, other: "Rotation") -> "Rotation":
        """Hamilton product: self then applies other in self's frame (self * other)."""
        w1, x1, y1, z1 = self.q
        w2, x2, y2, z2 = other.q
        return Rotation(np.array([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]))

    def inverse(self) -> "Rotation":
        w, x, y, z = self.q
        return Rotation(np.array([w, -x, -y, -z]))

    def apply(self, v) -> np.ndarray:
        return self.matrix() @ np.asarray(v, dtype=float)

    def angle_to(self, other: "Rotation") -> float:
        return geodesic_distance(self, other)


@dataclass(frozen=True)
class Pose:
    """SE(3) rigid transform: rotation then translation (meters)."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        t = _as_finite(self.translation, "translation")
        if t.shape != (3,):
            raise GeometryError(f"translation must be a 3-vector, got shape {t.shape}")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(Rotation.identity(), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation.compose(other.rotation),
                    self.rotation.apply(other.translation) + self.translation)

    def inverse(self) -> "Pose":
        rinv = self.rotation.inverse()
        return Pose(rinv, -rinv.apply(self.translation))

    def apply(self, p) -> np.ndarray:
        return self.rotation.apply(p) + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix()
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class ScaledPose:
    """Pose plus per-axis full extents (meters), all strictly positive."""

    pose: Pose
    scale: np.ndarray

    def __post_init__(self):
        s = _as_finite(self.scale, "scale")
        if s.shape != (3,) or np.any(s <= 0):
            raise GeometryError(f"scale must be 3 strictly positive extents, got {s}")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "scale", s)

    def box(self) -> "OrientedBox":
        return OrientedBox(self.pose.translation, self.pose.rotation, self.scale)


@dataclass(frozen=True)
class OrientedBox:
    """Box given by center, orientation, and full side lengths (meters)."""

    center: np.ndarray
    rotation: Rotation
    extents: np.ndarray

    def __post_init__(self):
        c = _as_finite(self.center, "center")
        e = _as_finite(self.extents, "extents")
        if c.shape != (3,) or e.shape != (3,):
            raise GeometryError("center and extents must be 3-vectors")
        if np.any(e <= 0):
            raise GeometryError(f"degenerate box: extents {e}")
        c, e = c.copy(), e.copy()
        c.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "extents", e)

    def volume(self) -> float:
        return float(np.prod(self.extents))

    def corners(self) -> np.ndarray:
        """8x3 world-frame corner coordinates."""
        h = 0.5 * self.extents
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        return (self.rotation.matrix() @ (signs * h).T).T + self.center

    def halfspaces(self) -> list[tuple[np.ndarray, float]]:
        """Six (normal, offset) pairs with inside = {p : normal.p <= offset}."""
        m = self.rotation.matrix()
        out = []
        for axis in range(3):
            n = m[:, axis]
            h = 0.5 * self.extents[axis]
            d = float(n @ self.center)
            out.append((n, d + h))
            out.append((-n, -(d - h)))
        return out


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point must lie inside the image")


@dataclass(frozen=True)
class PointCloud:
    """N >= 1 finite 3D points, camera frame, meters."""

    points: np.ndarray

    def __post_init__(self):
        p = _as_finite(self.points, "points")
        if p.ndim != 2 or p.shape[1] != 3 or p.shape[0] < 1:
            raise GeometryError(f"points must be (N>=1, 3), got shape {p.shape}")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return self.points.shape[0]


def geodesic_distance(a: Rotation, b: Rotation) -> float:
    """Rotation angle of a^-1 b, radians in [0, pi]. Sign-invariant in both args."""
    # Relative quaternion a^-1 * b; atan2 keeps full precision near 0 and pi,
    # where arccos of the dot product loses half the significant digits.
    rel = a.inverse().compose(b).q
    return 2.0 * float(np.arctan2(np.linalg.norm(rel[1:]), abs(rel[0])))


def quaternion_mean(rotations: list[Rotation]) -> Rotation:
    """Chordal L2 mean: dominant eigenvector of the sign-corrected outer-product sum.

    Each quaternion is flipped to a positive dot product with the first element
    before accumulation, so the eigen-problem input is order-stable.
    """
    if not rotations:
        raise GeometryError("quaternion_mean of empty list")
    q0 = rotations[0].q
    acc = np.zeros((4, 4))
    for r in rotations:
        q = r.q if float(q0 @ r.q) >= 0 else -r.q
        acc += np.outer(q, q)
    w, v = np.linalg.eigh(acc)
    return Rotation(v[:, -1])


def project_point(intr: CameraIntrinsics, p_cam) -> np.ndarray:
    """Pinhole projection of a camera-frame point to pixels. Requires z > 0."""
    p = _as_finite(p_cam, "p_cam")
    if p[2] <= 0:
        raise BehindCameraError(f"point has non-positive depth z={p[2]}")
    return np.array([intr.fx * p[0] / p[2] + intr.cx,
                     intr.fy * p[1] / p[2] + intr.cy])


def _clip_polygon(poly: list[np.ndarray], normal: np.ndarray, offset: float) -> list[np.ndarray]:
    """Sutherland-Hodgman clip of a convex polygon against normal.p <= offset."""
    if not poly:
        return []
    out: list[np.ndarray] = []
    n = len(poly)
    d = [float(normal @ p) - offset for p in poly]
    for i in range(n):
        j = (i + 1) % n
        pi, pj = poly[i], poly[j]
        di, dj = d[i], d[j]
        if di <= 0:
            out.append(pi)
        if (di < 0 < dj) or (dj < 0 < di):
            t = di / (di - dj)
            out.append(pi + t * (pj - pi))
    return out


def _box_faces(box: OrientedBox) -> list[list[np.ndarray]]:
    c = box.corners()  # index bit order: (sx, sy, sz) with z fastest
    idx = [
        [0, 1, 3, 2],  # -x
        [4, 6, 7, 5],  # +x
        [0, 4, 5, 1],  # -y
        [2, 3, 7, 6],  # +y
        [0, 2, 6, 4],  # -z
        [1, 5, 7, 3],  # +z
    ]
    return [[c[i] for i in face] for face in idx]


def _intersection_vertices(a: OrientedBox, b: OrientedBox) -> np.ndarray:
    verts: list[np.ndarray] = []
    for face in _box_faces(a):
        poly = face
        for normal, offset in b.halfspaces():
            poly = _clip_polygon(poly, normal, offset)
            if not poly:
                break
        verts.extend(poly)
    # Faces of b clipped by a contribute the cap vertices lying on b's surface.
    for face in _box_faces(b):
        poly = face
        for normal, offset in a.halfspaces():
            poly = _clip_polygon(poly, normal, offset)
            if not poly:
                break
        verts.extend(poly)
    if not verts:
        return np.zeros((0, 3))
    return np.array(verts)


def box_iou(a: OrientedBox, b: OrientedBox) -> float:
    """Exact intersection-over-union of two oriented boxes via polytope clipping."""
    pts = _intersection_vertices(a, b)
    if pts.shape[0] < 4:
        inter = 0.0
    else:
        try:
            inter = float(ConvexHull(pts).volume)
        except QhullError:
            inter = 0.0
    union = a.volume() + b.volume() - inter
    return min(max(inter / union, 0.0), 1.0)


def sixd_to_rotation(v) -> Rotation:
    """Gram-Schmidt two 3-vectors into a right-handed rotation.

    The 6-vector is the first two columns of the rotation matrix, stacked.
    """
    v = _as_finite(v, "6d rotation vector")
    if v.shape != (6,):
        raise GeometryError(f"expected 6-vector, got shape {v.shape}")
    a, b = v[:3], v[3:]
    na = np.linalg.norm(a)
    if na < 1e-12:
        raise GeometryError("first column is zero")
    c0 = a / na
    b_orth = b - (c0 @ b) * c0
    nb = np.linalg.norm(b_orth)
    if nb < 1e-9 * max(np.linalg.norm(b), 1.0) or np.linalg.norm(b) < 1e-12:
        raise GeometryError("columns are parallel or second column is zero")
    c1 = b_orth / nb
    c2 = np.cross(c0, c1)
    return Rotation.from_matrix(np.column_stack([c0, c1, c2]))


def rotation_to_sixd(r: Rotation) -> np.ndarray:
    """First two columns of the rotation matrix, stacked into a 6-vector."""
    m = r.matrix()
    return np.concatenate([m[:, 0], m[:, 1]])
