"""SE(2) poses, planar contours, and ground-contact queries.

Everything downstream (physics, estimators, controller) works with three
kinds of planar frames: gripper g, object o, and contact c, plus the
gripper/object relative pose X = between(g, o).  All types here are
immutable values and all functions are pure.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Pose2",
    "Twist2",
    "Wrench2",
    "ObjectModel",
    "GroundLine",
    "wrap_angle",
    "compose",
    "inverse",
    "between",
    "log_residual",
    "apply_pose",
    "apply_pose_inverse",
    "rotate",
    "closest_point_to_ground",
    "contour_min_heights",
    "lever_arm",
    "load_object",
    "object_from_dict",
]

_TAU = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    r = math.remainder(theta, _TAU)
    if r <= -math.pi:
        r += _TAU
    return r


@dataclass(frozen=True, slots=True)
class Pose2:
    """Planar rigid transform: rotation by theta then translation by (x, y).

    theta is kept in (-pi, pi] by construction.
    """

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @staticmethod
    def identity() -> "Pose2":
        return Pose2(0.0, 0.0, 0.0)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


@dataclass(frozen=True, slots=True)
class Twist2:
    """Per-step planar twist (omega, vx, vy); units rad/step and m/step."""

    omega: float
    vx: float
    vy: float

    def __post_init__(self):
        if not (math.isfinite(self.omega) and math.isfinite(self.vx) and math.isfinite(self.vy)):
            raise ValueError("twist components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.omega, self.vx, self.vy])


@dataclass(frozen=True, slots=True)
class Wrench2:
    """Planar wrench (m, fx, fy): torque about the reference point plus force."""

    m: float
    fx: float
    fy: float

    def __post_init__(self):
        if not (math.isfinite(self.m) and math.isfinite(self.fx) and math.isfinite(self.fy)):
            raise ValueError("wrench components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.m, self.fx, self.fy])


def compose(a: Pose2, b: Pose2) -> Pose2:
    """SE(2) group composition a*b."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.theta + b.theta,
    )


def inverse(p: Pose2) -> Pose2:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2(-(c * p.x + s * p.y), -(-s * p.x + c * p.y), -p.theta)


def between(a: Pose2, b: Pose2) -> Pose2:
    """Relative pose a^-1 * b (e.g. the gripper/object relative pose)."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return Pose2(c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta)


def log_residual(err: Pose2) -> np.ndarray:
    """Map a group-difference pose to a 3-vector (x, y, wrapped theta).

    Zero iff err is the identity; used as the least-squares residual of
    every pose-valued factor.
    """
    return np.array([err.x, err.y, err.theta])


def apply_pose(p: Pose2, pt) -> np.ndarray:
    """Transform a point from the local frame of p into the parent frame."""
    c, s = math.cos(p.theta), math.sin(p.theta)
    return np.array([p.x + c * pt[0] - s * pt[1], p.y + s * pt[0] + c * pt[1]])


def apply_pose_inverse(p: Pose2, pt) -> np.ndarray:
    """Transform a point from the parent frame into the local frame of p."""
    c, s = math.cos(p.theta), math.sin(p.theta)
    dx, dy = pt[0] - p.x, pt[1] - p.y
    return np.array([c * dx + s * dy, -s * dx + c * dy])


def rotate(theta: float, v) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


# ---------------------------------------------------------------------------
# contours


def _segments_intersect(p1, p2, p3, p4) -> bool:
    """Proper intersection test between open segments (p1,p2) and (p3,p4)."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


@dataclass(frozen=True)
class ObjectModel:
    """Closed planar contour of a grasped object in its body frame.

    contour: (N, 2) float array, simple polygon, counterclockwise.
    l_obj: characteristic length = max pairwise vertex distance; used to
    normalize translational errors against half the object length.
    """

    name: str
    contour: np.ndarray
    l_obj: float

    def __post_init__(self):
        v = np.asarray(self.contour, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("contour must be an (N>=3, 2) array")
        v = np.array(v)  # private copy
        v.flags.writeable = False
        object.__setattr__(self, "contour", v)
        if not (self.l_obj > 0):
            raise ValueError("l_obj must be positive")

    @property
    def n_vertices(self) -> int:
        return self.contour.shape[0]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.name.encode())
        h.update(np.round(self.contour, 12).tobytes())
        return h.hexdigest()[:16]


def _max_pairwise_distance(v: np.ndarray) -> float:
    d = v[:, None, :] - v[None, :, :]
    return float(np.sqrt((d**2).sum(-1)).max())


def object_from_dict(data: dict) -> ObjectModel:
    """Build an ObjectModel from {name, vertices, l_obj?}, validating shape.

    Clockwise input is reversed to the canonical CCW orientation; a
    self-intersecting contour is rejected.
    """
    name = str(data["name"])
    v = np.asarray(data["vertices"], dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
        raise ValueError(f"object '{name}': vertices must be an (N>=3, 2) list")
    # shoelace signed area; CCW is positive
    x, y = v[:, 0], v[:, 1]
    area2 = float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
    if area2 == 0.0:
        raise ValueError(f"object '{name}': degenerate contour")
    if area2 < 0:
        v = v[::-1].copy()
    n = v.shape[0]
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_intersect(a, b, v[j], v[(j + 1) % n]):
                raise ValueError(f"object '{name}': self-intersecting contour")
    l_obj = float(data["l_obj"]) if data.get("l_obj") else _max_pairwise_distance(v)
    return ObjectModel(name=name, contour=v, l_obj=l_obj)


def load_object(path) -> ObjectModel:
    """Load an object contour from a JSON file {name, vertices, l_obj?}."""
    with open(path) as f:
        return object_from_dict(json.load(f))


# ---------------------------------------------------------------------------
# ground queries


@dataclass(frozen=True, slots=True)
class GroundLine:
    """The flat environment surface: the line {p : normal . p = height}.

    orientation is the tangent direction; the normal (-sin, cos) points up,
    away from the surface.  Signed distances are positive above ground.
    """

    height: float = 0.0
    orientation: float = 0.0

    @property
    def normal(self) -> np.ndarray:
        return np.array([-math.sin(self.orientation), math.cos(self.orientation)])

    @property
    def tangent(self) -> np.ndarray:
        return np.array([math.cos(self.orientation), math.sin(self.orientation)])

    def signed_distance(self, pt) -> float:
        n = self.normal
        return float(n[0] * pt[0] + n[1] * pt[1] - self.height)


_TIE_TOL = 1e-12


def closest_point_to_ground(
    obj: ObjectModel, object_pose_world: Pose2, ground: GroundLine
) -> tuple[np.ndarray, float]:
    """Contour point with minimum signed distance to the ground line.

    Distance to a line is linear along each edge, so the minimum sits on a
    vertex; a flat edge parallel to the ground ties and resolves to the edge
    midpoint.  Negative distance means penetration.
    """
    v = obj.contour
    c, s = math.cos(object_pose_world.theta), math.sin(object_pose_world.theta)
    nx = -math.sin(ground.orientation)
    ny = math.cos(ground.orientation)
    ox, oy = object_pose_world.x, object_pose_world.y
    nv = v.shape[0]
    wx = [0.0] * nv
    wy = [0.0] * nv
    d = [0.0] * nv
    i = 0
    dmin = math.inf
    for k in range(nv):
        px = ox + c * v[k, 0] - s * v[k, 1]
        py = oy + s * v[k, 0] + c * v[k, 1]
        wx[k], wy[k] = px, py
        dk = nx * px + ny * py - ground.height
        d[k] = dk
        if dk < dmin:
            dmin, i = dk, k
    for j in (i - 1, (i + 1) % nv):  # adjacent-vertex tie -> flat edge down
        if abs(d[j] - dmin) <= _TIE_TOL:
            px = 0.5 * (wx[i] + wx[j])
            py = 0.5 * (wy[i] + wy[j])
            return np.array([px, py]), dmin
    return np.array([wx[i], wy[i]]), dmin


def contour_min_heights(
    obj: ObjectModel, xs: np.ndarray, ys: np.ndarray, thetas: np.ndarray, ground: GroundLine
) -> np.ndarray:
    """Vectorized lowest-point signed distances for a batch of object poses.

    For pose (t, theta) the minimum of n.(t + R(theta) v) over vertices v is
    n.t + support(-n) of the rotated contour; evaluated for all poses at once.
    Used by the discrete estimator over whole pose grids.
    """
    v = obj.contour
    n = ground.normal
    ct, st = np.cos(thetas), np.sin(thetas)
    # n . R(theta) v  ==  (R(-theta) n) . v, for every pose x vertex pair
    rx = ct * n[0] + st * n[1]
    ry = -st * n[0] + ct * n[1]
    proj = np.outer(rx, v[:, 0]) + np.outer(ry, v[:, 1])
    return n[0] * xs + n[1] * ys - ground.height + proj.min(axis=1)


def lever_arm(g: Pose2, contact: Pose2) -> np.ndarray:
    """Vector from the gripper position to the contact position, world frame."""
    return np.array([contact.x - g.x, contact.y - g.y])
