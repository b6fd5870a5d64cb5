"""Discretized relative-pose lattice shared by the tactile and tracking layers.

The grid covers the relative gripper-to-object pose X = inverse(g) * o with a
regular lattice: translations at 5 mm and headings at 10 degrees by default.
Cells are indexed in C order (x major, then y, then theta) and the heading
axis wraps when the range spans the full circle.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ObjectModel, Pose2, wrap_angle

_TWO_PI = 2.0 * math.pi
DEFAULT_DXY = 0.005
DEFAULT_DTHETA = math.radians(10.0)


def _axis(lo: float, hi: float, step: float) -> np.ndarray:
    if step <= 0:
        raise ValueError("grid step must be positive")
    if hi < lo:
        raise ValueError("grid range must be nondecreasing")
    n = int(round((hi - lo) / step)) + 1
    pts = lo + step * np.arange(n)
    if abs(pts[-1] - hi) > 1e-9:
        raise ValueError("grid range must be a whole number of steps")
    return pts


@dataclass(frozen=True)
class PoseGrid:
    """Regular lattice over relative poses with an index <-> pose bijection."""

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    theta_range: tuple[float, float] = (-math.pi, math.pi)
    dx: float = DEFAULT_DXY
    dy: float = DEFAULT_DXY
    dtheta: float = DEFAULT_DTHETA
    xs: np.ndarray = field(init=False, repr=False, compare=False)
    ys: np.ndarray = field(init=False, repr=False, compare=False)
    thetas: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        xs = _axis(self.x_range[0], self.x_range[1], self.dx)
        ys = _axis(self.y_range[0], self.y_range[1], self.dy)
        t0, t1 = self.theta_range
        if abs((t1 - t0) - _TWO_PI) <= 1e-9:
            # full circle: the endpoint duplicates the start, drop it
            n = int(round(_TWO_PI / self.dtheta))
            if abs(n * self.dtheta - _TWO_PI) > 1e-9:
                raise ValueError("dtheta must divide the full circle")
            thetas = t0 + self.dtheta * np.arange(n)
        else:
            thetas = _axis(t0, t1, self.dtheta)
        for arr in (xs, ys, thetas):
            arr.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "thetas", thetas)

    @property
    def circular(self) -> bool:
        """True when the heading axis wraps around the full circle."""
        return abs((self.theta_range[1] - self.theta_range[0]) - _TWO_PI) <= 1e-9

    @property
    def shape(self) -> tuple[int, int, int]:
        return (len(self.xs), len(self.ys), len(self.thetas))

    @property
    def size(self) -> int:
        nx, ny, nt = self.shape
        return nx * ny * nt

    def ravel(self, ix: int, iy: int, it: int) -> int:
        nx, ny, nt = self.shape
        return (ix * ny + iy) * nt + it

    def unravel(self, i: int) -> tuple[int, int, int]:
        nx, ny, nt = self.shape
        it = i % nt
        iy = (i // nt) % ny
        ix = i // (nt * ny)
        return ix, iy, it

    def _snap_axis(self, value: float, axis: np.ndarray, step: float) -> int:
        k = int(round((value - axis[0]) / step))
        return min(max(k, 0), len(axis) - 1)

    def index(self, p: Pose2) -> int:
        """Linear index of the nearest cell; positions clamp, headings wrap."""
        ix = self._snap_axis(p.x, self.xs, self.dx)
        iy = self._snap_axis(p.y, self.ys, self.dy)
        if self.circular:
            it = int(round(wrap_angle(p.theta - self.thetas[0]) / self.dtheta))
            it %= len(self.thetas)
        else:
            it = self._snap_axis(wrap_angle(p.theta), self.thetas, self.dtheta)
        return self.ravel(ix, iy, it)

    def pose(self, i: int) -> Pose2:
        if not 0 <= i < self.size:
            raise IndexError("cell index out of range")
        ix, iy, it = self.unravel(i)
        return Pose2(float(self.xs[ix]), float(self.ys[iy]), float(self.thetas[it]))

    def snap(self, p: Pose2) -> Pose2:
        return self.pose(self.index(p))

    def cell_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-cell (x, y, theta) arrays in linear-index order."""
        gx, gy, gt = np.meshgrid(self.xs, self.ys, self.thetas, indexing="ij")
        return gx.ravel(), gy.ravel(), gt.ravel()

    def content_hash(self) -> str:
        h = hashlib.sha256()
        fields = (*self.x_range, *self.y_range, *self.theta_range,
                  self.dx, self.dy, self.dtheta)
        h.update(",".join(f"{v:.9f}" for v in fields).encode())
        return h.hexdigest()[:16]


def grid_for_object(obj: ObjectModel, margin: float = 0.0045,
                    dxy: float = DEFAULT_DXY,
                    dtheta: float = DEFAULT_DTHETA) -> PoseGrid:
    """Default grid sized to an object: grasp points lie inside the contour,
    so relative positions are bounded by half the object length plus margin.
    The margin keeps 40-60 mm objects in a 5k-9k cell band at default steps."""
    half = int(math.ceil((obj.l_obj / 2.0 + margin) / dxy))
    r = half * dxy
    return PoseGrid((-r, r), (-r, r), dx=dxy, dy=dxy, dtheta=dtheta)
