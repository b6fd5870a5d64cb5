"""Tactile observation surrogate: binary contact masks and per-mask beliefs.

Replaces a physical tactile sensor with a deterministic rasterizer: the object
silhouette, placed at the relative gripper-to-object pose, is clipped to a
sensor window centered on the gripper frame.  A mask is converted into a
belief over a pose grid by comparing it against a precomputed bank of
noise-free masks, one per grid cell.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import ObjectModel, Pose2
from .grid import PoseGrid

_BANK_MAGIC = b"IHMB"
_BANK_VERSION = 1


@dataclass(frozen=True)
class SensorSpec:
    """Geometry and noise model of the synthetic contact-mask sensor."""

    width: float = 0.08
    height: float = 0.08
    resolution: int = 64
    noise_flip_prob: float = 0.0
    blur_radius: float = 0.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.resolution <= 0:
            raise ValueError("sensor window and resolution must be positive")
        if not 0.0 <= self.noise_flip_prob < 1.0:
            raise ValueError("noise_flip_prob must be in [0, 1)")
        if self.blur_radius < 0:
            raise ValueError("blur_radius must be nonnegative")

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.width:.9f},{self.height:.9f},{self.resolution},"
                 f"{self.blur_radius:.9f}".encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class ContactMask:
    """Binary resolution x resolution image in the gripper/sensor frame."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=bool)
        if px.ndim != 2 or px.shape[0] != px.shape[1]:
            raise ValueError("mask must be a square 2-D array")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def resolution(self) -> int:
        return self.pixels.shape[0]

    def count(self) -> int:
        return int(self.pixels.sum())


def _pixel_centers(spec: SensorSpec) -> tuple[np.ndarray, np.ndarray]:
    r = spec.resolution
    # row 0 = top of the window, matching image conventions
    px = (np.arange(r) + 0.5) / r * spec.width - spec.width / 2.0
    py = spec.height / 2.0 - (np.arange(r) + 0.5) / r * spec.height
    return np.meshgrid(px, py, indexing="xy")


def _points_in_contour(contour: np.ndarray, qx: np.ndarray, qy: np.ndarray) -> np.ndarray:
    """Vectorized even-odd rule over a batch of query points."""
    inside = np.zeros(qx.shape, dtype=bool)
    n = len(contour)
    for k in range(n):
        x1, y1 = contour[k]
        x2, y2 = contour[(k + 1) % n]
        crosses = (y1 > qy) != (y2 > qy)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x1 + (qy - y1) / (y2 - y1) * (x2 - x1)
        inside ^= crosses & (qx < x_at)
    return inside


def _silhouette(obj: ObjectModel, rel_pose: Pose2, spec: SensorSpec) -> np.ndarray:
    qx, qy = _pixel_centers(spec)
    # transform pixel centers into the object frame instead of the contour out
    c, s = np.cos(rel_pose.theta), np.sin(rel_pose.theta)
    dx, dy = qx - rel_pose.x, qy - rel_pose.y
    ox = c * dx + s * dy
    oy = -s * dx + c * dy
    return _points_in_contour(obj.contour, ox, oy)


def render_mask(obj: ObjectModel, rel_pose: Pose2, spec: SensorSpec,
                seed: int | None = None) -> ContactMask:
    """Rasterize the object silhouette at rel_pose, clipped to the window.

    Blur (a Gaussian of blur_radius pixels, rethresholded at 0.5) distorts
    the outline; independent pixel flips with noise_flip_prob use the seed.
    Deterministic given (inputs, seed); seed None means noise-free.
    """
    mask = _silhouette(obj, rel_pose, spec)
    if spec.blur_radius > 0:
        blurred = ndimage.gaussian_filter(mask.astype(np.float32), spec.blur_radius)
        mask = blurred > 0.5
    if seed is not None and spec.noise_flip_prob > 0:
        rng = np.random.default_rng(seed)
        flips = rng.random(mask.shape) < spec.noise_flip_prob
        mask = mask ^ flips
    return ContactMask(mask)


class MaskBank:
    """Noise-free masks for every grid cell, bit-packed row-major.

    Immutable once built; shares safely across threads.  Cached to disk as a
    small header plus the raw bitset.
    """

    def __init__(self, bits: np.ndarray, popcounts: np.ndarray,
                 resolution: int, key: str):
        bits = np.ascontiguousarray(bits, dtype=np.uint8)
        bits.setflags(write=False)
        popcounts = np.ascontiguousarray(popcounts, dtype=np.int64)
        popcounts.setflags(write=False)
        self.bits = bits
        self.popcounts = popcounts
        self.resolution = resolution
        self.key = key

    def __len__(self) -> int:
        return self.bits.shape[0]

    def mask(self, i: int) -> ContactMask:
        n = self.resolution * self.resolution
        flat = np.unpackbits(self.bits[i])[:n].astype(bool)
        return ContactMask(flat.reshape(self.resolution, self.resolution))

    def save(self, path) -> None:
        header = struct.pack("<4sIIII", _BANK_MAGIC, _BANK_VERSION,
                             len(self), self.resolution, self.bits.shape[1])
        with open(path, "wb") as f:
            f.write(header)
            f.write(self.key.encode()[:64].ljust(64, b"\0"))
            f.write(self.bits.tobytes())

    @classmethod
    def load(cls, path) -> "MaskBank":
        with open(path, "rb") as f:
            magic, version, count, resolution, row = struct.unpack("<4sIIII", f.read(20))
            if magic != _BANK_MAGIC or version != _BANK_VERSION:
                raise ValueError("not a mask bank file")
            key = f.read(64).rstrip(b"\0").decode()
            bits = np.frombuffer(f.read(count * row), dtype=np.uint8)
        bits = bits.reshape(count, row)
        pops = np.bitwise_count(bits).sum(axis=1).astype(np.int64)
        return cls(bits, pops, resolution, key)


def bank_cache_key(obj: ObjectModel, grid: PoseGrid, spec: SensorSpec) -> str:
    return f"{obj.content_hash()}-{grid.content_hash()}-{spec.content_hash()}"


def build_mask_bank(obj: ObjectModel, grid: PoseGrid, spec: SensorSpec,
                    cache_dir=None) -> MaskBank:
    """Render (or load from cache) one noise-free mask per grid cell."""
    if grid.size == 0:
        raise ValueError("grid must be non-empty")
    key = bank_cache_key(obj, grid, spec)
    cache_path = None
    if cache_dir is not None:
        from pathlib import Path

        cache_path = Path(cache_dir) / f"{key}.maskbank"
        if cache_path.exists():
            bank = MaskBank.load(cache_path)
            if bank.key == key and len(bank) == grid.size:
                return bank
    n = grid.size
    npix = spec.resolution * spec.resolution
    row = (npix + 7) // 8
    bits = np.empty((n, row), dtype=np.uint8)
    pops = np.empty(n, dtype=np.int64)
    for i in range(n):
        m = _silhouette(obj, grid.pose(i), spec)
        if spec.blur_radius > 0:
            m = ndimage.gaussian_filter(m.astype(np.float32), spec.blur_radius) > 0.5
        bits[i] = np.packbits(m.ravel())
        pops[i] = int(m.sum())
    bank = MaskBank(bits, pops, spec.resolution, key)
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        bank.save(cache_path)
    return bank


def single_shot_likelihood(mask: ContactMask, bank: MaskBank,
                           temperature: float = 0.05) -> np.ndarray:
    """Belief over grid cells from one mask: softmax of IoU scores.

    Empty-vs-empty overlap counts as 1 so off-sensor poses share mass
    instead of being silently excluded.
    """
    if len(bank) == 0:
        raise ValueError("bank must be nonempty")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if mask.resolution != bank.resolution:
        raise ValueError("mask resolution does not match bank")
    npix = mask.resolution * mask.resolution
    query = np.packbits(mask.pixels.ravel())
    inter = np.bitwise_count(bank.bits & query[None, :]).sum(axis=1)
    union = bank.popcounts + mask.count() - inter
    with np.errstate(invalid="ignore"):
        iou = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
    z = iou / temperature
    z -= z.max()
    w = np.exp(z)
    belief = w / w.sum()
    return belief
