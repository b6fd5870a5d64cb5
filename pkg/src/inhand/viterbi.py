"""Discrete relative-pose tracker on the pose lattice.

Fuses per-step tactile beliefs with two physical cues: poses whose lowest
contour point sits near the ground are favored at initialization, and the
lowest-point height must stay consistent across steps while the pose moves
at most one cell per axis.  Decoding is max-product (Viterbi) in log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .geometry import GroundLine, ObjectModel, Pose2, contour_min_heights
from .grid import PoseGrid

_NEG_INF = float("-inf")


@dataclass(frozen=True)
class EnvPrior:
    """Known environment: ground line plus Gaussian tolerances."""

    ground_height: float = 0.0
    ground_orientation: float = 0.0
    sigma_init: float = 0.005
    sigma_trans: float = 0.005

    def __post_init__(self):
        if self.sigma_init <= 0 or self.sigma_trans <= 0:
            raise ValueError("sigmas must be positive")

    @property
    def ground(self) -> GroundLine:
        return GroundLine(self.ground_height, self.ground_orientation)


@dataclass(frozen=True)
class ViterbiState:
    """Per-cell best log-scores plus backpointers for each elapsed step."""

    grid: PoseGrid
    scores: np.ndarray
    backpointers: tuple[np.ndarray, ...]
    steps: int

    def __post_init__(self):
        if np.isnan(self.scores).any():
            raise ValueError("scores must be finite or -inf")
        if not np.isfinite(self.scores).any():
            raise ValueError("at least one cell must stay reachable")

    def marginal(self) -> np.ndarray:
        """Normalized probability over cells at the latest step."""
        return np.exp(self.scores - logsumexp(self.scores))


def cell_heights(grid: PoseGrid, g: Pose2, obj: ObjectModel, env: EnvPrior) -> np.ndarray:
    """Signed lowest-point height above ground for every cell's object pose."""
    cx, cy, ct = grid.cell_arrays()
    c, s = math.cos(g.theta), math.sin(g.theta)
    ox = g.x + c * cx - s * cy
    oy = g.y + s * cx + c * cy
    ot = g.theta + ct
    return contour_min_heights(obj, ox, oy, ot, env.ground)


def _log_gauss(d: np.ndarray, sigma: float) -> np.ndarray:
    return -0.5 * (d / sigma) ** 2 - math.log(sigma * math.sqrt(2.0 * math.pi))


def _log_emission(emission: np.ndarray, size: int) -> np.ndarray:
    em = np.asarray(emission, dtype=float)
    if em.shape != (size,):
        raise ValueError("emission shape does not match grid")
    if (em < 0).any() or np.isnan(em).any():
        raise ValueError("emission must be a nonnegative vector")
    with np.errstate(divide="ignore"):
        return np.where(em > 0, np.log(np.maximum(em, 1e-300)), _NEG_INF)


def init_prior(grid: PoseGrid, g_0: Pose2, obj: ObjectModel, env: EnvPrior,
               emission_0: np.ndarray) -> ViterbiState:
    """Start the track: emission weighted by closeness to the ground."""
    scores = _log_emission(emission_0, grid.size) + _log_gauss(
        cell_heights(grid, g_0, obj, env), env.sigma_init)
    if not np.isfinite(scores).any():
        raise ValueError("prior inconsistent with observations")
    return ViterbiState(grid, scores, (), 1)


def _shift_axis(arr: np.ndarray, s: int, axis: int, fill) -> np.ndarray:
    out = np.full_like(arr, fill)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    if s > 0:
        dst[axis], src[axis] = slice(s, None), slice(None, -s)
    else:
        dst[axis], src[axis] = slice(None, s), slice(-s, None)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _shift3(arr: np.ndarray, s: tuple[int, int, int], circular: bool, fill) -> np.ndarray:
    out = arr
    if s[2] != 0:
        out = np.roll(out, s[2], axis=2) if circular else _shift_axis(out, s[2], 2, fill)
    for axis in (0, 1):
        if s[axis] != 0:
            out = _shift_axis(out, s[axis], axis, fill)
    return out


def transition_step(state: ViterbiState, grid: PoseGrid, g_prev: Pose2,
                    g_curr: Pose2, obj: ObjectModel, env: EnvPrior,
                    emission_t: np.ndarray) -> ViterbiState:
    """One tracking step: move at most one cell per axis, keep heights steady.

    For each destination cell the best source within the 26-neighborhood
    (plus staying put) is taken; equal scores resolve to the lowest source
    index so decoding is deterministic.
    """
    if grid != state.grid:
        raise ValueError("grid does not match the tracked state")
    shape = grid.shape
    size = grid.size
    circ = grid.circular
    h_prev3 = cell_heights(grid, g_prev, obj, env).reshape(shape)
    h_curr3 = cell_heights(grid, g_curr, obj, env).reshape(shape)
    scores3 = state.scores.reshape(shape)
    idx3 = np.arange(size, dtype=np.int64).reshape(shape)

    cands = np.empty((27, size))
    srcs = np.empty((27, size), dtype=np.int64)
    k = 0
    for sx in (-1, 0, 1):
        for sy in (-1, 0, 1):
            for st in (-1, 0, 1):
                s = (sx, sy, st)
                src_scores = _shift3(scores3, s, circ, _NEG_INF)
                src_heights = _shift3(h_prev3, s, circ, 0.0)
                src_idx = _shift3(idx3, s, circ, size)
                w = src_scores + _log_gauss(h_curr3 - src_heights, env.sigma_trans)
                w = np.where(src_idx < size, w, _NEG_INF)
                cands[k] = w.ravel()
                srcs[k] = src_idx.ravel()
                k += 1
    best = cands.max(axis=0)
    at_best = cands == best[None, :]
    bp = np.where(at_best, srcs, size).min(axis=0)
    new_scores = best + _log_emission(emission_t, size)
    if not np.isfinite(new_scores).any():
        raise ValueError("track lost")
    return ViterbiState(grid, new_scores, state.backpointers + (bp,), state.steps + 1)


def decode(state: ViterbiState) -> tuple[list[Pose2], np.ndarray]:
    """Backtrack the best path; also return the last-step belief.

    The last element of the sequence is the filtered MAP relative pose.
    """
    j = int(np.argmax(state.scores))  # ties: lowest linear index
    chain = [j]
    for bp in reversed(state.backpointers):
        j = int(bp[j])
        chain.append(j)
    chain.reverse()
    poses = [state.grid.pose(i) for i in chain]
    return poses, state.marginal()
