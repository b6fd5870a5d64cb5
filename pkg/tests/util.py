"""Shared helpers for the test suite: random shapes and small oracles."""
from __future__ import annotations

import numpy as np

from inhand.geometry import GroundLine, ObjectModel, Pose2, object_from_dict


def star_polygon(rng: np.random.Generator, n_min=5, n_max=12, r_lo=0.01, r_hi=0.04) -> ObjectModel:
    """Random simple polygon: radial star around the origin (may be non-convex)."""
    n = int(rng.integers(n_min, n_max + 1))
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    # keep consecutive angles distinct so edges are nondegenerate
    angles += np.linspace(0, 1e-3, n)
    radii = rng.uniform(r_lo, r_hi, n)
    v = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
    return object_from_dict({"name": "star", "vertices": v.tolist()})


def convex_polygon(rng: np.random.Generator, n=8, scale=0.03) -> ObjectModel:
    pts = rng.uniform(-scale, scale, (n * 3, 2))
    hull = _convex_hull(pts)
    return object_from_dict({"name": "hull", "vertices": hull.tolist()})


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross2(a, b):
        return a[0] * b[1] - a[1] * b[0]

    def half(iterable):
        out = []
        for p in iterable:
            while len(out) >= 2 and cross2(out[-1] - out[-2], p - out[-2]) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def square(side=1.0, name="square") -> ObjectModel:
    h = side / 2.0
    return object_from_dict(
        {"name": name, "vertices": [[-h, -h], [h, -h], [h, h], [-h, h]]}
    )


def dense_boundary_min_distance(
    obj: ObjectModel, pose: Pose2, ground: GroundLine, samples=10_000
) -> float:
    """Oracle: minimum ground distance over densely sampled boundary points."""
    v = obj.contour
    n = len(v)
    seg = np.roll(v, -1, axis=0) - v
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    total = lengths.sum()
    best = np.inf
    nrm = ground.normal
    c, s = np.cos(pose.theta), np.sin(pose.theta)
    for i in range(n):
        k = max(2, int(np.ceil(samples * lengths[i] / total)))
        t = np.linspace(0.0, 1.0, k)[:, None]
        pts = v[i] + t * seg[i]
        wx = pose.x + c * pts[:, 0] - s * pts[:, 1]
        wy = pose.y + s * pts[:, 0] + c * pts[:, 1]
        d = nrm[0] * wx + nrm[1] * wy - ground.height
        best = min(best, float(d.min()))
    return best


# ---------------------------------------------------------------------------
# dense max-product oracle for the discrete tracker


def grid_neighbors(grid, j):
    """Sources within one cell per axis of j, including j itself."""
    nx, ny, nt = grid.shape
    jx, jy, jt = grid.unravel(j)
    out = set()
    for dx in (-1, 0, 1):
        ix = jx + dx
        if not 0 <= ix < nx:
            continue
        for dy in (-1, 0, 1):
            iy = jy + dy
            if not 0 <= iy < ny:
                continue
            for dt in (-1, 0, 1):
                it = jt + dt
                if grid.circular:
                    it %= nt
                elif not 0 <= it < nt:
                    continue
                out.add(grid.ravel(ix, iy, it))
    return out


def viterbi_dense_oracle(grid, obj, env, gripper_poses, emissions):
    """Explicit-loop max-product decoding; ties break to the lowest source.

    Independent of the vectorized implementation: dense DP over all cell
    pairs with the neighborhood test done per pair.
    """
    import math as _math

    from inhand.viterbi import cell_heights

    size = grid.size
    heights = [cell_heights(grid, g, obj, env) for g in gripper_poses]

    def log_gauss(d, sigma):
        return -0.5 * (d / sigma) ** 2 - _math.log(sigma * _math.sqrt(2 * _math.pi))

    def log_em(e):
        return [(_math.log(v) if v > 0 else -_math.inf) for v in e]

    score = [a + b for a, b in zip(log_em(emissions[0]),
                                   log_gauss(heights[0], env.sigma_init))]
    bps = []
    for t in range(1, len(emissions)):
        em = log_em(emissions[t])
        new = [-_math.inf] * size
        bp = [size] * size
        for j in range(size):
            best, bsrc = -_math.inf, size
            for i in sorted(grid_neighbors(grid, j)):
                if score[i] == -_math.inf:
                    continue
                w = score[i] + log_gauss(heights[t][j] - heights[t - 1][i],
                                         env.sigma_trans)
                if w > best:
                    best, bsrc = w, i
            new[j] = best + em[j]
            bp[j] = bsrc
        score = new
        bps.append(bp)
    j = int(np.argmax(score))
    chain = [j]
    for bp in reversed(bps):
        j = bp[j]
        chain.append(j)
    chain.reverse()
    return chain, np.asarray(score)


def enumerate_all_paths_oracle(grid, obj, env, gripper_poses, emissions):
    """Literal exhaustive path enumeration (tiny problems only).

    Among equal-score paths picks the one whose reversed cell sequence is
    lexicographically smallest, matching backtracking from the lowest argmax.
    """
    import itertools
    import math as _math

    from inhand.viterbi import cell_heights

    size = grid.size
    heights = [cell_heights(grid, g, obj, env) for g in gripper_poses]

    def log_gauss(d, sigma):
        return -0.5 * (d / sigma) ** 2 - _math.log(sigma * _math.sqrt(2 * _math.pi))

    best_path, best_score = None, -_math.inf
    steps = len(emissions)
    for path in itertools.product(range(size), repeat=steps):
        ok = all(path[t] in grid_neighbors(grid, path[t - 1])
                 for t in range(1, steps))
        if not ok:
            continue
        s = 0.0
        for t in range(steps):
            e = emissions[t][path[t]]
            if e <= 0:
                s = -_math.inf
                break
            s += _math.log(e)
            if t == 0:
                s += log_gauss(heights[0][path[0]], env.sigma_init)
            else:
                s += log_gauss(heights[t][path[t]] - heights[t - 1][path[t - 1]],
                               env.sigma_trans)
        if s == -_math.inf:
            continue
        key = tuple(reversed(path))
        if s > best_score or (s == best_score and key < tuple(reversed(best_path))):
            best_path, best_score = list(path), s
    return best_path, best_score
