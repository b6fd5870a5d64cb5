"""Sparse incremental nonlinear least-squares over manifold variables.

Variables are planar poses or physics parameters; factors contribute weighted
residual vectors.  Solving is Levenberg-Marquardt on the stacked weighted
residuals with additive retraction (heading components wrap).  Incremental
use warm-starts from the previous estimate and caches factor linearizations
whose variables have not moved; old steps can be marginalized into Gaussian
priors to bound the active window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .geometry import Pose2, wrap_angle
from .physics import PhysicsParams

FD_STEP = 1e-6


class FactorGraphError(RuntimeError):
    pass


class VariableKey(NamedTuple):
    """Identity of one unknown: a kind plus a step (None for shared params)."""

    kind: str
    step: int | None = None

    def __repr__(self):
        return f"{self.kind}{'' if self.step is None else self.step}"


# ---------------------------------------------------------------------------
# manifold charts


def dim_of(value) -> int:
    if isinstance(value, Pose2):
        return 3
    if isinstance(value, PhysicsParams):
        return 2
    raise TypeError(f"unsupported variable type {type(value).__name__}")


def retract(value, delta):
    """Apply a tangent increment: additive with heading wrap for poses,
    multiplicative (log-space) for physics parameters so they stay positive."""
    if isinstance(value, Pose2):
        return Pose2(value.x + delta[0], value.y + delta[1], value.theta + delta[2])
    if isinstance(value, PhysicsParams):
        return PhysicsParams(value.fmax_over_mmax * math.exp(delta[0]),
                             value.mu * math.exp(delta[1]))
    raise TypeError(f"unsupported variable type {type(value).__name__}")


def local_diff(a, b) -> np.ndarray:
    """Tangent coordinates of a relative to b (a 'minus' b)."""
    if isinstance(a, Pose2):
        return np.array([a.x - b.x, a.y - b.y, wrap_angle(a.theta - b.theta)])
    if isinstance(a, PhysicsParams):
        return np.array([math.log(a.fmax_over_mmax / b.fmax_over_mmax),
                         math.log(a.mu / b.mu)])
    raise TypeError(f"unsupported variable type {type(a).__name__}")


class Values:
    """Immutable-by-convention snapshot of variable assignments."""

    def __init__(self, data: dict | None = None):
        self._data = dict(data or {})

    def get(self, key: VariableKey):
        return self._data[key]

    def __contains__(self, key):
        return key in self._data

    def __len__(self):
        return len(self._data)

    def keys(self):
        return self._data.keys()

    def items(self):
        return self._data.items()

    def copy(self) -> "Values":
        return Values(self._data)


@dataclass
class Factor:
    """One residual term: kind label, variable keys, residual in key order.

    weights are per-component inverse standard deviations; the optional
    jacobian returns one (r_dim x var_dim) block per key in key order.
    """

    kind: str
    keys: tuple[VariableKey, ...]
    residual: Callable
    weights: np.ndarray
    jacobian: Callable | None = None

    def __post_init__(self):
        self.keys = tuple(self.keys)
        self.weights = np.asarray(self.weights, dtype=float)
        if (self.weights <= 0).any():
            raise ValueError("factor weights must be positive")


@dataclass
class SolveConfig:
    max_iters: int = 50
    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    damping_init: float = 1e-6
    damping_max: float = 1e10
    relin_threshold: float = 0.0  # 0 disables linearization reuse


def evaluate_jacobians(factor: Factor, at: dict | Values) -> list[np.ndarray]:
    """Jacobian blocks per key: analytic when provided, else central
    differences with step 1e-6 in each tangent coordinate."""
    vals = [at.get(k) if isinstance(at, Values) else at[k] for k in factor.keys]
    if factor.jacobian is not None:
        blocks = [np.asarray(b, dtype=float) for b in factor.jacobian(vals)]
    else:
        blocks = []
        for vi, v in enumerate(vals):
            d = dim_of(v)
            cols = []
            for k in range(d):
                delta = np.zeros(d)
                delta[k] = FD_STEP
                hi = list(vals)
                hi[vi] = retract(v, delta)
                lo = list(vals)
                lo[vi] = retract(v, -delta)
                r_hi = np.asarray(factor.residual(hi), dtype=float)
                r_lo = np.asarray(factor.residual(lo), dtype=float)
                cols.append((r_hi - r_lo) / (2 * FD_STEP))
            blocks.append(np.column_stack(cols))
    for b in blocks:
        if not np.all(np.isfinite(b)):
            raise FactorGraphError(f"non-finite jacobian in factor kind {factor.kind}")
    return blocks


class FactorGraph:
    """Single-writer factor graph with batch and incremental solving."""

    def __init__(self):
        self._values: dict[VariableKey, object] = {}
        self._factors: dict[int, Factor] = {}
        self._next_id = 0
        self._lin_cache: dict[int, tuple[list, np.ndarray, list[np.ndarray]]] = {}

    # -- construction -------------------------------------------------------

    def add_variable(self, key: VariableKey, initial_value) -> None:
        if key in self._values:
            raise FactorGraphError(f"duplicate variable {key}")
        dim_of(initial_value)  # type check
        self._values[key] = initial_value

    def add_factor(self, factor: Factor) -> int:
        for k in factor.keys:
            if k not in self._values:
                raise FactorGraphError(f"factor {factor.kind} references unknown {k}")
        fid = self._next_id
        self._next_id += 1
        self._factors[fid] = factor
        return fid

    def remove_factor(self, fid: int) -> None:
        self._factors.pop(fid)
        self._lin_cache.pop(fid, None)

    def has_variable(self, key: VariableKey) -> bool:
        return key in self._values

    def get(self, key: VariableKey):
        return self._values[key]

    def set(self, key: VariableKey, value) -> None:
        if key not in self._values:
            raise FactorGraphError(f"unknown variable {key}")
        self._values[key] = value

    def variable_keys(self):
        return list(self._values.keys())

    def factors_by_kind(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for f in self._factors.values():
            out[f.kind] = out.get(f.kind, 0) + 1
        return out

    def errors_by_kind(self) -> dict[str, float]:
        """Total weighted squared residual per factor kind."""
        out: dict[str, float] = {}
        for fid, f in self._factors.items():
            rw = f.weights * self._residual_of(fid, f)
            out[f.kind] = out.get(f.kind, 0.0) + float(rw @ rw)
        return out

    def factor_ids(self, kind: str | None = None) -> list[int]:
        return [fid for fid, f in self._factors.items()
                if kind is None or f.kind == kind]

    def factor(self, fid: int) -> Factor:
        return self._factors[fid]

    # -- evaluation ---------------------------------------------------------

    def _residual_of(self, fid: int, factor: Factor) -> np.ndarray:
        vals = [self._values[k] for k in factor.keys]
        r = np.asarray(factor.residual(vals), dtype=float)
        if not np.all(np.isfinite(r)):
            raise FactorGraphError(
                f"non-finite residual in factor kind {factor.kind} (id {fid})")
        if r.shape != factor.weights.shape:
            raise FactorGraphError(
                f"residual dimension mismatch in factor kind {factor.kind}")
        return r

    def total_error(self) -> float:
        err = 0.0
        for fid, f in self._factors.items():
            rw = f.weights * self._residual_of(fid, f)
            err += float(rw @ rw)
        return err

    def _linearize(self, fid: int, factor: Factor, relin_threshold: float):
        vals = [self._values[k] for k in factor.keys]
        cached = self._lin_cache.get(fid)
        if cached is not None and relin_threshold > 0:
            old_vals, r, blocks = cached
            moved = 0.0
            for a, b in zip(vals, old_vals):
                moved = max(moved, float(np.max(np.abs(local_diff(a, b)))))
            if moved <= relin_threshold:
                return r, blocks
        r = self._residual_of(fid, factor)
        blocks = evaluate_jacobians(factor, self._values)
        self._lin_cache[fid] = (vals, r, blocks)
        return r, blocks

    # -- solving ------------------------------------------------------------

    def _ordering(self):
        def sort_key(k: VariableKey):
            return (k.step is None, k.step if k.step is not None else 0, k.kind)

        order = sorted(self._values.keys(), key=sort_key)
        offsets = {}
        pos = 0
        for k in order:
            offsets[k] = pos
            pos += dim_of(self._values[k])
        return order, offsets, pos

    def _sparsity_plan(self, offsets):
        """Static index structure of the stacked Jacobian for the current
        factor set; reused across iterations of one solve."""
        rows_i: list[np.ndarray] = []
        cols_i: list[np.ndarray] = []
        slots = []
        row0 = 0
        nnz = 0
        for fid, f in self._factors.items():
            rdim = len(f.weights)
            spans = []
            for key in f.keys:
                bw = dim_of(self._values[key])
                rows_i.append(np.repeat(np.arange(rdim) + row0, bw))
                cols_i.append(np.tile(np.arange(bw) + offsets[key], rdim))
                spans.append((nnz, nnz + rdim * bw))
                nnz += rdim * bw
            slots.append((fid, f, row0, spans))
            row0 += rdim
        rows = np.concatenate(rows_i) if rows_i else np.empty(0, dtype=int)
        cols = np.concatenate(cols_i) if cols_i else np.empty(0, dtype=int)
        return slots, rows, cols, row0, nnz

    def _assemble(self, offsets, total_dim, relin_threshold, plan=None):
        if plan is None:
            plan = self._sparsity_plan(offsets)
        slots, rows, cols, n_rows, nnz = plan
        data = np.empty(nnz)
        rhs = np.empty(n_rows)
        for fid, f, row0, spans in slots:
            r, blocks = self._linearize(fid, f, relin_threshold)
            w = f.weights
            rhs[row0:row0 + len(r)] = w * r
            for (lo, hi), block in zip(spans, blocks):
                data[lo:hi] = (w[:, None] * block).ravel()
        J = scipy.sparse.coo_matrix((data, (rows, cols)),
                                    shape=(n_rows, total_dim)).tocsr()
        return J, rhs

    def solve(self, config: SolveConfig | None = None) -> tuple[Values, float]:
        """Levenberg-Marquardt to a fixed point; accepted steps never
        increase the total squared error."""
        cfg = config or SolveConfig()
        if not self._factors:
            raise FactorGraphError("graph has no factors")
        order, offsets, n = self._ordering()
        plan = self._sparsity_plan(offsets)
        lam = cfg.damping_init
        err = self.total_error()
        for _ in range(cfg.max_iters):
            J, r = self._assemble(offsets, n, cfg.relin_threshold, plan)
            H = (J.T @ J).tocsc()
            g = J.T @ r
            accepted = False
            any_delta = False
            while lam <= cfg.damping_max:
                damped = H + lam * scipy.sparse.diags(H.diagonal() + 1e-12)
                try:
                    delta = scipy.sparse.linalg.spsolve(damped, -g)
                except Exception:
                    delta = None
                if delta is not None and np.all(np.isfinite(delta)):
                    any_delta = True
                    backup = dict(self._values)
                    for k in order:
                        d = dim_of(self._values[k])
                        off = offsets[k]
                        self._values[k] = retract(self._values[k], delta[off:off + d])
                    new_err = self.total_error()
                    if new_err <= err + 1e-15:
                        accepted = True
                        improved = err - new_err
                        err = new_err
                        lam = max(lam / 3.0, 1e-12)
                        break
                    self._values = backup
                lam *= 10.0
            if not accepted:
                if not any_delta:
                    raise FactorGraphError("singular normal equations")
                break
            if improved <= cfg.abs_tol or improved <= cfg.rel_tol * max(err, 1e-300):
                break
        return Values(self._values), err

    def incremental_update(self, new_vars: dict | None, new_factors=None,
                           config: SolveConfig | None = None) -> tuple[Values, float]:
        """Add variables/factors, then re-solve warm-started from the current
        estimate; reaches the same fixed point as a batch solve."""
        for key, value in (new_vars or {}).items():
            self.add_variable(key, value)
        for f in (new_factors or []):
            self.add_factor(f)
        if not self._factors:
            return Values(self._values), 0.0
        return self.solve(config)

    # -- marginalization ----------------------------------------------------

    def marginalize_before(self, keep_from_step: int) -> None:
        """Replace all variables with step < keep_from_step by a Gaussian
        prior on the variables they connect to (Schur complement at the
        current estimate)."""
        drop = [k for k in self._values
                if k.step is not None and k.step < keep_from_step]
        if not drop:
            return
        drop_set = set(drop)
        touching = [(fid, f) for fid, f in self._factors.items()
                    if any(k in drop_set for k in f.keys)]
        boundary: list[VariableKey] = []
        for _, f in touching:
            for k in f.keys:
                if k not in drop_set and k not in boundary:
                    boundary.append(k)
        local_keys = drop + boundary
        local_off = {}
        pos = 0
        for k in local_keys:
            local_off[k] = pos
            pos += dim_of(self._values[k])
        H = np.zeros((pos, pos))
        g = np.zeros(pos)
        for fid, f in touching:
            r = f.weights * self._residual_of(fid, f)
            blocks = evaluate_jacobians(f, self._values)
            row = np.hstack([f.weights[:, None] * b for b in blocks])
            idx = np.concatenate([
                np.arange(local_off[k], local_off[k] + dim_of(self._values[k]))
                for k in f.keys])
            H[np.ix_(idx, idx)] += row.T @ row
            g[idx] += row.T @ r
        nd = sum(dim_of(self._values[k]) for k in drop)
        Hrr, Hrb = H[:nd, :nd], H[:nd, nd:]
        Hbb, gr, gb = H[nd:, nd:], g[:nd], g[nd:]
        jitter = 1e-10 * max(1.0, float(np.trace(Hrr)) / max(nd, 1))
        Hrr_inv = scipy.linalg.pinvh(Hrr + jitter * np.eye(nd))
        H_new = Hbb - Hrb.T @ Hrr_inv @ Hrb
        g_new = gb - Hrb.T @ Hrr_inv @ gr
        if boundary:
            nb = H_new.shape[0]
            w, V = np.linalg.eigh(0.5 * (H_new + H_new.T))
            w = np.maximum(w, 0.0)
            L = np.diag(np.sqrt(w)) @ V.T  # L^T L == H_new
            r0 = np.linalg.lstsq(L.T, g_new, rcond=None)[0]
            lin_points = {k: self._values[k] for k in boundary}
            b_keys = tuple(boundary)
            b_off = {}
            p = 0
            for k in b_keys:
                b_off[k] = p
                p += dim_of(lin_points[k])

            def residual(vals, _L=L, _r0=r0, _keys=b_keys, _lin=lin_points,
                         _off=b_off, _dim=nb):
                delta = np.zeros(_dim)
                for kk, vv in zip(_keys, vals):
                    d = local_diff(vv, _lin[kk])
                    delta[_off[kk]:_off[kk] + len(d)] = d
                return _L @ delta + _r0

            def jacobian(vals, _L=L, _keys=b_keys, _lin=lin_points, _off=b_off):
                return [_L[:, _off[kk]:_off[kk] + dim_of(_lin[kk])] for kk in _keys]

            prior = Factor("marg_prior", b_keys, residual,
                           np.ones(nb), jacobian=jacobian)
        for fid, _ in touching:
            self.remove_factor(fid)
        for k in drop:
            del self._values[k]
        if boundary:
            self.add_factor(prior)

    # -- introspection ------------------------------------------------------

    def dump(self) -> str:
        """Structured text description: variables, factors, residuals."""
        lines = ["variables:"]
        order, _, _ = self._ordering()
        for k in order:
            v = self._values[k]
            if isinstance(v, Pose2):
                lines.append(f"  {k}: pose ({v.x:.6f}, {v.y:.6f}, {v.theta:.6f})")
            else:
                lines.append(f"  {k}: params (fmax_over_mmax={v.fmax_over_mmax:.4f}, "
                             f"mu={v.mu:.4f})")
        lines.append("factors:")
        for fid in sorted(self._factors):
            f = self._factors[fid]
            r = self._residual_of(fid, f)
            wn = float(np.linalg.norm(f.weights * r))
            keys = ",".join(repr(k) for k in f.keys)
            lines.append(f"  #{fid} {f.kind} [{keys}] |wr|={wn:.3e}")
        return "\n".join(lines)
