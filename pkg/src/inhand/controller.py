"""Receding-horizon estimation and planning on one factor graph.

Each call to :meth:`EstimatorController.step` appends the newest gripper
measurement (and, when available, the discrete tracker's relative-pose
estimate) to an estimation segment and solves it; it then rebuilds a
planning horizon of future gripper poses tied to the estimate by the
sliding forward model and solves again with the estimate pinned.  The
optimized future gripper poses are the motion plan; the estimation-only
solution is the state estimate, kept out of the goal's reach on purpose.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .factorgraph import FactorGraph, SolveConfig, Values
from .factors import (
    contact_continuity_factor,
    contact_goal_factor,
    contact_key,
    contact_maintenance_factor,
    contact_on_object_factor,
    contact_prior_factor,
    friction_forward_factor,
    ground_clearance_factor,
    gripper_key,
    gripper_prior_factor,
    motion_factor,
    object_key,
    params_key,
    params_prior_factor,
    pose_prior_factor,
    relative_pose_goal_factor,
    tactile_factor,
    world_heading_goal_factor,
)
from .geometry import (
    ObjectModel,
    Pose2,
    between,
    closest_point_to_ground,
    compose,
    wrap_angle,
)
from .physics import ContactMode, PhysicsError, PhysicsParams, forward_step
from .viterbi import EnvPrior

__all__ = [
    "GoalSpec",
    "FactorWeights",
    "ControllerConfig",
    "PlanResult",
    "EstimatorController",
]


@dataclass(frozen=True)
class GoalSpec:
    """Manipulation objective, one of four supported categories.

    1: reach a gripper-to-object relative pose while the extrinsic contact
       stays where it started.
    2: same, with a deliberate relative translation component.
    3: additionally regulate the object's world heading.
    4: reach a relative pose while the contact slides to a new location.

    ``rel_pose_goal`` and ``contact_goal`` are required for every category;
    ``world_heading_goal`` exactly for category 3.
    """

    category: int
    rel_pose_goal: Pose2
    contact_goal: Pose2
    world_heading_goal: float | None = None

    def __post_init__(self):
        if self.category not in (1, 2, 3, 4):
            raise ValueError("category must be 1, 2, 3 or 4")
        if self.rel_pose_goal is None or self.contact_goal is None:
            raise ValueError("rel_pose_goal and contact_goal are required")
        has_heading = self.world_heading_goal is not None
        if self.category == 3 and not has_heading:
            raise ValueError("category 3 needs world_heading_goal")
        if self.category != 3 and has_heading:
            raise ValueError("world_heading_goal only applies to category 3")


def _check_positive(name: str, w) -> None:
    arr = np.atleast_1d(np.asarray(w, dtype=float))
    if not (np.isfinite(arr).all() and (arr > 0).all()):
        raise ValueError(f"{name} weights must be positive")


@dataclass(frozen=True)
class FactorWeights:
    """Square-root information weights per factor kind (1/units of residual).

    Estimation weights encode sensor and model confidence; control weights
    trade goal progress against motion effort.  Goal weights sit roughly an
    order of magnitude above motion so the planner actually moves.
    """

    gripper_prior: tuple = (1e4, 1e4, 1e4)
    tactile: tuple = (300.0, 300.0, 20.0)
    contact_prior: tuple = (1.0, 2e3, 2e3)
    params_prior: tuple = (3.0, 3.0)
    friction: tuple = (2e3, 2e3, 2e2, 2e3, 2e3, 2e2)
    contact_on_object: tuple = (2e3, 2e3, 2e3)
    contact_continuity: tuple = (5.0, 5.0, 5.0)
    object_init: tuple = (1.0, 1.0, 1.0)
    motion: tuple = (30.0, 30.0, 15.0)
    contact_maintenance: float = 300.0
    ground_clearance: float = 300.0
    goal_relative: tuple = (300.0, 300.0, 300.0)
    goal_heading: float = 300.0
    goal_contact: tuple = (300.0, 300.0, 300.0)
    # Anchors pinning the solved estimate while the horizon is optimized, so
    # goal pressure cannot bend the estimate toward wishful states.
    estimate_anchor: tuple = (1e4, 1e4, 1e4)
    params_anchor: tuple = (3e3, 3e3)

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            _check_positive(name, getattr(self, name))


@dataclass(frozen=True)
class ControllerConfig:
    prior_params: PhysicsParams
    env: EnvPrior = field(default_factory=EnvPrior)
    horizon: int = 10
    discrete_update_period: int = 5
    fixed_lag: int = 30
    epsilon_cm: float = 1e-4
    # Rate limits on the first planned command; the single-step physics
    # model is only trustworthy for small motions, so the executed command
    # is saturated even when the optimizer asks for a lunge.
    max_step_trn: float = 0.002
    max_step_rot: float = math.radians(2.0)
    # Planned object poses must keep every non-resting vertex this far off
    # the ground; the sliding model is single-contact only.
    clearance_margin: float = 0.003
    weights: FactorWeights = field(default_factory=FactorWeights)
    # Warm starts carry refinement across steps, so per-step iteration counts
    # stay small; the relinearization threshold reuses Jacobians of factors
    # whose variables are already settled.
    solve: SolveConfig = field(default_factory=lambda: SolveConfig(
        max_iters=10, rel_tol=1e-4, relin_threshold=1e-6))

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.discrete_update_period < 1:
            raise ValueError("discrete_update_period must be at least 1")
        if self.fixed_lag < 2:
            raise ValueError("fixed_lag must be at least 2")
        if self.epsilon_cm <= 0:
            raise ValueError("epsilon_cm must be positive")
        if self.max_step_trn <= 0 or self.max_step_rot <= 0:
            raise ValueError("rate limits must be positive")
        if self.clearance_margin <= 0:
            raise ValueError("clearance_margin must be positive")


@dataclass(frozen=True)
class PlanResult:
    """State estimate plus motion plan after one controller step.

    ``gripper_plan[0]`` is the current gripper estimate; the next ``horizon``
    entries are the planned future poses.  ``gripper_plan[1]``, the command
    meant for execution, is rate limited; later entries are the optimizer's
    unconstrained horizon and get re-planned before they are ever executed.
    ``predicted_o``/``predicted_c`` are the optimizer's object and contact
    poses along the plan.
    """

    step: int
    estimate_g: Pose2
    estimate_o: Pose2
    estimate_c: Pose2
    estimate_params: PhysicsParams
    gripper_plan: list[Pose2]
    predicted_o: list[Pose2]
    predicted_c: list[Pose2]
    errors_by_kind: dict[str, float]
    total_error: float
    goal_errors: dict[str, float]
    solve_seconds: float


_ZERO_MOTION = 1e-13


class EstimatorController:
    """Fixed-lag smoother and receding-horizon planner sharing one graph."""

    def __init__(self, obj: ObjectModel, config: ControllerConfig):
        self.obj = obj
        self.config = config
        self.graph = FactorGraph()
        self._t = 0
        self._tac_count = 0
        # step s -> (factor id, frozen mode) for estimation friction factors
        self._est_fric: dict[int, tuple[int, ContactMode | None]] = {}
        self._horizon_fids: list[int] = []

    # -- public API ----------------------------------------------------------

    @property
    def step_index(self) -> int:
        return self._t

    @property
    def tactile_count(self) -> int:
        return self._tac_count

    def step(self, t: int, g_meas: Pose2, goal: GoalSpec,
             x_map: Pose2 | None = None) -> PlanResult:
        """Advance to step t with a new gripper measurement.

        ``x_map`` is the discrete tracker's gripper-to-object estimate; the
        caller supplies it on its own schedule (typically every
        ``discrete_update_period`` steps).  At t=1 it is required and seeds
        the object estimate instead of adding a measurement factor.
        """
        if t != self._t + 1:
            raise ValueError(f"expected step {self._t + 1}, got {t}")
        t0 = time.perf_counter()
        if t == 1:
            self._init_first_step(g_meas, x_map)
        else:
            self._refresh_estimation_modes()
            self._extend_estimation(t, g_meas, x_map)
        self._drop_horizon()
        keep_from = t - self.config.fixed_lag
        if keep_from > 1:
            self.graph.marginalize_before(keep_from)
            live = set(self.graph.factor_ids())
            self._est_fric = {s: v for s, v in self._est_fric.items()
                              if v[0] in live}
        # Estimation solves alone first: goal pressure transmitted backwards
        # through the horizon chain must never bend the state estimate.
        est_values, _ = self.graph.solve(self.config.solve)
        self._build_horizon(t, goal)
        values, err = self.graph.solve(self.config.solve)
        self._t = t
        return self._collect(t, goal, est_values, values, err,
                             time.perf_counter() - t0)

    def graph_shape(self) -> dict[str, int]:
        """Factor counts with friction split into estimation and control."""
        counts = dict(self.graph.factors_by_kind())
        counts.pop("friction", None)
        counts["friction_estimation"] = len(self._est_fric)
        counts["friction_control"] = sum(
            1 for fid in self._horizon_fids
            if self.graph.factor(fid).kind == "friction")
        counts.setdefault("tactile", 0)
        return counts

    def goal_errors(self, goal: GoalSpec,
                    values: Values | None = None) -> dict[str, float]:
        """Distance of the current estimate from each active goal term.

        Keys: rel_rot (rad), rel_trn (m), contact_trn (m), and heading (rad)
        when the goal regulates the world heading.
        """
        get = (values or self.graph).get
        g = get(gripper_key(self._t))
        o = get(object_key(self._t))
        c = get(contact_key(self._t))
        e = between(goal.rel_pose_goal, between(g, o))
        out = {"rel_rot": abs(e.theta), "rel_trn": math.hypot(e.x, e.y)}
        if goal.world_heading_goal is not None:
            out["heading"] = abs(wrap_angle(o.theta - goal.world_heading_goal))
        out["contact_trn"] = math.hypot(c.x - goal.contact_goal.x,
                                        c.y - goal.contact_goal.y)
        return out

    # -- model helpers -------------------------------------------------------

    def _snap_to_ground(self, x: float, y: float) -> Pose2:
        ground = self.config.env.ground
        n = ground.normal
        d = float(n[0] * x + n[1] * y - ground.height)
        return Pose2(x - d * n[0], y - d * n[1], ground.orientation)

    def _contact_frame(self, o: Pose2) -> Pose2:
        p, _ = closest_point_to_ground(self.obj, o, self.config.env.ground)
        return self._snap_to_ground(float(p[0]), float(p[1]))

    def _roll(self, g0: Pose2, o0: Pose2, c0: Pose2, g1: Pose2,
              params: PhysicsParams):
        """Forward-model prediction used to initialize new variables."""
        rel = between(g0, g1)
        if abs(rel.x) + abs(rel.y) + abs(rel.theta) < _ZERO_MOTION:
            return o0, c0, ContactMode.STICK
        try:
            res = forward_step(self.obj, g0, o0, c0, g1, params)
            return res.o_next, res.c_next, res.mode
        except (PhysicsError, ValueError):
            return compose(g1, between(g0, o0)), c0, None

    def _detect_mode(self, g0, o0, c0, g1, params) -> ContactMode | None:
        return self._roll(g0, o0, c0, g1, params)[2]

    # -- graph construction --------------------------------------------------

    def _init_first_step(self, g_meas: Pose2, x_map: Pose2 | None):
        if x_map is None:
            raise ValueError("the first step needs a relative-pose estimate")
        w = self.config.weights
        o1 = compose(g_meas, x_map)
        c1 = self._contact_frame(o1)
        self.graph.add_variable(gripper_key(1), g_meas)
        self.graph.add_variable(object_key(1), o1)
        self.graph.add_variable(contact_key(1), c1)
        self.graph.add_variable(params_key(), self.config.prior_params)
        self.graph.add_factor(gripper_prior_factor(1, g_meas, w.gripper_prior))
        # Weak anchor on the initial object pose: before the first tactile
        # measurement arrives the object chain has a free gauge otherwise.
        self.graph.add_factor(pose_prior_factor("object_init", object_key(1),
                                                o1, w.object_init))
        self.graph.add_factor(contact_prior_factor(c1, w.contact_prior))
        self.graph.add_factor(params_prior_factor(self.config.prior_params,
                                                  w.params_prior))
        self.graph.add_factor(contact_on_object_factor(
            self.obj, 1, self.config.env.ground, w.contact_on_object))

    def _extend_estimation(self, t: int, g_meas: Pose2, x_map: Pose2 | None):
        w = self.config.weights
        g0 = self.graph.get(gripper_key(t - 1))
        o0 = self.graph.get(object_key(t - 1))
        c0 = self.graph.get(contact_key(t - 1))
        params = self.graph.get(params_key())
        o_init, c_init, mode = self._roll(g0, o0, c0, g_meas, params)
        # The step-t variables already exist as the head of the previous
        # horizon; re-seed them from the measurement and the forward model.
        self.graph.set(gripper_key(t), g_meas)
        self.graph.set(object_key(t), o_init)
        self.graph.set(contact_key(t), c_init)
        self.graph.add_factor(gripper_prior_factor(t, g_meas, w.gripper_prior))
        fid = self.graph.add_factor(
            friction_forward_factor(self.obj, t - 1, mode, w.friction))
        self._est_fric[t - 1] = (fid, mode)
        self.graph.add_factor(contact_on_object_factor(
            self.obj, t, self.config.env.ground, w.contact_on_object))
        self.graph.add_factor(contact_continuity_factor(t - 1,
                                                        w.contact_continuity))
        if x_map is not None:
            self.graph.add_factor(tactile_factor(t, x_map, w.tactile))
            self._tac_count += 1

    def _refresh_estimation_modes(self):
        """Re-detect frozen contact modes at the current estimates and swap
        out estimation friction factors whose mode changed."""
        w = self.config.weights
        params = self.graph.get(params_key())
        for s, (fid, mode) in list(self._est_fric.items()):
            now = self._detect_mode(
                self.graph.get(gripper_key(s)), self.graph.get(object_key(s)),
                self.graph.get(contact_key(s)),
                self.graph.get(gripper_key(s + 1)), params)
            if now is not None and now != mode:
                self.graph.remove_factor(fid)
                nf = friction_forward_factor(self.obj, s, now, w.friction)
                self._est_fric[s] = (self.graph.add_factor(nf), now)

    def _drop_horizon(self):
        for fid in self._horizon_fids:
            self.graph.remove_factor(fid)
        self._horizon_fids = []

    def _build_horizon(self, t: int, goal: GoalSpec):
        w, T = self.config.weights, self.config.horizon
        ground = self.config.env.ground
        params = self.graph.get(params_key())

        # Extend variables out to t+T; steps below that survive from the
        # previous horizon and keep their solved values as the warm start.
        for k in range(t + 1, t + T + 1):
            if self.graph.has_variable(gripper_key(k)):
                continue
            g_prev = self.graph.get(gripper_key(k - 1))
            o_prev = self.graph.get(object_key(k - 1))
            c_prev = self.graph.get(contact_key(k - 1))
            o_k, c_k, _ = self._roll(g_prev, o_prev, c_prev, g_prev, params)
            self.graph.add_variable(gripper_key(k), g_prev)
            self.graph.add_variable(object_key(k), o_k)
            self.graph.add_variable(contact_key(k), c_k)

        fids = []
        for k in range(t, t + T):
            mode = self._detect_mode(
                self.graph.get(gripper_key(k)), self.graph.get(object_key(k)),
                self.graph.get(contact_key(k)),
                self.graph.get(gripper_key(k + 1)), params)
            fids.append(self.graph.add_factor(friction_forward_factor(
                self.obj, k, mode, w.friction, coarse_jacobian=True)))
            fids.append(self.graph.add_factor(motion_factor(k, w.motion)))
            fids.append(self.graph.add_factor(contact_maintenance_factor(
                k, ground, self.config.epsilon_cm, w.contact_maintenance)))
            fids.append(self.graph.add_factor(
                contact_continuity_factor(k, w.contact_continuity)))
            fids.append(self.graph.add_factor(contact_on_object_factor(
                self.obj, k + 1, ground, w.contact_on_object)))
            fids.append(self.graph.add_factor(ground_clearance_factor(
                k + 1, self.obj, ground, self.config.clearance_margin,
                w.ground_clearance)))
        # Categories 1, 3 and 4 regulate only the relative orientation; the
        # relative position follows from pivot kinematics, so its goal
        # components are nearly muted to keep them from fighting the rotation.
        wr = np.asarray(w.goal_relative, dtype=float).copy()
        if goal.category != 2:
            wr[:2] *= 0.01
        fids.append(self.graph.add_factor(relative_pose_goal_factor(
            t + T, goal.rel_pose_goal, tuple(wr))))
        if goal.world_heading_goal is not None:
            fids.append(self.graph.add_factor(world_heading_goal_factor(
                t + T, goal.world_heading_goal, w.goal_heading)))
        fids.append(self.graph.add_factor(contact_goal_factor(
            t + T, goal.contact_goal, w.goal_contact)))
        # Pin the already-solved estimate (and the friction parameters) for
        # the planning solve; these anchors live and die with the horizon.
        for key in (gripper_key(t), object_key(t), contact_key(t)):
            fids.append(self.graph.add_factor(pose_prior_factor(
                "estimate_anchor", key, self.graph.get(key),
                w.estimate_anchor)))
        fids.append(self.graph.add_factor(params_prior_factor(
            params, w.params_anchor, kind="estimate_anchor")))
        self._horizon_fids = fids

    # -- results -------------------------------------------------------------

    def _rate_limit(self, prev: Pose2, nxt: Pose2) -> Pose2:
        """Saturate one commanded move at the configured per-step limits."""
        dx, dy = nxt.x - prev.x, nxt.y - prev.y
        dth = wrap_angle(nxt.theta - prev.theta)
        r = math.hypot(dx, dy)
        if r > self.config.max_step_trn:
            s = self.config.max_step_trn / r
            dx, dy = dx * s, dy * s
        lim = self.config.max_step_rot
        dth = min(lim, max(-lim, dth))
        return Pose2(prev.x + dx, prev.y + dy, prev.theta + dth)

    def _collect(self, t: int, goal: GoalSpec, est_values: Values,
                 values: Values, err: float, elapsed: float) -> PlanResult:
        T = self.config.horizon
        plan = [values.get(gripper_key(k)) for k in range(t, t + T + 1)]
        plan[0] = est_values.get(gripper_key(t))
        plan[1] = self._rate_limit(plan[0], plan[1])
        pred_o = [values.get(object_key(k)) for k in range(t + 1, t + T + 1)]
        pred_c = [values.get(contact_key(k)) for k in range(t + 1, t + T + 1)]
        return PlanResult(
            step=t,
            estimate_g=est_values.get(gripper_key(t)),
            estimate_o=est_values.get(object_key(t)),
            estimate_c=est_values.get(contact_key(t)),
            estimate_params=est_values.get(params_key()),
            gripper_plan=plan,
            predicted_o=pred_o,
            predicted_c=pred_c,
            errors_by_kind=self.graph.errors_by_kind(),
            total_error=err,
            goal_errors=self.goal_errors(goal, est_values),
            solve_seconds=elapsed,
        )
