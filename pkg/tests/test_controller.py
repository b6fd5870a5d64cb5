"""Closed-loop tests for the combined estimator and receding-horizon planner."""
from __future__ import annotations

import math

import numpy as np
import pytest

from inhand.controller import (
    ControllerConfig,
    EstimatorController,
    FactorWeights,
    GoalSpec,
)
from inhand.geometry import Pose2, between, closest_point_to_ground, wrap_angle
from inhand.physics import PhysicsParams, SimState, simulate
from inhand.viterbi import EnvPrior
from util import square

PARAMS = PhysicsParams(150.0, 0.4)
ENV = EnvPrior()


def resting_start(theta=0.15, grip_above=0.01) -> SimState:
    """Square balanced on a vertex, gripper holding it from above."""
    obj = square(side=0.04)
    o = Pose2(0.0, 0.05, theta)
    _, d = closest_point_to_ground(obj, o, ENV.ground)
    o = Pose2(o.x, o.y - d, theta)
    p, _ = closest_point_to_ground(obj, o, ENV.ground)
    c = Pose2(float(p[0]), float(p[1]), 0.0)
    g = Pose2(o.x, o.y + grip_above, 0.0)
    return SimState(g, o, c, PARAMS)


def stationary_goal(state: SimState) -> GoalSpec:
    return GoalSpec(category=1, rel_pose_goal=between(state.g, state.o),
                    contact_goal=state.c)


def drive(ctrl, truth, goal, n, period=5, obj=None):
    """Run the loop against the simulator; returns (results, final truth)."""
    obj = obj or square(side=0.04)
    out = []
    for t in range(1, n + 1):
        x_map = between(truth.g, truth.o) if (t == 1 or t % period == 0) else None
        res = ctrl.step(t, truth.g, goal, x_map=x_map)
        truth = simulate(obj, truth, [res.gripper_plan[1]])[-1][0]
        out.append(res)
    return out, truth


def rotate_about(pivot: Pose2, g: Pose2, dth: float, press: float, dx: float) -> Pose2:
    ca, sa = math.cos(dth), math.sin(dth)
    rx, ry = g.x - pivot.x, g.y - pivot.y
    return Pose2(pivot.x + ca * rx - sa * ry + dx,
                 pivot.y + sa * rx + ca * ry - press, g.theta + dth)


def pivot_rollout(obj, start: SimState, dth_step: float, n: int,
                  kp=2.0, kc=0.3) -> SimState:
    """Scripted feasible maneuver: rotate the grip about the contact while a
    feedback press keeps the object's world angle and contact point put."""
    truth = start
    th_ref, cx_ref = truth.o.theta, truth.c.x
    lever = abs(truth.c.x - truth.g.x)
    for _ in range(n):
        press = lever * (abs(dth_step)
                         + kp * (truth.o.theta - th_ref) * math.copysign(1.0, dth_step))
        press = min(max(press, 0.0), 4e-4)
        dx = min(max(-kc * (truth.c.x - cx_ref), -3e-4), 3e-4)
        cmd = rotate_about(truth.c, truth.g, dth_step, press, dx)
        truth = simulate(obj, truth, [cmd])[-1][0]
    return truth


# -- validation ---------------------------------------------------------------


def test_goal_spec_rejects_bad_category():
    rel, c = Pose2(0, 0, 0), Pose2(0, 0, 0)
    with pytest.raises(ValueError):
        GoalSpec(category=0, rel_pose_goal=rel, contact_goal=c)
    with pytest.raises(ValueError):
        GoalSpec(category=5, rel_pose_goal=rel, contact_goal=c)


def test_goal_spec_heading_only_for_category_three():
    rel, c = Pose2(0, 0, 0.1), Pose2(0, 0, 0)
    with pytest.raises(ValueError):
        GoalSpec(category=3, rel_pose_goal=rel, contact_goal=c)
    with pytest.raises(ValueError):
        GoalSpec(category=1, rel_pose_goal=rel, contact_goal=c,
                 world_heading_goal=0.2)
    g = GoalSpec(category=3, rel_pose_goal=rel, contact_goal=c,
                 world_heading_goal=0.2)
    assert g.world_heading_goal == 0.2


def test_config_rejects_nonpositive_knobs():
    with pytest.raises(ValueError):
        ControllerConfig(prior_params=PARAMS, horizon=0)
    with pytest.raises(ValueError):
        ControllerConfig(prior_params=PARAMS, discrete_update_period=0)
    with pytest.raises(ValueError):
        ControllerConfig(prior_params=PARAMS, fixed_lag=1)
    with pytest.raises(ValueError):
        ControllerConfig(prior_params=PARAMS, epsilon_cm=0.0)
    with pytest.raises(ValueError):
        ControllerConfig(prior_params=PARAMS, max_step_trn=0.0)
    with pytest.raises(ValueError):
        FactorWeights(motion=(0.0, 30.0, 15.0))


def test_first_step_requires_relative_estimate():
    start = resting_start()
    ctrl = EstimatorController(square(side=0.04),
                               ControllerConfig(prior_params=PARAMS))
    with pytest.raises(ValueError):
        ctrl.step(1, start.g, stationary_goal(start), x_map=None)


def test_step_index_must_advance_by_one():
    start = resting_start()
    goal = stationary_goal(start)
    ctrl = EstimatorController(square(side=0.04),
                               ControllerConfig(prior_params=PARAMS))
    with pytest.raises(ValueError):
        ctrl.step(2, start.g, goal, x_map=between(start.g, start.o))
    ctrl.step(1, start.g, goal, x_map=between(start.g, start.o))
    with pytest.raises(ValueError):
        ctrl.step(1, start.g, goal, x_map=between(start.g, start.o))
    with pytest.raises(ValueError):
        ctrl.step(3, start.g, goal)


# -- plan anatomy -------------------------------------------------------------


def test_plan_shape_and_anchoring():
    start = resting_start()
    goal = stationary_goal(start)
    cfg = ControllerConfig(prior_params=PARAMS, horizon=6)
    ctrl = EstimatorController(square(side=0.04), cfg)
    res = ctrl.step(1, start.g, goal, x_map=between(start.g, start.o))
    assert len(res.gripper_plan) == 7
    assert len(res.predicted_o) == 6
    assert len(res.predicted_c) == 6
    assert res.gripper_plan[0] == res.estimate_g
    assert res.step == 1 and ctrl.step_index == 1
    assert set(res.goal_errors) == {"rel_rot", "rel_trn", "contact_trn"}
    assert res.total_error >= 0.0
    assert res.solve_seconds > 0.0


def test_heading_goal_reported_for_category_three():
    start = resting_start()
    rel = between(start.g, start.o)
    goal = GoalSpec(category=3, rel_pose_goal=rel, contact_goal=start.c,
                    world_heading_goal=start.o.theta)
    ctrl = EstimatorController(square(side=0.04),
                               ControllerConfig(prior_params=PARAMS))
    res = ctrl.step(1, start.g, goal, x_map=rel)
    assert "heading" in res.goal_errors
    assert res.goal_errors["heading"] < 0.05


def test_first_command_is_rate_limited():
    start = resting_start()
    cfg = ControllerConfig(prior_params=PARAMS, max_step_trn=1e-3,
                           max_step_rot=math.radians(1.0))
    ctrl = EstimatorController(square(side=0.04), cfg)
    rel0 = between(start.g, start.o)
    # an aggressive goal that the optimizer would lunge toward
    goal = GoalSpec(category=2,
                    rel_pose_goal=Pose2(rel0.x + 0.02, rel0.y, rel0.theta - 0.4),
                    contact_goal=start.c)
    truth = start
    for t in range(1, 6):
        x_map = between(truth.g, truth.o) if t == 1 else None
        res = ctrl.step(t, truth.g, goal, x_map=x_map)
        a, b = res.gripper_plan[0], res.gripper_plan[1]
        assert math.hypot(b.x - a.x, b.y - a.y) <= 1e-3 + 1e-12
        assert abs(wrap_angle(b.theta - a.theta)) <= math.radians(1.0) + 1e-12
        truth = simulate(square(side=0.04), truth, [res.gripper_plan[1]])[-1][0]


# -- graph bookkeeping --------------------------------------------------------


def test_graph_shape_after_several_steps():
    start = resting_start()
    goal = stationary_goal(start)
    T = 4
    cfg = ControllerConfig(prior_params=PARAMS, horizon=T,
                           discrete_update_period=3)
    ctrl = EstimatorController(square(side=0.04), cfg)
    n = 7
    drive(ctrl, start, goal, n, period=3)
    shape = ctrl.graph_shape()
    assert shape["gripper_prior"] == n
    assert shape["tactile"] == n // 3  # t=1 seeds instead of measuring
    assert shape["friction_estimation"] == n - 1
    assert shape["friction_control"] == T
    assert shape["motion"] == T
    assert shape["contact_maintenance"] == T
    assert shape["goal_relative"] == 1
    assert shape["goal_contact"] == 1
    assert shape["contact_prior"] == 1
    assert shape["params_prior"] == 1
    assert shape["object_init"] == 1
    assert ctrl.tactile_count == n // 3


def test_marginalization_bounds_graph_and_keeps_tracking():
    start = resting_start()
    goal = stationary_goal(start)
    cfg = ControllerConfig(prior_params=PARAMS, fixed_lag=5, horizon=4)
    ctrl = EstimatorController(square(side=0.04), cfg)
    results, truth = drive(ctrl, start, goal, 12)
    shape = ctrl.graph_shape()
    # the window spans steps t-lag .. t inclusive
    assert shape["gripper_prior"] == 6
    assert shape["friction_estimation"] == 5
    assert "marg_prior" in ctrl.graph.factors_by_kind()
    est = results[-1]
    assert math.hypot(est.estimate_o.x - truth.o.x,
                      est.estimate_o.y - truth.o.y) < 2e-3
    assert abs(wrap_angle(est.estimate_o.theta - truth.o.theta)) < 0.05


# -- closed-loop behavior -----------------------------------------------------


def test_stationary_goal_holds_pose_and_tracks_truth():
    start = resting_start()
    goal = stationary_goal(start)
    ctrl = EstimatorController(square(side=0.04),
                               ControllerConfig(prior_params=PARAMS))
    results, truth = drive(ctrl, start, goal, 20)
    est = results[-1]
    # estimates agree with the simulator
    assert math.hypot(est.estimate_o.x - truth.o.x,
                      est.estimate_o.y - truth.o.y) < 5e-4
    assert abs(wrap_angle(est.estimate_o.theta - truth.o.theta)) < 0.01
    assert math.hypot(est.estimate_c.x - truth.c.x,
                      est.estimate_c.y - truth.c.y) < 5e-4
    # the loop does not wander from a goal it already satisfies
    assert math.hypot(truth.g.x - start.g.x, truth.g.y - start.g.y) < 3e-3
    assert abs(wrap_angle(truth.g.theta - start.g.theta)) < 0.03
    assert results[-1].goal_errors["rel_rot"] < 0.01
    assert results[-1].goal_errors["contact_trn"] < 1e-3


def test_rotation_maneuver_converges():
    obj = square(side=0.04)
    start = resting_start()
    end = pivot_rollout(obj, start, math.radians(0.75), 20)
    goal = GoalSpec(category=1, rel_pose_goal=between(end.g, end.o),
                    contact_goal=end.c)
    swing = wrap_angle(between(end.g, end.o).theta
                       - between(start.g, start.o).theta)
    assert abs(swing) > math.radians(10.0)  # the maneuver is not a no-op

    ctrl = EstimatorController(obj, ControllerConfig(prior_params=PARAMS))
    truth = start
    reached_at = None
    for t in range(1, 61):
        x_map = between(truth.g, truth.o) if (t == 1 or t % 5 == 0) else None
        res = ctrl.step(t, truth.g, goal, x_map=x_map)
        truth = simulate(obj, truth, [res.gripper_plan[1]])[-1][0]
        togo = wrap_angle(goal.rel_pose_goal.theta - between(truth.g, truth.o).theta)
        c_err = math.hypot(truth.c.x - goal.contact_goal.x,
                           truth.c.y - goal.contact_goal.y)
        if abs(togo) < math.radians(2.0) and c_err < 2.5e-3:
            reached_at = t
            break
    assert reached_at is not None, (
        f"still {math.degrees(togo):+.1f} deg away after 60 steps")


def test_replanning_keeps_shared_tail_consistent():
    start = resting_start()
    goal = stationary_goal(start)
    ctrl = EstimatorController(square(side=0.04),
                               ControllerConfig(prior_params=PARAMS))
    results, _ = drive(ctrl, start, goal, 8)
    prev, last = results[-2], results[-1]
    # plans overlap on steps t+1 .. t+T; in a settled regime the re-solve
    # should barely move them
    for k in range(1, len(last.gripper_plan) - 1):
        a, b = prev.gripper_plan[k + 1], last.gripper_plan[k]
        assert math.hypot(a.x - b.x, a.y - b.y) < 1e-4
        assert abs(wrap_angle(a.theta - b.theta)) < 1e-4


def test_step_wall_clock_is_bounded():
    start = resting_start()
    goal = stationary_goal(start)
    ctrl = EstimatorController(square(side=0.04),
                               ControllerConfig(prior_params=PARAMS))
    results, _ = drive(ctrl, start, goal, 10)
    mean = float(np.mean([r.solve_seconds for r in results[1:]]))
    assert mean < 2.0  # loose ceiling: catches gross regressions only
