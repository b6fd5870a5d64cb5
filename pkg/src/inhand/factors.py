"""Factor catalog: the residual terms the estimator-controller composes.

Variable naming: g = gripper pose, o = object pose, c = extrinsic contact
frame (all world), params = shared friction parameters.  Estimation factors
tie estimates to measurements and to the friction forward model; control
factors shape the planned horizon; goal factors hold only at the horizon end.
"""

from __future__ import annotations

import math

import numpy as np

from .factorgraph import FD_STEP, Factor, VariableKey, dim_of, local_diff, retract
from .geometry import (
    GroundLine,
    ObjectModel,
    Pose2,
    apply_pose,
    apply_pose_inverse,
    between,
    closest_point_to_ground,
    compose,
    wrap_angle,
)
from .physics import ContactMode, PhysicsError, PhysicsParams, forward_step


def gripper_key(t: int) -> VariableKey:
    return VariableKey("g", t)


def object_key(t: int) -> VariableKey:
    return VariableKey("o", t)


def contact_key(t: int) -> VariableKey:
    return VariableKey("c", t)


def params_key() -> VariableKey:
    return VariableKey("params")


def _weights(w, n: int) -> np.ndarray:
    arr = np.asarray(w, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"expected {n} weights")
    return arr


# ---------------------------------------------------------------------------
# pose primitives


def _between_local(a: Pose2, b: Pose2, target: Pose2) -> np.ndarray:
    m = between(a, b)
    return np.array([m.x - target.x, m.y - target.y,
                     wrap_angle(m.theta - target.theta)])


def _between_jacobian(a: Pose2, b: Pose2) -> list[np.ndarray]:
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    mx = c * dx + s * dy
    my = -s * dx + c * dy
    ja = np.array([[-c, -s, my], [s, -c, -mx], [0.0, 0.0, -1.0]])
    jb = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    return [ja, jb]


def between_factor(kind: str, key_a: VariableKey, key_b: VariableKey,
                   target: Pose2, weights) -> Factor:
    """Penalizes deviation of the relative pose between(a, b) from target."""

    def residual(vals):
        return _between_local(vals[0], vals[1], target)

    def jacobian(vals):
        return _between_jacobian(vals[0], vals[1])

    return Factor(kind, (key_a, key_b), residual, _weights(weights, 3), jacobian)


def pose_prior_factor(kind: str, key: VariableKey, target: Pose2, weights) -> Factor:
    """Pins a pose variable to a target, residual in the target's frame so
    per-component weights mean (tangential, normal, heading)."""
    ct, st = math.cos(target.theta), math.sin(target.theta)
    jac = np.array([[ct, st, 0.0], [-st, ct, 0.0], [0.0, 0.0, 1.0]])

    def residual(vals):
        v = vals[0]
        dx, dy = v.x - target.x, v.y - target.y
        return np.array([ct * dx + st * dy, -st * dx + ct * dy,
                         wrap_angle(v.theta - target.theta)])

    def jacobian(vals):
        return [jac]

    return Factor(kind, (key,), residual, _weights(weights, 3), jacobian)


# ---------------------------------------------------------------------------
# estimation factors


def gripper_prior_factor(t: int, g_meas: Pose2, weights) -> Factor:
    """Kinematic measurement of the gripper pose at step t."""
    return pose_prior_factor("gripper_prior", gripper_key(t), g_meas, weights)


def tactile_factor(t: int, x_map: Pose2, weights) -> Factor:
    """Discrete-tracker output: the relative pose between(g, o) should match
    the decoded cell pose."""
    return between_factor("tactile", gripper_key(t), object_key(t), x_map, weights)


def contact_prior_factor(target: Pose2, weights, t: int = 1) -> Factor:
    """Anchors the first contact frame to the known ground line."""
    return pose_prior_factor("contact_prior", contact_key(t), target, weights)


def params_prior_factor(target: PhysicsParams, weights,
                        kind: str = "params_prior") -> Factor:
    """Anchors the shared friction parameters to a target (log-space)."""

    def residual(vals):
        return local_diff(vals[0], target)

    def jacobian(vals):
        return [np.eye(2)]

    return Factor(kind, (params_key(),), residual,
                  _weights(weights, 2), jacobian)


def contact_on_object_factor(obj: ObjectModel, t: int, ground: GroundLine,
                             weights) -> Factor:
    """The contact frame must sit on the object's lowest boundary point and
    stay aligned with the ground direction."""
    tx, ty = float(ground.tangent[0]), float(ground.tangent[1])
    nx, ny = float(ground.normal[0]), float(ground.normal[1])

    def residual(vals):
        o, c = vals
        p, _ = closest_point_to_ground(obj, o, ground)
        dx, dy = c.x - p[0], c.y - p[1]
        return np.array([tx * dx + ty * dy, nx * dx + ny * dy,
                         wrap_angle(c.theta - ground.orientation)])

    def jacobian(vals):
        o, c = vals
        p, _ = closest_point_to_ground(obj, o, ground)
        rx, ry = p[0] - o.x, p[1] - o.y  # lever of the lowest point
        jo = np.array([
            [-tx, -ty, -(tx * -ry + ty * rx)],
            [-nx, -ny, -(nx * -ry + ny * rx)],
            [0.0, 0.0, 0.0],
        ])
        jc = np.array([[tx, ty, 0.0], [nx, ny, 0.0], [0.0, 0.0, 1.0]])
        return [jo, jc]

    return Factor("contact_on_object", (object_key(t), contact_key(t)),
                  residual, _weights(weights, 3), jacobian)


def contact_continuity_factor(t: int, weights) -> Factor:
    """Consecutive contact frames should change smoothly."""
    return between_factor("contact_continuity", contact_key(t),
                          contact_key(t + 1), Pose2.identity(), weights)


def friction_forward_factor(obj: ObjectModel, t: int,
                            mode: ContactMode | None, weights,
                            coarse_jacobian: bool = False) -> Factor:
    """One step of the sliding forward model: the next object pose and
    contact must match what the limit-surface model predicts.

    The contact mode is frozen per factor so the residual stays smooth; the
    caller re-detects modes as estimates evolve.  If the model has no
    solution at the linearization point, a rigid attachment prediction keeps
    the residual finite.  ``coarse_jacobian`` switches the numeric blocks to
    one-sided differences: half the cost, adequate for planning horizons but
    not for calibration-grade gradients.
    """
    keys = (gripper_key(t), object_key(t), contact_key(t),
            gripper_key(t + 1), object_key(t + 1), contact_key(t + 1),
            params_key())

    def residual(vals):
        g0, o0, c0, g1, o1, c1, params = vals
        try:
            res = forward_step(obj, g0, o0, c0, g1, params, mode=mode)
            o_pred, c_pred = res.o_next, res.c_next
        except (PhysicsError, ValueError):
            o_pred = compose(g1, between(g0, o0))
            c_pred = c0
        return np.concatenate([local_diff(o1, o_pred), local_diff(c1, c_pred)])

    def jacobian(vals):
        # The prediction does not depend on the next-state keys, so those
        # blocks are exact identities in the local chart; the remaining keys
        # go through the model and are differenced numerically.
        base = residual(vals) if coarse_jacobian else None
        blocks = []
        for i in range(len(keys)):
            if i in (4, 5):
                block = np.zeros((6, 3))
                block[3 * (i - 4):3 * (i - 3), :] = np.eye(3)
                blocks.append(block)
                continue
            dim = dim_of(vals[i])
            block = np.empty((6, dim))
            for d in range(dim):
                dv = np.zeros(dim)
                dv[d] = FD_STEP
                plus = list(vals)
                plus[i] = retract(vals[i], dv)
                if coarse_jacobian:
                    block[:, d] = (residual(plus) - base) / FD_STEP
                    continue
                minus = list(vals)
                minus[i] = retract(vals[i], -dv)
                block[:, d] = (residual(plus) - residual(minus)) / (2 * FD_STEP)
            blocks.append(block)
        return blocks

    return Factor("friction", keys, residual, _weights(weights, 6), jacobian)


# ---------------------------------------------------------------------------
# control factors


def motion_factor(t: int, weights) -> Factor:
    """Penalizes gripper motion between consecutive planned steps."""
    return between_factor("motion", gripper_key(t), gripper_key(t + 1),
                          Pose2.identity(), weights)


def contact_maintenance_factor(t: int, ground: GroundLine, epsilon: float,
                               weight) -> Factor:
    """Hinge that keeps the planned motion pressing the contact into the
    ground: positive only when the rigidly-carried contact point rises by
    more than -epsilon along the ground normal."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    nx, ny = float(ground.normal[0]), float(ground.normal[1])
    keys = (gripper_key(t), gripper_key(t + 1), contact_key(t))

    def residual(vals):
        g0, g1, c = vals
        q = apply_pose_inverse(g0, (c.x, c.y))
        p1 = apply_pose(g1, q)
        zeta = nx * (p1[0] - c.x) + ny * (p1[1] - c.y)
        return np.array([max(0.0, zeta + epsilon)])

    return Factor("contact_maintenance", keys, residual, _weights(weight, 1))


def ground_clearance_factor(t: int, obj: ObjectModel, ground: GroundLine,
                            margin: float, weight) -> Factor:
    """Hinge that keeps a planned object pose inside the single-contact
    regime: every vertex but the resting one must clear the ground by at
    least ``margin``, otherwise the pose is approaching a two-contact
    configuration the sliding model cannot represent."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    v = obj.contour
    nx, ny = float(ground.normal[0]), float(ground.normal[1])

    def residual(vals):
        o = vals[0]
        c, s = math.cos(o.theta), math.sin(o.theta)
        d = (nx * (o.x + c * v[:, 0] - s * v[:, 1])
             + ny * (o.y + s * v[:, 0] + c * v[:, 1]) - ground.height)
        second = float(np.partition(d, 1)[1])
        return np.array([max(0.0, margin - second)])

    return Factor("ground_clearance", (object_key(t),), residual,
                  _weights(weight, 1))


# ---------------------------------------------------------------------------
# goal factors (horizon end only)


def relative_pose_goal_factor(t: int, goal: Pose2, weights) -> Factor:
    """Desired gripper-to-object relative pose."""
    return between_factor("goal_relative", gripper_key(t), object_key(t),
                          goal, weights)


def world_heading_goal_factor(t: int, theta_goal: float, weight) -> Factor:
    """Desired object heading in the world frame (1 dof)."""

    def residual(vals):
        return np.array([wrap_angle(vals[0].theta - theta_goal)])

    def jacobian(vals):
        return [np.array([[0.0, 0.0, 1.0]])]

    return Factor("goal_heading", (object_key(t),), residual,
                  _weights(weight, 1), jacobian)


def contact_goal_factor(t: int, c_goal: Pose2, weights) -> Factor:
    """Desired extrinsic contact frame."""
    return pose_prior_factor("goal_contact", contact_key(t), c_goal, weights)
