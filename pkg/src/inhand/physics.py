"""Quasistatic mechanics of an object sliding in a grasp while pushed on the ground.

The grasp is a planar friction patch with an ellipsoidal limit surface; the
environment is a rigid line with Coulomb friction.  Over one step the gripper
moves from g_prev to g_next and the object pose o_next is the unique pose for
which, simultaneously:

  (a) the in-grasp slip twist is parallel to the wrench the object transmits
      to the gripper, mapped through the limit-surface metric
      (omega, vx, vy) ~ (M * r^2, Fx, Fy) with r = fmax_over_mmax
      (equivalently, antiparallel to the friction wrench on the object);
  (b) that wrench has zero net torque about the extrinsic contact point;
  (c) the object material point at the contact has zero ground-normal
      velocity; and
  (d) either the tangential contact velocity is zero with the force inside
      the friction cone (Stick), or the force sits on the cone boundary
      opposing the sliding (Slide+/-).

Forces are quasistatically scale-free; we report them normalized to a unit
normal force at contact.  The same functions serve as ground-truth simulator
and as the predictive model inside the friction factor of the smoother.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .geometry import (
    GroundLine,
    ObjectModel,
    Pose2,
    Twist2,
    Wrench2,
    closest_point_to_ground,
    wrap_angle,
)

__all__ = [
    "PhysicsParams",
    "ContactForce",
    "ContactMode",
    "SimState",
    "PhysicsError",
    "StepResult",
    "sliding_twist_direction",
    "grasp_wrench_from_contact",
    "grasp_slip",
    "contact_velocities",
    "forward_step",
    "simulate",
    "residual_report",
    "ground_from_contact",
]

_PEN_TOL = 1e-12  # rigid-motion penetration below this counts as contact-free
_SIM_PEN_TOL = 1e-6  # trajectory non-penetration tolerance (meters)
_BRENT_RTOL = 4.0 * np.finfo(float).eps


@dataclass(frozen=True, slots=True)
class PhysicsParams:
    """Identifiable friction parameters: grasp ratio F_max/M_max (1/m) and
    the extrinsic Coulomb coefficient."""

    fmax_over_mmax: float
    mu: float

    def __post_init__(self):
        if not (self.fmax_over_mmax > 0 and math.isfinite(self.fmax_over_mmax)):
            raise ValueError("fmax_over_mmax must be strictly positive")
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise ValueError("mu must be strictly positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.fmax_over_mmax, self.mu])


@dataclass(frozen=True, slots=True)
class ContactForce:
    """Ground reaction on the object at the contact, in the contact frame.

    f_n is along the ground normal (into the object; nonnegative), f_t along
    the tangent.  Reported up to a positive scale (f_n normalized to 1).
    """

    f_n: float
    f_t: float

    def __post_init__(self):
        if self.f_n < 0:
            raise ValueError("contact cannot pull (f_n >= 0)")


class ContactMode(enum.Enum):
    STICK = "Stick"
    SLIDE_POS = "SlidePositive"
    SLIDE_NEG = "SlideNegative"
    SEPARATED = "Separated"


@dataclass(frozen=True, slots=True)
class SimState:
    g: Pose2
    o: Pose2
    c: Pose2
    params: PhysicsParams


class StepResult(NamedTuple):
    o_next: Pose2
    c_next: Pose2
    force: ContactForce
    mode: ContactMode


class PhysicsError(RuntimeError):
    """Raised when no contact hypothesis is consistent; carries diagnostics."""

    def __init__(self, message: str, residuals: dict | None = None):
        super().__init__(message)
        self.residuals = residuals or {}


def ground_from_contact(c: Pose2) -> GroundLine:
    """Recover the environment line from a contact frame lying on it."""
    n = (-math.sin(c.theta), math.cos(c.theta))
    return GroundLine(height=n[0] * c.x + n[1] * c.y, orientation=c.theta)


# ---------------------------------------------------------------------------
# elementary maps


def sliding_twist_direction(w: Wrench2, params: PhysicsParams) -> Twist2:
    """Unit slip direction for a grasp wrench via the limit-surface normal.

    Only the ratio F_max/M_max enters: the direction is the normalization of
    (m * ratio^2, fx, fy).  The wrench components must be expressed in the
    gripper frame with the torque taken about the gripper origin.
    """
    r2 = params.fmax_over_mmax**2
    a = (w.m * r2, w.fx, w.fy)
    norm = math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])
    if norm == 0.0:
        raise ValueError("indeterminate slide direction")
    return Twist2(a[0] / norm, a[1] / norm, a[2] / norm)


def grasp_wrench_from_contact(
    force: ContactForce, ground_orientation: float, l_gc
) -> Wrench2:
    """Wrench transmitted to the grasp by a contact force, world axes.

    The force (f_t, f_n) is rotated from the contact frame; the torque about
    the gripper origin is fixed by zero net torque at the contact point:
    M = l_gc x F with l_gc the gripper-to-contact vector.
    """
    ct, st = math.cos(ground_orientation), math.sin(ground_orientation)
    fx = ct * force.f_t - st * force.f_n
    fy = st * force.f_t + ct * force.f_n
    m = l_gc[0] * fy - l_gc[1] * fx
    return Wrench2(m, fx, fy)


def grasp_slip(g_prev: Pose2, o_prev: Pose2, g_next: Pose2, o_next: Pose2):
    """Per-step in-grasp slip twist (omega, vx, vy), gripper frame.

    omega is the change of relative heading; (vx, vy) is the displacement,
    in gripper coordinates, of the object material point that started at the
    gripper origin.  Zero iff the relative pose is unchanged.
    """
    Xp = _between_t(g_prev, o_prev)
    Xn = _between_t(g_next, o_next)
    return _slip_t(Xp, Xn)


def _between_t(a: Pose2, b: Pose2):
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return (c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta)


def _slip_t(Xp, Xn):
    cp, sp = math.cos(Xp[2]), math.sin(Xp[2])
    qx = -(cp * Xp[0] + sp * Xp[1])
    qy = -(-sp * Xp[0] + cp * Xp[1])
    cn, sn = math.cos(Xn[2]), math.sin(Xn[2])
    vx = Xn[0] + cn * qx - sn * qy
    vy = Xn[1] + sn * qx + cn * qy
    return wrap_angle(Xn[2] - Xp[2]), vx, vy


def _point_boundary_distance(obj: ObjectModel, pt) -> float:
    v = obj.contour
    w = np.roll(v, -1, axis=0) - v
    d = np.asarray(pt, dtype=float) - v
    t = np.clip((d * w).sum(1) / (w * w).sum(1), 0.0, 1.0)
    gap = d - t[:, None] * w
    return float(np.sqrt((gap * gap).sum(1)).min())


def contact_velocities(
    obj: ObjectModel,
    g_prev: Pose2,
    o_prev: Pose2,
    c_prev: Pose2,
    g_next: Pose2,
    o_next: Pose2,
    ground_orientation: float,
) -> tuple[float, float]:
    """Per-step displacement of the object material point at the contact,
    split along the ground normal and tangent.

    The gripper poses are part of the step definition but the material-point
    displacement depends only on the object motion.
    """
    co, so = math.cos(o_prev.theta), math.sin(o_prev.theta)
    dx, dy = c_prev.x - o_prev.x, c_prev.y - o_prev.y
    mx, my = co * dx + so * dy, -so * dx + co * dy  # material point, object frame
    if _point_boundary_distance(obj, (mx, my)) > 1e-6:
        raise ValueError("contact point does not lie on the object boundary")
    cn, sn = math.cos(o_next.theta), math.sin(o_next.theta)
    px = o_next.x + cn * mx - sn * my
    py = o_next.y + sn * mx + cn * my
    ddx, ddy = px - c_prev.x, py - c_prev.y
    ct, st = math.cos(ground_orientation), math.sin(ground_orientation)
    v_n = -st * ddx + ct * ddy
    v_t = ct * ddx + st * ddy
    return v_n, v_t


# ---------------------------------------------------------------------------
# forward step


def _det3(a, b, c) -> float:
    return (
        a[0] * (b[1] * c[2] - b[2] * c[1])
        - a[1] * (b[0] * c[2] - b[2] * c[0])
        + a[2] * (b[0] * c[1] - b[1] * c[0])
    )


class _StepGeom:
    """Shared per-step quantities for the hypothesis solvers."""

    __slots__ = (
        "c_pt", "tx", "ty", "nx", "ny", "mx", "my", "qx", "qy",
        "Xp", "g_next", "D0", "D1", "r2",
    )

    def __init__(self, g_prev, o_prev, c_prev, g_next, params):
        self.c_pt = (c_prev.x, c_prev.y)
        ct, st = math.cos(c_prev.theta), math.sin(c_prev.theta)
        self.tx, self.ty = ct, st
        self.nx, self.ny = -st, ct
        co, so = math.cos(o_prev.theta), math.sin(o_prev.theta)
        dx, dy = c_prev.x - o_prev.x, c_prev.y - o_prev.y
        self.mx = co * dx + so * dy
        self.my = -so * dx + co * dy
        self.Xp = _between_t(g_prev, o_prev)
        cp, sp = math.cos(self.Xp[2]), math.sin(self.Xp[2])
        self.qx = -(cp * self.Xp[0] + sp * self.Xp[1])
        self.qy = -(-sp * self.Xp[0] + cp * self.Xp[1])
        self.g_next = g_next
        self.r2 = params.fmax_over_mmax**2
        # wrench-direction family D(f_t) = D0 + f_t*D1 for unit normal force,
        # torque about the gripper origin, components in the gripper frame
        lx, ly = c_prev.x - g_next.x, c_prev.y - g_next.y
        cg, sg = math.cos(g_next.theta), math.sin(g_next.theta)

        def _entry(fx, fy):
            m = lx * fy - ly * fx
            return (m * self.r2, cg * fx + sg * fy, -sg * fx + cg * fy)

        self.D0 = _entry(self.nx, self.ny)  # pure normal push
        self.D1 = _entry(self.tx, self.ty)  # unit tangential force

    # --- candidate object poses ---------------------------------------

    def o_stick(self, theta: float):
        """Object pose with the contact material point pinned, heading theta."""
        c, s = math.cos(theta), math.sin(theta)
        return (self.c_pt[0] - (c * self.mx - s * self.my),
                self.c_pt[1] - (s * self.mx + c * self.my), theta)

    def o_from_slip(self, lam: float, dhat):
        """Object pose after slipping lam*dhat in the grasp from X_prev."""
        th_x = self.Xp[2] + lam * dhat[0]
        vx, vy = lam * dhat[1], lam * dhat[2]
        c, s = math.cos(th_x), math.sin(th_x)
        tx = vx - (c * self.qx - s * self.qy)
        ty = vy - (s * self.qx + c * self.qy)
        g = self.g_next
        cg, sg = math.cos(g.theta), math.sin(g.theta)
        return (g.x + cg * tx - sg * ty, g.y + sg * tx + cg * ty, g.theta + th_x)

    # --- per-candidate quantities --------------------------------------

    def slip_of(self, o_t):
        # o_t is a bare (x, y, theta) tuple; avoids Pose2 churn in the scans
        g = self.g_next
        cg, sg = math.cos(g.theta), math.sin(g.theta)
        dx, dy = o_t[0] - g.x, o_t[1] - g.y
        Xn = (cg * dx + sg * dy, -sg * dx + cg * dy, o_t[2] - g.theta)
        return _slip_t(self.Xp, Xn)

    def contact_disp(self, o_t):
        c, s = math.cos(o_t[2]), math.sin(o_t[2])
        px = o_t[0] + c * self.mx - s * self.my
        py = o_t[1] + s * self.mx + c * self.my
        return px - self.c_pt[0], py - self.c_pt[1]

    def v_n(self, o_t) -> float:
        ddx, ddy = self.contact_disp(o_t)
        return self.nx * ddx + self.ny * ddy

    def v_t(self, o_t) -> float:
        ddx, ddy = self.contact_disp(o_t)
        return self.tx * ddx + self.ty * ddy


class _Candidate(NamedTuple):
    mode: ContactMode
    o_next: tuple
    f_t: float
    slip_mag: float


_SLIP_TOL = 1e-14
_ALIGN_TOL = 1e-9


def _stick_scan(geom: _StepGeom, thetas: np.ndarray) -> np.ndarray:
    """Alignment determinant of the stick hypothesis over a heading array;
    matches the scalar path up to floating-point association order."""
    cth, sth = np.cos(thetas), np.sin(thetas)
    ox = geom.c_pt[0] - (cth * geom.mx - sth * geom.my)
    oy = geom.c_pt[1] - (sth * geom.mx + cth * geom.my)
    g = geom.g_next
    cg, sg = math.cos(g.theta), math.sin(g.theta)
    dx, dy = ox - g.x, oy - g.y
    xn0 = cg * dx + sg * dy
    xn1 = -sg * dx + cg * dy
    xn2 = thetas - g.theta
    cn, sn = np.cos(xn2), np.sin(xn2)
    vx = xn0 + cn * geom.qx - sn * geom.qy
    vy = xn1 + sn * geom.qx + cn * geom.qy
    om = np.mod(xn2 - geom.Xp[2] + np.pi, 2.0 * np.pi) - np.pi
    d0, d1 = geom.D0, geom.D1
    k0 = d0[1] * d1[2] - d0[2] * d1[1]
    k1 = -(d0[0] * d1[2] - d0[2] * d1[0])
    k2 = d0[0] * d1[1] - d0[1] * d1[0]
    return om * k0 + vx * k1 + vy * k2


def _solve_stick(geom: _StepGeom, mu: float, theta0: float, span: float):
    """Pivot-about-contact hypothesis.

    With the contact pinned, the only freedom is the object heading; the
    alignment condition says the slip twist lies in the plane spanned by the
    friction-cone wrench family, i.e. det[T(theta), D0, D1] = 0.
    """

    def G(theta):
        return _det3(geom.slip_of(geom.o_stick(theta)), geom.D0, geom.D1)

    n_scan = 61
    thetas = theta0 + span * (2.0 * np.arange(n_scan) / (n_scan - 1) - 1.0)
    vals = _stick_scan(geom, thetas)
    out = []
    for i in range(n_scan - 1):
        a, b = vals[i], vals[i + 1]
        if a == 0.0:
            roots = [float(thetas[i])]
        elif (a > 0) != (b > 0):
            try:
                roots = [brentq(G, float(thetas[i]), float(thetas[i + 1]),
                                xtol=1e-13, rtol=_BRENT_RTOL, maxiter=100)]
            except ValueError:
                continue  # borderline-zero endpoint; neighbors cover it
        else:
            continue
        for th in roots:
            o_t = geom.o_stick(th)
            T = geom.slip_of(o_t)
            tn = math.sqrt(T[0] ** 2 + T[1] ** 2 + T[2] ** 2)
            if tn <= _SLIP_TOL:
                continue
            # least-squares T ~ a*D0 + b*D1; a>0 means pressing, b/a = f_t
            d0, d1 = geom.D0, geom.D1
            a00 = sum(x * x for x in d0)
            a01 = sum(x * y for x, y in zip(d0, d1))
            a11 = sum(x * x for x in d1)
            r0 = sum(x * y for x, y in zip(d0, T))
            r1 = sum(x * y for x, y in zip(d1, T))
            det = a00 * a11 - a01 * a01
            if det <= 0:
                continue
            ca = (a11 * r0 - a01 * r1) / det
            cb = (-a01 * r0 + a00 * r1) / det
            if ca <= 0:
                continue
            miss = [T[k] - ca * d0[k] - cb * d1[k] for k in range(3)]
            if math.sqrt(sum(m * m for m in miss)) / tn > _ALIGN_TOL:
                continue
            f_t = cb / ca
            if abs(f_t) > mu * (1 + 1e-9) + 1e-12:
                continue
            out.append(_Candidate(ContactMode.STICK, o_t, f_t, tn))
    return out


def _solve_slide(geom: _StepGeom, mu: float, positive_vt: bool, lam_seed: float):
    """Cone-boundary hypothesis: slip along the limit-surface direction for
    f_t = -+mu, magnitude fixed by zero normal contact velocity."""
    sgn = 1.0 if positive_vt else -1.0
    f_t = -sgn * mu  # friction opposes the sliding direction
    D = tuple(geom.D0[k] + f_t * geom.D1[k] for k in range(3))
    dn = math.sqrt(sum(x * x for x in D))
    if dn == 0.0:
        return []
    dhat = (D[0] / dn, D[1] / dn, D[2] / dn)

    def vn(lam):
        return geom.v_n(geom.o_from_slip(lam, dhat))

    v0 = vn(0.0)
    if v0 >= 0.0:
        return []  # rigid motion does not press; no sliding solution
    lam_hi = max(4.0 * abs(v0), lam_seed, 1e-9)
    for _ in range(90):
        if vn(lam_hi) > 0.0:
            break
        lam_hi *= 2.0
        if lam_hi > 1.0:
            return []
    else:
        return []
    lam = brentq(vn, 0.0, lam_hi, xtol=1e-14, rtol=_BRENT_RTOL, maxiter=200)
    o_t = geom.o_from_slip(lam, dhat)
    v_t = geom.v_t(o_t)
    if sgn * v_t <= 1e-13:
        return []
    mode = ContactMode.SLIDE_POS if positive_vt else ContactMode.SLIDE_NEG
    return [_Candidate(mode, o_t, f_t, abs(lam))]


def forward_step(
    obj: ObjectModel,
    g_prev: Pose2,
    o_prev: Pose2,
    c_prev: Pose2,
    g_next: Pose2,
    params: PhysicsParams,
    mode: ContactMode | None = None,
) -> StepResult:
    """Advance the object one step of commanded gripper motion.

    Enumerates the contact hypotheses (Stick, Slide+, Slide-) plus rigid
    separation and returns the consistent one; Stick is preferred on ties,
    then smaller slip.  Passing `mode` pins the hypothesis (used by the
    controller, which freezes modes within a horizon solve) with fallback to
    full enumeration if that hypothesis has no solution.

    The contact frame's heading is the ground orientation and its position
    lies on the ground line, so c_prev fully determines the environment.
    """
    geom = _StepGeom(g_prev, o_prev, c_prev, g_next, params)
    ground = ground_from_contact(c_prev)

    # rigid attachment candidate
    Xp = geom.Xp
    cg, sg = math.cos(g_next.theta), math.sin(g_next.theta)
    o_rigid = (
        g_next.x + cg * Xp[0] - sg * Xp[1],
        g_next.y + sg * Xp[0] + cg * Xp[1],
        g_next.theta + Xp[2],
    )
    d_rigid = closest_point_to_ground(obj, Pose2(*o_rigid), ground)[1]

    if mode is ContactMode.SEPARATED:
        return _finish(obj, ground, o_rigid, ContactForce(0.0, 0.0), ContactMode.SEPARATED, params)

    if d_rigid >= -_PEN_TOL:
        ddx, ddy = geom.contact_disp(o_rigid)
        if math.hypot(ddx, ddy) <= 1e-14:
            # zero commanded motion: every hypothesis coincides with rest
            return _finish(obj, ground, o_rigid, ContactForce(0.0, 0.0), ContactMode.STICK, params)
        if mode is None:
            return _finish(obj, ground, o_rigid, ContactForce(0.0, 0.0), ContactMode.SEPARATED, params)

    # scale-aware search spans
    dgx, dgy = g_next.x - g_prev.x, g_next.y - g_prev.y
    dgt = abs(wrap_angle(g_next.theta - g_prev.theta))
    lever = max(math.hypot(c_prev.x - g_next.x, c_prev.y - g_next.y), 1e-3)
    motion = math.hypot(dgx, dgy)
    span = min(4.0 * (motion / lever + dgt) + 0.02, math.pi / 2)
    lam_seed = 2.0 * (motion + dgt * lever)

    def gather(span_factor: float):
        cands: list[_Candidate] = []
        if mode in (None, ContactMode.STICK):
            cands += _solve_stick(geom, params.mu, o_prev.theta, span * span_factor)
        if mode in (None, ContactMode.SLIDE_POS):
            cands += _solve_slide(geom, params.mu, True, lam_seed)
        if mode in (None, ContactMode.SLIDE_NEG):
            cands += _solve_slide(geom, params.mu, False, lam_seed)
        return cands

    candidates = gather(1.0)
    if not candidates:
        candidates = gather(4.0)
    if not candidates and mode is not None:
        return forward_step(obj, g_prev, o_prev, c_prev, g_next, params, mode=None)
    if not candidates:
        if geom.v_n(o_rigid) > 0.0:
            # the commanded motion lifts the tracked contact while the body
            # penetrates elsewhere: the contact migrated mid-step, which a
            # single point-contact step cannot represent; callers subdivide
            raise PhysicsError(
                "contact migrated during step; reduce step size",
                {"rigid_penetration": d_rigid, "contact_vn_rigid": geom.v_n(o_rigid)},
            )
        raise PhysicsError(
            "no consistent contact hypothesis",
            {"rigid_penetration": d_rigid, "gripper_motion": (dgx, dgy, dgt)},
        )

    candidates.sort(key=lambda c: (c.mode is not ContactMode.STICK, c.slip_mag, c.mode.value))
    best = candidates[0]
    return _finish(obj, ground, best.o_next, ContactForce(1.0, best.f_t), best.mode, params)


def _finish(obj, ground, o_t, force, mode, params) -> StepResult:
    o_next = Pose2(*o_t)
    pt, _ = closest_point_to_ground(obj, o_next, ground)
    c_next = Pose2(pt[0], pt[1], ground.orientation)
    return StepResult(o_next, c_next, force, mode)


# ---------------------------------------------------------------------------
# residual diagnostics (independent route used by the test battery)


def residual_report(
    obj: ObjectModel,
    g_prev: Pose2,
    o_prev: Pose2,
    c_prev: Pose2,
    g_next: Pose2,
    result: StepResult,
    params: PhysicsParams,
) -> dict:
    """Evaluate the governing equations at a forward_step output.

    Recomputes every quantity from the returned poses and force through the
    public elementary maps, without reference to the solver's
    parameterization.  All residuals should be <= 1e-8 in natural units.
    """
    o_next, _, force, mode = result
    T = grasp_slip(g_prev, o_prev, g_next, o_next)
    tn = math.sqrt(sum(x * x for x in T))

    if mode is ContactMode.SEPARATED:
        # rigid attachment: slip must vanish and no force is transmitted
        return {
            "mode": mode,
            "align": 0.0,
            "torque": 0.0,
            "v_n": 0.0,
            "v_t": 0.0,
            "branch": tn + abs(force.f_n) + abs(force.f_t),
            "work": 0.0,
        }

    w_world = grasp_wrench_from_contact(
        force, c_prev.theta, (c_prev.x - g_next.x, c_prev.y - g_next.y)
    )
    # torque balance about the contact point (zero by Eq.-5 construction,
    # re-evaluated here from the reported force)
    lx, ly = c_prev.x - g_next.x, c_prev.y - g_next.y
    torque = abs(w_world.m - (lx * w_world.fy - ly * w_world.fx))

    cg, sg = math.cos(g_next.theta), math.sin(g_next.theta)
    w_grip = Wrench2(w_world.m, cg * w_world.fx + sg * w_world.fy,
                     -sg * w_world.fx + cg * w_world.fy)
    wn = math.sqrt(w_grip.m**2 + w_grip.fx**2 + w_grip.fy**2)

    if tn <= _SLIP_TOL and wn <= _SLIP_TOL:
        align = 0.0
        work = 0.0
    elif tn <= _SLIP_TOL or wn <= _SLIP_TOL:
        align = 1.0
        work = 0.0
    else:
        dhat = sliding_twist_direction(w_grip, params).as_array()
        that = np.array(T) / tn
        align = float(np.linalg.norm(that - dhat))
        # friction wrench on the object is the negative of the transmitted
        # wrench; its power against the slip must be nonpositive
        work = -(w_grip.m * T[0] + w_grip.fx * T[1] + w_grip.fy * T[2])

    v_n, v_t = contact_velocities(obj, g_prev, o_prev, c_prev, g_next, o_next, c_prev.theta)

    if mode is ContactMode.STICK:
        branch = abs(v_t)
        cone_ok = abs(force.f_t) <= params.mu * force.f_n + 1e-9
    else:
        sgn = 1.0 if mode is ContactMode.SLIDE_POS else -1.0
        branch = abs(force.f_t + sgn * params.mu * force.f_n)
        cone_ok = (sgn * v_t > 0) and (force.f_t * v_t < 0)
    return {
        "mode": mode,
        "align": align,
        "torque": torque,
        "v_n": abs(v_n),
        "v_t": v_t,
        "branch": branch,
        "cone_ok": cone_ok,
        "work": work,
    }


# ---------------------------------------------------------------------------
# trajectory simulation


def _interp_pose(a: Pose2, b: Pose2, s: float) -> Pose2:
    dth = wrap_angle(b.theta - a.theta)
    return Pose2(a.x + s * (b.x - a.x), a.y + s * (b.y - a.y), a.theta + s * dth)


def simulate(
    obj: ObjectModel,
    initial: SimState,
    gripper_waypoints,
    substep: float = 1e-3,
) -> list[tuple[SimState, ContactMode]]:
    """Chain forward_step along an interpolated gripper path.

    Waypoints are interpolated linearly (shortest arc in heading) so that no
    substep moves more than `substep` meters (headings weighted by half the
    object length).  Contact rolling events inside a substep (a new vertex
    touching down, or the tracked contact migrating) are located by bisection
    so trajectory penetration stays within a few microns.
    """
    if substep <= 0:
        raise ValueError("substep must be positive")
    traj: list[tuple[SimState, ContactMode]] = [(initial, ContactMode.STICK)]
    state = initial
    ground = ground_from_contact(initial.c)
    ang_scale = obj.l_obj / 2.0
    prev_wp = initial.g
    for wp in gripper_waypoints:
        dist = math.hypot(wp.x - prev_wp.x, wp.y - prev_wp.y)
        dth = abs(wrap_angle(wp.theta - prev_wp.theta))
        n_sub = max(1, math.ceil(max(dist, dth * ang_scale) / substep))
        for k in range(1, n_sub + 1):
            g_target = _interp_pose(prev_wp, wp, k / n_sub)
            state, mode = _advance_with_events(obj, state, g_target, ground)
            traj.append((state, mode))
        prev_wp = wp
    return traj


def _advance_with_events(obj, state: SimState, g_target: Pose2, ground: GroundLine):
    g_start = state.g
    remaining_from = 0.0
    mode = ContactMode.STICK
    for _ in range(16):  # rolling-event guard
        g_seg_start = _interp_pose(g_start, g_target, remaining_from)
        base = state
        pen_start = min(0.0, closest_point_to_ground(obj, base.o, ground)[1])

        def attempt(frac: float, floor: float) -> StepResult | None:
            g_to = _interp_pose(g_start, g_target, frac)
            try:
                r = forward_step(obj, g_seg_start, base.o, base.c, g_to, base.params)
            except PhysicsError:
                return None
            if closest_point_to_ground(obj, r.o_next, ground)[1] < floor:
                return None
            return r

        res = attempt(1.0, pen_start - _SIM_PEN_TOL)
        if res is not None:
            return SimState(g_target, res.o_next, res.c_next, state.params), res.mode
        # a contact event (new vertex touching down, or the tracked contact
        # migrating) interrupts the substep: bisect to the largest admissible
        # prefix, commit there so the contact re-seats, then continue; the
        # event floor is tighter than the accept floor so the committed state
        # keeps headroom for the remainder of the substep
        lo, hi = remaining_from, 1.0
        r_evt: StepResult | None = None
        floor_evt = pen_start - 0.5 * _SIM_PEN_TOL
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            r_mid = attempt(mid, floor_evt)
            if r_mid is not None:
                lo, r_evt = mid, r_mid
            else:
                hi = mid
        if r_evt is None:
            raise PhysicsError("substep stalled on a contact event")
        g_evt = _interp_pose(g_start, g_target, lo)
        state = SimState(g_evt, r_evt.o_next, r_evt.c_next, state.params)
        mode = r_evt.mode
        remaining_from = lo
        if 1.0 - lo < 1e-12:
            return state, mode
    raise PhysicsError("too many contact events in one substep")
