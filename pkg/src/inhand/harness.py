"""Closed-loop experiment harness.

Wires the truth simulator, the contact-mask sensor surrogate, the discrete
tracker and the smoothing controller into reproducible scenarios: a run
advances the true state with the executed command, renders a mask from the
true relative pose, and feeds the estimation stack only measurements it
would have on a real system (gripper odometry and masks). Everything else
is logging.

Artifacts are deterministic byte-for-byte given (config, seed): per-step
wall-clock timings go to a separate file that carries no behavioral state.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import ControllerConfig, EstimatorController, GoalSpec
from .geometry import (
    ObjectModel,
    Pose2,
    between,
    closest_point_to_ground,
    compose,
    load_object,
    wrap_angle,
)
from .grid import grid_for_object
from .objects import BUILTIN_NAMES, write_builtin
from .physics import PhysicsError, PhysicsParams, SimState, simulate
from .sensor import SensorSpec, build_mask_bank, render_mask, single_shot_likelihood
from .viterbi import EnvPrior, decode, init_prior, transition_step

__all__ = [
    "AblationFlags",
    "ScenarioConfig",
    "ConfigError",
    "RunLog",
    "StepRecord",
    "normalized_error",
    "run_scenario",
    "run_suite",
    "generate_suite",
    "load_scenario",
    "save_scenario",
    "load_report",
    "REFERENCE_BASELINES",
]

# Published hardware-scale mean normalized errors, kept only to annotate
# reports; never recomputed or asserted against runs from this workbench.
REFERENCE_BASELINES = {"single_shot": 1.52, "discrete": 0.20, "continuous": 0.10}

# goal achievement uses one grid cell of slack; early termination asks for
# half of that from the estimator before it stops commanding motion
ACHIEVE_TRN = 0.005
ACHIEVE_ROT = math.radians(10.0)
_TERMINATE_SCALE = 0.5


class ConfigError(ValueError):
    """A scenario configuration is malformed or references missing files."""


def normalized_error(rot_err: float, trn_err: float, l_obj: float) -> float:
    """Dimensionless pose error: |rotation| plus translation over half length."""
    if l_obj <= 0:
        raise ValueError("l_obj must be positive")
    return abs(rot_err) + abs(trn_err) / (l_obj / 2.0)


# -- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class AblationFlags:
    """Which estimation error traces a run records (the full stack always
    executes; the continuous estimator is the controller itself)."""

    single_shot: bool = True
    discrete: bool = True
    continuous: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    object_path: str
    true_params: PhysicsParams
    prior_params: PhysicsParams
    initial_g: Pose2
    initial_rel: Pose2  # true gripper-to-object pose; hidden from the estimator
    goal: GoalSpec
    step_budget: int = 80
    seed: int = 0
    env: EnvPrior = field(default_factory=EnvPrior)
    sensor: SensorSpec = field(default_factory=SensorSpec)
    ablations: AblationFlags = field(default_factory=AblationFlags)
    discrete_update_period: int = 5
    horizon: int = 10
    fixed_lag: int = 30

    def __post_init__(self):
        if not self.name:
            raise ConfigError("scenario name must be nonempty")
        if self.step_budget < 1:
            raise ConfigError("step budget must be at least 1")


def _pose_list(p: Pose2) -> list[float]:
    return [p.x, p.y, p.theta]


def _pose_from(v) -> Pose2:
    return Pose2(float(v[0]), float(v[1]), float(v[2]))


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    return {
        "name": cfg.name,
        "object_path": cfg.object_path,
        "true_params": {"fmax_over_mmax": cfg.true_params.fmax_over_mmax,
                        "mu": cfg.true_params.mu},
        "prior_params": {"fmax_over_mmax": cfg.prior_params.fmax_over_mmax,
                         "mu": cfg.prior_params.mu},
        "initial_g": _pose_list(cfg.initial_g),
        "initial_rel": _pose_list(cfg.initial_rel),
        "goal": {
            "category": cfg.goal.category,
            "rel_pose_goal": _pose_list(cfg.goal.rel_pose_goal),
            "contact_goal": _pose_list(cfg.goal.contact_goal),
            "world_heading_goal": cfg.goal.world_heading_goal,
        },
        "step_budget": cfg.step_budget,
        "seed": cfg.seed,
        "env": {"ground_height": cfg.env.ground_height,
                "ground_orientation": cfg.env.ground_orientation,
                "sigma_init": cfg.env.sigma_init,
                "sigma_trans": cfg.env.sigma_trans},
        "sensor": {"width": cfg.sensor.width, "height": cfg.sensor.height,
                   "resolution": cfg.sensor.resolution,
                   "noise_flip_prob": cfg.sensor.noise_flip_prob,
                   "blur_radius": cfg.sensor.blur_radius},
        "ablations": {"single_shot": cfg.ablations.single_shot,
                      "discrete": cfg.ablations.discrete,
                      "continuous": cfg.ablations.continuous},
        "discrete_update_period": cfg.discrete_update_period,
        "horizon": cfg.horizon,
        "fixed_lag": cfg.fixed_lag,
    }


def scenario_from_dict(d: dict, base_dir=None) -> ScenarioConfig:
    try:
        goal = GoalSpec(
            category=int(d["goal"]["category"]),
            rel_pose_goal=_pose_from(d["goal"]["rel_pose_goal"]),
            contact_goal=_pose_from(d["goal"]["contact_goal"]),
            world_heading_goal=(None if d["goal"].get("world_heading_goal") is None
                                else float(d["goal"]["world_heading_goal"])),
        )
        obj_path = Path(d["object_path"])
        if base_dir is not None and not obj_path.is_absolute():
            obj_path = Path(base_dir) / obj_path
        return ScenarioConfig(
            name=str(d["name"]),
            object_path=str(obj_path),
            true_params=PhysicsParams(**d["true_params"]),
            prior_params=PhysicsParams(**d["prior_params"]),
            initial_g=_pose_from(d["initial_g"]),
            initial_rel=_pose_from(d["initial_rel"]),
            goal=goal,
            step_budget=int(d.get("step_budget", 80)),
            seed=int(d.get("seed", 0)),
            env=EnvPrior(**d.get("env", {})),
            sensor=SensorSpec(**d.get("sensor", {})),
            ablations=AblationFlags(**d.get("ablations", {})),
            discrete_update_period=int(d.get("discrete_update_period", 5)),
            horizon=int(d.get("horizon", 10)),
            fixed_lag=int(d.get("fixed_lag", 30)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"bad scenario config: {e}") from e


def save_scenario(cfg: ScenarioConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(scenario_to_dict(cfg), indent=1, sort_keys=True)
                    + "\n")
    return path


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    cfg = scenario_from_dict(data, base_dir=path.parent)
    if not Path(cfg.object_path).exists():
        raise ConfigError(f"object file not found: {cfg.object_path}")
    return cfg


# -- run log ------------------------------------------------------------------

CSV_COLUMNS = [
    "t",
    "truth_g_x", "truth_g_y", "truth_g_th",
    "truth_o_x", "truth_o_y", "truth_o_th",
    "truth_c_x", "truth_c_y",
    "mode",
    "mask_hash",
    "belief_max", "belief_entropy",
    "xmap_x", "xmap_y", "xmap_th", "xmap_fresh",
    "est_o_x", "est_o_y", "est_o_th",
    "est_c_x", "est_c_y",
    "est_fmax_over_mmax", "est_mu",
    "cmd_x", "cmd_y", "cmd_th",
    "total_error",
    "eps_single", "eps_discrete", "eps_continuous",
    "goal_rel_rot", "goal_rel_trn", "goal_contact_trn", "goal_heading",
]


@dataclass(frozen=True)
class StepRecord:
    """One executed step: truth at observation time, estimates, command."""

    t: int
    truth: SimState
    mode: str
    mask_hash: str
    belief_max: float
    belief_entropy: float
    x_map: Pose2
    x_map_fresh: bool
    est_o: Pose2
    est_c: Pose2
    est_params: PhysicsParams
    cmd: Pose2
    total_error: float
    eps: dict[str, float]
    goal_errors: dict[str, float]

    def row(self) -> list:
        tr, e = self.truth, self.eps
        ge = self.goal_errors
        vals = [self.t,
                tr.g.x, tr.g.y, tr.g.theta,
                tr.o.x, tr.o.y, tr.o.theta,
                tr.c.x, tr.c.y,
                self.mode, self.mask_hash,
                self.belief_max, self.belief_entropy,
                self.x_map.x, self.x_map.y, self.x_map.theta,
                int(self.x_map_fresh),
                self.est_o.x, self.est_o.y, self.est_o.theta,
                self.est_c.x, self.est_c.y,
                self.est_params.fmax_over_mmax, self.est_params.mu,
                self.cmd.x, self.cmd.y, self.cmd.theta,
                self.total_error,
                e.get("single_shot", ""), e.get("discrete", ""),
                e.get("continuous", ""),
                ge["rel_rot"], ge["rel_trn"], ge["contact_trn"],
                ge.get("heading", "")]
        return [_fmt(v) for v in vals]


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.12g}"
    return v


def _stable(x):
    """Round floats so JSON artifacts are reproducible byte-for-byte."""
    if isinstance(x, dict):
        return {k: _stable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_stable(v) for v in x]
    if isinstance(x, float):
        return float(f"{x:.12g}")
    return x


@dataclass
class RunLog:
    config: ScenarioConfig
    l_obj: float
    records: list[StepRecord]
    timings: list[dict]
    failure: str | None
    achieved: bool
    terminated_early: bool
    final_goal_errors: dict[str, float]  # measured against the true state

    @property
    def steps_run(self) -> int:
        return len(self.records)

    def mean_eps(self) -> dict[str, float]:
        out = {}
        for k in ("single_shot", "discrete", "continuous"):
            vals = [r.eps[k] for r in self.records if k in r.eps]
            if vals:
                out[k] = float(np.mean(vals))
        return out

    def final_eps(self) -> dict[str, float]:
        return dict(self.records[-1].eps) if self.records else {}

    def summary(self) -> dict:
        cfg = self.config
        last = self.records[-1] if self.records else None
        final_rel = {}
        if last is not None:
            rel_true = between(last.truth.g, last.truth.o)
            est_rel = between(last.truth.g, last.est_o)
            final_rel = {
                "rot_rad": abs(wrap_angle(est_rel.theta - rel_true.theta)),
                "trn_m": math.hypot(est_rel.x - rel_true.x,
                                    est_rel.y - rel_true.y),
            }
        return _stable({
            "name": cfg.name,
            "object": Path(cfg.object_path).stem,
            "category": cfg.goal.category,
            "seed": cfg.seed,
            "l_obj": self.l_obj,
            "steps_run": self.steps_run,
            "terminated_early": self.terminated_early,
            "achieved": self.achieved,
            "failure": self.failure,
            "final_goal_errors_truth": self.final_goal_errors,
            "mean_eps": self.mean_eps(),
            "final_eps": self.final_eps(),
            "final_rel_estimate_error": final_rel,
            "params_estimate": (
                {"fmax_over_mmax": last.est_params.fmax_over_mmax,
                 "mu": last.est_params.mu} if last else None),
            "reference_baselines": REFERENCE_BASELINES,
        })

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "runlog.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(CSV_COLUMNS)
            for r in self.records:
                w.writerow(r.row())
        (out / "summary.json").write_text(
            json.dumps(self.summary(), indent=1, sort_keys=True) + "\n")
        with open(out / "timings.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "mask_seconds", "discrete_seconds",
                        "controller_seconds"])
            for row in self.timings:
                w.writerow([row["t"], f"{row['mask']:.6f}",
                            f"{row['discrete']:.6f}",
                            f"{row['controller']:.6f}"])
        return out


# -- scenario loop ------------------------------------------------------------


def _mask_hash(mask) -> str:
    return hashlib.sha256(np.packbits(mask.pixels.ravel()).tobytes()).hexdigest()[:16]


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def _goal_errors_truth(goal: GoalSpec, state: SimState) -> dict[str, float]:
    rel = between(state.g, state.o)
    e_rel = between(goal.rel_pose_goal, rel)
    out = {"rel_rot": abs(e_rel.theta), "rel_trn": math.hypot(e_rel.x, e_rel.y)}
    if goal.world_heading_goal is not None:
        out["heading"] = abs(wrap_angle(state.o.theta - goal.world_heading_goal))
    out["contact_trn"] = math.hypot(state.c.x - goal.contact_goal.x,
                                    state.c.y - goal.contact_goal.y)
    return out


def _active_within(goal: GoalSpec, errors: dict[str, float],
                   rot_tol: float, trn_tol: float) -> bool:
    """Check only the components the category regulates."""
    ok = errors["rel_rot"] <= rot_tol and errors["contact_trn"] <= trn_tol
    if goal.category == 2:
        ok = ok and errors["rel_trn"] <= trn_tol
    if goal.category == 3:
        ok = ok and errors["heading"] <= rot_tol
    return ok


def _resting_truth(obj: ObjectModel, cfg: ScenarioConfig) -> SimState:
    """Place the configured object pose onto the ground and build the state."""
    ground = cfg.env.ground
    o = compose(cfg.initial_g, cfg.initial_rel)
    _, d = closest_point_to_ground(obj, o, ground)
    n = ground.normal
    o = Pose2(o.x - d * n[0], o.y - d * n[1], o.theta)
    p, _ = closest_point_to_ground(obj, o, ground)
    c = Pose2(float(p[0]), float(p[1]), cfg.env.ground_orientation)
    return SimState(cfg.initial_g, o, c, cfg.true_params)


def run_scenario(cfg: ScenarioConfig, out_dir=None, cache_dir=None,
                 bank=None) -> RunLog:
    """Closed loop: observe, estimate, plan, execute; stops at the budget or
    once the estimator believes the active goal components are well inside
    the achievement tolerance. Component errors abort with a partial log."""
    if not Path(cfg.object_path).exists():
        raise ConfigError(f"object file not found: {cfg.object_path}")
    obj = load_object(cfg.object_path)
    grid = grid_for_object(obj)
    if bank is None:
        bank = build_mask_bank(obj, grid, cfg.sensor, cache_dir=cache_dir)

    ctrl = EstimatorController(obj, ControllerConfig(
        prior_params=cfg.prior_params, env=cfg.env, horizon=cfg.horizon,
        discrete_update_period=cfg.discrete_update_period,
        fixed_lag=cfg.fixed_lag))
    truth = _resting_truth(obj, cfg)

    records: list[StepRecord] = []
    timings: list[dict] = []
    vit = None
    x_map = truth.g  # placeholder, replaced at t=1 before first use
    g_at_update = truth.g
    failure = None
    terminated = False
    ok_streak = 0  # early estimates are grid-coarse; ask for agreement twice

    for t in range(1, cfg.step_budget + 1):
        try:
            rel_true = between(truth.g, truth.o)
            seed_t = cfg.seed * 1_000_003 + t
            t0 = time.perf_counter()
            mask = render_mask(obj, rel_true, cfg.sensor, seed=seed_t)
            belief = single_shot_likelihood(mask, bank)
            t_mask = time.perf_counter() - t0

            t0 = time.perf_counter()
            fresh = t == 1 or t % cfg.discrete_update_period == 0
            if t == 1:
                vit = init_prior(grid, truth.g, obj, cfg.env, belief)
                x_map = decode(vit)[0][-1]
            elif fresh:
                vit = transition_step(vit, grid, g_at_update, truth.g, obj,
                                      cfg.env, belief)
                x_map = decode(vit)[0][-1]
            if fresh:
                g_at_update = truth.g
            t_disc = time.perf_counter() - t0

            t0 = time.perf_counter()
            res = ctrl.step(t, truth.g, cfg.goal,
                            x_map=x_map if fresh else None)
            t_ctrl = time.perf_counter() - t0

            eps = {}
            if cfg.ablations.single_shot:
                ss = grid.pose(int(np.argmax(belief)))
                eps["single_shot"] = normalized_error(
                    wrap_angle(ss.theta - rel_true.theta),
                    math.hypot(ss.x - rel_true.x, ss.y - rel_true.y), obj.l_obj)
            if cfg.ablations.discrete:
                eps["discrete"] = normalized_error(
                    wrap_angle(x_map.theta - rel_true.theta),
                    math.hypot(x_map.x - rel_true.x, x_map.y - rel_true.y),
                    obj.l_obj)
            if cfg.ablations.continuous:
                est_rel = between(res.estimate_g, res.estimate_o)
                eps["continuous"] = normalized_error(
                    wrap_angle(est_rel.theta - rel_true.theta),
                    math.hypot(est_rel.x - rel_true.x, est_rel.y - rel_true.y),
                    obj.l_obj)

            cmd = res.gripper_plan[1]
            truth_next, mode = simulate(obj, truth, [cmd])[-1]

            records.append(StepRecord(
                t=t, truth=truth, mode=mode.name, mask_hash=_mask_hash(mask),
                belief_max=float(belief.max()), belief_entropy=_entropy(belief),
                x_map=x_map, x_map_fresh=fresh,
                est_o=res.estimate_o, est_c=res.estimate_c,
                est_params=res.estimate_params, cmd=cmd,
                total_error=res.total_error, eps=eps,
                goal_errors=dict(res.goal_errors)))
            timings.append({"t": t, "mask": t_mask, "discrete": t_disc,
                            "controller": t_ctrl})
            truth = truth_next

            if _active_within(cfg.goal, res.goal_errors,
                              _TERMINATE_SCALE * ACHIEVE_ROT,
                              _TERMINATE_SCALE * ACHIEVE_TRN):
                ok_streak += 1
            else:
                ok_streak = 0
            if ok_streak >= 2 and t >= 3:
                terminated = True
                break
        except (PhysicsError, ValueError) as e:
            failure = f"{type(e).__name__}: {e}"
            break

    final_truth_errors = _goal_errors_truth(cfg.goal, truth)
    achieved = failure is None and _active_within(
        cfg.goal, final_truth_errors, ACHIEVE_ROT, ACHIEVE_TRN)
    log = RunLog(config=cfg, l_obj=obj.l_obj, records=records,
                 timings=timings, failure=failure, achieved=achieved,
                 terminated_early=terminated,
                 final_goal_errors=final_truth_errors)
    if out_dir is not None:
        log.write(Path(out_dir) / cfg.name)
    return log


# -- suite generation ---------------------------------------------------------


def _rotate_about(pivot: Pose2, g: Pose2, dth: float, press: float,
                  dx: float) -> Pose2:
    ca, sa = math.cos(dth), math.sin(dth)
    rx, ry = g.x - pivot.x, g.y - pivot.y
    return Pose2(pivot.x + ca * rx - sa * ry + dx,
                 pivot.y + sa * rx + ca * ry - press, g.theta + dth)


def _pivot_rollout(obj: ObjectModel, start: SimState, env: EnvPrior,
                   dth_step: float, n: int, kp=2.0, kc=0.3,
                   drift=0.0, theta_drift=0.0) -> tuple[SimState, float]:
    """Scripted feasible maneuver: rotate the grip about the contact while a
    feedback press keeps the object's world angle on a reference; lateral
    feedback holds the contact, or a drift term walks it deliberately.
    ``theta_drift`` ramps the angle reference so the object reorients in the
    world while the grasp still slips.

    Returns the end state and the smallest support clearance seen along the
    path, which measures how close the maneuver came to a two-contact
    support transition."""
    truth = start
    th_ref, cx_ref = truth.o.theta, truth.c.x
    lever = abs(truth.c.x - truth.g.x)
    clearance = _rest_clearance(obj, env, truth)
    for _ in range(n):
        th_ref += theta_drift
        press = lever * (abs(dth_step)
                         + kp * (truth.o.theta - th_ref)
                         * math.copysign(1.0, dth_step))
        press = min(max(press, 0.0), 4e-4)
        dx = drift + min(max(-kc * (truth.c.x - (cx_ref + drift)), -3e-4), 3e-4)
        cx_ref += drift
        cmd = _rotate_about(truth.c, truth.g, dth_step, press, dx)
        truth = simulate(obj, truth, [cmd])[-1][0]
        clearance = min(clearance, _rest_clearance(obj, env, truth))
    return truth, clearance


def _feasible_direction(state: SimState) -> float:
    """Sign of gripper rotation whose grasp slip the contact moment allows:
    contact left of the grasp resists only clockwise relative slip."""
    return 1.0 if state.c.x < state.g.x else -1.0


def _start_state(obj: ObjectModel, env: EnvPrior, theta0: float,
                 params: PhysicsParams, grip_above: float = 0.005) -> SimState:
    o = Pose2(0.0, 0.05, theta0)
    ground = env.ground
    _, d = closest_point_to_ground(obj, o, ground)
    n = ground.normal
    o = Pose2(o.x - d * n[0], o.y - d * n[1], o.theta)
    p, _ = closest_point_to_ground(obj, o, ground)
    c = Pose2(float(p[0]), float(p[1]), env.ground_orientation)
    g = Pose2(o.x, o.y + grip_above, 0.0)
    return SimState(g, o, c, params)


# Start angles and the grip offset sit exactly on pose-lattice cells: the
# first tactile mask then matches its bank entry outright, so the tracker
# locks on before quantization can blur the nearly symmetric alternatives.
_THETA_CANDIDATES = tuple(math.radians(d)
                          for d in (10.0, 20.0, 30.0, -10.0, -20.0, 40.0))
_REST_CLEARANCE = 0.005
_PATH_CLEARANCE = 0.004


def _rest_clearance(obj: ObjectModel, env: EnvPrior, state: SimState) -> float:
    """Ground distance of the second-lowest vertex at a resting pose."""
    v = obj.contour
    n = env.ground.normal
    o = state.o
    c, s = math.cos(o.theta), math.sin(o.theta)
    d = (n[0] * (o.x + c * v[:, 0] - s * v[:, 1])
         + n[1] * (o.y + s * v[:, 0] + c * v[:, 1]) - env.ground_height)
    return float(np.partition(d, 1)[1])


def _script_goal(obj: ObjectModel, env: EnvPrior, params: PhysicsParams,
                 category: int, seed: int) -> tuple[SimState, GoalSpec]:
    """Roll out a feasible maneuver for the category; its end state is the
    goal, so every generated goal is reachable by construction.

    Maneuver sizes are chosen so a run starts outside the achievement
    tolerances: the relative swing exceeds the rotation tolerance, and for
    the sliding category the contact target sits beyond the translation
    tolerance. Categories with stationary contact keep the initial contact
    as the target."""
    n = 17 + 3 * (seed % 3)
    if category == 3:
        # the heading ramp diverts part of each step's rotation into world
        # reorientation, so the rollout needs more steps for the same swing
        n = int(round(n * 1.55))
    dth = math.radians(0.9 + 0.1 * (seed % 3))
    last_err: Exception | None = None
    for theta0 in _THETA_CANDIDATES:
        start = _start_state(obj, env, theta0, params)
        # rest states too close to a second contact are out of the sliding
        # model's reach; skip them instead of fighting the clearance barrier
        if _rest_clearance(obj, env, start) < _REST_CLEARANCE:
            last_err = ValueError(f"theta0={theta0} rests nearly flat")
            continue
        sign = _feasible_direction(start)
        drift = 4e-4 if category == 4 else 0.0
        # heading ramp points away from the flat-edge crossover at the rest
        # angle's far side, so the reorientation gains clearance
        theta_drift = (math.copysign(0.35 * dth, theta0)
                       if category == 3 else 0.0)
        try:
            end, clearance = _pivot_rollout(obj, start, env, sign * dth, n,
                                            drift=drift,
                                            theta_drift=theta_drift)
        except (PhysicsError, ValueError) as e:
            last_err = e
            continue
        # the closed loop wanders a few degrees off the script, so demand a
        # clearance cushion along the whole path, not just at the endpoints
        if clearance < _PATH_CLEARANCE:
            last_err = ValueError(
                f"path grazes a support transition ({clearance:.4f} m)")
            continue
        rel = between(end.g, end.o)
        swing = abs(wrap_angle(rel.theta - between(start.g, start.o).theta))
        if swing < math.radians(12.0):
            last_err = ValueError("relative swing too small")
            continue
        if category == 3 and abs(
                wrap_angle(end.o.theta - start.o.theta)) < math.radians(3.0):
            last_err = ValueError("heading change too small")
            continue
        if category == 4 and abs(end.c.x - start.c.x) < 0.0055:
            last_err = ValueError("contact migration too small")
            continue
        heading = end.o.theta if category == 3 else None
        contact = end.c if category == 4 else start.c
        goal = GoalSpec(category=category, rel_pose_goal=rel,
                        contact_goal=contact, world_heading_goal=heading)
        return start, goal
    raise PhysicsError(
        f"no feasible scripted maneuver for category {category}: {last_err}")


def generate_suite(out_dir, seeds=(0, 1, 2), objects=BUILTIN_NAMES,
                   categories=(1, 2, 3, 4), noisy=False,
                   step_budget=80) -> list[Path]:
    """Write object files plus one config per (object, category, seed).

    Goals come from scripted rollouts on the true physics, so they are
    certified feasible. The noisy variant turns on mask noise and perturbs
    the physics prior by up to ten percent (seeded)."""
    out = Path(out_dir)
    obj_dir = out / "objects"
    cfg_dir = out / "configs"
    cfg_dir.mkdir(parents=True, exist_ok=True)
    sensor = (SensorSpec(noise_flip_prob=0.02, blur_radius=0.6) if noisy
              else SensorSpec())
    env = EnvPrior()
    paths = []
    for name in objects:
        obj_path = write_builtin(name, obj_dir)
        obj = load_object(obj_path)
        for category in categories:
            for seed in seeds:
                true_params = PhysicsParams(150.0, 0.4)
                if noisy:
                    rng = np.random.default_rng(
                        [seed, category, sum(map(ord, name))])
                    prior = PhysicsParams(
                        true_params.fmax_over_mmax
                        * float(1 + 0.1 * rng.uniform(-1, 1)),
                        true_params.mu * float(1 + 0.1 * rng.uniform(-1, 1)))
                else:
                    prior = true_params
                start, goal = _script_goal(obj, env, true_params, category,
                                           seed)
                cfg = ScenarioConfig(
                    name=f"{name}_cat{category}_seed{seed}",
                    object_path=str(Path("..") / "objects" / obj_path.name),
                    true_params=true_params, prior_params=prior,
                    initial_g=start.g, initial_rel=between(start.g, start.o),
                    goal=goal, step_budget=step_budget, seed=seed, env=env,
                    sensor=sensor)
                paths.append(save_scenario(cfg, cfg_dir / f"{cfg.name}.json"))
    return paths


# -- suite execution ----------------------------------------------------------


def _suite_worker(args) -> dict:
    cfg_path, out_dir, cache_dir = args
    cfg = load_scenario(cfg_path)
    log = run_scenario(cfg, out_dir=out_dir, cache_dir=cache_dir)
    return log.summary()


def run_suite(configs_dir, out_dir, jobs: int = 1) -> dict:
    """Run every config in a directory; write per-run logs and an aggregate.

    Scenario crashes are isolated: the failed run reports its exception and
    the rest of the suite proceeds."""
    cfg_paths = sorted(Path(configs_dir).glob("*.json"))
    if not cfg_paths:
        raise ConfigError(f"no scenario configs in {configs_dir}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache_dir = out / "cache"
    cache_dir.mkdir(exist_ok=True)

    # build each distinct mask bank once, before any parallel dispatch
    seen = set()
    for p in cfg_paths:
        cfg = load_scenario(p)
        obj = load_object(cfg.object_path)
        key = (obj.content_hash(), cfg.sensor.content_hash())
        if key not in seen:
            seen.add(key)
            build_mask_bank(obj, grid_for_object(obj), cfg.sensor,
                            cache_dir=cache_dir)

    tasks = [(str(p), str(out), str(cache_dir)) for p in cfg_paths]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_suite_worker, tasks))
    else:
        summaries = [_suite_worker(t) for t in tasks]

    aggregate = _aggregate(summaries)
    (out / "aggregate.json").write_text(
        json.dumps(aggregate, indent=1, sort_keys=True) + "\n")
    _write_timing_report(out, cfg_paths)
    return aggregate


def _aggregate(summaries: list[dict]) -> dict:
    summaries = sorted(summaries, key=lambda s: s["name"])
    by_object: dict[str, dict] = {}
    by_category: dict[str, dict] = {}
    for s in summaries:
        bo = by_object.setdefault(s["object"], {"runs": 0, "achieved": 0,
                                                "eps": {}})
        bo["runs"] += 1
        bo["achieved"] += int(s["achieved"])
        for k, v in s["mean_eps"].items():
            bo["eps"].setdefault(k, []).append(v)
        bc = by_category.setdefault(str(s["category"]),
                                    {"runs": 0, "achieved": 0})
        bc["runs"] += 1
        bc["achieved"] += int(s["achieved"])
    for bo in by_object.values():
        bo["mean_eps"] = {k: float(np.mean(v)) for k, v in bo["eps"].items()}
        bo["p90_eps"] = {k: float(np.percentile(v, 90))
                         for k, v in bo["eps"].items()}
        del bo["eps"]
    n = len(summaries)
    achieved = sum(int(s["achieved"]) for s in summaries)
    return _stable({
        "n_scenarios": n,
        "achieved": achieved,
        "achieved_rate": achieved / n,
        "failures": [s["name"] for s in summaries if s["failure"]],
        "by_object": by_object,
        "by_category": by_category,
        "scenarios": summaries,
        "reference_baselines": REFERENCE_BASELINES,
    })


def _write_timing_report(out: Path, cfg_paths: list[Path]) -> None:
    rows = []
    for p in sorted(cfg_paths):
        name = p.stem
        tfile = out / name / "timings.csv"
        if not tfile.exists():
            continue
        with open(tfile, newline="") as f:
            recs = list(csv.DictReader(f))
        if not recs:
            continue
        ctrl = [float(r["controller_seconds"]) for r in recs]
        disc = [float(r["discrete_seconds"]) for r in recs
                if float(r["discrete_seconds"]) > 1e-4]
        rows.append({"name": name,
                     "mean_controller_seconds": float(np.mean(ctrl)),
                     "max_controller_seconds": float(np.max(ctrl)),
                     "mean_discrete_seconds": (float(np.mean(disc))
                                               if disc else 0.0)})
    (out / "timing_report.json").write_text(
        json.dumps(rows, indent=1) + "\n")


def load_report(in_dir) -> dict:
    path = Path(in_dir) / "aggregate.json"
    if not path.exists():
        raise ConfigError(f"no aggregate.json under {in_dir}")
    return json.loads(path.read_text())
