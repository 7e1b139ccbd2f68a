"""Leader-follower scenarios in the leader-relative frame.

Each follower flies ``V_follower = V_leader + V_rel``; the supervised runtime
only sees the relative state ``follower - (leader + desired_offset)``, whose
rate is ``V_rel``.  Absolute positions are reconstructed from the leader path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .abstraction import CA, External
from .des import build_collision_supervisor, build_formation_supervisor, build_plant, closed_loop
from .exceptions import HorizonExit, PointOutsideHorizon
from .partition import PartitionSpec, Region, classify, locate, to_spherical
from .runtime import ControllerCache, FollowerRuntime, check_step, replay
from .synthesis import DEFAULT_KAPPA

DEFAULT_V_MAX = 5.0
LEADER_SPEED_FRACTION = 0.3


# --- leader models ---------------------------------------------------------------------

@dataclass(frozen=True)
class StaticLeader:
    position_m: tuple = (0.0, 0.0, 0.0)

    @property
    def speed(self) -> float:
        return 0.0

    def position(self, t):
        t = np.asarray(t, float)
        return np.broadcast_to(np.asarray(self.position_m, float), t.shape + (3,)).copy()

    def velocity(self, t):
        t = np.asarray(t, float)
        return np.zeros(t.shape + (3,))


@dataclass(frozen=True)
class CircleLeader:
    """Horizontal circle at constant altitude, counter-clockwise seen from above."""

    diameter_m: float
    altitude_m: float
    period_s: float
    center: tuple = (0.0, 0.0)
    phase: float = 0.0

    def __post_init__(self):
        if self.diameter_m <= 0 or self.period_s <= 0:
            raise ValueError("circle diameter and period must be positive")

    @property
    def speed(self) -> float:
        return math.pi * self.diameter_m / self.period_s

    def position(self, t):
        t = np.asarray(t, float)
        a = 2 * math.pi * t / self.period_s + self.phase
        rad = 0.5 * self.diameter_m
        return np.stack([self.center[0] + rad * np.cos(a), self.center[1] + rad * np.sin(a),
                         np.full_like(a, self.altitude_m)], axis=-1)

    def velocity(self, t):
        t = np.asarray(t, float)
        w = 2 * math.pi / self.period_s
        a = w * t + self.phase
        rad = 0.5 * self.diameter_m
        return np.stack([-rad * w * np.sin(a), rad * w * np.cos(a), np.zeros_like(a)], axis=-1)


@dataclass(frozen=True)
class FollowerConfig:
    initial_offset: tuple  # relative state at t = 0, metres from the desired position
    desired_offset: tuple  # desired position minus leader position
    v_max: float = DEFAULT_V_MAX
    name: str = ""


def relative_state(follower_pos, leader_pos, desired_offset) -> np.ndarray:
    """Follower position in the frame centred on its desired position."""
    return np.asarray(follower_pos, float) - (np.asarray(leader_pos, float) + np.asarray(desired_offset, float))


# --- collision alarm ----------------------------------------------------------------------

def leader_region(spec: PartitionSpec, leader_rel) -> Region | None:
    """Region holding the leader's relative position, or ``None`` outside the horizon."""
    try:
        cell = classify(spec, leader_rel)
    except PointOutsideHorizon:
        return None
    if cell.kind == "surface":
        return None
    if cell.kind == "region":
        return cell.region
    return locate(spec, to_spherical(np.asarray(leader_rel, float)))


def collision_monitor(spec: PartitionSpec, follower_region, leader_rel) -> External | None:
    """``ca`` when the leader sits further in along the follower's (j, k) column."""
    fi, fj, fk = follower_region
    if fi == 1:
        return None
    lead = leader_region(spec, leader_rel)
    if lead is None:
        return None
    li, lj, lk = lead
    return CA if (lj, lk) == (fj, fk) and li < fi else None


class CollisionMonitor:
    """Latched alarm source for one follower; the latch clears once the follower's ``j`` changes."""

    def __init__(self, spec: PartitionSpec, leader, desired_offset):
        self.spec = spec
        self.leader = leader
        self.desired = np.asarray(desired_offset, float)
        self.latched_j = None
        self.alarms = 0

    def leader_rel(self, t) -> np.ndarray:
        p = self.leader.position(t)
        return relative_state(p, p, self.desired)

    def __call__(self, rt) -> list:
        region = rt.region
        if self.latched_j is not None:
            if region.j == self.latched_j:
                return []
            self.latched_j = None
        if collision_monitor(self.spec, region, self.leader_rel(rt.t)) is None:
            return []
        self.latched_j = region.j
        self.alarms += 1
        return [CA]


# --- scenarios ---------------------------------------------------------------------------------

@dataclass
class ScenarioConfig:
    spec: PartitionSpec
    leader: object
    followers: list
    step_s: float = 0.01
    duration_s: float = 60.0
    seed: int = 0
    mode: str = "derived"
    kappa: float = DEFAULT_KAPPA
    perturbation: dict | None = None  # {"t_s": float, "dx": [..]} or {"t_s": float, "magnitude_m": float}

    def validate(self):
        if not self.followers:
            raise ValueError("followers: at least one follower is required")
        if self.step_s <= 0 or self.duration_s <= 0:
            raise ValueError("sim: step_s and duration_s must be positive")
        for n, f in enumerate(self.followers):
            if f.v_max <= 0:
                raise ValueError(f"followers[{n}].v_max must be positive")
            check_step(self.spec, f.v_max, self.step_s)
            x0 = np.asarray(f.initial_offset, float)
            if np.linalg.norm(x0) >= self.spec.radius_m:
                raise ValueError(f"followers[{n}].initial_offset lies outside the control horizon")
            cell = classify(self.spec, x0)
            if cell.kind != "region":
                raise ValueError(f"followers[{n}].initial_offset lies on a partition boundary ({cell})")
            if self.leader.speed > LEADER_SPEED_FRACTION * f.v_max + 1e-12:
                raise ValueError(f"leader speed {self.leader.speed:.4g} m/s exceeds "
                                 f"{LEADER_SPEED_FRACTION} * followers[{n}].v_max")
        return self


@dataclass
class FollowerResult:
    index: int
    config: FollowerConfig
    runtime: FollowerRuntime
    t: np.ndarray
    rel: np.ndarray
    absolute: np.ndarray
    leader: np.ndarray
    reached: bool
    held: bool
    time_to_formation: float | None
    min_inter_agent_distance: float
    collision_alarms: int
    entered_leader_region: bool

    @property
    def log(self):
        return self.runtime.log

    @property
    def trajectory(self):
        return self.runtime.traj

    @property
    def final_region(self) -> Region:
        return self.runtime.region


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    followers: list = field(default_factory=list)
    closed_loop: object = None

    @property
    def reached(self) -> bool:
        return all(f.reached for f in self.followers)


def _perturbation(cfg: ScenarioConfig, rng):
    p = cfg.perturbation
    if not p:
        return None
    if "dx" in p:
        return float(p["t_s"]), tuple(float(v) for v in p["dx"])
    d = rng.normal(size=3)
    return float(p["t_s"]), tuple(float(p["magnitude_m"]) * d / np.linalg.norm(d))


def build_closed_loop(spec: PartitionSpec):
    G = build_plant(spec)
    return closed_loop(G, build_formation_supervisor(spec, G), build_collision_supervisor(spec, G))


def step_world(runtimes, t_next: float, spec: PartitionSpec):
    """Advance every follower (in index order) to ``t_next`` and check horizon containment."""
    for n, rt in enumerate(runtimes):
        rt.run_until(t_next)
        if math.sqrt(sum(v * v for v in rt.x)) > spec.radius_m:
            raise HorizonExit(f"follower {n} left the control horizon at t = {rt.t:.6g}")
    return runtimes


def run_scenario(cfg: ScenarioConfig, cl=None) -> ScenarioResult:
    """Simulate every follower on a shared clock; one supervisor per follower."""
    cfg.validate()
    spec = cfg.spec
    cl = build_closed_loop(spec) if cl is None else cl
    rng = np.random.default_rng(cfg.seed)
    caches: dict = {}
    runtimes, monitors = [], []
    for f in cfg.followers:
        cache = caches.setdefault(f.v_max, ControllerCache(spec, f.v_max, cfg.mode, cfg.kappa))
        mon = CollisionMonitor(spec, cfg.leader, f.desired_offset)
        rt = FollowerRuntime(spec, cl, f.initial_offset, cache, cfg.step_s, external=mon,
                             perturbation=_perturbation(cfg, rng))
        runtimes.append(rt)
        monitors.append(mon)
    n_steps = int(math.ceil(cfg.duration_s / cfg.step_s - 1e-9))
    for s in range(1, n_steps + 1):
        step_world(runtimes, min(s * cfg.step_s, cfg.duration_s), spec)
    result = ScenarioResult(cfg, [], cl)
    for n, (f, rt, mon) in enumerate(zip(cfg.followers, runtimes, monitors)):
        out = rt.finish()
        t, rel, _ = rt.traj.arrays()
        lead = cfg.leader.position(t)
        absolute = lead + np.asarray(f.desired_offset, float) + rel
        dist = np.linalg.norm(absolute - lead, axis=1)
        lead_reg = leader_region(spec, mon.leader_rel(0.0))
        entered = lead_reg is not None and any(r == lead_reg for r in rt.traj.region)
        result.followers.append(FollowerResult(
            n, f, rt, t, rel, absolute, lead, out.reached, out.held, out.time_to_formation,
            float(dist.min()), mon.alarms, entered))
    return result


def replays(result: ScenarioResult) -> list:
    """Per follower: whether its event log is a string of the closed-loop language."""
    return [replay(result.closed_loop, f.log, classify(result.config.spec, f.config.initial_offset).region)
            for f in result.followers]
