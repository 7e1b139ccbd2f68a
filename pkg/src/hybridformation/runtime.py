"""Detector, actuator and the closed-loop executive.

A :class:`FollowerRuntime` advances one trajectory by fixed RK4 steps.  The
supervisor picks the actuation at every region state, the actuator turns it
into a velocity field, and the detector turns facet crossings back into
detection events.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .abstraction import CA, Actuation, Detection, External, RegionLabel
from .des import P_F, R_F, ClosedLoopState, FiniteAutomaton
from .exceptions import (
    EdgeGraze,
    HorizonExit,
    MultipleEnabledActions,
    NoEnabledAction,
    PointNotInRegion,
    RegionMismatch,
    SkippedRegion,
)
from .multiaffine import CLAMP_TOL
from .partition import PartitionSpec, Region, classify, locate, shared_facet, to_spherical
from .synthesis import DEFAULT_KAPPA, ControlLabel, SpeedBound, VertexControls, synthesize

TWO_PI = 2.0 * math.pi
DEFAULT_STEP_S = 0.01
CROSSING_TOL_S = 1e-6
_BISECT_ITERS = 60


# --- scalar field evaluation ------------------------------------------------------------

def _fractions(b, x):
    """Unclamped per-axis fractions of Cartesian ``x`` in box ``b`` plus the on-axis flags."""
    px, py, pz = x
    rho = math.hypot(px, py)
    r = math.hypot(rho, pz)
    theta = math.atan2(py, px) % TWO_PI if rho > 0 else 0.0
    phi = math.acos(max(-1.0, min(1.0, pz / r))) if r > 0 else 0.0
    (r0, r1), (t0, t1), (p0, p1) = b
    wt = t1 - t0
    dt = (theta - t0) % TWO_PI
    if dt > 0.5 * (wt + TWO_PI):
        dt -= TWO_PI
    scale = max(r1, 1.0)
    return ((r - r0) / (r1 - r0), dt / wt, (phi - p0) / (p1 - p0),
            rho <= 1e-12 * scale, r <= 1e-12 * scale)


def _inside(b, x, tol=0.0) -> bool:
    lr, lt, lp, on_axis, at_origin = _fractions(b, x)
    if on_axis:
        lt = 0.5
    if at_origin:
        lp = 0.5
    lo, hi = -tol, 1.0 + tol
    return lo <= lr <= hi and lo <= lt <= hi and lo <= lp <= hi


class VertexField:
    """Multi-affine velocity field of one controller, evaluated point by point."""

    __slots__ = ("bounds", "u")

    def __init__(self, bounds, u):
        self.bounds = tuple(tuple(float(v) for v in row) for row in np.asarray(bounds))
        self.u = [tuple(float(v) for v in row) for row in np.asarray(u)]

    def __call__(self, x, clamp_tol=CLAMP_TOL):
        lr, lt, lp, on_axis, at_origin = _fractions(self.bounds, x)
        lo, hi = -clamp_tol, 1.0 + clamp_tol
        if not (lo <= lr <= hi and (on_axis or lo <= lt <= hi) and (at_origin or lo <= lp <= hi)):
            raise PointNotInRegion(f"{tuple(x)} is outside the active region")
        lr = min(max(lr, 0.0), 1.0)
        lt = min(max(lt, 0.0), 1.0)
        lp = min(max(lp, 0.0), 1.0)
        fr, ft, fp = (1.0 - lr, lr), (1.0 - lt, lt), (1.0 - lp, lp)
        vx = vy = vz = 0.0
        for m, (ux, uy, uz) in enumerate(self.u):
            w = fr[m & 1] * ft[(m >> 1) & 1] * fp[(m >> 2) & 1]
            vx += w * ux
            vy += w * uy
            vz += w * uz
        return vx, vy, vz


def rk4_step(f, x, h, clamp_tol=np.inf):
    """One classical RK4 step of ``x' = f(x)``; the field is clamped to its box while staging."""
    def g(y):
        return f(y, clamp_tol)

    k1 = g(x)
    k2 = g(tuple(a + 0.5 * h * b for a, b in zip(x, k1)))
    k3 = g(tuple(a + 0.5 * h * b for a, b in zip(x, k2)))
    k4 = g(tuple(a + h * b for a, b in zip(x, k3)))
    return tuple(a + h / 6.0 * (b + 2 * c + 2 * d + e) for a, b, c, d, e in zip(x, k1, k2, k3, k4))


# --- controller cache ------------------------------------------------------------------------

class ControllerCache:
    """Lazily synthesised vertex controls keyed by ``(region, label)``; safe to share between threads."""

    def __init__(self, spec: PartitionSpec, v_max: float, mode: str = "derived", kappa: float = DEFAULT_KAPPA):
        self.spec = spec
        self.bound = SpeedBound(v_max)
        self.mode = mode
        self.kappa = kappa
        self._store: dict = {}
        self._lock = threading.Lock()

    def get(self, region, label) -> VertexControls:
        key = (Region(*region), ControlLabel(label))
        with self._lock:
            hit = self._store.get(key)
        if hit is not None:
            return hit
        c = synthesize(self.spec, key[0], key[1], self.bound, self.mode, self.kappa)
        with self._lock:
            return self._store.setdefault(key, c)

    def __len__(self):
        return len(self._store)


# --- actuator ----------------------------------------------------------------------------------

@dataclass
class ActuatorState:
    active_label: ControlLabel
    active_region: Region
    active_controls: VertexControls
    spec: PartitionSpec
    _field: VertexField = field(default=None, repr=False)

    def __post_init__(self):
        self._field = VertexField(self.spec.bounds(self.active_region), self.active_controls.u)

    @property
    def field(self) -> VertexField:
        return self._field


def actuate(state: ActuatorState, x) -> np.ndarray:
    """Velocity command at Cartesian ``x`` from the active vertex controls."""
    try:
        return np.array(state.field(tuple(float(v) for v in x)))
    except PointNotInRegion as err:
        raise RegionMismatch(f"{tuple(x)} is not in active region {state.active_region}") from err


# --- detector ---------------------------------------------------------------------------------

@dataclass
class DetectorState:
    confirmed_region: Region
    last_classified: object = None
    bracket: tuple | None = None


@dataclass(frozen=True)
class Crossing:
    event: Detection
    t: float
    x: tuple


def detector_step(state: DetectorState, spec: PartitionSpec, x_prev, x_next, t_prev, t_next,
                  path: Callable | None = None, tol: float = CROSSING_TOL_S) -> Crossing | None:
    """Detect a facet crossing between two integration points.

    ``path(s)`` gives the state at ``t_prev + s`` along the integration step
    (straight line by default).  The crossing time is bisected to well below
    ``tol`` seconds.
    """
    b = spec.bounds(state.confirmed_region)
    x_next = tuple(float(v) for v in x_next)
    if _inside(b, x_next):
        return None
    x_prev = tuple(float(v) for v in x_prev)
    if path is None:
        def path(s, a=x_prev, c=x_next, span=t_next - t_prev):
            w = s / span
            return tuple(p + w * (q - p) for p, q in zip(a, c))
    s_lo, s_hi = 0.0, t_next - t_prev
    for _ in range(_BISECT_ITERS):
        if s_hi - s_lo <= min(tol, 1e-9) * 1e-3:
            break
        mid = 0.5 * (s_lo + s_hi)
        if _inside(b, path(mid)):
            s_lo = mid
        else:
            s_hi = mid
    state.bracket = (t_prev + s_lo, t_prev + s_hi)
    xc = path(s_hi)
    try:
        cell = classify(spec, xc)
    except Exception as err:
        raise HorizonExit(f"trajectory left the control horizon at t = {t_prev + s_hi:.6g}") from err
    state.last_classified = cell
    if cell.kind == "surface":
        raise HorizonExit(f"trajectory reached the horizon surface at t = {t_prev + s_hi:.6g}")
    if cell.kind == "edge":
        raise EdgeGraze(f"crossing at {xc} out of {state.confirmed_region} lies on an edge")
    if cell.kind == "detection":
        if state.confirmed_region not in cell:
            raise SkippedRegion(f"crossing {cell} does not border {state.confirmed_region}")
        new = cell.b if cell.a == state.confirmed_region else cell.a
    else:
        new = cell.region
    if shared_facet(spec, state.confirmed_region, new) is None:
        raise SkippedRegion(f"jumped from {state.confirmed_region} to non-adjacent {new}")
    ev = Detection(state.confirmed_region, new)
    state.confirmed_region = new
    return Crossing(ev, t_prev + s_hi, xc)


# --- event log and trajectory ---------------------------------------------------------------------

@dataclass(frozen=True)
class LogEntry:
    t: float
    event: object
    src: object
    dst: object
    note: str = ""

    def as_dict(self):
        d = {"t": self.t, "event": str(self.event), "kind": _event_kind(self.event),
             "from": str(self.src), "to": str(self.dst)}
        if self.note:
            d["note"] = self.note
        return d


def _event_kind(e):
    if isinstance(e, Actuation):
        return "actuation"
    if isinstance(e, Detection):
        return "detection"
    return "external"


@dataclass
class EventLog:
    entries: list = field(default_factory=list)

    def append(self, entry: LogEntry):
        if self.entries and entry.t < self.entries[-1].t:
            raise ValueError("event times must be nondecreasing")
        self.entries.append(entry)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def events(self):
        return [e.event for e in self.entries]

    def labels(self):
        return [str(e.event) for e in self.entries]

    def segments(self):
        """Event strings split at supervisor resynchronisations."""
        seg, out = [], []
        for e in self.entries:
            if e.note == "resync":
                out.append(seg)
                seg = []
            seg.append(e.event)
        out.append(seg)
        return out

    def is_alternating(self) -> bool:
        pending = None
        for e in self.entries:
            if isinstance(e.event, Actuation):
                if pending is not None:
                    return False
                if e.event.label != ControlLabel.C0:
                    pending = e.event
            elif isinstance(e.event, Detection):
                pending = None
        return True


@dataclass
class Trajectory:
    t: list = field(default_factory=list)
    x: list = field(default_factory=list)
    u: list = field(default_factory=list)
    region: list = field(default_factory=list)
    label: list = field(default_factory=list)

    def append(self, t, x, u, region, label):
        self.t.append(t)
        self.x.append(x)
        self.u.append(u)
        self.region.append(region)
        self.label.append(label)

    def __len__(self):
        return len(self.t)

    def arrays(self):
        return np.asarray(self.t), np.asarray(self.x), np.asarray(self.u)


@dataclass
class Outcome:
    reached: bool
    held: bool
    time_to_formation: float | None
    final_region: Region
    final_label: ControlLabel | None
    detections: int
    resyncs: int


# --- the executive ------------------------------------------------------------------------------------

def initial_supervisor_state(cl: FiniteAutomaton, region) -> ClosedLoopState:
    target = RegionLabel(Region(*region))
    hits = [s for s in cl.initial if s.plant == target]
    if len(hits) != 1:
        raise NoEnabledAction(f"{len(hits)} closed-loop initial states couple with {target}")
    return hits[0]


class FollowerRuntime:
    """One trajectory of the supervised hybrid system, advanced step by step.

    ``external(runtime)`` is polled whenever the plant sits at a region state
    (at start and after every detection) and returns the external events to
    deliver.  ``perturbation`` is an optional ``(t, dx)`` position jump.
    """

    def __init__(self, spec: PartitionSpec, cl: FiniteAutomaton, x0, cache: ControllerCache,
                 step_s: float = DEFAULT_STEP_S, external: Callable | None = None,
                 perturbation: tuple | None = None, record: bool = True):
        self.spec = spec
        self.cl = cl
        self.cache = cache
        self.h = float(step_s)
        self.external = external
        self.perturbation = perturbation
        self.record = record
        self.t = 0.0
        self.x = tuple(float(v) for v in x0)
        cell = classify(spec, self.x)
        if cell.kind != "region":
            raise ValueError(f"x0 = {self.x} must lie strictly inside a region, got {cell}")
        self.detector = DetectorState(cell.region, cell)
        self.sup = initial_supervisor_state(cl, cell.region)
        self.log = EventLog()
        self.traj = Trajectory()
        self.actuator: ActuatorState | None = None
        self.resyncs = 0
        self.reached_at = 0.0 if self.in_formation else None
        self.left_after_reaching = False
        self._at_region_state()

    # supervisor interaction
    @property
    def region(self) -> Region:
        return self.detector.confirmed_region

    @property
    def in_formation(self) -> bool:
        return self.region.i == 1 and self.sup.formation == R_F

    def _feed(self, event, note=""):
        nxt = self.cl.step(self.sup, event)
        if nxt is None:
            raise NoEnabledAction(f"supervisor state {self.sup} does not admit {event}")
        self.log.append(LogEntry(self.t, event, self.sup.plant, nxt.plant, note))
        self.sup = nxt

    def _resync(self, event):
        nxt = initial_supervisor_state(self.cl, event.dst)
        self.log.append(LogEntry(self.t, event, self.sup.plant, nxt.plant, "resync"))
        self.sup = nxt
        self.resyncs += 1

    def _at_region_state(self):
        if self.external is not None:
            for ev in self.external(self):
                if ev in self.cl.enabled(self.sup):
                    self._feed(ev)
        acts = [e for e in self.cl.enabled(self.sup) if isinstance(e, Actuation)]
        if not acts:
            raise NoEnabledAction(f"no actuation enabled at {self.sup}")
        if len(acts) > 1:
            raise MultipleEnabledActions(f"{sorted(map(str, acts))} enabled at {self.sup}")
        act = acts[0]
        self._feed(act)
        controls = self.cache.get(self.region, act.label)
        self.actuator = ActuatorState(act.label, self.region, controls, self.spec)

    # integration
    def step(self, dt: float | None = None):
        h = self.h if dt is None else float(dt)
        if self.perturbation is not None and self.t >= self.perturbation[0]:
            self._apply_perturbation()
        f = self.actuator.field
        x0 = self.x
        x1 = rk4_step(f, x0, h)
        u = f(x0, np.inf)
        if self.record:
            self.traj.append(self.t, x0, u, self.region, self.actuator.active_label)
        crossing = detector_step(self.detector, self.spec, x0, x1, self.t, self.t + h,
                                 path=lambda s: rk4_step(f, x0, s))
        if crossing is None:
            self.t += h
            self.x = x1
            return None
        # restart the step from the crossing point with the new region's controller
        self.t = crossing.t
        self.x = crossing.x
        self._on_detection(crossing.event)
        return crossing

    def _on_detection(self, ev: Detection):
        if ev in self.cl.enabled(self.sup):
            self._feed(ev)
        else:
            self._resync(ev)
        if self.region.i == 1 and self.reached_at is None and self.sup.formation == R_F:
            self.reached_at = self.t
        elif self.reached_at is not None and self.region.i != 1:
            self.left_after_reaching = True
            self.reached_at = None
        self._at_region_state()

    def _apply_perturbation(self):
        t_p, dx = self.perturbation
        self.perturbation = None
        self.x = tuple(a + float(b) for a, b in zip(self.x, dx))
        cell = classify(self.spec, self.x)
        new = cell.region if cell.kind == "region" else locate(self.spec, to_spherical(np.array(self.x)))
        if new != self.region:
            ev = Detection(self.region, new)
            self.detector.confirmed_region = new
            self.detector.last_classified = cell
            self._on_detection(ev)

    def run_until(self, t_end: float):
        while self.t < t_end - 1e-12:
            self.step(min(self.h, t_end - self.t))
        return self

    def finish(self):
        """Record the final sample."""
        if self.record:
            u = self.actuator.field(self.x, np.inf)
            self.traj.append(self.t, self.x, u, self.region, self.actuator.active_label)
        return self.outcome()

    def outcome(self) -> Outcome:
        label = self.actuator.active_label if self.actuator else None
        reached = self.in_formation and label == ControlLabel.C0
        n_det = sum(isinstance(e.event, Detection) for e in self.log)
        return Outcome(reached, reached and not self.left_after_reaching, self.reached_at,
                       self.region, label, n_det, self.resyncs)


def run_closed_loop(spec: PartitionSpec, cl: FiniteAutomaton, x0, duration_s: float, cache: ControllerCache,
                    step_s: float = DEFAULT_STEP_S, external: Callable | None = None,
                    perturbation: tuple | None = None):
    """Run one supervised trajectory; returns ``(trajectory, log, outcome)``."""
    rt = FollowerRuntime(spec, cl, x0, cache, step_s, external, perturbation)
    rt.run_until(duration_s)
    out = rt.finish()
    return rt.traj, rt.log, out


def replay(cl: FiniteAutomaton, log: EventLog, region0) -> bool:
    """Whether every resync-delimited segment of ``log`` is a string of ``L(cl)``."""
    start = {initial_supervisor_state(cl, region0)}
    for n, seg in enumerate(log.segments()):
        if n:
            start = {initial_supervisor_state(cl, seg[0].dst)}
            seg = seg[1:]
        cur = cl.run(seg, start)
        if not cur:
            return False
    return True


def alarm_source(events_at: Callable):
    """Adapt ``events_at(runtime) -> bool`` into an external-event source emitting ``ca``."""
    def source(rt):
        return [CA] if events_at(rt) else []
    return source


def min_cell_thickness(spec: PartitionSpec) -> float:
    """Smallest wall-to-wall distance of the regions away from the origin and axis."""
    return float(min(spec.dr, spec.dr * spec.dphi, spec.dr * spec.dtheta * math.sin(spec.dphi)))


def check_step(spec: PartitionSpec, v_max: float, step_s: float):
    if v_max * step_s >= min_cell_thickness(spec) / 4:
        raise ValueError(f"v_max * step_s = {v_max * step_s:.4g} m must stay below a quarter of the "
                         f"thinnest cell ({min_cell_thickness(spec):.4g} m)")


__all__ = [
    "ActuatorState", "ControllerCache", "Crossing", "DetectorState", "EventLog", "External",
    "FollowerRuntime", "LogEntry", "Outcome", "P_F", "Trajectory", "VertexField", "actuate",
    "alarm_source", "check_step", "detector_step", "initial_supervisor_state", "min_cell_thickness",
    "replay", "rk4_step", "run_closed_loop",
]
