"""Finite abstraction of the partitioned plant and its soundness checks.

The abstract transition system has one state per region and one per ordered
detection element ``(crossed-from, crossed-into)``.  Continuous semantics are
checked by integrating the interpolated vertex field from sampled starts.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .exceptions import CrossedWrongFacet, EdgeGraze, Infeasible
from .multiaffine import axis_fractions, interpolate_batch
from .partition import (
    FACETS,
    Facet,
    PartitionSpec,
    Region,
    adjacent_region,
    classify,
    to_cartesian,
    to_spherical,
)
from .synthesis import ControlLabel, VertexControls, verify

log = logging.getLogger(__name__)

C0_HORIZON_S = 60.0
EXIT_TIMEOUT_FACTOR = 4.0
DEFAULT_STEP_S = 0.01


# --- states and events -----------------------------------------------------------

@dataclass(frozen=True, order=True)
class RegionLabel:
    region: Region

    def __str__(self):
        i, j, k = self.region
        return f"R[{i},{j},{k}]"


@dataclass(frozen=True, order=True)
class DetectionLabel:
    src: Region
    dst: Region

    def __str__(self):
        return f"d[{_idx(self.src)}->{_idx(self.dst)}]"


@dataclass(frozen=True, order=True)
class Actuation:
    label: ControlLabel

    def __str__(self):
        return str(self.label)


@dataclass(frozen=True, order=True)
class Detection:
    src: Region
    dst: Region

    def __str__(self):
        return f"dhat[{_idx(self.src)}->{_idx(self.dst)}]"


@dataclass(frozen=True, order=True)
class External:
    name: str = "ca"

    def __str__(self):
        return self.name


CA = External("ca")


def _idx(r):
    return ",".join(str(v) for v in r)


def region_label(region) -> RegionLabel:
    return RegionLabel(Region(*region))


def detection_event(src, dst) -> Detection:
    return Detection(Region(*src), Region(*dst))


def available_labels(spec: PartitionSpec, region) -> list[ControlLabel]:
    """Actuation labels the plant admits in ``region`` (boundary rules, theta wraps)."""
    i, j, k = spec.check_region(region)
    out = [ControlLabel.C0]
    for f in FACETS:
        if f.axis == "theta" or adjacent_region(spec, region, f) is not None:
            out.append(ControlLabel.for_facet(f))
    return out


def ca_enabled(region) -> bool:
    return Region(*region).i != 1


# --- finite transition system -----------------------------------------------------

@dataclass
class FiniteTS:
    states: set
    initial: set
    events: set
    transitions: set  # of (state, event, state)

    def __post_init__(self):
        if not self.initial <= self.states:
            raise ValueError("initial states must be a subset of states")
        for s, e, t in self.transitions:
            if s not in self.states or t not in self.states or e not in self.events:
                raise ValueError(f"transition ({s}, {e}, {t}) uses undeclared names")

    def edges(self):
        return iter(self.transitions)

    def successors(self, state) -> dict:
        out = defaultdict(set)
        for s, e, t in self.transitions:
            if s == state:
                out[e].add(t)
        return dict(out)


def build_abstract_ts(spec: PartitionSpec, feasibility=None) -> FiniteTS:
    """Abstract transition system over region and detection labels.

    ``feasibility`` maps each region to the set of labels with verified
    controllers; ``None`` assumes every plant-available label is realisable.
    A missing available label raises :class:`Infeasible`.
    """
    states, events, trans = set(), {CA}, set()
    for region in spec.regions():
        rl = RegionLabel(region)
        states.add(rl)
        labels = available_labels(spec, region)
        if feasibility is not None:
            have = {ControlLabel(x) for x in feasibility.get(region, ())}
            for lab in labels:
                if lab not in have:
                    raise Infeasible(region, lab, {"-": "no verified controller"})
        for lab in labels:
            ev = Actuation(lab)
            events.add(ev)
            if lab.facet is None:
                trans.add((rl, ev, rl))
                continue
            nb = adjacent_region(spec, region, lab.facet)
            d = DetectionLabel(region, nb)
            states.add(d)
            trans.add((rl, ev, d))
            de = Detection(region, nb)
            events.add(de)
            trans.add((d, de, RegionLabel(nb)))
        if ca_enabled(region):
            trans.add((rl, CA, rl))
    initial = {RegionLabel(r) for r in spec.regions()}
    return FiniteTS(states, initial, events, trans)


# --- bisimulation on finite systems --------------------------------------------------

@dataclass
class BisimResult:
    holds: bool
    relation: set
    counterexample: tuple | None = None

    def __bool__(self):
        return self.holds


def _succ_map(ts):
    succ = defaultdict(lambda: defaultdict(set))
    for s, e, t in ts.edges():
        succ[s][e].add(t)
    return succ


def check_bisimulation_finite(ts1, ts2, seed=None) -> BisimResult:
    """Greatest bisimulation contained in ``seed`` (default: identical labels).

    Both systems need ``initial`` and ``edges()``.  The counterexample is the
    first ``((q1, q2), event, missing_side)`` removed during refinement, or an
    unmatched initial state.
    """
    s1, s2 = _succ_map(ts1), _succ_map(ts2)
    if seed is None:
        states1 = set(s1) | set(ts1.initial) | {t for _, _, t in ts1.edges()}
        states2 = set(s2) | set(ts2.initial) | {t for _, _, t in ts2.edges()}
        seed = {(q, q) for q in states1 & states2}
    rel = set(seed)
    first_bad = None
    changed = True
    while changed:
        changed = False
        for p, q in sorted(rel, key=str):
            bad = _transfer_fails(p, q, s1, s2, rel, swap=False) or _transfer_fails(q, p, s2, s1, rel, swap=True)
            if bad is not None:
                rel.discard((p, q))
                changed = True
                if first_bad is None:
                    first_bad = ((p, q),) + bad
    for q1 in ts1.initial:
        if not any((q1, q2) in rel for q2 in ts2.initial):
            return BisimResult(False, rel, first_bad or ((q1, None), None, "initial state unmatched"))
    for q2 in ts2.initial:
        if not any((q1, q2) in rel for q1 in ts1.initial):
            return BisimResult(False, rel, first_bad or ((None, q2), None, "initial state unmatched"))
    return BisimResult(True, rel, None)


def _transfer_fails(p, q, sp, sq, rel, swap):
    for ev, targets in sp.get(p, {}).items():
        q_targets = sq.get(q, {}).get(ev, ())
        for pt in targets:
            if not any(((qt, pt) if swap else (pt, qt)) in rel for qt in q_targets):
                return ev, ("second" if not swap else "first") + " system cannot match"
    return None


# --- continuous semantics ---------------------------------------------------------------

@dataclass
class BatchOutcome:
    """Per-particle integration results of :func:`simulate_batch`."""

    exited: np.ndarray  # bool
    t: np.ndarray  # exit time, or final time
    x: np.ndarray  # exit point (just outside) or final point
    facet: list  # crossed Facet or None
    cell: list  # partition cell at the crossing, or None


def _rk4_batch(bounds, fields, x, h):
    def f(y):
        return interpolate_batch(bounds, fields, y)[0]

    hh = h[:, None] if np.ndim(h) else h
    k1 = f(x)
    k2 = f(x + 0.5 * hh * k1)
    k3 = f(x + 0.5 * hh * k2)
    k4 = f(x + hh * k3)
    return x + hh / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _outside(bounds, x):
    _, ok = axis_fractions(bounds, to_spherical(x), clamp_tol=0.0)
    return ~ok


def simulate_batch(spec: PartitionSpec, bounds, fields, x0, t_max, h=DEFAULT_STEP_S,
                   bisect_tol=1e-9, tol=1e-9) -> BatchOutcome:
    """Integrate ``x' = interpolate(fields, x)`` for many particles until each leaves its box.

    ``bounds`` (N, 3, 2) and ``fields`` (N, 8, 3) are per particle.  Crossing
    times are located by bisection on the fixed-step update to ``bisect_tol``
    seconds.
    """
    bounds = np.asarray(bounds, float)
    fields = np.asarray(fields, float)
    x = np.array(x0, dtype=float, copy=True)
    n = len(x)
    t_max = np.broadcast_to(np.asarray(t_max, float), (n,)).copy()
    t = np.zeros(n)
    exited = np.zeros(n, bool)
    facet = [None] * n
    cell = [None] * n
    active = np.arange(n)
    while len(active):
        hs = np.minimum(h, t_max[active] - t[active])
        xa = x[active]
        xn = _rk4_batch(bounds[active], fields[active], xa, hs)
        out = _outside(bounds[active], xn)
        if np.any(out):
            idx = np.nonzero(out)[0]
            s_lo = np.zeros(len(idx))
            s_hi = hs[idx].copy()
            b_i, f_i, x_i = bounds[active[idx]], fields[active[idx]], xa[idx]
            while np.max(s_hi - s_lo) > bisect_tol:
                mid = 0.5 * (s_lo + s_hi)
                o = _outside(b_i, _rk4_batch(b_i, f_i, x_i, mid))
                s_hi = np.where(o, mid, s_hi)
                s_lo = np.where(o, s_lo, mid)
            xc = _rk4_batch(b_i, f_i, x_i, s_hi)
            for q, g in enumerate(active[idx]):
                exited[g] = True
                t[g] += s_hi[q]
                x[g] = xc[q]
                facet[g] = _crossed_facet(bounds[g], xc[q])
                try:
                    cell[g] = classify(spec, xc[q], tol=tol)
                except Exception as err:  # outside the horizon
                    cell[g] = err
        keep = ~out
        x[active[keep]] = xn[keep]
        t[active[keep]] += hs[keep]
        still = keep & (t[active] < t_max[active] - 1e-12)
        active = active[still]
    return BatchOutcome(exited, t, x, facet, cell)


def _crossed_facet(bounds, xc):
    raw = _raw_fractions(bounds, xc)
    over = np.maximum(raw - 1.0, 0.0)
    under = np.maximum(-raw, 0.0)
    a = int(np.argmax(np.maximum(over, under)))
    sign = +1 if over[a] >= under[a] else -1
    return Facet(("r", "theta", "phi")[a], sign)


def _raw_fractions(bounds, x):
    s = to_spherical(x)
    lo, hi = bounds[:, 0], bounds[:, 1]
    t = s - lo
    w = hi - lo
    tw = np.mod(t[1], 2 * np.pi)
    if tw > 0.5 * (w[1] + 2 * np.pi):
        tw -= 2 * np.pi
    t[1] = tw
    return t / w


def exit_timeout(spec: PartitionSpec, region, controls: VertexControls) -> float:
    speed = float(np.max(np.linalg.norm(controls.u, axis=1)))
    if speed <= 0:
        return np.inf
    return EXIT_TIMEOUT_FACTOR * spec.diameter(region) / speed


@dataclass
class TransitionResult:
    kind: str  # "detection" or "invariant"
    t: float
    x: np.ndarray
    target: DetectionLabel | None = None


def _strictly_inside(spec, region, x0):
    lam, ok = axis_fractions(spec.bounds(region), to_spherical(np.asarray(x0, float))[None], clamp_tol=0.0)
    return bool(ok[0] and np.all((lam > 0) & (lam < 1)))


def continuous_transition(spec: PartitionSpec, region, label, x0, controls: VertexControls,
                          h: float = DEFAULT_STEP_S, t_max: float | None = None) -> TransitionResult:
    """Realise one abstract actuation transition from Cartesian ``x0``."""
    region = spec.check_region(region)
    label = ControlLabel(label)
    if not _strictly_inside(spec, region, x0):
        raise ValueError(f"x0 = {tuple(np.asarray(x0))} is not strictly inside {region}")
    if t_max is None:
        t_max = C0_HORIZON_S if label.facet is None else exit_timeout(spec, region, controls)
    out = simulate_batch(spec, spec.bounds(region)[None], controls.u[None], np.asarray(x0, float)[None], t_max, h)
    return _interpret(spec, region, label, out, 0)


def _interpret(spec, region, label, out: BatchOutcome, q) -> TransitionResult:
    if not out.exited[q]:
        if label.facet is None:
            return TransitionResult("invariant", float(out.t[q]), out.x[q])
        raise CrossedWrongFacet(f"{label} on {region}: no crossing within {out.t[q]:.3g} s")
    if label.facet is None:
        raise CrossedWrongFacet(f"C_0 on {region}: left through {out.facet[q]} at t = {out.t[q]:.4g}")
    cell = out.cell[q]
    if out.facet[q] != label.facet:
        raise CrossedWrongFacet(f"{label} on {region}: crossed {out.facet[q]} instead of {label.facet}")
    if isinstance(cell, Exception) or cell.kind == "surface":
        raise CrossedWrongFacet(f"{label} on {region}: left the control horizon")
    if cell.kind == "edge":
        raise EdgeGraze(f"{label} on {region}: crossing at {tuple(out.x[q])} lies on an edge")
    nb = adjacent_region(spec, region, label.facet)
    if cell.kind == "detection" and region in cell and nb in cell:
        return TransitionResult("detection", float(out.t[q]), out.x[q], DetectionLabel(region, nb))
    if cell.kind == "region" and cell.region == nb:
        # just past the facet; the bisection bracket is below the classification tolerance
        return TransitionResult("detection", float(out.t[q]), out.x[q], DetectionLabel(region, nb))
    raise CrossedWrongFacet(f"{label} on {region}: crossing classified as {cell}")


def sample_interior(spec: PartitionSpec, region, n: int, rng, margin: float = 1e-3) -> np.ndarray:
    """``n`` Cartesian points drawn uniformly in the region's coordinate box, away from its faces."""
    b = spec.bounds(region)
    lam = rng.uniform(margin, 1.0 - margin, size=(n, 3))
    s = b[:, 0] + lam * (b[:, 1] - b[:, 0])
    return to_cartesian(s)


# --- Monte-Carlo soundness -------------------------------------------------------------

@dataclass
class PairReport:
    region: Region
    label: ControlLabel
    trials: int
    failures: int = 0
    failure_kinds: dict = field(default_factory=dict)
    certificate_margin: float | None = None
    exit_margin: float | None = None

    @property
    def passed(self):
        return self.failures == 0


@dataclass
class SoundnessReport:
    pairs: list
    warnings: list

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.pairs)

    @property
    def total_failures(self) -> int:
        return sum(p.failures for p in self.pairs)

    def lines(self):
        yield f"verdict: {'PASS' if self.passed else 'FAIL'}"
        for w in self.warnings:
            yield f"warning: {w}"
        for p in self.pairs:
            kinds = ",".join(f"{k}={v}" for k, v in sorted(p.failure_kinds.items())) or "-"
            cm = "nan" if p.certificate_margin is None else f"{p.certificate_margin:.9g}"
            em = "-" if p.exit_margin is None else f"{p.exit_margin:.9g}"
            yield (f"{p.region.i},{p.region.j},{p.region.k} {p.label} trials={p.trials} "
                   f"failures={p.failures} kinds={kinds} margin={cm} exit_margin={em}")


def monte_carlo_soundness(spec: PartitionSpec, controls: dict, trials: int, seed: int = 0,
                          h: float = DEFAULT_STEP_S, c0_horizon: float = C0_HORIZON_S) -> SoundnessReport:
    """Check every ``(region, label) -> VertexControls | None`` pair against its abstract transition.

    ``None`` (or an exception instance) stands for a missing controller and counts
    as a failure of every trial.
    """
    rng = np.random.default_rng(seed)
    warnings = []
    if trials <= 0:
        warnings.append("trials = 0: soundness check is vacuous")
    pairs, B, F, X, T, owner = [], [], [], [], [], []
    for (region, label), c in sorted(controls.items(), key=lambda kv: (tuple(kv[0][0]), str(kv[0][1]))):
        region, label = Region(*region), ControlLabel(label)
        rep = PairReport(region, label, max(trials, 0))
        pairs.append(rep)
        if not isinstance(c, VertexControls):
            rep.failures = rep.trials
            if rep.trials:
                rep.failure_kinds["Infeasible"] = rep.trials
            continue
        v = verify(spec, region, c)
        rep.certificate_margin = v.margin
        rep.exit_margin = v.exit_margin
        if trials <= 0:
            continue
        t_max = c0_horizon if label.facet is None else exit_timeout(spec, region, c)
        pts = sample_interior(spec, region, trials, rng)
        B.append(np.broadcast_to(spec.bounds(region), (trials, 3, 2)))
        F.append(np.broadcast_to(c.u, (trials, 8, 3)))
        X.append(pts)
        T.append(np.full(trials, t_max))
        owner.extend([len(pairs) - 1] * trials)
    if X:
        out = simulate_batch(spec, np.concatenate(B), np.concatenate(F), np.concatenate(X), np.concatenate(T), h)
        for q, pi in enumerate(owner):
            rep = pairs[pi]
            try:
                _interpret(spec, rep.region, rep.label, out, q)
            except (CrossedWrongFacet, EdgeGraze) as err:
                rep.failures += 1
                name = type(err).__name__
                rep.failure_kinds[name] = rep.failure_kinds.get(name, 0) + 1
    for w in warnings:
        log.warning(w)
    return SoundnessReport(pairs, warnings)
