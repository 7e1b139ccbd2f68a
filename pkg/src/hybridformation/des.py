"""Finite automata, language checks and the two modular supervisors.

Automata are deterministic per ``(state, event)`` but may have several initial
states; their languages are the unions over those states.  Supervisors are
built as small pattern machines and realised against the plant, so the
realisation generates exactly the supervised behaviour.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable

from .abstraction import (
    CA,
    Actuation,
    Detection,
    DetectionLabel,
    External,
    RegionLabel,
    available_labels,
    ca_enabled,
)
from .exceptions import StateBlowup
from .partition import Facet, PartitionSpec, adjacent_region
from .synthesis import ControlLabel

STATE_CAP = 10**6


@dataclass(frozen=True, eq=False)
class FiniteAutomaton:
    states: frozenset
    events: frozenset
    controllable: frozenset
    delta: dict  # (state, event) -> state
    initial: frozenset
    marked: frozenset
    name: str = ""
    _out: dict = field(default=None, repr=False)

    def __post_init__(self):
        for attr in ("states", "events", "controllable", "initial", "marked"):
            object.__setattr__(self, attr, frozenset(getattr(self, attr)))
        if not self.controllable <= self.events:
            raise ValueError("controllable events must be a subset of events")
        if not (self.initial <= self.states and self.marked <= self.states):
            raise ValueError("initial and marked states must be states")
        out = {s: {} for s in self.states}
        for (s, e), t in self.delta.items():
            if s not in self.states or t not in self.states:
                raise ValueError(f"transition {s} --{e}--> {t} leaves the state set")
            if e not in self.events:
                raise ValueError(f"undeclared event {e}")
            out[s][e] = t
        object.__setattr__(self, "_out", out)

    @property
    def uncontrollable(self) -> frozenset:
        return self.events - self.controllable

    def enabled(self, state) -> dict:
        """``{event: target}`` defined at ``state``."""
        return self._out[state]

    def step(self, state, event):
        return self._out[state].get(event)

    def edges(self):
        for (s, e), t in self.delta.items():
            yield s, e, t

    def __len__(self):
        return len(self.states)

    def reachable(self, start=None) -> set:
        seen = set(self.initial if start is None else start)
        todo = deque(seen)
        while todo:
            s = todo.popleft()
            for t in self._out[s].values():
                if t not in seen:
                    seen.add(t)
                    todo.append(t)
        return seen

    def coreachable(self) -> set:
        back = {s: [] for s in self.states}
        for s, _, t in self.edges():
            back[t].append(s)
        seen = set(self.marked)
        todo = deque(seen)
        while todo:
            t = todo.popleft()
            for s in back[t]:
                if s not in seen:
                    seen.add(s)
                    todo.append(s)
        return seen

    def blocking_states(self) -> set:
        return self.reachable() - self.coreachable()

    def is_nonblocking(self) -> bool:
        return not self.blocking_states()

    def restrict(self, keep: Iterable) -> "FiniteAutomaton":
        keep = frozenset(keep)
        delta = {(s, e): t for (s, e), t in self.delta.items() if s in keep and t in keep}
        return FiniteAutomaton(keep, self.events, self.controllable, delta, self.initial & keep,
                               self.marked & keep, self.name)

    def accessible(self) -> "FiniteAutomaton":
        return self.restrict(self.reachable())

    def trim(self) -> "FiniteAutomaton":
        return self.restrict(self.reachable() & self.coreachable())

    def relabel(self, fn: Callable) -> "FiniteAutomaton":
        m = {s: fn(s) for s in self.states}
        if len(set(m.values())) != len(m):
            raise ValueError("relabelling must be injective")
        return FiniteAutomaton({m[s] for s in self.states}, self.events, self.controllable,
                               {(m[s], e): m[t] for (s, e), t in self.delta.items()},
                               {m[s] for s in self.initial}, {m[s] for s in self.marked}, self.name)

    def without(self, transitions: Iterable) -> "FiniteAutomaton":
        """Copy with the given ``(state, event)`` transitions deleted."""
        drop = set(transitions)
        delta = {k: t for k, t in self.delta.items() if k not in drop}
        return FiniteAutomaton(self.states, self.events, self.controllable, delta, self.initial,
                               self.marked, self.name)

    def run(self, string, start=None) -> set:
        """States reachable by ``string`` from ``start`` (default: all initial states)."""
        cur = set(self.initial if start is None else start)
        for e in string:
            cur = {self._out[s][e] for s in cur if e in self._out[s]}
            if not cur:
                break
        return cur

    def accepts(self, string, start=None, marked=False) -> bool:
        cur = self.run(string, start)
        return bool(cur & self.marked) if marked else bool(cur)


# --- plant --------------------------------------------------------------------------

def _events_for(spec: PartitionSpec):
    events = {Actuation(lab) for lab in ControlLabel} | {CA}
    for region in spec.regions():
        for lab in available_labels(spec, region):
            if lab.facet is not None:
                events.add(Detection(region, adjacent_region(spec, region, lab.facet)))
    return events


def build_plant(spec: PartitionSpec) -> FiniteAutomaton:
    """Plant automaton G over region and ordered detection states."""
    delta, states = {}, set()
    for region in spec.regions():
        rl = RegionLabel(region)
        states.add(rl)
        for lab in available_labels(spec, region):
            if lab.facet is None:
                delta[(rl, Actuation(lab))] = rl
                continue
            nb = adjacent_region(spec, region, lab.facet)
            d = DetectionLabel(region, nb)
            states.add(d)
            delta[(rl, Actuation(lab))] = d
            delta[(d, Detection(region, nb))] = RegionLabel(nb)
        if ca_enabled(region):
            delta[(rl, CA)] = rl
    events = _events_for(spec)
    regions = {RegionLabel(r) for r in spec.regions()}
    marked = {r for r in regions if r.region.i == 1}
    return FiniteAutomaton(states, events, {e for e in events if isinstance(e, Actuation)}, delta,
                           regions, marked, "G")


# --- refined plant --------------------------------------------------------------------

MERGED = ("P", "P_1", "P_n", "N", "N_1", "N_n", "R", "R_1", "R_n")
D_STATE = "D"
_L = ControlLabel
GAMMA_C = {
    "P": {_L.R_PLUS, _L.R_MINUS, _L.THETA_PLUS, _L.THETA_MINUS, _L.PHI_PLUS, _L.PHI_MINUS},
    "P_1": {_L.R_PLUS, _L.R_MINUS, _L.THETA_PLUS, _L.THETA_MINUS, _L.PHI_PLUS},
    "P_n": {_L.R_PLUS, _L.R_MINUS, _L.THETA_PLUS, _L.THETA_MINUS, _L.PHI_MINUS},
    "N": {_L.R_MINUS, _L.THETA_PLUS, _L.THETA_MINUS, _L.PHI_PLUS, _L.PHI_MINUS},
    "N_1": {_L.R_MINUS, _L.THETA_PLUS, _L.THETA_MINUS, _L.PHI_PLUS},
    "N_n": {_L.R_MINUS, _L.THETA_PLUS, _L.THETA_MINUS, _L.PHI_MINUS},
    "R": {_L.R_PLUS, _L.THETA_PLUS, _L.THETA_MINUS, _L.PHI_PLUS, _L.PHI_MINUS},
    "R_1": {_L.R_PLUS, _L.THETA_PLUS, _L.THETA_MINUS, _L.PHI_PLUS},
    "R_n": {_L.R_PLUS, _L.THETA_PLUS, _L.THETA_MINUS, _L.PHI_MINUS},
}


def merged_class(region, n_shells: int, n_cones: int) -> str:
    """Merged state of a region given the outermost shell and cone indices."""
    i, _, k = region
    head = "R" if i == 1 else ("N" if i == n_shells else "P")
    tail = "_1" if k == 1 else ("_n" if k == n_cones else "")
    return head + tail


def _grid_extent(G: FiniteAutomaton):
    regions = [s.region for s in G.states if isinstance(s, RegionLabel)]
    return max(r.i for r in regions), max(r.k for r in regions)


def gamma_d(G: FiniteAutomaton, cls: str) -> set:
    """Detection events of ``G`` that lead into merged class ``cls``."""
    n_i, n_k = _grid_extent(G)
    return {e for e in G.events if isinstance(e, Detection) and merged_class(e.dst, n_i, n_k) == cls}


def refine_plant(G: FiniteAutomaton) -> FiniteAutomaton:
    """Merged plant: nine region classes plus one state for all detections."""
    n_i, n_k = _grid_extent(G)
    present = {merged_class(s.region, n_i, n_k) for s in G.initial}
    delta = {}
    for cls in present:
        for lab in GAMMA_C[cls]:
            delta[(cls, Actuation(lab))] = D_STATE
        delta[(cls, Actuation(_L.C0))] = cls
        if not cls.startswith("R"):
            delta[(cls, CA)] = cls
    for e in G.events:
        if isinstance(e, Detection):
            delta[(D_STATE, e)] = merged_class(e.dst, n_i, n_k)
    states = present | {D_STATE}
    marked = {c for c in present if c.startswith("R")}
    return FiniteAutomaton(states, G.events, G.controllable, delta, present, marked, "G_ref")


# --- composition ------------------------------------------------------------------------

@dataclass(frozen=True)
class CouplingRelation:
    pairs: frozenset

    def __init__(self, pairs):
        object.__setattr__(self, "pairs", frozenset(pairs))

    def check_covers(self, A: FiniteAutomaton):
        missing = A.initial - {a for a, _ in self.pairs}
        if missing:
            raise ValueError(f"{len(missing)} initial states of {A.name or 'A'} are uncoupled, e.g. {next(iter(missing))}")
        return self

    @classmethod
    def full(cls, A, B):
        return cls({(a, b) for a in A.initial for b in B.initial})


def parallel_compose(A: FiniteAutomaton, B: FiniteAutomaton, coupling: CouplingRelation | None = None,
                     cap: int = STATE_CAP) -> FiniteAutomaton:
    """Synchronous product on shared events, interleaving on private ones.

    Only states reachable from the coupled initial pairs are built; the
    default coupling pairs every initial state of ``A`` with every one of ``B``.
    """
    coupling = CouplingRelation.full(A, B) if coupling is None else coupling
    shared = A.events & B.events
    priv_a, priv_b = A.events - shared, B.events - shared
    init = {p for p in coupling.pairs if p[0] in A.states and p[1] in B.states}
    seen, delta = set(init), {}
    todo = deque(init)
    while todo:
        a, b = s = todo.popleft()
        ea, eb = A.enabled(a), B.enabled(b)
        small, big = (ea, eb) if len(ea) <= len(eb) else (eb, ea)
        moves = [(e, (ea[e], eb[e])) for e in small if e in big and e in shared]
        if priv_a:
            moves += [(e, (ta, b)) for e, ta in ea.items() if e in priv_a]
        if priv_b:
            moves += [(e, (a, tb)) for e, tb in eb.items() if e in priv_b]
        for e, t in moves:
            delta[(s, e)] = t
            if t not in seen:
                seen.add(t)
                if len(seen) > cap:
                    raise StateBlowup(f"product exceeds {cap} states")
                todo.append(t)
    marked = {(a, b) for a, b in seen if a in A.marked and b in B.marked}
    name = f"{A.name}||{B.name}" if A.name and B.name else ""
    return FiniteAutomaton(seen, A.events | B.events, A.controllable | B.controllable, delta, init, marked, name)


def intersection(A: FiniteAutomaton, B: FiniteAutomaton, cap: int = STATE_CAP) -> FiniteAutomaton:
    """Automaton for ``L(A) ∩ L(B)`` (and the marked languages) over a common alphabet."""
    if A.events != B.events:
        raise ValueError("intersection needs a common alphabet")
    return parallel_compose(A, B, None, cap)


# --- language checks -------------------------------------------------------------------------

@dataclass
class Verdict:
    holds: bool
    witness: tuple | None = None
    detail: str = ""

    def __bool__(self):
        return self.holds

    def witness_str(self) -> str:
        return " ".join(str(e) for e in self.witness) if self.witness is not None else ""


def _subset_step(A, S, e):
    return frozenset(A._out[s][e] for s in S if e in A._out[s])


def _trace(parent, node):
    out = []
    while parent[node] is not None:
        node, e = parent[node]
        out.append(e)
    return tuple(reversed(out))


def language_equal(A: FiniteAutomaton, B: FiniteAutomaton, marked: bool = True,
                   cap: int = STATE_CAP) -> Verdict:
    """Exact check of ``L(A) = L(B)`` and, if ``marked``, ``L_m(A) = L_m(B)``.

    Both automata are determinised on the fly from their initial sets; the
    first differing string found in breadth-first order is the witness.
    """
    start = (frozenset(A.initial), frozenset(B.initial))
    parent = {start: None}
    todo = deque([start])
    while todo:
        node = todo.popleft()
        SA, SB = node
        if marked and bool(SA & A.marked) != bool(SB & B.marked):
            side = "first" if SA & A.marked else "second"
            return Verdict(False, _trace(parent, node), f"marked only in the {side} automaton")
        evs = {e for s in SA for e in A._out[s]} | {e for s in SB for e in B._out[s]}
        for e in sorted(evs, key=str):
            TA, TB = _subset_step(A, SA, e), _subset_step(B, SB, e)
            if bool(TA) != bool(TB):
                side = "first" if TA else "second"
                return Verdict(False, _trace(parent, node) + (e,), f"generated only by the {side} automaton")
            nxt = (TA, TB)
            if nxt not in parent:
                parent[nxt] = (node, e)
                if len(parent) > cap:
                    raise StateBlowup(f"determinised product exceeds {cap} states")
                todo.append(nxt)
    return Verdict(True)


def language_included(A: FiniteAutomaton, B: FiniteAutomaton, cap: int = STATE_CAP) -> Verdict:
    """``L(A) ⊆ L(B)`` with a shortest witness in ``L(A) - L(B)``."""
    start = (frozenset(A.initial), frozenset(B.initial))
    parent = {start: None}
    todo = deque([start])
    while todo:
        node = todo.popleft()
        SA, SB = node
        for e in sorted({e for s in SA for e in A._out[s]}, key=str):
            TA, TB = _subset_step(A, SA, e), _subset_step(B, SB, e)
            if not TB:
                return Verdict(False, _trace(parent, node) + (e,), "not generated by the second automaton")
            nxt = (TA, TB)
            if nxt not in parent:
                parent[nxt] = (node, e)
                if len(parent) > cap:
                    raise StateBlowup(f"determinised product exceeds {cap} states")
                todo.append(nxt)
    return Verdict(True)


def is_controllable(K: FiniteAutomaton, G: FiniteAutomaton, uncontrollable=None,
                    coupling: CouplingRelation | None = None, cap: int = STATE_CAP) -> Verdict:
    """No uncontrollable event possible in ``G`` is cut off by ``K``.

    With a coupling the check runs from each coupled pair separately; without
    one the union languages are compared.  The witness is the string after
    which the listed uncontrollable event is disabled.
    """
    unc = G.uncontrollable if uncontrollable is None else frozenset(uncontrollable)
    if coupling is None:
        starts = [(frozenset(K.initial), frozenset(G.initial))]
    else:
        starts = [(frozenset([k]), frozenset([g])) for g, k in coupling.pairs]
    parent = {s: None for s in starts}
    todo = deque(starts)
    while todo:
        node = todo.popleft()
        SK, SG = node
        k_ev = {e for s in SK for e in K._out[s]}
        for e in sorted({e for s in SG for e in G._out[s]} & unc, key=str):
            if e not in k_ev:
                return Verdict(False, _trace(parent, node) + (e,), f"uncontrollable {e} disabled")
        for e in sorted(k_ev, key=str):
            TK, TG = _subset_step(K, SK, e), _subset_step(G, SG, e)
            if not TG:
                continue
            nxt = (TK, TG)
            if nxt not in parent:
                parent[nxt] = (node, e)
                if len(parent) > cap:
                    raise StateBlowup(f"controllability product exceeds {cap} states")
                todo.append(nxt)
    return Verdict(True)


def enumerate_language(A: FiniteAutomaton, depth: int, marked: bool = False) -> set:
    """All strings of length ``<= depth`` (brute force, for cross-checks)."""
    out = set()
    frontier = [((), frozenset(A.initial))]
    for _ in range(depth + 1):
        nxt = []
        for s, S in frontier:
            if not marked or S & A.marked:
                out.add(s)
            for e in {e for q in S for e in A._out[q]}:
                nxt.append((s + (e,), _subset_step(A, S, e)))
        frontier = nxt
    return out


# --- supervisors ------------------------------------------------------------------------------

P_F, R_F, A_F = "P_f", "R_f", "A_f"
N_C, A_C = "N_c", "A_c"


def _into_shell_one(e) -> bool:
    return isinstance(e, Detection) and e.dst.i == 1


def formation_pattern(events) -> FiniteAutomaton:
    """Three-state formation specification over the plant alphabet."""
    delta = {}
    c_minus, c_zero = Actuation(_L.R_MINUS), Actuation(_L.C0)
    for e in events:
        if isinstance(e, Detection):
            tgt = R_F if _into_shell_one(e) else P_F
            delta[(P_F, e)] = tgt
            delta[(R_F, e)] = tgt
            delta[(A_F, e)] = tgt
        elif isinstance(e, External):
            delta[(P_F, e)] = A_F
            delta[(R_F, e)] = R_F
            delta[(A_F, e)] = A_F
        else:
            delta[(A_F, e)] = A_F
    delta[(P_F, c_minus)] = P_F
    delta[(R_F, c_zero)] = R_F
    ctrl = {e for e in events if isinstance(e, Actuation)}
    return FiniteAutomaton({P_F, R_F, A_F}, events, ctrl, delta, {P_F, R_F}, {P_F, R_F, A_F}, "F")


def theta_successor(spec: PartitionSpec, region):
    return adjacent_region(spec, region, Facet("theta", +1))


def collision_pattern(spec: PartitionSpec, events) -> FiniteAutomaton:
    """Two-state collision specification: after ``ca`` only the positive azimuth move."""
    delta = {}
    for e in events:
        delta[(N_C, e)] = A_C if isinstance(e, External) else N_C
        if isinstance(e, Detection) and e.dst == theta_successor(spec, e.src):
            delta[(A_C, e)] = N_C
    delta[(A_C, CA)] = A_C
    delta[(A_C, Actuation(_L.THETA_PLUS))] = A_C
    ctrl = {e for e in events if isinstance(e, Actuation)}
    return FiniteAutomaton({N_C, A_C}, events, ctrl, delta, {N_C}, {N_C, A_C}, "C")


def formation_coupling(G: FiniteAutomaton) -> CouplingRelation:
    return CouplingRelation({(g, R_F if g.region.i == 1 else P_F) for g in G.initial})


def collision_coupling(G: FiniteAutomaton) -> CouplingRelation:
    return CouplingRelation({(g, N_C) for g in G.initial})


def _realise(G, pattern, coupling, name):
    prod = parallel_compose(G, pattern, coupling).accessible()
    # every state marked: closed-loop marking then comes from the plant alone
    sup = FiniteAutomaton(prod.states, prod.events, prod.controllable, prod.delta, prod.initial,
                          prod.states, name)
    return sup


def build_formation_supervisor(spec: PartitionSpec, G: FiniteAutomaton | None = None) -> FiniteAutomaton:
    """S_F realised on the plant; states are ``(plant state, pattern state)``."""
    G = build_plant(spec) if G is None else G
    return _realise(G, formation_pattern(G.events), formation_coupling(G), "S_F")


def build_collision_supervisor(spec: PartitionSpec, G: FiniteAutomaton | None = None) -> FiniteAutomaton:
    """S_C realised on the plant; states are ``(plant state, pattern state)``."""
    G = build_plant(spec) if G is None else G
    return _realise(G, collision_pattern(spec, G.events), collision_coupling(G), "S_C")


def supervisor_coupling(G: FiniteAutomaton, S: FiniteAutomaton) -> CouplingRelation:
    """Pair each plant initial state with the supervisor initial state built over it."""
    return CouplingRelation({(s[0], s) for s in S.initial}).check_covers(G)


@dataclass(frozen=True, order=True)
class ClosedLoopState:
    plant: Hashable
    formation: str
    collision: str


def closed_loop(G: FiniteAutomaton, S_F: FiniteAutomaton, S_C: FiniteAutomaton) -> FiniteAutomaton:
    """``G || S_F || S_C`` with states flattened to :class:`ClosedLoopState`."""
    GF = parallel_compose(G, S_F, supervisor_coupling(G, S_F))
    by_plant = {}
    for sc in S_C.initial:
        by_plant.setdefault(sc[0], []).append(sc)
    coup = {(gf, sc) for gf in GF.initial for sc in by_plant.get(gf[0], ())}
    GFC = parallel_compose(GF, S_C, CouplingRelation(coup).check_covers(GF))
    cl = GFC.relabel(lambda s: ClosedLoopState(s[0][0], s[0][1][1], s[1][1]))
    return FiniteAutomaton(cl.states, cl.events, cl.controllable, cl.delta, cl.initial, cl.marked, "G_cl")


def controllable_choice_violations(cl: FiniteAutomaton) -> list:
    """Reachable region states whose number of enabled actuations is not one."""
    bad = []
    for s in sorted(cl.reachable(), key=str):
        if isinstance(s.plant, RegionLabel):
            acts = [e for e in cl.enabled(s) if e in cl.controllable]
            if len(acts) != 1:
                bad.append((s, sorted(acts, key=str)))
    return bad


@dataclass
class DesReport:
    plant_states: int
    refined_states: int
    closed_loop_states: int
    results: dict  # name -> Verdict

    @property
    def passed(self) -> bool:
        return all(v.holds for v in self.results.values())

    def lines(self):
        yield f"plant states: {self.plant_states}"
        yield f"refined plant states: {self.refined_states}"
        yield f"closed-loop states: {self.closed_loop_states}"
        for name, v in self.results.items():
            extra = f" witness: {v.witness_str()}" if v.witness is not None else ""
            extra += f" ({v.detail})" if v.detail else ""
            yield f"{name}: {'PASS' if v.holds else 'FAIL'}{extra}"


def des_report(spec: PartitionSpec) -> DesReport:
    """Run every exact DES check on ``spec``."""
    G = build_plant(spec)
    G_ref = refine_plant(G)
    S_F = build_formation_supervisor(spec, G)
    S_C = build_collision_supervisor(spec, G)
    cl = closed_loop(G, S_F, S_C)
    res = {}
    res["L(G) = L(G_ref)"] = language_equal(G, G_ref)
    res["L(G) subset L(G_ref)"] = language_included(G, G_ref)
    res["K_F controllable"] = is_controllable(S_F, G, coupling=supervisor_coupling(G, S_F))
    res["K_C controllable"] = is_controllable(S_C, G, coupling=supervisor_coupling(G, S_C))
    res["L(G||S_F) = L(S_F)"] = language_equal(parallel_compose(G, S_F, supervisor_coupling(G, S_F)), S_F, marked=False)
    res["L(G||S_C) = L(S_C)"] = language_equal(parallel_compose(G, S_C, supervisor_coupling(G, S_C)), S_C, marked=False)
    res["L(G||S_F||S_C) = L(S_F) & L(S_C)"] = language_equal(cl, intersection(S_F, S_C), marked=False)
    blocking = cl.blocking_states()
    res["closed loop nonblocking"] = Verdict(not blocking, None,
                                             f"{len(blocking)} blocking states" if blocking else "")
    bad = controllable_choice_violations(cl)
    res["one actuation per region state"] = Verdict(not bad, None, f"{len(bad)} violations" if bad else "")
    return DesReport(len(G), len(G_ref), len(cl.reachable()), res)
