"""Vertex velocity synthesis for invariant regions and exit facets.

A region is made invariant when, on every facet, each vertex velocity of that
facet has a strictly negative component along the outer normal at every point
of the facet.  A facet is an exit facet when the same holds for the other
facets while *every* vertex velocity has a strictly positive component along
the exit normal.  The set of admissible directions at one vertex is an
:class:`DirectionBox`.

Two ways of building those sets are supported:

``"derived"`` (default)
    intersection of the sampled half-space constraints coming from the facets
    that contain the vertex.  A vertex on the z axis or at the origin also
    takes the constraints of every other facet through that point.
``"paper"``
    the closed-form angular intervals (azimuth/elevation boxes normalised with
    :func:`range_angles`), kept for comparison.  Exit sets in this mode exist
    only for ``F_r^-``; other exit facets fall back to the derived sets.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.optimize import linprog

from .exceptions import EmptyEligibleSet, Infeasible
from .partition import (
    FACETS,
    TWO_PI,
    Facet,
    PartitionSpec,
    Region,
    e_r,
    facet_normals,
    facets_of_vertex,
    is_degenerate_facet,
    pinch_facets,
    to_spherical,
)

log = logging.getLogger(__name__)

HALF_PI = 0.5 * np.pi

# normals sampled per facet while synthesising (denser than verification)
SYNTH_GRID = 12
VERIFY_GRID = 8
FALLBACK_POINTS = 2000
DEFAULT_KAPPA = 0.8


class ControlLabel(str, Enum):
    C0 = "C_0"
    R_PLUS = "C_r+"
    R_MINUS = "C_r-"
    THETA_PLUS = "C_theta+"
    THETA_MINUS = "C_theta-"
    PHI_PLUS = "C_phi+"
    PHI_MINUS = "C_phi-"

    def __str__(self):
        return self.value

    @property
    def facet(self) -> Facet | None:
        return _LABEL_FACET[self]

    @classmethod
    def for_facet(cls, facet) -> "ControlLabel":
        return _FACET_LABEL[Facet(*facet)]


_LABEL_FACET = {
    ControlLabel.C0: None,
    ControlLabel.R_PLUS: Facet("r", +1),
    ControlLabel.R_MINUS: Facet("r", -1),
    ControlLabel.THETA_PLUS: Facet("theta", +1),
    ControlLabel.THETA_MINUS: Facet("theta", -1),
    ControlLabel.PHI_PLUS: Facet("phi", +1),
    ControlLabel.PHI_MINUS: Facet("phi", -1),
}
_FACET_LABEL = {f: lab for lab, f in _LABEL_FACET.items() if f is not None}
EXIT_LABELS = tuple(_FACET_LABEL.values())


@dataclass(frozen=True)
class SpeedBound:
    """Ball of admissible velocities ``|u| <= v_max``."""

    v_max: float

    def __post_init__(self):
        if not np.isfinite(self.v_max) or self.v_max < 0:
            raise ValueError(f"v_max must be finite and >= 0, got {self.v_max!r}")

    def contains(self, u, rtol=1e-12) -> bool:
        return bool(np.all(np.linalg.norm(np.atleast_2d(u), axis=-1) <= self.v_max * (1 + rtol)))


# --- angle helpers -----------------------------------------------------------------

def hbar(alpha):
    """+1 on ``[2k pi, (2k+1) pi]``, -1 on ``((2k+1) pi, (2k+2) pi)``."""
    return np.where(np.mod(alpha, TWO_PI) <= np.pi, 1.0, -1.0)


def range_angles(theta, phi):
    """Normalise raw direction angles to ``theta in [0, 2 pi)``, ``phi in [0, pi]``.

    ``phi`` is reflected into ``[0, pi]``; a reflection turns the azimuth by
    ``pi``.  The raw pair and the normalised pair name the same unit vector.
    """
    theta = np.asarray(theta, float)
    phi = _wrap(np.asarray(phi, float))
    flip = hbar(phi) < 0
    phi = np.where(flip, TWO_PI - phi, phi)
    theta = _wrap(np.where(flip, theta + np.pi, theta))
    return theta, phi


def _wrap(a):
    # np.mod of a tiny negative rounds to exactly 2 pi
    a = np.mod(a, TWO_PI)
    return np.where(a >= TWO_PI, 0.0, a)


def direction(theta, phi) -> np.ndarray:
    return e_r(theta, phi)


def fibonacci_sphere(n: int = FALLBACK_POINTS) -> np.ndarray:
    """Deterministic, nearly uniform unit directions."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    rho = np.sqrt(1.0 - z * z)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    a = golden * k
    return np.stack([rho * np.cos(a), rho * np.sin(a), z], axis=-1)


def _unique_rows(a, decimals=12):
    if len(a) == 0:
        return a
    _, idx = np.unique(np.round(a, decimals), axis=0, return_index=True)
    return a[np.sort(idx)]


def chebyshev_direction(neg, pos):
    """Unit direction maximising the smallest constraint margin.

    Constraints are ``n . d < 0`` for rows of ``neg`` and ``p . d > 0`` for rows
    of ``pos``.  Returns ``(d, margin)`` or ``(None, margin)`` when no direction
    has a positive margin.
    """
    rows = [np.asarray(neg, float).reshape(-1, 3), -np.asarray(pos, float).reshape(-1, 3)]
    G = np.concatenate(rows)
    if len(G) == 0:
        return np.array([0.0, 0.0, 1.0]), np.inf
    A = np.hstack([G, np.ones((len(G), 1))])
    res = linprog(
        c=[0, 0, 0, -1.0],
        A_ub=A,
        b_ub=np.zeros(len(G)),
        bounds=[(-1, 1)] * 3 + [(None, 1.0)],
        method="highs",
    )
    if res.status != 0:
        return None, -np.inf
    d = res.x[:3]
    norm = np.linalg.norm(d)
    if res.x[3] <= 1e-10 or norm == 0:
        return None, float(res.x[3])
    d = d / norm
    return d, float(np.min(-G @ d))


# --- eligible direction sets ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DirectionBox:
    """Admissible velocity directions at one vertex.

    In derived mode the set is ``{d : n . d < 0 for n in neg, p . d > 0 for p in pos}``;
    ``theta_interval``/``phi_interval`` are its angular bounding box.  In paper mode
    the set is the image under :func:`range_angles` of the raw box
    ``raw_theta x raw_phi``.
    """

    mode: str
    neg: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    pos: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    raw_theta: tuple[float, float] | None = None
    raw_phi: tuple[float, float] | None = None
    closed: bool = False

    def margin(self, d) -> float:
        """Smallest constraint slack of unit direction ``d`` (derived constraints)."""
        d = np.asarray(d, float)
        vals = [np.inf]
        if len(self.neg):
            vals.append(np.min(-self.neg @ d))
        if len(self.pos):
            vals.append(np.min(self.pos @ d))
        return float(min(vals))

    def contains(self, d) -> bool:
        d = np.asarray(d, float)
        if self.mode == "derived":
            return self.margin(d) > 0
        return bool(self._paper_contains(d))

    def _paper_contains(self, d):
        _, th, ph = to_spherical(d)
        t_lo, t_hi = self.raw_theta if self.raw_theta is not None else (-np.inf, np.inf)
        p_lo, p_hi = self.raw_phi if self.raw_phi is not None else (0.0, np.pi)
        cands = []
        for kk in range(-2, 3):
            # pre-images of the normalisation: same vector, or reflected elevation
            cands.append((th, ph + TWO_PI * kk))
            cands.append((th + np.pi, -ph + TWO_PI * kk))
        for tt, pp in cands:
            if not _in_interval(pp, p_lo, p_hi, self.closed):
                continue
            if self.raw_theta is None:
                return True
            # smallest representative of tt that is >= t_lo (strictly, for open boxes)
            tt = tt + TWO_PI * np.ceil((t_lo - tt) / TWO_PI)
            if not self.closed and tt <= t_lo:
                tt += TWO_PI
            if _in_interval(tt, t_lo, t_hi, self.closed):
                return True
        return False

    @cached_property
    def _center(self):
        if self.mode == "derived":
            return chebyshev_direction(self.neg, self.pos)
        t = 0.0 if self.raw_theta is None else 0.5 * sum(self.raw_theta)
        p = HALF_PI if self.raw_phi is None else 0.5 * sum(self.raw_phi)
        if self.raw_theta is not None and self.raw_theta[1] <= self.raw_theta[0]:
            return None, -np.inf
        if self.raw_phi is not None and self.raw_phi[1] <= self.raw_phi[0]:
            return None, -np.inf
        th, ph = range_angles(t, p)
        d = direction(th, ph)
        return d, self.margin(d)

    @property
    def is_empty(self) -> bool:
        return self._center[0] is None

    def representative(self) -> np.ndarray | None:
        """Central unit direction: max-margin in derived mode, box midpoint in paper mode."""
        d = self._center[0]
        return None if d is None else d.copy()

    @cached_property
    def _bbox(self):
        pts = fibonacci_sphere()
        inside = np.array([self.contains(d) for d in pts]) if self.mode == "paper" else (
            ((pts @ self.neg.T) < 0).all(axis=1) & ((pts @ self.pos.T) > 0).all(axis=1)
        )
        pts = pts[inside]
        if len(pts) == 0:
            d = self.representative()
            if d is None:
                return None, None
            pts = d[None]
        _, th, ph = to_spherical(pts).T
        return _circular_hull(th), (float(ph.min()), float(ph.max()))

    @property
    def theta_interval(self):
        return self._bbox[0]

    @property
    def phi_interval(self):
        return self._bbox[1]


def _in_interval(x, lo, hi, closed, eps=1e-12):
    if closed:
        return lo - eps <= x <= hi + eps
    return lo < x < hi


def _circular_hull(angles):
    """Smallest arc ``(lo, hi)`` (hi may exceed 2 pi) covering the angles."""
    a = np.sort(np.mod(angles, TWO_PI))
    if len(a) == 1:
        return float(a[0]), float(a[0])
    gaps = np.diff(np.concatenate([a, [a[0] + TWO_PI]]))
    g = int(np.argmax(gaps))
    lo = a[(g + 1) % len(a)]
    hi = a[g] if g + 1 < len(a) else a[g]
    if hi < lo:
        hi += TWO_PI
    return float(lo), float(hi)


def _neg_normals(spec, region, facets, grid):
    parts = [facet_normals(spec, region, f, n=grid) for f in facets]
    return _unique_rows(np.concatenate(parts)) if parts else np.empty((0, 3))


def facet_set(spec: PartitionSpec, region, facet, mode: str = "derived", grid: int = SYNTH_GRID) -> DirectionBox:
    """Directions with strictly negative outer-normal component over a whole facet."""
    facet = Facet(*facet)
    if mode == "derived":
        return DirectionBox("derived", neg=_neg_normals(spec, region, [facet], grid))
    _check_mode(mode)
    (_, _), (tj, tj1), (pk, pk1) = spec.bounds(region)
    table = {
        Facet("r", +1): ((tj1 + HALF_PI, tj + 3 * HALF_PI), (pk1 + HALF_PI, pk + 3 * HALF_PI)),
        Facet("r", -1): ((tj1 - HALF_PI, tj + HALF_PI), (pk1 - HALF_PI, pk + HALF_PI)),
        Facet("theta", +1): ((tj1 - np.pi, tj1), None),
        Facet("theta", -1): ((tj, tj + np.pi), None),
        Facet("phi", +1): (None, (pk1 - np.pi, pk1)),
        Facet("phi", -1): (None, (pk, pk + np.pi)),
    }
    th, ph = table[facet]
    return DirectionBox("paper", raw_theta=th, raw_phi=ph, closed=True)


def _paper_invariant_box(spec, region, m):
    (_, _), (tj, tj1), (pk, pk1) = spec.bounds(region)
    q = HALF_PI
    table = {
        0: ((tj, tj + q), (pk, pk + q)),
        1: ((tj1 + q, tj + np.pi), (pk1 + q, pk + np.pi)),
        2: ((tj1 - q, tj1), (pk, pk + q)),
        3: ((tj1 - np.pi, tj + 3 * q), (pk1 + q, pk + np.pi)),
        4: ((tj, tj + q), (pk1 - q, pk1)),
        5: ((tj1 + q, tj + np.pi), (pk1 + np.pi, pk + 3 * q)),
        6: ((tj1 - q, tj1), (pk1 - q, pk1)),
        7: ((tj1 + np.pi, tj + 3 * q), (pk1 + np.pi, pk + 3 * q)),
    }
    th, ph = table[m]
    return DirectionBox("paper", raw_theta=th, raw_phi=ph)


def _paper_exit_r_minus_box(spec, region, m):
    (_, _), (tj, tj1), (pk, pk1) = spec.bounds(region)
    q = HALF_PI
    pair = m // 2
    table = {
        0: ((tj1 + q, tj + np.pi), (pk1 + q, pk + np.pi)),
        1: ((tj1 + q, tj + np.pi), (pk1 + np.pi, pk + 3 * q)),
        2: ((tj1 + np.pi, tj + 3 * q), (pk1 + q, pk + np.pi)),
        3: ((tj + np.pi, tj + 3 * q), (pk1 + np.pi, pk + 3 * q)),
    }
    th, ph = table[pair]
    return DirectionBox("paper", raw_theta=th, raw_phi=ph)


def _check_mode(mode):
    if mode not in ("derived", "paper"):
        raise ValueError(f"mode must be 'derived' or 'paper', got {mode!r}")


def eligible_invariant_set(spec: PartitionSpec, region, m: int, mode: str = "derived",
                           grid: int = SYNTH_GRID) -> DirectionBox:
    _check_mode(mode)
    region = spec.check_region(region)
    if not 0 <= m <= 7:
        raise ValueError(f"vertex index must be in 0..7, got {m}")
    if mode == "paper":
        return _paper_invariant_box(spec, region, m)
    facets = facets_of_vertex(m) + pinch_facets(spec, region, m)
    return DirectionBox("derived", neg=_neg_normals(spec, region, facets, grid))


def eligible_exit_set(spec: PartitionSpec, region, exit_facet, m: int, mode: str = "derived",
                      grid: int = SYNTH_GRID) -> DirectionBox:
    _check_mode(mode)
    region = spec.check_region(region)
    exit_facet = Facet(*exit_facet)
    if not 0 <= m <= 7:
        raise ValueError(f"vertex index must be in 0..7, got {m}")
    if mode == "paper":
        if exit_facet == Facet("r", -1):
            return _paper_exit_r_minus_box(spec, region, m)
        log.warning("no closed-form exit set for %s; using derived constraints", exit_facet)
    others = [f for f in facets_of_vertex(m) + pinch_facets(spec, region, m) if f != exit_facet]
    pos = facet_normals(spec, region, exit_facet, n=grid)
    if len(pos) == 0:
        # a zero-area facet cannot be crossed: make the set empty
        return DirectionBox("derived", neg=np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]))
    return DirectionBox("derived", neg=_neg_normals(spec, region, others, grid), pos=_unique_rows(pos))


# --- controls and certificates -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class VertexControls:
    region: Region
    label: ControlLabel
    u: np.ndarray  # (8, 3) Cartesian velocities at the logical vertices

    def __post_init__(self):
        u = np.asarray(self.u, float)
        if u.shape != (8, 3) or not np.all(np.isfinite(u)):
            raise ValueError(f"vertex controls must be a finite (8, 3) array, got shape {u.shape}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "region", Region(*self.region))
        object.__setattr__(self, "label", ControlLabel(self.label))


@dataclass(frozen=True)
class Verification:
    passed: bool
    margin: float  # invariant: worst (largest) normal component; exit: condition-1 worst
    exit_margin: float | None = None  # exit only: smallest exit-normal component
    diagnostics: tuple[str, ...] = ()


def _pinch_worst(spec, region, u, samples, skip=None) -> float:
    """Largest outward component of an axis or origin vertex against the facets it touches."""
    worst = -np.inf
    for m in range(8):
        for f in pinch_facets(spec, region, m):
            if f != skip:
                worst = max(worst, float(np.max(facet_normals(spec, region, f, n=samples) @ u[m])))
    return worst


def verify_invariant(spec: PartitionSpec, region, controls, samples: int = VERIFY_GRID) -> Verification:
    u = controls.u if isinstance(controls, VertexControls) else np.asarray(controls, float)
    worst = -np.inf
    diags = []
    for f in FACETS:
        if is_degenerate_facet(spec, region, f):
            diags.append(f"{f}: degenerate, skipped")
            continue
        n = facet_normals(spec, region, f, n=samples)
        worst = max(worst, float(np.max(n @ u[list(f.vertices)].T)))
    worst = max(worst, _pinch_worst(spec, region, u, samples))
    return Verification(worst < 0, worst, None, tuple(diags))


def verify_exit(spec: PartitionSpec, region, exit_facet, controls, samples: int = VERIFY_GRID) -> Verification:
    exit_facet = Facet(*exit_facet)
    u = controls.u if isinstance(controls, VertexControls) else np.asarray(controls, float)
    worst = -np.inf
    diags = []
    for f in FACETS:
        if f == exit_facet:
            continue
        if is_degenerate_facet(spec, region, f):
            diags.append(f"{f}: degenerate, skipped")
            continue
        n = facet_normals(spec, region, f, n=samples)
        worst = max(worst, float(np.max(n @ u[list(f.vertices)].T)))
    worst = max(worst, _pinch_worst(spec, region, u, samples, skip=exit_facet))
    if is_degenerate_facet(spec, region, exit_facet):
        diags.append(f"DegenerateFacet: exit {exit_facet} has zero area")
        return Verification(False, worst, float("nan"), tuple(diags))
    n = facet_normals(spec, region, exit_facet, n=samples)
    exit_margin = float(np.min(n @ u.T))
    return Verification(worst < 0 and exit_margin > 0, worst, exit_margin, tuple(diags))


def verify(spec, region, controls: VertexControls, samples: int = VERIFY_GRID) -> Verification:
    facet = controls.label.facet
    if facet is None:
        return verify_invariant(spec, region, controls, samples)
    return verify_exit(spec, region, facet, controls, samples)


def eligible_set(spec, region, label, m, mode="derived", grid=SYNTH_GRID) -> DirectionBox:
    label = ControlLabel(label)
    if label.facet is None:
        return eligible_invariant_set(spec, region, m, mode, grid)
    return eligible_exit_set(spec, region, label.facet, m, mode, grid)


def synthesize(spec: PartitionSpec, region, label, bound: SpeedBound, mode: str = "derived",
               kappa: float = DEFAULT_KAPPA) -> VertexControls:
    """Vertex velocities realising ``label`` on ``region``.

    Each vertex gets ``kappa * v_max`` times the central direction of its eligible
    set.  If the assembled controls fail verification, every vertex falls back to
    the best-margin direction on a Fibonacci grid under the derived constraints.
    """
    region = spec.check_region(region)
    label = ControlLabel(label)
    if not 0 < kappa <= 1:
        raise ValueError(f"kappa must be in (0, 1], got {kappa}")
    speed = kappa * bound.v_max
    if speed <= 0:
        raise Infeasible(region, label, {m: "zero speed bound" for m in range(8)})
    if label.facet is not None and is_degenerate_facet(spec, region, label.facet):
        raise Infeasible(region, label, {m: f"exit {label.facet} has zero area" for m in range(8)})
    dirs = np.empty((8, 3))
    missing = {}
    for m in range(8):
        d = eligible_set(spec, region, label, m, mode).representative()
        if d is None:
            missing[m] = "empty eligible set"
        else:
            dirs[m] = d
    if not missing:
        controls = VertexControls(region, label, speed * dirs)
        if verify(spec, region, controls).passed:
            return controls
        log.info("central directions failed verification on %s/%s; grid fallback", region, label)
    return _grid_fallback(spec, region, label, speed)


def _grid_fallback(spec, region, label, speed):
    pts = fibonacci_sphere()
    dirs = np.empty((8, 3))
    diags = {}
    for m in range(8):
        box = eligible_set(spec, region, label, m, "derived")
        slack = np.full(len(pts), np.inf)
        if len(box.neg):
            slack = np.minimum(slack, np.min(-(pts @ box.neg.T), axis=1))
        if len(box.pos):
            slack = np.minimum(slack, np.min(pts @ box.pos.T, axis=1))
        best = int(np.argmax(slack))
        if slack[best] <= 0:
            diags[m] = f"no grid direction feasible (best slack {slack[best]:.3g})"
        dirs[m] = pts[best]
    if diags:
        raise Infeasible(region, label, diags)
    controls = VertexControls(region, label, speed * dirs)
    if not verify(spec, region, controls).passed:
        raise Infeasible(region, label, {m: "grid direction fails verification" for m in range(8)})
    return controls


def feasibility_table(spec: PartitionSpec, bound: SpeedBound, regions=None, labels=None,
                      mode: str = "derived", kappa: float = DEFAULT_KAPPA):
    """Yield ``(region, label, controls | None, verification | Infeasible)`` rows."""
    regions = spec.regions() if regions is None else regions
    labels = list(ControlLabel) if labels is None else [ControlLabel(x) for x in labels]
    for region in regions:
        for label in labels:
            try:
                c = synthesize(spec, region, label, bound, mode=mode, kappa=kappa)
            except Infeasible as err:
                yield Region(*region), label, None, err
            else:
                yield Region(*region), label, c, verify(spec, region, c)


def require_box(spec, region, label, m, mode="derived") -> DirectionBox:
    """Like :func:`eligible_set` but raising :class:`EmptyEligibleSet` when empty."""
    box = eligible_set(spec, region, label, m, mode)
    if box.is_empty:
        raise EmptyEligibleSet(region, label, m)
    return box
