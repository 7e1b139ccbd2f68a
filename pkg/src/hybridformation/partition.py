"""Spherical partition of the control horizon.

The ball of radius ``radius_m`` is cut by uniformly spaced spheres ``r = r_i``,
half-planes ``theta = theta_j`` and cones ``phi = phi_k``.  Regions, facets and
vertices are addressed with 1-based ``(i, j, k)`` indices; vertex ``m`` of a
region carries the bits ``m_r = m & 1``, ``m_theta = (m >> 1) & 1`` and
``m_phi = (m >> 2) & 1`` selecting the upper curve on each axis.

Frame: x east, y north, z up; ``theta = atan2(y, x)`` in ``[0, 2 pi)`` and
``phi = acos(z / r)``.  On the z axis and at the origin theta is 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, NamedTuple

import numpy as np

from .exceptions import DegenerateFacet, InvalidRegion, PointNotOnFacet, PointOutsideHorizon

TWO_PI = 2.0 * np.pi
DEFAULT_TOL = 1e-9

AXES = ("r", "theta", "phi")
_AXIS_BIT = {"r": 0, "theta": 1, "phi": 2}


class Region(NamedTuple):
    i: int
    j: int
    k: int

    def __str__(self):
        return f"R[{self.i},{self.j},{self.k}]"


class Facet(NamedTuple):
    axis: str
    sign: int  # +1 or -1

    def __str__(self):
        return f"F_{self.axis}{'+' if self.sign > 0 else '-'}"

    @property
    def opposite(self) -> "Facet":
        return Facet(self.axis, -self.sign)

    @property
    def vertices(self) -> tuple[int, ...]:
        """Logical vertex indices lying on this facet."""
        bit = _AXIS_BIT[self.axis]
        want = 1 if self.sign > 0 else 0
        return tuple(m for m in range(8) if (m >> bit) & 1 == want)


FACETS = (
    Facet("r", +1), Facet("r", -1),
    Facet("theta", +1), Facet("theta", -1),
    Facet("phi", +1), Facet("phi", -1),
)


def vertex_bits(m: int) -> tuple[int, int, int]:
    """``(m_r, m_theta, m_phi)`` for vertex index ``m``."""
    return m & 1, (m >> 1) & 1, (m >> 2) & 1


def facets_of_vertex(m: int) -> tuple[Facet, Facet, Facet]:
    mr, mt, mp = vertex_bits(m)
    return (
        Facet("r", +1 if mr else -1),
        Facet("theta", +1 if mt else -1),
        Facet("phi", +1 if mp else -1),
    )


# --- partition cells -------------------------------------------------------

@dataclass(frozen=True)
class RegionCell:
    region: Region
    kind = "region"


@dataclass(frozen=True)
class DetectionCell:
    """Interior of the facet shared by two adjacent regions (unordered)."""

    a: Region
    b: Region
    kind = "detection"

    @classmethod
    def of(cls, a, b) -> "DetectionCell":
        a, b = Region(*a), Region(*b)
        return cls(*sorted((a, b)))

    def __contains__(self, region):
        return Region(*region) in (self.a, self.b)


@dataclass(frozen=True)
class EdgeCell:
    kind = "edge"


@dataclass(frozen=True)
class SurfaceCell:
    kind = "surface"


EDGE = EdgeCell()
SURFACE = SurfaceCell()


# --- coordinates ---------------------------------------------------------------

def to_spherical(p) -> np.ndarray:
    """Cartesian ``(..., 3)`` to spherical ``(r, theta, phi)`` with the frame conventions."""
    p = np.asarray(p, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    r = np.sqrt(x * x + y * y + z * z)
    on_axis = (x == 0.0) & (y == 0.0)
    theta = np.where(on_axis, 0.0, np.mod(np.arctan2(y, x), TWO_PI))
    # mod can return 2 pi for tiny negative angles
    theta = np.where(theta >= TWO_PI, 0.0, theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_phi = np.where(r > 0, z / np.where(r > 0, r, 1.0), 1.0)
    phi = np.arccos(np.clip(cos_phi, -1.0, 1.0))
    return np.stack([r, theta, phi], axis=-1)


def to_cartesian(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    r, theta, phi = s[..., 0], s[..., 1], s[..., 2]
    sp = np.sin(phi)
    return np.stack([r * sp * np.cos(theta), r * sp * np.sin(theta), r * np.cos(phi)], axis=-1)


def e_r(theta, phi) -> np.ndarray:
    theta, phi = np.asarray(theta, float), np.asarray(phi, float)
    sp = np.sin(phi)
    return np.stack([sp * np.cos(theta), sp * np.sin(theta), np.cos(phi)], axis=-1)


def e_theta(theta) -> np.ndarray:
    theta = np.asarray(theta, float)
    return np.stack([-np.sin(theta), np.cos(theta), np.zeros_like(theta)], axis=-1)


def e_phi(theta, phi) -> np.ndarray:
    theta, phi = np.asarray(theta, float), np.asarray(phi, float)
    cp = np.cos(phi)
    return np.stack([cp * np.cos(theta), cp * np.sin(theta), -np.sin(phi)], axis=-1)


# --- the partition ---------------------------------------------------------------

@dataclass(frozen=True)
class PartitionSpec:
    """Uniform spherical grid over a ball of radius ``radius_m``."""

    radius_m: float
    n_r: int
    n_theta: int
    n_phi: int

    def __post_init__(self):
        if not np.isfinite(self.radius_m) or self.radius_m <= 0:
            raise ValueError(f"radius_m must be positive, got {self.radius_m!r}")
        for name in ("n_r", "n_theta", "n_phi"):
            n = getattr(self, name)
            if int(n) != n or n < 2:
                raise ValueError(f"{name} must be an integer >= 2, got {n!r}")

    @cached_property
    def r_curves(self) -> np.ndarray:
        return self.radius_m * np.arange(self.n_r) / (self.n_r - 1)

    @cached_property
    def theta_curves(self) -> np.ndarray:
        return TWO_PI * np.arange(self.n_theta) / (self.n_theta - 1)

    @cached_property
    def phi_curves(self) -> np.ndarray:
        return np.pi * np.arange(self.n_phi) / (self.n_phi - 1)

    @property
    def dr(self) -> float:
        return self.radius_m / (self.n_r - 1)

    @property
    def dtheta(self) -> float:
        return TWO_PI / (self.n_theta - 1)

    @property
    def dphi(self) -> float:
        return np.pi / (self.n_phi - 1)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.n_r - 1, self.n_theta - 1, self.n_phi - 1

    @property
    def n_regions(self) -> int:
        a, b, c = self.shape
        return a * b * c

    def regions(self) -> Iterator[Region]:
        a, b, c = self.shape
        for i in range(1, a + 1):
            for j in range(1, b + 1):
                for k in range(1, c + 1):
                    yield Region(i, j, k)

    def check_region(self, region) -> Region:
        try:
            region = Region(*(int(v) for v in region))
        except (TypeError, ValueError):
            raise InvalidRegion(f"not a region index: {region!r}") from None
        a, b, c = self.shape
        if not (1 <= region.i <= a and 1 <= region.j <= b and 1 <= region.k <= c):
            raise InvalidRegion(f"{region} outside grid {self.shape}")
        return region

    def bounds(self, region) -> np.ndarray:
        """``[[r_lo, r_hi], [theta_lo, theta_hi], [phi_lo, phi_hi]]``."""
        i, j, k = self.check_region(region)
        return np.array([
            [self.r_curves[i - 1], self.r_curves[i]],
            [self.theta_curves[j - 1], self.theta_curves[j]],
            [self.phi_curves[k - 1], self.phi_curves[k]],
        ])

    def centroid(self, region) -> np.ndarray:
        """Coordinate midpoint of the region, spherical."""
        return self.bounds(region).mean(axis=1)

    def diameter(self, region) -> float:
        """Upper bound on the Euclidean diameter of the region."""
        corners = to_cartesian(vertices_of(self, region))
        return float(np.max(np.linalg.norm(corners[:, None] - corners[None], axis=-1)))


# --- queries -------------------------------------------------------------------------

def vertices_of(spec: PartitionSpec, region) -> np.ndarray:
    """Spherical coordinates of the eight logical vertices, shape ``(8, 3)``."""
    b = spec.bounds(region)
    out = np.empty((8, 3))
    for m in range(8):
        mr, mt, mp = vertex_bits(m)
        out[m] = b[0, mr], b[1, mt], b[2, mp]
    return out


def is_degenerate_facet(spec: PartitionSpec, region, facet: Facet) -> bool:
    """Zero-area facets: the inner sphere at the origin and the cones on the z axis."""
    i, j, k = spec.check_region(region)
    if facet == Facet("r", -1):
        return i == 1
    if facet == Facet("phi", -1):
        return k == 1
    if facet == Facet("phi", +1):
        return k == spec.n_phi - 1
    return False


def _facet_normals(facet: Facet, theta, phi) -> np.ndarray:
    if facet.axis == "r":
        n = e_r(theta, phi)
    elif facet.axis == "theta":
        n = e_theta(theta)
    else:
        n = e_phi(theta, phi)
    return n if facet.sign > 0 else -n


def on_facet(spec: PartitionSpec, region, facet: Facet, y_sph, tol=DEFAULT_TOL) -> bool:
    b = spec.bounds(region)
    y = np.asarray(y_sph, float)
    ax = _AXIS_BIT[facet.axis]
    target = b[ax, 1 if facet.sign > 0 else 0]
    lo, hi = b[:, 0].copy(), b[:, 1].copy()
    coord = y.copy()
    coord[1] = _unwrap_theta(coord[1], lo[1], hi[1])
    ang_tol = tol * 10  # angles are compared in radians
    if facet.axis == "r":
        if abs(coord[0] - target) > tol * spec.radius_m:
            return False
    elif abs(coord[ax] - target) > ang_tol:
        return False
    slack = np.array([tol * spec.radius_m, ang_tol, ang_tol])
    return bool(np.all(coord >= lo - slack) and np.all(coord <= hi + slack))


def pinch_facets(spec: PartitionSpec, region, m: int) -> tuple[Facet, ...]:
    """Non-degenerate facets that meet vertex ``m``'s physical point without containing it.

    Vertices on the z axis are shared by both azimuth facets, and vertices at the
    origin by every azimuth and elevation facet.  The multi-affine field is
    multi-valued there, so each copy must respect all of these facets.
    """
    i, _, k = spec.check_region(region)
    mr, _, mp = vertex_bits(m)
    own = set(facets_of_vertex(m))
    if i == 1 and mr == 0:
        cand = [f for f in FACETS if f.axis != "r"]
    elif (k == 1 and mp == 0) or (k == spec.n_phi - 1 and mp == 1):
        cand = [Facet("theta", -1), Facet("theta", +1)]
    else:
        return ()
    return tuple(f for f in cand if f not in own and not is_degenerate_facet(spec, region, f))


def outer_normal(spec: PartitionSpec, region, facet: Facet, y_sph, tol=DEFAULT_TOL) -> np.ndarray:
    """Outer unit normal of ``facet`` at spherical point ``y_sph`` (signed frame vector)."""
    facet = Facet(*facet)
    if is_degenerate_facet(spec, region, facet):
        raise DegenerateFacet(f"{facet} of {Region(*region)} has zero area")
    if not on_facet(spec, region, facet, y_sph, tol=tol):
        raise PointNotOnFacet(f"{y_sph} not on {facet} of {Region(*region)}")
    _, theta, phi = np.asarray(y_sph, float)
    return _facet_normals(facet, theta, phi)


def facet_points(spec: PartitionSpec, region, facet: Facet, n: int = 8, corners: bool = True) -> np.ndarray:
    """Spherical sample points on a facet: an ``n x n`` interior grid plus the 4 corners."""
    b = spec.bounds(region)
    ax = _AXIS_BIT[facet.axis]
    free = [a for a in range(3) if a != ax]
    # cell-centred grid avoids duplicating the corners
    t = (np.arange(n) + 0.5) / n
    g1 = b[free[0], 0] + t * (b[free[0], 1] - b[free[0], 0])
    g2 = b[free[1], 0] + t * (b[free[1], 1] - b[free[1], 0])
    pts = []
    fixed = b[ax, 1 if facet.sign > 0 else 0]
    u, v = np.meshgrid(g1, g2, indexing="ij")
    grid = np.empty((u.size, 3))
    grid[:, ax] = fixed
    grid[:, free[0]] = u.ravel()
    grid[:, free[1]] = v.ravel()
    pts.append(grid)
    if corners:
        c = np.empty((4, 3))
        c[:, ax] = fixed
        c[:, free[0]] = [b[free[0], 0], b[free[0], 0], b[free[0], 1], b[free[0], 1]]
        c[:, free[1]] = [b[free[1], 0], b[free[1], 1], b[free[1], 0], b[free[1], 1]]
        pts.append(c)
    return np.concatenate(pts)


def facet_normals(spec: PartitionSpec, region, facet: Facet, n: int = 8, corners: bool = True) -> np.ndarray:
    """Outer normals at :func:`facet_points`; empty for degenerate facets."""
    if is_degenerate_facet(spec, region, facet):
        return np.empty((0, 3))
    pts = facet_points(spec, region, facet, n=n, corners=corners)
    return _facet_normals(facet, pts[:, 1], pts[:, 2])


def adjacent_region(spec: PartitionSpec, region, facet: Facet) -> Region | None:
    """Region across ``facet``; ``None`` at the horizon, the origin or the z axis."""
    i, j, k = spec.check_region(region)
    a, b, c = spec.shape
    axis, sign = Facet(*facet)
    if axis == "r":
        i2 = i + sign
        return Region(i2, j, k) if 1 <= i2 <= a else None
    if axis == "phi":
        k2 = k + sign
        return Region(i, j, k2) if 1 <= k2 <= c else None
    j2 = (j - 1 + sign) % b + 1
    return Region(i, j2, k)


def shared_facet(spec: PartitionSpec, a, b) -> Facet | None:
    """Facet of ``a`` through which ``b`` is adjacent, if any."""
    for f in FACETS:
        if adjacent_region(spec, a, f) == Region(*b):
            return f
    return None


def _unwrap_theta(theta, lo, hi):
    # bring theta into [lo, hi] modulo 2 pi when it is within a wrap of the sector
    if theta < lo - 1e-12 and theta + TWO_PI <= hi + 1e-9:
        return theta + TWO_PI
    if theta > hi + 1e-12 and theta - TWO_PI >= lo - 1e-9:
        return theta - TWO_PI
    return theta


def locate(spec: PartitionSpec, s) -> Region:
    """Region index whose closed box contains spherical point ``s`` (ties go to the lower index)."""
    r, theta, phi = s
    a, b, c = spec.shape
    i = min(max(int(np.floor(r / spec.dr)) + 1, 1), a)
    j = min(max(int(np.floor(theta / spec.dtheta)) + 1, 1), b)
    k = min(max(int(np.floor(phi / spec.dphi)) + 1, 1), c)
    return Region(i, j, k)


def classify(spec: PartitionSpec, p, tol: float = DEFAULT_TOL):
    """Partition cell of Cartesian point ``p``.

    Returns a :class:`RegionCell`, :class:`DetectionCell`, ``EDGE`` or
    ``SURFACE``.  "Near" a curve means within ``tol * radius_m`` metres of it.
    """
    p = np.asarray(p, dtype=float)
    R = spec.radius_m
    eps = tol * R
    r, theta, phi = to_spherical(p)
    if r > R * (1 + tol):
        raise PointOutsideHorizon(f"|p| = {r:.6g} exceeds horizon {R:g}")
    rho = r * np.sin(phi)  # distance to the z axis
    if r <= eps or rho <= eps:
        return EDGE

    hits = []
    # radial curves r_2..r_{n_r}
    c = int(np.rint(r / spec.dr))
    if c >= 1 and abs(r - spec.r_curves[c]) <= eps:
        hits.append(("r", c))
    # theta half-planes, distance rho * |dtheta| (small-angle is fine at tol scale)
    c = int(np.rint(theta / spec.dtheta)) % (spec.n_theta - 1)
    d = abs(theta - spec.theta_curves[c])
    d = min(d, TWO_PI - d)
    if rho * np.sin(min(d, np.pi / 2)) <= eps:
        hits.append(("theta", c))
    # interior phi cones
    c = int(np.rint(phi / spec.dphi))
    if 1 <= c <= spec.n_phi - 2 and r * abs(np.sin(phi - spec.phi_curves[c])) <= eps:
        hits.append(("phi", c))

    if len(hits) >= 2:
        return EDGE
    if not hits:
        return RegionCell(locate(spec, (r, theta, phi)))
    axis, c = hits[0]
    if axis == "r" and c == spec.n_r - 1:
        return SURFACE
    i, j, k = locate(spec, (r, theta, phi))
    if axis == "r":
        return DetectionCell.of((c, j, k), (c + 1, j, k))
    if axis == "theta":
        below = c if c >= 1 else spec.n_theta - 1
        above = c + 1
        return DetectionCell.of((i, below, k), (i, above, k))
    return DetectionCell.of((i, j, c), (i, j, c + 1))


def classify_region(spec: PartitionSpec, p, tol: float = DEFAULT_TOL) -> Region | None:
    """Region index if ``p`` is strictly inside a region, else ``None``."""
    cell = classify(spec, p, tol=tol)
    return cell.region if cell.kind == "region" else None
