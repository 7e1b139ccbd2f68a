"""Multi-affine interpolation over a spherical region from its eight vertex values.

Weights are products of per-axis affine coordinates,

    w_m = l_r^{m_r} (1 - l_r)^{1 - m_r} * l_t^{m_t} (1 - l_t)^{1 - m_t} * l_p^{m_p} (1 - l_p)^{1 - m_p}

with ``l_r = (r - r_i) / (r_{i+1} - r_i)`` and likewise for theta and phi.  The
interpolation runs in spherical coordinates; vertex values (velocities) are
Cartesian.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import PointNotInRegion, PointNotOnFacet
from .partition import TWO_PI, Facet, PartitionSpec, to_spherical

# per-vertex bit masks, shape (8, 3): columns m_r, m_theta, m_phi
BITS = np.array([[m & 1, (m >> 1) & 1, (m >> 2) & 1] for m in range(8)], dtype=float)

# fraction of a cell edge a point may sit outside before it is rejected
CLAMP_TOL = 1e-6


@dataclass(frozen=True)
class LambdaCoeffs:
    weights: np.ndarray  # (8,)
    lam_r: float
    lam_theta: float
    lam_phi: float


def axis_fractions(bounds, x_sph, clamp_tol=CLAMP_TOL):
    """Per-axis affine coordinates for a batch of points.

    ``bounds`` has shape ``(N, 3, 2)`` (or ``(3, 2)``) and ``x_sph`` shape
    ``(N, 3)``.  Returns ``(lam, ok)`` where ``lam`` is clamped to ``[0, 1]`` and
    ``ok`` flags points within ``clamp_tol`` of the box.
    """
    b = np.asarray(bounds, float)
    x = np.asarray(x_sph, float)
    if b.ndim == 2:
        b = np.broadcast_to(b, x.shape[:-1] + (3, 2))
    lo, hi = b[..., 0], b[..., 1]
    width = hi - lo
    t = x - lo
    tw = np.mod(t[..., 1], TWO_PI)
    tw = np.where(tw > 0.5 * (width[..., 1] + TWO_PI), tw - TWO_PI, tw)
    t = t.copy()
    t[..., 1] = tw
    lam = t / width
    # theta is arbitrary on the z axis, theta and phi at the origin
    r, phi = x[..., 0], x[..., 2]
    rho = r * np.abs(np.sin(phi))
    scale = np.maximum(hi[..., 0], 1.0)
    on_axis = rho <= 1e-12 * scale
    at_origin = r <= 1e-12 * scale
    lam[..., 1] = np.where(on_axis, np.clip(lam[..., 1], 0.0, 1.0), lam[..., 1])
    lam[..., 2] = np.where(at_origin, np.clip(lam[..., 2], 0.0, 1.0), lam[..., 2])
    ok = np.all((lam >= -clamp_tol) & (lam <= 1.0 + clamp_tol), axis=-1)
    return np.clip(lam, 0.0, 1.0), ok


def weights_from_fractions(lam) -> np.ndarray:
    """Eight vertex weights from per-axis fractions ``(..., 3)`` -> ``(..., 8)``."""
    lam = np.asarray(lam, float)[..., None, :]
    f = np.where(BITS == 1, lam, 1.0 - lam)
    return f[..., 0] * f[..., 1] * f[..., 2]


def lambda_coeffs(spec: PartitionSpec, region, x_sph, clamp_tol=CLAMP_TOL) -> LambdaCoeffs:
    lam, ok = axis_fractions(spec.bounds(region), np.asarray(x_sph, float)[None], clamp_tol)
    if not ok[0]:
        raise PointNotInRegion(f"{tuple(x_sph)} is outside {tuple(region)}")
    w = weights_from_fractions(lam[0])
    return LambdaCoeffs(w, float(lam[0, 0]), float(lam[0, 1]), float(lam[0, 2]))


def interpolate(spec: PartitionSpec, region, field, x_sph, clamp_tol=CLAMP_TOL) -> np.ndarray:
    """Value of the multi-affine field with vertex values ``field`` (8, d) at ``x_sph``."""
    w = lambda_coeffs(spec, region, x_sph, clamp_tol).weights
    return w @ np.asarray(field, float)


def interpolate_batch(bounds, fields, x_cart, clamp_tol=CLAMP_TOL):
    """Vectorised interpolation at Cartesian points.

    ``bounds`` (N, 3, 2), ``fields`` (N, 8, 3), ``x_cart`` (N, 3).  Returns the
    values and the in-box flags.
    """
    lam, ok = axis_fractions(bounds, to_spherical(x_cart), clamp_tol)
    w = weights_from_fractions(lam)
    return np.einsum("nm,nmd->nd", w, fields), ok


def facet_weights(spec: PartitionSpec, region, facet: Facet, y_sph, tol=1e-9) -> np.ndarray:
    """Weights over ``facet.vertices`` for a point on the facet."""
    facet = Facet(*facet)
    coeffs = lambda_coeffs(spec, region, y_sph)
    lam = np.array([coeffs.lam_r, coeffs.lam_theta, coeffs.lam_phi])
    ax = ("r", "theta", "phi").index(facet.axis)
    target = 1.0 if facet.sign > 0 else 0.0
    if abs(lam[ax] - target) > tol:
        raise PointNotOnFacet(f"{tuple(y_sph)} is not on {facet} of {tuple(region)}")
    lam[ax] = target
    return weights_from_fractions(lam)[list(facet.vertices)]
