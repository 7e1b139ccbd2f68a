import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridformation.exceptions import InvalidRegion, PointOutsideHorizon
from hybridformation.partition import (
    EDGE,
    FACETS,
    DetectionCell,
    Facet,
    PartitionSpec,
    Region,
    adjacent_region,
    classify,
    e_phi,
    facet_points,
    is_degenerate_facet,
    outer_normal,
    shared_facet,
    to_cartesian,
    to_spherical,
    vertex_bits,
    vertices_of,
)


def test_curves_are_uniform(spec91):
    assert np.allclose(spec91.r_curves, 50 * np.arange(15) / 14)
    assert np.allclose(spec91.theta_curves, 2 * np.pi * np.arange(20) / 19)
    assert np.allclose(spec91.phi_curves, np.pi * np.arange(10) / 9)
    assert spec91.n_regions == 14 * 19 * 9


@pytest.mark.parametrize("bad", [dict(radius_m=0), dict(radius_m=-1), dict(n_r=1), dict(n_phi=2.5)])
def test_spec_rejects_bad_parameters(bad):
    args = dict(radius_m=50.0, n_r=3, n_theta=3, n_phi=3) | bad
    with pytest.raises(ValueError):
        PartitionSpec(**args)


def test_origin_is_edge(spec91):
    assert classify(spec91, (0, 0, 0)) is EDGE


def test_reaching_offset_is_in_shell_eight(spec91):
    cell = classify(spec91, (-17, -18, -8))
    assert cell.kind == "region"
    assert cell.region.i == 8
    assert math.floor(math.sqrt(677) / (50 / 14)) + 1 == 8


def test_outside_horizon_raises(spec91):
    with pytest.raises(PointOutsideHorizon):
        classify(spec91, (60, 0, 0))


def test_surface(spec91):
    assert classify(spec91, to_cartesian((50.0, 0.3, 1.0))).kind == "surface"


def test_centroids_classify_to_their_region(spec91):
    rng = np.random.default_rng(3)
    regions = list(spec91.regions())
    for n in rng.choice(len(regions), 200, replace=False):
        r = regions[n]
        assert classify(spec91, to_cartesian(spec91.centroid(r))).region == r


def test_vertices(spec91):
    v = vertices_of(spec91, (8, 3, 4))
    assert v[1][0] == pytest.approx(8 * 50 / 14)
    b = spec91.bounds((8, 3, 4))
    assert np.allclose(v[7], b[:, 1])
    corner = to_cartesian(vertices_of(spec91, (1, 1, 1)))
    for m in (2, 4, 6):
        assert np.allclose(corner[m], corner[0])


def test_invalid_region(spec91):
    with pytest.raises(InvalidRegion):
        spec91.bounds((15, 1, 1))


def test_outer_normals(spec91):
    region = (5, 4, 3)
    b = spec91.bounds(region)
    y = np.array([b[0, 1], 0.5 * b[1].sum(), 0.5 * b[2].sum()])
    th, ph = y[1], y[2]
    assert np.allclose(outer_normal(spec91, region, Facet("r", +1), y),
                       [math.sin(ph) * math.cos(th), math.sin(ph) * math.sin(th), math.cos(ph)])
    y = np.array([0.5 * b[0].sum(), b[1, 0], 0.5 * b[2].sum()])
    assert np.allclose(outer_normal(spec91, region, Facet("theta", -1), y), [math.sin(y[1]), -math.cos(y[1]), 0])
    rng = np.random.default_rng(0)
    for _ in range(100):
        y = np.array([rng.uniform(*b[0]), rng.uniform(*b[1]), b[2, 1]])
        n = outer_normal(spec91, region, Facet("phi", +1), y)
        assert float(n @ e_phi(y[1], y[2])) == pytest.approx(1.0)


def test_degenerate_facets(spec91):
    assert is_degenerate_facet(spec91, (1, 2, 3), Facet("r", -1))
    assert is_degenerate_facet(spec91, (4, 2, 1), Facet("phi", -1))
    assert is_degenerate_facet(spec91, (4, 2, 9), Facet("phi", +1))
    assert not is_degenerate_facet(spec91, (4, 2, 5), Facet("phi", +1))


def test_adjacency(spec91):
    assert adjacent_region(spec91, (8, 13, 5), Facet("r", -1)) == Region(7, 13, 5)
    assert adjacent_region(spec91, (3, 19, 5), Facet("theta", +1)) == Region(3, 1, 5)
    assert adjacent_region(spec91, (3, 1, 5), Facet("theta", -1)) == Region(3, 19, 5)
    assert adjacent_region(spec91, (1, 4, 5), Facet("r", -1)) is None
    assert adjacent_region(spec91, (14, 4, 5), Facet("r", +1)) is None


def test_adjacency_symmetry(spec91):
    for region in list(spec91.regions())[::37]:
        for f in FACETS:
            nb = adjacent_region(spec91, region, f)
            if nb is not None:
                assert adjacent_region(spec91, nb, f.opposite) == region
                assert shared_facet(spec91, region, nb) == f


def test_vertex_facet_consistency():
    for f in FACETS:
        verts = f.vertices
        assert len(verts) == 4
        ax = ("r", "theta", "phi").index(f.axis)
        for m in range(8):
            assert (m in verts) == (vertex_bits(m)[ax] == (1 if f.sign > 0 else 0))


def test_detection_and_edge_points(spec91):
    region = (6, 7, 4)
    for f in FACETS:
        nb = adjacent_region(spec91, region, f)
        pts = facet_points(spec91, region, f, n=4, corners=True)
        for y in pts[:-4]:
            assert classify(spec91, to_cartesian(y)) == DetectionCell.of(region, nb)
        for y in pts[-4:]:
            assert classify(spec91, to_cartesian(y)) is EDGE


def test_random_points_are_almost_always_interior(spec91):
    rng = np.random.default_rng(11)
    pts = rng.uniform(-1, 1, size=(100_000, 3))
    pts = pts[np.linalg.norm(pts, axis=1) < 1] * 50
    kinds = [classify(spec91, p).kind for p in pts]
    assert sum(k != "region" for k in kinds) / len(kinds) < 0.01


@settings(max_examples=200, deadline=None)
@given(st.floats(0.1, 49.0), st.floats(0.0, 2 * np.pi, exclude_max=True), st.floats(0.01, np.pi - 0.01))
def test_spherical_round_trip(r, th, ph):
    s = to_spherical(to_cartesian((r, th, ph)))
    assert s[0] == pytest.approx(r)
    assert np.allclose(to_cartesian(s), to_cartesian((r, th, ph)), atol=1e-9)
