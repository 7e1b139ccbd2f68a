import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridformation.abstraction import available_labels
from hybridformation.exceptions import EmptyEligibleSet, Infeasible
from hybridformation.partition import Facet, PartitionSpec, facet_normals, is_degenerate_facet
from hybridformation.synthesis import (
    ControlLabel,
    SpeedBound,
    VertexControls,
    direction,
    eligible_set,
    feasibility_table,
    hbar,
    range_angles,
    require_box,
    synthesize,
    verify,
)


def test_hbar():
    assert hbar(0.0) == 1 and hbar(np.pi) == 1
    assert hbar(1.5 * np.pi) == -1
    assert hbar(2 * np.pi + 0.1) == 1
    assert hbar(-0.1) == -1


@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 20), st.floats(-20, 20))
def test_range_angles_preserve_direction(theta, phi):
    t, p = range_angles(theta, phi)
    assert 0 <= t < 2 * np.pi and 0 <= p <= np.pi
    assert np.allclose(direction(t, p), direction(theta, phi), atol=1e-9)


def test_speed_bound():
    with pytest.raises(ValueError):
        SpeedBound(-1.0)
    with pytest.raises(ValueError):
        SpeedBound(float("nan"))
    assert SpeedBound(2.0).contains([[0, 0, 2.0]])
    assert not SpeedBound(2.0).contains([[0, 0, 2.1]])


def test_label_facets():
    assert ControlLabel.C0.facet is None
    assert ControlLabel.R_MINUS.facet == Facet("r", -1)
    assert ControlLabel.for_facet(Facet("theta", +1)) is ControlLabel.THETA_PLUS
    assert str(ControlLabel.PHI_MINUS) == "C_phi-"


def test_vertex_controls_shape():
    with pytest.raises(ValueError):
        VertexControls((2, 2, 2), "C_0", np.zeros((7, 3)))
    with pytest.raises(ValueError):
        VertexControls((2, 2, 2), "C_0", np.full((8, 3), np.nan))


def _check(spec, region, label, v_max=5.0, kappa=0.8, mode="derived"):
    c = synthesize(spec, region, label, SpeedBound(v_max), mode=mode, kappa=kappa)
    assert np.allclose(np.linalg.norm(c.u, axis=1), kappa * v_max)
    res = verify(spec, region, c)
    assert res.passed, (region, label, res)
    return c, res


def test_invariant_certificate_on_facets(spec91):
    region = (1, 7, 4)
    c, res = _check(spec91, region, ControlLabel.C0)
    # independent check on a denser facet grid
    from hybridformation.partition import FACETS

    for f in FACETS:
        if is_degenerate_facet(spec91, region, f):
            continue
        n = facet_normals(spec91, region, f, n=25)
        assert np.max(n @ c.u[list(f.vertices)].T) < 0


def test_every_label_on_generic_region(spec91):
    region = (8, 5, 4)
    for label in available_labels(spec91, region):
        c, res = _check(spec91, region, label)
        if label.facet is not None:
            assert res.exit_margin > 0


def test_exit_actually_pushes_through_facet(spec91):
    region = (6, 3, 5)
    c, _ = _check(spec91, region, ControlLabel.R_MINUS)
    n = facet_normals(spec91, region, Facet("r", -1), n=30)
    # every interpolated exit-facet velocity points outward
    from hybridformation.multiaffine import facet_weights
    from hybridformation.partition import facet_points

    pts = facet_points(spec91, region, Facet("r", -1), 30)
    vel = np.array([facet_weights(spec91, region, Facet("r", -1), p) @ c.u[list(Facet("r", -1).vertices)]
                    for p in pts])
    assert np.all(np.einsum("ij,ij->i", vel, n) > 0)


def test_degenerate_exit_is_infeasible(spec91):
    with pytest.raises(Infeasible) as err:
        synthesize(spec91, (1, 3, 3), ControlLabel.R_MINUS, SpeedBound(5.0))
    assert "zero area" in str(err.value.diagnostics)
    with pytest.raises(Infeasible):
        synthesize(spec91, (4, 3, 1), ControlLabel.PHI_MINUS, SpeedBound(5.0))


def test_zero_speed_is_infeasible(spec91):
    with pytest.raises(Infeasible) as err:
        synthesize(spec91, (4, 3, 3), ControlLabel.C0, SpeedBound(0.0))
    assert set(err.value.diagnostics) == set(range(8))


def test_bad_kappa(spec91):
    with pytest.raises(ValueError):
        synthesize(spec91, (4, 3, 3), ControlLabel.C0, SpeedBound(5.0), kappa=1.5)


def test_paper_mode_on_generic_region(spec91):
    for label in (ControlLabel.C0, ControlLabel.R_MINUS, ControlLabel.THETA_PLUS):
        _check(spec91, (5, 4, 4), label, mode="paper")


def test_wide_sectors_make_r_minus_infeasible():
    spec = PartitionSpec(100.0, 20, 5, 5)
    with pytest.raises(Infeasible):
        synthesize(spec, (7, 2, 3), ControlLabel.R_MINUS, SpeedBound(5.0))
    with pytest.raises(EmptyEligibleSet):
        for m in range(8):
            require_box(spec, (7, 2, 3), ControlLabel.R_MINUS, m)
    # six sectors are narrow enough
    _check(PartitionSpec(100.0, 20, 6, 5), (7, 2, 3), ControlLabel.R_MINUS)


def test_eligible_set_contains_representative(spec91):
    for m in range(8):
        box = eligible_set(spec91, (3, 9, 6), ControlLabel.PHI_PLUS, m)
        d = box.representative()
        assert d is not None and box.contains(d) and box.margin(d) > 0


def test_feasibility_table_columns(spec91):
    # every shell and cone, four azimuth columns
    regions = [r for r in spec91.regions() if r.j in (1, 7, 13, 19)]
    rows = list(feasibility_table(spec91, SpeedBound(5.0), regions, labels=[ControlLabel.C0, ControlLabel.R_MINUS,
                                                                     ControlLabel.THETA_PLUS]))
    bad = [(r, lab, str(res)) for r, lab, c, res in rows
           if not (lab is ControlLabel.R_MINUS and r.i == 1) and (c is None or not res.passed)]
    assert not bad
    assert sum(c is None for _, _, c, _ in rows) == 4 * spec91.shape[2]


@pytest.mark.parametrize("region,label", [((8, 8, 9), ControlLabel.R_MINUS), ((5, 3, 1), ControlLabel.C0),
                                          ((1, 4, 4), ControlLabel.C0), ((1, 4, 1), ControlLabel.R_PLUS)])
def test_axis_and_origin_vertices_respect_every_facet(spec91, region, label):
    from hybridformation.partition import pinch_facets

    c, _ = _check(spec91, region, label)
    pinched = [m for m in range(8) if pinch_facets(spec91, region, m)]
    assert pinched
    for m in pinched:
        for f in pinch_facets(spec91, region, m):
            if f != label.facet:
                assert np.max(facet_normals(spec91, region, f, n=10) @ c.u[m]) < 0


def test_no_pinch_away_from_axis(spec91):
    from hybridformation.partition import pinch_facets

    assert all(not pinch_facets(spec91, (5, 5, 5), m) for m in range(8))
