import numpy as np
import pytest

from hybridformation.abstraction import (
    CA,
    Actuation,
    Detection,
    DetectionLabel,
    FiniteTS,
    RegionLabel,
    available_labels,
    build_abstract_ts,
    ca_enabled,
    check_bisimulation_finite,
    continuous_transition,
    monte_carlo_soundness,
    sample_interior,
    simulate_batch,
)
from hybridformation.des import build_plant
from hybridformation.exceptions import CrossedWrongFacet, Infeasible
from hybridformation.partition import PartitionSpec, Region, classify, to_cartesian
from hybridformation.synthesis import ControlLabel, SpeedBound, VertexControls, synthesize

L = ControlLabel


def test_labels_and_strings():
    assert str(RegionLabel(Region(1, 2, 3))) == "R[1,2,3]"
    assert str(Detection(Region(2, 1, 1), Region(1, 1, 1))) == "dhat[2,1,1->1,1,1]"
    assert str(DetectionLabel(Region(2, 1, 1), Region(1, 1, 1))) == "d[2,1,1->1,1,1]"
    assert str(Actuation(L.R_MINUS)) == "C_r-"
    assert str(CA) == "ca"


def test_available_labels_boundary_rules(spec333):
    assert set(available_labels(spec333, (1, 1, 1))) == {L.C0, L.R_PLUS, L.THETA_PLUS, L.THETA_MINUS, L.PHI_PLUS}
    top = available_labels(spec333, (2, 2, 2))
    assert L.R_PLUS not in top and L.PHI_PLUS not in top and L.PHI_MINUS in top
    assert ca_enabled((2, 1, 1)) and not ca_enabled((1, 1, 1))


def test_abstract_ts_matches_plant(spec333):
    ts = build_abstract_ts(spec333)
    G = build_plant(spec333)
    res = check_bisimulation_finite(ts, G)
    assert res.holds and res.counterexample is None
    assert ts.states == set(G.states)


def test_bisimulation_detects_mutation(spec333):
    ts = build_abstract_ts(spec333)
    drop = next(t for t in sorted(ts.transitions, key=str) if t[1] == CA)
    mutant = FiniteTS(ts.states, ts.initial, ts.events, ts.transitions - {drop})
    res = check_bisimulation_finite(ts, mutant)
    assert not res.holds
    (p, q), ev, _ = res.counterexample
    assert ev == CA


def test_missing_controller_raises(spec333):
    feas = {r: set(available_labels(spec333, r)) for r in spec333.regions()}
    feas[Region(2, 2, 2)].discard(L.THETA_MINUS)
    with pytest.raises(Infeasible):
        build_abstract_ts(spec333, feas)


def test_fts_validates():
    with pytest.raises(ValueError):
        FiniteTS({1}, {2}, set(), set())


def test_straight_line_batch_crossing_time():
    spec = PartitionSpec(50.0, 15, 20, 10)
    region = Region(5, 3, 5)
    b = spec.bounds(region)
    u = np.tile([0.0, 0.0, -1.0], (8, 1))
    x0 = np.array([15.0 * np.sin(b[2].mean()) * np.cos(b[1].mean()),
                   15.0 * np.sin(b[2].mean()) * np.sin(b[1].mean()),
                   15.0 * np.cos(b[2].mean())])
    out = simulate_batch(spec, b[None], u[None], x0[None], 100.0, h=0.01)
    assert out.exited[0]
    # analytic: first time |x0 - t e_z| leaves [r_lo, r_hi] or z/r leaves the cone
    ts = np.linspace(0, 30, 3_000_001)
    pts = x0 - ts[:, None] * np.array([0, 0, 1.0])
    r = np.linalg.norm(pts, axis=1)
    phi = np.arccos(pts[:, 2] / r)
    inside = (r >= b[0, 0]) & (r <= b[0, 1]) & (phi >= b[2, 0]) & (phi <= b[2, 1])
    t_exact = ts[np.argmin(inside)]
    assert abs(out.t[0] - t_exact) <= 2e-5


def test_continuous_transition_outcomes(spec91):
    rng = np.random.default_rng(3)
    region = Region(6, 4, 5)
    c = synthesize(spec91, region, L.R_MINUS, SpeedBound(5.0))
    for x0 in sample_interior(spec91, region, 10, rng):
        tr = continuous_transition(spec91, region, L.R_MINUS, x0, c)
        assert tr.kind == "detection" and tr.target == DetectionLabel(region, Region(5, 4, 5))
        assert classify(spec91, tr.x).kind in ("detection", "region")
    c0 = synthesize(spec91, region, L.C0, SpeedBound(5.0))
    tr = continuous_transition(spec91, region, L.C0, to_cartesian(spec91.centroid(region)), c0, t_max=5.0)
    assert tr.kind == "invariant" and tr.t == pytest.approx(5.0)


def test_continuous_transition_rejects_outside(spec91):
    c = synthesize(spec91, (6, 4, 5), L.C0, SpeedBound(5.0))
    with pytest.raises(ValueError):
        continuous_transition(spec91, (6, 4, 5), L.C0, to_cartesian(spec91.centroid((7, 4, 5))), c)


def test_wrong_controller_is_reported(spec91):
    region = Region(6, 4, 5)
    c = synthesize(spec91, region, L.R_PLUS, SpeedBound(5.0))
    lie = VertexControls(region, L.R_MINUS, c.u)
    with pytest.raises(CrossedWrongFacet):
        continuous_transition(spec91, region, L.R_MINUS, to_cartesian(spec91.centroid(region)), lie)


def test_monte_carlo_small_batch(spec91):
    controls = {}
    for region in [Region(3, 3, 3), Region(9, 12, 6)]:
        for lab in available_labels(spec91, region):
            controls[(region, lab)] = synthesize(spec91, region, lab, SpeedBound(5.0))
    rep = monte_carlo_soundness(spec91, controls, trials=20, seed=1)
    assert rep.passed and rep.total_failures == 0
    assert len(rep.pairs) == len(controls)
    assert next(rep.lines()) == "verdict: PASS"


def test_monte_carlo_vacuous_and_missing(spec91):
    c = synthesize(spec91, (3, 3, 3), L.C0, SpeedBound(5.0))
    rep = monte_carlo_soundness(spec91, {((3, 3, 3), L.C0): c}, trials=0)
    assert rep.passed and rep.warnings
    rep = monte_carlo_soundness(spec91, {((3, 3, 3), L.C0): c, ((3, 3, 3), L.R_MINUS): None}, trials=5)
    assert not rep.passed and rep.total_failures == 5
    assert any("Infeasible=5" in line for line in rep.lines())


def test_monte_carlo_catches_mislabelled_controller(spec91):
    region = Region(6, 4, 5)
    c = synthesize(spec91, region, L.THETA_PLUS, SpeedBound(5.0))
    rep = monte_carlo_soundness(spec91, {(region, L.THETA_MINUS): VertexControls(region, L.THETA_MINUS, c.u)}, 10)
    assert rep.total_failures == 10
