import math

import numpy as np
import pytest

from hybridformation.abstraction import CA, Actuation, Detection
from hybridformation.exceptions import EdgeGraze, RegionMismatch, SkippedRegion
from hybridformation.partition import PartitionSpec, Region, classify, to_cartesian, vertices_of
from hybridformation.runtime import (
    ActuatorState,
    ControllerCache,
    DetectorState,
    EventLog,
    FollowerRuntime,
    LogEntry,
    VertexField,
    actuate,
    alarm_source,
    check_step,
    detector_step,
    replay,
    rk4_step,
    run_closed_loop,
)
from hybridformation.scenarios import build_closed_loop
from hybridformation.synthesis import ControlLabel as L


@pytest.fixture(scope="module")
def spec():
    return PartitionSpec(50.0, 15, 20, 10)


@pytest.fixture(scope="module")
def cl(spec):
    return build_closed_loop(spec)


@pytest.fixture(scope="module")
def cache(spec):
    return ControllerCache(spec, 5.0)


def test_rk4_exact_for_linear_ode():
    x = rk4_step(lambda y, tol: (-y[0], 0.0, 1.0), (1.0, 0.0, 0.0), 0.1)
    assert x[0] == pytest.approx(math.exp(-0.1), abs=1e-7)
    assert x[2] == pytest.approx(0.1)


def test_detector_straight_line_crossing_time(spec):
    region = Region(5, 3, 5)
    r_hi = spec.bounds(region)[0, 1]
    b = spec.bounds(region)
    e = to_cartesian(np.array([1.0, b[1].mean(), b[2].mean()]))
    x0 = (r_hi - 0.05) * e
    x1 = (r_hi + 0.07) * e
    st = DetectorState(region)
    c = detector_step(st, spec, x0, x1, 2.0, 2.01)
    # straight radial line at 12 m/s reaches r_hi after 0.05 / 12 s
    assert c.t == pytest.approx(2.0 + 0.05 / 12.0, abs=1e-6)
    assert c.event == Detection(region, Region(6, 3, 5))
    assert st.confirmed_region == Region(6, 3, 5)
    assert detector_step(st, spec, x1, x1, 2.01, 2.02) is None


def test_detector_rejects_jumps(spec):
    region = Region(5, 3, 5)
    b = spec.bounds(region)
    far = to_cartesian(np.array([b[0, 1] + 1.5 * spec.dr, b[1].mean(), b[2].mean()]))
    inside = to_cartesian(b.mean(axis=1))
    with pytest.raises(SkippedRegion):
        detector_step(DetectorState(region), spec, inside, far, 0.0, 0.01, path=lambda s: far)


def test_detector_edge(spec):
    region = Region(5, 3, 5)
    b = spec.bounds(region)
    corner = to_cartesian(np.array([b[0, 1], b[1, 1], b[2].mean()]))
    inside = to_cartesian(b.mean(axis=1))
    with pytest.raises(EdgeGraze):
        detector_step(DetectorState(region), spec, inside, corner * 1.01, 0.0, 0.01,
                      path=lambda s: tuple(corner * (1 + s)))


def test_actuator(spec, cache):
    region = Region(7, 9, 4)
    c = cache.get(region, L.R_MINUS)
    st = ActuatorState(L.R_MINUS, region, c, spec)
    for m, v in enumerate(to_cartesian(vertices_of(spec, region))):
        assert np.allclose(actuate(st, v), c.u[m])
    rng = np.random.default_rng(0)
    b = spec.bounds(region)
    for s in b[:, 0] + rng.uniform(size=(200, 3)) * (b[:, 1] - b[:, 0]):
        assert np.linalg.norm(actuate(st, to_cartesian(s))) <= 0.8 * 5.0 + 1e-9
    with pytest.raises(RegionMismatch):
        actuate(st, to_cartesian(spec.centroid((9, 9, 4))))


def test_constant_controls_give_constant_velocity(spec, cache):
    c = cache.get(Region(7, 9, 4), L.C0)
    f = VertexField(spec.bounds((7, 9, 4)), np.tile([1.0, 2.0, 3.0], (8, 1)))
    assert np.allclose(f(tuple(to_cartesian(spec.centroid((7, 9, 4))))), [1, 2, 3])
    assert len(c.u) == 8


def test_cache_is_reused(spec):
    cache = ControllerCache(spec, 5.0)
    a = cache.get((3, 3, 3), L.C0)
    assert cache.get(Region(3, 3, 3), "C_0") is a and len(cache) == 1


def test_event_log_is_monotone():
    log = EventLog()
    log.append(LogEntry(1.0, CA, None, None))
    with pytest.raises(ValueError):
        log.append(LogEntry(0.5, CA, None, None))


def test_alternation_property():
    a, d = Actuation(L.R_MINUS), Detection(Region(3, 1, 1), Region(2, 1, 1))
    ok, bad = EventLog(), EventLog()
    for n, e in enumerate([a, d, a, d, Actuation(L.C0)]):
        ok.append(LogEntry(float(n), e, None, None))
    for n, e in enumerate([a, a]):
        bad.append(LogEntry(float(n), e, None, None))
    assert ok.is_alternating() and not bad.is_alternating()


def test_reaching_run(spec, cl, cache):
    x0 = (-17.0, -18.0, -8.0)
    traj, log, out = run_closed_loop(spec, cl, x0, 30.0, cache)
    assert out.reached and out.held
    assert 0 < out.time_to_formation < 30
    assert log.is_alternating()
    assert replay(cl, log, classify(spec, x0).region)
    acts = [str(e) for e in log.events() if isinstance(e, Actuation)]
    assert set(acts[:-1]) == {"C_r-"} and acts[-1] == "C_0"
    # the follower never speeds up past kappa * v_max
    _, _, u = traj.arrays()
    assert np.max(np.linalg.norm(u, axis=1)) <= 4.0 + 1e-9


def test_crossing_times_match_trajectory(spec, cl, cache):
    rt = FollowerRuntime(spec, cl, (-17.0, -18.0, -8.0), cache)
    rt.run_until(10.0)
    for e in rt.log:
        if isinstance(e.event, Detection):
            assert e.t > 0


def test_alarm_turns_theta_first(spec, cl, cache):
    fired = []

    def once(rt):
        if not fired:
            fired.append(rt.t)
            return True
        return False

    _, log, out = run_closed_loop(spec, cl, (-17.0, -18.0, -8.0), 30.0, cache, external=alarm_source(once))
    assert log.labels()[:2] == ["ca", "C_theta+"]
    assert out.reached
    assert replay(cl, log, classify(spec, (-17.0, -18.0, -8.0)).region)


def test_perturbation_resyncs(spec, cl, cache):
    rt = FollowerRuntime(spec, cl, (-17.0, -18.0, -8.0), cache, perturbation=(1.0, (0.0, 0.0, 9.0)))
    rt.run_until(40.0)
    out = rt.finish()
    assert out.resyncs == 1 and out.reached
    assert any(e.note == "resync" for e in rt.log)
    assert replay(cl, rt.log, classify(spec, (-17.0, -18.0, -8.0)).region)


def test_step_guard(spec):
    check_step(spec, 5.0, 0.01)
    with pytest.raises(ValueError):
        check_step(spec, 5.0, 1.0)


def test_random_starts_reach(spec, cl, cache):
    rng = np.random.default_rng(11)
    n, fails = 0, []
    while n < 40:
        x0 = rng.uniform(-45, 45, size=3)
        if np.linalg.norm(x0) >= 48 or classify(spec, x0).kind != "region":
            continue
        n += 1
        _, log, out = run_closed_loop(spec, cl, x0, 40.0, cache)
        if not (out.reached and log.is_alternating()):
            fails.append(tuple(x0))
    assert not fails
