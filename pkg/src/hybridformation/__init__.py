"""Hybrid supervisory leader-follower formation control.

The follower's position relative to its desired slot is partitioned into
spherical regions.  Multi-affine vertex controllers either keep the state in a
region or push it through one facet, which yields a finite plant automaton.
Two modular supervisors (formation, collision) close the loop.
"""
from .abstraction import (
    CA,
    Actuation,
    Detection,
    DetectionLabel,
    External,
    FiniteTS,
    RegionLabel,
    build_abstract_ts,
    check_bisimulation_finite,
    continuous_transition,
    monte_carlo_soundness,
)
from .des import (
    CouplingRelation,
    FiniteAutomaton,
    build_collision_supervisor,
    build_formation_supervisor,
    build_plant,
    closed_loop,
    is_controllable,
    language_equal,
    parallel_compose,
    refine_plant,
)
from .estimator import HybridFormationController
from .exceptions import *  # noqa: F401,F403
from .multiaffine import interpolate, lambda_coeffs
from .partition import Facet, PartitionSpec, Region, classify, to_cartesian, to_spherical
from .runtime import ControllerCache, FollowerRuntime, actuate, detector_step, run_closed_loop
from .scenarios import (
    CircleLeader,
    FollowerConfig,
    ScenarioConfig,
    StaticLeader,
    collision_monitor,
    relative_state,
    run_scenario,
)
from .synthesis import ControlLabel, SpeedBound, VertexControls, synthesize, verify

__version__ = "0.1.0"
