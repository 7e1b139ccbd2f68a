"""Exception types raised across the package."""


class HybridFormationError(Exception):
    pass


class PointOutsideHorizon(HybridFormationError, ValueError):
    pass


class InvalidRegion(HybridFormationError, ValueError):
    pass


class DegenerateFacet(HybridFormationError, ValueError):
    pass


class PointNotInRegion(HybridFormationError, ValueError):
    pass


class PointNotOnFacet(HybridFormationError, ValueError):
    pass


class EmptyEligibleSet(HybridFormationError):
    def __init__(self, region, label, vertex, detail=""):
        self.region = region
        self.label = label
        self.vertex = vertex
        super().__init__(
            f"empty eligible set at vertex v{vertex} of {tuple(region)} for {label}"
            + (f": {detail}" if detail else "")
        )


class Infeasible(HybridFormationError):
    """No admissible vertex controls exist for (region, label).

    ``diagnostics`` maps vertex index to a short reason string.
    """

    def __init__(self, region, label, diagnostics=None):
        self.region = region
        self.label = label
        self.diagnostics = dict(diagnostics or {})
        bad = ", ".join(f"v{m}: {why}" for m, why in sorted(self.diagnostics.items()))
        super().__init__(f"{label} infeasible on {tuple(region)}" + (f" ({bad})" if bad else ""))


class CrossedWrongFacet(HybridFormationError):
    pass


class EdgeGraze(HybridFormationError):
    pass


class SkippedRegion(HybridFormationError):
    pass


class RegionMismatch(HybridFormationError, ValueError):
    pass


class StateBlowup(HybridFormationError):
    pass


class NoEnabledAction(HybridFormationError):
    pass


class MultipleEnabledActions(HybridFormationError):
    pass


class HorizonExit(HybridFormationError):
    pass


class ConfigError(HybridFormationError, ValueError):
    pass
