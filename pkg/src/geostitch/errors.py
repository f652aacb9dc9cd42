"""Exception hierarchy shared by all geostitch modules."""


class GeostitchError(Exception):
    """Base class for all errors raised by this package."""


class NonSPDMetric(GeostitchError):
    """Metric tensor is not symmetric positive definite at a queried point."""


class OutOfChart(GeostitchError):
    """Chart point lies outside the scenario's declared chart bounds."""


class DegenerateBoundary(GeostitchError):
    """Boundary level-set gradient vanishes where a normal is required."""


class InvalidCollar(GeostitchError):
    """Requested collar radius exceeds the scenario's estimated collar radius."""


class NoCollar(GeostitchError):
    """No tested collar radius passed the normal-map injectivity check."""


class IntegrationBlowup(GeostitchError):
    """Geodesic integration left the chart bounds."""


class StepTooLarge(GeostitchError):
    """Per-step unit-speed drift exceeded the allowed budget."""


class AmbiguousScattering(GeostitchError):
    """Two genuinely distinct exit candidates passed the interval test."""

    def __init__(self, vector_id, candidates):
        self.vector_id = vector_id
        self.candidates = list(candidates)
        super().__init__(
            f"vector {vector_id}: ambiguous scattering candidates {self.candidates}"
        )


class EmptyRelation(GeostitchError):
    """Boundary relation has no entries; nothing to assemble."""


class InconsistentCorrespondence(GeostitchError):
    """Correspondence table references parameters outside the declared intervals."""


class Disconnected(GeostitchError):
    """No path between the queried quotient-graph nodes."""

    def __init__(self, node_a, node_b, component_a, component_b):
        self.node_a = node_a
        self.node_b = node_b
        self.component_a = component_a
        self.component_b = component_b
        super().__init__(
            f"nodes {node_a} (component {component_a}) and {node_b} "
            f"(component {component_b}) are not connected"
        )


class NoMark(GeostitchError):
    """No marked parameter within tolerance of the queried position."""


class OutsideManifold(GeostitchError):
    """Queried chart point is not inside the manifold."""


class ConfigError(GeostitchError):
    """Malformed or unknown keys in a scenario configuration document."""
