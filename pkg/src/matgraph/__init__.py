"""Material recommendation for CAD assemblies via graph representation learning."""

__version__ = "0.1.0"

OTHER_LABEL = "OTHER"
