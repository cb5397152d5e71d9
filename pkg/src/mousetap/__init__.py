"""Mouse-sensor acoustic side channel toolkit: simulation, telemetry,
reconstruction, and feasibility analysis."""

__version__ = "0.1.0"
