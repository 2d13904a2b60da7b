"""DTLight-style offline-to-online traffic signal control at desk scale."""

from .network import Intersection, Link, Phase, RoadNetwork
from .scenarios import build_scenario
from .sim import SimMetrics, Simulator, average_delay, pressure

__all__ = [
    "Intersection",
    "Link",
    "Phase",
    "RoadNetwork",
    "SimMetrics",
    "Simulator",
    "average_delay",
    "build_scenario",
    "pressure",
]

__version__ = "0.1.0"
