"""Fast session resumption over datagrams: IPC and TCS schemes, a connected-socket
baseline, and a deterministic network simulator to compare them."""

from ._kernels import BACKEND
from .bench import RunMetrics, ScenarioConfig, ScenarioTimeout, run_scenario, sweep
from .endpoint import Variant

__all__ = [
    "BACKEND",
    "RunMetrics",
    "ScenarioConfig",
    "ScenarioTimeout",
    "Variant",
    "run_scenario",
    "sweep",
]
__version__ = "0.1.0"
