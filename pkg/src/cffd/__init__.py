"""Cell-free full-duplex massive MIMO link-level simulator and optimizers."""

__version__ = "0.1.0"

from .channel import ChannelRealization, draw_channels  # noqa: E402
from .errors import (CffdError, ConfigParseError, ConstraintViolationError,  # noqa: E402
                     InfeasibleProblemError, InsufficientPilotsError,
                     InvalidConfigError, InvalidGeometryError)
from .estimation import (ChannelEstimates, Gammas, PilotBook, assign_pilots,  # noqa: E402
                         large_scale_gammas, mmse_estimate, pilot_observations)
from .link import PowerAllocation, SeReport, se_report  # noqa: E402
from .scenario import Scenario, ScenarioConfig, build_scenario  # noqa: E402

__all__ = [
    "ChannelRealization", "draw_channels", "CffdError", "ConfigParseError",
    "ConstraintViolationError", "InfeasibleProblemError", "InsufficientPilotsError",
    "InvalidConfigError", "InvalidGeometryError", "ChannelEstimates", "Gammas",
    "PilotBook", "assign_pilots", "large_scale_gammas", "mmse_estimate",
    "pilot_observations", "PowerAllocation", "SeReport", "se_report", "Scenario",
    "ScenarioConfig", "build_scenario",
]
