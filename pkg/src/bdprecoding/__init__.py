"""Block-diagonalization and lattice-reduction-aided precoding for the MU-MIMO downlink."""

from .channel import ChannelSet, CsiErrorModel, SystemConfig, generate_rayleigh
from .errors import PrecodingError
from .harness import ExperimentConfig, load_config, run_experiment, write_csv
from .matkernel import UnimodularTransform, clll_reduce
from .metrics import ExperimentResult, flops_model, flops_reduction
from .precoding import KINDS, PrecodingSolution, build_precoder
from .transceiver import receive, transmit

__version__ = "0.1.0"

__all__ = [
    "ChannelSet", "CsiErrorModel", "SystemConfig", "generate_rayleigh",
    "PrecodingError", "ExperimentConfig", "load_config", "run_experiment",
    "write_csv", "UnimodularTransform", "clll_reduce", "ExperimentResult",
    "flops_model", "flops_reduction", "KINDS", "PrecodingSolution",
    "build_precoder", "receive", "transmit",
]
