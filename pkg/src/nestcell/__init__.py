"""Nested multipass optical delay cell toolkit.

Exact ray tracing of the nested two-mirror cell, delay and
retrieval-efficiency figures of merit, a parametric polarization-channel
model, and simulated quantum state/process tomography.
"""

__version__ = "0.1.0"

from .geometry import CellConfig, Ray, SpotRecord, TracePath, trace_cell  # noqa
from .calibration import calibrate_injection, InjectionSolution  # noqa
from .config import RunConfig, default_config, load_config, write_config  # noqa
