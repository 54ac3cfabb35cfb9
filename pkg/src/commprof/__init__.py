"""Communication-region profiling over a deterministic message-passing
simulator, with synthetic scaling kernels and analysis tooling."""

from .kernels import KERNELS, Grid3D, KernelParams, amg_vcycle, halo3d, lag_step, sweep
from .model import (
    ExperimentSpec,
    MessageEvent,
    RegionCommStats,
    RegionPath,
    RegionSummary,
    RunMeta,
    RunProfile,
    load_profile,
    validate_profile,
    write_profile,
)
from .profiler import InstrumentationError, RegionTracker, finalize, summarize
from .runner import load_experiment, run_experiment
from .sim import (
    Communicator,
    DeadlockError,
    CollectiveMismatchError,
    Request,
    RunOutcome,
    SimError,
    TruncationError,
    spawn,
)

__version__ = "0.1.0"

__all__ = [
    "KERNELS",
    "Grid3D",
    "KernelParams",
    "amg_vcycle",
    "halo3d",
    "lag_step",
    "sweep",
    "ExperimentSpec",
    "MessageEvent",
    "RegionCommStats",
    "RegionPath",
    "RegionSummary",
    "RunMeta",
    "RunProfile",
    "load_profile",
    "validate_profile",
    "write_profile",
    "InstrumentationError",
    "RegionTracker",
    "finalize",
    "summarize",
    "load_experiment",
    "run_experiment",
    "Communicator",
    "DeadlockError",
    "CollectiveMismatchError",
    "Request",
    "RunOutcome",
    "SimError",
    "TruncationError",
    "spawn",
    "__version__",
]
