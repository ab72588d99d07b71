"""Decoy-state BB84 key rates under finite-range intensity correlations."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("decoycorr")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

from .bounds import G_bound, G_derivative, g_bound, gamma, linearize, tau, td_halfwidth
from .errors import ConfigError, DomainError, EstimationError
from .estimation import (
    DecoyObservations,
    SinglePhotonBounds,
    build_error_lp,
    build_yield_lp,
    estimate,
    observations_from_channel,
)
from .keyrate import (
    KeyRateResult,
    SecurityParams,
    asymptotic_rate,
    binary_entropy,
    finite_rate,
    serfling_deviation,
)
from .lp import LinearProgram, LpSolution, check, solve
from .model import (
    ChannelParams,
    PhotonInterval,
    ProtocolConfig,
    ReferenceStatistics,
    expected_error,
    expected_gain,
    genuine_outcome_probs,
    intensity_interval,
    poisson_interval,
    reference_statistics,
)
from .optimizer import SweepRow, SweepSpec, optimize_intensities, sweep

__all__ = [name for name in dir() if not name.startswith("_")]
