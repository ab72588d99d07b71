"""Asymptotic and finite-size secret key rates.

All logarithms are base 2, so rates are in bits per transmitted pulse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import entr

from .errors import DomainError
from .estimation import DecoyObservations, SinglePhotonBounds
from .model import ChannelParams, ProtocolConfig, expected_error, expected_gain

LOG_BASE = 2
PHASE_ERROR_CAP = 0.5

ASYMPTOTIC = "asymptotic"
FINITE = "finite"

# reason codes attached to zero-rate results
OK = "ok"
NEGATIVE = "negative_rate"
NO_X_SINGLE_PHOTONS = "no_x_single_photons"
PHASE_ERROR_ABOVE_HALF = "phase_error_above_half"


def binary_entropy(x):
    """``-x log2 x - (1-x) log2(1-x)`` with ``0 log 0 = 0``; accepts scalars or arrays."""
    arr = np.asarray(x, dtype=float)
    if np.any((arr < 0.0) | (arr > 1.0)) or np.any(np.isnan(arr)):
        raise DomainError(f"binary entropy argument outside [0, 1]: {x!r}")
    value = (entr(arr) + entr(1.0 - arr)) / math.log(2.0)
    return float(value) if value.ndim == 0 else value


def serfling_deviation(z1: float, x1: float, n_rounds: float, eps_s: float) -> float:
    """Sampling deviation of the phase-error rate from the X-basis estimate.

    ``sqrt((x1 + z1)(z1 + 1/N) log2(1/eps_s) / (2 N z1^2 x1))``.
    """
    if z1 <= 0 or x1 <= 0:
        raise DomainError(f"single-photon rates must be positive (z1={z1!r}, x1={x1!r})")
    if n_rounds < 1:
        raise DomainError(f"round count must be >= 1 (got {n_rounds!r})")
    if not (0.0 < eps_s <= 1.0):
        raise DomainError(f"eps_s={eps_s!r} outside (0, 1]")
    n = float(n_rounds)
    log_term = -math.log2(eps_s)
    return math.sqrt((x1 + z1) * (z1 + 1.0 / n) * log_term / (2.0 * n * z1 * z1 * x1))


@dataclass(frozen=True)
class SecurityParams:
    eps_s: float = 1e-10
    eps_pa: float = 1e-10
    delta: float = 1e-10
    eps_cor: float = 1e-10

    def __post_init__(self):
        for name in ("eps_s", "eps_pa", "delta", "eps_cor"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise DomainError(f"{name}={v!r} outside (0, 1)")

    @property
    def eps_sec(self) -> float:
        return 2.0 * self.eps_s + self.eps_pa + self.delta

    def privacy_cost(self, n_rounds: float) -> float:
        """``(1/N) log2(1/(eps_cor eps_pa^2 delta))``."""
        bits = -(math.log2(self.eps_cor) + 2.0 * math.log2(self.eps_pa) + math.log2(self.delta))
        return bits / float(n_rounds)


@dataclass(frozen=True)
class KeyRateResult:
    """Key rate with its component breakdown.

    ``rate`` is ``max(raw_rate, 0)``. ``phase_error_ratio`` is the
    unclamped single-photon phase-error estimate (before any finite-size
    correction); ``serfling`` and ``privacy_cost`` are zero in asymptotic mode.
    """

    rate: float
    raw_rate: float
    phase_error_ratio: float
    key_term: float
    ec_term: float
    mode: str
    reason: str = OK
    serfling: float = 0.0
    privacy_cost: float = 0.0
    n_rounds: Optional[float] = None
    log_base: int = field(default=LOG_BASE)


def tolerated_error(obs: DecoyObservations, cfg: ProtocolConfig, ch: ChannelParams) -> float:
    """Threshold bit error rate: explicit value, else the observed Z-basis signal error rate."""
    if ch.e_tol is not None:
        return ch.e_tol
    if obs.z_error is not None and obs.z_gain["mu"] > 0:
        return min(obs.z_error["mu"] / obs.z_gain["mu"], 1.0)
    gain = expected_gain(cfg.mu, ch)
    return expected_error(cfg.mu, ch) / gain if gain > 0 else 0.5


def _ec_term(obs, cfg, ch):
    z_mu = cfg.q_z**2 * cfg.p_mu * obs.z_gain["mu"]
    return ch.f_ec * z_mu * binary_entropy(tolerated_error(obs, cfg, ch))


def asymptotic_rate(
    bounds: SinglePhotonBounds, obs: DecoyObservations, ch: ChannelParams, cfg: ProtocolConfig
) -> KeyRateResult:
    """``K = Z1 [1 - h(E1/X1)] - f_EC Z_mu h(E_tol)`` with the phase-error ratio capped at 1/2."""
    ratio = bounds.phase_error_ratio
    ec = _ec_term(obs, cfg, ch)
    reason = OK
    if not math.isfinite(ratio):
        reason = NO_X_SINGLE_PHOTONS
    key = bounds.z1 * (1.0 - binary_entropy(min(ratio, PHASE_ERROR_CAP)))
    raw = key - ec
    if reason == OK and raw <= 0:
        reason = NEGATIVE
    return KeyRateResult(
        rate=max(raw, 0.0),
        raw_rate=raw,
        phase_error_ratio=ratio,
        key_term=key,
        ec_term=ec,
        mode=ASYMPTOTIC,
        reason=reason,
    )


def finite_rate(
    bounds: SinglePhotonBounds,
    obs: DecoyObservations,
    ch: ChannelParams,
    cfg: ProtocolConfig,
    n_rounds: float,
    sec: SecurityParams = SecurityParams(),
) -> KeyRateResult:
    """Finite-size rate: Serfling-corrected phase error and the privacy-amplification cost.

    Needs ``X1 > 0`` (i.e. ``q_X > 0``); otherwise a zero rate is returned
    with reason ``no_x_single_photons``.
    """
    if n_rounds < 1:
        raise DomainError(f"round count must be >= 1 (got {n_rounds!r})")
    ratio = bounds.phase_error_ratio
    ec = _ec_term(obs, cfg, ch)
    cost = sec.privacy_cost(n_rounds)
    if bounds.x1 <= 0 or bounds.z1 <= 0 or not math.isfinite(ratio):
        raw = -ec - cost
        return KeyRateResult(
            0.0, raw, ratio, 0.0, ec, FINITE, NO_X_SINGLE_PHOTONS, math.inf, cost, n_rounds
        )
    serf = serfling_deviation(bounds.z1, bounds.x1, n_rounds, sec.eps_s)
    phase = ratio + serf
    key = bounds.z1 * (1.0 - binary_entropy(min(phase, PHASE_ERROR_CAP)))
    raw = key - ec - cost
    if phase > PHASE_ERROR_CAP:
        reason = PHASE_ERROR_ABOVE_HALF
    elif raw <= 0:
        reason = NEGATIVE
    else:
        reason = OK
    return KeyRateResult(max(raw, 0.0), raw, ratio, key, ec, FINITE, reason, serf, cost, n_rounds)
