"""Protocol and channel configuration, photon-number intervals and the channel model."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bounds import REFERENCE_MARGIN
from .errors import ConfigError, DomainError

SETTINGS = ("mu", "nu", "omega")
CONSTRAINT_MODES = ("cs_linearized", "trace_distance")
CORRELATION_MODELS = ("model_independent", "deterministic")

_PROB_TOL = 1e-12


@dataclass(frozen=True)
class ProtocolConfig:
    """Decoy-state BB84 settings together with the correlation parameters.

    The default probabilities take the ``p_mu -> 1``, ``q_Z -> 1`` limit,
    which maximizes the asymptotic rate under the typical channel model.
    """

    mu: float = 0.5
    nu: float = 0.1
    omega: float = 1e-4
    p_mu: float = 1.0
    p_nu: float = 0.0
    p_omega: float = 0.0
    q_z: float = 1.0
    q_x: float = 0.0
    delta_max: float = 0.0
    xi: int = 1
    n_cut: int = 10
    constraint_mode: str = "cs_linearized"
    correlation_model: str = "model_independent"

    def __post_init__(self):
        if not (self.mu > self.nu > self.omega >= 0.0):
            raise ConfigError(
                f"intensities must satisfy mu > nu > omega >= 0 (got {self.mu}, {self.nu}, {self.omega})"
            )
        if not (0.0 <= self.delta_max < 1.0):
            raise ConfigError(f"delta_max must lie in [0, 1) (got {self.delta_max})")
        if self.mu * (1.0 + self.delta_max) >= 1.0:
            raise ConfigError(
                f"mu*(1+delta_max) = {self.mu * (1 + self.delta_max):.6g} must be < 1"
            )
        probs = (self.p_mu, self.p_nu, self.p_omega)
        if any(p < 0 or p > 1 for p in probs) or abs(sum(probs) - 1.0) > _PROB_TOL:
            raise ConfigError(f"setting probabilities must be in [0, 1] and sum to 1 (got {probs})")
        if (
            not (0 <= self.q_z <= 1 and 0 <= self.q_x <= 1)
            or abs(self.q_z + self.q_x - 1.0) > _PROB_TOL
        ):
            raise ConfigError(f"basis probabilities must sum to 1 (got {self.q_z}, {self.q_x})")
        if int(self.xi) != self.xi or self.xi < 0:
            raise ConfigError(f"xi must be a non-negative integer (got {self.xi})")
        if int(self.n_cut) != self.n_cut or self.n_cut < 1:
            raise ConfigError(f"n_cut must be a positive integer (got {self.n_cut})")
        if self.constraint_mode not in CONSTRAINT_MODES:
            raise ConfigError(f"constraint_mode must be one of {CONSTRAINT_MODES}")
        if self.correlation_model not in CORRELATION_MODELS:
            raise ConfigError(f"correlation_model must be one of {CORRELATION_MODELS}")
        object.__setattr__(self, "xi", int(self.xi))
        object.__setattr__(self, "n_cut", int(self.n_cut))

    @property
    def intensities(self):
        return {"mu": self.mu, "nu": self.nu, "omega": self.omega}

    @property
    def probabilities(self):
        return {"mu": self.p_mu, "nu": self.p_nu, "omega": self.p_omega}

    def settings(self):
        """``(intensity, probability)`` pairs in setting order."""
        return [(self.intensities[s], self.probabilities[s]) for s in SETTINGS]

    def replace(self, **changes) -> "ProtocolConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ChannelParams:
    """Typical fibre channel with threshold detectors, dark counts and misalignment."""

    eta_det: float = 0.65
    alpha_att: float = 0.2  # dB/km
    distance: float = 0.0  # km
    p_dark: float = 7.2e-8
    misalignment: float = 0.08  # rad
    f_ec: float = 1.16
    e_tol: Optional[float] = None

    def __post_init__(self):
        if not (0.0 <= self.eta_det <= 1.0):
            raise ConfigError(f"eta_det must lie in [0, 1] (got {self.eta_det})")
        if self.alpha_att < 0 or self.distance < 0:
            raise ConfigError("attenuation and distance must be non-negative")
        if not (0.0 <= self.p_dark <= 1.0):
            raise ConfigError(f"p_dark must lie in [0, 1] (got {self.p_dark})")
        if self.f_ec < 1.0:
            raise ConfigError(f"f_ec must be >= 1 (got {self.f_ec})")
        if self.e_tol is not None and not (0.0 <= self.e_tol <= 1.0):
            raise ConfigError(f"e_tol must lie in [0, 1] (got {self.e_tol})")

    @property
    def eta(self) -> float:
        """Overall transmittance including the detector efficiency."""
        if math.isinf(self.distance):
            return 0.0
        return self.eta_det * 10.0 ** (-self.alpha_att * self.distance / 10.0)

    def replace(self, **changes) -> "ChannelParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class PhotonInterval:
    low: float
    high: float


def intensity_interval(a: float, delta_max: float):
    """Range ``[a(1-delta), a(1+delta)]`` of the emitted intensity for setting ``a``."""
    return a * (1.0 - delta_max), a * (1.0 + delta_max)


def _poisson(x, n):
    if x == 0.0:
        return 1.0 if n == 0 else 0.0
    return math.exp(-x + n * math.log(x) - math.lgamma(n + 1))


def poisson_interval(a: float, n: int, delta_max: float) -> PhotonInterval:
    """Record-independent bounds on the probability of emitting ``n`` photons."""
    lo, hi = intensity_interval(a, delta_max)
    if hi >= 1.0:
        raise DomainError(f"upper intensity {hi!r} >= 1; interval bounds need a+ < 1")
    if n == 0:
        return PhotonInterval(math.exp(-hi), math.exp(-lo))
    return PhotonInterval(_poisson(lo, n), _poisson(hi, n))


def expected_gain(a: float, ch: ChannelParams) -> float:
    """Click probability per round for setting ``a`` (normalized by basis/setting probabilities)."""
    eta = ch.eta
    return -math.expm1(2.0 * math.log1p(-ch.p_dark) - eta * a) if ch.p_dark < 1 else 1.0


def expected_error(a: float, ch: ChannelParams) -> float:
    """Error-click probability per round for setting ``a``; double clicks are assigned at random."""
    eta, pd, da = ch.eta, ch.p_dark, ch.misalignment
    # h = (e^{-eta a cos^2} - e^{-eta a sin^2}) / 2, written to keep precision when eta a is tiny
    x_cos = eta * a * math.cos(da) ** 2
    x_sin = eta * a * math.sin(da) ** 2
    h = (math.expm1(-x_cos) - math.expm1(-x_sin)) / 2.0
    genuine = 0.5 * (-math.expm1(-eta * a)) + h  # 1/2 + h - e^{-eta a}/2
    value = pd * pd / 2.0 + pd * (1.0 - pd) * (1.0 + h) + (1.0 - pd) ** 2 * genuine
    return min(max(value, 0.0), 1.0)


def genuine_outcome_probs(n: int, eta: float, misalignment: float):
    """Probabilities of (no click, correct only, error only, both) for an ``n``-photon pulse.

    Each photon arrives with probability ``eta`` and is flipped with
    probability ``sin^2(misalignment)``; dark counts are not included.
    """
    if n < 0 or int(n) != n:
        raise DomainError(f"photon number must be a non-negative integer (got {n!r})")
    if not (0.0 <= eta <= 1.0):
        raise DomainError(f"eta={eta!r} outside [0, 1]")
    p00 = (1.0 - eta) ** n
    p10 = (eta * math.cos(misalignment) ** 2 + 1.0 - eta) ** n - p00
    p01 = (eta * math.sin(misalignment) ** 2 + 1.0 - eta) ** n - p00
    p11 = 1.0 - p00 - p01 - p10
    return p00, p10, p01, max(p11, 0.0)


def error_probability(n: int, ch: ChannelParams) -> float:
    """Error-click probability of an ``n``-photon pulse including dark counts."""
    p00, p10, p01, p11 = genuine_outcome_probs(n, ch.eta, ch.misalignment)
    pd = ch.p_dark
    err_a = p01 + 0.5 * p11  # no dark count
    err_b = 0.5 * (p01 + p11)  # dark count in the correct detector only
    err_c = p00 + p01 + 0.5 * (p10 + p11)  # dark count in the error detector only
    err_d = 0.5
    return (1 - pd) ** 2 * err_a + pd * (1 - pd) * (err_b + err_c) + pd * pd * err_d


def yield_probability(n: int, ch: ChannelParams) -> float:
    """Click probability of an ``n``-photon pulse including dark counts."""
    p00 = (1.0 - ch.eta) ** n
    return 1.0 - (1.0 - ch.p_dark) ** 2 * p00


@dataclass(frozen=True)
class ReferenceStatistics:
    """Reference yields and error probabilities used as tangent points.

    Arrays have shape ``(R, n_cut + 1, 3)``: ``R`` reference points per
    ``(n, setting)`` pair, settings ordered as :data:`SETTINGS`. The same
    reference serves both bit values, as required for the error constraints.
    """

    yields: np.ndarray
    errors: np.ndarray

    def __post_init__(self):
        y = np.array(self.yields, dtype=float)
        h = np.array(self.errors, dtype=float)
        if y.ndim == 2:
            y = y[None]
        if h.ndim == 2:
            h = h[None]
        if y.shape != h.shape or y.ndim != 3 or y.shape[2] != len(SETTINGS):
            raise ValueError("reference arrays must have shape (R, n_cut + 1, 3)")
        for name, arr in (("yield", y), ("error", h)):
            bad = (arr < REFERENCE_MARGIN) | (arr > 1.0 - REFERENCE_MARGIN)
            if bad.any():
                r, n, a = np.argwhere(bad)[0]
                raise DomainError(
                    f"reference {name} for n={n}, setting={SETTINGS[a]} is {arr[r, n, a]!r}, "
                    f"outside [{REFERENCE_MARGIN}, 1 - {REFERENCE_MARGIN}]"
                )
        y.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "yields", y)
        object.__setattr__(self, "errors", h)

    @property
    def n_cut(self) -> int:
        return self.yields.shape[1] - 1

    @classmethod
    def stack(cls, *refs: "ReferenceStatistics") -> "ReferenceStatistics":
        """Combine several reference sets so that every tangent is imposed."""
        return cls(
            np.concatenate([r.yields for r in refs]), np.concatenate([r.errors for r in refs])
        )


def reference_statistics(cfg: ProtocolConfig, ch: ChannelParams) -> ReferenceStatistics:
    """References matching the typical channel model (independent of the setting)."""
    rows_y = [yield_probability(n, ch) for n in range(cfg.n_cut + 1)]
    rows_h = [error_probability(n, ch) for n in range(cfg.n_cut + 1)]
    yields = np.repeat(np.array(rows_y)[:, None], len(SETTINGS), axis=1)
    errors = np.repeat(np.array(rows_h)[:, None], len(SETTINGS), axis=1)
    return ReferenceStatistics(yields, errors)
