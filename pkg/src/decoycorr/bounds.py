"""Closed-form bounds relating the statistics of two intensity settings.

Two conditional probabilities ``y_a`` and ``y_b`` generated by states whose
squared overlap is at least ``z`` satisfy ``G_-(y_a, z) <= y_b <= G_+(y_a, z)``.
This module evaluates ``G_+-``, their derivatives, the tangent lines used to
linearize them, and the overlap lower bounds for a source with finite-range
intensity correlations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError

#: Reference values closer than this to 0 or 1 are rejected (the slope diverges).
REFERENCE_MARGIN = 1e-12

PLUS = "plus"
MINUS = "minus"


def _check_yz(y, z):
    if not (0.0 <= y <= 1.0):
        raise DomainError(f"y={y!r} outside [0, 1]")
    if not (0.0 < z <= 1.0):
        raise DomainError(f"z={z!r} outside (0, 1]")


def _check_sign(sign):
    if sign not in (PLUS, MINUS):
        raise DomainError(f"sign must be 'plus' or 'minus', got {sign!r}")


def g_bound(y: float, z: float, sign: str) -> float:
    """Smooth branch ``y + (1-z)(1-2y) +- 2 sqrt(z(1-z)y(1-y))``."""
    _check_yz(y, z)
    _check_sign(sign)
    root = 2.0 * math.sqrt(z * (1.0 - z) * y * (1.0 - y))
    base = y + (1.0 - z) * (1.0 - 2.0 * y)
    return base + root if sign == PLUS else base - root


def G_bound(y: float, z: float, sign: str) -> float:
    """Piecewise bound clipped to ``[0, 1]``.

    ``G_-`` is zero for ``y < 1 - z`` and ``G_+`` is one for ``y > z``. At
    the breakpoints the smooth branch is used; both branches agree there.
    """
    value = g_bound(y, z, sign)
    if sign == MINUS:
        if y < 1.0 - z:
            return 0.0
        return min(max(value, 0.0), 1.0)
    if y > z:
        return 1.0
    return min(max(value, 0.0), 1.0)


def g_derivative(y: float, z: float, sign: str) -> float:
    _check_sign(sign)
    if not (0.0 < y < 1.0):
        raise DomainError(f"derivative undefined at y={y!r}; need 0 < y < 1")
    if not (0.0 < z <= 1.0):
        raise DomainError(f"z={z!r} outside (0, 1]")
    root = (1.0 - 2.0 * y) * math.sqrt(z * (1.0 - z) / (y * (1.0 - y)))
    return -1.0 + 2.0 * z + root if sign == PLUS else -1.0 + 2.0 * z - root


def G_derivative(y: float, z: float, sign: str) -> float:
    """Derivative of :func:`G_bound` with respect to ``y``; zero on the flat branches."""
    slope = g_derivative(y, z, sign)
    if sign == MINUS:
        return 0.0 if y < 1.0 - z else slope
    return 0.0 if y > z else slope


def td_halfwidth(overlap: float) -> float:
    """Trace-distance bound ``|y_a - y_b| <= sqrt(1 - overlap)``."""
    if not (0.0 < overlap <= 1.0):
        raise DomainError(f"overlap={overlap!r} outside (0, 1]")
    return math.sqrt(1.0 - overlap)


@dataclass(frozen=True)
class LinearizedConstraint:
    """Tangent line ``intercept + slope * y_a`` bounding ``y_b`` from one side."""

    intercept: float
    slope: float
    sense: str  # "lower" or "upper"

    def __call__(self, y):
        return self.intercept + self.slope * y


def linearize(reference: float, overlap: float):
    """Tangent lines of ``G_-`` and ``G_+`` at ``reference``.

    ``G_-`` is convex and ``G_+`` concave in ``y``, so the returned lines are
    valid lower and upper bounds for every ``y`` in ``[0, 1]``.

    Returns
    -------
    (LinearizedConstraint, LinearizedConstraint)
        The lower and upper constraints.
    """
    if not (REFERENCE_MARGIN <= reference <= 1.0 - REFERENCE_MARGIN):
        raise DomainError(
            f"reference {reference!r} outside [{REFERENCE_MARGIN}, 1 - {REFERENCE_MARGIN}]"
        )
    lo_slope = G_derivative(reference, overlap, MINUS)
    hi_slope = G_derivative(reference, overlap, PLUS)
    # A smooth-branch slope of the wrong sign only arises from rounding next to
    # a breakpoint, where the flat branch is the exact tangent.
    if lo_slope <= 0.0:
        lower = LinearizedConstraint(0.0, 0.0, "lower")
    else:
        lower = LinearizedConstraint(
            G_bound(reference, overlap, MINUS) - lo_slope * reference, lo_slope, "lower"
        )
    if hi_slope <= 0.0:
        upper = LinearizedConstraint(1.0, 0.0, "upper")
    else:
        upper = LinearizedConstraint(
            G_bound(reference, overlap, PLUS) - hi_slope * reference, hi_slope, "upper"
        )
    return lower, upper


def linearize_arrays(reference, overlap):
    """Vectorized :func:`linearize`.

    Returns
    -------
    tuple of ndarray
        ``(lower_intercept, lower_slope, upper_intercept, upper_slope)``,
        broadcast over ``reference`` and ``overlap``.
    """
    y, z = np.broadcast_arrays(np.asarray(reference, float), np.asarray(overlap, float))
    if np.any((y < REFERENCE_MARGIN) | (y > 1.0 - REFERENCE_MARGIN)):
        raise DomainError(f"references outside [{REFERENCE_MARGIN}, 1 - {REFERENCE_MARGIN}]")
    if np.any((z <= 0.0) | (z > 1.0)):
        raise DomainError("overlaps outside (0, 1]")
    yy = y * (1.0 - y)
    base = y + (1.0 - z) * (1.0 - 2.0 * y)
    root = 2.0 * np.sqrt(z * (1.0 - z) * yy)
    droot = (1.0 - 2.0 * y) * np.sqrt(z * (1.0 - z) / yy)
    s_lo = -1.0 + 2.0 * z - droot
    s_hi = -1.0 + 2.0 * z + droot
    flat_lo = (y < 1.0 - z) | (s_lo <= 0.0)
    flat_hi = (y > z) | (s_hi <= 0.0)
    g_lo = np.where(flat_lo, 0.0, np.clip(base - root, 0.0, 1.0))
    g_hi = np.where(flat_hi, 1.0, np.clip(base + root, 0.0, 1.0))
    s_lo = np.where(flat_lo, 0.0, s_lo)
    s_hi = np.where(flat_hi, 0.0, s_hi)
    return g_lo - s_lo * y, s_lo, g_hi - s_hi * y, s_hi


# -- overlap lower bounds -----------------------------------------------------


def _check_settings(a, b, n, xi, delta_max, settings):
    if a == b:
        raise DomainError("overlap bound needs two distinct settings")
    if n < 0 or int(n) != n:
        raise DomainError(f"photon number must be a non-negative integer, got {n!r}")
    if xi < 0 or int(xi) != xi:
        raise DomainError(f"correlation range must be a non-negative integer, got {xi!r}")
    if delta_max < 0 or delta_max >= 1:
        raise DomainError(f"delta_max={delta_max!r} outside [0, 1)")
    for c, _ in list(settings) + [(a, None), (b, None)]:
        if c < 0:
            raise DomainError(f"negative intensity {c!r}")
        if c * (1.0 + delta_max) >= 1.0:
            raise DomainError(
                f"intensity {c!r} has upper endpoint {c * (1 + delta_max)!r} >= 1; "
                "e^-x x^n is only monotone on (0, 1)"
            )


def _log_photon_factor(a, b, n, delta_max):
    """Log of the bound on the current-round contribution to the overlap."""
    if n == 0:
        return -2.0 * delta_max * (a + b)
    # (a-/a+)^n is independent of a; the a -> 0 limit is used for vacuum settings.
    log_ratio = math.log1p(-delta_max) - math.log1p(delta_max)
    return 2.0 * delta_max * (a + b) + 2.0 * n * log_ratio


def _log_tau_bracket(delta_max, settings):
    # sum_c p_c (e^{-c-} - e^{-c+}), evaluated without cancellation
    leak = sum(
        -p * math.exp(-c * (1.0 - delta_max)) * math.expm1(-2.0 * delta_max * c)
        for c, p in settings
    )
    return math.log1p(-leak)


def _log_gamma_bracket(delta_max, settings):
    # sqrt(c+ c-) - (c+ + c-)/2 = -c delta^2 / (1 + sqrt(1 - delta^2))
    shrink = 1.0 + math.sqrt(1.0 - delta_max * delta_max)
    total = sum(p * math.expm1(-c * delta_max * delta_max / shrink) for c, p in settings)
    return math.log1p(total)


def tau(
    a: float,
    b: float,
    n: int,
    xi: int,
    delta_max: float,
    settings: Iterable[Sequence[float]],
) -> float:
    """Model-independent lower bound on the squared overlap of the ``n``-photon states.

    Parameters
    ----------
    a, b : float
        The two (distinct) intensity settings.
    n : int
        Photon number.
    xi : int
        Correlation range; ``xi = 0`` means no inter-pulse correlations.
    delta_max : float
        Maximum relative deviation of the emitted intensity from its setting.
    settings : iterable of (intensity, probability)
        All intensity settings with their selection probabilities; they enter
        through the factor accounting for the ``xi`` following pulses.
    """
    settings = [(float(c), float(p)) for c, p in settings]
    _check_settings(a, b, n, xi, delta_max, settings)
    if delta_max == 0.0:
        return 1.0
    log_value = _log_photon_factor(a, b, n, delta_max)
    log_value += 2 * xi * _log_tau_bracket(delta_max, settings)
    return min(math.exp(log_value), 1.0)


def gamma(
    a: float,
    b: float,
    n: int,
    xi: int,
    delta_max: float,
    settings: Iterable[Sequence[float]],
) -> float:
    """Overlap lower bound when the setting record fixes the intensity deterministically.

    Same arguments as :func:`tau`; only the factor for the following pulses
    differs.
    """
    settings = [(float(c), float(p)) for c, p in settings]
    _check_settings(a, b, n, xi, delta_max, settings)
    if delta_max == 0.0:
        return 1.0
    log_value = _log_photon_factor(a, b, n, delta_max)
    log_value += 2 * xi * _log_gamma_bracket(delta_max, settings)
    return min(math.exp(log_value), 1.0)
