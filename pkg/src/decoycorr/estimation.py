"""Decoy-state parameter estimation under intensity correlations.

Variables of each linear program are the average ``n``-photon yields (or
error probabilities) ``y[n, a]`` for ``n = 0..n_cut`` and every setting
``a``. Setting-wise decoy constraints link them to the observed gains, and
pairwise constraints derived from the overlap bounds limit how far the
statistics of two settings can drift apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from scipy.special import gammainc

from . import bounds
from .errors import ConfigError, EstimationError
from .lp import GE, LE, LinearProgram, dump, solve
from .model import (
    SETTINGS,
    ChannelParams,
    ProtocolConfig,
    ReferenceStatistics,
    expected_error,
    expected_gain,
    intensity_interval,
    reference_statistics,
)

_OBS_TOL = 1e-12


@dataclass(frozen=True)
class DecoyObservations:
    """Per-setting observations normalized by ``q_basis^2 * p_a``.

    ``z_error`` (Z-basis error rate, used for the error-correction
    threshold) and ``rounds`` are optional.
    """

    z_gain: Mapping[str, float]
    x_gain: Mapping[str, float]
    x_error: Mapping[str, float]
    z_error: Optional[Mapping[str, float]] = None
    rounds: Optional[int] = None

    def __post_init__(self):
        for name in ("z_gain", "x_gain", "x_error", "z_error"):
            values = getattr(self, name)
            if values is None:
                continue
            values = {s: float(values[s]) for s in SETTINGS}
            for s, v in values.items():
                if not (-_OBS_TOL <= v <= 1.0 + _OBS_TOL):
                    raise ConfigError(f"{name}[{s}] = {v!r} outside [0, 1]")
            object.__setattr__(self, name, values)
        for s in SETTINGS:
            if self.x_error[s] > self.x_gain[s] + _OBS_TOL:
                raise ConfigError(f"x_error[{s}] exceeds x_gain[{s}]")

    def vector(self, name: str) -> np.ndarray:
        values = getattr(self, name)
        return np.array([values[s] for s in SETTINGS])


def observations_from_channel(cfg: ProtocolConfig, ch: ChannelParams) -> DecoyObservations:
    """Expected observations of the typical channel model (no correlations)."""
    gains = {s: expected_gain(a, ch) for s, a in cfg.intensities.items()}
    errors = {s: expected_error(a, ch) for s, a in cfg.intensities.items()}
    return DecoyObservations(gains, dict(gains), errors, dict(errors))


@dataclass(frozen=True)
class SinglePhotonBounds:
    """Single-photon bounds from the three programs and the derived count rates."""

    y1_z: float
    y1_x: float
    h1: float
    z1: float
    x1: float
    e1: float
    low_factor: float  # mu- e^{-mu-}
    high_factor: float  # mu+ e^{-mu+}
    iterations: int = field(default=0, compare=False)

    @property
    def phase_error_ratio(self) -> float:
        """``e1 / x1`` with the ``q_X^2 p_mu`` factors cancelled, so it survives ``q_X -> 0``."""
        denom = self.low_factor * self.y1_x
        if denom <= 0.0:
            return math.inf
        return self.high_factor * self.h1 / denom


def _var(n_cut, a_idx, n):
    return a_idx * (n_cut + 1) + n


def _var_names(n_cut, symbol):
    return tuple(f"{symbol}_{n}_{s}" for s in SETTINGS for n in range(n_cut + 1))


def _overlaps(cfg: ProtocolConfig) -> np.ndarray:
    """Symmetric overlap bounds, shape ``(3, 3, n_cut + 1)``; diagonal unused."""
    fn = bounds.gamma if cfg.correlation_model == "deterministic" else bounds.tau
    settings = cfg.settings()
    k = len(SETTINGS)
    out = np.ones((k, k, cfg.n_cut + 1))
    for i in range(k):
        for j in range(i + 1, k):
            for n in range(cfg.n_cut + 1):
                z = fn(settings[i][0], settings[j][0], n, cfg.xi, cfg.delta_max, settings)
                out[i, j, n] = out[j, i, n] = z
    return out


def _decoy_rows(cfg: ProtocolConfig, observed: np.ndarray, slack: np.ndarray):
    """Two decoy rows per setting: the gain is bracketed by the photon-number intervals.

    ``slack`` widens both rows by a per-setting absolute margin (a
    confidence allowance for sampled observations).
    """
    n_cut = cfg.n_cut
    nvar = len(SETTINGS) * (n_cut + 1)
    rows, senses, rhs, names = [], [], [], []
    ns = np.arange(n_cut + 1)
    log_fact = np.array([math.lgamma(n + 1) for n in ns])
    for a_idx, s in enumerate(SETTINGS):
        c = cfg.intensities[s]
        lo, hi = intensity_interval(c, cfg.delta_max)
        low = np.zeros(n_cut + 1)
        high = np.zeros(n_cut + 1)
        low[0] = math.exp(-hi)
        high[0] = math.exp(-lo)
        if c > 0:
            low[1:] = np.exp(-lo + ns[1:] * math.log(lo) - log_fact[1:])
            high[1:] = np.exp(-hi + ns[1:] * math.log(hi) - log_fact[1:])
        # Poisson tail beyond n_cut at the upper intensity
        tail = float(gammainc(n_cut + 1, hi)) if c > 0 else 0.0
        start = _var(n_cut, a_idx, 0)
        row = np.zeros(nvar)
        row[start : start + n_cut + 1] = low
        rows.append(row)
        senses.append(LE)
        rhs.append(observed[a_idx] + slack[a_idx])
        names.append(f"decoy_low_{s}")
        row = np.zeros(nvar)
        row[start : start + n_cut + 1] = high
        rows.append(row)
        senses.append(GE)
        rhs.append(observed[a_idx] - tail - slack[a_idx])
        names.append(f"decoy_high_{s}")
    return rows, senses, rhs, names


_PAIRS = [(a, b) for a in range(len(SETTINGS)) for b in range(len(SETTINGS)) if a != b]


def _pair_rows(cfg: ProtocolConfig, references: np.ndarray, overlaps: np.ndarray):
    """Pairwise rows for every ordered pair ``(a, b)``, ``a != b``, and every ``n``.

    Each ``(a, b, n)`` triple yields a lower and an upper row of the form
    ``y[n, b] - slope * y[n, a]`` compared with an intercept. Rows are
    ordered by reference set, pair, photon number, then lower/upper.
    """
    n_cut = cfg.n_cut
    k = len(SETTINGS)
    nvar = k * (n_cut + 1)
    ns = np.arange(n_cut + 1)
    a_idx = np.array([p[0] for p in _PAIRS])
    b_idx = np.array([p[1] for p in _PAIRS])
    z = overlaps[a_idx[:, None], b_idx[:, None], ns[None, :]]  # (pairs, n)
    td = cfg.constraint_mode == "trace_distance"
    ref_sets = references[:1] if td else references
    blocks = []
    rhs = []
    names = []
    for r_idx, ref in enumerate(ref_sets):
        if td:
            width = np.sqrt(1.0 - z)
            lo_c, lo_m, hi_c, hi_m = -width, np.ones_like(z), width, np.ones_like(z)
        else:
            y_ref = ref[ns[None, :], a_idx[:, None]]  # reference of setting a
            lo_c, lo_m, hi_c, hi_m = bounds.linearize_arrays(y_ref, z)
        n_tri = len(_PAIRS) * (n_cut + 1)
        rows = np.zeros((n_tri, 2, nvar))
        tri = np.arange(n_tri)
        va = (a_idx[:, None] * (n_cut + 1) + ns[None, :]).ravel()
        vb = (b_idx[:, None] * (n_cut + 1) + ns[None, :]).ravel()
        rows[tri, :, vb] = 1.0
        rows[tri, 0, va] = -lo_m.ravel()
        rows[tri, 1, va] = -hi_m.ravel()
        blocks.append(rows.reshape(2 * n_tri, nvar))
        rhs.append(np.stack([lo_c.ravel(), hi_c.ravel()], axis=1).ravel())
        suffix = "" if len(ref_sets) == 1 else f"_r{r_idx}"
        for a, b in _PAIRS:
            for n in ns:
                tag = f"{SETTINGS[a]}_{SETTINGS[b]}_{n}{suffix}"
                names += [f"pair_low_{tag}", f"pair_high_{tag}"]
    matrix = np.concatenate(blocks)
    senses = [GE, LE] * (matrix.shape[0] // 2)
    return matrix, senses, np.concatenate(rhs), names


def _slack_vector(slack):
    if slack is None:
        return np.zeros(len(SETTINGS))
    if isinstance(slack, Mapping):
        slack = [slack[s] for s in SETTINGS]
    vec = np.asarray(slack, dtype=float)
    if vec.shape != (len(SETTINGS),) or np.any(vec < 0) or not np.all(np.isfinite(vec)):
        raise ConfigError("slack must hold one non-negative margin per setting")
    return vec


def _build(cfg, observed, references, maximize, symbol, overlaps=None, slack=None):
    n_cut = cfg.n_cut
    if references.shape[1] < n_cut + 1:
        raise ConfigError(
            f"references cover n <= {references.shape[1] - 1}, need n_cut = {n_cut}"
        )
    references = references[:, : n_cut + 1]
    if overlaps is None:
        overlaps = _overlaps(cfg)
    nvar = len(SETTINGS) * (n_cut + 1)
    rows, senses, rhs, names = _decoy_rows(cfg, observed, _slack_vector(slack))
    p_rows, p_senses, p_rhs, p_names = _pair_rows(cfg, references, overlaps)
    objective = np.zeros(nvar)
    objective[_var(n_cut, 0, 1)] = 1.0
    return LinearProgram(
        objective,
        np.vstack([np.array(rows), p_rows]),
        senses + p_senses,
        np.concatenate([rhs, p_rhs]),
        np.zeros(nvar),
        np.ones(nvar),
        maximize=maximize,
        var_names=_var_names(n_cut, symbol),
        row_names=tuple(names + p_names),
    )


def build_yield_lp(
    obs: DecoyObservations,
    basis: str,
    cfg: ProtocolConfig,
    refs: ReferenceStatistics,
    overlaps: Optional[np.ndarray] = None,
    slack=None,
) -> LinearProgram:
    """LP whose minimum is a lower bound on the single-photon yield of the signal setting.

    Parameters
    ----------
    overlaps : ndarray, optional
        Precomputed overlap bounds, shape ``(3, 3, n_cut + 1)``.
    slack : sequence or mapping, optional
        Per-setting margin added around each observed gain (default none).
    """
    if basis not in ("Z", "X"):
        raise ConfigError(f"basis must be 'Z' or 'X' (got {basis!r})")
    observed = obs.vector("z_gain" if basis == "Z" else "x_gain")
    symbol = "y" if basis == "Z" else "yx"
    return _build(cfg, observed, refs.yields, False, symbol, overlaps, slack)


def build_error_lp(
    obs: DecoyObservations,
    cfg: ProtocolConfig,
    refs: ReferenceStatistics,
    overlaps: Optional[np.ndarray] = None,
    slack=None,
) -> LinearProgram:
    """LP whose maximum is an upper bound on the single-photon error probability."""
    return _build(cfg, obs.vector("x_error"), refs.errors, True, "h", overlaps, slack)


def _solve(lp, name, debug_dir):
    if debug_dir is not None:
        path = Path(debug_dir)
        path.mkdir(parents=True, exist_ok=True)
        (path / f"{name}.lp.txt").write_text(dump(lp))
    sol = solve(lp)
    if not sol.optimal:
        raise EstimationError(
            f"{name} program is {sol.status}: observations are inconsistent with the "
            "correlation model (or an attack is present)",
            sol.status,
            name,
        )
    return sol


def estimate(
    obs: DecoyObservations,
    cfg: ProtocolConfig,
    ch: ChannelParams,
    refs: Optional[ReferenceStatistics] = None,
    debug_dir=None,
    slack: Optional[Mapping[str, object]] = None,
) -> SinglePhotonBounds:
    """Solve the Z-yield, X-yield and error programs and convert their optima to count rates.

    Parameters
    ----------
    refs : ReferenceStatistics, optional
        Tangent points; defaults to the channel-model references.
    debug_dir : path, optional
        Directory receiving a text dump of every program.
    slack : mapping, optional
        Per-setting margins keyed by ``z_gain``, ``x_gain`` and ``x_error``,
        widening the decoy rows of the matching program. Used when the
        observations are sampled rather than exact.

    Raises
    ------
    EstimationError
        If any program is infeasible.
    """
    if refs is None:
        refs = reference_statistics(cfg, ch)
    slack = dict(slack or {})
    unknown = set(slack) - {"z_gain", "x_gain", "x_error"}
    if unknown:
        raise ConfigError(f"unknown slack fields {sorted(unknown)}")
    overlaps = _overlaps(cfg)
    sz, sx, se = (slack.get(k) for k in ("z_gain", "x_gain", "x_error"))
    lp_z = build_yield_lp(obs, "Z", cfg, refs, overlaps, sz)
    sol_z = _solve(lp_z, "yield_z", debug_dir)
    same = np.array_equal(obs.vector("z_gain"), obs.vector("x_gain")) and np.array_equal(
        _slack_vector(sz), _slack_vector(sx)
    )
    if same and debug_dir is None:
        # identical programs; the X-basis solve would repeat the Z-basis one
        sol_x = sol_z
    else:
        sol_x = _solve(build_yield_lp(obs, "X", cfg, refs, overlaps, sx), "yield_x", debug_dir)
    sol_e = _solve(build_error_lp(obs, cfg, refs, overlaps, se), "error_x", debug_dir)

    lo, hi = intensity_interval(cfg.mu, cfg.delta_max)
    low_factor = lo * math.exp(-lo)
    high_factor = hi * math.exp(-hi)
    y1_z = min(max(sol_z.objective, 0.0), 1.0)
    y1_x = min(max(sol_x.objective, 0.0), 1.0)
    h1 = min(max(sol_e.objective, 0.0), 1.0)
    scale_z = cfg.q_z**2 * cfg.p_mu
    scale_x = cfg.q_x**2 * cfg.p_mu
    return SinglePhotonBounds(
        y1_z=y1_z,
        y1_x=y1_x,
        h1=h1,
        z1=scale_z * low_factor * y1_z,
        x1=scale_x * low_factor * y1_x,
        e1=scale_x * high_factor * h1,
        low_factor=low_factor,
        high_factor=high_factor,
        iterations=sol_z.iterations + sol_e.iterations + (0 if sol_x is sol_z else sol_x.iterations),
    )
