"""Intensity optimization and rate-versus-distance sweeps."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import ConfigError, DomainError, EstimationError
from .estimation import estimate, observations_from_channel
from .keyrate import OK, KeyRateResult, SecurityParams, asymptotic_rate, finite_rate
from .model import CONSTRAINT_MODES, CORRELATION_MODELS, ChannelParams, ProtocolConfig

MU_MARGIN = 0.95
_ROUND = 12


@dataclass(frozen=True)
class SweepSpec:
    """Sweep grid and optimizer settings.

    The coarse search covers ``mu`` in ``[nu + mu_step, 0.95 / (1 + delta_max)]``
    and ``nu`` in ``[2 omega, mu - nu_step]``, extended geometrically to
    smaller intensities (``nu <= mu / 2``); each of the ``refinements``
    passes halves the step and hill-climbs over the eight neighbours of the
    incumbent.
    """

    distances: Sequence[float] = (0.0,)
    delta_max_values: Sequence[float] = (0.0,)
    xi_values: Sequence[int] = (1,)
    constraint_modes: Sequence[str] = ("cs_linearized",)
    correlation_models: Sequence[str] = ("model_independent",)
    mu_step: float = 0.02
    nu_step: float = 0.02
    refinements: int = 2
    include_baseline: bool = False
    n_rounds: Optional[float] = None
    security: SecurityParams = field(default_factory=SecurityParams)
    mu_grid: Optional[Sequence[float]] = None
    nu_grid: Optional[Sequence[float]] = None

    def __post_init__(self):
        for name in (
            "distances",
            "delta_max_values",
            "xi_values",
            "constraint_modes",
            "correlation_models",
        ):
            values = tuple(getattr(self, name))
            if not values:
                raise ConfigError(f"sweep list '{name}' is empty")
            object.__setattr__(self, name, values)
        for m in self.constraint_modes:
            if m not in CONSTRAINT_MODES:
                raise ConfigError(f"unknown constraint mode {m!r}")
        for m in self.correlation_models:
            if m not in CORRELATION_MODELS:
                raise ConfigError(f"unknown correlation model {m!r}")
        if any(d < 0 for d in self.distances):
            raise ConfigError("distances must be non-negative")
        if any(not (0 <= d < 1) for d in self.delta_max_values):
            raise ConfigError("delta_max values must lie in [0, 1)")
        if self.mu_step <= 0 or self.nu_step <= 0:
            raise ConfigError("grid steps must be positive")
        if self.refinements < 0:
            raise ConfigError("refinements must be >= 0")
        for name in ("mu_grid", "nu_grid"):
            if getattr(self, name) is not None:
                values = tuple(float(v) for v in getattr(self, name))
                if not values:
                    raise ConfigError(f"'{name}' is empty")
                object.__setattr__(self, name, values)


@dataclass(frozen=True)
class SweepRow:
    distance: float
    delta_max: float
    xi: int
    mode: str
    model: str
    mu: float
    nu: float
    k_inf: float
    k_raw: float
    key_term: float
    ec_term: float
    status: str
    phase_error_ratio: float = math.nan
    k_n: Optional[float] = None
    evaluations: int = 0


def mu_upper(delta_max: float) -> float:
    """Largest signal intensity searched: ``0.95 / (1 + delta_max)``."""
    return MU_MARGIN / (1.0 + delta_max)


def evaluate(
    cfg: ProtocolConfig,
    ch: ChannelParams,
    n_rounds: Optional[float] = None,
    sec: Optional[SecurityParams] = None,
):
    """Rate at a single configuration from the channel-model observations.

    Returns
    -------
    (KeyRateResult, Optional[KeyRateResult])
        The asymptotic result and, when ``n_rounds`` is given, the finite one.
    """
    obs = observations_from_channel(cfg, ch)
    bounds = estimate(obs, cfg, ch)
    k_inf = asymptotic_rate(bounds, obs, ch, cfg)
    k_n = None
    if n_rounds is not None:
        k_n = finite_rate(bounds, obs, ch, cfg, n_rounds, sec or SecurityParams())
    return k_inf, k_n


def _grid(lo, hi, step):
    if hi < lo - 1e-12:
        return []
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + k * step, _ROUND) for k in range(count)]


def _small_intensity_pairs(mu_step, nu_lo):
    """Geometric extension of the coarse grid below its first ``mu`` value.

    ``mu`` halves from ``mu_step / 2`` down to ``4 nu_lo`` and ``nu`` doubles
    from ``nu_lo`` up to ``mu / 2``. Strongly correlated sources can favour
    intensities far below the linear grid, where a local search started
    from the linear grid does not reliably arrive.
    """
    pairs = []
    mu = mu_step / 2.0
    while nu_lo > 0 and mu >= 4.0 * nu_lo:
        nu = nu_lo
        while nu <= mu / 2.0:
            pairs.append((round(mu, _ROUND), round(nu, _ROUND)))
            nu *= 2.0
        mu /= 2.0
    return pairs


def _separated(mu, nu, step):
    """Refinement admissibility: ``nu`` one step below ``mu``, or at most ``mu / 2``."""
    return nu <= mu - step + 1e-12 or nu <= mu / 2.0


class _Search:
    """Memoized objective: the raw (unfloored) asymptotic rate."""

    def __init__(self, ch, template):
        self.ch = ch
        self.template = template
        self.cache = {}
        self.order = []

    def __call__(self, mu, nu):
        key = (round(mu, _ROUND), round(nu, _ROUND))
        if key not in self.cache:
            try:
                cfg = self.template.replace(mu=key[0], nu=key[1])
                result, _ = evaluate(cfg, self.ch)
                value = result.raw_rate
            except (ConfigError, DomainError, EstimationError):
                result, value = None, -math.inf
            self.cache[key] = (value, result)
            self.order.append(key)
        return self.cache[key][0]

    def better(self, a, b):
        """Is point ``a`` preferred over ``b``? Ties go to smaller mu, then smaller nu."""
        va, vb = self.cache[a][0], self.cache[b][0]
        if va != vb:
            return va > vb
        return a < b


def optimize_intensities(ch: ChannelParams, template: ProtocolConfig, spec: SweepSpec):
    """Maximize the asymptotic rate over ``(mu, nu)``.

    Returns
    -------
    (mu, nu, KeyRateResult, evaluations)
        If no searched point has a positive rate, the first feasible point
        of the coarse grid is returned with its (zero) rate.

    Raises
    ------
    EstimationError
        If no point of the grid yields a solvable estimate.
    """
    search = _Search(ch, template)
    omega = template.omega
    top = mu_upper(template.delta_max)
    nu_lo = 2.0 * omega
    explicit = spec.mu_grid is not None or spec.nu_grid is not None
    mus = spec.mu_grid or _grid(spec.mu_step, top, spec.mu_step)
    nus = spec.nu_grid or _grid(nu_lo, top, spec.nu_step)
    # the default grid keeps mu at least one step above nu; explicit grids only need mu > nu
    gap = 0.0 if explicit else spec.mu_step - 1e-12
    pairs = [(mu, nu) for mu, nu in itertools.product(mus, nus) if mu - nu >= gap]
    if not explicit:
        pairs += _small_intensity_pairs(spec.mu_step, nu_lo)
    best = None
    for mu, nu in pairs:
        if mu > top or nu <= omega or mu <= nu:
            continue
        search(mu, nu)
        key = (round(mu, _ROUND), round(nu, _ROUND))
        if best is None or search.better(key, best):
            best = key
    if best is None:
        raise ConfigError("intensity grid contains no admissible (mu, nu) pair")

    mu_step, nu_step = spec.mu_step, spec.nu_step
    for _ in range(spec.refinements):
        mu_step /= 2.0
        nu_step /= 2.0
        while True:
            mu0, nu0 = best
            moved = False
            for dm, dn in itertools.product((-1, 0, 1), repeat=2):
                mu, nu = mu0 + dm * mu_step, nu0 + dn * nu_step
                if (dm, dn) == (0, 0) or mu > top or nu < nu_lo or not _separated(mu, nu, nu_step):
                    continue
                search(mu, nu)
                key = (round(mu, _ROUND), round(nu, _ROUND))
                if search.better(key, best):
                    best = key
                    moved = True
            if not moved:
                break

    value, result = search.cache[best]
    if result is None:
        raise EstimationError("no admissible intensity pair gave a solvable estimate", "infeasible", "all")
    if value <= 0.0:
        for key in search.order:
            if search.cache[key][1] is not None:
                best = key
                break
        result = search.cache[best][1]
    return best[0], best[1], result, len(search.cache)


def _status(result: KeyRateResult) -> str:
    return "ok" if result.reason == OK else result.reason


def _row_task(args):
    ch, template, spec = args
    base = dict(
        distance=ch.distance,
        delta_max=template.delta_max,
        xi=template.xi,
        mode=template.constraint_mode,
        model=template.correlation_model,
    )
    try:
        mu, nu, result, count = optimize_intensities(ch, template, spec)
    except (ConfigError, DomainError, EstimationError) as exc:
        status = "infeasible" if isinstance(exc, EstimationError) else "error"
        return SweepRow(
            **base, mu=math.nan, nu=math.nan, k_inf=math.nan, k_raw=math.nan,
            key_term=math.nan, ec_term=math.nan, status=f"{status}: {exc}",
        )
    k_n = None
    if spec.n_rounds is not None:
        _, finite = evaluate(template.replace(mu=mu, nu=nu), ch, spec.n_rounds, spec.security)
        k_n = finite.rate
    return SweepRow(
        **base,
        mu=mu,
        nu=nu,
        k_inf=result.rate,
        k_raw=result.raw_rate,
        key_term=result.key_term,
        ec_term=result.ec_term,
        status=_status(result),
        phase_error_ratio=result.phase_error_ratio,
        k_n=k_n,
        evaluations=count,
    )


def sweep_tasks(spec: SweepSpec, ch: ChannelParams, template: Optional[ProtocolConfig] = None):
    """The ``(channel, config, spec)`` triple of every row, in output order.

    Baseline rows (``delta_max = 0``, ``xi = 0``) come first, one per
    distance, followed by every curve of the grid in the order mode,
    model, ``delta_max``, ``xi``, distance.
    """
    template = template or ProtocolConfig()
    tasks = []
    if spec.include_baseline:
        base = template.replace(
            delta_max=0.0,
            xi=0,
            constraint_mode=spec.constraint_modes[0],
            correlation_model=spec.correlation_models[0],
        )
        tasks += [(ch.replace(distance=d), base, spec) for d in spec.distances]
    for mode, model, dm, xi in itertools.product(
        spec.constraint_modes, spec.correlation_models, spec.delta_max_values, spec.xi_values
    ):
        cfg = template.replace(
            delta_max=dm, xi=xi, constraint_mode=mode, correlation_model=model
        )
        tasks += [(ch.replace(distance=d), cfg, spec) for d in spec.distances]
    return tasks


def sweep(
    spec: SweepSpec,
    ch: ChannelParams,
    template: Optional[ProtocolConfig] = None,
    workers: int = 1,
):
    """Optimize every grid point; rows come back in grid order regardless of ``workers``.

    Failures are recorded in each row's ``status`` and never abort the sweep.
    """
    tasks = sweep_tasks(spec, ch, template)
    if workers <= 1:
        return [_row_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_row_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
