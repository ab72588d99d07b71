"""Honest-channel session simulator with a correlated intensity source.

The simulator draws, for every round, the intensity setting and the two
basis choices, the emitted intensity (which may depend on the previous
``xi`` settings), a Poisson photon number and the detection outcome of the
typical channel model. Since it sees the true photon numbers, it provides
ground truth for the interval bounds and for the single-photon statistics
estimated by the linear programs.

Random numbers come from numpy's ``Philox`` counter-based generator seeded
with the user seed, so a ``(inputs, seed)`` pair always reproduces the same
tally on a given numpy version.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence

import numpy as np

from .errors import ConfigError, EstimationError
from .estimation import DecoyObservations, estimate
from .model import SETTINGS, ChannelParams, ProtocolConfig, poisson_interval

SAMPLER_KINDS = ("uniform_interval", "two_point_extremes", "deterministic_memory")
BASES = ("Z", "X")
DEFAULT_CHUNK = 1 << 20
DEFAULT_N_MAX = 10


@dataclass(frozen=True)
class CorrelationSampler:
    """Rule mapping the setting history to the emitted intensity.

    ``uniform_interval``
        i.i.d. uniform on ``[a(1-delta), a(1+delta)]`` (no memory).
    ``two_point_extremes``
        ``a(1+delta)`` with probability ``m``, else ``a(1-delta)``.
    ``deterministic_memory``
        exactly ``a(1 + delta (2m - 1))``.

    ``m`` is the mean of the previous ``xi`` intensity settings rescaled
    to ``[0, 1]`` (``0`` for all-``omega``, ``1`` for all-``mu``); it is
    ``1/2`` when ``xi = 0``.
    """

    kind: str = "uniform_interval"
    delta_max: float = 0.0
    xi: int = 0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ConfigError(f"sampler kind must be one of {SAMPLER_KINDS} (got {self.kind!r})")
        if not (0.0 <= self.delta_max < 1.0):
            raise ConfigError(f"delta_max must lie in [0, 1) (got {self.delta_max})")
        if int(self.xi) != self.xi or self.xi < 0:
            raise ConfigError(f"xi must be a non-negative integer (got {self.xi})")
        object.__setattr__(self, "xi", int(self.xi))

    def memory(self, history: np.ndarray, mu: float, omega: float) -> np.ndarray:
        """Memory statistic ``m`` for each round.

        ``history`` holds ``xi`` leading intensities from before the block
        followed by the block's own settings; the result has one entry per
        block round.
        """
        count = history.size - self.xi
        if self.xi == 0:
            return np.full(count, 0.5)
        csum = np.concatenate([[0.0], np.cumsum(history)])
        mean = (csum[self.xi : self.xi + count] - csum[:count]) / self.xi
        return np.clip((mean - omega) / (mu - omega), 0.0, 1.0)

    def draw(self, settings: np.ndarray, memory: np.ndarray, rng: np.random.Generator):
        """Emitted intensity for each round, given its setting and memory statistic."""
        d = self.delta_max
        if self.kind == "uniform_interval":
            return settings * (1.0 + d * (2.0 * rng.random(settings.size) - 1.0))
        if self.kind == "two_point_extremes":
            high = rng.random(settings.size) < memory
            return settings * np.where(high, 1.0 + d, 1.0 - d)
        return settings * (1.0 + d * (2.0 * memory - 1.0))


@dataclass
class SessionTally:
    """Counts accumulated over one simulated session.

    Per-basis arrays are indexed ``[setting, basis]`` for rounds where both
    parties chose that basis; ``photon_*`` arrays add a leading photon-number
    index (the last bin collects ``n >= n_max``). ``emitted[n, a]`` counts
    emissions over all rounds, whatever the bases. ``block_*`` hold the same
    per-basis counts for each simulation block.
    """

    n_rounds: int
    seed: int
    n_max: int
    setting_counts: np.ndarray
    sent: np.ndarray
    clicked: np.ndarray
    errored: np.ndarray
    emitted: np.ndarray
    photon_sent: np.ndarray
    photon_clicked: np.ndarray
    photon_errored: np.ndarray
    block_sent: List[np.ndarray] = field(default_factory=list)
    block_clicked: List[np.ndarray] = field(default_factory=list)
    alpha_min_ratio: float = math.inf
    alpha_max_ratio: float = -math.inf

    def __post_init__(self):
        if np.any(self.clicked > self.sent) or np.any(self.errored > self.clicked):
            raise ValueError("inconsistent tally: clicks exceed rounds or errors exceed clicks")

    def gain(self, setting: str, basis: str) -> float:
        a, b = SETTINGS.index(setting), BASES.index(basis)
        return self.clicked[a, b] / self.sent[a, b] if self.sent[a, b] else math.nan

    def single_photon_yield(self, setting: str = "mu", basis: str = "Z"):
        """Empirical click probability of single-photon rounds and its binomial standard error."""
        a, b = SETTINGS.index(setting), BASES.index(basis)
        return _ratio(self.photon_clicked[1, a, b], self.photon_sent[1, a, b])

    def single_photon_error(self, setting: str = "mu", basis: str = "X"):
        """Empirical error-click probability of single-photon rounds and its standard error."""
        a, b = SETTINGS.index(setting), BASES.index(basis)
        return _ratio(self.photon_errored[1, a, b], self.photon_sent[1, a, b])

    def equals(self, other: "SessionTally") -> bool:
        names = ("sent", "clicked", "errored", "emitted", "photon_sent", "photon_clicked",
                 "photon_errored", "setting_counts")
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in names)


def _ratio(k, n):
    if n == 0:
        return math.nan, math.inf
    p = k / n
    return p, math.sqrt(max(p * (1.0 - p), 1.0 / n) / n)


def _detect(n, eta, misalignment, p_dark, rng):
    """Click and error flags for pulses with photon numbers ``n``."""
    c2 = math.cos(misalignment) ** 2
    s2 = math.sin(misalignment) ** 2
    p_right = eta * c2
    k_right = rng.binomial(n, p_right)
    rest = 1.0 - p_right
    p_wrong = eta * s2 / rest if rest > 0 else 0.0
    k_wrong = rng.binomial(n - k_right, min(p_wrong, 1.0))
    size = n.size
    right = (k_right > 0) | (rng.random(size) < p_dark)
    wrong = (k_wrong > 0) | (rng.random(size) < p_dark)
    coin = rng.random(size) < 0.5
    click = right | wrong
    error = (wrong & ~right) | (right & wrong & coin)
    return click, error


def simulate(
    n_rounds: int,
    cfg: ProtocolConfig,
    ch: ChannelParams,
    sampler: CorrelationSampler,
    seed: int,
    n_max: int = DEFAULT_N_MAX,
    chunk: int = DEFAULT_CHUNK,
    debug: bool = False,
) -> SessionTally:
    """Simulate ``n_rounds`` honest rounds.

    Parameters
    ----------
    debug : bool
        Assert that every emitted intensity lies in its setting's interval.
    """
    if int(n_rounds) != n_rounds or n_rounds < 1:
        raise ConfigError(f"round count must be a positive integer (got {n_rounds!r})")
    n_rounds = int(n_rounds)
    rng = np.random.Generator(np.random.Philox(seed))
    intens = np.array([cfg.intensities[s] for s in SETTINGS])
    probs = np.array([cfg.probabilities[s] for s in SETTINGS])
    eta = ch.eta

    k_set, k_basis, k_n = len(SETTINGS), len(BASES), n_max + 1
    tally = dict(
        setting_counts=np.zeros(k_set, dtype=np.int64),
        sent=np.zeros((k_set, k_basis), dtype=np.int64),
        clicked=np.zeros((k_set, k_basis), dtype=np.int64),
        errored=np.zeros((k_set, k_basis), dtype=np.int64),
        emitted=np.zeros((k_n, k_set), dtype=np.int64),
        photon_sent=np.zeros((k_n, k_set, k_basis), dtype=np.int64),
        photon_clicked=np.zeros((k_n, k_set, k_basis), dtype=np.int64),
        photon_errored=np.zeros((k_n, k_set, k_basis), dtype=np.int64),
    )
    blocks_sent, blocks_clicked = [], []
    lo_ratio, hi_ratio = math.inf, -math.inf

    # settings preceding the session, so the first rounds also have a history
    carry = intens[rng.choice(k_set, size=sampler.xi, p=probs)]
    done = 0
    while done < n_rounds:
        size = min(chunk, n_rounds - done)
        a_idx = rng.choice(k_set, size=size, p=probs)
        settings = intens[a_idx]
        history = np.concatenate([carry, settings])
        memory = sampler.memory(history, cfg.mu, cfg.omega)
        alpha = sampler.draw(settings, memory, rng)
        if sampler.xi:
            carry = history[-sampler.xi :]
        pos = settings > 0
        if pos.any():
            ratio = alpha[pos] / settings[pos]
            lo_ratio = min(lo_ratio, float(ratio.min()))
            hi_ratio = max(hi_ratio, float(ratio.max()))
        if debug:
            lo_b = settings * (1.0 - sampler.delta_max)
            hi_b = settings * (1.0 + sampler.delta_max)
            tol = 1e-12 * settings
            assert np.all((alpha >= lo_b - tol) & (alpha <= hi_b + tol)), "intensity outside interval"
        photons = rng.poisson(alpha)
        alice_z = rng.random(size) < cfg.q_z
        bob_z = rng.random(size) < cfg.q_z
        click, error = _detect(photons, eta, ch.misalignment, ch.p_dark, rng)

        n_bin = np.minimum(photons, n_max)
        tally["setting_counts"] += np.bincount(a_idx, minlength=k_set)
        tally["emitted"] += np.bincount(n_bin * k_set + a_idx, minlength=k_n * k_set).reshape(
            k_n, k_set
        )
        block_sent = np.zeros((k_set, k_basis), dtype=np.int64)
        block_clicked = np.zeros((k_set, k_basis), dtype=np.int64)
        for b, match in enumerate((alice_z & bob_z, ~alice_z & ~bob_z)):
            idx = a_idx[match]
            nb = n_bin[match]
            cl = click[match]
            er = error[match]
            sent = np.bincount(idx, minlength=k_set)
            clicked = np.bincount(idx[cl], minlength=k_set)
            tally["sent"][:, b] += sent
            tally["clicked"][:, b] += clicked
            tally["errored"][:, b] += np.bincount(idx[er], minlength=k_set)
            flat = nb * k_set + idx
            size_n = k_n * k_set
            tally["photon_sent"][:, :, b] += np.bincount(flat, minlength=size_n).reshape(k_n, k_set)
            tally["photon_clicked"][:, :, b] += np.bincount(flat[cl], minlength=size_n).reshape(
                k_n, k_set
            )
            tally["photon_errored"][:, :, b] += np.bincount(flat[er], minlength=size_n).reshape(
                k_n, k_set
            )
            block_sent[:, b] = sent
            block_clicked[:, b] = clicked
        blocks_sent.append(block_sent)
        blocks_clicked.append(block_clicked)
        done += size

    return SessionTally(
        n_rounds=n_rounds,
        seed=seed,
        n_max=n_max,
        block_sent=blocks_sent,
        block_clicked=blocks_clicked,
        alpha_min_ratio=lo_ratio,
        alpha_max_ratio=hi_ratio,
        **tally,
    )


class IncompleteTallyError(ConfigError):
    """Some setting/basis combination was never sent; ``populated`` keeps the rest."""

    def __init__(self, message, populated, missing):
        super().__init__(message)
        self.populated = populated
        self.missing = missing


def to_observations(tally: SessionTally) -> DecoyObservations:
    """Normalized gains and error rates per setting and basis.

    Raises
    ------
    IncompleteTallyError
        If a setting/basis pair has no rounds; the exception carries the
        populated fields and the list of missing pairs.
    """
    populated: Dict[str, Dict[str, float]] = {
        "z_gain": {}, "x_gain": {}, "x_error": {}, "z_error": {}
    }
    missing = []
    for a, s in enumerate(SETTINGS):
        for b, basis in enumerate(BASES):
            sent = tally.sent[a, b]
            if sent == 0:
                missing.append((s, basis))
                continue
            key = basis.lower()
            populated[f"{key}_gain"][s] = tally.clicked[a, b] / sent
            populated[f"{key}_error"][s] = tally.errored[a, b] / sent
    if missing:
        pairs = ", ".join(f"{s}/{b}" for s, b in missing)
        raise IncompleteTallyError(f"no rounds for setting/basis {pairs}", populated, missing)
    return DecoyObservations(
        populated["z_gain"],
        populated["x_gain"],
        populated["x_error"],
        populated["z_error"],
        rounds=tally.n_rounds,
    )


def observation_sigmas(tally: SessionTally) -> Dict[str, np.ndarray]:
    """Binomial standard errors of the normalized observations, per setting."""
    out = {}
    for name, b, counts in (
        ("z_gain", 0, tally.clicked),
        ("x_gain", 1, tally.clicked),
        ("x_error", 1, tally.errored),
    ):
        sent = np.maximum(tally.sent[:, b], 1)
        p = counts[:, b] / sent
        out[name] = np.sqrt(np.maximum(p * (1 - p), 1.0 / sent) / sent)
    return out


def write_tally_csv(tally: SessionTally, path) -> None:
    """Write per-setting and per-photon-number counts.

    Columns are ``setting, basis, n, sent, clicked, errored``. Rows with
    ``n = all`` aggregate over photon numbers. Rows with basis ``any`` give
    emission counts over every round (detection is not tallied there). The
    last photon bin collects ``n >= n_max``.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["setting", "basis", "n", "sent", "clicked", "errored"])
        for a, s in enumerate(SETTINGS):
            for b, basis in enumerate(BASES):
                w.writerow([s, basis, "all", tally.sent[a, b], tally.clicked[a, b], tally.errored[a, b]])
        for a, s in enumerate(SETTINGS):
            for b, basis in enumerate(BASES):
                for n in range(tally.n_max + 1):
                    w.writerow([
                        s, basis, n, tally.photon_sent[n, a, b],
                        tally.photon_clicked[n, a, b], tally.photon_errored[n, a, b],
                    ])
        for a, s in enumerate(SETTINGS):
            for n in range(tally.n_max + 1):
                w.writerow([s, "any", n, tally.emitted[n, a], "", ""])


# -- validation checks ----------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def interval_coverage(
    tally: SessionTally, cfg: ProtocolConfig, delta_max: float, n_upto: int = 4, n_sigma: float = 4.0
) -> CheckResult:
    """Empirical ``p(n|a)`` lies within the record-independent interval, up to ``n_sigma``."""
    worst = 0.0
    failures = []
    for a, s in enumerate(SETTINGS):
        total = tally.setting_counts[a]
        if total == 0:
            continue
        for n in range(n_upto + 1):
            iv = poisson_interval(cfg.intensities[s], n, delta_max)
            p = tally.emitted[n, a] / total
            ref = min(max(p, iv.low), iv.high)
            sigma = math.sqrt(max(ref * (1 - ref), 1.0 / total) / total)
            excess = max(iv.low - p, p - iv.high, 0.0) / sigma
            worst = max(worst, excess)
            if excess > n_sigma:
                failures.append(f"p({n}|{s})={p:.6g} outside [{iv.low:.6g}, {iv.high:.6g}]")
    detail = f"max excess {worst:.2f} sigma" + (": " + "; ".join(failures) if failures else "")
    return CheckResult("interval_coverage", not failures, detail)


def soundness_check(
    tally: SessionTally,
    cfg: ProtocolConfig,
    ch: ChannelParams,
    n_sigma: float = 4.0,
) -> List[CheckResult]:
    """Compare the LP bounds from simulated observations with the simulator's truth.

    Each observed gain is widened by ``n_sigma`` binomial standard errors
    before entering the programs, and the bound may exceed (or, for the
    error bound, undershoot) the empirical single-photon value by
    ``n_sigma`` of that value's own standard error. A program that stays
    infeasible despite the widening counts as a failure.
    """
    obs = to_observations(tally)
    sig = observation_sigmas(tally)
    slack = {k: n_sigma * v for k, v in sig.items()}
    try:
        bounds = estimate(obs, cfg, ch, slack=slack)
    except EstimationError as exc:
        return [CheckResult("soundness", False, f"{exc.program} program {exc.status}")]
    results = []
    checks = (
        ("yield_z", bounds.y1_z, tally.single_photon_yield("mu", "Z"), -1),
        ("yield_x", bounds.y1_x, tally.single_photon_yield("mu", "X"), -1),
        ("error_x", bounds.h1, tally.single_photon_error("mu", "X"), +1),
    )
    for name, bound, (truth, sigma), direction in checks:
        # lower bounds must not exceed the truth; upper bounds must not fall below it
        excess = (bound - truth) if direction < 0 else (truth - bound)
        passed = excess <= n_sigma * sigma
        kind = "lower" if direction < 0 else "upper"
        results.append(
            CheckResult(
                f"soundness_{name}",
                bool(passed),
                f"{kind} bound {bound:.6g} vs truth {truth:.6g} "
                f"(excess {excess / sigma:+.2f} sigma)",
            )
        )
    return results


@dataclass(frozen=True)
class VarianceDecayReport:
    n_values: Sequence[int]
    variances: Sequence[float]
    exponent: float
    threshold: float
    passed: bool
    seeds: int


def variance_decay(
    series: Mapping[int, Sequence[SessionTally]],
    setting: str = "mu",
    basis: str = "Z",
    threshold: float = -0.8,
    min_n_values: int = 3,
    min_seeds: int = 30,
) -> VarianceDecayReport:
    """Fit ``Var[gain] ~ N^k`` across seeds and report whether ``k <= threshold``.

    Raises
    ------
    ConfigError
        With fewer than ``min_n_values`` round counts or fewer than
        ``min_seeds`` tallies for any of them.
    """
    if len(series) < min_n_values:
        raise ConfigError(
            f"variance decay needs at least {min_n_values} round counts (got {len(series)})"
        )
    ns, variances = [], []
    seeds = None
    for n, tallies in sorted(series.items()):
        if len(tallies) < min_seeds:
            raise ConfigError(
                f"variance decay needs at least {min_seeds} seeds per round count "
                f"(N={n} has {len(tallies)})"
            )
        gains = np.array([t.gain(setting, basis) for t in tallies])
        ns.append(int(n))
        variances.append(float(np.var(gains, ddof=1)))
        seeds = len(tallies) if seeds is None else min(seeds, len(tallies))
    if min(variances) <= 0:
        raise ConfigError("zero empirical variance; increase the round counts")
    slope = float(np.polyfit(np.log(ns), np.log(variances), 1)[0])
    return VarianceDecayReport(tuple(ns), tuple(variances), slope, threshold, slope <= threshold, seeds)
