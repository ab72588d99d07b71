"""Small dense linear programs with box-bounded variables.

The solver is a bounded-variable primal simplex on a dense tableau. A first
phase minimizes the sum of artificial variables to find a feasible basis;
the second phase optimizes the user objective. Dantzig pricing is used until
a run of degenerate pivots is observed, after which Bland's rule takes over
to rule out cycling. The final basic solution is recomputed from the
original data so that reported values do not carry tableau drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

LE, GE, EQ = "<=", ">=", "="
SENSES = (LE, GE, EQ)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

FEASIBILITY_TOL = 1e-9
#: A reduced cost counts as improving when it exceeds
#: ``OPTIMALITY_REL * (|c_j| + |c_B| @ |B^-1 a_j|) + OPTIMALITY_ABS``, i.e. the
#: round-off level of its own computation. An absolute test alone stops
#: early on programs whose objective is itself tiny (error yields ~1e-5).
OPTIMALITY_REL = 1e-11
OPTIMALITY_ABS = 1e-15
REFACTOR_ROUNDS = 5
PIVOT_TOL = 1e-11
DEGENERATE_RUN = 30


def _frozen(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class LinearProgram:
    """``min/max c @ x`` subject to ``A x (sense) b`` and ``lower <= x <= upper``."""

    objective: np.ndarray
    matrix: np.ndarray
    senses: tuple
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    maximize: bool = False
    var_names: Optional[tuple] = None
    row_names: Optional[tuple] = None

    def __post_init__(self):
        c = _frozen(self.objective).reshape(-1)
        n = c.size
        a = _frozen(np.asarray(self.matrix, dtype=float).reshape(-1, n))
        b = _frozen(self.rhs).reshape(-1)
        lo = _frozen(self.lower).reshape(-1)
        hi = _frozen(self.upper).reshape(-1)
        senses = tuple(self.senses)
        if a.shape[0] != b.size or len(senses) != b.size:
            raise ValueError("matrix, senses and rhs disagree on the number of rows")
        if lo.size != n or hi.size != n:
            raise ValueError("bounds must have one entry per variable")
        if any(s not in SENSES for s in senses):
            raise ValueError(f"unknown constraint sense in {senses!r}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("objective, matrix and rhs must be finite")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
            raise ValueError("each variable needs lower <= upper")
        if self.var_names is not None and len(self.var_names) != n:
            raise ValueError("var_names must have one entry per variable")
        if self.row_names is not None and len(self.row_names) != b.size:
            raise ValueError("row_names must have one entry per row")
        for name, value in (
            ("objective", c),
            ("matrix", a),
            ("rhs", b),
            ("lower", lo),
            ("upper", hi),
            ("senses", senses),
        ):
            object.__setattr__(self, name, value)

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_rows(self) -> int:
        return self.rhs.size


@dataclass(frozen=True)
class LpSolution:
    status: str
    objective: float
    x: np.ndarray
    residual: float
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass(frozen=True)
class CheckReport:
    """Per-row and per-variable violations of an assignment (zero when satisfied)."""

    row_violations: np.ndarray
    bound_violations: np.ndarray
    tol: float = FEASIBILITY_TOL
    max_violation: float = field(init=False)

    def __post_init__(self):
        worst = 0.0
        if self.row_violations.size:
            worst = max(worst, float(self.row_violations.max()))
        if self.bound_violations.size:
            worst = max(worst, float(self.bound_violations.max()))
        object.__setattr__(self, "max_violation", worst)

    @property
    def ok(self) -> bool:
        return self.max_violation <= self.tol


def check(lp: LinearProgram, x, tol: float = FEASIBILITY_TOL) -> CheckReport:
    """Exact residuals of ``x`` against every row and bound of ``lp``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != lp.n_vars:
        raise ValueError(f"assignment has {x.size} entries, LP has {lp.n_vars} variables")
    activity = lp.matrix @ x if lp.n_rows else np.zeros(0)
    viol = np.zeros(lp.n_rows)
    for i, sense in enumerate(lp.senses):
        gap = activity[i] - lp.rhs[i]
        if sense == LE:
            viol[i] = max(gap, 0.0)
        elif sense == GE:
            viol[i] = max(-gap, 0.0)
        else:
            viol[i] = abs(gap)
    bounds = np.maximum(np.maximum(lp.lower - x, x - lp.upper), 0.0)
    return CheckReport(viol, bounds, tol)


def dump(lp: LinearProgram) -> str:
    """Plain-text rendering, one constraint per line."""
    names = lp.var_names or tuple(f"x{j}" for j in range(lp.n_vars))

    def expr(coeffs):
        terms = [f"{v:+.17g} {names[j]}" for j, v in enumerate(coeffs) if v != 0.0]
        return " ".join(terms) if terms else "0"

    lines = [("maximize" if lp.maximize else "minimize") + " " + expr(lp.objective)]
    lines.append("subject to")
    rows = lp.row_names or tuple(f"r{i}" for i in range(lp.n_rows))
    for i in range(lp.n_rows):
        lines.append(f"  {rows[i]}: {expr(lp.matrix[i])} {lp.senses[i]} {lp.rhs[i]:.17g}")
    lines.append("bounds")
    for j in range(lp.n_vars):
        lines.append(f"  {lp.lower[j]:.17g} <= {names[j]} <= {lp.upper[j]:.17g}")
    return "\n".join(lines) + "\n"


class _Tableau:
    """Working state of the bounded-variable simplex."""

    def __init__(self, lp: LinearProgram):
        m, n = lp.n_rows, lp.n_vars
        self.m, self.n = m, n
        a = np.asarray(lp.matrix, dtype=float)
        b = np.asarray(lp.rhs, dtype=float)

        slack_lo = np.zeros(m)
        slack_hi = np.zeros(m)
        for i, sense in enumerate(lp.senses):
            if sense == LE:
                slack_hi[i] = math.inf
            elif sense == GE:
                slack_lo[i] = -math.inf

        x = np.zeros(n)
        for j in range(n):
            if math.isfinite(lp.lower[j]):
                x[j] = lp.lower[j]
            elif math.isfinite(lp.upper[j]):
                x[j] = lp.upper[j]
        resid = b - a @ x if m else np.zeros(0)

        # slack in range -> basic slack; otherwise slack at its nearest bound
        # and a sign-adjusted artificial absorbs the remainder
        art_rows = []
        art_sign = []
        slack_val = resid.copy()
        for i in range(m):
            r = resid[i]
            if slack_lo[i] - 0.0 <= r <= slack_hi[i]:
                continue
            target = slack_lo[i] if r < slack_lo[i] else slack_hi[i]
            slack_val[i] = target
            art_rows.append(i)
            art_sign.append(1.0 if r - target > 0 else -1.0)
        k = len(art_rows)
        ntot = n + m + k
        self.ntot = ntot
        self.n_art = k

        full = np.zeros((m, ntot))
        full[:, :n] = a
        full[:, n : n + m] = np.eye(m)
        for t, (i, s) in enumerate(zip(art_rows, art_sign)):
            full[i, n + m + t] = s
        self.original = full
        self.b = b

        self.lo = np.concatenate([np.asarray(lp.lower, float), slack_lo, np.zeros(k)])
        self.hi = np.concatenate([np.asarray(lp.upper, float), slack_hi, np.full(k, math.inf)])
        self.x = np.concatenate([x, slack_val, np.zeros(k)])

        self.basis = np.arange(n, n + m)
        for t, i in enumerate(art_rows):
            self.basis[i] = n + m + t
            self.x[n + m + t] = abs(resid[i] - slack_val[i])
        # B is diagonal with entries +-1, so B^-1 A is a row sign flip
        signs = np.ones(m)
        for t, (i, s) in enumerate(zip(art_rows, art_sign)):
            signs[i] = s
        self.table = full * signs[:, None]
        self.is_basic = np.zeros(ntot, dtype=bool)
        self.is_basic[self.basis] = True
        self.iterations = 0

    def run(self, cost, max_iter):
        """Minimize ``cost @ x``; return ``OPTIMAL`` or ``UNBOUNDED`` (or raise on stall)."""
        degenerate = 0
        bland = False
        table = self.table
        while True:
            if self.iterations >= max_iter:
                raise RuntimeError("simplex iteration limit reached")
            d = cost - cost[self.basis] @ table
            tol = OPTIMALITY_REL * (np.abs(cost) + np.abs(cost[self.basis]) @ np.abs(table))
            tol += OPTIMALITY_ABS
            at_lo = self.x <= self.lo
            at_hi = self.x >= self.hi
            free = ~self.is_basic & (self.lo < self.hi)
            up = free & ~at_hi & (d < -tol)
            down = free & ~at_lo & (d > tol)
            candidates = np.flatnonzero(up | down)
            if candidates.size == 0:
                return OPTIMAL
            if bland:
                j = int(candidates[0])
            else:
                j = int(candidates[np.argmax(np.abs(d[candidates]))])
            direction = 1.0 if up[j] else -1.0

            col = table[:, j] * direction
            xb = self.x[self.basis]
            theta = self.hi[j] - self.lo[j]
            leave = -1
            best_piv = 0.0
            dec = col > PIVOT_TOL
            inc = col < -PIVOT_TOL
            ratios = np.full(self.m, math.inf)
            lb = self.lo[self.basis]
            ub = self.hi[self.basis]
            ratios[dec] = (xb[dec] - lb[dec]) / col[dec]
            ratios[inc] = (ub[inc] - xb[inc]) / (-col[inc])
            ratios = np.maximum(ratios, 0.0)
            if self.m:
                rmin = ratios.min()
                if rmin < theta:
                    theta = rmin
                    ties = np.flatnonzero(ratios <= rmin + 1e-12 * max(1.0, rmin))
                    if bland:
                        leave = int(ties[np.argmin(self.basis[ties])])
                    else:
                        leave = int(ties[np.argmax(np.abs(col[ties]))])
                    best_piv = col[leave]
            if not math.isfinite(theta):
                return UNBOUNDED

            self.iterations += 1
            if theta <= 1e-14:
                degenerate += 1
                if degenerate >= DEGENERATE_RUN:
                    bland = True
            else:
                degenerate = 0

            self.x[self.basis] = xb - theta * col
            self.x[j] += direction * theta
            if leave < 0:
                # bound flip: entering variable moves to its opposite bound
                self.x[j] = self.hi[j] if direction > 0 else self.lo[j]
                continue
            out = self.basis[leave]
            self.x[out] = self.lo[out] if best_piv > 0 else self.hi[out]
            pivot_row = table[leave] / table[leave, j]
            table -= np.outer(table[:, j], pivot_row)
            table[leave] = pivot_row
            self.basis[leave] = j
            self.is_basic[out] = False
            self.is_basic[j] = True

    def refactor(self):
        """Rebuild ``B^-1 A`` from the original data, discarding pivot drift."""
        if not self.m:
            return
        try:
            self.table = np.linalg.solve(self.original[:, self.basis], self.original)
        except np.linalg.LinAlgError:
            pass

    def _improvable(self, cost) -> bool:
        """Price with duals recomputed from the original data."""
        if not self.m:
            return False
        try:
            duals = np.linalg.solve(self.original[:, self.basis].T, cost[self.basis])
        except np.linalg.LinAlgError:
            return True
        d = cost - duals @ self.original
        tol = OPTIMALITY_REL * (np.abs(cost) + np.abs(duals) @ np.abs(self.original))
        tol += OPTIMALITY_ABS
        free = ~self.is_basic & (self.lo < self.hi)
        up = free & (self.x < self.hi) & (d < -tol)
        down = free & (self.x > self.lo) & (d > tol)
        return bool(np.any(up | down))

    def optimize(self, cost, max_iter):
        """:meth:`run`, then re-price from the original data and resume if drift hid a pivot."""
        status = self.run(cost, max_iter)
        for _ in range(REFACTOR_ROUNDS):
            if status != OPTIMAL or not self._improvable(cost):
                break
            self.refactor()
            self.refresh()
            status = self.run(cost, max_iter)
        return status

    def refresh(self):
        """Recompute basic values from the original data."""
        if not self.m:
            return
        nonbasic = ~self.is_basic
        rhs = self.b - self.original[:, nonbasic] @ self.x[nonbasic]
        basis_matrix = self.original[:, self.basis]
        try:
            self.x[self.basis] = np.linalg.solve(basis_matrix, rhs)
        except np.linalg.LinAlgError:
            pass


def solve(lp: LinearProgram, tol: float = FEASIBILITY_TOL, max_iter: Optional[int] = None) -> LpSolution:
    """Solve ``lp``; infeasible or unbounded problems are reported in ``status``."""
    tab = _Tableau(lp)
    n = lp.n_vars
    if max_iter is None:
        max_iter = 50 * (tab.ntot + tab.m) + 100

    if tab.n_art:
        phase1 = np.zeros(tab.ntot)
        phase1[n + tab.m :] = 1.0
        tab.run(phase1, max_iter)
        tab.refresh()
        if tab.x[n + tab.m :].sum() > tol:
            x = tab.x[:n].copy()
            return LpSolution(INFEASIBLE, math.nan, x, check(lp, x, tol).max_violation, tab.iterations)
        # artificials are pinned at zero from here on
        tab.hi[n + tab.m :] = 0.0
        tab.x[n + tab.m :] = 0.0

    sign = -1.0 if lp.maximize else 1.0
    cost = np.zeros(tab.ntot)
    cost[:n] = sign * lp.objective
    status = tab.optimize(cost, max_iter)
    tab.refresh()
    x = tab.x[:n].copy()
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED, sign * -math.inf, x, math.nan, tab.iterations)
    x = np.clip(x, lp.lower, lp.upper)
    residual = check(lp, x, tol).max_violation
    return LpSolution(OPTIMAL, float(lp.objective @ x), x, residual, tab.iterations)
