"""Real-time optimizer: set-points for the remainder of the market period.

One LP per re-solve, covering the window from now to the next period
boundary (length ``delta_t``).  The immediate cost mirrors the planner's
period cost over that window; the delayed cost prices the period peak,
blending the already-realized average power with the planned remainder
(weight ``beta = 1 - delta_t / delta_tau``), and penalizes any shortfall of
symmetric reserve against the planner's commitment.  The longer-term
consequences of the end-of-period state enter through the value function,
embedded as epigraph rows on an auxiliary cost-to-go variable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from mgems.domain import DeviceFleet, GridContract, MarketClock, import_price_at
from mgems.lp import LpModel, LpStatus, SolverError, get_solver
from mgems.valuefn import ValueFunction, as_epigraph_rows, evaluate

__all__ = ["RtoForecast", "RtoContext", "RtoActions", "RtpInfeasibleError",
           "build_rtp", "solve_rtp"]


class RtpInfeasibleError(RuntimeError):
    """Real-time LP infeasible; callers fall back to the rule-based step."""


@dataclass(frozen=True)
class RtoForecast:
    """kW values assumed to hold over the remaining window."""

    nfl_total: float
    she: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ste_cap: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nst: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class RtoContext:
    """Measurements, commitments, and the value function for one re-solve."""

    now: datetime
    delta_t_h: float
    clock: MarketClock
    fleet: DeviceFleet
    contract: GridContract
    soc: np.ndarray
    forecast: RtoForecast
    vf: ValueFunction
    peak_kw: float = 0.0
    committed_reserve_kw: float = 0.0
    realized_avg_power_kw: float = 0.0
    tso_signal: int = 1
    reserve_enabled: bool = False
    bias: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.delta_t_h <= self.clock.delta_tau_h + 1e-12):
            raise ValueError("remaining time must lie in (0, delta_tau]")
        if not np.isfinite(self.realized_avg_power_kw):
            raise ValueError("realized average power must be finite")
        if self.tso_signal not in (0, 1):
            raise ValueError("TSO signal is 0 (activated) or 1")
        if self.peak_kw < 0:
            raise ValueError("historical peak must be >= 0")
        self.soc = np.asarray(self.soc, dtype=float)

    @property
    def beta(self) -> float:
        """Fraction of the period already elapsed."""
        return 1.0 - self.delta_t_h / self.clock.delta_tau_h


class _RtoCols:
    def __init__(self, ctx: RtoContext):
        f = ctx.fleet
        self.n_she = len(f.sheddable_loads)
        self.n_ste = len(f.steerable_generators)
        self.n_nst = len(f.non_steerable_generators)
        self.n_sto = len(f.storage)
        self.reserve = ctx.reserve_enabled
        o = 0
        self.she = list(range(o, o + self.n_she)); o += self.n_she
        self.ste = list(range(o, o + self.n_ste)); o += self.n_ste
        self.nst = list(range(o, o + self.n_nst)); o += self.n_nst
        self.cha = list(range(o, o + self.n_sto)); o += self.n_sto
        self.dis = list(range(o, o + self.n_sto)); o += self.n_sto
        self.soc = list(range(o, o + self.n_sto)); o += self.n_sto
        self.e = o; o += 1
        self.i = o; o += 1
        self.p_fut = o; o += 1
        self.p_blend = o; o += 1
        self.dp = o; o += 1
        self.theta = o; o += 1
        if self.reserve:
            self.rup = list(range(o, o + self.n_sto)); o += self.n_sto
            self.rdn = list(range(o, o + self.n_sto)); o += self.n_sto
            self.rsym = o; o += 1
            self.drsym = o; o += 1
        self.total = o


def build_rtp(ctx: RtoContext) -> LpModel:
    """Assemble the real-time LP for the window [now, next boundary)."""
    cols = _RtoCols(ctx)
    fleet, contract, fc = ctx.fleet, ctx.contract, ctx.forecast
    dt = ctx.delta_t_h
    dtau = ctx.clock.delta_tau_h
    beta = ctx.beta

    c = np.zeros(cols.total)
    lo = np.zeros(cols.total)
    hi = np.ones(cols.total)

    for d, dev in enumerate(fleet.sheddable_loads):
        c[cols.she[d]] = dt * dev.shed_price * fc.she[d]
    for d, dev in enumerate(fleet.steerable_generators):
        c[cols.ste[d]] = dt * dev.gen_price * fc.ste_cap[d]
    for d, dev in enumerate(fleet.non_steerable_generators):
        c[cols.nst[d]] = dt * dev.curtail_price * fc.nst[d]
    for d, dev in enumerate(fleet.storage):
        c[cols.cha[d]] = dt * dev.usage_fee * dev.p_cha_max * dev.eta_cha
        c[cols.dis[d]] = dt * dev.usage_fee * dev.p_dis_max / dev.eta_dis
        c[cols.soc[d]] = -ctx.bias
        lo[cols.soc[d]], hi[cols.soc[d]] = dev.s_min, dev.s_max
    c[cols.e] = -contract.export_price
    c[cols.i] = import_price_at(ctx.now, contract)
    lo[cols.e], hi[cols.e] = 0.0, np.inf
    lo[cols.i], hi[cols.i] = 0.0, np.inf
    lo[cols.p_fut], hi[cols.p_fut] = -np.inf, np.inf
    lo[cols.p_blend], hi[cols.p_blend] = -np.inf, np.inf
    c[cols.dp] = contract.peak_price
    lo[cols.dp], hi[cols.dp] = 0.0, np.inf
    c[cols.theta] = 1.0
    lo[cols.theta], hi[cols.theta] = -np.inf, np.inf
    if cols.reserve:
        for d in range(cols.n_sto):
            lo[cols.rup[d]], hi[cols.rup[d]] = 0.0, np.inf
            lo[cols.rdn[d]], hi[cols.rdn[d]] = 0.0, np.inf
        lo[cols.rsym], hi[cols.rsym] = 0.0, np.inf
        c[cols.drsym] = ctx.tso_signal * contract.reserve_penalty_rto
        lo[cols.drsym], hi[cols.drsym] = 0.0, np.inf

    rows, senses, rhs, labels = [], [], [], []

    def add_row(coefs, sense, b, label):
        row = np.zeros(cols.total)
        for j, v in coefs.items():
            row[j] += v
        rows.append(row); senses.append(sense); rhs.append(b); labels.append(label)

    bal = {cols.e: 1.0 / dt, cols.i: -1.0 / dt}
    const = -fc.nfl_total
    for d in range(cols.n_nst):
        bal[cols.nst[d]] = fc.nst[d]
        const += fc.nst[d]
    for d in range(cols.n_ste):
        bal[cols.ste[d]] = -fc.ste_cap[d]
    for d in range(cols.n_she):
        bal[cols.she[d]] = -fc.she[d]
        const -= fc.she[d]
    for d, dev in enumerate(fleet.storage):
        bal[cols.cha[d]] = dev.p_cha_max
        bal[cols.dis[d]] = -dev.p_dis_max
    add_row(bal, "E", const, ("bal",))

    add_row({cols.e: 1.0 / dt, cols.i: -1.0 / dt}, "L", contract.export_cap_kw,
            ("ecap",))
    add_row({cols.i: 1.0 / dt, cols.e: -1.0 / dt}, "L", contract.import_cap_kw,
            ("icap",))

    for d, dev in enumerate(fleet.storage):
        add_row({cols.soc[d]: 1.0,
                 cols.cha[d]: -dt * dev.p_cha_max * dev.eta_cha,
                 cols.dis[d]: dt * dev.p_dis_max / dev.eta_dis},
                "E", float(ctx.soc[d]), ("soc", d))

    # peak: future-window average, blended with what already flowed
    add_row({cols.i: 1.0 / dt, cols.e: -1.0 / dt, cols.p_fut: -1.0}, "L", 0.0,
            ("peak_fut",))
    add_row({cols.p_blend: 1.0, cols.p_fut: -(1.0 - beta)}, "E",
            beta * ctx.realized_avg_power_kw, ("peak_blend",))
    add_row({cols.p_blend: 1.0, cols.dp: -1.0}, "L", ctx.peak_kw, ("peak_dp",))

    for r in as_epigraph_rows(ctx.vf):
        coefs = {cols.theta: -1.0}
        for d in range(cols.n_sto):
            coefs[cols.soc[d]] = float(r.soc_coefs[d])
        add_row(coefs, "L", r.rhs, r.label)

    if cols.reserve:
        # capability is assessed at the end-of-period state against a full
        # market period, matching the planner's rows
        for d, dev in enumerate(fleet.storage):
            k_dis = dev.eta_dis / dtau
            add_row({cols.rup[d]: 1.0, cols.soc[d]: -k_dis}, "L",
                    -k_dis * dev.s_min, ("r_up_soc", d))
            add_row({cols.rup[d]: 1.0, cols.dis[d]: dev.p_dis_max}, "L",
                    dev.p_dis_max, ("r_up_pow", d))
            k_cha = 1.0 / (dev.eta_cha * dtau)
            add_row({cols.rdn[d]: 1.0, cols.soc[d]: k_cha}, "L",
                    k_cha * dev.s_max, ("r_dn_soc", d))
            add_row({cols.rdn[d]: 1.0, cols.cha[d]: dev.p_cha_max}, "L",
                    dev.p_cha_max, ("r_dn_pow", d))
        up = {cols.rsym: 1.0}
        dn = {cols.rsym: 1.0}
        up_const = 0.0
        for d in range(cols.n_sto):
            up[cols.rup[d]] = -1.0
            dn[cols.rdn[d]] = -1.0
        for d in range(cols.n_ste):
            up[cols.ste[d]] = fc.ste_cap[d]; up_const += fc.ste_cap[d]
            dn[cols.ste[d]] = -fc.ste_cap[d]
        for d in range(cols.n_nst):
            up[cols.nst[d]] = fc.nst[d]; up_const += fc.nst[d]
            dn[cols.nst[d]] = -fc.nst[d]
        for d in range(cols.n_she):
            up[cols.she[d]] = fc.she[d]; up_const += fc.she[d]
            dn[cols.she[d]] = -fc.she[d]
        add_row(up, "L", up_const, ("r_sym_up",))
        add_row(dn, "L", 0.0, ("r_sym_dn",))
        # shortfall covers any commitment the current capability misses
        add_row({cols.rsym: -1.0, cols.drsym: -1.0}, "L",
                -ctx.committed_reserve_kw, ("r_short",))

    return LpModel(c, lo, hi, np.array(rows), tuple(senses), np.array(rhs),
                   tuple(labels))


@dataclass
class RtoActions:
    """Set-points held until the boundary, plus reporting values."""

    a_she: np.ndarray
    a_ste: np.ndarray
    a_nst: np.ndarray
    a_cha: np.ndarray
    a_dis: np.ndarray
    soc_end: np.ndarray
    e_kwh: float
    i_kwh: float
    r_sym_kw: float
    shortfall_kw: float
    theta: float
    objective: float
    peak_blend_kw: float
    delta_peak_kw: float


def solve_rtp(ctx: RtoContext, solver=None) -> RtoActions:
    """Solve the real-time LP and return the optimal set-points.

    Raises :class:`RtpInfeasibleError` when no feasible dispatch exists for
    the remaining window (the simulator then falls back to priority rules).
    """
    if not ctx.vf.cuts:
        raise ValueError("the value function must hold at least one cut")
    model = build_rtp(ctx)
    sol = get_solver(solver).solve(model)
    if sol.status is LpStatus.INFEASIBLE:
        raise RtpInfeasibleError("no feasible set-point for the remaining window")
    if sol.status is not LpStatus.OPTIMAL:
        raise SolverError(f"real-time LP ended {sol.status.value}")

    cols = _RtoCols(ctx)
    x = sol.x

    def take(idx):
        return np.array([x[j] for j in idx])

    soc_end = take(cols.soc)
    theta = float(x[cols.theta])
    check = evaluate(ctx.vf, soc_end)
    if abs(theta - check) > 1e-6 * (1.0 + abs(check)):
        raise SolverError(f"cost-to-go mismatch: theta={theta} envelope={check}")

    e, i = float(x[cols.e]), float(x[cols.i])
    if ctx.contract.export_price < min(ctx.contract.import_price_day,
                                       ctx.contract.import_price_night):
        if min(e, i) > 1e-6 * max(1.0, e, i):
            raise SolverError("simultaneous import and export at the optimum")

    p_fut = (i - e) / ctx.delta_t_h
    p_blend = ctx.beta * ctx.realized_avg_power_kw + (1.0 - ctx.beta) * p_fut
    dp = max(0.0, p_blend - ctx.peak_kw)
    if cols.reserve:
        r_sym = float(x[cols.rsym])
        shortfall = max(0.0, ctx.committed_reserve_kw - r_sym)
    else:
        r_sym, shortfall = 0.0, max(0.0, ctx.committed_reserve_kw)

    return RtoActions(take(cols.she), take(cols.ste), take(cols.nst),
                      take(cols.cha), take(cols.dis), soc_end, e, i,
                      r_sym, shortfall, theta, float(sol.objective),
                      p_blend, dp)
