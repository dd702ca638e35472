"""Operational planner: the market-period LP over the daily lookahead.

Builds one LP covering ``n_periods`` consecutive market periods (96 quarters
for the default 24 h horizon).  Decision variables per period are the device
action fractions, grid exchange energies, storage states of charge, the peak
variables, and (optionally) the symmetric-reserve variables.  The plan is
parametric in the initial state of charge: the first-period SOC recursion
rows carry dedicated labels so their duals (the marginal value of stored
energy) can be read off for value-function cuts.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from mgems.domain import DeviceFleet, GridContract, MarketClock, import_price_at
from mgems.lp import LpModel, LpSolution, LpStatus, SolverError, get_solver

__all__ = [
    "OppForecast",
    "OppInstance",
    "OpPlan",
    "OppInfeasibleError",
    "build_opp",
    "solve_opp",
    "plan_to_csv",
]


class OppInfeasibleError(RuntimeError):
    """Planner LP infeasible; carries the name of the binding constraint family."""

    def __init__(self, family: str):
        super().__init__(f"operational plan infeasible (binding family: {family})")
        self.family = family


@dataclass(frozen=True)
class OppForecast:
    """Per-period forecast arrays driving one planner instance (kW).

    ``nfl_total`` aggregates the must-serve loads; the other arrays carry one
    row per device of the matching class (possibly zero rows).
    """

    nfl_total: np.ndarray
    she: np.ndarray
    ste_cap: np.ndarray
    nst: np.ndarray

    @classmethod
    def from_series(cls, nfl_total, she=None, ste_cap=None, nst=None):
        nfl_total = np.asarray(nfl_total, dtype=float)
        n = nfl_total.shape[0]

        def block(x, count):
            if x is None:
                return np.zeros((count, n))
            x = np.asarray(x, dtype=float)
            return x.reshape(-1, n)

        return cls(nfl_total, block(she, 0), block(ste_cap, 0), block(nst, 0))

    @property
    def n_periods(self) -> int:
        return self.nfl_total.shape[0]


@dataclass(frozen=True)
class OppInstance:
    """Everything one planner solve needs besides the initial SOC."""

    start: datetime
    clock: MarketClock
    fleet: DeviceFleet
    contract: GridContract
    forecast: OppForecast
    peak_kw: float
    reserve_enabled: bool = False
    bias: float = 0.0

    def __post_init__(self):
        fc, fl = self.forecast, self.fleet
        if fc.she.shape[0] != len(fl.sheddable_loads):
            raise ValueError("sheddable forecast rows must match the fleet")
        if fc.ste_cap.shape[0] != len(fl.steerable_generators):
            raise ValueError("steerable forecast rows must match the fleet")
        if fc.nst.shape[0] != len(fl.non_steerable_generators):
            raise ValueError("non-steerable forecast rows must match the fleet")
        if self.peak_kw < 0:
            raise ValueError("historical peak must be >= 0")
        if fc.n_periods < 1:
            raise ValueError("need at least one period")

    @property
    def n_periods(self) -> int:
        return self.forecast.n_periods

    def period_start(self, t: int) -> datetime:
        return self.start + timedelta(minutes=t * self.clock.delta_tau_min)


class _Cols:
    """Column layout: one contiguous block per period."""

    def __init__(self, inst: OppInstance):
        f = inst.fleet
        self.n_she = len(f.sheddable_loads)
        self.n_ste = len(f.steerable_generators)
        self.n_nst = len(f.non_steerable_generators)
        self.n_sto = len(f.storage)
        self.reserve = inst.reserve_enabled
        base = self.n_she + self.n_ste + self.n_nst + 3 * self.n_sto + 4
        self.block = base + (2 * self.n_sto + 1 if self.reserve else 0)
        self.n_periods = inst.n_periods
        self.total = self.block * self.n_periods
        o = 0
        self.o_she = o; o += self.n_she
        self.o_ste = o; o += self.n_ste
        self.o_nst = o; o += self.n_nst
        self.o_cha = o; o += self.n_sto
        self.o_dis = o; o += self.n_sto
        self.o_soc = o; o += self.n_sto
        self.o_e = o; o += 1
        self.o_i = o; o += 1
        self.o_p = o; o += 1
        self.o_dp = o; o += 1
        if self.reserve:
            self.o_rup = o; o += self.n_sto
            self.o_rdn = o; o += self.n_sto
            self.o_rsym = o; o += 1

    def she(self, d, t): return t * self.block + self.o_she + d
    def ste(self, d, t): return t * self.block + self.o_ste + d
    def nst(self, d, t): return t * self.block + self.o_nst + d
    def cha(self, d, t): return t * self.block + self.o_cha + d
    def dis(self, d, t): return t * self.block + self.o_dis + d
    def soc(self, d, t): return t * self.block + self.o_soc + d
    def e(self, t): return t * self.block + self.o_e
    def i(self, t): return t * self.block + self.o_i
    def p(self, t): return t * self.block + self.o_p
    def dp(self, t): return t * self.block + self.o_dp
    def rup(self, d, t): return t * self.block + self.o_rup + d
    def rdn(self, d, t): return t * self.block + self.o_rdn + d
    def rsym(self, t): return t * self.block + self.o_rsym


def build_opp(instance: OppInstance) -> LpModel:
    """Assemble the planner LP.

    Per period: the energy balance, exchange caps, SOC recursions (the
    first-period row per device is labeled ``("soc_init", d)`` and its RHS is
    the initial-SOC parameter), the peak rows, and, when the reserve product
    is traded, the six reserve rows.  A terminal SOC equality is appended for
    devices that configure a target end state.
    """
    cols = _Cols(instance)
    fleet, contract, fc = instance.fleet, instance.contract, instance.forecast
    n, dtau = instance.n_periods, instance.clock.delta_tau_h

    c = np.zeros(cols.total)
    lo = np.zeros(cols.total)
    hi = np.ones(cols.total)

    import_price = np.array(
        [import_price_at(instance.period_start(t), contract) for t in range(n)]
    )

    for t in range(n):
        for d, dev in enumerate(fleet.sheddable_loads):
            c[cols.she(d, t)] = dtau * dev.shed_price * fc.she[d, t]
        for d, dev in enumerate(fleet.steerable_generators):
            c[cols.ste(d, t)] = dtau * dev.gen_price * fc.ste_cap[d, t]
        for d, dev in enumerate(fleet.non_steerable_generators):
            c[cols.nst(d, t)] = dtau * dev.curtail_price * fc.nst[d, t]
        for d, dev in enumerate(fleet.storage):
            c[cols.cha(d, t)] = dtau * dev.usage_fee * dev.p_cha_max * dev.eta_cha
            c[cols.dis(d, t)] = dtau * dev.usage_fee * dev.p_dis_max / dev.eta_dis
            c[cols.soc(d, t)] = -instance.bias
            lo[cols.soc(d, t)] = dev.s_min
            hi[cols.soc(d, t)] = dev.s_max
        c[cols.e(t)] = -contract.export_price
        c[cols.i(t)] = import_price[t]
        lo[cols.e(t)], hi[cols.e(t)] = 0.0, np.inf
        lo[cols.i(t)], hi[cols.i(t)] = 0.0, np.inf
        lo[cols.p(t)], hi[cols.p(t)] = -np.inf, np.inf
        c[cols.dp(t)] = contract.peak_price
        lo[cols.dp(t)], hi[cols.dp(t)] = 0.0, np.inf
        if cols.reserve:
            for d in range(cols.n_sto):
                lo[cols.rup(d, t)], hi[cols.rup(d, t)] = 0.0, np.inf
                lo[cols.rdn(d, t)], hi[cols.rdn(d, t)] = 0.0, np.inf
            c[cols.rsym(t)] = -contract.reserve_price_op
            lo[cols.rsym(t)], hi[cols.rsym(t)] = 0.0, np.inf

    rows, senses, rhs, labels = [], [], [], []

    def add_row(coefs: dict, sense: str, b: float, label):
        row = np.zeros(cols.total)
        for j, v in coefs.items():
            row[j] += v
        rows.append(row)
        senses.append(sense)
        rhs.append(b)
        labels.append(label)

    for t in range(n):
        # energy balance: net export power equals generation minus load minus
        # net battery charging
        bal = {cols.e(t): 1.0 / dtau, cols.i(t): -1.0 / dtau}
        const = 0.0
        for d in range(cols.n_nst):
            bal[cols.nst(d, t)] = fc.nst[d, t]
            const += fc.nst[d, t]
        for d in range(cols.n_ste):
            bal[cols.ste(d, t)] = -fc.ste_cap[d, t]
        for d in range(cols.n_she):
            bal[cols.she(d, t)] = -fc.she[d, t]
            const -= fc.she[d, t]
        const -= fc.nfl_total[t]
        for d, dev in enumerate(fleet.storage):
            bal[cols.cha(d, t)] = dev.p_cha_max
            bal[cols.dis(d, t)] = -dev.p_dis_max
        add_row(bal, "E", const, ("bal", t))

        add_row({cols.e(t): 1.0 / dtau, cols.i(t): -1.0 / dtau}, "L",
                contract.export_cap_kw, ("ecap", t))
        add_row({cols.i(t): 1.0 / dtau, cols.e(t): -1.0 / dtau}, "L",
                contract.import_cap_kw, ("icap", t))

        for d, dev in enumerate(fleet.storage):
            coefs = {
                cols.soc(d, t): 1.0,
                cols.cha(d, t): -dtau * dev.p_cha_max * dev.eta_cha,
                cols.dis(d, t): dtau * dev.p_dis_max / dev.eta_dis,
            }
            if t == 0:
                # parametric row: rhs is the initial SOC, dual is the
                # marginal value of stored energy
                add_row(coefs, "E", dev.s_init, ("soc_init", d))
            else:
                coefs[cols.soc(d, t - 1)] = -1.0
                add_row(coefs, "E", 0.0, ("soc", d, t))

        add_row({cols.i(t): 1.0 / dtau, cols.e(t): -1.0 / dtau, cols.p(t): -1.0},
                "L", 0.0, ("peak_p", t))
        add_row({cols.p(t): 1.0, cols.dp(t): -1.0}, "L", instance.peak_kw,
                ("peak_dp", t))

        if cols.reserve:
            for d, dev in enumerate(fleet.storage):
                k_dis = dev.eta_dis / dtau
                add_row({cols.rup(d, t): 1.0, cols.soc(d, t): -k_dis}, "L",
                        -k_dis * dev.s_min, ("r_up_soc", d, t))
                add_row({cols.rup(d, t): 1.0, cols.dis(d, t): dev.p_dis_max}, "L",
                        dev.p_dis_max, ("r_up_pow", d, t))
                k_cha = 1.0 / (dev.eta_cha * dtau)
                add_row({cols.rdn(d, t): 1.0, cols.soc(d, t): k_cha}, "L",
                        k_cha * dev.s_max, ("r_dn_soc", d, t))
                add_row({cols.rdn(d, t): 1.0, cols.cha(d, t): dev.p_cha_max}, "L",
                        dev.p_cha_max, ("r_dn_pow", d, t))
            up = {cols.rsym(t): 1.0}
            dn = {cols.rsym(t): 1.0}
            up_const = dn_const = 0.0
            for d in range(cols.n_sto):
                up[cols.rup(d, t)] = -1.0
                dn[cols.rdn(d, t)] = -1.0
            for d in range(cols.n_ste):
                up[cols.ste(d, t)] = fc.ste_cap[d, t]
                up_const += fc.ste_cap[d, t]
                dn[cols.ste(d, t)] = -fc.ste_cap[d, t]
            for d in range(cols.n_nst):
                up[cols.nst(d, t)] = fc.nst[d, t]
                up_const += fc.nst[d, t]
                dn[cols.nst(d, t)] = -fc.nst[d, t]
            for d in range(cols.n_she):
                up[cols.she(d, t)] = fc.she[d, t]
                up_const += fc.she[d, t]
                dn[cols.she(d, t)] = -fc.she[d, t]
            add_row(up, "L", up_const, ("r_sym_up", t))
            add_row(dn, "L", 0.0, ("r_sym_dn", t))

    for d, dev in enumerate(fleet.storage):
        if dev.s_end is not None:
            add_row({cols.soc(d, n - 1): 1.0}, "E", dev.s_end, ("soc_end", d))

    return LpModel(c, lo, hi, np.array(rows), tuple(senses), np.array(rhs),
                   tuple(labels))


@dataclass
class OpPlan:
    """Optimal planner output: per-period actions, flows, SOC, and duals.

    ``peak_kw``/``delta_peak_kw`` are recomputed from the flows so the report
    stays deterministic even where the LP leaves them degenerate.
    """

    start: datetime
    delta_tau_h: float
    a_she: np.ndarray
    a_ste: np.ndarray
    a_nst: np.ndarray
    a_cha: np.ndarray
    a_dis: np.ndarray
    soc: np.ndarray
    e_kwh: np.ndarray
    i_kwh: np.ndarray
    peak_kw: np.ndarray
    delta_peak_kw: np.ndarray
    r_up: np.ndarray
    r_dn: np.ndarray
    r_sym: np.ndarray
    objective: float
    initial_soc_duals: np.ndarray

    @property
    def n_periods(self) -> int:
        return self.e_kwh.shape[0]


def solve_opp(instance: OppInstance, initial_soc: np.ndarray | None = None,
              solver=None, model: LpModel | None = None) -> OpPlan:
    """Solve the planner, parametric in the initial state of charge.

    ``model`` may carry a previously built LP for the same instance; only the
    initial-SOC right-hand sides are rewritten, which keeps repeated
    value-function probes cheap.
    """
    fleet = instance.fleet
    if model is None:
        model = build_opp(instance)
    if initial_soc is not None:
        initial_soc = np.asarray(initial_soc, dtype=float)
        s_lo, s_hi = fleet.soc_bounds()
        if np.any(initial_soc < s_lo - 1e-9) or np.any(initial_soc > s_hi + 1e-9):
            raise ValueError(f"initial SOC {initial_soc} outside device bounds")
        model = model.with_rhs({("soc_init", d): float(initial_soc[d])
                                for d in range(fleet.n_storage)})

    sol = get_solver(solver).solve(model)
    if sol.status is LpStatus.INFEASIBLE:
        raise OppInfeasibleError(_diagnose_infeasibility(instance, model, solver))
    if sol.status is not LpStatus.OPTIMAL:
        raise SolverError(f"planner LP ended {sol.status.value}")
    return _extract_plan(instance, model, sol)


def _diagnose_infeasibility(instance, model, solver) -> str:
    """Name the constraint family that blocks feasibility (best effort)."""
    solver = get_solver(solver)
    if any(dev.s_end is not None for dev in instance.fleet.storage):
        relaxed = [lab for lab in model.row_labels
                   if isinstance(lab, tuple) and lab[0] == "soc_end"]
        trial = LpModel(model.c, model.lo, model.hi,
                        np.delete(model.a, [model.row_index(l) for l in relaxed], axis=0),
                        tuple(s for i, s in enumerate(model.senses)
                              if model.row_labels[i] not in relaxed),
                        np.delete(model.b, [model.row_index(l) for l in relaxed]),
                        tuple(l for l in model.row_labels if l not in relaxed))
        if solver.solve(trial).status is LpStatus.OPTIMAL:
            return "terminal state of charge"
    big = model.b.copy()
    touched = False
    for i, lab in enumerate(model.row_labels):
        if isinstance(lab, tuple) and lab[0] in ("ecap", "icap"):
            big[i] = 1e12
            touched = True
    if touched:
        trial = LpModel(model.c, model.lo, model.hi, model.a, model.senses, big,
                        model.row_labels)
        if solver.solve(trial).status is LpStatus.OPTIMAL:
            return "exchange caps"
    return "energy balance"


def _extract_plan(instance: OppInstance, model: LpModel, sol: LpSolution) -> OpPlan:
    cols = _Cols(instance)
    fleet, n = instance.fleet, instance.n_periods
    x = sol.x
    dtau = instance.clock.delta_tau_h

    def grid(fn, count):
        return np.array([[x[fn(d, t)] for t in range(n)] for d in range(count)]) \
            if count else np.zeros((0, n))

    a_she = grid(cols.she, cols.n_she)
    a_ste = grid(cols.ste, cols.n_ste)
    a_nst = grid(cols.nst, cols.n_nst)
    a_cha = grid(cols.cha, cols.n_sto)
    a_dis = grid(cols.dis, cols.n_sto)
    soc = grid(cols.soc, cols.n_sto)
    e = np.array([x[cols.e(t)] for t in range(n)])
    i = np.array([x[cols.i(t)] for t in range(n)])
    if cols.reserve:
        r_up = grid(cols.rup, cols.n_sto)
        r_dn = grid(cols.rdn, cols.n_sto)
        r_sym = np.array([x[cols.rsym(t)] for t in range(n)])
    else:
        r_up = np.zeros((cols.n_sto, n))
        r_dn = np.zeros((cols.n_sto, n))
        r_sym = np.zeros(n)

    if instance.contract.export_price < instance.contract.import_price_day \
            and instance.contract.export_price < instance.contract.import_price_night:
        both = np.minimum(e, i)
        if np.any(both > 1e-6 * max(1.0, e.max(initial=0), i.max(initial=0))):
            raise SolverError("simultaneous import and export in an optimal plan")

    peak = (i - e) / dtau
    dpeak = np.maximum(0.0, peak - instance.peak_kw)
    duals = np.array([sol.duals[("soc_init", d)] for d in range(cols.n_sto)])

    return OpPlan(instance.start, dtau, a_she, a_ste, a_nst, a_cha, a_dis, soc,
                  e, i, peak, dpeak, r_up, r_dn, r_sym, float(sol.objective), duals)


def plan_to_csv(plan: OpPlan, path) -> None:
    """Dump a plan as one CSV row per market period."""
    header = ["period", "start", "e_kwh", "i_kwh", "peak_kw", "delta_peak_kw", "r_sym_kw"]
    for arr, tag in ((plan.a_she, "a_she"), (plan.a_ste, "a_ste"),
                     (plan.a_nst, "a_nst"), (plan.a_cha, "a_cha"),
                     (plan.a_dis, "a_dis"), (plan.soc, "soc_kwh")):
        header.extend(f"{tag}_{d}" for d in range(arr.shape[0]))
    lines = [",".join(header)]
    for t in range(plan.n_periods):
        start = plan.start + timedelta(hours=t * plan.delta_tau_h)
        cells = [str(t), start.isoformat(), repr(float(plan.e_kwh[t])),
                 repr(float(plan.i_kwh[t])), repr(float(plan.peak_kw[t])),
                 repr(float(plan.delta_peak_kw[t])), repr(float(plan.r_sym[t]))]
        for arr in (plan.a_she, plan.a_ste, plan.a_nst, plan.a_cha, plan.a_dis, plan.soc):
            cells.extend(repr(float(arr[d, t])) for d in range(arr.shape[0]))
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
