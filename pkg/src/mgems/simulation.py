"""Deterministic rolling simulator: controllers, physics, settlement, reports.

The loop walks the scenario minute by minute.  Every market-period boundary
it settles the period that just closed (energy bill at the calendar tariff,
peak increment against the ratcheting historical maximum, reserve revenue
and shortfall penalty), then, for the planning controller, refreshes the
24 h forecast, re-plans, and rebuilds the value function for the period now
opening.  Every minute the active controller produces set-points, which are
applied to the measured data with state-of-charge clipping and exchange-cap
remediation, and the market position accumulates.

Costs decompose exactly as in the result tables: ``c_t = c_E + c_p`` with
``c_p`` equal to the peak price times the total peak increment, both by
construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from mgems.config import CaseConfig
from mgems.domain import (
    DeviceFleet,
    GridContract,
    MicrogridState,
    import_price_at,
)
from mgems.forecast import make_forecaster
from mgems.opp import OppForecast, OppInstance, solve_opp
from mgems.rto import RtoActions, RtoContext, RtoForecast, RtpInfeasibleError, solve_rtp
from mgems.scenario import Scenario
from mgems.valuefn import generate_cuts, reachable_range

__all__ = [
    "CostLedger",
    "PeriodSettlement",
    "StepResult",
    "SimulationReport",
    "SimulationFault",
    "rbc_step",
    "apply_step",
    "settle_period",
    "simulate",
]

REPORT_FORMAT_VERSION = 1


class SimulationFault(RuntimeError):
    """Physical limits violated even after remediation."""


@dataclass(frozen=True)
class CostLedger:
    """Cost decomposition of one run, money in kEUR and energy in MWh.

    The two identities hold exactly: ``total_keur = energy_keur + peak_keur``
    and ``peak_keur = peak_price * delta_peak_kw / 1000``.
    """

    energy_keur: float
    delta_peak_kw: float
    peak_price: float
    import_mwh: float
    export_mwh: float

    @property
    def peak_keur(self) -> float:
        return self.peak_price * self.delta_peak_kw / 1000.0

    @property
    def total_keur(self) -> float:
        return self.energy_keur + self.peak_keur

    def as_dict(self) -> dict:
        return {
            "c_E_keur": self.energy_keur,
            "c_p_keur": self.peak_keur,
            "c_t_keur": self.total_keur,
            "delta_p_kw": self.delta_peak_kw,
            "I_tot_mwh": self.import_mwh,
            "E_tot_mwh": self.export_mwh,
        }


@dataclass(frozen=True)
class PeriodSettlement:
    """Outcome of closing one market period."""

    period_start: datetime
    import_kwh: float
    export_kwh: float
    avg_power_kw: float
    delta_peak_kw: float
    new_peak_kw: float
    energy_cost_eur: float
    peak_cost_eur: float
    reserve_revenue_eur: float
    shortfall_penalty_eur: float
    committed_reserve_kw: float
    realized_reserve_kw: float


def settle_period(import_kwh: float, export_kwh: float, device_cost_eur: float,
                  period_start: datetime, delta_tau_h: float, peak_kw: float,
                  committed_reserve_kw: float, realized_reserve_kw: float,
                  tso_signal: int, contract: GridContract) -> PeriodSettlement:
    """Close a market period: bill energy, ratchet the peak, settle reserve.

    The period's average net import power above the historical peak is billed
    once at the peak price, after which the reference ratchets up to it.
    Committed reserve earns its price; capability below the commitment pays
    the penalty unless the TSO activated (signal 0).
    """
    avg_power = (import_kwh - export_kwh) / delta_tau_h
    delta_peak = max(0.0, avg_power - peak_kw)
    new_peak = max(peak_kw, avg_power)
    revenue = contract.reserve_price_op * committed_reserve_kw
    shortfall = max(0.0, committed_reserve_kw - realized_reserve_kw)
    penalty = tso_signal * contract.reserve_penalty_rto * shortfall
    energy_cost = (import_kwh * import_price_at(period_start, contract)
                   - export_kwh * contract.export_price
                   + device_cost_eur - revenue + penalty)
    return PeriodSettlement(period_start, float(import_kwh), float(export_kwh),
                            float(avg_power), float(delta_peak), float(new_peak),
                            float(energy_cost), float(contract.peak_price * delta_peak),
                            float(revenue), float(penalty),
                            float(committed_reserve_kw), float(realized_reserve_kw))


def _idle_actions(fleet: DeviceFleet) -> RtoActions:
    n_sto = len(fleet.storage)
    z = np.zeros
    return RtoActions(z(len(fleet.sheddable_loads)), z(len(fleet.steerable_generators)),
                      z(len(fleet.non_steerable_generators)), z(n_sto), z(n_sto),
                      z(n_sto), 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def rbc_step(pv_kw: float, load_kw: float, state: MicrogridState,
             fleet: DeviceFleet, contract: GridContract,
             dt_h: float) -> RtoActions:
    """Priority rules: PV serves demand; surplus charges then exports;
    deficit discharges then imports.  No forecasts, no market information.
    """
    actions = _idle_actions(fleet)
    surplus = pv_kw - load_kw
    if surplus > 0:
        for d, dev in enumerate(fleet.storage):
            if surplus <= 0 or dev.p_cha_max <= 0:
                continue
            headroom_kw = (dev.s_max - state.soc[d]) / (dt_h * dev.eta_cha)
            p = min(surplus, dev.p_cha_max, max(headroom_kw, 0.0))
            actions.a_cha[d] = p / dev.p_cha_max
            surplus -= p
    else:
        deficit = -surplus
        for d, dev in enumerate(fleet.storage):
            if deficit <= 0 or dev.p_dis_max <= 0:
                continue
            available_kw = (state.soc[d] - dev.s_min) * dev.eta_dis / dt_h
            p = min(deficit, dev.p_dis_max, max(available_kw, 0.0))
            actions.a_dis[d] = p / dev.p_dis_max
            deficit -= p
    return actions


@dataclass
class StepResult:
    """Realized one-minute outcome after clipping and remediation."""

    import_kwh: float
    export_kwh: float
    soc_next: np.ndarray
    device_cost_eur: float
    pv_delivered_kw: float
    load_served_kw: float
    gen_kw: float
    charge_kw: float
    discharge_kw: float
    curtailed_kwh: float
    unserved_kwh: float
    events: list = field(default_factory=list)


def apply_step(actions: RtoActions, fleet: DeviceFleet, minute: int,
               state: MicrogridState, contract: GridContract,
               dt_h: float) -> StepResult:
    """Apply set-points to measured data for one step.

    Battery fractions are clipped to what the SOC window sustains over the
    step.  Grid exchange is the balance slack; exchange-cap violations are
    remediated in order: back off the battery, then curtail production, and
    shed load only as a last resort.  Every remediation is recorded.
    """
    events = []
    pv_by_dev = np.array([dev.series[minute] for dev in fleet.non_steerable_generators])
    nfl = sum(float(dev.series[minute]) for dev in fleet.non_flexible_loads)
    she_by_dev = np.array([dev.series[minute] for dev in fleet.sheddable_loads])
    cap_by_dev = np.array([dev.capacity[minute] for dev in fleet.steerable_generators])

    a_nst = np.clip(actions.a_nst, 0.0, 1.0)
    pv_delivered = float(((1.0 - a_nst) * pv_by_dev).sum())
    curtailed_kw = float((a_nst * pv_by_dev).sum())
    load_served = nfl + float(((1.0 - np.clip(actions.a_she, 0, 1)) * she_by_dev).sum())
    shed_kw = float((np.clip(actions.a_she, 0, 1) * she_by_dev).sum())
    gen = float((np.clip(actions.a_ste, 0, 1) * cap_by_dev).sum())

    cha_eff = np.zeros(len(fleet.storage))
    dis_eff = np.zeros(len(fleet.storage))
    for d, dev in enumerate(fleet.storage):
        want_cha = float(np.clip(actions.a_cha[d], 0.0, 1.0))
        want_dis = float(np.clip(actions.a_dis[d], 0.0, 1.0))
        if dev.p_cha_max > 0:
            room = max(dev.s_max - state.soc[d], 0.0)
            cha_eff[d] = min(want_cha, room / (dt_h * dev.p_cha_max * dev.eta_cha))
        if dev.p_dis_max > 0:
            avail = max(state.soc[d] - dev.s_min, 0.0)
            dis_eff[d] = min(want_dis, avail * dev.eta_dis / (dt_h * dev.p_dis_max))
        if cha_eff[d] < want_cha - 1e-12 or dis_eff[d] < want_dis - 1e-12:
            events.append(f"minute {minute}: battery {d} clipped to SOC window")

    def net_import():
        charge = sum(dev.p_cha_max * cha_eff[d] for d, dev in enumerate(fleet.storage))
        discharge = sum(dev.p_dis_max * dis_eff[d] for d, dev in enumerate(fleet.storage))
        return load_served + charge - pv_delivered - gen - discharge, charge, discharge

    net, charge, discharge = net_import()
    tol = 1e-9
    unserved_kw = 0.0
    if net > contract.import_cap_kw + tol:
        for d, dev in enumerate(fleet.storage):
            if net <= contract.import_cap_kw or dev.p_cha_max <= 0:
                break
            cut = min(cha_eff[d], (net - contract.import_cap_kw) / dev.p_cha_max)
            cha_eff[d] -= cut
            net -= cut * dev.p_cha_max
        if net > contract.import_cap_kw + tol:
            unserved_kw = net - contract.import_cap_kw
            load_served -= unserved_kw
            net = contract.import_cap_kw
            events.append(f"minute {minute}: shed {unserved_kw:.1f} kW at the import cap")
        else:
            events.append(f"minute {minute}: charging reduced at the import cap")
        _, charge, discharge = net_import()
    elif net < -contract.export_cap_kw - tol:
        for d, dev in enumerate(fleet.storage):
            if net >= -contract.export_cap_kw or dev.p_dis_max <= 0:
                break
            cut = min(dis_eff[d], (-contract.export_cap_kw - net) / dev.p_dis_max)
            dis_eff[d] -= cut
            net += cut * dev.p_dis_max
        if net < -contract.export_cap_kw - tol:
            extra = -contract.export_cap_kw - net
            pv_delivered -= extra
            curtailed_kw += extra
            net = -contract.export_cap_kw
            events.append(f"minute {minute}: curtailed {extra:.1f} kW at the export cap")
        else:
            events.append(f"minute {minute}: discharge reduced at the export cap")
        _, charge, discharge = net_import()

    if net > contract.import_cap_kw + 1e-6 or net < -contract.export_cap_kw - 1e-6:
        raise SimulationFault(f"minute {minute}: exchange cap violated after remediation")
    if load_served < -1e-9 or pv_delivered < -1e-9:
        raise SimulationFault(f"minute {minute}: remediation drove a flow negative")

    soc_next = state.soc.copy()
    fee = 0.0
    for d, dev in enumerate(fleet.storage):
        soc_next[d] += dt_h * (dev.p_cha_max * dev.eta_cha * cha_eff[d]
                               - dev.p_dis_max / dev.eta_dis * dis_eff[d])
        soc_next[d] = min(max(soc_next[d], dev.s_min), dev.s_max)
        fee += dev.usage_fee * dt_h * (dev.p_cha_max * dev.eta_cha * cha_eff[d]
                                       + dev.p_dis_max / dev.eta_dis * dis_eff[d])

    shed_cost = sum(dev.shed_price * float(np.clip(actions.a_she[d], 0, 1))
                    * she_by_dev[d] * dt_h
                    for d, dev in enumerate(fleet.sheddable_loads))
    gen_cost = sum(dev.gen_price * float(np.clip(actions.a_ste[d], 0, 1))
                   * cap_by_dev[d] * dt_h
                   for d, dev in enumerate(fleet.steerable_generators))
    curtail_cost = sum(dev.curtail_price * a_nst[d] * pv_by_dev[d] * dt_h
                       for d, dev in enumerate(fleet.non_steerable_generators))
    forced_curtail_kw = curtailed_kw - float((a_nst * pv_by_dev).sum())
    if forced_curtail_kw > 0 and fleet.non_steerable_generators:
        # cap remediation curtails the first producer
        curtail_cost += (fleet.non_steerable_generators[0].curtail_price
                         * forced_curtail_kw * dt_h)

    device_cost = fee + shed_cost + gen_cost + curtail_cost
    return StepResult(
        import_kwh=max(net, 0.0) * dt_h,
        export_kwh=max(-net, 0.0) * dt_h,
        soc_next=soc_next,
        device_cost_eur=device_cost,
        pv_delivered_kw=pv_delivered,
        load_served_kw=load_served,
        gen_kw=gen,
        charge_kw=charge,
        discharge_kw=discharge,
        curtailed_kwh=curtailed_kw * dt_h,
        unserved_kwh=unserved_kw * dt_h,
        events=events,
    )


@dataclass
class SimulationReport:
    """Everything one run produced; serializable and bit-reproducible."""

    controller: str
    config: dict
    ledger: CostLedger
    periods: list[PeriodSettlement]
    minute_soc: np.ndarray
    minute_import_kw: np.ndarray
    minute_export_kw: np.ndarray
    minute_theta: np.ndarray
    scenario_start: datetime
    events: list
    n_fallbacks: int
    format_version: int = REPORT_FORMAT_VERSION

    def summary(self) -> dict:
        d = self.ledger.as_dict()
        d.update({"controller": self.controller, "n_periods": len(self.periods),
                  "n_fallbacks": self.n_fallbacks, "n_events": len(self.events)})
        return d

    def to_json(self) -> str:
        payload = {
            "format_version": self.format_version,
            "controller": self.controller,
            "config": self.config,
            "ledger": self.ledger.as_dict(),
            "summary": self.summary(),
            "events": list(self.events),
            "periods": [
                {
                    "start": p.period_start.isoformat(),
                    "import_kwh": p.import_kwh,
                    "export_kwh": p.export_kwh,
                    "avg_power_kw": p.avg_power_kw,
                    "delta_peak_kw": p.delta_peak_kw,
                    "peak_after_kw": p.new_peak_kw,
                    "energy_cost_eur": p.energy_cost_eur,
                    "peak_cost_eur": p.peak_cost_eur,
                    "reserve_revenue_eur": p.reserve_revenue_eur,
                    "shortfall_penalty_eur": p.shortfall_penalty_eur,
                    "committed_reserve_kw": p.committed_reserve_kw,
                    "realized_reserve_kw": p.realized_reserve_kw,
                }
                for p in self.periods
            ],
        }
        return json.dumps(payload, sort_keys=True, indent=1)

    def periods_csv(self) -> str:
        header = ("period,start,import_kwh,export_kwh,avg_power_kw,delta_peak_kw,"
                  "peak_after_kw,energy_cost_eur,peak_cost_eur,cum_peak_cost_eur,"
                  "committed_reserve_kw,realized_reserve_kw")
        lines = [header]
        cum = 0.0
        for k, p in enumerate(self.periods):
            cum += p.peak_cost_eur
            lines.append(",".join(
                [str(k), p.period_start.isoformat()]
                + [repr(float(v)) for v in (
                    p.import_kwh, p.export_kwh, p.avg_power_kw,
                    p.delta_peak_kw, p.new_peak_kw, p.energy_cost_eur,
                    p.peak_cost_eur, cum, p.committed_reserve_kw,
                    p.realized_reserve_kw)]))
        return "\n".join(lines) + "\n"

    def timeseries_csv(self) -> str:
        n_sto = self.minute_soc.shape[0]
        header = ["minute", "timestamp", "import_kw", "export_kw", "theta_eur"]
        header += [f"soc_{d}_kwh" for d in range(n_sto)]
        lines = [",".join(header)]
        for k in range(self.minute_soc.shape[1]):
            t = self.scenario_start + timedelta(minutes=k)
            cells = [str(k), t.isoformat(), repr(float(self.minute_import_kw[k])),
                     repr(float(self.minute_export_kw[k])),
                     repr(float(self.minute_theta[k]))]
            cells += [repr(float(self.minute_soc[d, k])) for d in range(n_sto)]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        (out / "periods.csv").write_text(self.periods_csv())
        (out / "timeseries.csv").write_text(self.timeseries_csv())


def simulate(scenario: Scenario, config: CaseConfig) -> SimulationReport:
    """Run one controller over the scenario and settle every market period.

    Deterministic: identical scenario bytes, config, and seeds produce an
    identical report.  An infeasible real-time solve falls back to the
    priority rules for that minute and is logged, never fatal.
    """
    clock = config.clock
    contract = config.contract
    dtau_min = clock.delta_tau_min
    dt_h = clock.step_min / 60.0
    n = scenario.n_minutes
    if n % dtau_min != 0:
        raise ValueError("scenario must span whole market periods")
    if (scenario.start.hour * 60 + scenario.start.minute) % dtau_min != 0:
        raise ValueError("scenario must start on a market-period boundary")
    if clock.step_min != 1:
        raise ValueError("the simulator walks a one-minute grid")

    fleet = config.build_fleet(scenario)
    state = MicrogridState.initial(fleet, contract)
    planning = config.controller == "rto-op"
    forecaster = make_forecaster(config.forecaster, config.sigma, config.seed) \
        if planning else None

    energy_eur = 0.0
    import_kwh_total = 0.0
    export_kwh_total = 0.0
    initial_peak = state.peak_kw
    periods: list[PeriodSettlement] = []
    events: list[str] = []
    n_fallbacks = 0

    n_sto = len(fleet.storage)
    minute_soc = np.zeros((n_sto, n))
    minute_import = np.zeros(n)
    minute_export = np.zeros(n)
    minute_theta = np.zeros(n)

    vf = None
    period_device_cost = 0.0
    period_start_minute = 0
    realized_reserve = np.inf

    def close_period(start_minute: int):
        nonlocal energy_eur, import_kwh_total, export_kwh_total
        nonlocal period_device_cost, realized_reserve
        tso = scenario.tso_at(start_minute)
        realized = 0.0 if not np.isfinite(realized_reserve) else realized_reserve
        s = settle_period(state.period_import_kwh, state.period_export_kwh,
                          period_device_cost, scenario.time_at(start_minute),
                          clock.delta_tau_h, state.peak_kw,
                          state.committed_reserve_kw, realized, tso, contract)
        periods.append(s)
        energy_eur += s.energy_cost_eur
        import_kwh_total += s.import_kwh
        export_kwh_total += s.export_kwh
        state.peak_kw = s.new_peak_kw
        state.reset_period()
        period_device_cost = 0.0
        realized_reserve = np.inf

    for minute in range(n):
        if minute % dtau_min == 0:
            if minute > 0:
                close_period(period_start_minute)
            period_start_minute = minute
            if planning:
                issue = scenario.time_at(minute)
                fc = forecaster.forecast(scenario, issue, clock.n_periods, dtau_min)
                plan_inst = OppInstance(
                    start=issue, clock=clock, fleet=fleet, contract=contract,
                    forecast=OppForecast(nfl_total=fc.load_kw,
                                         she=np.zeros((0, clock.n_periods)),
                                         ste_cap=np.zeros((0, clock.n_periods)),
                                         nst=fc.pv_kw.reshape(1, -1)),
                    peak_kw=state.peak_kw,
                    reserve_enabled=config.reserve_enabled, bias=config.bias)
                plan = solve_opp(plan_inst, state.soc, solver=config.solver)
                state.committed_reserve_kw = float(plan.r_sym[0]) \
                    if config.reserve_enabled else 0.0

                vf_issue = issue + timedelta(minutes=dtau_min)
                vf_fc = forecaster.forecast(scenario, vf_issue, clock.n_periods,
                                            dtau_min)
                vf_inst = OppInstance(
                    start=vf_issue, clock=clock, fleet=fleet, contract=contract,
                    forecast=OppForecast(nfl_total=vf_fc.load_kw,
                                         she=np.zeros((0, clock.n_periods)),
                                         ste_cap=np.zeros((0, clock.n_periods)),
                                         nst=vf_fc.pv_kw.reshape(1, -1)),
                    peak_kw=state.peak_kw,
                    reserve_enabled=config.reserve_enabled, bias=config.bias)
                domain = reachable_range(state.soc, clock.delta_tau_h, fleet)
                s_star = np.clip(plan.soc[:, 0], domain[0], domain[1])
                vf = generate_cuts(vf_inst, domain, s_star,
                                   budget=config.cut_budget, eps=config.cut_eps,
                                   solver=config.solver)
                events.extend(f"{issue.isoformat()}: {e}" for e in vf.events)

        pv_now = float(scenario.pv_kw[minute])
        load_now = float(scenario.load_kw[minute])

        if planning:
            remaining_min = dtau_min - (minute % dtau_min)
            ctx = RtoContext(
                now=scenario.time_at(minute), delta_t_h=remaining_min / 60.0,
                clock=clock, fleet=fleet, contract=contract,
                soc=state.soc.copy(),
                forecast=RtoForecast(nfl_total=load_now,
                                     nst=np.array([pv_now])),
                vf=vf, peak_kw=state.peak_kw,
                committed_reserve_kw=state.committed_reserve_kw,
                realized_avg_power_kw=state.realized_avg_power_kw(),
                tso_signal=scenario.tso_at(period_start_minute),
                reserve_enabled=config.reserve_enabled, bias=config.bias)
            try:
                actions = solve_rtp(ctx, solver=config.solver)
                if config.reserve_enabled:
                    realized_reserve = min(realized_reserve, actions.r_sym_kw)
                minute_theta[minute] = actions.theta
            except RtpInfeasibleError:
                actions = rbc_step(pv_now, load_now, state, fleet, contract, dt_h)
                n_fallbacks += 1
                events.append(f"minute {minute}: infeasible RTP, priority-rule fallback")
        else:
            actions = rbc_step(pv_now, load_now, state, fleet, contract, dt_h)

        step = apply_step(actions, fleet, minute, state, contract, dt_h)
        events.extend(step.events)
        state.soc = step.soc_next
        state.period_import_kwh += step.import_kwh
        state.period_export_kwh += step.export_kwh
        state.elapsed_in_period_h += dt_h
        period_device_cost += step.device_cost_eur

        minute_soc[:, minute] = state.soc
        minute_import[minute] = step.import_kwh / dt_h
        minute_export[minute] = step.export_kwh / dt_h

    close_period(period_start_minute)

    ledger = CostLedger(
        energy_keur=float(energy_eur) / 1000.0,
        delta_peak_kw=float(state.peak_kw - initial_peak),
        peak_price=contract.peak_price,
        import_mwh=float(import_kwh_total) / 1000.0,
        export_mwh=float(export_kwh_total) / 1000.0,
    )
    return SimulationReport(
        controller=config.controller, config=config.to_dict(), ledger=ledger,
        periods=periods, minute_soc=minute_soc, minute_import_kw=minute_import,
        minute_export_kw=minute_export, minute_theta=minute_theta,
        scenario_start=scenario.start, events=events, n_fallbacks=n_fallbacks)
