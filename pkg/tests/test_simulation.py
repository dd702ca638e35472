"""Simulator tests: priority rules, physics, settlement, and full-loop invariants."""

from datetime import timedelta

import numpy as np
import pytest

from conftest import MONDAY, table_battery, table_contract
from mgems.config import case_preset
from mgems.domain import (
    DeviceFleet,
    MicrogridState,
    NonFlexibleLoad,
    NonSteerableGenerator,
    StorageDevice,
)
from mgems.rto import RtoActions
from mgems.scenario import Scenario, synth_scenario
from mgems.simulation import (
    CostLedger,
    apply_step,
    rbc_step,
    settle_period,
    simulate,
)

DT = 1.0 / 60.0


def sim_fleet(n_minutes=60, pv=None, load=None, battery=None):
    pv = pv if pv is not None else np.zeros(n_minutes)
    load = load if load is not None else np.zeros(n_minutes)
    return DeviceFleet(
        non_flexible_loads=(NonFlexibleLoad(series=np.asarray(load, float)),),
        non_steerable_generators=(NonSteerableGenerator(series=np.asarray(pv, float)),),
        storage=(battery or table_battery(),),
    )


def idle_actions(fleet):
    n = len(fleet.storage)
    return RtoActions(np.zeros(0), np.zeros(0), np.zeros(1), np.zeros(n),
                      np.zeros(n), np.zeros(n), 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                      0.0, 0.0)


def state_with(fleet, soc):
    st = MicrogridState.initial(fleet, table_contract())
    st.soc = np.asarray(soc, dtype=float)
    return st


class TestRbcStep:
    def test_surplus_charges_before_export(self):
        fleet = sim_fleet()
        st = state_with(fleet, [100.0])
        act = rbc_step(300.0, 100.0, st, fleet, table_contract(), DT)
        assert act.a_cha[0] * 1350.0 == pytest.approx(200.0)
        assert act.a_dis[0] == 0.0

    def test_deficit_imports_when_empty(self):
        fleet = sim_fleet(load=np.full(60, 100.0), battery=table_battery(s_init=0.0))
        st = state_with(fleet, [0.0])
        act = rbc_step(0.0, 100.0, st, fleet, table_contract(), DT)
        assert act.a_dis[0] == 0.0
        step = apply_step(act, fleet, 0, st, table_contract(), DT)
        assert step.import_kwh == pytest.approx(100.0 * DT)

    def test_full_battery_exports_surplus(self):
        fleet = sim_fleet(pv=np.full(60, 300.0), load=np.full(60, 100.0),
                          battery=table_battery(s_init=1350.0))
        st = state_with(fleet, [1350.0])
        act = rbc_step(300.0, 100.0, st, fleet, table_contract(), DT)
        assert act.a_cha[0] == pytest.approx(0.0)
        step = apply_step(act, fleet, 0, st, table_contract(), DT)
        assert step.export_kwh == pytest.approx(200.0 * DT)

    def test_deficit_discharges_battery_first(self):
        fleet = sim_fleet(load=np.full(60, 100.0))
        st = state_with(fleet, [500.0])
        act = rbc_step(0.0, 100.0, st, fleet, table_contract(), DT)
        assert act.a_dis[0] * 1350.0 == pytest.approx(100.0)
        step = apply_step(act, fleet, 0, st, table_contract(), DT)
        assert step.import_kwh == pytest.approx(0.0, abs=1e-12)


class TestApplyStep:
    def test_idle_balanced_leaves_state(self):
        fleet = sim_fleet(pv=np.full(60, 150.0), load=np.full(60, 150.0))
        st = state_with(fleet, [100.0])
        step = apply_step(idle_actions(fleet), fleet, 0, st, table_contract(), DT)
        assert step.import_kwh == step.export_kwh == 0.0
        assert step.soc_next[0] == 100.0

    def test_full_charge_one_minute(self):
        # 1350 kW for one minute at 95% stores 21.375 kWh
        fleet = sim_fleet()
        st = state_with(fleet, [100.0])
        act = idle_actions(fleet)
        act.a_cha[0] = 1.0
        step = apply_step(act, fleet, 0, st, table_contract(), DT)
        assert step.soc_next[0] == pytest.approx(100.0 + 21.375, abs=1e-12)
        assert step.import_kwh == pytest.approx(1350.0 * DT)

    def test_discharge_clipped_when_empty(self):
        fleet = sim_fleet(load=np.full(60, 100.0), battery=table_battery(s_init=0.0))
        st = state_with(fleet, [0.0])
        act = idle_actions(fleet)
        act.a_dis[0] = 1.0
        step = apply_step(act, fleet, 0, st, table_contract(), DT)
        assert step.discharge_kw == pytest.approx(0.0, abs=1e-12)
        assert step.import_kwh == pytest.approx(100.0 * DT)
        assert step.events  # the clip is recorded

    def test_charge_clipped_near_full(self):
        battery = table_battery(s_init=1349.9)
        fleet = sim_fleet(battery=battery)
        st = state_with(fleet, [1349.9])
        act = idle_actions(fleet)
        act.a_cha[0] = 1.0
        step = apply_step(act, fleet, 0, st, table_contract(), DT)
        assert step.soc_next[0] == pytest.approx(1350.0, abs=1e-9)

    def test_import_cap_remediation_reduces_charging(self):
        contract = table_contract()
        fleet = sim_fleet(load=np.full(60, 400.0))
        st = state_with(fleet, [100.0])
        act = idle_actions(fleet)
        act.a_cha[0] = 1.0  # 400 + 1350 > 1500 cap
        step = apply_step(act, fleet, 0, st, contract, DT)
        assert step.import_kwh <= contract.import_cap_kw * DT + 1e-9
        assert any("import cap" in e for e in step.events)
        assert step.unserved_kwh == 0.0

    def test_export_cap_remediation_curtails(self):
        contract = table_contract()
        fleet = sim_fleet(pv=np.full(60, 1400.0),
                          battery=table_battery(s_init=1000.0))
        st = state_with(fleet, [1000.0])
        act = idle_actions(fleet)
        act.a_dis[0] = 1.0  # 1400 + 1350 > 1500 cap
        step = apply_step(act, fleet, 0, st, contract, DT)
        assert step.export_kwh <= contract.export_cap_kw * DT + 1e-9
        assert step.events

    def test_energy_conservation(self, rng):
        fleet = sim_fleet(pv=rng.uniform(0, 400, 60), load=rng.uniform(0, 400, 60))
        st = state_with(fleet, [600.0])
        for minute in range(0, 60, 7):
            act = idle_actions(fleet)
            act.a_cha[0] = float(rng.uniform(0, 1))
            act.a_dis[0] = float(rng.uniform(0, 0.3))
            step = apply_step(act, fleet, minute, st, table_contract(), DT)
            net = (step.import_kwh - step.export_kwh) / DT
            residual = (net + step.pv_delivered_kw + step.gen_kw
                        + step.discharge_kw - step.charge_kw - step.load_served_kw)
            assert abs(residual) <= 1e-9


class TestSettlement:
    def test_peak_increment_priced_once(self):
        s = settle_period(import_kwh=167.0 * 0.25, export_kwh=0.0,
                          device_cost_eur=0.0, period_start=MONDAY,
                          delta_tau_h=0.25, peak_kw=150.0,
                          committed_reserve_kw=0.0, realized_reserve_kw=0.0,
                          tso_signal=1, contract=table_contract())
        assert s.avg_power_kw == pytest.approx(167.0)
        assert s.delta_peak_kw == pytest.approx(17.0)
        assert s.peak_cost_eur == pytest.approx(40.0 * 17.0)
        assert s.new_peak_kw == pytest.approx(167.0)

    def test_below_peak_costs_nothing(self):
        s = settle_period(100.0 * 0.25, 0.0, 0.0, MONDAY, 0.25, 150.0,
                          0.0, 0.0, 1, table_contract())
        assert s.delta_peak_kw == 0.0
        assert s.peak_cost_eur == 0.0
        assert s.new_peak_kw == 150.0

    def test_reserve_met_no_penalty(self):
        contract = table_contract(reserve_price=20.0)
        s = settle_period(0.0, 0.0, 0.0, MONDAY, 0.25, 150.0,
                          committed_reserve_kw=100.0, realized_reserve_kw=100.0,
                          tso_signal=1, contract=contract)
        assert s.shortfall_penalty_eur == 0.0
        assert s.reserve_revenue_eur == pytest.approx(2000.0)

    def test_shortfall_penalized_when_armed(self):
        contract = table_contract(reserve_price=20.0)
        s = settle_period(0.0, 0.0, 0.0, MONDAY, 0.25, 150.0,
                          committed_reserve_kw=100.0, realized_reserve_kw=40.0,
                          tso_signal=1, contract=contract)
        assert s.shortfall_penalty_eur == pytest.approx(20.0 * 60.0)
        s0 = settle_period(0.0, 0.0, 0.0, MONDAY, 0.25, 150.0,
                           committed_reserve_kw=100.0, realized_reserve_kw=40.0,
                           tso_signal=0, contract=contract)
        assert s0.shortfall_penalty_eur == 0.0

    def test_table_pairing_40_per_kw_times_167(self):
        # the published RBC case-1 peak pairing: 40 EUR/kW x 167 kW = 6.68 kEUR
        ledger = CostLedger(energy_keur=10.13, delta_peak_kw=167.0,
                            peak_price=40.0, import_mwh=61.0, export_mwh=0.0)
        assert ledger.peak_keur == pytest.approx(6.68)
        assert ledger.total_keur == pytest.approx(16.81)

    def test_night_tariff_applied(self):
        night = MONDAY.replace(hour=22)
        s = settle_period(10.0, 0.0, 0.0, night, 0.25, 1e9, 0.0, 0.0, 1,
                          table_contract())
        assert s.energy_cost_eur == pytest.approx(10.0 * 0.12)


def quick_config(**kw):
    base = dict(controller="rbc", cut_budget=6, cut_eps=0.5)
    base.update(kw)
    return case_preset(1, **base)


class TestSimulate:
    def test_balanced_scenario_costs_nothing(self):
        n = 4 * 15
        scn = Scenario(MONDAY, np.full(n, 120.0), np.full(n, 120.0))
        for controller in ("rbc", "rto-op"):
            cfg = quick_config(controller=controller,
                               storage=(table_battery(s_init=0.0),))
            rep = simulate(scn, cfg)
            assert rep.ledger.energy_keur == pytest.approx(0.0, abs=1e-12)
            assert rep.ledger.peak_keur == 0.0
            assert rep.ledger.delta_peak_kw == 0.0

    def test_ledger_identities_and_invariants(self):
        scn = synth_scenario(seed=3, days=1)
        n = 2 * 60  # two hours
        scn = Scenario(scn.start, scn.pv_kw[:n], scn.load_kw[:n], scn.tso[:n])
        rep = simulate(scn, quick_config())
        led = rep.ledger
        assert led.total_keur == led.energy_keur + led.peak_keur
        assert led.peak_keur == led.peak_price * led.delta_peak_kw / 1000.0
        assert led.delta_peak_kw >= 0.0
        assert led.import_mwh == pytest.approx(
            sum(p.import_kwh for p in rep.periods) / 1000.0)
        assert led.export_mwh == pytest.approx(
            sum(p.export_kwh for p in rep.periods) / 1000.0)
        peaks = [p.new_peak_kw for p in rep.periods]
        assert all(a <= b + 1e-12 for a, b in zip(peaks, peaks[1:]))

    def test_soc_stays_in_bounds(self):
        scn = synth_scenario(seed=4, days=1)
        n = 2 * 60
        scn = Scenario(scn.start, scn.pv_kw[:n], scn.load_kw[:n], scn.tso[:n])
        cfg = quick_config(controller="rto-op")
        rep = simulate(scn, cfg)
        assert rep.minute_soc.min() >= -1e-9
        assert rep.minute_soc.max() <= 1350.0 + 1e-9

    def test_rbc_priority_invariant(self):
        scn = synth_scenario(seed=5, days=1)
        rep = simulate(scn, quick_config())
        soc = rep.minute_soc[0]
        imp = rep.minute_import_kw
        exp = rep.minute_export_kw
        for k in range(len(imp)):
            prev = 100.0 if k == 0 else soc[k - 1]
            if imp[k] > 1e-9 and scn.load_kw[k] - scn.pv_kw[k] < 1350.0:
                assert soc[k] <= 1e-6, f"minute {k}: imported with charge left"
            if exp[k] > 1e-9 and scn.pv_kw[k] - scn.load_kw[k] < 1350.0:
                assert prev >= 1350.0 - 1e-6 or soc[k] >= 1350.0 - 1e-6

    def test_deterministic_reports(self):
        scn = synth_scenario(seed=6, days=1)
        n = 60
        scn = Scenario(scn.start, scn.pv_kw[:n], scn.load_kw[:n], scn.tso[:n])
        cfg = quick_config(controller="rto-op", forecaster="noisy", sigma=0.2, seed=7)
        r1 = simulate(scn, cfg)
        r2 = simulate(scn, cfg)
        assert r1.to_json() == r2.to_json()
        assert r1.periods_csv() == r2.periods_csv()
        assert r1.timeseries_csv() == r2.timeseries_csv()

    def test_report_files_written(self, tmp_path):
        n = 30
        scn = Scenario(MONDAY, np.full(n, 50.0), np.full(n, 80.0))
        rep = simulate(scn, quick_config())
        rep.write(tmp_path)
        assert (tmp_path / "report.json").exists()
        assert (tmp_path / "periods.csv").exists()
        assert (tmp_path / "timeseries.csv").exists()

    def test_misaligned_scenario_rejected(self):
        scn = Scenario(MONDAY + timedelta(minutes=7), np.zeros(60), np.zeros(60))
        with pytest.raises(ValueError, match="boundary"):
            simulate(scn, quick_config())
        scn2 = Scenario(MONDAY, np.zeros(50), np.zeros(50))
        with pytest.raises(ValueError, match="whole market periods"):
            simulate(scn2, quick_config())
