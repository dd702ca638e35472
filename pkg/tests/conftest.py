"""Shared builders for the test suite."""

from datetime import datetime, timezone

import numpy as np
import pytest

from mgems.domain import (
    DeviceFleet,
    GridContract,
    MarketClock,
    NonSteerableGenerator,
    StorageDevice,
)
from mgems.opp import OppForecast, OppInstance

MONDAY = datetime(2026, 5, 4, 0, 0, tzinfo=timezone.utc)
WEDNESDAY_NOON = datetime(2026, 5, 6, 12, 0, tzinfo=timezone.utc)


def table_battery(s_init=100.0, s_end=None, usage_fee=0.0):
    """The case-study battery: 1350 kWh, 1350 kW both ways, 95% efficiencies."""
    return StorageDevice(s_max=1350.0, s_min=0.0, p_cha_max=1350.0,
                         p_dis_max=1350.0, eta_cha=0.95, eta_dis=0.95,
                         s_init=s_init, s_end=s_end, usage_fee=usage_fee)


def table_contract(reserve_price=0.0):
    """Case-study tariffs and peak billing."""
    return GridContract(export_price=0.035, import_price_day=0.2,
                        import_price_night=0.12, peak_price=40.0,
                        initial_peak_kw=150.0, import_cap_kw=1500.0,
                        export_cap_kw=1500.0, reserve_price_op=reserve_price,
                        reserve_penalty_rto=reserve_price)


def pv_battery_fleet(batteries=None, curtail_price=0.0):
    batteries = batteries if batteries is not None else (table_battery(),)
    pv = NonSteerableGenerator(series=np.zeros(0), curtail_price=curtail_price)
    return DeviceFleet(non_steerable_generators=(pv,), storage=tuple(batteries))


def make_instance(pv_kw, load_kw, *, start=WEDNESDAY_NOON, batteries=None,
                  contract=None, clock=None, peak_kw=None, reserve=False,
                  bias=0.0, curtail_price=0.0):
    """Planner instance over len(load_kw) periods with one PV and one load."""
    clock = clock or MarketClock()
    contract = contract or table_contract(20.0 if reserve else 0.0)
    fleet = pv_battery_fleet(batteries, curtail_price)
    load = np.asarray(load_kw, dtype=float)
    pv = np.broadcast_to(np.asarray(pv_kw, dtype=float), load.shape)
    fc = OppForecast(nfl_total=load, she=np.zeros((0, len(load))),
                     ste_cap=np.zeros((0, len(load))), nst=pv.reshape(1, -1))
    return OppInstance(start=start, clock=clock, fleet=fleet, contract=contract,
                       forecast=fc,
                       peak_kw=contract.initial_peak_kw if peak_kw is None else peak_kw,
                       reserve_enabled=reserve, bias=bias)


def random_instance(rng, n_periods=16, reserve=False, s_init=None):
    """Random one-battery instance with plausible magnitudes."""
    load = rng.uniform(50, 400, size=n_periods)
    pv = rng.uniform(0, 500, size=n_periods)
    s_init = float(rng.uniform(50, 1300)) if s_init is None else s_init
    battery = table_battery(s_init=s_init)
    return make_instance(pv, load, batteries=(battery,),
                         peak_kw=float(rng.uniform(80, 250)), reserve=reserve)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
