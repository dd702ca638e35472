"""Case configuration: presets, validation, and YAML round-trips.

A config bundles the market clock, the grid contract, the storage fleet,
controller and forecaster selection, and the value-function knobs.  The
three bundled presets reproduce the case-study parameter table: PV
capacities of 400 / 875 / 1750 kW against a 1000 kW consumption scale and a
1350 kWh battery; day/night import prices 0.2/0.12, export 0.035, peak price
40 EUR/kW against a 150 kW starting peak, 1500 kW exchange caps, and a
20 EUR/kW symmetric-reserve price used when the reserve mechanism is on.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import yaml

from mgems.domain import (
    DeviceFleet,
    GridContract,
    MarketClock,
    NonFlexibleLoad,
    NonSteerableGenerator,
    StorageDevice,
)
from mgems.scenario import CASE_PV_CAPACITY, Scenario

__all__ = ["CaseConfig", "case_preset", "load_config", "save_config"]

FORMAT_VERSION = 1

CONTROLLERS = ("rbc", "rto-op")
FORECASTERS = ("perfect", "persistence", "noisy")
SOLVERS = ("highs", "simplex")


@dataclass(frozen=True)
class CaseConfig:
    clock: MarketClock
    contract: GridContract
    storage: tuple[StorageDevice, ...]
    pv_capacity_kw: float
    load_capacity_kw: float = 1000.0
    curtail_price: float = 0.0
    controller: str = "rto-op"
    forecaster: str = "perfect"
    sigma: float = 0.0
    seed: int = 0
    reserve_enabled: bool = False
    cut_budget: int = 12
    cut_eps: float = 0.5
    bias: float = 0.0
    solver: str = "highs"

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        if self.forecaster not in FORECASTERS:
            raise ValueError(f"forecaster must be one of {FORECASTERS}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if not self.storage:
            raise ValueError("need at least one storage device")
        if self.cut_budget < 2:
            raise ValueError("cut budget must be at least 2")
        if self.cut_eps < 0 or self.sigma < 0:
            raise ValueError("cut_eps and sigma must be >= 0")

    def build_fleet(self, scenario: Scenario) -> DeviceFleet:
        """Bind the scenario series into the canonical one-PV/one-load fleet."""
        return DeviceFleet(
            non_flexible_loads=(NonFlexibleLoad(series=scenario.load_kw),),
            non_steerable_generators=(
                NonSteerableGenerator(series=scenario.pv_kw,
                                      curtail_price=self.curtail_price),),
            storage=self.storage,
        )

    def with_updates(self, **kw) -> "CaseConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict[str, Any]:
        ct = self.contract
        return {
            "format_version": FORMAT_VERSION,
            "clock": {"delta_tau_min": self.clock.delta_tau_min,
                      "step_min": self.clock.step_min,
                      "horizon_hours": self.clock.horizon_hours},
            "contract": {
                "export_price": ct.export_price,
                "import_price_day": ct.import_price_day,
                "import_price_night": ct.import_price_night,
                "peak_price": ct.peak_price,
                "initial_peak_kw": ct.initial_peak_kw,
                "import_cap_kw": ct.import_cap_kw,
                "export_cap_kw": ct.export_cap_kw,
                "reserve_price_op": ct.reserve_price_op,
                "reserve_penalty_rto": ct.reserve_penalty_rto,
            },
            "storage": [
                {"name": s.name, "s_max": s.s_max, "s_min": s.s_min,
                 "p_cha_max": s.p_cha_max, "p_dis_max": s.p_dis_max,
                 "eta_cha": s.eta_cha, "eta_dis": s.eta_dis,
                 "s_init": s.s_init, "s_end": s.s_end, "usage_fee": s.usage_fee}
                for s in self.storage
            ],
            "case": {"pv_capacity_kw": self.pv_capacity_kw,
                     "load_capacity_kw": self.load_capacity_kw},
            "curtail_price": self.curtail_price,
            "controller": self.controller,
            "forecaster": {"kind": self.forecaster, "sigma": self.sigma,
                           "seed": self.seed},
            "reserve_enabled": self.reserve_enabled,
            "value_function": {"cut_budget": self.cut_budget,
                               "cut_eps": self.cut_eps},
            "bias": self.bias,
            "solver": self.solver,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CaseConfig":
        version = d.get("format_version", FORMAT_VERSION)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported config format_version {version}")
        try:
            clock = MarketClock(**d["clock"])
            contract = GridContract(**d["contract"])
            storage = tuple(StorageDevice(**s) for s in d["storage"])
            fc = d.get("forecaster", {})
            vf = d.get("value_function", {})
            case = d.get("case", {})
            return cls(
                clock=clock, contract=contract, storage=storage,
                pv_capacity_kw=float(case["pv_capacity_kw"]),
                load_capacity_kw=float(case.get("load_capacity_kw", 1000.0)),
                curtail_price=float(d.get("curtail_price", 0.0)),
                controller=d.get("controller", "rto-op"),
                forecaster=fc.get("kind", "perfect"),
                sigma=float(fc.get("sigma", 0.0)),
                seed=int(fc.get("seed", 0)),
                reserve_enabled=bool(d.get("reserve_enabled", False)),
                cut_budget=int(vf.get("cut_budget", 12)),
                cut_eps=float(vf.get("cut_eps", 0.5)),
                bias=float(d.get("bias", 0.0)),
                solver=d.get("solver", "highs"),
            )
        except KeyError as exc:
            raise ValueError(f"config is missing required key {exc}") from None


def case_preset(case: int, **overrides) -> CaseConfig:
    """The parameter-table presets for cases 1 to 3.

    The battery starts at the table's 100 kWh (the initial SOC must always be
    stated explicitly; there is no implicit default) and no terminal SOC is
    imposed.
    """
    if case not in CASE_PV_CAPACITY:
        raise ValueError(f"case must be one of {sorted(CASE_PV_CAPACITY)}")
    cfg = CaseConfig(
        clock=MarketClock(delta_tau_min=15, step_min=1, horizon_hours=24),
        contract=GridContract(
            export_price=0.035, import_price_day=0.2, import_price_night=0.12,
            peak_price=40.0, initial_peak_kw=150.0, import_cap_kw=1500.0,
            export_cap_kw=1500.0, reserve_price_op=20.0,
            reserve_penalty_rto=20.0),
        storage=(StorageDevice(s_max=1350.0, s_min=0.0, p_cha_max=1350.0,
                               p_dis_max=1350.0, eta_cha=0.95, eta_dis=0.95,
                               s_init=100.0),),
        pv_capacity_kw=CASE_PV_CAPACITY[case],
        load_capacity_kw=1000.0,
    )
    return cfg.with_updates(**overrides) if overrides else cfg


def load_config(path) -> CaseConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return CaseConfig.from_dict(data)


def save_config(config: CaseConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)
