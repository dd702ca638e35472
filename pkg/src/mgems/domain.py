"""Physical, market, and temporal domain types shared by every other module.

Conventions used throughout the package: powers in kW, energies in kWh,
prices in EUR, durations in hours (the 15-minute market period is 0.25 h).
Instants are timezone-aware UTC datetimes; market-period boundaries are
aligned to the UTC day grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

__all__ = [
    "MarketClock",
    "StorageDevice",
    "NonFlexibleLoad",
    "SheddableLoad",
    "SteerableGenerator",
    "NonSteerableGenerator",
    "DeviceFleet",
    "GridContract",
    "MicrogridState",
    "as_utc",
    "next_boundary",
    "import_price_at",
]

MINUTES_PER_DAY = 24 * 60


def as_utc(t: datetime) -> datetime:
    """Normalize an instant to timezone-aware UTC (naive input is taken as UTC)."""
    if t.tzinfo is None:
        return t.replace(tzinfo=timezone.utc)
    return t.astimezone(timezone.utc)


@dataclass(frozen=True)
class MarketClock:
    """Market timing: settlement period, re-solve step, and planning horizon.

    delta_tau_min    market (settlement) period length, minutes
    step_min         real-time re-solve interval, minutes
    horizon_hours    planning lookahead of the operational planner, hours
    """

    delta_tau_min: int = 15
    step_min: int = 1
    horizon_hours: int = 24

    def __post_init__(self):
        if self.delta_tau_min <= 0 or self.step_min <= 0:
            raise ValueError("clock durations must be positive")
        if self.step_min > self.delta_tau_min:
            raise ValueError("re-solve step cannot exceed the market period")
        if self.delta_tau_min % self.step_min != 0:
            raise ValueError("re-solve step must divide the market period")
        if (self.horizon_hours * 60) % self.delta_tau_min != 0:
            raise ValueError("market period must divide the planning horizon")
        if MINUTES_PER_DAY % self.delta_tau_min != 0:
            raise ValueError("market period must divide the day")

    @property
    def delta_tau_h(self) -> float:
        return self.delta_tau_min / 60.0

    @property
    def n_periods(self) -> int:
        """Number of market periods in the planning horizon (96 by default)."""
        return self.horizon_hours * 60 // self.delta_tau_min


def next_boundary(t: datetime, clock: MarketClock) -> datetime:
    """First market-period boundary strictly after ``t``.

    Periods are half-open [k*delta_tau, (k+1)*delta_tau): an instant exactly
    on a boundary opens a new period, so its next boundary is one full period
    later.  The returned instant satisfies t < tau(t) <= t + delta_tau.
    """
    t = as_utc(t)
    midnight = t.replace(hour=0, minute=0, second=0, microsecond=0)
    seconds = (t - midnight).total_seconds()
    period_s = clock.delta_tau_min * 60
    k = int(seconds // period_s) + 1
    return midnight + timedelta(seconds=k * period_s)


@dataclass(frozen=True)
class StorageDevice:
    """Battery parameters: capacity window, power limits, efficiencies.

    Charging at bus-side power P stores eta_cha * P; discharging at bus-side
    power P drains P / eta_dis from the store.  ``usage_fee`` is charged per
    kWh of store-side throughput in both directions.
    """

    s_max: float
    s_min: float
    p_cha_max: float
    p_dis_max: float
    eta_cha: float
    eta_dis: float
    s_init: float
    s_end: float | None = None
    usage_fee: float = 0.0
    name: str = "battery"

    def __post_init__(self):
        if not (0.0 <= self.s_min <= self.s_init <= self.s_max):
            raise ValueError(
                f"{self.name}: need 0 <= s_min <= s_init <= s_max, got "
                f"{self.s_min}, {self.s_init}, {self.s_max}"
            )
        if not (0.0 < self.eta_cha <= 1.0 and 0.0 < self.eta_dis <= 1.0):
            raise ValueError(f"{self.name}: efficiencies must be in (0, 1]")
        if self.p_cha_max < 0 or self.p_dis_max < 0:
            raise ValueError(f"{self.name}: power limits must be >= 0")
        if self.usage_fee < 0:
            raise ValueError(f"{self.name}: usage fee must be >= 0")
        if self.s_end is not None and not (self.s_min <= self.s_end <= self.s_max):
            raise ValueError(f"{self.name}: s_end outside [s_min, s_max]")


@dataclass(frozen=True)
class NonFlexibleLoad:
    """Must-serve consumption; ``series`` is kW on the simulation grid."""

    series: np.ndarray
    name: str = "load"


@dataclass(frozen=True)
class SheddableLoad:
    """Consumption that can be shed (fractionally) at ``shed_price`` EUR/kWh."""

    series: np.ndarray
    shed_price: float
    name: str = "sheddable"


@dataclass(frozen=True)
class SteerableGenerator:
    """Dispatchable generation up to ``capacity`` kW at ``gen_price`` EUR/kWh."""

    capacity: np.ndarray
    gen_price: float
    name: str = "genset"


@dataclass(frozen=True)
class NonSteerableGenerator:
    """Renewable production that can only be curtailed, at ``curtail_price``."""

    series: np.ndarray
    curtail_price: float = 0.0
    name: str = "pv"


@dataclass(frozen=True)
class DeviceFleet:
    """The five device classes of the microgrid."""

    non_flexible_loads: tuple[NonFlexibleLoad, ...] = ()
    sheddable_loads: tuple[SheddableLoad, ...] = ()
    steerable_generators: tuple[SteerableGenerator, ...] = ()
    non_steerable_generators: tuple[NonSteerableGenerator, ...] = ()
    storage: tuple[StorageDevice, ...] = ()

    def __post_init__(self):
        for dev in (
            *self.non_flexible_loads,
            *self.sheddable_loads,
            *self.non_steerable_generators,
        ):
            if np.any(np.asarray(dev.series) < 0):
                raise ValueError(f"{dev.name}: series must be non-negative")
        for dev in self.steerable_generators:
            if np.any(np.asarray(dev.capacity) < 0):
                raise ValueError(f"{dev.name}: capacity must be non-negative")

    @property
    def n_storage(self) -> int:
        return len(self.storage)

    def soc_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([d.s_min for d in self.storage])
        hi = np.array([d.s_max for d in self.storage])
        return lo, hi

    def initial_soc(self) -> np.ndarray:
        return np.array([d.s_init for d in self.storage])


@dataclass(frozen=True)
class GridContract:
    """Tariffs, peak billing, exchange caps, and reserve prices.

    The day import tariff applies on weekdays from 05:00 (inclusive) to
    20:00 (exclusive) UTC; the night tariff applies on weeknights and the
    entire weekend.
    """

    export_price: float
    import_price_day: float
    import_price_night: float
    peak_price: float
    initial_peak_kw: float
    import_cap_kw: float
    export_cap_kw: float
    reserve_price_op: float = 0.0
    reserve_penalty_rto: float = 0.0
    day_start_hour: int = 5
    day_end_hour: int = 20

    def __post_init__(self):
        prices = (
            self.export_price,
            self.import_price_day,
            self.import_price_night,
            self.peak_price,
            self.reserve_price_op,
            self.reserve_penalty_rto,
        )
        if any(p < 0 for p in prices):
            raise ValueError("contract prices must be >= 0")
        if self.import_cap_kw <= 0 or self.export_cap_kw <= 0:
            raise ValueError("exchange caps must be > 0")
        if self.initial_peak_kw < 0:
            raise ValueError("historical peak must be >= 0")
        if not (0 <= self.day_start_hour < self.day_end_hour <= 24):
            raise ValueError("day tariff window must satisfy 0 <= start < end <= 24")


def import_price_at(t: datetime, contract: GridContract) -> float:
    """Calendar import tariff at instant ``t`` (EUR/kWh).

    Piecewise constant and total: every instant maps to exactly one of the
    day/night prices.
    """
    t = as_utc(t)
    weekday = t.weekday() < 5
    in_window = contract.day_start_hour <= t.hour < contract.day_end_hour
    if weekday and in_window:
        return contract.import_price_day
    return contract.import_price_night


@dataclass
class MicrogridState:
    """Mutable simulation state: device SOC plus the market position.

    ``soc`` holds one entry per storage device.  The kWh accumulators and the
    committed reserve refer to the market period in progress and reset at
    every boundary; ``peak_kw`` is the historical maximum period-average net
    import, which only ratchets upward.
    """

    soc: np.ndarray
    peak_kw: float
    period_import_kwh: float = 0.0
    period_export_kwh: float = 0.0
    committed_reserve_kw: float = 0.0
    elapsed_in_period_h: float = 0.0

    @classmethod
    def initial(cls, fleet: DeviceFleet, contract: GridContract) -> "MicrogridState":
        return cls(soc=fleet.initial_soc().astype(float), peak_kw=contract.initial_peak_kw)

    def check_soc(self, fleet: DeviceFleet, tol: float = 1e-9) -> None:
        lo, hi = fleet.soc_bounds()
        if np.any(self.soc < lo - tol) or np.any(self.soc > hi + tol):
            raise ValueError(f"SOC {self.soc} outside bounds [{lo}, {hi}]")

    def reset_period(self) -> None:
        self.period_import_kwh = 0.0
        self.period_export_kwh = 0.0
        self.committed_reserve_kw = 0.0
        self.elapsed_in_period_h = 0.0

    def realized_avg_power_kw(self) -> float:
        """Average net import power since the period opened (0 right at open)."""
        if self.elapsed_in_period_h <= 0.0:
            return 0.0
        return (self.period_import_kwh - self.period_export_kwh) / self.elapsed_in_period_h
