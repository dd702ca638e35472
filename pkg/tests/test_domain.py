"""Domain type and calendar tests."""

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from conftest import table_battery, table_contract
from mgems.domain import (
    GridContract,
    MarketClock,
    MicrogridState,
    StorageDevice,
    import_price_at,
    next_boundary,
)

UTC = timezone.utc


class TestMarketClock:
    def test_default_96_periods(self):
        clock = MarketClock()
        assert clock.n_periods == 96
        assert clock.delta_tau_h == 0.25

    def test_invalid_clocks_rejected(self):
        with pytest.raises(ValueError):
            MarketClock(delta_tau_min=0)
        with pytest.raises(ValueError):
            MarketClock(step_min=20, delta_tau_min=15)
        with pytest.raises(ValueError):
            MarketClock(delta_tau_min=7)  # does not divide the day
        with pytest.raises(ValueError):
            MarketClock(step_min=4)  # does not divide the period


class TestNextBoundary:
    def test_mid_period(self):
        clock = MarketClock()
        t = datetime(2026, 5, 6, 10, 7, tzinfo=UTC)
        assert next_boundary(t, clock) == datetime(2026, 5, 6, 10, 15, tzinfo=UTC)

    def test_exactly_on_boundary_opens_new_period(self):
        clock = MarketClock()
        t = datetime(2026, 5, 6, 10, 15, tzinfo=UTC)
        assert next_boundary(t, clock) == datetime(2026, 5, 6, 10, 30, tzinfo=UTC)

    def test_day_rollover(self):
        clock = MarketClock()
        t = datetime(2026, 5, 6, 23, 59, tzinfo=UTC)
        assert next_boundary(t, clock) == datetime(2026, 5, 7, 0, 0, tzinfo=UTC)

    def test_delta_in_half_open_window(self):
        clock = MarketClock()
        rng = np.random.default_rng(1)
        base = datetime(2026, 5, 6, tzinfo=UTC)
        for _ in range(200):
            t = base + timedelta(seconds=float(rng.uniform(0, 86400)))
            tau = next_boundary(t, clock)
            delta = (tau - t).total_seconds()
            assert 0.0 < delta <= 15 * 60
            assert (tau.minute * 60 + tau.second) % (15 * 60) == 0


class TestTariffCalendar:
    def test_weekday_noon_is_day_price(self):
        t = datetime(2026, 5, 6, 12, 0, tzinfo=UTC)  # Wednesday
        assert import_price_at(t, table_contract()) == 0.2

    def test_weekday_evening_is_night_price(self):
        t = datetime(2026, 5, 6, 21, 0, tzinfo=UTC)
        assert import_price_at(t, table_contract()) == 0.12

    def test_weekend_noon_is_night_price(self):
        t = datetime(2026, 5, 9, 12, 0, tzinfo=UTC)  # Saturday
        assert import_price_at(t, table_contract()) == 0.12

    def test_window_edges(self):
        contract = table_contract()
        wed = datetime(2026, 5, 6, tzinfo=UTC)
        assert import_price_at(wed.replace(hour=4, minute=59), contract) == 0.12
        assert import_price_at(wed.replace(hour=5), contract) == 0.2
        assert import_price_at(wed.replace(hour=19, minute=59), contract) == 0.2
        assert import_price_at(wed.replace(hour=20), contract) == 0.12

    def test_total_over_a_week(self):
        # piecewise constant and total: every instant maps to one price
        contract = table_contract()
        t = datetime(2026, 5, 4, tzinfo=UTC)
        for _ in range(7 * 24):
            assert import_price_at(t, contract) in (0.2, 0.12)
            t += timedelta(hours=1)

    def test_naive_datetime_treated_as_utc(self):
        naive = datetime(2026, 5, 6, 12, 0)
        assert import_price_at(naive, table_contract()) == 0.2


class TestDeviceValidation:
    def test_soc_ordering_enforced(self):
        with pytest.raises(ValueError):
            StorageDevice(s_max=100.0, s_min=0.0, p_cha_max=10.0, p_dis_max=10.0,
                          eta_cha=0.9, eta_dis=0.9, s_init=150.0)

    def test_efficiency_range(self):
        with pytest.raises(ValueError):
            StorageDevice(s_max=100.0, s_min=0.0, p_cha_max=10.0, p_dis_max=10.0,
                          eta_cha=1.2, eta_dis=0.9, s_init=50.0)

    def test_contract_rejects_negative_prices(self):
        with pytest.raises(ValueError):
            GridContract(export_price=-0.1, import_price_day=0.2,
                         import_price_night=0.1, peak_price=40.0,
                         initial_peak_kw=150.0, import_cap_kw=1500.0,
                         export_cap_kw=1500.0)

    def test_state_accumulators_reset(self):
        battery = table_battery()
        state = MicrogridState(soc=np.array([battery.s_init]), peak_kw=150.0,
                               period_import_kwh=5.0, period_export_kwh=2.0,
                               committed_reserve_kw=10.0, elapsed_in_period_h=0.2)
        assert state.realized_avg_power_kw() == pytest.approx((5.0 - 2.0) / 0.2)
        state.reset_period()
        assert state.period_import_kwh == 0.0
        assert state.committed_reserve_kw == 0.0
        assert state.realized_avg_power_kw() == 0.0
