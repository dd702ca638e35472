"""Forecaster plug-ins and deterministic forecast-quality metrics.

Each forecaster issues, from a market-period boundary, one vector of
quarter-hour PV and consumption means covering the planning horizon (96
values for 24 h at 15 min), mirroring a one-shot multi-output model.  The
concrete weather-driven models stay out of scope; the plug-ins here span the
accuracy axis instead: ``perfect`` reads the scenario, ``persistence``
repeats the previous day, ``noisy`` perturbs perfect values with seeded
multiplicative lognormal errors of spread sigma.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime

import numpy as np

from mgems.domain import as_utc
from mgems.scenario import Scenario

__all__ = [
    "ForecastVector",
    "ForecastMetrics",
    "Forecaster",
    "PerfectForecaster",
    "PersistenceForecaster",
    "NoisyForecaster",
    "make_forecaster",
    "metrics_from_pairs",
    "evaluate_forecaster",
]


@dataclass(frozen=True)
class ForecastVector:
    """One issue: per-period kW means for PV and consumption."""

    issue: datetime
    delta_tau_min: int
    pv_kw: np.ndarray
    load_kw: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pv_kw", np.asarray(self.pv_kw, dtype=float))
        object.__setattr__(self, "load_kw", np.asarray(self.load_kw, dtype=float))
        if self.pv_kw.shape != self.load_kw.shape or self.pv_kw.ndim != 1:
            raise ValueError("forecast series must be 1-d and aligned")
        if np.any(self.pv_kw < 0) or np.any(self.load_kw < 0):
            raise ValueError("forecast values must be non-negative")

    @property
    def n_periods(self) -> int:
        return len(self.pv_kw)

    @property
    def horizon_hours(self) -> float:
        return self.n_periods * self.delta_tau_min / 60.0


class Forecaster:
    """Interface: forecast(scenario, issue, n_periods, delta_tau_min)."""

    name = "base"

    def forecast(self, scenario: Scenario, issue: datetime, n_periods: int,
                 delta_tau_min: int) -> ForecastVector:
        raise NotImplementedError


class PerfectForecaster(Forecaster):
    """Reads the scenario's own future, aggregated to period means."""

    name = "perfect"

    def forecast(self, scenario, issue, n_periods, delta_tau_min):
        start = scenario.minute_at(issue)
        pv, load = scenario.period_means(start, n_periods, delta_tau_min)
        return ForecastVector(as_utc(issue), delta_tau_min, pv, load)


class PersistenceForecaster(Forecaster):
    """Repeats the same clock-time profile observed 24 hours earlier."""

    name = "persistence"

    def forecast(self, scenario, issue, n_periods, delta_tau_min):
        start = scenario.minute_at(issue) - 24 * 60
        if start < 0:
            raise ValueError("persistence needs 24 h of history before the issue")
        pv, load = scenario.period_means(start, n_periods, delta_tau_min)
        return ForecastVector(as_utc(issue), delta_tau_min, pv, load)


class NoisyForecaster(Forecaster):
    """Perfect values times seeded lognormal factors exp(sigma * z).

    The factor stream is a pure function of (seed, issue, series, period), so
    repeated runs see identical errors.
    """

    name = "noisy"

    def __init__(self, sigma: float, seed: int = 0):
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        self.sigma = float(sigma)
        self.seed = int(seed)

    def forecast(self, scenario, issue, n_periods, delta_tau_min):
        start = scenario.minute_at(issue)
        pv, load = scenario.period_means(start, n_periods, delta_tau_min)
        issue_key = int(as_utc(issue).timestamp() // 60)
        out = []
        for series_id, values in ((0, pv), (1, load)):
            rng = np.random.default_rng([self.seed, issue_key, series_id])
            factors = np.exp(self.sigma * rng.standard_normal(n_periods))
            out.append(np.clip(values * factors, 0.0, None))
        return ForecastVector(as_utc(issue), delta_tau_min, out[0], out[1])


def make_forecaster(kind: str, sigma: float = 0.0, seed: int = 0) -> Forecaster:
    if kind == "perfect":
        return PerfectForecaster()
    if kind == "persistence":
        return PersistenceForecaster()
    if kind == "noisy":
        return NoisyForecaster(sigma=sigma, seed=seed)
    raise ValueError(f"unknown forecaster {kind!r}")


@dataclass(frozen=True)
class ForecastMetrics:
    """Normalized errors; all zero iff every forecast equals the truth."""

    nmae: float
    nrmse: float
    neme: float


def metrics_from_pairs(predicted: list[np.ndarray],
                       actual: list[np.ndarray]) -> ForecastMetrics:
    """NMAE, NRMSE, NEME over aligned (forecast, truth) pairs.

    The normalizer for NMAE and NRMSE is the mean absolute truth over the
    whole evaluation set.  NEME treats each issue as one energy total:
    |sum(forecast) - sum(truth)| / sum(|truth|), averaged over issues.
    """
    if len(predicted) != len(actual) or not predicted:
        raise ValueError("need equally many non-empty forecast and truth lists")
    errs, truths, nemes = [], [], []
    for p, a in zip(predicted, actual):
        p = np.asarray(p, dtype=float)
        a = np.asarray(a, dtype=float)
        if p.shape != a.shape:
            raise ValueError("forecast/truth horizon mismatch")
        errs.append(p - a)
        truths.append(a)
        denom = np.abs(a).sum()
        if denom == 0:
            raise ValueError("zero normalizer: truth sums to zero over an issue")
        nemes.append(abs(p.sum() - a.sum()) / denom)
    err = np.concatenate(errs)
    norm = np.abs(np.concatenate(truths)).mean()
    if norm == 0:
        raise ValueError("zero normalizer: truth is identically zero")
    return ForecastMetrics(
        nmae=float(np.abs(err).mean() / norm),
        nrmse=float(np.sqrt((err ** 2).mean()) / norm),
        neme=float(np.mean(nemes)),
    )


def evaluate_forecaster(forecaster: Forecaster, scenario: Scenario,
                        n_periods: int, delta_tau_min: int,
                        issues: list[datetime]) -> dict:
    """Score a forecaster on both series over the given issue instants."""
    pv_pred, pv_true, load_pred, load_true = [], [], [], []
    for issue in issues:
        fc = forecaster.forecast(scenario, issue, n_periods, delta_tau_min)
        truth_pv, truth_load = scenario.period_means(
            scenario.minute_at(issue), n_periods, delta_tau_min)
        pv_pred.append(fc.pv_kw)
        pv_true.append(truth_pv)
        load_pred.append(fc.load_kw)
        load_true.append(truth_load)
    return {
        "pv": metrics_from_pairs(pv_pred, pv_true),
        "load": metrics_from_pairs(load_pred, load_true),
    }
