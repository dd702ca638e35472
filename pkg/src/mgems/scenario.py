"""Measured scenario data on the one-minute grid, CSV ingestion, synthesis.

A scenario holds the ground-truth PV and consumption series the simulator
replays, plus the per-minute TSO reserve-activation signal.  Files use the
header ``timestamp,pv_kw,load_kw[,tso_signal]`` with ISO-8601 UTC stamps at
any uniform resolution up to one minute; finer data is mean-aggregated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np

from mgems.domain import as_utc

__all__ = ["Scenario", "ScenarioError", "load_scenario", "save_scenario",
           "synth_scenario"]

FORMAT_VERSION = 1


class ScenarioError(ValueError):
    """Malformed scenario input; the message names the offending line."""


@dataclass(frozen=True)
class Scenario:
    """Ground truth on a uniform 1-minute UTC grid."""

    start: datetime
    pv_kw: np.ndarray
    load_kw: np.ndarray
    tso: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "start", as_utc(self.start))
        object.__setattr__(self, "pv_kw", np.asarray(self.pv_kw, dtype=float))
        object.__setattr__(self, "load_kw", np.asarray(self.load_kw, dtype=float))
        tso = self.tso if self.tso is not None else np.ones(len(self.pv_kw), dtype=np.int8)
        object.__setattr__(self, "tso", np.asarray(tso, dtype=np.int8))
        if self.pv_kw.shape != self.load_kw.shape or self.pv_kw.shape != self.tso.shape:
            raise ScenarioError("pv, load, and tso series must share one length")
        if self.pv_kw.ndim != 1 or len(self.pv_kw) == 0:
            raise ScenarioError("series must be non-empty 1-d arrays")
        if np.any(self.pv_kw < 0) or np.any(self.load_kw < 0):
            raise ScenarioError("pv and load must be non-negative")
        if self.start.second or self.start.microsecond:
            raise ScenarioError("scenario must start on a whole minute")

    @property
    def n_minutes(self) -> int:
        return len(self.pv_kw)

    def minute_at(self, t: datetime) -> int:
        delta = (as_utc(t) - self.start).total_seconds()
        m = delta / 60.0
        if m != int(m):
            raise ScenarioError(f"{t} is not on the minute grid")
        return int(m)

    def time_at(self, minute: int) -> datetime:
        return self.start + timedelta(minutes=minute)

    def period_means(self, start_minute: int, n_periods: int,
                     delta_tau_min: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-period mean PV and load from ``start_minute`` onward.

        Indices past the end of the data wrap 24 hours back (the tail of a
        run effectively assumes daily periodicity), so a forecast horizon is
        always serviceable.
        """
        idx = start_minute + np.arange(n_periods * delta_tau_min)
        if idx[0] < 0:
            raise ScenarioError("window starts before the scenario")
        wrap = 24 * 60 if self.n_minutes >= 24 * 60 else self.n_minutes
        while np.any(idx >= self.n_minutes):
            idx = np.where(idx >= self.n_minutes, idx - wrap, idx)
        pv = self.pv_kw[idx].reshape(n_periods, delta_tau_min).mean(axis=1)
        load = self.load_kw[idx].reshape(n_periods, delta_tau_min).mean(axis=1)
        return pv, load

    def tso_at(self, minute: int) -> int:
        return int(self.tso[min(minute, self.n_minutes - 1)])


def _parse_stamp(text: str, line_no: int) -> datetime:
    try:
        return as_utc(datetime.fromisoformat(text.strip().replace("Z", "+00:00")))
    except ValueError:
        raise ScenarioError(f"line {line_no}: bad timestamp {text!r}") from None


def load_scenario(path) -> Scenario:
    """Read and validate a scenario CSV, aggregating to the 1-minute grid."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ScenarioError("empty scenario file")
    header = [h.strip() for h in lines[0].split(",")]
    expected = ["timestamp", "pv_kw", "load_kw"]
    if header[:3] != expected:
        raise ScenarioError(f"line 1: header must start with {','.join(expected)}")
    has_tso = len(header) > 3 and header[3] == "tso_signal"

    stamps, pv, load, tso = [], [], [], []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) < 3:
            raise ScenarioError(f"line {line_no}: expected at least 3 columns")
        stamps.append(_parse_stamp(cells[0], line_no))
        try:
            pv.append(float(cells[1]))
            load.append(float(cells[2]))
            tso.append(int(float(cells[3])) if has_tso and len(cells) > 3 else 1)
        except ValueError:
            raise ScenarioError(f"line {line_no}: non-numeric value") from None
    if len(stamps) < 2:
        raise ScenarioError("need at least two samples")

    step = (stamps[1] - stamps[0]).total_seconds()
    if step <= 0:
        raise ScenarioError("line 3: timestamps must increase")
    if step > 60.0:
        raise ScenarioError(f"resolution {step:.0f}s is coarser than one minute")
    if 60.0 % step != 0.0:
        raise ScenarioError(f"resolution {step:.0f}s does not divide one minute")
    for k in range(1, len(stamps)):
        gap = (stamps[k] - stamps[k - 1]).total_seconds()
        if gap <= 0:
            raise ScenarioError(f"line {k + 2}: non-monotone timestamp")
        if gap != step:
            raise ScenarioError(f"line {k + 2}: gap of {gap:.0f}s in a {step:.0f}s grid")

    per_min = int(60.0 // step)
    n_full = len(stamps) // per_min
    if n_full == 0:
        raise ScenarioError("less than one full minute of data")
    pv_arr = np.asarray(pv[: n_full * per_min]).reshape(n_full, per_min).mean(axis=1)
    load_arr = np.asarray(load[: n_full * per_min]).reshape(n_full, per_min).mean(axis=1)
    tso_arr = np.asarray(tso[: n_full * per_min]).reshape(n_full, per_min)[:, 0]
    if np.any(pv_arr < 0) or np.any(load_arr < 0):
        raise ScenarioError("negative pv or load value")
    start = stamps[0].replace(second=0, microsecond=0)
    if stamps[0] != start:
        raise ScenarioError("line 2: first sample must land on a whole minute")
    return Scenario(start, pv_arr, load_arr, tso_arr)


def save_scenario(scenario: Scenario, path) -> None:
    lines = ["timestamp,pv_kw,load_kw,tso_signal"]
    for k in range(scenario.n_minutes):
        t = scenario.time_at(k)
        lines.append(f"{t.isoformat()},{float(scenario.pv_kw[k])!r},"
                     f"{float(scenario.load_kw[k])!r},{int(scenario.tso[k])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Synthetic scenarios
# ---------------------------------------------------------------------------

CASE_PV_CAPACITY = {1: 400.0, 2: 875.0, 3: 1750.0}


def synth_scenario(seed: int, days: int, case: int = 1,
                   start: datetime | None = None,
                   load_capacity_kw: float = 1000.0,
                   force_drop_day: int | None = None) -> Scenario:
    """Seeded synthetic scenario shaped after the case-study statistics.

    PV follows a clear-sky arc scaled to the case capacity with random cloud
    events; consumption is a night base plus a weekday business-hours bump.
    ``force_drop_day`` inserts a deep one-hour PV drop around 10:00 UTC on
    that day, the pattern that makes myopic control hit a new peak.
    """
    if case not in CASE_PV_CAPACITY:
        raise ValueError(f"case must be one of {sorted(CASE_PV_CAPACITY)}")
    if days < 1:
        raise ValueError("need at least one day")
    start = as_utc(start) if start else datetime(2026, 5, 4, tzinfo=timezone.utc)
    rng = np.random.default_rng(seed)
    n = days * 24 * 60
    minute = np.arange(n)
    hour_of_day = (minute % (24 * 60)) / 60.0
    day_idx = minute // (24 * 60)
    weekday = np.array([(start + timedelta(days=int(d))).weekday() < 5
                        for d in day_idx])

    pv_peak = 0.64 * CASE_PV_CAPACITY[case]
    sun = np.sin(np.pi * np.clip((hour_of_day - 5.5) / 15.0, 0.0, 1.0)) ** 1.3
    pv = pv_peak * sun
    pv *= 1.0 + 0.04 * rng.standard_normal(n).cumsum() / np.sqrt(np.maximum(minute + 1, 1))

    for d in range(days):
        for _ in range(int(rng.integers(0, 3))):
            t0 = int(rng.uniform(7.0, 17.0) * 60) + d * 24 * 60
            width = int(rng.uniform(20, 70))
            depth = rng.uniform(0.3, 0.7)
            _apply_drop(pv, t0, width, depth)
    if force_drop_day is not None:
        t0 = force_drop_day * 24 * 60 + 10 * 60
        _apply_drop(pv, t0, 60, 0.85)
    pv = np.clip(pv, 0.0, None)

    scale = load_capacity_kw / 1000.0
    base, peak = 68.0 * scale, 390.0 * scale
    ramp_up = np.clip((hour_of_day - 6.0) / 2.5, 0.0, 1.0)
    ramp_dn = np.clip((21.0 - hour_of_day) / 3.0, 0.0, 1.0)
    hump = 0.45 + 0.55 * np.sin(np.pi * np.clip((hour_of_day - 6.0) / 15.0, 0.0, 1.0))
    bump = ramp_up * ramp_dn * hump
    level = np.where(weekday, 1.0, 0.35)
    load = base + (peak - base) * bump * level
    load *= 1.0 + 0.02 * rng.standard_normal(n)
    load = np.clip(load, 0.9 * base, None)

    return Scenario(start, pv, load, np.ones(n, dtype=np.int8))


def _apply_drop(pv: np.ndarray, t0: int, width: int, depth: float) -> None:
    """Multiply a window by (1-depth) with 5-minute cosine shoulders."""
    n = len(pv)
    ramp = 5
    for k in range(max(0, t0 - ramp), min(n, t0 + width + ramp)):
        if k < t0:
            f = 0.5 * (1 - math.cos(math.pi * (t0 - k) / ramp))
            factor = 1.0 - depth * (1.0 - f)
        elif k < t0 + width:
            factor = 1.0 - depth
        else:
            f = 0.5 * (1 - math.cos(math.pi * (k - t0 - width) / ramp))
            factor = 1.0 - depth * (1.0 - f)
        pv[k] *= factor
