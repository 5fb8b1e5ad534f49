"""Early-warning timing: P arrivals, peak-shaking instants and warning times."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import SAMPLING_RATE, EventSample, StationNetwork, epicentral_distances

log = logging.getLogger(__name__)

CDF_STEP = 0.5


def max_shaking_time(waveform: np.ndarray, sampling_rate: float = SAMPLING_RATE) -> float | None:
    """Time (s after record start) of the largest 3-component vector magnitude.

    Ties go to the earliest sample; an all-zero record gives None.
    """
    w = np.asarray(waveform, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] != 3:
        raise ValueError(f"expected a (T, 3) record, got shape {w.shape}")
    mag = np.sqrt(np.sum(w * w, axis=1))
    if not np.any(mag > 0):
        return None
    return int(np.argmax(mag)) / sampling_rate


@dataclass
class WarningTimeline:
    event_ids: np.ndarray
    station_ids: np.ndarray
    p_arrival_s: np.ndarray
    max_shaking_s: np.ndarray
    prediction_time_s: np.ndarray
    warning_time_s: np.ndarray
    epicentral_km: np.ndarray
    missing_pick: np.ndarray

    def __len__(self):
        return self.event_ids.size

    def rows(self) -> list[dict]:
        return [
            {
                "event_id": self.event_ids[i], "station_id": self.station_ids[i],
                "p_arrival_s": self.p_arrival_s[i], "max_shaking_s": self.max_shaking_s[i],
                "prediction_time_s": self.prediction_time_s[i],
                "warning_time_s": self.warning_time_s[i],
                "epicentral_km": self.epicentral_km[i], "missing_pick": int(self.missing_pick[i]),
            }
            for i in range(len(self))
        ]


def warning_times(
    network: StationNetwork,
    events: Sequence[EventSample],
    picks: Mapping[tuple[str, str], float],
    window_s: float = 5.0,
    latency_s: float = 0.0,
    per_station: bool = False,
    sampling_rate: float = SAMPLING_RATE,
) -> WarningTimeline:
    """One row per available (event, station) record with a defined peak.

    By default the warning is regional: issued once at window_s + latency_s
    after origin for the whole network. With ``per_station`` each station's
    prediction instant is its own P arrival + window_s + latency_s.
    Stations lacking a pick are kept with ``missing_pick`` set and NaN P time.
    """
    if window_s < 0 or latency_s < 0:
        raise ValueError("window_s and latency_s must be non-negative")
    cols = {k: [] for k in ("ev", "st", "p", "ms", "pt", "d", "miss")}
    n_missing = 0
    for ev in events:
        dist = epicentral_distances(network, ev)
        for j, sid in enumerate(network.station_ids):
            if not ev.available[j]:
                continue
            ms = max_shaking_time(ev.waveforms[j], sampling_rate)
            if ms is None:
                continue
            p = picks.get((ev.event_id, sid))
            missing = p is None
            n_missing += missing
            p = np.nan if missing else float(p)
            if per_station:
                pt = p + window_s + latency_s
            else:
                pt = window_s + latency_s
            cols["ev"].append(ev.event_id)
            cols["st"].append(sid)
            cols["p"].append(p)
            cols["ms"].append(ms)
            cols["pt"].append(pt)
            cols["d"].append(dist[j])
            cols["miss"].append(missing)
    if n_missing:
        log.warning("%d available records have no P pick", n_missing)
    ms = np.array(cols["ms"], dtype=np.float64)
    pt = np.array(cols["pt"], dtype=np.float64)
    return WarningTimeline(
        event_ids=np.array(cols["ev"], dtype=object),
        station_ids=np.array(cols["st"], dtype=object),
        p_arrival_s=np.array(cols["p"], dtype=np.float64),
        max_shaking_s=ms,
        prediction_time_s=pt,
        warning_time_s=ms - pt,
        epicentral_km=np.array(cols["d"], dtype=np.float64),
        missing_pick=np.array(cols["miss"], dtype=bool),
    )


@dataclass(frozen=True)
class WarningSummary:
    cdf: np.ndarray  # (K, 2): warning time, cumulative fraction
    fraction_ge_10s: float
    fraction_before_p: float
    fraction_before_max: float
    slope_s_per_km: float
    intercept_s: float
    n: int

    def as_row(self) -> dict:
        return {
            "n": self.n, "fraction_warning_ge_10s": self.fraction_ge_10s,
            "fraction_warned_before_p": self.fraction_before_p,
            "fraction_warned_before_max_shaking": self.fraction_before_max,
            "slope_s_per_km": self.slope_s_per_km, "intercept_s": self.intercept_s,
        }


def empirical_cdf(values: np.ndarray, step: float = CDF_STEP) -> np.ndarray:
    """Fraction of values <= x on a grid of ``step`` covering the data."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    lo = np.floor(v[0] / step) * step
    hi = np.ceil(v[-1] / step) * step
    grid = lo + step * np.arange(int(round((hi - lo) / step)) + 1)
    frac = np.searchsorted(v, grid, side="right") / v.size
    return np.column_stack([grid, frac])


def warning_summary(tl: WarningTimeline) -> WarningSummary:
    if len(tl) == 0:
        raise ValueError("empty warning timeline")
    wt = tl.warning_time_s
    has_p = ~tl.missing_pick
    before_p = float(np.mean(tl.prediction_time_s[has_p] < tl.p_arrival_s[has_p])) if has_p.any() else float("nan")
    from .evaluation import least_squares_line

    slope, intercept = least_squares_line(tl.epicentral_km, wt)
    return WarningSummary(
        cdf=empirical_cdf(wt),
        fraction_ge_10s=float(np.mean(wt >= 10.0)),
        fraction_before_p=before_p,
        fraction_before_max=float(np.mean(wt > 0.0)),
        slope_s_per_km=slope,
        intercept_s=intercept,
        n=len(tl),
    )


def fraction_p_after(tl: WarningTimeline, seconds: float) -> float:
    """Share of picked records whose P arrival is later than ``seconds``."""
    p = tl.p_arrival_s[~tl.missing_pick]
    return float(np.mean(p > seconds))


def emit_report(out_dir, tl: WarningTimeline, summary: WarningSummary | None = None) -> dict[str, Path]:
    """timeline.csv, cdf.csv, summary.csv and plots rendered from them."""
    from .evaluation import _pyplot, _save, read_rows, write_rows

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summary or warning_summary(tl)
    files = {
        "timeline": write_rows(out / "timeline.csv", tl.rows(), [
            "event_id", "station_id", "p_arrival_s", "max_shaking_s", "prediction_time_s",
            "warning_time_s", "epicentral_km", "missing_pick"]),
        "cdf": write_rows(out / "cdf.csv", [{"warning_time_s": g, "cdf": f} for g, f in summary.cdf],
                          ["warning_time_s", "cdf"]),
        "summary": write_rows(out / "summary.csv", [summary.as_row()]),
    }
    rows = read_rows(files["timeline"])
    cdf = read_rows(files["cdf"])
    plt = _pyplot()
    fig, axes = plt.subplots(1, 4, figsize=(16, 3.5))
    p = [float(r["p_arrival_s"]) for r in rows if r["p_arrival_s"] != "nan"]
    axes[0].hist(p, bins=30)
    axes[0].set_xlabel("P arrival (s)")
    axes[1].hist([float(r["max_shaking_s"]) for r in rows], bins=30)
    axes[1].set_xlabel("max shaking (s)")
    axes[2].step([float(r["warning_time_s"]) for r in cdf], [float(r["cdf"]) for r in cdf], where="post")
    axes[2].set_xlabel("warning time (s)")
    axes[2].set_ylabel("CDF")
    axes[3].scatter([float(r["epicentral_km"]) for r in rows], [float(r["warning_time_s"]) for r in rows], s=4)
    axes[3].set_xlabel("epicentral distance (km)")
    axes[3].set_ylabel("warning time (s)")
    fig.tight_layout()
    _save(fig, out / "warning_times.png")
    files["plot"] = out / "warning_times.png"
    return files
