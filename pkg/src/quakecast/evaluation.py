"""Residual metrics, Bland-Altman statistics, conditional groupings and
window sweeps, with CSV output and plots rendered from those CSVs."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import gmice
from .data import DataError, EventSample, StationNetwork, epicentral_distances

log = logging.getLogger(__name__)

LOA_Z = 1.96
MAGNITUDE_BINS = (("3-3.5", 3.0, 3.5), ("3.5-4.5", 3.5, 4.5), (">4.5", 4.5, np.inf))
DEPTH_BINS = (("1-8 km", 1.0, 8.0), ("8-10 km", 8.0, 10.0), (">10 km", 10.0, np.inf))


@dataclass
class ResidualSet:
    predicted: np.ndarray
    observed: np.ndarray
    event_ids: np.ndarray | None = None
    station_ids: np.ndarray | None = None
    magnitude: np.ndarray | None = None
    depth_km: np.ndarray | None = None
    distance_km: np.ndarray | None = None

    def __post_init__(self):
        self.predicted = np.asarray(self.predicted, dtype=np.float64).ravel()
        self.observed = np.asarray(self.observed, dtype=np.float64).ravel()
        if self.predicted.shape != self.observed.shape:
            raise ValueError("predicted and observed lengths differ")
        if not (np.all(np.isfinite(self.predicted)) and np.all(np.isfinite(self.observed))):
            raise ValueError("residual set contains non-finite values")

    def __len__(self):
        return self.predicted.size

    @property
    def residuals(self) -> np.ndarray:
        return self.predicted - self.observed

    def subset(self, mask) -> "ResidualSet":
        pick = lambda a: None if a is None else np.asarray(a)[mask]
        return ResidualSet(
            self.predicted[mask], self.observed[mask], pick(self.event_ids),
            pick(self.station_ids), pick(self.magnitude), pick(self.depth_km),
            pick(self.distance_km),
        )


@dataclass(frozen=True)
class Metrics:
    mse: float
    sd: float
    cc: float
    r2: float
    nmse: float
    n: int
    cc_undefined: bool = False

    def as_row(self) -> dict:
        """Report form: CC and R^2 as percentages, SD population convention."""
        return {
            "n": self.n, "mse": self.mse, "sd": self.sd,
            "cc_percent": 100.0 * self.cc, "r2_percent": 100.0 * self.r2,
            "normalized_mse": self.nmse, "normalized_mse_percent": 100.0 * self.nmse,
            "cc_undefined": int(self.cc_undefined), "sd_convention": "population",
        }


def pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(np.sum(xc * xc) * np.sum(yc * yc))
    if denom == 0.0:
        return None
    return float(np.sum(xc * yc) / denom)


def metrics(rs: ResidualSet) -> Metrics:
    if len(rs) < 2:
        raise ValueError("metrics need at least two pairs")
    eps = rs.residuals
    mse = float(np.mean(eps ** 2))
    cc = pearson(rs.predicted, rs.observed)
    undefined = cc is None
    cc = 0.0 if undefined else cc
    return Metrics(
        mse=mse,
        sd=float(np.std(eps)),
        cc=cc,
        r2=cc * cc,
        nmse=mse / float(np.mean(rs.observed)),
        n=len(rs),
        cc_undefined=undefined,
    )


@dataclass(frozen=True)
class BlandAltman:
    mean_difference: float
    loa_low: float
    loa_high: float
    sd: float


def bland_altman(rs: ResidualSet) -> BlandAltman:
    """Bias and 95% limits of agreement of predicted - observed.

    The spread uses the population standard deviation, as in ``metrics``.
    """
    if len(rs) < 2:
        raise ValueError("Bland-Altman needs at least two pairs")
    d = rs.residuals
    mean = float(d.mean())
    sd = float(d.std())
    return BlandAltman(mean, mean - LOA_Z * sd, mean + LOA_Z * sd, sd)


def least_squares_line(x, y) -> tuple[float, float]:
    """Slope and intercept of y on x; NaN when x has no spread."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        return float("nan"), float("nan")
    xc = x - x.mean()
    sxx = np.sum(xc * xc)
    if sxx == 0:
        return float("nan"), float("nan")
    slope = float(np.sum(xc * (y - y.mean())) / sxx)
    return slope, float(y.mean() - slope * x.mean())


@dataclass
class Group:
    label: str
    low: float
    high: float
    residuals: ResidualSet
    slope: float
    intercept: float

    @property
    def n(self) -> int:
        return len(self.residuals)


def bin_index(values, axis: str) -> np.ndarray:
    """Bin number per value (-1 if outside every bin).

    Magnitude: [3, 3.5), [3.5, 4.5], (4.5, inf). Depth: [1, 8), [8, 10], (10, inf).
    """
    bins = _bins(axis)
    v = np.asarray(values, dtype=np.float64)
    idx = np.full(v.shape, -1)
    (_, a0, a1), (_, b0, b1), (_, c0, _) = bins
    idx[(v >= a0) & (v < a1)] = 0
    idx[(v >= b0) & (v <= b1)] = 1
    idx[v > c0] = 2
    return idx


def _bins(axis):
    if axis == "magnitude":
        return MAGNITUDE_BINS
    if axis == "depth":
        return DEPTH_BINS
    raise ValueError(f"axis must be 'magnitude' or 'depth', got {axis!r}")


def conditional_groups(rs: ResidualSet, axis: str) -> list[Group]:
    """Split by event magnitude or depth; fit predicted = slope * observed + intercept."""
    values = rs.magnitude if axis == "magnitude" else rs.depth_km if axis == "depth" else None
    bins = _bins(axis)
    if values is None:
        raise ValueError(f"residual set has no {axis} annotations")
    idx = bin_index(values, axis)
    groups = []
    for b, (label, lo, hi) in enumerate(bins):
        sub = rs.subset(idx == b)
        slope, intercept = least_squares_line(sub.observed, sub.predicted)
        groups.append(Group(label, lo, hi, sub, slope, intercept))
    return groups


# ---------------------------------------------------------------------------
# assembling residual sets


def residual_set(pred: np.ndarray, events: Sequence[EventSample], network: StationNetwork | None = None) -> ResidualSet:
    """Pair (E, N) predictions with valid labels of ``events``."""
    pred = np.asarray(pred)
    ev_ids, st_ids, p, o, mag, dep, dist = [], [], [], [], [], [], []
    for k, ev in enumerate(events):
        d = epicentral_distances(network, ev) if network is not None else None
        for j in np.flatnonzero(ev.label_valid):
            ev_ids.append(ev.event_id)
            st_ids.append(network.station_ids[j] if network is not None else str(j))
            p.append(pred[k, j])
            o.append(ev.labels[j])
            mag.append(ev.magnitude)
            dep.append(ev.depth_km)
            dist.append(d[j] if d is not None else np.nan)
    return ResidualSet(np.array(p), np.array(o), np.array(ev_ids), np.array(st_ids),
                       np.array(mag), np.array(dep), np.array(dist))


def read_predictions(path) -> dict[tuple[str, str], float]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path.name}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"event_id", "station_id", "predicted_intensity"}
        if not need <= set(reader.fieldnames or ()):
            raise DataError(f"{path.name}: expected columns {sorted(need)}")
        return {(r["event_id"], r["station_id"]): float(r["predicted_intensity"]) for r in reader}


def write_predictions(path, pred: np.ndarray, events: Sequence[EventSample], network: StationNetwork) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["event_id", "station_id", "predicted_intensity"])
        for k, ev in enumerate(events):
            for j, sid in enumerate(network.station_ids):
                w.writerow([ev.event_id, sid, repr(float(pred[k, j]))])


def residuals_from_files(pred_csv, labels_csv, catalog_csv, stations_csv=None) -> ResidualSet:
    """Join an external prediction file with labels and catalog annotations.

    Only (event, station) pairs present in both files are used; PGA labels
    are converted to intensity.
    """
    pred = read_predictions(pred_csv)
    catalog = {}
    with open(catalog_csv, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            catalog[r["event_id"]] = r
    stations = {}
    if stations_csv is not None and Path(stations_csv).exists():
        with open(stations_csv, newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                stations[r["station_id"]] = (float(r["latitude_deg"]), float(r["longitude_deg"]))
    from .data import haversine_km

    rows = []
    with open(labels_csv, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            key = (r["event_id"], r["station_id"])
            if key not in pred:
                continue
            value = float(r["value"])
            if r["unit"] == "pga_cm_s2":
                value = gmice.pga_to_intensity(value)
            elif r["unit"] != "intensity_ems98":
                raise DataError(f"labels.csv: unknown unit {r['unit']!r}")
            ev = catalog.get(r["event_id"])
            if ev is None:
                raise DataError(f"catalog.csv: unknown event {r['event_id']!r}")
            dist = np.nan
            if r["station_id"] in stations:
                lat, lon = stations[r["station_id"]]
                dist = float(haversine_km(float(ev["lat_deg"]), float(ev["lon_deg"]), lat, lon))
            rows.append((r["event_id"], r["station_id"], pred[key], value,
                         float(ev["magnitude"]), float(ev["depth_km"]), dist))
    if not rows:
        raise DataError("no (event, station) pairs shared by predictions and labels")
    cols = list(zip(*rows))
    return ResidualSet(np.array(cols[2]), np.array(cols[3]), np.array(cols[0]), np.array(cols[1]),
                       np.array(cols[4]), np.array(cols[5]), np.array(cols[6]))


# ---------------------------------------------------------------------------
# window sweep


def window_sweep(model, adjacency, events, windows: Iterable[float], network=None,
                 sampling_rate: float = 100.0) -> list[dict]:
    """Metrics per input window; windows longer than the records are skipped."""
    from .training import predict

    n_samples = events[0].waveforms.shape[1]
    rows = []
    for w in windows:
        if w * sampling_rate > n_samples:
            log.warning("window %s s exceeds record length, skipped", w)
            continue
        pred = predict(model, adjacency, events, window_s=w)
        m = metrics(residual_set(pred, events, network))
        row = {"window_s": w}
        row.update(m.as_row())
        rows.append(row)
    return rows


def comparison_table(sets: Mapping[str, ResidualSet]) -> list[dict]:
    rows = []
    for name, rs in sets.items():
        row = {"model": name}
        row.update(metrics(rs).as_row())
        ba = bland_altman(rs)
        row.update(mean_difference=ba.mean_difference, loa_low=ba.loa_low, loa_high=ba.loa_high)
        rows.append(row)
    return rows


def ablation_table(results: Mapping[str, Metrics]) -> list[dict]:
    return [
        {"layers": name, "mse": m.mse, "normalized_mse_percent": 100.0 * m.nmse}
        for name, m in results.items()
    ]


# ---------------------------------------------------------------------------
# CSV + plots


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def write_rows(path, rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> Path:
    path = Path(path)
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])
    return path


def read_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def conditional_rows(groups: Sequence[Group]) -> list[dict]:
    return [
        {"group": g.label, "low": g.low, "high": g.high, "n": g.n,
         "slope": g.slope, "intercept": g.intercept}
        for g in groups
    ]


def scatter_rows(groups: Sequence[Group]) -> list[dict]:
    rows = []
    for g in groups:
        for o, p in zip(g.residuals.observed, g.residuals.predicted):
            rows.append({"group": g.label, "observed": o, "predicted": p})
    return rows


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata={"Software": None})
    _pyplot().close(fig)


def render_conditional(points_csv, lines_csv, png_path, title=""):
    plt = _pyplot()
    pts = read_rows(points_csv)
    lines = read_rows(lines_csv)
    fig, ax = plt.subplots(figsize=(5, 5))
    for line in lines:
        sel = [r for r in pts if r["group"] == line["group"]]
        if sel:
            ax.scatter([float(r["observed"]) for r in sel], [float(r["predicted"]) for r in sel],
                       s=6, alpha=0.5, label=f"{line['group']} (n={line['n']})")
        slope, icpt = float(line["slope"]), float(line["intercept"])
        if np.isfinite(slope):
            xs = np.array([gmice.I_MIN, gmice.I_MAX])
            ax.plot(xs, slope * xs + icpt, lw=1)
    ax.plot([gmice.I_MIN, gmice.I_MAX], [gmice.I_MIN, gmice.I_MAX], "k--", lw=0.8)
    ax.set_xlabel("observed intensity")
    ax.set_ylabel("predicted intensity")
    ax.set_title(title)
    ax.legend(fontsize=7)
    _save(fig, png_path)


def render_bland_altman(points_csv, stats_csv, png_path):
    plt = _pyplot()
    pts = read_rows(points_csv)
    st = read_rows(stats_csv)[0]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter([float(r["mean"]) for r in pts], [float(r["difference"]) for r in pts], s=6, alpha=0.5)
    for key, style in (("mean_difference", "-"), ("loa_low", "--"), ("loa_high", "--")):
        ax.axhline(float(st[key]), color="k", ls=style, lw=0.8)
    ax.set_xlabel("mean of predicted and observed")
    ax.set_ylabel("predicted - observed")
    _save(fig, png_path)


def render_window_sweep(csv_path, png_path):
    plt = _pyplot()
    rows = read_rows(csv_path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([float(r["window_s"]) for r in rows], [float(r["mse"]) for r in rows], "o-")
    ax.set_xlabel("input window (s)")
    ax.set_ylabel("MSE")
    _save(fig, png_path)


def emit_report(out_dir, rs: ResidualSet, sweep_rows: Sequence[Mapping] | None = None,
                baselines: Mapping[str, ResidualSet] | None = None) -> dict[str, Path]:
    """Write metrics, Bland-Altman, conditional groupings and plots to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    files["metrics"] = write_rows(out / "metrics.csv", [metrics(rs).as_row()])
    ba = bland_altman(rs)
    files["bland_altman"] = write_rows(out / "bland_altman.csv", [ba.__dict__])
    mean = 0.5 * (rs.predicted + rs.observed)
    files["bland_altman_points"] = write_rows(
        out / "bland_altman_points.csv",
        [{"mean": m, "difference": d} for m, d in zip(mean, rs.residuals)],
        ["mean", "difference"],
    )
    render_bland_altman(out / "bland_altman_points.csv", out / "bland_altman.csv", out / "bland_altman.png")
    for axis in ("magnitude", "depth"):
        if (rs.magnitude if axis == "magnitude" else rs.depth_km) is None:
            continue
        groups = conditional_groups(rs, axis)
        files[f"conditional_{axis}"] = write_rows(
            out / f"conditional_{axis}.csv", conditional_rows(groups),
            ["group", "low", "high", "n", "slope", "intercept"])
        write_rows(out / f"conditional_{axis}_points.csv", scatter_rows(groups),
                   ["group", "observed", "predicted"])
        render_conditional(out / f"conditional_{axis}_points.csv", out / f"conditional_{axis}.csv",
                           out / f"conditional_{axis}.png", title=f"by {axis}")
    if sweep_rows:
        files["window_sweep"] = write_rows(out / "window_sweep.csv", sweep_rows)
        render_window_sweep(out / "window_sweep.csv", out / "window_sweep.png")
    if baselines:
        sets = {"model": rs}
        sets.update(baselines)
        files["comparison"] = write_rows(out / "comparison.csv", comparison_table(sets))
    return files
