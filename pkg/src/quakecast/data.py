"""Dataset types, directory I/O, zero imputation and fold splitting.

Directory layout::

    stations.csv    station_id, latitude_deg, longitude_deg
    distances.csv   N x N km, no header, station order of stations.csv
    catalog.csv     event_id, origin_time_epoch_s, lat_deg, lon_deg, depth_km, magnitude
    labels.csv      event_id, station_id, value, unit (pga_cm_s2 | intensity_ems98)
    picks.csv       event_id, station_id, p_arrival_s_after_origin   (optional)
    mask.csv        event_id, station_id, available
    waveforms.hdr   key=value lines describing waveforms.bin
    waveforms.bin   float32 little-endian, order event, station, sample, component
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import gmice

log = logging.getLogger(__name__)

SAMPLING_RATE = 100.0
N_COMPONENTS = 3
WAVEFORM_DTYPE = np.dtype("<f4")
LABEL_UNITS = ("pga_cm_s2", "intensity_ems98")


class DataError(Exception):
    """Raised for malformed or inconsistent dataset files."""


@dataclass
class StationNetwork:
    station_ids: list[str]
    latitudes: np.ndarray
    longitudes: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        self.latitudes = np.asarray(self.latitudes, dtype=np.float64)
        self.longitudes = np.asarray(self.longitudes, dtype=np.float64)
        self.distances = np.asarray(self.distances, dtype=np.float64)
        check_distances(self.distances)
        n = len(self.station_ids)
        if self.distances.shape != (n, n):
            raise DataError(
                f"distances shape {self.distances.shape} does not match {n} stations"
            )
        if len(set(self.station_ids)) != n:
            raise DataError("duplicate station ids")

    @property
    def n_stations(self) -> int:
        return len(self.station_ids)

    def index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.station_ids)}


def check_distances(d: np.ndarray) -> None:
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise DataError(f"distance matrix must be square, got shape {d.shape}")
    n = d.shape[0]
    if n < 2:
        raise DataError("a station network needs at least 2 stations")
    if not np.all(np.isfinite(d)):
        raise DataError("distance matrix contains non-finite entries")
    asym = np.argwhere(d != d.T)
    if len(asym):
        i, j = asym[0]
        raise DataError(
            f"distance matrix is not symmetric: d[{i}][{j}]={d[i, j]} != d[{j}][{i}]={d[j, i]}"
        )
    off = ~np.eye(n, dtype=bool)
    if np.any(d[off] <= 0):
        i, j = np.argwhere((d <= 0) & off)[0]
        raise DataError(f"non-positive off-diagonal distance at [{i}][{j}]")
    if np.any(np.diag(d) != 0):
        raise DataError("distance matrix diagonal must be zero")


@dataclass
class WaveformRecord:
    samples: np.ndarray
    available: bool
    sampling_rate: float = SAMPLING_RATE


@dataclass
class EventSample:
    """One earthquake observed over the whole network.

    ``waveforms`` is (n_stations, n_samples, 3) float32; ``labels`` are EMS-98
    intensities, meaningful only where ``label_valid`` is set.
    """

    event_id: str
    origin_time: float
    latitude: float
    longitude: float
    depth_km: float
    magnitude: float
    waveforms: np.ndarray
    available: np.ndarray
    labels: np.ndarray
    label_valid: np.ndarray
    label_source: tuple[str, ...] = ()

    @property
    def n_stations(self) -> int:
        return self.waveforms.shape[0]

    @property
    def is_empty(self) -> bool:
        """No station recorded this event; input is all zeros."""
        return not bool(np.any(self.available))

    def record(self, i: int) -> WaveformRecord:
        return WaveformRecord(self.waveforms[i], bool(self.available[i]))


@dataclass
class DatasetSplit:
    train: list[str]
    validation: list[str]
    test: list[str]
    fold_index: int
    seed: int


# ---------------------------------------------------------------------------
# imputation


def impute_missing(waveforms: np.ndarray, available: np.ndarray) -> np.ndarray:
    """Return a copy where every unavailable station block is exactly zero.

    ``waveforms`` is (..., n_stations, n_samples, 3) and ``available`` the
    matching (..., n_stations) mask. Available blocks are copied unchanged.
    """
    waveforms = np.asarray(waveforms)
    available = np.asarray(available, dtype=bool)
    if waveforms.shape[:-2] != available.shape:
        raise ValueError(
            f"mask shape {available.shape} does not match waveforms {waveforms.shape}"
        )
    out = waveforms.copy()
    out[~available] = 0
    return out


# ---------------------------------------------------------------------------
# folds


def split_folds(
    event_ids: Sequence[str],
    k: int,
    seed: int = 0,
    val_fraction: float = 0.1,
) -> list[DatasetSplit]:
    """Event-level k-fold splits.

    Fold i's test set is the i-th of k near-equal shuffled chunks; the
    validation set is the first ``val_fraction`` of the remaining events
    (at least one event when two or more remain).
    """
    ids = list(event_ids)
    if k < 2:
        raise ValueError("k must be at least 2")
    if len(ids) < k:
        raise ValueError(f"cannot make {k} folds from {len(ids)} events")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate event ids in catalog")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    chunks = np.array_split(np.arange(len(order)), k)
    splits = []
    for fold, chunk in enumerate(chunks):
        test = [order[i] for i in chunk]
        rest = [e for e in order if e not in set(test)]
        n_val = int(round(val_fraction * len(rest)))
        if len(rest) >= 2:
            n_val = min(max(n_val, 1), len(rest) - 1)
        else:
            n_val = 0
        splits.append(DatasetSplit(
            train=rest[n_val:], validation=rest[:n_val], test=test,
            fold_index=fold, seed=seed,
        ))
    return splits


# ---------------------------------------------------------------------------
# reading


def _read_csv(path: Path, required: Sequence[str]) -> list[dict[str, str]]:
    if not path.exists():
        raise DataError(f"missing file: {path.name}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"{path.name}: missing columns {missing}")
        rows = []
        for row in reader:
            rows.append({k.strip(): (v or "").strip() for k, v in row.items() if k})
    return rows


def _float(value: str, where: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise DataError(f"{where}: cannot parse {value!r} as a number") from None


def read_header(path: Path) -> dict[str, str]:
    if not path.exists():
        raise DataError(f"missing file: {path.name}")
    fields = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path.name}: malformed line {line!r}")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    return fields


def _header_int(fields: dict[str, str], key: str) -> int:
    if key not in fields:
        raise DataError(f"waveforms.hdr: missing field {key}")
    try:
        value = int(fields[key])
    except ValueError:
        raise DataError(f"waveforms.hdr: field {key} is not an integer: {fields[key]!r}") from None
    if value <= 0:
        raise DataError(f"waveforms.hdr: field {key} must be positive")
    return value


def load_network(root: Path) -> StationNetwork:
    root = Path(root)
    rows = _read_csv(root / "stations.csv", ["station_id", "latitude_deg", "longitude_deg"])
    dpath = root / "distances.csv"
    if not dpath.exists():
        raise DataError("missing file: distances.csv")
    try:
        dist = np.loadtxt(dpath, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DataError(f"distances.csv: {exc}") from None
    return StationNetwork(
        station_ids=[r["station_id"] for r in rows],
        latitudes=[_float(r["latitude_deg"], "stations.csv") for r in rows],
        longitudes=[_float(r["longitude_deg"], "stations.csv") for r in rows],
        distances=dist,
    )


def load_dataset(root) -> tuple[StationNetwork, list[EventSample]]:
    """Read a dataset directory. Raises :class:`DataError` on any defect."""
    root = Path(root)
    network = load_network(root)
    n_st = network.n_stations
    st_index = network.index()

    cat = _read_csv(root / "catalog.csv",
                    ["event_id", "origin_time_epoch_s", "lat_deg", "lon_deg", "depth_km", "magnitude"])
    ev_ids = [r["event_id"] for r in cat]
    if len(set(ev_ids)) != len(ev_ids):
        raise DataError("catalog.csv: duplicate event ids")
    ev_index = {e: i for i, e in enumerate(ev_ids)}

    hdr = read_header(root / "waveforms.hdr")
    n_ev = _header_int(hdr, "n_events")
    n_hs = _header_int(hdr, "n_stations")
    n_samples = _header_int(hdr, "n_samples")
    n_comp = _header_int(hdr, "n_components")
    if n_comp != N_COMPONENTS:
        raise DataError(f"waveforms.hdr: field n_components must be 3, got {n_comp}")
    if hdr.get("order", "event,station,sample,component") != "event,station,sample,component":
        raise DataError(f"waveforms.hdr: field order unsupported: {hdr['order']!r}")
    if hdr.get("dtype", "f32le") != "f32le":
        raise DataError(f"waveforms.hdr: field dtype unsupported: {hdr['dtype']!r}")
    if "sampling_rate_hz" in hdr and _float(hdr["sampling_rate_hz"], "waveforms.hdr") != SAMPLING_RATE:
        raise DataError(
            f"waveforms.hdr: field sampling_rate_hz must be 100, got {hdr['sampling_rate_hz']}"
        )
    if n_ev != len(ev_ids):
        raise DataError(f"waveforms.hdr: field n_events={n_ev} but catalog has {len(ev_ids)}")
    if n_hs != n_st:
        raise DataError(f"waveforms.hdr: field n_stations={n_hs} but stations.csv has {n_st}")

    bpath = root / "waveforms.bin"
    if not bpath.exists():
        raise DataError("missing file: waveforms.bin")
    expected = n_ev * n_st * n_samples * N_COMPONENTS * WAVEFORM_DTYPE.itemsize
    if bpath.stat().st_size != expected:
        raise DataError(
            f"waveforms.bin: size {bpath.stat().st_size} bytes, header implies {expected}"
        )
    wave = np.fromfile(bpath, dtype=WAVEFORM_DTYPE).reshape(n_ev, n_st, n_samples, N_COMPONENTS)
    wave = wave.astype(np.float32, copy=False)

    available = np.zeros((n_ev, n_st), dtype=bool)
    for r in _read_csv(root / "mask.csv", ["event_id", "station_id", "available"]):
        e, s = _lookup(r, ev_index, st_index, "mask.csv")
        if r["available"] not in ("0", "1"):
            raise DataError(f"mask.csv: available must be 0 or 1 for {r['event_id']}/{r['station_id']}")
        if "sampling_rate_hz" in r and r["sampling_rate_hz"]:
            if _float(r["sampling_rate_hz"], "mask.csv") != SAMPLING_RATE:
                raise DataError(
                    f"sampling rate {r['sampling_rate_hz']} Hz for event {r['event_id']} "
                    f"station {r['station_id']}; expected 100 Hz"
                )
        if "n_samples" in r and r["n_samples"]:
            if int(_float(r["n_samples"], "mask.csv")) != n_samples:
                raise DataError(
                    f"record length {r['n_samples']} for event {r['event_id']} "
                    f"station {r['station_id']}; expected {n_samples}"
                )
        available[e, s] = r["available"] == "1"
    wave = impute_missing(wave, available)

    labels = np.full((n_ev, n_st), np.nan)
    valid = np.zeros((n_ev, n_st), dtype=bool)
    source = np.full((n_ev, n_st), "", dtype=object)
    for r in _read_csv(root / "labels.csv", ["event_id", "station_id", "value", "unit"]):
        e, s = _lookup(r, ev_index, st_index, "labels.csv")
        value = _float(r["value"], "labels.csv")
        unit = r["unit"]
        if unit == "pga_cm_s2":
            value = gmice.pga_to_intensity(value)
        elif unit == "intensity_ems98":
            if not (gmice.I_MIN <= value <= gmice.I_MAX):
                raise DataError(
                    f"labels.csv: intensity {value} outside [2, 9.5] for "
                    f"event {r['event_id']} station {r['station_id']}"
                )
        else:
            raise DataError(f"labels.csv: unknown unit {unit!r}")
        labels[e, s] = value
        valid[e, s] = True
        source[e, s] = unit

    events = []
    for i, r in enumerate(cat):
        ev = EventSample(
            event_id=r["event_id"],
            origin_time=_float(r["origin_time_epoch_s"], "catalog.csv"),
            latitude=_float(r["lat_deg"], "catalog.csv"),
            longitude=_float(r["lon_deg"], "catalog.csv"),
            depth_km=_float(r["depth_km"], "catalog.csv"),
            magnitude=_float(r["magnitude"], "catalog.csv"),
            waveforms=wave[i],
            available=available[i],
            labels=labels[i],
            label_valid=valid[i],
            label_source=tuple(source[i]),
        )
        if ev.is_empty:
            log.warning("event %s has no available waveforms", ev.event_id)
        events.append(ev)
    return network, events


def _lookup(row, ev_index, st_index, fname):
    try:
        return ev_index[row["event_id"]], st_index[row["station_id"]]
    except KeyError as exc:
        raise DataError(f"{fname}: unknown id {exc.args[0]!r}") from None


def load_picks(root) -> dict[tuple[str, str], float] | None:
    """P arrivals (seconds after origin) keyed by (event_id, station_id)."""
    path = Path(root) / "picks.csv"
    if not path.exists():
        return None
    rows = _read_csv(path, ["event_id", "station_id", "p_arrival_s_after_origin"])
    return {
        (r["event_id"], r["station_id"]): _float(r["p_arrival_s_after_origin"], "picks.csv")
        for r in rows
        if r["p_arrival_s_after_origin"] != ""
    }


# ---------------------------------------------------------------------------
# writing


def save_dataset(
    root,
    network: StationNetwork,
    events: Sequence[EventSample],
    picks: dict[tuple[str, str], float] | None = None,
) -> None:
    """Write the dataset directory; waveforms of unavailable records are zeros."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "stations.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["station_id", "latitude_deg", "longitude_deg"])
        for sid, lat, lon in zip(network.station_ids, network.latitudes, network.longitudes):
            w.writerow([sid, repr(float(lat)), repr(float(lon))])
    np.savetxt(root / "distances.csv", network.distances, delimiter=",", fmt="%.17g")

    with open(root / "catalog.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["event_id", "origin_time_epoch_s", "lat_deg", "lon_deg", "depth_km", "magnitude"])
        for ev in events:
            w.writerow([ev.event_id, repr(float(ev.origin_time)), repr(float(ev.latitude)),
                        repr(float(ev.longitude)), repr(float(ev.depth_km)), repr(float(ev.magnitude))])

    with open(root / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["event_id", "station_id", "value", "unit"])
        for ev in events:
            for j, sid in enumerate(network.station_ids):
                if ev.label_valid[j]:
                    w.writerow([ev.event_id, sid, repr(float(ev.labels[j])), "intensity_ems98"])

    with open(root / "mask.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["event_id", "station_id", "available"])
        for ev in events:
            for j, sid in enumerate(network.station_ids):
                w.writerow([ev.event_id, sid, int(bool(ev.available[j]))])

    if picks:
        with open(root / "picks.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["event_id", "station_id", "p_arrival_s_after_origin"])
            for ev in events:
                for sid in network.station_ids:
                    if (ev.event_id, sid) in picks:
                        w.writerow([ev.event_id, sid, repr(float(picks[ev.event_id, sid]))])

    n_samples = events[0].waveforms.shape[1] if events else 0
    (root / "waveforms.hdr").write_text(
        f"n_events={len(events)}\n"
        f"n_stations={network.n_stations}\n"
        f"n_samples={n_samples}\n"
        f"n_components={N_COMPONENTS}\n"
        "order=event,station,sample,component\n"
        "dtype=f32le\n"
        f"sampling_rate_hz={int(SAMPLING_RATE)}\n",
        encoding="utf-8",
    )
    with open(root / "waveforms.bin", "wb") as fh:
        for ev in events:
            block = impute_missing(ev.waveforms, ev.available)
            fh.write(np.ascontiguousarray(block, dtype=WAVEFORM_DTYPE).tobytes())


def stack_events(events: Iterable[EventSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stack waveforms, availability, labels and label masks over events."""
    events = list(events)
    return (
        np.stack([e.waveforms for e in events]),
        np.stack([e.available for e in events]),
        np.stack([np.nan_to_num(e.labels, nan=0.0) for e in events]),
        np.stack([e.label_valid for e in events]),
    )


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance on a 6371 km sphere."""
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    a = (np.sin((lat2 - lat1) / 2) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
    return 2 * 6371.0 * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def epicentral_distances(network: StationNetwork, event: EventSample) -> np.ndarray:
    return haversine_km(event.latitude, event.longitude, network.latitudes, network.longitudes)
