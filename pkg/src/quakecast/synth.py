"""Deterministic synthetic seismic network generator.

Stations and events are drawn uniformly in a lat/lon box; each record holds a
small P Ricker pulse at R/vp, a dominant S Ricker pulse at R/vs and Gaussian
noise. Peak acceleration follows log10(PGA) = a*M - b*log10(R + c) with R the
hypocentral distance in km, and labels are the EMS-98 conversion of that PGA.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gmice
from .data import SAMPLING_RATE, EventSample, StationNetwork, haversine_km, save_dataset

ORIGIN_EPOCH = 1_451_606_400.0  # 2016-01-01T00:00:00Z


@dataclass(frozen=True)
class SynthConfig:
    n_stations: int = 20
    n_events: int = 200
    lat_min: float = 42.5
    lat_max: float = 43.0
    lon_min: float = 12.8
    lon_max: float = 13.4
    depth_min: float = 2.0
    depth_max: float = 12.0
    mag_min: float = 3.0
    mag_max: float = 5.0
    vp: float = 6.0
    vs: float = 3.5
    att_a: float = 1.0
    att_b: float = 1.8
    att_c: float = 10.0
    p_ratio: float = 0.25
    p_freq: float = 5.0
    s_freq: float = 2.0
    noise: float = 0.005
    missing_fraction: float = 0.0
    duration_s: float = 30.0
    min_station_spacing_km: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.vp > self.vs > 0:
            raise ValueError("need vp > vs > 0")
        if not 2.0 <= self.mag_min <= self.mag_max <= 7.0:
            raise ValueError("magnitude range must lie within [2, 7]")
        if self.n_stations < 2:
            raise ValueError("need at least 2 stations")
        if self.n_events < 1:
            raise ValueError("need at least 1 event")
        if self.lat_max <= self.lat_min or self.lon_max <= self.lon_min:
            raise ValueError("empty region box")
        if self.depth_min < 0 or self.depth_max < self.depth_min:
            raise ValueError("invalid depth range")
        if not 0.0 <= self.missing_fraction < 1.0:
            raise ValueError("missing_fraction must lie in [0, 1)")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * SAMPLING_RATE))


@dataclass
class SynthDataset:
    network: StationNetwork
    events: list[EventSample]
    picks: dict[tuple[str, str], float]
    truth: list[dict]
    config: SynthConfig


def ricker(t: np.ndarray, freq: float) -> np.ndarray:
    """Unit-peak Ricker wavelet centred at t = 0."""
    arg = (np.pi * freq * t) ** 2
    return (1.0 - 2.0 * arg) * np.exp(-arg)


def attenuation_pga(magnitude, hypo_km, cfg: SynthConfig):
    return 10.0 ** (cfg.att_a * np.asarray(magnitude) - cfg.att_b * np.log10(np.asarray(hypo_km) + cfg.att_c))


def _place_stations(cfg: SynthConfig, rng: np.random.Generator):
    lats, lons = [], []
    tries = 0
    while len(lats) < cfg.n_stations:
        tries += 1
        if tries > 200 * cfg.n_stations:
            raise ValueError(
                f"region too small for {cfg.n_stations} stations "
                f"{cfg.min_station_spacing_km} km apart"
            )
        lat = rng.uniform(cfg.lat_min, cfg.lat_max)
        lon = rng.uniform(cfg.lon_min, cfg.lon_max)
        if lats and np.min(haversine_km(lat, lon, np.array(lats), np.array(lons))) < cfg.min_station_spacing_km:
            continue
        lats.append(lat)
        lons.append(lon)
    return np.array(lats), np.array(lons)


def _record(rng, n_samples, p_arr, s_arr, pga, p_ratio, cfg):
    t = np.arange(n_samples) / SAMPLING_RATE
    out = np.zeros((n_samples, 3), dtype=np.float64)
    # P mostly vertical, S on the horizontals with a random azimuth
    inc = rng.uniform(0.0, 0.3)
    p_dir = np.array([np.sin(inc) * 0.7, np.sin(inc) * 0.7, np.cos(inc)])
    p_dir /= np.linalg.norm(p_dir)
    az = rng.uniform(0.0, 2 * np.pi)
    s_dir = np.array([np.cos(az), np.sin(az), 0.0])
    out += p_ratio * pga * ricker(t - p_arr, cfg.p_freq)[:, None] * p_dir[None, :]
    out += pga * ricker(t - s_arr, cfg.s_freq)[:, None] * s_dir[None, :]
    out += rng.normal(0.0, cfg.noise, size=out.shape)
    return out.astype(np.float32)


def generate(cfg: SynthConfig = SynthConfig()) -> SynthDataset:
    """Build the full synthetic dataset in memory."""
    root = np.random.SeedSequence(cfg.seed)
    st_seq, ev_seq, rec_seq = root.spawn(3)
    st_rng = np.random.default_rng(st_seq)
    lats, lons = _place_stations(cfg, st_rng)
    n = cfg.n_stations
    dist = haversine_km(lats[:, None], lons[:, None], lats[None, :], lons[None, :])
    dist = 0.5 * (dist + dist.T)
    np.fill_diagonal(dist, 0.0)
    station_ids = [f"ST{i:03d}" for i in range(n)]
    network = StationNetwork(station_ids, lats, lons, dist)

    ev_rng = np.random.default_rng(ev_seq)
    ev_lat = ev_rng.uniform(cfg.lat_min, cfg.lat_max, cfg.n_events)
    ev_lon = ev_rng.uniform(cfg.lon_min, cfg.lon_max, cfg.n_events)
    ev_dep = ev_rng.uniform(cfg.depth_min, cfg.depth_max, cfg.n_events)
    ev_mag = ev_rng.uniform(cfg.mag_min, cfg.mag_max, cfg.n_events)

    events, truth, picks = [], [], {}
    per_event = rec_seq.spawn(cfg.n_events)
    ns = cfg.n_samples
    for k in range(cfg.n_events):
        rng = np.random.default_rng(per_event[k])
        eid = f"EV{k:04d}"
        epi = haversine_km(ev_lat[k], ev_lon[k], lats, lons)
        hypo = np.sqrt(epi ** 2 + ev_dep[k] ** 2)
        p_arr = hypo / cfg.vp
        s_arr = hypo / cfg.vs
        pga = attenuation_pga(ev_mag[k], hypo, cfg)
        intensity = gmice.pga_to_intensity(pga)
        clamped = gmice.clamp_flags(pga)
        available = rng.random(n) >= cfg.missing_fraction
        wave = np.zeros((n, ns, 3), dtype=np.float32)
        for j in range(n):
            rec = _record(rng, ns, p_arr[j], s_arr[j], pga[j], cfg.p_ratio, cfg)
            if available[j]:
                wave[j] = rec
        events.append(EventSample(
            event_id=eid,
            origin_time=ORIGIN_EPOCH + 3600.0 * k,
            latitude=float(ev_lat[k]),
            longitude=float(ev_lon[k]),
            depth_km=float(ev_dep[k]),
            magnitude=float(ev_mag[k]),
            waveforms=wave,
            available=available,
            labels=np.asarray(intensity, dtype=np.float64),
            label_valid=np.ones(n, dtype=bool),
            label_source=("intensity_ems98",) * n,
        ))
        for j, sid in enumerate(station_ids):
            picks[eid, sid] = float(p_arr[j])
            truth.append(dict(
                event_id=eid, station_id=sid, magnitude=float(ev_mag[k]),
                depth_km=float(ev_dep[k]), epicentral_km=float(epi[j]),
                hypocentral_km=float(hypo[j]), p_arrival_s=float(p_arr[j]),
                s_arrival_s=float(s_arr[j]), pga_cm_s2=float(pga[j]),
                intensity=float(intensity[j]), clamped=int(clamped[j]),
                available=int(available[j]),
            ))
    return SynthDataset(network, events, picks, truth, cfg)


TRUTH_COLUMNS = (
    "event_id", "station_id", "magnitude", "depth_km", "epicentral_km", "hypocentral_km",
    "p_arrival_s", "s_arrival_s", "pga_cm_s2", "intensity", "clamped", "available",
)


def write(ds: SynthDataset, out_dir) -> Path:
    out = Path(out_dir)
    save_dataset(out, ds.network, ds.events, ds.picks)
    with open(out / "truth.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=TRUTH_COLUMNS)
        w.writeheader()
        for row in ds.truth:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return out


def read_truth(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in TRUTH_COLUMNS[2:]:
            r[k] = float(r[k])
    return rows
