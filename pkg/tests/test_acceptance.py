"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line with the measured quantity,
then asserts. The two training criteria take several minutes on one CPU
core and are marked ``slow``.
"""

import time

import numpy as np
import pytest
import torch

from quakecast import gmice
from quakecast.eew import fraction_p_after, warning_summary, warning_times
from quakecast.evaluation import ResidualSet, bland_altman, conditional_groups, metrics, window_sweep
from quakecast.graph import build_adjacency
from quakecast.losses import contrastive_loss
from quakecast.model import ModelConfig, SeismicGNN, compact_config, count_parameters
from quakecast.synth import SynthConfig, generate
from quakecast.training import TrainConfig, TrainData, embed_events, train_phase1, train_two_phase

from conftest import random_distances
from oracles import adjacency_oracle, contrastive_oracle
from test_losses import loss_gradient_errors
from test_model import network_gradient_error, permutation_error

TARGET_PARAMS = 705_000


@pytest.fixture
def verdict(capsys):
    def report(label, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {label}: {detail}")
        assert ok, f"{label}: {detail}"
    return report


def test_c01_adjacency_oracle(verdict):
    t0 = time.perf_counter()
    g = np.random.default_rng(2024)
    worst, scale_ok = 0.0, True
    for _ in range(100):
        n = int(g.integers(3, 21))
        d = random_distances(g, n)
        w = build_adjacency(d).weights
        worst = max(worst, float(np.max(np.abs(w - np.array(adjacency_oracle(d))))))
        for s in (0.25, 8.0, 1024.0):
            scale_ok &= bool(np.array_equal(w, build_adjacency(d * s).weights))
    dt = time.perf_counter() - t0
    verdict("adjacency oracle", worst <= 1e-12 and scale_ok and dt < 10,
            f"max |diff| {worst:.2e}, rescaling exact {scale_ok}, {dt:.2f} s")


def test_c02_gmice(verdict):
    t0 = time.perf_counter()
    g = np.random.default_rng(7)
    exact = gmice.pga_to_intensity(1.0) == 2.03
    wide = 10.0 ** g.uniform(-6, 8, 10_000)
    out = gmice.pga_to_intensity(wide)
    clamped = bool(np.all((out >= 2.0) & (out <= 9.5)))
    i = g.uniform(2.03, 9.5, 10_000)
    rt = float(np.max(np.abs(gmice.pga_to_intensity(gmice.intensity_to_pga(i)) - i) / i))
    dt = time.perf_counter() - t0
    verdict("GMICE", exact and clamped and rt <= 1e-9 and dt < 1,
            f"I(1)=2.03 {exact}, range ok {clamped}, round trip {rt:.1e}, {dt:.3f} s")


def test_c03_contrastive_oracle(verdict):
    t0 = time.perf_counter()
    g = np.random.default_rng(11)
    worst = 0.0
    for m in (2, 4, 8):
        for _ in range(25):
            z = g.normal(size=(m, 16))
            tau = g.uniform(0.05, 1.0)
            got = contrastive_loss(torch.tensor(z), tau).item()
            worst = max(worst, abs(got - contrastive_oracle(z.tolist(), tau, list(np.arange(m) ^ 1))))
    same = contrastive_loss(torch.tensor([[0.4, -1.0, 2.5]] * 2, dtype=torch.float64)).item()
    dt = time.perf_counter() - t0
    verdict("contrastive oracle", worst <= 1e-6 and same == 0.0 and dt < 5,
            f"max |diff| {worst:.2e}, identical pair {same}, {dt:.2f} s")


def test_c04_gradient_checks(verdict):
    t0 = time.perf_counter()
    errs = loss_gradient_errors(100, seed=4)
    errs["network"] = network_gradient_error(100, seed=4)
    dt = time.perf_counter() - t0
    worst = max(errs.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    verdict("gradient checks", worst < 1e-4 and dt < 300, f"{detail}, {dt:.0f} s")


def test_c05_parameter_count(verdict):
    t0 = time.perf_counter()
    n = count_parameters(SeismicGNN(ModelConfig()))
    dt = time.perf_counter() - t0
    rel = n / TARGET_PARAMS - 1
    verdict("parameter count", abs(rel) <= 0.10 and dt < 1, f"{n} ({rel:+.1%} vs 0.705 M), {dt:.2f} s")


def test_c06_equivariance(verdict):
    err = permutation_error(20, seed=6)
    verdict("permutation equivariance", err < 1e-12, f"max deviation {err:.1e} over 20 instances")


def cluster_margin(model, adjacency, events, windows=(5, 10, 15, 20, 25, 30)):
    """Mean intra-event minus inter-event cosine similarity of flattened embeddings."""
    n = len(events)
    embs = [torch.nn.functional.normalize(embed_events(model, adjacency, events, window_s=w).reshape(n, -1), dim=1)
            for w in windows]
    e = torch.stack(embs, 1).reshape(n * len(windows), -1)
    sim = e @ e.T
    owner = torch.arange(e.shape[0]) // len(windows)
    same = (owner[:, None] == owner[None]) & ~torch.eye(e.shape[0], dtype=torch.bool)
    diff = owner[:, None] != owner[None]
    return sim[same].mean().item(), sim[diff].mean().item()


@pytest.mark.slow
def test_c07_contrastive_clustering(verdict):
    t0 = time.perf_counter()
    ds = generate(SynthConfig(n_events=10, n_stations=20, seed=0))
    adj = build_adjacency(ds.network.distances).weights
    torch.manual_seed(0)
    model = SeismicGNN(compact_config())
    train_phase1(model, TrainData(adj, ds.events, []), TrainConfig(epochs_phase1=150, epochs_phase2=1, batch_size=20))
    intra, inter = cluster_margin(model, adj, ds.events)
    dt = time.perf_counter() - t0
    verdict("contrastive clustering", intra - inter >= 0.2 and dt < 600,
            f"intra {intra:.4f}, inter {inter:.4f}, margin {intra - inter:.4f}, {dt:.0f} s")


@pytest.mark.slow
def test_c08_end_to_end_learning(verdict):
    t0 = time.perf_counter()
    ds = generate(SynthConfig(n_events=200, n_stations=20, seed=1))
    adj = build_adjacency(ds.network.distances).weights
    ev = ds.events
    data = TrainData(adj, ev[:160], ev[160:180])
    test = ev[180:]
    torch.manual_seed(0)
    model = SeismicGNN(compact_config())
    train_two_phase(model, data, TrainConfig(epochs_phase1=30, epochs_phase2=30))
    sweep = {r["window_s"]: r["mse"] for r in window_sweep(model, adj, test, (5, 10, 15, 20, 25, 30), ds.network)}
    train_mean = np.mean(np.concatenate([e.labels[e.label_valid] for e in data.train]))
    held = np.concatenate([e.labels[e.label_valid] for e in test])
    baseline = float(np.mean((held - train_mean) ** 2))
    ratio = sweep[30] / baseline
    degrade = sweep[5] / sweep[30]
    dt = time.perf_counter() - t0
    curve = " ".join(f"{w}s:{m:.3f}" for w, m in sweep.items())
    verdict("end-to-end learning", ratio <= 0.7 and 1.0 <= degrade <= 2.5 and dt < 1800,
            f"MSE {sweep[30]:.4f} = {ratio:.0%} of constant {baseline:.4f}; "
            f"5s/30s {degrade:.2f}; sweep {curve}; {dt:.0f} s")


def test_c09_eew_against_truth(verdict):
    cfg = SynthConfig(n_events=30, n_stations=20, lat_min=42.4, lat_max=43.0, lon_min=12.6, lon_max=13.4,
                      depth_min=1.0, depth_max=3.0, seed=3)
    ds = generate(cfg)
    tl = warning_times(ds.network, ds.events, ds.picks, window_s=5.0)
    truth = {(r["event_id"], r["station_id"]): r for r in ds.truth}
    rows = [truth[k] for k in zip(tl.event_ids, tl.station_ids)]
    s_true = np.array([r["s_arrival_s"] for r in rows])
    p_true = np.array([r["p_arrival_s"] for r in rows])
    shaking_err = float(np.max(np.abs(tl.max_shaking_s - s_true)))
    frac_err = max(abs(fraction_p_after(tl, s) - float(np.mean(p_true > s))) for s in (2.0, 5.0, 8.0))
    summary = warning_summary(tl)
    rel = summary.slope_s_per_km * cfg.vs - 1
    monotone = bool(np.all(np.diff(summary.cdf[:, 1]) >= 0) and np.all(np.diff(summary.cdf[:, 0]) > 0))
    ok = (shaking_err <= 0.1 and frac_err <= 0.1 and abs(rel) <= 0.1 and monotone
          and 0.15 <= summary.slope_s_per_km <= 0.45)
    verdict("EEW vs truth", ok,
            f"max-shaking err {shaking_err:.3f} s, P fraction err {frac_err:.3f}, "
            f"slope {summary.slope_s_per_km:.4f} s/km ({rel:+.1%} vs 1/vs), CDF monotone {monotone}")


def test_c10_evaluation_metrics(verdict):
    # four pairs with residuals (0.5, 0, -0.5, 1)
    rs = ResidualSet([3.5, 4.0, 4.5, 7.0], [3.0, 4.0, 5.0, 6.0], magnitude=[3.2, 3.5, 4.5, 4.6],
                     depth_km=[1.0, 8.0, 10.0, 10.5])
    sd = np.sqrt(0.3125)
    cc = 5.5 / np.sqrt(7.25 * 5.0)
    m, ba = metrics(rs), bland_altman(rs)
    mag = conditional_groups(rs, "magnitude")
    dep = conditional_groups(rs, "depth")
    hand = [
        m.mse - 0.375, m.sd - sd, m.cc - cc, m.r2 - cc * cc, m.nmse - 0.375 / 4.5,
        ba.mean_difference - 0.25, ba.loa_low - (0.25 - 1.96 * sd), ba.loa_high - (0.25 + 1.96 * sd),
        mag[1].slope - 0.5, mag[1].intercept - 2.0, dep[1].slope - 0.5, dep[1].intercept - 2.0,
    ]
    counts_ok = [g.n for g in mag] == [1, 2, 1] and [g.n for g in dep] == [1, 2, 1]
    worst_hand = float(np.max(np.abs(hand)))
    g = np.random.default_rng(10)
    worst_id = 0.0
    for _ in range(200):
        obs = g.uniform(2, 9, 50)
        pred = obs + g.normal(0, g.uniform(0.1, 2), 50)
        r = ResidualSet(pred, obs)
        mm, b = metrics(r), bland_altman(r)
        worst_id = max(worst_id, abs(mm.r2 - mm.cc ** 2), abs((b.loa_high - b.loa_low) - 3.92 * b.sd))
    verdict("evaluation metrics", worst_hand <= 1e-9 and counts_ok and worst_id <= 1e-9,
            f"hand oracle max |diff| {worst_hand:.1e}, bin counts ok {counts_ok}, identities {worst_id:.1e}")
