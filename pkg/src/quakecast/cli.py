"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure (training divergence).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, gmice
from . import config as cfgio
from .data import DataError

log = logging.getLogger("quakecast")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST = "manifest.json"
PRESETS = ("default", "compact", "tiny")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass(frozen=True)
class SplitConfig:
    k: int = 10
    fold: int = 0
    seed: int = 0
    val_fraction: float = 0.1


# ---------------------------------------------------------------------------
# manifests


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digests(paths) -> dict[str, str]:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(p.rglob("*")):
                if f.is_file() and f.name != MANIFEST and not f.name.endswith("." + MANIFEST):
                    out[str(f)] = file_digest(f)
        elif p.is_file():
            out[str(p)] = file_digest(p)
    return out


def write_manifest(out: Path, command: str, argv, config: dict, seed, inputs, outputs, started: float) -> Path:
    """One manifest per run: next to a file output or inside a directory output."""
    path = out / MANIFEST if out.is_dir() else out.with_name(out.name + "." + MANIFEST)
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": {k: cfgio.format_value(v) if not isinstance(v, str) else v for k, v in sorted(config.items())},
        "code_version": __version__,
        "seed": seed,
        "started_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "finished_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "inputs": _digests(inputs),
        "outputs": _digests(outputs),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _resolve(args, defaults: dict) -> dict[str, str]:
    """Merge default < config file < --set overrides < dedicated flags."""
    entries = {k: cfgio.format_value(v) for k, v in defaults.items()}
    if getattr(args, "config", None):
        entries.update(cfgio.read_config(args.config))
    entries.update(cfgio.parse_overrides(getattr(args, "set", None)))
    return entries


# ---------------------------------------------------------------------------
# commands


def cmd_prepare_adjacency(args) -> int:
    from .graph import build_adjacency, read_distances_csv, validate_adjacency, write_adjacency_csv

    started = time.time()
    dist = read_distances_csv(args.distances)
    try:
        adj = build_adjacency(dist, args.quantile, percentile_domain=args.percentile_domain)
    except ValueError as exc:
        raise DataError(f"{args.distances}: {exc}") from None
    report = validate_adjacency(adj.weights)
    if report.violations:
        raise DataError("; ".join(report.violations))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_adjacency_csv(out, adj)
    print(f"threshold {adj.threshold!r} sparsity {report.sparsity:.4f}")
    write_manifest(out, "prepare-adjacency", args.argv,
                   {"quantile": args.quantile, "percentile_domain": args.percentile_domain},
                   None, [args.distances], [out], started)
    return EXIT_OK


def cmd_synth_data(args) -> int:
    from .synth import SynthConfig, generate, write

    started = time.time()
    entries = _resolve(args, {})
    cfgio.check_known(entries, ("synth",))
    cfg = cfgio.build(SynthConfig, entries, "synth")
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    try:
        ds = generate(cfg)
    except ValueError as exc:
        raise cfgio.ConfigError(str(exc)) from None
    out = write(ds, args.out)
    cfgio.write_config(out / "synth.cfg", cfgio.flatten("synth", cfg))
    print(f"wrote {cfg.n_events} events x {cfg.n_stations} stations to {out}")
    write_manifest(out, "synth-data", args.argv, cfgio.flatten("synth", cfg), cfg.seed,
                   [args.config] if args.config else [], [out], started)
    return EXIT_OK


def cmd_augment_preview(args) -> int:
    from .augment import make_contrastive_batch
    from .data import load_dataset
    from .evaluation import _pyplot, _save, write_rows

    started = time.time()
    _, events = load_dataset(args.dataset)
    entries = _resolve(args, {})
    cfgio.check_known(entries, ("augmentation",))
    spec = _aug_spec(entries, events[0].waveforms.shape[1])
    chosen = events[: args.events]
    batch = make_contrastive_batch(chosen, spec, rng_seed=spec.seed, epoch=args.epoch)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [{"position": i, "event_id": e, "clip_s": float(c), "role": "original" if i % 2 == 0 else "augmented"}
            for i, (e, c) in enumerate(zip(batch.event_ids, batch.clip_seconds))]
    write_rows(out / "batch.csv", rows, ["position", "event_id", "clip_s", "role"])
    plt = _pyplot()
    n = min(3, len(chosen))
    fig, axes = plt.subplots(n, 2, figsize=(10, 2.2 * n), squeeze=False)
    t = np.arange(batch.samples.shape[2]) / 100.0
    for k in range(n):
        for col in range(2):
            axes[k][col].plot(t, batch.samples[2 * k + col, 0, :, 0], lw=0.5)
            axes[k][col].set_title(f"{batch.event_ids[2 * k]} clip {batch.clip_seconds[2 * k + col]:g} s", fontsize=8)
    fig.tight_layout()
    _save(fig, out / "batch.png")
    write_manifest(out, "augment-preview", args.argv, cfgio.flatten("augmentation", spec), spec.seed,
                   [args.dataset], [out], started)
    return EXIT_OK


def _aug_spec(entries, n_samples):
    """Augmentation settings for records of ``n_samples``; default clips follow the length."""
    from .augment import AugmentationSpec

    full = int(round(n_samples / 100.0))
    entries = dict(entries)
    entries.setdefault("augmentation.full_length_s", str(full))
    if "augmentation.clip_choices" not in entries:
        entries["augmentation.clip_choices"] = cfgio.format_value(
            AugmentationSpec.for_length(max(full, 10)).clip_choices)
    return cfgio.build(AugmentationSpec, entries, "augmentation")


def _model_base(preset: str, n_samples: int):
    from .model import ModelConfig, compact_config, tiny_config

    if preset == "compact":
        return compact_config(n_samples=n_samples)
    if preset == "tiny":
        return tiny_config(n_samples=n_samples)
    return ModelConfig(n_samples=n_samples)


def cmd_train(args) -> int:
    import torch

    from .checkpoint import save_checkpoint
    from .data import load_dataset, split_folds
    from .graph import build_adjacency, distance_digest
    from .losses import LossConfig
    from .model import ModelConfig, SeismicGNN, count_parameters
    from .training import TrainConfig, TrainData, train_phase1, train_phase2, freeze_and_strip, write_history

    started = time.time()
    network, events = load_dataset(args.dataset)
    n_samples = events[0].waveforms.shape[1]
    entries = _resolve(args, {})
    cfgio.check_known(entries, ("model", "loss", "train", "augmentation", "split", "adjacency"))
    try:
        base = _model_base(args.preset, n_samples)
    except ValueError as exc:
        raise cfgio.ConfigError(f"preset {args.preset}: {exc}") from None
    model_cfg = cfgio.build(ModelConfig, entries, "model", base=base)
    loss_cfg = cfgio.build(LossConfig, entries, "loss")
    train_cfg = cfgio.build(TrainConfig, entries, "train")
    aug = _aug_spec(entries, n_samples)
    split_cfg = cfgio.build(SplitConfig, entries, "split")
    quantile = float(entries.get("adjacency.quantile", 0.75))
    domain = entries.get("adjacency.percentile_domain", "offdiag")
    if args.epochs_phase1 is not None or args.epochs_phase2 is not None or args.seed is not None:
        train_cfg = dataclasses.replace(
            train_cfg,
            epochs_phase1=args.epochs_phase1 or train_cfg.epochs_phase1,
            epochs_phase2=args.epochs_phase2 or train_cfg.epochs_phase2,
            seed=train_cfg.seed if args.seed is None else args.seed,
        )
    if not 0 <= split_cfg.fold < split_cfg.k:
        raise cfgio.ConfigError(f"split.fold must lie in [0, {split_cfg.k})")

    split = split_folds([e.event_id for e in events], split_cfg.k, split_cfg.seed,
                        split_cfg.val_fraction)[split_cfg.fold]
    by_id = {e.event_id: e for e in events}
    adj = build_adjacency(network.distances, quantile, percentile_domain=domain)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = {}
    for prefix, obj in (("model", model_cfg), ("loss", loss_cfg), ("train", train_cfg),
                        ("augmentation", aug), ("split", split_cfg)):
        resolved.update(cfgio.flatten(prefix, obj))
    resolved.update({"adjacency.quantile": quantile, "adjacency.percentile_domain": domain})
    cfgio.write_config(out / "config.txt", resolved)
    with open(out / "split.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["event_id", "role"])
        for role in ("train", "validation", "test"):
            for eid in getattr(split, role):
                w.writerow([eid, role])

    torch.manual_seed(train_cfg.seed)
    model = SeismicGNN(model_cfg)
    log.info("model parameters: %d", count_parameters(model))
    data = TrainData(adj.weights, [by_id[e] for e in split.train],
                     [by_id[e] for e in split.validation], aug)
    meta = {"adjacency_quantile": quantile, "percentile_domain": domain,
            "distance_digest": distance_digest(network.distances)}
    history = []
    try:
        p1 = train_phase1(model, data, train_cfg, loss_cfg, on_epoch=history.append)
        save_checkpoint(out / "phase1_best.ckpt", model, {**meta, "epoch": p1.best.epoch})
        freeze_and_strip(model)
        p2 = train_phase2(model, data, train_cfg, loss_cfg, on_epoch=history.append)
    finally:
        write_history(out / "history.csv", history)
    save_checkpoint(out / "model.ckpt", model, {**meta, "epoch": p2.best.epoch})
    print(f"phase 1 best epoch {p1.best.epoch} metric {p1.best.metric:.5f}; "
          f"phase 2 best epoch {p2.best.epoch} metric {p2.best.metric:.5f}")
    write_manifest(out, "train", args.argv, resolved, train_cfg.seed,
                   [args.dataset] + ([args.config] if args.config else []), [out], started)
    return EXIT_OK


def _read_split(path, role):
    with open(path, newline="", encoding="utf-8") as fh:
        return [r["event_id"] for r in csv.DictReader(fh) if role == "all" or r["role"] == role]


def _load_for_inference(checkpoint, dataset):
    import zipfile

    from .checkpoint import load_checkpoint
    from .data import load_dataset
    from .graph import build_adjacency, distance_digest

    network, events = load_dataset(dataset)
    try:
        model = load_checkpoint(checkpoint)
        with zipfile.ZipFile(checkpoint) as zf:
            meta = dict(
                (s.strip() for s in line.split("=", 1))
                for line in zf.read("meta.txt").decode().splitlines() if "=" in line
            )
    except (OSError, KeyError, zipfile.BadZipFile) as exc:
        raise DataError(f"{checkpoint}: unreadable checkpoint ({exc})") from None
    digest = distance_digest(network.distances)
    if meta.get("distance_digest", digest) != digest:
        raise DataError("distances.csv does not match the network the checkpoint was trained on")
    adj = build_adjacency(network.distances, float(meta.get("adjacency_quantile", 0.75)),
                          percentile_domain=meta.get("percentile_domain", "offdiag"))
    return model, network, events, adj.weights


def cmd_predict(args) -> int:
    from .evaluation import write_predictions
    from .training import predict

    started = time.time()
    model, network, events, adj = _load_for_inference(args.checkpoint, args.dataset)
    if args.split:
        keep = set(_read_split(args.split, args.role))
        events = [e for e in events if e.event_id in keep]
    if not events:
        raise DataError("no events selected for prediction")
    if args.window * 100 > events[0].waveforms.shape[1]:
        raise cfgio.ConfigError(f"window {args.window} s exceeds the record length")
    pred = predict(model, adj, events, window_s=args.window)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(out, pred, events, network)
    write_manifest(out, "predict", args.argv, {"window_s": args.window, "role": args.role}, None,
                   [args.checkpoint, args.dataset] + ([args.split] if args.split else []), [out], started)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluation import emit_report, residual_set, residuals_from_files, window_sweep

    started = time.time()
    for p in (args.pred, args.labels, args.catalog):
        if not Path(p).exists():
            raise DataError(f"missing file: {p}")
    stations = args.stations or str(Path(args.labels).with_name("stations.csv"))
    rs = residuals_from_files(args.pred, args.labels, args.catalog, stations)
    baselines = {}
    for item in args.baseline or ():
        if "=" not in item:
            raise UsageError(f"--baseline expects name=path, got {item!r}")
        name, path = item.split("=", 1)
        baselines[name] = residuals_from_files(path, args.labels, args.catalog, stations)
    sweep = None
    if args.checkpoint:
        if not args.dataset:
            raise UsageError("--checkpoint needs --dataset for the window sweep")
        model, network, events, adj = _load_for_inference(args.checkpoint, args.dataset)
        keep = set(rs.event_ids)
        events = [e for e in events if e.event_id in keep]
        windows = [float(w) for w in args.windows.split(",")]
        sweep = window_sweep(model, adj, events, windows, network)
    out = Path(args.out)
    files = emit_report(out, rs, sweep, baselines)
    for name, path in files.items():
        print(f"{name}: {path}")
    inputs = [args.pred, args.labels, args.catalog] + [b.split("=", 1)[1] for b in args.baseline or ()]
    write_manifest(out, "evaluate", args.argv, {"windows": args.windows}, None, inputs, [out], started)
    return EXIT_OK


def cmd_eew_report(args) -> int:
    from .data import load_dataset, load_picks
    from .eew import emit_report, warning_summary, warning_times

    started = time.time()
    network, events = load_dataset(args.dataset)
    picks = load_picks(args.dataset)
    if picks is None:
        raise DataError("missing file: picks.csv")
    tl = warning_times(network, events, picks, args.window, args.latency, per_station=args.per_station)
    if len(tl) == 0:
        raise DataError("no available records with a defined peak")
    summary = warning_summary(tl)
    out = Path(args.out)
    emit_report(out, tl, summary)
    for k, v in summary.as_row().items():
        print(f"{k} = {v}")
    write_manifest(out, "eew-report", args.argv,
                   {"window_s": args.window, "latency_s": args.latency, "per_station": args.per_station},
                   None, [args.dataset], [out], started)
    return EXIT_OK


def cmd_gmice(args) -> int:
    if args.pga is not None:
        res = gmice.convert_pga(args.pga)
        print(f"{res.value:.10g}")
        if res.degenerate:
            print("warning: PGA <= 0, intensity set to the scale floor", file=sys.stderr)
        return EXIT_OK
    if args.intensity is not None:
        try:
            print(f"{gmice.intensity_to_pga(args.intensity):.10g}")
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        return EXIT_OK
    src = Path(args.labels)
    if not src.exists():
        raise DataError(f"missing file: {src}")
    with open(src, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not {"event_id", "station_id", "value", "unit"} <= set(reader.fieldnames or ()):
            raise DataError(f"{src.name}: expected columns event_id, station_id, value, unit")
        rows = list(reader)
    sink = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(sink)
        w.writerow(["event_id", "station_id", "intensity", "clamped"])
        for r in rows:
            try:
                value = float(r["value"])
            except ValueError:
                raise DataError(f"{src.name}: bad value {r['value']!r}") from None
            if r["unit"] == "pga_cm_s2":
                res = gmice.convert_pga(value)
                w.writerow([r["event_id"], r["station_id"], repr(res.value), int(res.clamped)])
            elif r["unit"] == "intensity_ems98":
                w.writerow([r["event_id"], r["station_id"], repr(value), 0])
            else:
                raise DataError(f"{src.name}: unknown unit {r['unit']!r}")
    finally:
        if args.out:
            sink.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="quakecast", description="Graph-based seismic intensity prediction toolkit.",
                formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("prepare-adjacency", help="build the thresholded adjacency matrix", formatter_class=fmt)
    s.add_argument("--distances", required=True, help="N x N distance CSV in km")
    s.add_argument("--quantile", type=float, default=0.75, help="threshold quantile of the weights")
    s.add_argument("--percentile-domain", choices=("offdiag", "all"), default="offdiag",
                   help="entries the threshold quantile is taken over")
    s.add_argument("--out", required=True, help="output CSV")
    s.set_defaults(func=cmd_prepare_adjacency)

    s = sub.add_parser("synth-data", help="generate a synthetic dataset", formatter_class=fmt)
    s.add_argument("--config", help="key = value file with synth.* keys")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.add_argument("--seed", type=int, help="override synth.seed")
    s.add_argument("--out", required=True, help="output dataset directory")
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("augment-preview", help="show one contrastive batch", formatter_class=fmt)
    s.add_argument("--dataset", required=True)
    s.add_argument("--config", help="key = value file with augmentation.* keys")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--events", type=int, default=4, help="number of events in the batch")
    s.add_argument("--epoch", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_augment_preview)

    s = sub.add_parser("train", help="two-phase training", formatter_class=fmt)
    s.add_argument("--dataset", required=True)
    s.add_argument("--config", help="key = value run configuration")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.add_argument("--preset", choices=PRESETS, default="default", help="model size preset")
    s.add_argument("--epochs-phase1", type=int)
    s.add_argument("--epochs-phase2", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="run directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="predict station intensities", formatter_class=fmt)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--window", type=float, default=30.0, help="input window in seconds")
    s.add_argument("--split", help="split.csv from a run directory")
    s.add_argument("--role", choices=("train", "validation", "test", "all"), default="test")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="metrics and plots for a prediction file", formatter_class=fmt)
    s.add_argument("--pred", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--catalog", required=True)
    s.add_argument("--stations", help="stations.csv for distances (default: next to labels)")
    s.add_argument("--baseline", action="append", metavar="NAME=PATH",
                   help="external prediction CSV to compare against")
    s.add_argument("--checkpoint", help="model for the window sweep")
    s.add_argument("--dataset", help="dataset for the window sweep")
    s.add_argument("--windows", default="5,10,15,20,25,30")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("eew-report", help="warning-time analysis", formatter_class=fmt)
    s.add_argument("--dataset", required=True)
    s.add_argument("--window", type=float, default=5.0)
    s.add_argument("--latency", type=float, default=0.0)
    s.add_argument("--per-station", action="store_true",
                   help="prediction instant per station from its own P arrival")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eew_report)

    s = sub.add_parser("gmice", help="PGA <-> EMS-98 intensity", formatter_class=fmt)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--pga", type=float, help="PGA in cm/s^2")
    g.add_argument("--intensity", type=float, help="intensity in [2, 9.5]")
    g.add_argument("--labels", help="labels.csv to convert")
    s.add_argument("--out", help="output CSV for --labels (default stdout)")
    s.set_defaults(func=cmd_gmice)
    return p


def main(argv=None) -> int:
    from .training import DivergenceError

    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        args.argv = argv
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except cfgio.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
