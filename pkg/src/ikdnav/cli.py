"""Command line entry point: validate, collect, train and bench.

Exit codes: 0 success, 1 validation failure, 2 runtime fault.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import data, nn
from .config import ConfigError, RunConfig, load_run_config, load_track, parse_track, resolve_resource
from .control import MODES, BaselineConfig, VelocityScheduleConfig
from .eval import export_report, run_benchmark
from .sim import MAX_CURVATURE, MAX_SPEED

log = logging.getLogger("ikdnav")

EXIT_OK, EXIT_INVALID, EXIT_FAULT = 0, 1, 2
DATASET_FILE = "dataset.ikd"


class Fault(RuntimeError):
    """Runtime failure reported with exit code 2."""


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _provenance(cfg: RunConfig, **extra) -> dict:
    return {"config_hash": cfg.hash, "seed": cfg.seed, **extra}


def _stamp_csv(path, prov: dict) -> None:
    p = Path(path)
    p.write_text(f"# config_hash={prov['config_hash']} seed={prov['seed']}\n" + p.read_text())


def _record(out: Path, artifact: str, prov: dict) -> None:
    """Merge one artifact's provenance into out/provenance.json."""
    index = out / "provenance.json"
    entries = json.loads(index.read_text()) if index.exists() else {}
    entries[artifact] = prov
    index.write_text(json.dumps(entries, sort_keys=True, indent=2))


def _histogram(values, lo: float, hi: float, bins: int = 20, width: int = 40) -> str:
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    top = max(int(counts.max()), 1)
    lines = []
    for c, a, b in zip(counts, edges[:-1], edges[1:]):
        lines.append(f"  [{a:+6.2f}, {b:+6.2f}) {c:7d} {'#' * int(round(width * c / top))}")
    return "\n".join(lines)


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_validate(args) -> int:
    """Check a track file, or every track referenced by a run config."""
    path = resolve_resource(args.config)
    doc = yaml.safe_load(path.read_text()) or {}
    if "plan" in doc:
        targets = [(str(path), doc)]
    else:
        cfg = load_run_config(path)
        targets = []
        for t in dict.fromkeys([cfg.track] + cfg.eval_tracks):
            p = cfg.path(t)
            targets.append((str(p), yaml.safe_load(p.read_text()) or {}))
    bad = 0
    for name, tdoc in targets:
        _, diags = parse_track(tdoc, name)
        if diags:
            bad += 1
            for d in diags:
                print(f"{name}: {d}")
        else:
            print(f"{name}: ok")
    return EXIT_INVALID if bad else EXIT_OK


def cmd_collect(args) -> int:
    cfg = _load_config(args)
    bundle = load_track(cfg.path(cfg.track))
    duration = cfg.collect_duration if args.duration is None else args.duration
    if duration <= 0:
        raise Fault(f"collection duration must be positive, got {duration}")
    pol_kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in cfg.policy.items()}
    pol_kwargs.setdefault("rng_seed", cfg.seed)
    pol_kwargs.setdefault("arena", bundle.arena)
    try:
        policy = data.ExplorationPolicy(**pol_kwargs)
    except TypeError as exc:
        raise ConfigError([f"collect.policy: {exc}"]) from exc
    try:
        ds = data.collect(bundle.terrain, cfg.sim, policy, duration)
    except data.CollectionError as exc:
        raise Fault(str(exc)) from exc
    prov = _provenance(cfg, track=bundle.name)
    ds = data.Dataset(ds.inputs, ds.labels, ds.windows, ds.time, {**ds.provenance, **prov})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / DATASET_FILE
    data.save(ds, path)
    _record(out, DATASET_FILE, prov)
    print(f"N = {len(ds)} samples -> {path}")
    if len(ds):
        print(f"v_r coverage {data.coverage(ds.inputs[:, 0], 0.0, MAX_SPEED):.0%} of bins over [0, {MAX_SPEED}]")
        print(_histogram(ds.inputs[:, 0], 0.0, MAX_SPEED))
        print(f"c_r coverage {data.coverage(ds.inputs[:, 1], -MAX_CURVATURE, MAX_CURVATURE):.0%} "
              f"of bins over [-{MAX_CURVATURE}, {MAX_CURVATURE}]")
        print(_histogram(ds.inputs[:, 1], -MAX_CURVATURE, MAX_CURVATURE))
    return EXIT_OK


def _params_name(ablated: bool) -> str:
    return "params_ablated.ikd" if ablated else "params.ikd"


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    ds_path = Path(args.dataset) if args.dataset else (cfg.path(cfg.dataset) if cfg.dataset else out / DATASET_FILE)
    if not ds_path.exists():
        raise Fault(f"dataset not found: {ds_path}")
    try:
        ds = data.load(ds_path)
    except data.DatasetFormatError as exc:
        raise Fault(str(exc)) from exc
    spec = nn.NetworkSpec.ablated() if args.ablated else nn.NetworkSpec()
    t0 = time.perf_counter()
    try:
        result = nn.train(ds, spec, nn.LossWeights(np.asarray(cfg.H, dtype=float)), cfg.train)
    except (ValueError, nn.NetworkFault) as exc:
        raise Fault(str(exc)) from exc
    elapsed = time.perf_counter() - t0
    prov = _provenance(cfg, dataset_hash=_file_hash(ds_path), use_encoder=spec.use_encoder)
    params = result.params
    params.metadata.update(prov)
    out.mkdir(parents=True, exist_ok=True)
    name = _params_name(args.ablated)
    nn.save_params(params, out / name)
    loss_name = "loss_ablated.csv" if args.ablated else "loss.csv"
    result.write_loss_csv(out / loss_name)
    _stamp_csv(out / loss_name, prov)
    _record(out, name, prov)
    _record(out, loss_name, prov)
    v0, vb = result.val_loss[0], result.val_loss[result.best_epoch]
    print(f"trained {'ablated' if args.ablated else 'full'} model on N = {len(ds)} in {elapsed:.1f} s")
    print(f"validation loss: initial {v0:.6g}, best {vb:.6g} (epoch {result.best_epoch}), "
          f"ratio {vb / v0:.4%}")
    print(f"wrote {out / name} and {out / loss_name}")
    return EXIT_OK


def _mode_params(cfg: RunConfig, out: Path, modes) -> tuple[dict, dict]:
    """Parameter sets per learned mode, and the hash of each file they came from."""
    params, hashes = {}, {}
    for mode in modes:
        if mode == "baseline":
            continue
        ablated = mode == "ablated"
        configured = cfg.ablated_params if ablated else cfg.params
        path = cfg.path(configured) if configured else out / _params_name(ablated)
        if not path.exists():
            raise Fault(f"mode {mode!r} needs a parameter file; not found: {path}")
        try:
            params[mode] = nn.load_params(path)
        except nn.NetworkFault as exc:
            raise Fault(str(exc)) from exc
        hashes[mode] = _file_hash(path)
    return params, hashes


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    modes = args.controller or cfg.modes
    unknown = [m for m in modes if m not in MODES]
    if unknown:
        raise Fault(f"unknown controller mode(s) {', '.join(unknown)}; valid modes: {', '.join(MODES)}")
    out = Path(args.out)
    params, param_hashes = _mode_params(cfg, out, modes)
    laps = cfg.laps_per_cell if args.laps is None else args.laps
    baseline = BaselineConfig(**cfg.baseline)
    velocity = VelocityScheduleConfig(**cfg.velocity)
    for track_ref in cfg.eval_tracks:
        bundle = load_track(cfg.path(track_ref))
        prov = _provenance(cfg, track=bundle.name, params=param_hashes)
        report, lap_results = run_benchmark(bundle.track, bundle.terrain, modes, cfg.speeds, laps, cfg.seed,
                                            params, cfg.sim, args.workers, prov,
                                            baseline=baseline, velocity=velocity)
        dest = out / "bench" / bundle.name
        export_report(report, lap_results, dest)
        for csv in sorted(dest.rglob("*.csv")):
            _stamp_csv(csv, prov)
        _record(out, f"bench/{bundle.name}", prov)
        print(f"{bundle.name}: {len(lap_results)} laps ({len(modes)} modes x {len(cfg.speeds)} speeds x {laps})")
        for mode in modes:
            o = report.overall[mode]
            print(f"  {mode:9s} success {o['success_rate']:.1%} ({o['attempts'] - o['failures']}/{o['attempts']})"
                  f"{'  faulted laps: ' + str(o['faulted']) if o['faulted'] else ''}")
        print(f"  wrote {dest / 'report.json'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ikdnav", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", required=True, help="run config or track YAML (bundled names allowed)")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="override the config's global seed")
            p.add_argument("--out", default="out", help="output directory (default: out)")

    p = sub.add_parser("validate", help="check track and terrain invariants")
    common(p, seed=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("collect", help="record an exploration dataset")
    common(p)
    p.add_argument("--duration", type=float, default=None, help="simulated seconds (default from config)")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="train the full or ablated inverse model")
    common(p)
    p.add_argument("--ablated", action="store_true", help="train the model without the IMU encoder")
    p.add_argument("--dataset", default=None, help="dataset file (default: config, then OUT/dataset.ikd)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="run the lap benchmark and export reports")
    common(p)
    p.add_argument("--controller", action="append", default=None,
                   help="controller mode to run; repeat for several (default from config)")
    p.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    p.add_argument("--laps", type=int, default=None, help="laps per (mode, speed) cell")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"error: {d}", file=sys.stderr)
        return EXIT_INVALID
    except (Fault, FileNotFoundError) as exc:
        print(f"fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
