"""Command-line runner: ``fliot {simulate,sweep,ingest,report}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .checkpoint import Checkpoint, read_checkpoint, write_checkpoint
from .config import RunConfig, load_config, with_values
from .errors import ConfigError, FliotError
from .metrics import (
    MODE_COMPARISON_COLUMNS, NOISE_SWEEP_COLUMNS, ROUNDS_COLUMNS, SCALING_COLUMNS,
    emit_report, write_table,
)
from .sim import ExperimentResult, baseline_row, comparison_row, run_experiment
from .traffic import load_flow_csv

log = logging.getLogger("fliot")

SWEEP_AXES = ("noise_sigma", "n_devices", "aggregation_mode", "compression")
SWEEP_FILES = {
    "noise_sigma": ("noise_sweep.csv", NOISE_SWEEP_COLUMNS),
    "n_devices": ("scaling.csv", SCALING_COLUMNS),
    "aggregation_mode": ("mode_comparison.csv", MODE_COMPARISON_COLUMNS),
    "compression": ("mode_comparison.csv", MODE_COMPARISON_COLUMNS),
}


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    subcommand: str
    config_path: Optional[str]
    out_dir: str
    overrides: list = field(default_factory=list)
    seed: Optional[int] = None


# --- output helpers ----------------------------------------------------------

def _write_manifest(out: Path, manifest: RunManifest, rc: RunConfig, extra: Optional[dict] = None):
    e = rc.experiment.cost.energy
    body = {
        "fliot_version": __version__,
        "config_hash": rc.hash,
        "manifest": asdict(manifest),
        "energy_constants": {"alpha": e.alpha, "beta": e.beta, "gamma": e.gamma},
    }
    body.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    (out / "config.resolved.cfg").write_text(f"# config_hash = {rc.hash}\n" + rc.text)


def _energy_lines(result: ExperimentResult) -> list[str]:
    e = result.cfg.cost.energy
    lines = [f"energy constants: alpha={e.alpha!r} J/flop beta={e.beta!r} J/mult gamma={e.gamma!r} J/byte",
             f"energy proxy: federated={result.total_energy:.6g}"]
    if result.baseline is not None:
        b = result.baseline.energy
        lines[-1] += f" centralized={b:.6g} ratio={result.total_energy / b:.4f}"
    return lines


def _summary(result: ExperimentResult, rc: RunConfig) -> str:
    f = result.final
    return (f"rounds={len(result.reports)} mode={result.cfg.aggregation_mode} final_loss={f.global_loss:.6g} "
            f"f1={f.detection.f1:.4f} auc={f.detection.auc:.4f} bytes={result.total_bytes} "
            f"energy={result.total_energy:.6g} config_hash={rc.hash}")


def _emit_run(out: Path, result: ExperimentResult, rc: RunConfig, label: str):
    rows = [comparison_row(label, result)]
    if result.baseline is not None:
        rows.append(baseline_row(result))
    emit_report(out, result.reports, result.per_attack, rows, result.roc, result.pr)
    write_checkpoint(out / "model.ckpt", Checkpoint(
        result.params, result.threshold, rc.hash, rc.text, [r.as_row() for r in result.reports]))


# --- subcommands -------------------------------------------------------------

def cmd_simulate(args, manifest: RunManifest) -> int:
    rc = load_config(args.config, args.set, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_experiment(rc.experiment, workers=args.workers)
    _emit_run(out, result, rc, "federated")
    extra = {"total_energy": result.total_energy, "total_bytes": result.total_bytes}
    if result.baseline is not None:
        extra["centralized_energy"] = result.baseline.energy
    _write_manifest(out, manifest, rc, extra)
    print(_summary(result, rc))
    for line in _energy_lines(result):
        print(line)
    return 0


def _sweep_points(rc: RunConfig, axis: str) -> list[tuple[str, dict, dict]]:
    """(label, config changes, extra row cells) per grid point."""
    g = rc.sweep
    if axis == "noise_sigma":
        return [(f"sigma={s!r}", {"privacy.enabled": True, "privacy.sigma": float(s)}, {"sigma": s})
                for s in g.noise_sigma]
    if axis == "n_devices":
        return [(f"n={n}", {"experiment.n_devices": n}, {"n_devices": n}) for n in g.n_devices]
    if axis == "aggregation_mode":
        return [(m, {"experiment.aggregation_mode": m}, {}) for m in g.aggregation_mode]
    pts = []
    for p in g.compression:
        if p is None:
            pts.append(("uncompressed", {"compression.enabled": False}, {}))
        else:
            pts.append((f"prune={p[0]!r},bits={p[1]}",
                        {"compression.enabled": True, "compression.prune_fraction": p[0],
                         "compression.quant_bits": p[1]}, {}))
    return pts


def _run_point(job) -> dict:
    rc, label, changes, extra, point_dir, with_baseline = job
    rc = with_values(rc, **{k.replace(".", "__"): v for k, v in changes.items()},
                     experiment__centralized_baseline=with_baseline)
    result = run_experiment(rc.experiment)
    point_dir = Path(point_dir)
    point_dir.mkdir(parents=True, exist_ok=True)
    _emit_run(point_dir, result, rc, label)
    rows = [dict(comparison_row(label, result), **extra)]
    if result.baseline is not None:
        rows.append(dict(baseline_row(result), **extra))
    return {"rows": rows, "hash": rc.hash}


def cmd_sweep(args, manifest: RunManifest) -> int:
    rc = load_config(args.config, args.set, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fname, columns = SWEEP_FILES[args.axis]
    points = _sweep_points(rc, args.axis)
    if not points:
        raise ConfigError(f"sweep.{args.axis} grid is empty", rc.source)
    # noise_sweep/scaling hold federated rows only; the mode table gets one centralized row
    jobs = []
    for i, (label, changes, extra) in enumerate(points):
        with_baseline = rc.experiment.centralized_baseline and columns is MODE_COMPARISON_COLUMNS and i == 0
        jobs.append((rc, label, changes, extra, str(out / "points" / f"{args.axis}_{i:02d}"), with_baseline))
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(args.workers, len(jobs))) as ex:
            results = list(ex.map(_run_point, jobs))
    else:
        results = [_run_point(j) for j in jobs]
    rows = [row for res in results for row in res["rows"]]
    write_table(out / fname, columns, rows)
    _write_manifest(out, manifest, rc, {"axis": args.axis, "point_config_hashes": [r["hash"] for r in results]})
    for row in rows:
        print(f"{row['label']}: f1={row['f1']:.4f} uplink={row['uplink_bytes']} energy={row['energy_proxy']:.6g}")
    print(f"wrote {out / fname} ({len(rows)} rows) config_hash={rc.hash}")
    return 0


def cmd_ingest(args, manifest: RunManifest) -> int:
    rc = load_config(args.config, args.set, args.seed)
    ing = rc.ingest
    if not ing.feature_columns:
        raise ConfigError("ingest.feature_columns must list at least one column", rc.source)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seqs = load_flow_csv(args.input, ing.feature_columns, ing.label_column, ing.seq_len, ing.stride,
                         train_fraction=ing.train_fraction, benign_labels=ing.benign_labels)
    F = len(ing.feature_columns)
    x = np.stack([s.x for s in seqs]) if seqs else np.zeros((0, ing.seq_len, F))
    y = np.stack([s.labels for s in seqs]) if seqs else np.zeros((0, ing.seq_len), dtype=np.int8)
    np.savez(out / "windows.npz", x=x, labels=y, feature_columns=np.array(ing.feature_columns))
    n_attack = int(sum(s.labels.any() for s in seqs))
    _write_manifest(out, manifest, rc, {"input": str(args.input), "n_windows": len(seqs),
                                        "n_attack_windows": n_attack})
    print(f"windows={len(seqs)} attack_windows={n_attack} T={ing.seq_len} F={F} -> {out / 'windows.npz'}")
    return 0


def cmd_report(args, manifest: RunManifest) -> int:
    ckpt = read_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "rounds.csv", ROUNDS_COLUMNS, ckpt.rounds)
    (out / "config.resolved.cfg").write_text(f"# config_hash = {ckpt.config_hash}\n" + ckpt.config_text)
    p = ckpt.params
    print(f"checkpoint config_hash={ckpt.config_hash} F={p.n_features} H={p.hidden_size} "
          f"params={p.size} epsilon={ckpt.threshold.epsilon:.6g} rounds={len(ckpt.rounds)}")
    if ckpt.rounds:
        last = ckpt.rounds[-1]
        print(f"final round {last['round']}: loss={float(last['global_loss']):.6g} f1={float(last['f1']):.4f}")
    return 0


# --- entry point -------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fliot", description="Federated IoT threat-detection simulator.")
    p.add_argument("--version", action="version", version=f"fliot {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-round progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, needs_config=False):
        sp.add_argument("--config", required=needs_config, help="INI experiment config")
        sp.add_argument("--out", required=True, help="output directory (created if absent)")
        sp.add_argument("--seed", type=int, help="master seed (overrides experiment.seed)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config setting, e.g. training.eta0=0.2 (repeatable)")
        sp.add_argument("--workers", type=int, default=1, help="parallel workers")

    common(sub.add_parser("simulate", help="run one experiment"))
    sw = sub.add_parser("sweep", help="run one experiment per grid point along an axis")
    common(sw)
    sw.add_argument("--axis", required=True, choices=SWEEP_AXES)
    ing = sub.add_parser("ingest", help="window and normalize a flow CSV")
    common(ing)
    ing.add_argument("--input", required=True, help="flow CSV with a header row")
    rep = sub.add_parser("report", help="re-emit round CSVs from a checkpoint")
    rep.add_argument("--checkpoint", required=True)
    rep.add_argument("--out", required=True)
    return p


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "ingest": cmd_ingest, "report": cmd_report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    manifest = RunManifest(args.command, getattr(args, "config", None), args.out,
                           list(getattr(args, "set", [])), getattr(args, "seed", None))
    try:
        return COMMANDS[args.command](args, manifest)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FliotError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
