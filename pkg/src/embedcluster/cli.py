"""Command-line front end: synth, bandpower, train-eegnet, train-ae, embed, cluster, evaluate, report."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, dataio
from .embed import patient_embeddings
from .evaluation import (
    ALGORITHMS,
    PRIMARY_SPACE,
    StratificationReport,
    cluster_balance,
    evaluate_all,
    format_table,
    representations,
    run_algorithm,
)
from .signal import NEUROSKY_BANDS, band_feature_vector, load_band_config
from .synth import CohortSpec, null_spec, synth_cohort
from .train import TrainConfig, train_autoencoder, train_seizure_model

log = logging.getLogger("embedcluster")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, argv: list[str], args: argparse.Namespace, inputs: list, outputs: list) -> None:
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in ("func", "replay")}
    manifest = {
        "command": command,
        "argv": list(argv),
        "flags": flags,
        "seeds": {k: v for k, v in flags.items() if "seed" in k},
        "inputs": {str(p): _digest(p) for p in inputs if p is not None},
        "outputs": [str(p) for p in outputs],
        "version": __version__,
    }
    Path(path).write_text(json.dumps(manifest, indent=2) + "\n")


def _manifest_path(out) -> Path:
    out = Path(out)
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs, lr=args.lr, batch_size=args.batch_size,
        val_fraction=args.val_fraction, early_stop_patience=args.patience, seed=args.seed,
    )


def _bands(args):
    return load_band_config(args.bands) if getattr(args, "bands", None) else NEUROSKY_BANDS


def cmd_synth(args, argv):
    spec = CohortSpec.from_json(args.spec) if args.spec else CohortSpec()
    if args.seed is not None:
        spec.seed = args.seed
    if args.null:
        spec = null_spec(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records, raw, labels = synth_cohort(spec, _bands(args))
    dataio.write_window_csv(records, out / "windows.csv")
    dataio.write_raw_windows(raw, out / "raw.csv")
    dataio.write_labels_csv(labels, out / "labels.csv")
    (out / "cohort.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    outputs = [out / n for n in ("windows.csv", "raw.csv", "labels.csv", "cohort.json")]
    write_manifest(out / "manifest.json", "synth", argv, args, [args.spec, args.bands], outputs)


def cmd_bandpower(args, argv):
    windows = dataio.read_raw_windows(args.raw)
    bands = _bands(args)
    vectors = [band_feature_vector(w, bands) for w in windows]
    dataio.write_band_csv([w.record_id for w in windows], [w.label for w in windows], vectors, args.out)
    write_manifest(_manifest_path(args.out), "bandpower", argv, args, [args.raw, args.bands], [args.out])


def _write_report(path, report) -> None:
    if path:
        Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n")


def cmd_train_eegnet(args, argv):
    cfg = _train_config(args)
    windows = dataio.read_raw_windows(args.raw)
    model, report = train_seizure_model(windows, cfg, _bands(args), hidden=args.hidden)
    dataio.save_checkpoint(model, args.out, seed=cfg.seed, train=vars(cfg))
    _write_report(args.report, report)
    best = report.val_accuracy[report.best_epoch]
    print(f"best epoch {report.best_epoch}: val loss {report.val_loss[report.best_epoch]:.5f}, val accuracy {best:.4f}")
    outputs = [args.out] + ([args.report] if args.report else [])
    write_manifest(_manifest_path(args.out), "train-eegnet", argv, args, [args.raw, args.bands], outputs)


def cmd_train_ae(args, argv):
    cfg = _train_config(args)
    records = dataio.read_window_csv(args.windows, _column_map(args))
    model, report = train_autoencoder(records, cfg)
    dataio.save_checkpoint(model, args.out, seed=cfg.seed, train=vars(cfg))
    _write_report(args.report, report)
    print(f"best epoch {report.best_epoch}: train mse {report.train_loss[report.best_epoch]:.6f}")
    outputs = [args.out] + ([args.report] if args.report else [])
    write_manifest(_manifest_path(args.out), "train-ae", argv, args, [args.windows, args.column_map], outputs)


def _column_map(args):
    if not getattr(args, "column_map", None):
        return None
    mapping = json.loads(Path(args.column_map).read_text())
    if not isinstance(mapping, dict):
        raise ValueError("column map must be a JSON object of source -> canonical names")
    return mapping


def cmd_embed(args, argv):
    model = dataio.load_model(args.checkpoint)
    records = dataio.read_window_csv(args.windows, _column_map(args))
    embeddings = patient_embeddings(model, records)
    dataio.write_embeddings_csv(embeddings, args.out)
    write_manifest(_manifest_path(args.out), "embed", argv, args, [args.checkpoint, args.windows, args.column_map], [args.out])


def cmd_cluster(args, argv):
    embeddings = dataio.read_embeddings_csv(args.embeddings)
    x = np.stack([e.vector for e in embeddings])
    algorithms = ALGORITHMS if args.algorithm == "all" else (args.algorithm,)
    out = {"patients": [e.patient_id for e in embeddings], "k": args.k, "assignments": {}}
    spaces = representations(x, args.reduce_dim)
    for algo in algorithms:
        a = run_algorithm(algo, spaces[PRIMARY_SPACE[algo]], args.k, seed=args.seed)
        out["assignments"][algo] = {
            "space": PRIMARY_SPACE[algo],
            "labels": [int(v) for v in a.labels],
            "sizes": cluster_balance(a),
            "seed": a.seed,
            "converged": bool(a.converged),
            "iterations": int(a.iterations),
        }
    Path(args.out).write_text(json.dumps(out, indent=2) + "\n")
    write_manifest(_manifest_path(args.out), "cluster", argv, args, [args.embeddings], [args.out])


def cmd_evaluate(args, argv):
    embeddings = dataio.read_embeddings_csv(args.embeddings)
    wrong = sorted({e.source for e in embeddings} - {args.source})
    if wrong:
        raise ValueError(f"embeddings file holds source {wrong}, expected {args.source!r}")
    labels = dataio.read_labels_csv(args.labels)
    metadata = dataio.read_metadata_csv(args.metadata) if args.metadata else None
    report = evaluate_all(embeddings, labels, seed=args.seed, reduce_dim=args.reduce_dim, k=args.k, metadata=metadata)
    Path(args.out).write_text(report.to_json())
    print(format_table([report]), end="")
    write_manifest(_manifest_path(args.out), "evaluate", argv, args, [args.embeddings, args.labels, args.metadata], [args.out])


def cmd_report(args, argv):
    reports = [StratificationReport.from_dict(json.loads(Path(p).read_text())) for p in args.reports]
    table = format_table(reports)
    Path(args.out).write_text(table)
    print(table, end="")
    write_manifest(_manifest_path(args.out), "report", argv, args, list(args.reports), [args.out])


def _add_train_flags(p):
    defaults = TrainConfig()
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.add_argument("--lr", type=float, default=defaults.lr)
    p.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p.add_argument("--val-fraction", type=float, default=defaults.val_fraction)
    p.add_argument("--patience", type=int, default=defaults.early_stop_patience)
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.add_argument("--report", help="write the training report JSON here")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="embedcluster", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--verbose", action="store_true")
    parser.add_argument("--replay", metavar="MANIFEST", help="re-run the command recorded in a run manifest")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic two-group cohort")
    p.add_argument("--spec", help="cohort spec JSON (defaults used when omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--null", action="store_true", help="draw both groups from the same profile")
    p.add_argument("--bands", help="band-edge config file")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bandpower", help="band features for raw windows")
    p.add_argument("--raw", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bands")
    p.set_defaults(func=cmd_bandpower)

    p = sub.add_parser("train-eegnet", help="train generator + EEGNet on labeled raw windows")
    p.add_argument("--raw", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--bands")
    p.add_argument("--hidden", type=int, default=256, help="generator hidden width")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_eegnet)

    p = sub.add_parser("train-ae", help="train the contextual autoencoder on window records")
    p.add_argument("--windows", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--column-map", help="JSON object renaming window CSV columns")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_ae)

    p = sub.add_parser("embed", help="patient-level embeddings from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--windows", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--column-map")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("cluster", help="cluster patient embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--algorithm", choices=ALGORITHMS + ("all",), default="all")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reduce-dim", type=int, default=10)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("evaluate", help="score all four algorithms against patient labels")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--source", choices=("eegnet", "autoencoder"), required=True)
    p.add_argument("--out", default="report.json")
    p.add_argument("--metadata", help="optional per-patient metadata CSV, passed through")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reduce-dim", type=int, default=10)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="format evaluation reports as an accuracy table")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def replay(manifest_path) -> list[str]:
    """Check recorded input digests and return the argv to re-run."""
    manifest = json.loads(Path(manifest_path).read_text())
    for path, digest in manifest.get("inputs", {}).items():
        if _digest(path) != digest:
            raise ValueError(f"input {path} changed since the manifest was written")
    if manifest.get("version") != __version__:
        log.warning("manifest written by version %s, running %s", manifest.get("version"), __version__)
    return list(manifest["argv"])


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.replay:
            if args.command:
                raise UsageError("--replay takes no subcommand")
            argv = replay(args.replay)
            args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return EXIT_VALIDATION
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        args.func(args, argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"embedcluster: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"embedcluster: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
