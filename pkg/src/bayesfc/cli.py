"""Command-line pipeline: preprocess, connect, stats, gcn-train, gcn-eval, synth.

Exit codes: 0 success, 2 usage or input error, 1 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import baselines, bsl, gcn, stats
from .connectivity import ConnectivityMatrix, DynamicConnectivity, load_matrices
from .errors import DimensionMismatch, InputError
from .signal import (
    BANDS,
    BandSpec,
    Recording,
    WindowPlan,
    average_reference,
    band_preset,
    bandpass,
    load_csv,
    save_csv,
    slice_windows,
    synth_coupled,
    synth_quadrature,
)
from .utils import SCHEMA_VERSION, derive_seed, dumps, read_json, write_json

log = logging.getLogger("bayesfc")


class UsageError(InputError):
    pass


def _out_dir(args) -> Path:
    out = Path(args.output or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_band(name: str | None, low, high) -> BandSpec:
    if name is None:
        raise UsageError("--band is required")
    return band_preset(name, low, high)


def cmd_preprocess(args) -> int:
    if args.fs is None:
        raise UsageError("the --fs flag (sampling rate in Hz) is required")
    band_names = args.band or list(BANDS)
    bands = [band_preset(b, args.low, args.high) for b in band_names]
    for b in bands:
        b.check(args.fs)
    out = _out_dir(args)
    for path in args.inputs:
        rec = average_reference(load_csv(path, args.fs))
        for band in bands:
            filtered = bandpass(rec, band)
            obj = filtered.to_json()
            obj["band"] = {"name": band.name, "low_hz": band.low_hz, "high_hz": band.high_hz}
            dest = write_json(out / f"{Path(path).stem}.{band.name}.json", obj)
            log.info("%s: %d ch x %d samples -> %s", path, rec.n_channels, rec.n_samples, dest)
    return 0


def _band_from_file(obj: dict, args) -> tuple[BandSpec, bool]:
    if args.band is not None:
        return _resolve_band(args.band, args.low, args.high), False
    b = obj.get("band")
    if b is None:
        raise UsageError("input carries no band; pass --band")
    if b["name"] in BANDS:
        return BANDS[b["name"]], True
    return BandSpec(b["name"], b["low_hz"], b["high_hz"]), True


def _search_config(args) -> tuple[bsl.ScoreParams, bsl.SearchConfig]:
    params = bsl.ScoreParams(args.score, args.ess, args.bins, args.max_parents)
    cfg = bsl.SearchConfig(args.max_sweeps, args.patience, args.restarts, args.init_edge_prob,
                           derive_seed(args.seed, "bsl"), not args.no_reversal)
    return params, cfg


def _baseline_dynamic(rec: Recording, band: BandSpec, plan: WindowPlan, method: str, args) -> DynamicConnectivity:
    slices = []
    for k, w in enumerate(slice_windows(rec, plan)):
        if method == "pearson":
            cm = baselines.pearson_connectivity(w)
        elif method == "imcoh":
            cm = baselines.imcoh_connectivity(w, band, baselines.SpectralConfig(args.segment))
        else:
            cm = baselines.aec_connectivity(w, band)
        slices.append(ConnectivityMatrix(cm.channel_names, cm.weights, method=method, band=band.name,
                                         window_index=k))
    return DynamicConnectivity(tuple(slices), plan, band, {"method": method})


def cmd_connect(args) -> int:
    out = _out_dir(args)
    for path in args.inputs:
        obj = read_json(path)
        rec = Recording.from_json(obj)
        band, prefiltered = _band_from_file(obj, args)
        length = args.window if args.window is not None else rec.duration_s
        plan = WindowPlan(length, args.stride if args.stride is not None else length)
        if args.method == "bsl":
            params, cfg = _search_config(args)
            dyn = bsl.estimate_dynamic(rec, band, plan, params, cfg, workers=args.workers,
                                       prefiltered=prefiltered)
            dyn.meta["master_seed"] = args.seed
        else:
            dyn = _baseline_dynamic(rec, band, plan, args.method, args)
        stem = Path(path).stem
        dest = write_json(out / f"{stem}.{args.method}.json", dyn.to_json())
        log.info("%s: %d windows -> %s", path, len(dyn), dest)
        if args.edge_threshold is not None:
            edge_path = out / f"{stem}.{args.method}.edges.csv"
            with open(edge_path, "w", newline="") as fh:
                wr = csv.writer(fh, lineterminator="\n")
                wr.writerow(["window_index", "source", "target", "strength"])
                for k, cm in enumerate(dyn.slices):
                    for i, j, v in cm.edges_above(args.edge_threshold):
                        wr.writerow([k, cm.channel_names[i], cm.channel_names[j], repr(v)])
            log.info("edges above %g -> %s", args.edge_threshold, edge_path)
    return 0


def _reduce(cm: ConnectivityMatrix, how: str) -> float:
    vals = stats.flatten_upper(cm)
    return float({"mean": np.mean, "max": np.max, "median": np.median}[how](vals))


def cmd_stats(args) -> int:
    groups: list[tuple[str, list[ConnectivityMatrix]]] = []
    for spec in args.group or []:
        label, files = spec[0], spec[1:]
        if not files:
            raise UsageError(f"--group {label} lists no files")
        groups.append((label, [m for f in files for m in load_matrices(read_json(f))]))
    if args.inputs:
        groups.append(("all", [m for f in args.inputs for m in load_matrices(read_json(f))]))
    if not groups:
        raise UsageError("give connectivity files as arguments or via --group LABEL FILE...")
    all_mats = [m for _, ms in groups for m in ms]
    report: dict = {
        "v": SCHEMA_VERSION,
        "method": sorted({m.method for m in all_mats}),
        "band": sorted({m.band for m in all_mats if m.band}),
        "reduction": args.reduction,
        "spearman_pairing": "all-pairs mean within group",
    }
    per_group = {}
    for label, mats in groups:
        if len(mats) >= 2:
            per_group[label] = stats.mean_pairwise_spearman(mats)
    report["spearman_per_group"] = per_group
    report["spearman_mean"] = float(np.mean(list(per_group.values()))) if per_group else None
    if len(groups) >= 2:
        scalars = [[_reduce(m, args.reduction) for m in mats] for _, mats in groups]
        report["anova"] = stats.one_way_anova(scalars).to_json()
        report["anova"]["groups"] = [label for label, _ in groups]
    else:
        report["anova"] = None
    if args.confusion:
        cm = stats.ConfusionMatrix(np.asarray(read_json(args.confusion)["counts"]))
        report["per_class"] = stats.metrics_report(cm)
    else:
        report["per_class"] = None
    text = dumps(report)
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _load_dataset(path) -> list[gcn.GraphSample]:
    obj = read_json(path)
    records = obj["samples"] if isinstance(obj, dict) else obj
    return [gcn.GraphSample.from_json(r) for r in records]


def _train_config(args) -> gcn.TrainConfig:
    return gcn.TrainConfig(
        learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size, folds=args.folds,
        seed=derive_seed(args.seed, "gcn"), hidden_dim=args.hidden, n_blocks=args.blocks,
        dropout_rate=args.dropout, batch_norm=not args.no_bn,
    )


def cmd_gcn_train(args) -> int:
    data = _load_dataset(args.dataset)
    cfg = _train_config(args)
    res = gcn.train(data, cfg)
    ckpt = {
        "v": SCHEMA_VERSION,
        "config": asdict(cfg),
        "master_seed": args.seed,
        "n_nodes": data[0].n_nodes,
        "params": res.params.to_json(),
        "loss_trace": res.loss_trace,
        "val_trace": res.val_trace,
        "best_epoch": res.best_epoch,
    }
    dest = write_json(args.output or "checkpoint.json", ckpt)
    log.info("trained %d epochs on %d graphs -> %s", cfg.epochs, len(data), dest)
    return 0


def cmd_gcn_eval(args) -> int:
    data = _load_dataset(args.dataset)
    if args.checkpoint:
        ckpt = read_json(args.checkpoint)
        params = gcn.GcnParams.from_json(ckpt["params"])
        dims = {s.features.shape[1] for s in data}
        if dims != {params.in_dim} or {s.n_nodes for s in data} != {ckpt["n_nodes"]}:
            raise DimensionMismatch(
                f"dataset has {sorted({s.n_nodes for s in data})} nodes / {sorted(dims)} features, "
                f"checkpoint expects {ckpt['n_nodes']} / {params.in_dim}"
            )
        pred = gcn.predict(data, params)
        cm = stats.ConfusionMatrix.from_predictions([s.label for s in data], pred, gcn.N_CLASSES)
        report = {"v": SCHEMA_VERSION, "mode": "checkpoint", **stats.metrics_report(cm)}
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = gcn.kfold_evaluate(data, _train_config(args))
        report = {"mode": "kfold", **res.to_json()}
    report["master_seed"] = args.seed
    text = dumps(report)
    if args.output:
        write_json(args.output, report)
    else:
        sys.stdout.write(text)
    log.info("accuracy %.4f", report["accuracy"])
    return 0


def cmd_synth(args) -> int:
    out = _out_dir(args)
    data = gcn.synth_motif_dataset(args.per_class, args.nodes, derive_seed(args.seed, "graphs"))
    write_json(out / "graphs.json", {
        "v": SCHEMA_VERSION,
        "motifs": gcn.class_motifs(args.nodes),
        "samples": [s.to_json() for s in data],
    })
    chain = synth_coupled(6, args.duration, args.fs, [(i, i + 1, 1.0, 1) for i in range(5)], 0.1,
                          derive_seed(args.seed, "chain"))
    save_csv(chain, out / "chain.csv")
    quad = synth_quadrature(args.duration, args.fs, 10.0, 0.05, derive_seed(args.seed, "quadrature"))
    save_csv(quad, out / "quadrature.csv")
    log.info("wrote %d graphs and 2 recordings to %s", len(data), out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--config", help="JSON file of option defaults (keys are option names)")
    common.add_argument("-o", "--output", help="output directory or file")
    common.add_argument("--quiet", action="store_true")

    band = argparse.ArgumentParser(add_help=False)
    band.add_argument("--low", type=float, help="custom band lower edge, Hz")
    band.add_argument("--high", type=float, help="custom band upper edge, Hz")

    p = argparse.ArgumentParser(prog="bayesfc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("preprocess", parents=[common, band], help="average-reference and band-pass CSV recordings")
    sp.add_argument("inputs", nargs="+")
    sp.add_argument("--fs", type=float, help="sampling rate in Hz (CSV carries none)")
    sp.add_argument("--band", action="append", choices=["theta", "alpha", "beta", "custom"])
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("connect", parents=[common, band], help="sliding-window connectivity")
    sp.add_argument("inputs", nargs="+", help="preprocessed recording JSON files")
    sp.add_argument("--method", choices=["bsl", "pearson", "imcoh", "aec"], default="bsl")
    sp.add_argument("--band", choices=["theta", "alpha", "beta", "custom"])
    sp.add_argument("--window", type=float, help="window length, s (default: whole recording)")
    sp.add_argument("--stride", type=float, help="window stride, s (default: window length)")
    sp.add_argument("--score", choices=["bdeu", "bic"], default="bdeu")
    sp.add_argument("--ess", type=float, default=1.0)
    sp.add_argument("--bins", type=int, default=3)
    sp.add_argument("--max-parents", type=int, default=3)
    sp.add_argument("--restarts", type=int, default=10)
    sp.add_argument("--max-sweeps", type=int, default=200)
    sp.add_argument("--patience", type=int, default=2)
    sp.add_argument("--init-edge-prob", type=float, default=0.2)
    sp.add_argument("--no-reversal", action="store_true")
    sp.add_argument("--segment", type=int, help="Welch segment length in samples (imcoh)")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--edge-threshold", type=float, help="also write edges with strength above this")
    sp.set_defaults(func=cmd_connect)

    sp = sub.add_parser("stats", parents=[common], help="Spearman / ANOVA / classification report")
    sp.add_argument("inputs", nargs="*", help="connectivity files forming one group")
    sp.add_argument("--group", nargs="+", action="append", metavar=("LABEL", "FILE"),
                    help="labelled group of connectivity files (repeatable)")
    sp.add_argument("--reduction", choices=["mean", "max", "median"], default="mean",
                    help="per-matrix scalar entering the ANOVA")
    sp.add_argument("--confusion", help="JSON with a 'counts' confusion matrix")
    sp.set_defaults(func=cmd_stats)

    train_opts = argparse.ArgumentParser(add_help=False)
    train_opts.add_argument("dataset")
    train_opts.add_argument("--lr", type=float, default=1e-3)
    train_opts.add_argument("--epochs", type=int, default=200)
    train_opts.add_argument("--batch-size", type=int, default=16)
    train_opts.add_argument("--folds", type=int, default=10)
    train_opts.add_argument("--hidden", type=int, default=32)
    train_opts.add_argument("--blocks", type=int, default=1)
    train_opts.add_argument("--dropout", type=float, default=0.5)
    train_opts.add_argument("--no-bn", action="store_true")

    sp = sub.add_parser("gcn-train", parents=[common, train_opts], help="train a GCN checkpoint")
    sp.set_defaults(func=cmd_gcn_train)
    sp = sub.add_parser("gcn-eval", parents=[common, train_opts], help="k-fold or checkpoint evaluation")
    sp.add_argument("--checkpoint")
    sp.set_defaults(func=cmd_gcn_eval)

    sp = sub.add_parser("synth", parents=[common], help="write synthetic fixtures")
    sp.add_argument("--per-class", type=int, default=40)
    sp.add_argument("--nodes", type=int, default=10)
    sp.add_argument("--duration", type=float, default=10.0)
    sp.add_argument("--fs", type=float, default=500.0)
    sp.set_defaults(func=cmd_synth)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    with open(known.config) as fh:
        conf = json.load(fh)
    conf = {k.replace("-", "_"): v for k, v in conf.items()}
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            sp.set_defaults(**conf)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"bayesfc: error: cannot read --config: {exc}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except (InputError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"bayesfc {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"bayesfc {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
