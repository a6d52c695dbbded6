"""Command line entry point: ``dynwalk {ingest,embed,eval,bench,grid,synth}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Progress goes to stderr; results only to files.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, evaluation, pipeline, synth
from .embedding import read_embedding
from .graph_store import (GraphFormatError, NodeIndex, SnapshotSequence, bucket_stream, read_events, write_snapshot)
from .pipeline import PipelineConfig
from .sgns import TrainConfig
from .walker import WalkParams

logger = logging.getLogger("dynwalk")


class UsageError(Exception):
    """Bad flags or config; maps to exit code 2."""


# --------------------------------------------------------------------------- config

# section -> {key: (target, field, type)}
_CONFIG_KEYS = {
    "walk": {
        "p": ("walk", "p", float), "q": ("walk", "q", float),
        "walks_per_node": ("walk", "walks_per_node", int), "walk_length": ("walk", "walk_length", int),
    },
    "train": {
        "dim": ("train", "dim", int), "window": ("train", "window", int), "negatives": ("train", "negatives", int),
        "epochs": ("train", "epochs", int), "warm_epochs": ("train", "warm_epochs", int),
        "lr0": ("train", "lr0", float), "lr1": ("train", "lr1", float),
        "neg_exponent": ("train", "neg_exponent", float), "negative_source": ("train", "negative_source", str),
        "init": ("train", "init", str), "shuffle": ("train", "shuffle", "bool"),
    },
    "pipeline": {
        "mode": ("pipe", "mode", str), "include_change": ("pipe", "include_change", "bool"),
        "seed": ("pipe", "seed", int), "workers": ("pipe", "workers", int),
        "directed": ("run", "directed", "bool"), "checkpoint": ("pipe", "checkpoint", "bool"),
    },
    "eval": {
        "task": ("eval", "task", str), "op": ("eval", "op", str), "train_fraction": ("eval", "train_fraction", float),
        "aggregate": ("eval", "aggregate", str), "train_window": ("eval", "train_window", int),
    },
}


def _convert(value: str, kind, where: str):
    try:
        if kind == "bool":
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return kind(value)
    except ValueError:
        raise UsageError(f"{where}: cannot parse {value!r}") from None


def load_config(path: str | None) -> dict[str, dict]:
    """Read a sectioned key=value file; unknown sections or keys are rejected."""
    out: dict[str, dict] = {"walk": {}, "train": {}, "pipe": {}, "run": {}, "eval": {}}
    if not path:
        return out
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise UsageError(f"{path}: {exc}") from None
    for section in parser.sections():
        if section not in _CONFIG_KEYS:
            raise UsageError(f"{path}: unknown section [{section}]")
        for key, value in parser.items(section):
            spec = _CONFIG_KEYS[section].get(key)
            if spec is None:
                raise UsageError(f"{path}: unknown key '{key}' in [{section}]")
            target, name, kind = spec
            out[target][name] = _convert(value, kind, f"{path} [{section}] {key}")
    return out


def build_pipeline_config(args, conf: dict) -> PipelineConfig:
    walk = dict(conf["walk"])
    train = dict(conf["train"])
    pipe = dict(conf["pipe"])
    for flag, name in (("p", "p"), ("q", "q"), ("walks", "walks_per_node"), ("length", "walk_length")):
        if getattr(args, flag, None) is not None:
            walk[name] = getattr(args, flag)
    for flag in ("dim", "window", "negatives", "epochs", "warm_epochs", "lr0", "lr1", "init", "negative_source"):
        if getattr(args, flag, None) is not None:
            train[flag] = getattr(args, flag)
    for flag in ("mode", "seed", "workers"):
        if getattr(args, flag, None) is not None:
            pipe[flag] = getattr(args, flag)
    if getattr(args, "literal_delta", False):
        pipe["include_change"] = False
    if getattr(args, "checkpoint", False):
        pipe["checkpoint"] = True
    if getattr(args, "skip_train", False):
        pipe["skip_train"] = True
    try:
        return PipelineConfig(walk=WalkParams(**walk), train=TrainConfig(**train), **pipe)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _directed(args, conf) -> bool:
    return bool(getattr(args, "directed", False) or conf["run"].get("directed", False))


def _snapshots(path: str, directed: bool, interner: NodeIndex | None = None) -> SnapshotSequence:
    if not Path(path).exists():
        raise FileNotFoundError(f"snapshot directory not found: {path}")
    return SnapshotSequence(path, directed, interner)


# --------------------------------------------------------------------------- commands


def cmd_ingest(args, conf) -> int:
    out = Path(args.out)
    directed = _directed(args, conf)
    if args.events:
        if not Path(args.events).is_file():
            raise FileNotFoundError(f"events file not found: {args.events}")
        if (args.buckets is None) == (args.duration is None):
            raise UsageError("ingest --events needs exactly one of --buckets or --duration")
        if args.buckets is not None and args.buckets <= 0:
            raise UsageError("--buckets must be positive")
        snaps = bucket_stream(read_events(args.events), buckets=args.buckets, duration=args.duration,
                              cumulative=args.cumulative, directed=directed)
        source = args.events
    else:
        seq = _snapshots(args.snapshots, directed)
        snaps = list(seq)
        source = args.snapshots
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"source": str(source), "directed": directed, "cumulative": bool(args.cumulative),
                "snapshots": []}
    for g in snaps:
        name = f"snapshot_{g.timestamp}.tsv"
        write_snapshot(g, out / name)
        manifest["snapshots"].append({"t": g.timestamp, "file": name, "nodes": g.num_nodes, "edges": g.num_edges})
        logger.info("wrote %s (%d nodes, %d edges)", name, g.num_nodes, g.num_edges)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_embed(args, conf) -> int:
    cfg = build_pipeline_config(args, conf)
    cfg = cfg.replace(output_dir=args.out, keep_embeddings=False)
    seq = _snapshots(args.snapshots, _directed(args, conf))
    if args.resume:
        if not Path(args.resume).is_file():
            raise FileNotFoundError(f"checkpoint not found: {args.resume}")
        pipeline.resume(seq, cfg, args.resume)
    else:
        pipeline.run(seq, cfg)
    return 0


def _load_embeddings(emb_dir: Path, T: int) -> dict[int, object]:
    embs = {}
    for t in range(1, T + 1):
        p = emb_dir / f"emb_{t}.txt"
        if p.exists():
            embs[t] = read_embedding(p)
    if not embs:
        raise FileNotFoundError(f"no emb_<t>.txt files in {emb_dir}")
    return embs


def _fmt(x: float) -> str:
    return "NA" if x is None or not np.isfinite(x) else f"{x:.6f}"


def cmd_eval(args, conf) -> int:
    ev = dict(conf["eval"])
    task = args.task or ev.get("task")
    if task not in ("linkpred", "nodeclass", "anomaly"):
        raise UsageError("--task must be one of linkpred, nodeclass, anomaly")
    op = args.op or ev.get("op", "hadamard")
    if op != "all" and op not in evaluation.OPERATORS:
        raise UsageError(f"--op must be one of {evaluation.OPERATORS} or 'all'")
    emb_dir = Path(args.embeddings)
    if not emb_dir.is_dir():
        raise FileNotFoundError(f"embedding directory not found: {emb_dir}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if task == "nodeclass":
        if not args.labels:
            raise UsageError("--task nodeclass requires --labels FILE (node<TAB>class_label)")
        if not Path(args.labels).is_file():
            raise FileNotFoundError(f"labels file not found: {args.labels}")
        labels = evaluation.read_labels(args.labels)
        T = len(list(emb_dir.glob("emb_*.txt")))
        embs = _load_embeddings(emb_dir, T)
        frac = args.train_fraction if args.train_fraction is not None else ev.get("train_fraction", 0.5)
        with open(out / "nodeclass.tsv", "w", encoding="utf-8") as fh:
            fh.write("t\tmicro_f1\tmacro_f1\n")
            for t, emb in sorted(embs.items()):
                micro, macro = evaluation.node_classification(emb, labels, frac, seed=args.seed)
                fh.write(f"{t}\t{_fmt(micro)}\t{_fmt(macro)}\n")
        return 0

    if task == "anomaly":
        T = len(list(emb_dir.glob("emb_*.txt")))
        embs = _load_embeddings(emb_dir, T)
        ts = sorted(embs)
        agg = args.aggregate or ev.get("aggregate", "mean")
        series = evaluation.anomaly_series([embs[t] for t in ts], aggregate=agg, start=ts[0])
        with open(out / "anomaly.tsv", "w", encoding="utf-8") as fh:
            fh.write("t\ts_t\n")
            for t, v in zip(series.timestamps, series.values):
                fh.write(f"{t}\t{_fmt(v)}\n")
        with open(out / "anomaly_detail.tsv", "w", encoding="utf-8") as fh:
            fh.write("t\ts_t\tcommon_nodes\tpeak\n")
            for t, v, n in zip(series.timestamps, series.values, series.common):
                fh.write(f"{t}\t{_fmt(v)}\t{n}\t{int(t in series.peaks)}\n")
        return 0

    if not args.snapshots:
        raise UsageError("--task linkpred requires --snapshots DIR")
    seq = _snapshots(args.snapshots, _directed(args, conf))
    snaps = list(seq)
    embs = _load_embeddings(emb_dir, len(snaps))
    ops = evaluation.OPERATORS if op == "all" else (op,)
    window = args.train_window if args.train_window is not None else ev.get("train_window")
    rows = evaluation.link_prediction_series(snaps, embs, ops, seed=args.seed, train_window=window)
    with open(out / "linkpred.tsv", "w", encoding="utf-8") as fh:
        fh.write("t\top\tauc\tpositives\texcluded\n")
        for r in rows:
            fh.write(f"{r.timestamp}\t{r.op}\t{_fmt(r.auc)}\t{r.positives}\t{r.excluded}\n")
    method = args.method or "dynwalk"
    with open(out / "linkpred_summary.tsv", "w", encoding="utf-8") as fh:
        fh.write("op\tmethod\tmean_auc\ttimestamps\n")
        for o in ops:
            vals = [r.auc for r in rows if r.op == o]
            fh.write(f"{o}\t{method}\t{_fmt(float(np.mean(vals)) if vals else float('nan'))}\t{len(vals)}\n")
    return 0


def _write_bench(rows: list[dict], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(pipeline.BENCH_COLUMNS) + "\n")
        for r in rows:
            fh.write("\t".join(f"{r[c]:.6f}" if isinstance(r[c], float) else str(r[c])
                               for c in pipeline.BENCH_COLUMNS) + "\n")


def cmd_bench(args, conf) -> int:
    cfg = build_pipeline_config(args, conf)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        if m not in pipeline.MODES:
            raise UsageError(f"unknown mode {m!r} in --modes")
    snaps = list(_snapshots(args.snapshots, _directed(args, conf)))
    if len(snaps) < 2:
        raise UsageError("bench needs at least 2 snapshots")
    rows = pipeline.bench(snaps, cfg, modes)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_bench(rows, out)
    for mode, tot in pipeline.bench_totals(rows).items():
        logger.info("%s: walks %.3fs, train %.3fs, total %.3fs", mode, tot["time_walks"], tot["time_train"],
                    tot["time_total"])
    return 0


def cmd_grid(args, conf) -> int:
    cfg = build_pipeline_config(args, conf)
    snaps = list(_snapshots(args.snapshots, _directed(args, conf)))
    op = args.op or conf["eval"].get("op", "hadamard")
    if op not in evaluation.OPERATORS:
        raise UsageError(f"--op must be one of {evaluation.OPERATORS}")

    def score(results):
        embs = {r.timestamp: r.embedding for r in results}
        rows = evaluation.link_prediction_series(snaps, embs, (op,), seed=args.seed or 0)
        return float(np.mean([r.auc for r in rows]))

    grid = [float(x) for x in args.grid.split(",")]
    rows = pipeline.grid_search(snaps, cfg, score, grid)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("p\tq\tmean_auc\n")
        for r in rows:
            fh.write(f"{r['p']:g}\t{r['q']:g}\t{_fmt(r['score'])}\n")
    best = rows[0]
    logger.info("best cell p=%g q=%g mean AUC %.4f (reported only)", best["p"], best["q"], best["score"])
    return 0


def _parse_shocks(items) -> dict[int, float]:
    shocks = {}
    for item in items or []:
        try:
            t, frac = item.split(":")
            shocks[int(t)] = float(frac)
        except ValueError:
            raise UsageError(f"--shock expects T:FRACTION, got {item!r}") from None
    return shocks


def cmd_synth(args, conf) -> int:
    try:
        spec = synth.SynthSpec(n=args.n, edges=args.edges, steps=args.steps, churn=args.churn,
                               communities=args.communities, mixing=args.mixing,
                               shocks=_parse_shocks(args.shock), seed=args.seed or 0)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    synth.write(spec, args.out)
    logger.info("wrote %d snapshots to %s", spec.steps, args.out)
    return 0


# --------------------------------------------------------------------------- parser


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline")
    g.add_argument("--config", help="sectioned key=value file; flags override it")
    g.add_argument("--mode", choices=pipeline.MODES)
    g.add_argument("--p", type=float, help="return parameter")
    g.add_argument("--q", type=float, help="in-out parameter")
    g.add_argument("--walks", type=int, help="walks per start node")
    g.add_argument("--length", type=int, help="walk length")
    g.add_argument("--dim", type=int)
    g.add_argument("--window", type=int)
    g.add_argument("--negatives", type=int)
    g.add_argument("--epochs", type=int, help="epochs for cold-start training")
    g.add_argument("--warm-epochs", dest="warm_epochs", type=int, help="epochs for warm-started steps")
    g.add_argument("--lr0", type=float)
    g.add_argument("--lr1", type=float)
    g.add_argument("--init", choices=("uniform", "neighbor_mean"))
    g.add_argument("--negative-source", dest="negative_source", choices=("current", "cumulative"))
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int, help="1 (default) is the deterministic mode")
    g.add_argument("--directed", action="store_true")
    g.add_argument("--literal-delta", action="store_true",
                   help="leave re-weighted edges out of the evolving node set")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynwalk", description="Incremental random-walk embeddings of dynamic graphs.")
    parser.add_argument("--version", action="version", version=f"dynwalk {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="bucket an event file or canonicalise a snapshot directory")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--events", help="file of 'u v w epoch_seconds' lines")
    src.add_argument("--snapshots", help="directory of snapshot_<t>.tsv files")
    p.add_argument("--buckets", type=int)
    p.add_argument("--duration", type=float, help="window length in seconds")
    p.add_argument("--cumulative", action="store_true")
    p.add_argument("--directed", action="store_true")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed", help="embed every snapshot (writes emb_<t>.txt and results.jsonl)")
    p.add_argument("--snapshots", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", action="store_true", help="write checkpoint.bin after every timestamp")
    p.add_argument("--resume", help="checkpoint file to continue from")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval", help="link prediction, node classification or anomaly scoring")
    p.add_argument("--task", choices=("linkpred", "nodeclass", "anomaly"))
    p.add_argument("--embeddings", required=True, help="directory holding emb_<t>.txt")
    p.add_argument("--snapshots")
    p.add_argument("--op", help="edge operator or 'all'")
    p.add_argument("--labels", help="node<TAB>class_label file")
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--train-window", dest="train_window", type=int)
    p.add_argument("--aggregate", choices=("mean", "sum"))
    p.add_argument("--method", help="method name in the summary table")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--directed", action="store_true")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time modes against each other")
    p.add_argument("--snapshots", required=True)
    p.add_argument("--modes", default="dyn,all")
    p.add_argument("--skip-train", dest="skip_train", action="store_true", help="time walks only")
    p.add_argument("--out", required=True, help="timing TSV")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("grid", help="link-prediction AUC over a (p, q) grid")
    p.add_argument("--snapshots", required=True)
    p.add_argument("--grid", default="0.5,1,2,4")
    p.add_argument("--op")
    p.add_argument("--out", required=True)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("synth", help="generate a churn-controlled synthetic sequence")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--edges", type=int, default=3000)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--churn", type=float, default=0.01)
    p.add_argument("--communities", type=int, default=1)
    p.add_argument("--mixing", type=float, default=0.1)
    p.add_argument("--shock", action="append", metavar="T:FRACTION", help="rewire FRACTION of edges at step T")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose + 1, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        conf = load_config(getattr(args, "config", None))
        return args.func(args, conf)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dynwalk: error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, GraphFormatError, evaluation.EvaluationError, ValueError, OSError) as exc:
        print(f"dynwalk: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
