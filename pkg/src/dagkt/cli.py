"""Command-line entry point.

Every command writes its artifacts plus a run manifest.  A file artifact
``X`` is described by ``X.manifest.json``; a directory artifact ``D`` by
``D/run.manifest.json``.  Settings are layered: JSON config file, then
``DAGKT_*`` environment variables, then command-line flags (flags win).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .graph import QKGraph, build_graph, compute_attempts, compute_difficulty
from .ingest import (
    ColumnMapping,
    ParseError,
    ValidationError,
    compute_stats,
    parse_log,
    read_canonical,
    write_canonical,
)
from .metrics import auc
from .model import VARIANTS, encode_sequence
from .synthetic import InfeasibleSpec, SynthSpec, generate_synthetic
from .training import (
    FeatureTables,
    ProvenanceError,
    TrainConfig,
    TrainingDiverged,
    load_checkpoint,
    predict_all,
    run_ablation,
    run_cv,
    save_checkpoint,
)

log = logging.getLogger("dagkt")

EXIT_OK = 0
EXIT_USAGE = 2          # argparse's own code for bad command lines
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_RUNTIME = 5

ENV_PREFIX = "DAGKT_"

# flag dest -> (environment suffix, converter)
OVERRIDES = {
    "seed": ("SEED", int),
    "omega": ("OMEGA", float),
    "lam": ("LAMBDA", float),
    "c_min": ("MIN_SUPPORT", int),
    "variant": ("VARIANT", str),
    "folds": ("FOLDS", int),
    "epochs": ("EPOCHS", int),
}


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seeds: dict
    inputs: dict = field(default_factory=dict)     # path -> sha256
    outputs: list = field(default_factory=list)
    started: str = ""
    finished: str = ""
    version: str = __version__

    def write(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def manifest_path(output):
    output = Path(output)
    return output / "run.manifest.json" if output.is_dir() else output.with_name(output.name + ".manifest.json")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ParseError(f"{path}: invalid JSON ({err.msg})", err.lineno) from None


def resolve_settings(args, base):
    """Overlay environment variables and explicit flags on ``base``."""
    merged = dict(base)
    for dest, (suffix, conv) in OVERRIDES.items():
        raw = os.environ.get(ENV_PREFIX + suffix)
        if raw is not None:
            try:
                merged[dest] = conv(raw)
            except ValueError:
                raise ValidationError(f"{ENV_PREFIX + suffix}: cannot read {raw!r} as {conv.__name__}") from None
    for dest in OVERRIDES:
        value = getattr(args, dest, None)
        if value is not None:
            merged[dest] = value
    return merged


def train_config(args):
    base = _read_json(args.config) if getattr(args, "config", None) else {}
    settings = resolve_settings(args, base)
    return TrainConfig.from_dict({k: v for k, v in settings.items() if k in TrainConfig.__dataclass_fields__})


# ----------------------------------------------------------------------------
# commands; each returns (config dict, seeds dict, inputs, outputs)

def cmd_ingest(args):
    mapping = ColumnMapping.from_dict(_read_json(args.mapping)) if args.mapping else ColumnMapping()
    if args.derive_attempts:
        mapping = replace(mapping, attempts=None)
    sequences = parse_log(Path(args.input), mapping, min_length=args.min_length)
    if not sequences:
        raise ValidationError(f"no student has at least {args.min_length} interactions")
    write_canonical(sequences, args.output)
    stats_path = Path(args.stats or f"{args.output}.stats.json")
    stats_path.write_text(json.dumps(compute_stats(sequences).to_dict(), indent=2, sort_keys=True) + "\n")
    config = {"mapping": asdict(mapping), "min_length": args.min_length}
    return config, {}, [args.input] + ([args.mapping] if args.mapping else []), [args.output, str(stats_path)]


def cmd_build_graph(args):
    settings = resolve_settings(args, _read_json(args.config) if args.config else {})
    omega = settings.get("omega", 0.7)
    lam = settings.get("lam", 0.01)
    c_min = settings.get("c_min", 3)
    sequences = read_canonical(args.input)
    graph = build_graph(sequences, omega=omega, lam=lam, c_min=c_min)
    graph.save(args.output)
    stem = Path(args.output)
    diff_path = stem.with_name(stem.name + ".difficulty.tsv")
    att_path = stem.with_name(stem.name + ".attempts.tsv")
    diff_path.write_text(compute_difficulty(sequences).to_tsv())
    att_path.write_text(compute_attempts(sequences).to_tsv())
    log.info("graph: %d q-kc edges, %d q-q edges", len(graph.qk_edges), len(graph.qq_edges))
    return {"omega": omega, "lambda": lam, "c_min": c_min}, {}, [args.input], [args.output, str(diff_path),
                                                                               str(att_path)]


def cmd_train(args):
    tcfg = train_config(args)
    inputs = [args.input]
    if args.graph:
        # per-fold graphs are rebuilt from training students only; the supplied
        # graph contributes its thresholds so the run stays comparable
        graph = QKGraph.load(args.graph)
        tcfg = replace(tcfg, omega=graph.omega, lam=graph.lam, c_min=graph.c_min)
        tcfg = replace(tcfg, **{k: v for k, v in resolve_settings(args, {}).items()
                                if k in ("omega", "lam", "c_min")})
        inputs.append(args.graph)
    if args.config:
        inputs.append(args.config)
    sequences = read_canonical(args.input)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    report, results = run_cv(sequences, tcfg, metrics_path=out / "metrics.jsonl", report_path=out / "report.json",
                             keep_results=True)
    outputs = [str(out / "metrics.jsonl"), str(out / "report.json")]
    for res in results:
        fold_dir = out / f"fold{res.fold}"
        fold_dir.mkdir(exist_ok=True)
        res.artifacts.graph.save(fold_dir / "graph.tsv")
        save_checkpoint(fold_dir / "checkpoint", res.model, res.best_state, tcfg, res.artifacts.features)
        outputs += [str(fold_dir / "graph.tsv"), str(fold_dir / "checkpoint")]
    print(json.dumps({"mean_best_auc": report.mean_best_auc, "fold_best_auc": report.fold_best_auc}))
    return tcfg.to_dict(), {"seed": tcfg.seed}, inputs, outputs


def cmd_eval(args):
    ckpt = Path(args.checkpoint)
    graph_path = Path(args.graph) if args.graph else ckpt.parent / "graph.tsv"
    graph = QKGraph.load(graph_path)
    model, meta = load_checkpoint(ckpt, graph)
    if not meta.get("features"):
        raise ValidationError(f"{ckpt}: checkpoint carries no feature statistics")
    features = FeatureTables.from_dict(meta["features"])
    cfg = model.config
    diff = features.difficulty if cfg.use_difficulty else (lambda q: 0.0)
    sequences = read_canonical(args.input)
    encoded = [encode_sequence(s.records, model.vocab, diff, features.m_max, cfg) for s in sequences if len(s) >= 2]
    probs, labels = predict_all(model, encoded)
    result = {"auc": auc(probs, labels, context=str(args.input)), "n_predictions": int(labels.size),
              "checkpoint": str(ckpt), "graph_hash": model.graph_hash}
    Path(args.output).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"auc": result["auc"]}))
    return {"checkpoint": str(ckpt)}, {}, [args.input, str(graph_path), str(ckpt / "tensors.bin")], [args.output]


def cmd_ablate(args):
    tcfg = train_config(args)
    variants = tuple(args.variants.split(",")) if args.variants else VARIANTS
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ValidationError(f"variants: unknown {unknown}; expected a subset of {list(VARIANTS)}")
    rows = run_ablation(read_canonical(args.input), tcfg, variants)
    Path(args.output).write_text(json.dumps({"rows": rows, "config": tcfg.to_dict()}, indent=2, sort_keys=True) + "\n")
    for row in rows:
        print(f"{row['name']:<10} {row['mean_best_auc']:.4f}")
    return tcfg.to_dict(), {"seed": tcfg.seed}, [args.input], [args.output]


def cmd_synth(args):
    spec = SynthSpec.from_json(Path(args.config).read_text()) if args.config else SynthSpec()
    seed = resolve_settings(args, {"seed": 0})["seed"]
    corpus = generate_synthetic(spec, seed)
    write_canonical(corpus.sequences, args.output)
    truth_path = Path(f"{args.output}.truth.json")
    truth = {"planted_pairs": sorted(map(list, corpus.planted_pairs)),
             "difficulty": dict(sorted(corpus.difficulty.items())),
             "question_kcs": {q: list(k) for q, k in sorted(corpus.question_kcs.items())}}
    truth_path.write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    return asdict(spec), {"seed": seed}, [args.config] if args.config else [], [args.output, str(truth_path)]


COMMANDS = {
    "ingest": cmd_ingest,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "synth": cmd_synth,
}


# ----------------------------------------------------------------------------

def _add_overrides(p, *names):
    flags = {
        "seed": (["--seed"], dict(type=int, help="random seed")),
        "omega": (["--omega"], dict(type=float, help="similarity threshold for question-question edges")),
        "lam": (["--lambda"], dict(dest="lam", type=float, help="smoothing added to the F1 counts")),
        "c_min": (["--min-support"], dict(dest="c_min", type=int, help="minimum co-occurrence support")),
        "variant": (["--variant"], dict(choices=VARIANTS, help="ablation variant")),
        "folds": (["--folds"], dict(type=int, help="cross-validation folds")),
        "epochs": (["--epochs"], dict(type=int, help="training epochs")),
    }
    for name in names:
        opts, kw = flags[name]
        p.add_argument(*opts, default=None, **kw)


def build_parser():
    parser = argparse.ArgumentParser(prog="dagkt", description="Difficulty- and attempts-aware knowledge tracing.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a raw interaction log into canonical sequences")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--mapping", help="JSON column mapping")
    p.add_argument("--stats", help="stats JSON path (default: <output>.stats.json)")
    p.add_argument("--min-length", type=int, default=4)
    p.add_argument("--derive-attempts", action="store_true", help="count occurrences instead of reading attempts")

    p = sub.add_parser("build-graph", help="question-KC graph with similarity edges")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config")
    _add_overrides(p, "omega", "lam", "c_min")

    p = sub.add_parser("train", help="cross-validated training with per-fold checkpoints")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--graph", help="graph TSV whose thresholds the per-fold graphs reuse")
    p.add_argument("--config", help="JSON train config")
    _add_overrides(p, "seed", "omega", "lam", "c_min", "variant", "folds", "epochs")

    p = sub.add_parser("eval", help="AUC of a checkpoint on canonical sequences")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--graph", help="graph TSV (default: graph.tsv next to the checkpoint)")

    p = sub.add_parser("ablate", help="compare ablation variants")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config", help="JSON train config")
    p.add_argument("--variants", help=f"comma-separated subset of {','.join(VARIANTS)}")
    _add_overrides(p, "seed", "omega", "lam", "c_min", "folds", "epochs")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--output", required=True)
    p.add_argument("--config", help="JSON synthetic spec")
    _add_overrides(p, "seed")
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    started = _now()
    try:
        config, seeds, inputs, outputs = COMMANDS[args.command](args)
    except ParseError as err:
        print(f"dagkt {args.command}: parse error: {err}", file=sys.stderr)
        return EXIT_PARSE
    except (ValidationError, InfeasibleSpec, ValueError, KeyError) as err:
        print(f"dagkt {args.command}: invalid input: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingDiverged, ProvenanceError, OSError, RuntimeError) as err:
        print(f"dagkt {args.command}: failed: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    manifest = RunManifest(
        command=args.command,
        argv=argv,
        config=config,
        seeds=seeds,
        inputs={str(p): sha256_file(p) for p in inputs},
        outputs=[str(p) for p in outputs],
        started=started,
        finished=_now(),
    )
    manifest.write(manifest_path(args.output))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
