"""Command-line surface: preprocess, pretrain, adapt, evaluate,
zero-shot-matrix, graph, probe.

Every subcommand reads a JSON config file mirroring PipelineConfig and
accepts flag overrides; exit code 0 on success, 1 with a diagnostic on
failure, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .checkpoint import load_checkpoint, restore_model
from .corpus.loaders import load_dataset
from .corpus.vocab import Vocabulary
from .corpus.windows import dump_windows_jsonl, window_examples
from .errors import ConfigurationError, DatasetParseError
from .evaluation import TransferMatrix, emit_graph, evaluate, probe_threshold, zero_shot_matrix
from .model import SpanModel
from .pipeline import ABLATION_TOGGLES, PipelineConfig, pretrain_only, run_case


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig.from_json(args.config)
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "ablate", None):
        toggles = [t.strip() for t in args.ablate.split(",") if t.strip()]
        unknown = [t for t in toggles if t not in ABLATION_TOGGLES]
        if unknown:
            raise ConfigurationError(
                f"unknown ablation toggles {unknown}; choose from {list(ABLATION_TOGGLES)}"
            )
        config = replace(config, **{t: True for t in toggles})
    return config


def _run_dir(args: argparse.Namespace, config: PipelineConfig, default: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if config.run_dir:
        return Path(config.run_dir)
    return Path("runs") / f"{default}-seed{config.seed}"


def _cmd_preprocess(args: argparse.Namespace) -> int:
    config = _load_config(args)
    data = args.data or config.source_data
    if not data:
        raise ConfigurationError("preprocess needs --data or source_data in the config")
    out = Path(args.out) if args.out else Path(data).with_suffix(".windows.jsonl")
    examples = load_dataset(data, config.source_format, max_span_len=config.max_span_len)
    vocab = Vocabulary.build(examples)
    training = all(ex.answer is not None for ex in examples)
    windows = []
    for ex in examples:
        windows.extend(
            window_examples(ex, vocab, config.max_len, config.stride, config.max_query_len, training)
        )
    n = dump_windows_jsonl(windows, out)
    vocab.save(out.with_suffix(".vocab.json"))
    print(json.dumps({"examples": len(examples), "windows": n, "out": str(out)}))
    return 0


def _cmd_pretrain(args: argparse.Namespace) -> int:
    config = _load_config(args)
    source = args.data or config.source_data
    if not source:
        raise ConfigurationError("pretrain needs --data or source_data in the config")
    run_dir = _run_dir(args, config, "pretrain")
    datasets = [load_dataset(source, config.source_format, domain="source")]
    if config.target_data:
        datasets.append(load_dataset(config.target_data, config.target_format, domain="target"))
    pretrain_only(datasets, 0, config, run_dir)
    print(json.dumps({"run_dir": str(run_dir), "epochs": config.n_pre}))
    return 0


def _cmd_adapt(args: argparse.Namespace) -> int:
    config = _load_config(args)
    run_dir = _run_dir(args, config, "adapt")
    result = run_case(config.source_data, config.target_data, config, run_dir)
    phases = {}
    for log in result.epoch_logs:
        phases[log.phase] = phases.get(log.phase, 0) + 1
    print(json.dumps({"run_dir": str(result.run_dir), "phases": phases}))
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    if checkpoint.vocab is None:
        raise ConfigurationError("checkpoint carries no vocabulary; cannot evaluate")
    config = PipelineConfig.from_dict(checkpoint.config)
    model = SpanModel(
        config.encoder_config(len(checkpoint.vocab)), use_batchnorm=not config.no_batchnorm
    )
    restore_model(model, checkpoint)
    dataset = load_dataset(args.data, config.target_format, domain="target")
    result = evaluate(
        model, dataset, checkpoint.vocab,
        stride=config.stride, max_query_len=config.max_query_len,
        n_best=config.n_best, max_span_len=config.max_span_len,
    )
    print(json.dumps(result.to_dict()))
    return 0


def _cmd_zero_shot_matrix(args: argparse.Namespace) -> int:
    config = _load_config(args)
    paths = [p.strip() for p in args.data.split(",") if p.strip()]
    run_dir = _run_dir(args, config, "zero-shot-matrix")
    matrix = zero_shot_matrix(paths, config, run_dir)
    out = Path(args.out) if args.out else run_dir / "matrix.json"
    matrix.save(out)
    print(json.dumps({"out": str(out), "datasets": matrix.datasets}))
    return 0


def _cmd_graph(args: argparse.Namespace) -> int:
    matrix = TransferMatrix.load(args.matrix)
    metadata = None
    if args.data:
        metadata = json.loads(Path(args.data).read_text(encoding="utf-8"))
    graph = emit_graph(matrix, args.out, seed=args.seed or 0, metadata=metadata)
    print(json.dumps({"out": args.out, "nodes": len(graph["nodes"]), "edges": len(graph["edges"])}))
    return 0


def _cmd_probe(args: argparse.Namespace) -> int:
    config = _load_config(args)
    grid = [float(v) for v in args.grid.split(",") if v.strip()]
    if not grid:
        raise ConfigurationError("--grid needs at least one threshold")
    run_dir = _run_dir(args, config, "probe")
    rows = probe_threshold(config, grid, run_dir)
    out = Path(args.out) if args.out else run_dir / "probe.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(rows, indent=2), encoding="utf-8")
    print(json.dumps({"out": str(out), "rows": len(rows)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qadapt",
        description="Domain adaptation for extractive span QA: "
        "self-training with confidence filtering plus conditional adversarial alignment.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
        p.add_argument("--config", required=config_required, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output path or run directory")

    p = sub.add_parser("preprocess", help="encode a dataset into window records")
    common(p)
    p.add_argument("--data", default=None, help="input dataset file")
    p.set_defaults(handler=_cmd_preprocess)

    p = sub.add_parser("pretrain", help="train a source-domain model")
    common(p)
    p.add_argument("--data", default=None, help="labeled source dataset")
    p.set_defaults(handler=_cmd_pretrain)

    p = sub.add_parser("adapt", help="run the full adaptation pipeline")
    common(p)
    p.add_argument("--ablate", default=None, help=f"comma list from {list(ABLATION_TOGGLES)}")
    p.set_defaults(handler=_cmd_adapt)

    p = sub.add_parser("evaluate", help="score a checkpoint on a labeled dataset")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="labeled dataset file")
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("zero-shot-matrix", help="cross-dataset transfer matrix")
    common(p)
    p.add_argument("--data", required=True, help="comma-separated dataset files")
    p.set_defaults(handler=_cmd_zero_shot_matrix)

    p = sub.add_parser("graph", help="emit the dataset-relation force graph")
    p.add_argument("--matrix", required=True, help="transfer matrix JSON")
    p.add_argument("--out", required=True, help="graph output file")
    p.add_argument("--seed", type=int, default=0, help="layout seed")
    p.add_argument("--data", default=None, help="optional node metadata JSON")
    p.set_defaults(handler=_cmd_graph)

    p = sub.add_parser("probe", help="sweep the confidence threshold")
    common(p)
    p.add_argument("--grid", required=True, help="comma-separated T_prob values")
    p.set_defaults(handler=_cmd_probe)

    return parser


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.handler(args)
    except (ConfigurationError, DatasetParseError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
