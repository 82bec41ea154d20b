#!/usr/bin/env python3

import argparse
import json
import logging
import sys
from pathlib import Path
from dataclasses import replace
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

sys.path.insert(0, str(Path(__file__).resolve().parent))

from src import __version__
from src.constraint_engine import (
    VerdictStatus,
    check_answer,
    derive_for_grounding,
    render_temporal,
    solve_occurrence,
    temporal_order,
)
from src.errors import CEQAError, ConfigError, RecordSchemaError
from src.kg_store import (
    Edge,
    GraphSplit,
    KnowledgeGraph,
    RelationType,
    generate_synthetic_graph,
    load_graph,
    split_edges,
    write_split,
)
from src.query_lang import GroundedNode, parse_grounded, record_to_instance
from src.sampler import SamplerConfig, generate_dataset, load_benchmark, load_query_types
from src.symbolic_exec import DEFAULT_GROUNDING_CAP, answer_set
from src.utils import (
    BLUE,
    BOLD,
    GREEN,
    RED,
    YELLOW,
    colored_terminal_text,
    configure_logging,
    get_logger,
    read_json_file,
    write_manifest,
)
from utils.parser import read_key_value_file

if TYPE_CHECKING:
    from src.train_eval import TrainConfig

ROOT = Path(__file__).resolve().parent
DEFAULT_TYPES_FILE = ROOT / "configs" / "query_types.json"
FIXTURE_GRAPH = ROOT / "fixtures" / "figure_example.tsv"
FIXTURE_INFO = ROOT / "fixtures" / "figure_example_info.tsv"
FIXTURE_QUERY = ROOT / "fixtures" / "figure_example_query.json"
# src.neural_meqe.Ablation values; the model subcommands import torch-backed modules lazily
ABLATION_MODES = ("none", "no_ffn", "random_constraints", "no_memory")

logger = get_logger("cli")

_STATUS_COLORS = {
    VerdictStatus.VALID: GREEN,
    VerdictStatus.OCCURRENCE_CONTRADICTION: RED,
    VerdictStatus.TEMPORAL_CONTRADICTION: YELLOW,
}
_STATUS_ORDER = list(_STATUS_COLORS)


def _ratios(text: str) -> Tuple[float, float, float]:
    parts = [p for p in text.replace(":", ",").split(",") if p.strip()]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three ratios like 8,1,1, got {text!r}")
    values = [float(p) for p in parts]
    total = sum(values)
    if total <= 0:
        raise argparse.ArgumentTypeError("ratios must be positive")
    return tuple(v / total for v in values)


def _add_graph_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--kg", type=Path, help="edge list: head<TAB>relation<TAB>tail per line")
    parser.add_argument("--synthetic-vertices", type=int, help="generate a random graph instead of --kg")
    parser.add_argument("--synthetic-edges", type=int)
    parser.add_argument("--ratios", type=_ratios, default=(0.8, 0.1, 0.1))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", type=Path, required=True)


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data-dir", type=Path, required=True)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--lr", type=float, default=0.001)
    parser.add_argument("--batch", type=int, default=128)
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--normalize-scores", action="store_true")
    parser.add_argument("--memory-on-anchor", action="store_true")
    parser.add_argument("--no-progress", action="store_true")


def build_parser() -> Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="process.py", description="Complex eventuality query answering toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, help="key=value defaults for the subcommand; flags win")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true")
    verbosity.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="{split,sample,prove,train,eval,ablate,demo}")
    commands = {}

    p = sub.add_parser("split", help="split a graph into cumulative train/valid/test graphs")
    _add_graph_flags(p)
    commands["split"] = p

    p = sub.add_parser("sample", help="generate a benchmark dataset")
    _add_graph_flags(p)
    p.add_argument("--types-file", type=Path, default=DEFAULT_TYPES_FILE)
    p.add_argument("--count-per-type", type=int, default=100)
    p.add_argument("--max-info", type=int, default=3)
    p.add_argument("--grounding-cap", type=int, default=DEFAULT_GROUNDING_CAP)
    p.add_argument("--max-retries", type=int, default=100)
    p.add_argument("--no-held-out", action="store_true", help="drop the held-out-answer condition")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-progress", action="store_true")
    commands["sample"] = p

    p = sub.add_parser("prove", help="verdict for every symbolic answer of one record")
    p.add_argument("--kg", type=Path, required=True)
    p.add_argument("--record", type=Path, required=True, help="JSONL file or JSON object with query and info_atomics")
    p.add_argument("--index", type=int, default=0, help="record line to read from a JSONL file")
    p.add_argument("--grounding-cap", type=int, default=DEFAULT_GROUNDING_CAP)
    p.add_argument("--witness", action="store_true")
    commands["prove"] = p

    p = sub.add_parser("train", help="train a query encoder")
    _add_train_flags(p)
    p.add_argument("--ablation", choices=ABLATION_MODES, default=ABLATION_MODES[0])
    p.add_argument("--seeds", type=int, default=1, help="train this many seeds starting at --seed")
    p.add_argument("--grid-search", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    commands["train"] = p

    p = sub.add_parser("eval", help="evaluate one or more checkpoints")
    p.add_argument("--model", type=Path, action="append", required=True)
    p.add_argument("--data-dir", type=Path, required=True)
    p.add_argument("--split", choices=["valid", "test"], default="test")
    p.add_argument("--types-file", type=Path, default=DEFAULT_TYPES_FILE)
    p.add_argument("--report", type=Path)
    commands["eval"] = p

    p = sub.add_parser("ablate", help="train and evaluate every ablation mode")
    _add_train_flags(p)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--modes", default=",".join(ABLATION_MODES))
    p.add_argument("--split", choices=["valid", "test"], default="test")
    p.add_argument("--report", type=Path)
    commands["ablate"] = p

    p = sub.add_parser("demo", help="run the restaurant example end to end")
    p.add_argument("--kg", type=Path, default=FIXTURE_GRAPH)
    p.add_argument("--info", type=Path, default=FIXTURE_INFO)
    p.add_argument("--query", type=Path, default=FIXTURE_QUERY)
    commands["demo"] = p
    return parser, commands


def apply_config_defaults(parser: argparse.ArgumentParser, path: Path) -> None:
    values = read_key_value_file(path)
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or action.dest == "help":
            logger.debug("%s: %s does not apply to this subcommand", path, key)
            continue
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except (ValueError, argparse.ArgumentTypeError) as e:
                raise ConfigError(f"{path}: bad value for {key}: {e}") from None
        else:
            defaults[key] = raw
        if action.choices is not None and defaults[key] not in action.choices:
            raise ConfigError(f"{path}: {key} must be one of {list(action.choices)}")
        if action.required:
            action.required = False
    parser.set_defaults(**defaults)


class CEQAPipeline:

    def __init__(self, args: argparse.Namespace):
        self.args = args

    def config_echo(self) -> Dict[str, object]:
        return {k: v for k, v in vars(self.args).items() if k not in ("command", "verbose", "quiet")}

    def _graph(self) -> KnowledgeGraph:
        args = self.args
        if args.kg is not None:
            return load_graph(args.kg)
        if args.synthetic_vertices and args.synthetic_edges:
            return generate_synthetic_graph(args.synthetic_vertices, args.synthetic_edges, args.seed)
        raise ConfigError("give --kg or both --synthetic-vertices and --synthetic-edges")

    def _split(self, subcommand: str, extra_inputs: Sequence[Path] = ()) -> GraphSplit:
        args = self.args
        inputs = [p for p in [args.kg, *extra_inputs] if p is not None]
        write_manifest(args.out_dir, subcommand, self.config_echo(), [args.seed], inputs)
        split = split_edges(self._graph(), args.ratios, args.seed)
        write_split(split, args.out_dir)
        return split

    def run_split(self) -> int:
        split = self._split("split")
        print(colored_terminal_text(
            f"train={split.train.num_edges} valid={split.valid.num_edges} test={split.test.num_edges} "
            f"edges over {split.test.num_vertices} vertices -> {self.args.out_dir}", GREEN))
        return 0

    def run_sample(self) -> int:
        args = self.args
        cfg = SamplerConfig(
            types=load_query_types(args.types_file),
            count_per_type=args.count_per_type,
            max_info=args.max_info,
            seed=args.seed,
            grounding_cap=args.grounding_cap,
            max_retries=args.max_retries,
            require_held_out=not args.no_held_out,
            workers=args.workers,
            progress=not args.no_progress,
        )
        cfg.validate()
        split = self._split("sample", [args.types_file])
        _, stats = generate_dataset(split, cfg, args.out_dir)
        print(stats.to_tsv(), end="")
        return 0

    def _prove_input(self, g: KnowledgeGraph) -> Tuple[GroundedNode, Tuple[Edge, ...]]:
        args = self.args
        text = args.record.read_text(encoding="utf-8")
        if args.record.suffix == ".jsonl":
            lines = [line for line in text.splitlines() if line.strip()]
            if not 0 <= args.index < len(lines):
                raise RecordSchemaError("record", f"no record at index {args.index} in {args.record}")
            text = lines[args.index]
        record = read_json_text(text)
        if "answers" in record:
            instance = record_to_instance(record, g)
            return instance.query, instance.info_atomics
        if "query" not in record:
            raise RecordSchemaError("query", "missing")
        info = tuple(Edge(g.vertex_id(h), RelationType.parse(r), g.vertex_id(t))
                     for h, r, t in record.get("info_atomics", []))
        return parse_grounded(record["query"], g), info

    def run_prove(self) -> int:
        args = self.args
        g = load_graph(args.kg)
        query, info = self._prove_input(g)
        for line in prove_lines(g, query, info, args.grounding_cap, args.witness):
            print(line)
        return 0

    def _train_config(self, ablation: str) -> "TrainConfig":
        from src.train_eval import TrainConfig

        args = self.args
        return TrainConfig(dim=args.dim, lr=args.lr, batch=args.batch, epochs=args.epochs, seed=args.seed,
                           ablation=ablation, normalize_scores=args.normalize_scores,
                           memory_on_anchor=args.memory_on_anchor,
                           grid_search=getattr(args, "grid_search", False), progress=not args.no_progress)

    def _data_inputs(self) -> List[Path]:
        return sorted(p for p in self.args.data_dir.iterdir() if p.suffix in (".tsv", ".jsonl", ".txt"))

    def run_train(self) -> int:
        from src.checkpoint import save_checkpoint
        from src.train_eval import grid_search, train

        args = self.args
        cfg = self._train_config(args.ablation)
        cfg.validate()
        seeds = list(range(args.seed, args.seed + args.seeds))
        out_dir = args.out.parent
        write_manifest(out_dir, "train", self.config_echo(), seeds, self._data_inputs())
        benchmark = load_benchmark(args.data_dir)
        for seed in seeds:
            seed_cfg = replace(cfg, seed=seed)
            if args.grid_search:
                result, table = grid_search(benchmark, seed_cfg)
                for lr, batch, score in table:
                    logger.info("lr=%g batch=%d valid MRR=%.4f", lr, batch, score)
            else:
                result = train(benchmark, seed_cfg)
            path = args.out if args.seeds == 1 else args.out.with_name(f"{args.out.stem}.seed{seed}{args.out.suffix}")
            save_checkpoint(result.model, path, {"losses": result.losses, "lr": result.config.lr,
                                                 "batch": result.config.batch, "epochs": result.config.epochs})
            with open(path.with_suffix(".loss.tsv"), "w", encoding="utf-8") as f:
                f.write("epoch\tloss\n")
                f.writelines(f"{i + 1}\t{loss:.6f}\n" for i, loss in enumerate(result.losses))
            print(colored_terminal_text(
                f"seed {seed}: loss {result.losses[0]:.4f} -> {result.losses[-1]:.4f}, saved {path}", GREEN))
        return 0

    def run_eval(self) -> int:
        from src.checkpoint import load_checkpoint
        from src.train_eval import average_results, evaluate

        args = self.args
        report_dir = args.report.parent if args.report else args.data_dir
        write_manifest(report_dir, "eval", self.config_echo(), [], [*args.model, args.types_file, *self._data_inputs()])
        benchmark = load_benchmark(args.data_dir)
        types = load_query_types(args.types_file)[args.split]
        results = []
        for path in args.model:
            model = load_checkpoint(path, benchmark.split.test.num_vertices)
            results.append(evaluate(benchmark, model, args.split, types))
        result = average_results(results)
        print_table(result.to_tsv())
        if args.report:
            args.report.write_text(result.to_tsv(), encoding="utf-8")
        return 0

    def run_ablate(self) -> int:
        from src.train_eval import ablation_tsv, run_ablations

        args = self.args
        modes = [m.strip() for m in args.modes.split(",") if m.strip()]
        for mode in modes:
            self._train_config(mode).validate()
        seeds = list(range(args.seed, args.seed + args.seeds))
        report_dir = args.report.parent if args.report else args.data_dir
        write_manifest(report_dir, "ablate", self.config_echo(), seeds, self._data_inputs())
        benchmark = load_benchmark(args.data_dir)
        results = run_ablations(benchmark, self._train_config(ABLATION_MODES[0]), seeds, modes, args.split)
        table = ablation_tsv(results)
        print_table(table)
        if args.report:
            args.report.write_text(table, encoding="utf-8")
        return 0

    def run_demo(self) -> int:
        args = self.args
        g = load_graph(args.kg)
        info = load_graph(args.info, vocabulary=g.vocabulary).edges
        query = parse_grounded(read_json_file(args.query)["query"], g)
        print(colored_terminal_text(f"{len(answer_set(g, query))} candidate answers", BOLD))
        for line in prove_lines(g, query, info):
            print(line)
        return 0


def read_json_text(text: str) -> dict:
    try:
        record = json.loads(text)
    except json.JSONDecodeError as e:
        raise RecordSchemaError("record", f"invalid JSON: {e}") from None
    if not isinstance(record, dict):
        raise RecordSchemaError("record", "expected a JSON object")
    return record


def prove_lines(g: KnowledgeGraph, query: GroundedNode, info: Sequence[Edge],
                cap: int = DEFAULT_GROUNDING_CAP, witness: bool = False) -> List[str]:
    """One line per symbolic answer: valid answers first, then each contradiction family."""
    verdicts = [(a, check_answer(g, query, info, a, cap)) for a in sorted(answer_set(g, query))]
    verdicts.sort(key=lambda item: (_STATUS_ORDER.index(item[1].status), item[0]))
    lines = []
    for answer, verdict in verdicts:
        text = f"{g.text(answer)}: {verdict.status.value}"
        if verdict.possibly_incomplete:
            text += " (possibly incomplete)"
        lines.append(colored_terminal_text(text, _STATUS_COLORS[verdict.status]))
        if witness and verdict.witness is not None:
            constraints = derive_for_grounding(query, info, verdict.witness)
            names = {v.id: v.text for v in g.vertices}
            bindings = ", ".join(f"{var}={g.text(v)}" for var, v in sorted(verdict.witness.items()))
            occurs = solve_occurrence(constraints.occ)
            order = temporal_order(constraints.temp)
            lines.append(f"  grounding: {bindings}")
            lines.append("  occurs: " + ", ".join(f"{g.text(v)}={'T' if b else 'F'}" for v, b in sorted(occurs.items())))
            lines.append("  order: " + (" < ".join(" = ".join(names[v] for v in cls) for cls in order) or "none"))
            lines.append("  temporal: " + render_temporal(constraints.temp, names))
    return lines


def print_table(tsv: str) -> None:
    header, *rows = tsv.rstrip("\n").split("\n")
    print(colored_terminal_text(header, BLUE))
    for row in rows:
        print(row)


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser, commands = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    try:
        known, _ = pre.parse_known_args(argv)
        command = next((a for a in argv if a in commands), None)
        if known.config is not None and command is not None:
            apply_config_defaults(commands[command], known.config)
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 2
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 2
    except (CEQAError, OSError) as e:
        print(colored_terminal_text(f"error: {e}", RED), file=sys.stderr)
        return 1

    configure_logging(logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO)
    pipeline = CEQAPipeline(args)
    try:
        return getattr(pipeline, f"run_{args.command}")()
    except (CEQAError, OSError) as e:
        print(colored_terminal_text(f"error: {e}", RED), file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
