#!/usr/bin/env python3

import json
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import jsonschema

sys.path.insert(0, str(Path(__file__).resolve().parent))

from src.errors import CEQAError
from src.kg_store import GraphSplit, load_split
from src.query_lang import RECORD_SCHEMA_PATH, SPLITS, record_to_instance, record_validator
from src.sampler import Labels, held_out_answers, label_query
from src.symbolic_exec import answer_set
from src.utils import BLUE, GREEN, RED, YELLOW, colored_terminal_text


def print_schema_load_error(e, schema_path):
    print(colored_terminal_text(f"Schema file error: {e} ({schema_path})", RED))
    sys.exit(1)


def load_validator() -> jsonschema.Draft7Validator:
    try:
        return record_validator()
    except FileNotFoundError:
        print_schema_load_error("not found", RECORD_SCHEMA_PATH)
    except json.JSONDecodeError as e:
        print_schema_load_error(f"invalid JSON: {e}", RECORD_SCHEMA_PATH)


def schema_errors(record: dict, validator: jsonschema.Draft7Validator) -> List[str]:
    return [f"{e.message} (path: {' -> '.join(str(p) for p in e.path) or 'record'})"
            for e in validator.iter_errors(record)]


def semantic_errors(record: dict, split_name: str, split: GraphSplit, reprove: bool) -> List[str]:
    """Checks that need the graphs: answer partition, held-out answers and, optionally, the labels."""
    graph = split.graph(split_name)
    try:
        instance = record_to_instance(record, graph)
    except CEQAError as e:
        return [str(e)]
    errors = []
    if instance.split != split_name:
        errors.append(f"split field {instance.split!r} in {split_name}.jsonl")
    if instance.answers | instance.contradictory_answers != answer_set(graph, instance.query):
        errors.append("answers and contradictory_answers do not cover the symbolic answer set")
    if split.smaller(split_name) is not None and not held_out_answers(instance, split.smaller(split_name)):
        print(colored_terminal_text("    Warning: no held-out answer", YELLOW))
    if reprove:
        labels = label_query(graph, instance.query, instance.info_atomics)
        expected = (instance.answers, instance.contradictory_answers, instance.constraint_family)
        if not isinstance(labels, Labels) or (labels.answers, labels.contradictory, labels.family) != expected:
            errors.append("stored labels differ from a fresh proof")
    return errors


def validate_dataset_file(path: Path, validator: jsonschema.Draft7Validator,
                          split: Optional[GraphSplit], reprove: bool) -> Tuple[int, int]:
    split_name = path.stem if path.stem in SPLITS else None
    valid = total = 0
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            total += 1
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                print(colored_terminal_text(f"  line {line_no}: invalid JSON: {e}", RED))
                continue
            errors = schema_errors(record, validator)
            if not errors and split is not None and split_name is not None:
                errors = semantic_errors(record, split_name, split, reprove)
            for error in errors:
                print(colored_terminal_text(f"  line {line_no}: {error}", RED))
            valid += not errors
    return valid, total


def print_summary(valid_records, total_records):
    print("\n" + "=" * 40)
    print(colored_terminal_text("Validation Summary:", BLUE))
    color = GREEN if valid_records == total_records else YELLOW
    print(f"   Valid records: {colored_terminal_text(f'{valid_records}/{total_records}', color)}")
    if valid_records == total_records:
        print(colored_terminal_text("   All records passed validation!", GREEN))
    else:
        print(colored_terminal_text(f"   {total_records - valid_records} record(s) failed validation", YELLOW))


def main(argv: Optional[List[str]] = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    reprove = "--reprove" in args
    args = [a for a in args if a != "--reprove"]
    print(colored_terminal_text("Benchmark Record Validator", BLUE))
    print("=" * 40)
    validator = load_validator()

    data_dir = Path(args[0]) if args else Path(__file__).parent / "output"
    files = sorted(data_dir.glob("*.jsonl")) if data_dir.is_dir() else [data_dir]
    files = [p for p in files if p.exists()]
    if not files:
        print(colored_terminal_text(f"No dataset files found in {data_dir}", RED))
        return 1
    graph_dir = files[0].parent
    split = load_split(graph_dir) if (graph_dir / "vertices.txt").exists() else None
    if split is None:
        print(colored_terminal_text("  No graphs next to the data, running schema checks only", YELLOW))

    valid_records = total_records = 0
    for path in files:
        print(f"\n{colored_terminal_text('Validating:', BLUE)} {path.name}")
        valid, total = validate_dataset_file(path, validator, split, reprove)
        valid_records += valid
        total_records += total
    print_summary(valid_records, total_records)
    return 0 if valid_records == total_records else 1


if __name__ == "__main__":
    sys.exit(main())
