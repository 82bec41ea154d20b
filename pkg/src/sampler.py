"""Benchmark generation: sample grounded queries, attach informational atomics, prove and filter."""
import json
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from src.constraint_engine import VerdictStatus, check_answer
from src.errors import ConfigError, SamplingRetry
from src.kg_store import Edge, GraphSplit, KnowledgeGraph, load_split
from src.query_lang import (
    SPLITS,
    Anchor,
    ConstraintFamily,
    GroundedNode,
    InformationalAtomic,
    Inter,
    Proj,
    QueryInstance,
    QueryTypeNode,
    TypeE,
    TypeP,
    label_variables,
    parse_instance,
    parse_query_type,
    serialize_instance,
    serialize_query_type,
    stats,
)
from src.symbolic_exec import (
    DEFAULT_GROUNDING_CAP,
    GroundingSet,
    answer_groundings,
    chain_vertices,
    computational_atomics,
    enumerate_groundings,
)
from src.utils import get_logger

logger = get_logger("sampler")

MAX_INFO_ATOMICS = 3


@dataclass
class SamplerConfig:
    types: Dict[str, List[str]]
    count_per_type: int = 100
    max_info: int = MAX_INFO_ATOMICS
    seed: int = 0
    grounding_cap: int = DEFAULT_GROUNDING_CAP
    max_anchors: Dict[str, int] = field(default_factory=lambda: {"train": 2, "valid": 3, "test": 3})
    max_retries: int = 100
    require_held_out: bool = True
    workers: int = 1
    progress: bool = True

    def validate(self) -> None:
        if set(self.types) != set(SPLITS):
            raise ConfigError(f"query types needed for splits {SPLITS}, got {sorted(self.types)}")
        if self.count_per_type < 1:
            raise ConfigError("count_per_type must be positive")
        if not 0 <= self.max_info <= MAX_INFO_ATOMICS:
            raise ConfigError(f"max_info must be within 0..{MAX_INFO_ATOMICS}")
        if self.max_retries < 1 or self.workers < 1 or self.grounding_cap < 1:
            raise ConfigError("max_retries, workers and grounding_cap must be positive")
        for split in ("valid", "test"):
            missing = set(self.types["train"]) - set(self.types[split])
            if missing:
                raise ConfigError(f"train types missing from {split}: {sorted(missing)}")
        for split, names in self.types.items():
            for name in names:
                n_anchors, _ = stats(parse_query_type(name))
                if n_anchors > self.max_anchors[split]:
                    raise ConfigError(f"{name} has {n_anchors} anchors, more than {split} allows")


def load_query_types(path: Path) -> Dict[str, List[str]]:
    with open(path, "r", encoding="utf-8") as f:
        types = json.load(f)
    if not isinstance(types, dict):
        raise ConfigError(f"{path}: expected an object keyed by split")
    # canonical spelling, so type strings compare equal across files
    return {split: [serialize_query_type(parse_query_type(t)) for t in names]
            for split, names in types.items()}


@dataclass(frozen=True)
class Labels:
    answers: frozenset
    contradictory: frozenset
    family: ConstraintFamily


@dataclass(frozen=True)
class Discard:
    reason: str


@dataclass(frozen=True)
class StatsRow:
    split: str
    family: str
    query_type: str
    queries: int
    mean_answers: float
    mean_contradictory: float


@dataclass
class DatasetStats:
    rows: List[StatsRow] = field(default_factory=list)

    def add(self, split: str, query_type: str, instances: Sequence[QueryInstance]) -> None:
        for family in ConstraintFamily:
            kept = [q for q in instances if q.constraint_family is family]
            if not kept:
                self.rows.append(StatsRow(split, family.value, query_type, 0, 0.0, 0.0))
                continue
            self.rows.append(StatsRow(
                split, family.value, query_type, len(kept),
                sum(len(q.answers) for q in kept) / len(kept),
                sum(len(q.contradictory_answers) for q in kept) / len(kept),
            ))

    def to_tsv(self) -> str:
        lines = ["split\tfamily\ttype\tqueries\tanswers\tcontradictory_answers"]
        for row in self.rows:
            lines.append(f"{row.split}\t{row.family}\t{row.query_type}\t{row.queries}\t"
                         f"{row.mean_answers:.2f}\t{row.mean_contradictory:.2f}")
        return "\n".join(lines) + "\n"


def _descend(g: KnowledgeGraph, t: QueryTypeNode, v: int, rng: np.random.Generator) -> GroundedNode:
    if isinstance(t, TypeE):
        return Anchor(v)
    if isinstance(t, TypeP):
        pool = g.in_edges(v)
        if not pool:
            raise SamplingRetry(f"vertex {v} has no incoming edge")
        head, rel = pool[int(rng.integers(len(pool)))]
        return Proj(rel, _descend(g, t.child, head, rng))
    children = tuple(_descend(g, c, v, rng) for c in t.children)
    if len(set(children)) < len(children):
        raise SamplingRetry("identical intersection branches")
    return Inter(children)


def sample_query(g: KnowledgeGraph, t: QueryTypeNode, v: int, rng: np.random.Generator) -> GroundedNode:
    """Ground a query type backwards from `v` by walking sampled incoming edges.

    Raises SamplingRetry on a dead end; `v` is always an answer of the result.
    """
    g.text(v)
    return label_variables(_descend(g, t, v, rng))


def edge_key(e: Edge) -> Tuple[int, int, int]:
    return e.head, int(e.rel), e.tail


def info_candidates(g: KnowledgeGraph, q: GroundedNode, seed_answer: int,
                    cap: int = DEFAULT_GROUNDING_CAP,
                    groundings: Optional[GroundingSet] = None) -> List[Edge]:
    """Graph edges touching the seed answer's reasoning chain, minus the chain's own edges."""
    if groundings is None:
        groundings = enumerate_groundings(g, q, seed_answer, cap)
    used = {e for grounding in groundings for e in computational_atomics(q, grounding)}
    pool = set()
    for x in chain_vertices(groundings, q):
        pool.update(Edge(x, rel, tail) for rel, tail in g.out_edges(x))
        pool.update(Edge(head, rel, x) for head, rel in g.in_edges(x))
    return sorted(pool - used, key=edge_key)


def attach_info_atomics(g: KnowledgeGraph, q: GroundedNode, seed_answer: int, k: int,
                        rng: np.random.Generator,
                        cap: int = DEFAULT_GROUNDING_CAP,
                        groundings: Optional[GroundingSet] = None) -> Tuple[InformationalAtomic, ...]:
    if k <= 0:
        return ()
    pool = info_candidates(g, q, seed_answer, cap, groundings)
    if not pool:
        return ()
    picked = rng.choice(len(pool), size=min(k, len(pool)), replace=False)
    return tuple(pool[int(i)] for i in picked)


def label_query(kg: KnowledgeGraph, q: GroundedNode, info: Sequence[InformationalAtomic],
                cap: int = DEFAULT_GROUNDING_CAP,
                groundings: Optional[Mapping[int, GroundingSet]] = None) -> Union[Labels, Discard]:
    """Prove every symbolic answer; `groundings` is `answer_groundings(kg, q, cap)` when already known."""
    if groundings is None:
        groundings = answer_groundings(kg, q, cap)
    answers, contradictory, statuses = set(), set(), set()
    for a in sorted(groundings):
        verdict = check_answer(kg, q, info, a, cap, groundings=groundings[a])
        if verdict.possibly_incomplete:
            return Discard("possibly incomplete grounding set")
        if verdict.is_valid:
            answers.add(a)
        else:
            contradictory.add(a)
            statuses.add(verdict.status)
    if not contradictory:
        return Discard("no contradictory answers")
    if not answers:
        return Discard("every answer is contradictory")
    if len(statuses) > 1:
        return Discard("mixed constraint families")
    family = (ConstraintFamily.OCCURRENCE if statuses == {VerdictStatus.OCCURRENCE_CONTRADICTION}
              else ConstraintFamily.TEMPORAL)
    return Labels(frozenset(answers), frozenset(contradictory), family)


def held_out_answers(instance: QueryInstance, smaller: Optional[KnowledgeGraph],
                     cap: int = DEFAULT_GROUNDING_CAP) -> frozenset:
    """Valid answers that are not also valid on the next-smaller graph.

    An answer the smaller graph reaches only through contradictory groundings still counts.
    """
    if smaller is None:
        return instance.answers
    valid_before = {a for a, gs in answer_groundings(smaller, instance.query, cap).items()
                    if check_answer(smaller, instance.query, instance.info_atomics, a, cap,
                                    groundings=gs).is_valid}
    return instance.answers - valid_before


@dataclass(frozen=True)
class _Job:
    graph: KnowledgeGraph
    smaller: Optional[KnowledgeGraph]
    split: str
    query_type: str
    count: int
    entropy: Tuple[int, ...]
    cfg: SamplerConfig
    show_progress: bool


def _sample_type(job: _Job) -> List[QueryInstance]:
    g, cfg = job.graph, job.cfg
    rng = np.random.default_rng(np.random.SeedSequence(job.entropy))
    t = parse_query_type(job.query_type)
    kept: List[QueryInstance] = []
    seen = set()
    budget = job.count * cfg.max_retries
    with tqdm(total=job.count, desc=f"{job.split} {job.query_type}", leave=False,
              disable=not job.show_progress) as bar:
        for _ in range(budget):
            if len(kept) >= job.count:
                break
            v = int(rng.integers(g.num_vertices))
            try:
                q = sample_query(g, t, v, rng)
            except SamplingRetry:
                continue
            k = int(rng.integers(1, cfg.max_info + 1)) if cfg.max_info else 0
            groundings = answer_groundings(g, q, cfg.grounding_cap)
            # one answer can never be split into valid and contradictory
            if len(groundings) < 2:
                continue
            info = attach_info_atomics(g, q, v, k, rng, cfg.grounding_cap, groundings[v])
            key = (q, tuple(sorted(info, key=edge_key)))
            if key in seen:
                continue
            labels = label_query(g, q, info, cfg.grounding_cap, groundings)
            if isinstance(labels, Discard):
                continue
            instance = QueryInstance(q, info, labels.answers, labels.contradictory, labels.family, job.split)
            if (cfg.require_held_out and job.smaller is not None
                    and not held_out_answers(instance, job.smaller, cfg.grounding_cap)):
                continue
            seen.add(key)
            kept.append(instance)
            bar.update(1)
    return kept


def _worker_counts(count: int, workers: int) -> List[int]:
    return [count // workers + (1 if w < count % workers else 0) for w in range(workers)]


def sample_split(split: GraphSplit, split_name: str, cfg: SamplerConfig) -> Dict[str, List[QueryInstance]]:
    """Queries per type for one split, labeled on that split's graph."""
    graph, smaller = split.graph(split_name), split.smaller(split_name)
    split_index = SPLITS.index(split_name)
    jobs = []
    for type_index, query_type in enumerate(cfg.types[split_name]):
        for worker, count in enumerate(_worker_counts(cfg.count_per_type, cfg.workers)):
            if count:
                jobs.append(_Job(graph, smaller, split_name, query_type, count,
                                 (cfg.seed, split_index, type_index, worker), cfg,
                                 cfg.progress and cfg.workers == 1))
    if cfg.workers > 1:
        with Pool(cfg.workers) as pool:
            results = pool.map(_sample_type, jobs)
    else:
        results = [_sample_type(job) for job in jobs]

    by_type: Dict[str, List[QueryInstance]] = {t: [] for t in cfg.types[split_name]}
    seen: Dict[str, set] = {t: set() for t in cfg.types[split_name]}
    for job, instances in zip(jobs, results):
        for instance in instances:
            key = (instance.query, tuple(sorted(instance.info_atomics, key=edge_key)))
            if key not in seen[job.query_type]:
                seen[job.query_type].add(key)
                by_type[job.query_type].append(instance)
    for query_type, instances in by_type.items():
        if len(instances) < cfg.count_per_type:
            logger.warning("%s %s: kept %d of %d queries after the retry budget",
                           split_name, query_type, len(instances), cfg.count_per_type)
    return by_type


def generate_dataset(split: GraphSplit, cfg: SamplerConfig,
                     out_dir: Path) -> Tuple[List[Path], DatasetStats]:
    """Write `train.jsonl`, `valid.jsonl`, `test.jsonl` and `stats.tsv` under `out_dir`."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset_stats = DatasetStats()
    paths = []
    for split_name in SPLITS:
        by_type = sample_split(split, split_name, cfg)
        graph = split.graph(split_name)
        path = out_dir / f"{split_name}.jsonl"
        with open(path, "w", encoding="utf-8") as f:
            for query_type, instances in by_type.items():
                dataset_stats.add(split_name, query_type, instances)
                for instance in instances:
                    f.write(serialize_instance(instance, graph) + "\n")
        total = sum(len(v) for v in by_type.values())
        logger.info("%s: %d queries over %d types", split_name, total, len(by_type))
        paths.append(path)
    stats_path = out_dir / "stats.tsv"
    with open(stats_path, "w", encoding="utf-8") as f:
        f.write(dataset_stats.to_tsv())
    paths.append(stats_path)
    return paths, dataset_stats


@dataclass(frozen=True)
class Benchmark:
    split: GraphSplit
    queries: Dict[str, List[QueryInstance]]


def read_instances(path: Path, g: KnowledgeGraph) -> List[QueryInstance]:
    instances = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                instances.append(parse_instance(line, g))
    return instances


def load_benchmark(data_dir: Path) -> Benchmark:
    """Graphs and query files of a `sample` output directory."""
    data_dir = Path(data_dir)
    split = load_split(data_dir)
    queries = {}
    for split_name in SPLITS:
        path = data_dir / f"{split_name}.jsonl"
        queries[split_name] = read_instances(path, split.graph(split_name)) if path.exists() else []
    logger.info("loaded benchmark %s: %s", data_dir,
                ", ".join(f"{k}={len(v)}" for k, v in queries.items()))
    return Benchmark(split, queries)
