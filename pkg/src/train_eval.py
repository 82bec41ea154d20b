"""Training loop, filtered ranking metrics, evaluation tables and ablation runs."""
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from src.errors import ConfigError, TrainingError
from src.kg_store import KnowledgeGraph
from src.neural_meqe import Ablation, GradientTape, MEQEModel
from src.query_lang import SPLITS, InformationalAtomic, QueryInstance, serialize_query_type
from src.sampler import Benchmark, held_out_answers
from src.utils import get_logger

logger = get_logger("train_eval")

LR_GRID = (0.002, 0.001, 0.0005, 0.0002, 0.0001)
BATCH_GRID = (128, 256, 512)
ALL = "all"


@dataclass
class TrainConfig:
    dim: int = 64
    lr: float = 0.001
    batch: int = 128
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    ablation: str = Ablation.NONE.value
    normalize_scores: bool = False
    memory_on_anchor: bool = False
    grid_search: bool = False
    progress: bool = True

    def validate(self) -> None:
        if self.dim < 1 or self.batch < 1 or self.epochs < 1:
            raise ConfigError("dim, batch and epochs must be positive")
        if self.lr <= 0 or self.eps <= 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("invalid optimizer settings")
        try:
            Ablation(self.ablation)
        except ValueError:
            raise ConfigError(f"unknown ablation {self.ablation!r}") from None
        if self.grid_search and (self.lr not in LR_GRID or self.batch not in BATCH_GRID):
            raise ConfigError(f"lr must be in {LR_GRID} and batch in {BATCH_GRID} in grid-search mode")


@dataclass
class TrainResult:
    model: MEQEModel
    losses: List[float]
    config: TrainConfig


def randomize_info(info: Sequence[InformationalAtomic], g: KnowledgeGraph,
                   rng: np.random.Generator) -> Tuple[InformationalAtomic, ...]:
    """Same number of atomics, each a uniformly drawn edge of `g`."""
    if not info or g.num_edges == 0:
        return tuple(info)
    return tuple(g.edges[int(i)] for i in rng.integers(g.num_edges, size=len(info)))


def effective_info(instances: Sequence[QueryInstance], g: KnowledgeGraph, ablation: Ablation,
                   seed: int, split: str) -> List[Tuple[InformationalAtomic, ...]]:
    if ablation is not Ablation.RANDOM_CONSTRAINTS:
        return [q.info_atomics for q in instances]
    return [randomize_info(q.info_atomics, g, np.random.default_rng((seed, SPLITS.index(split), i)))
            for i, q in enumerate(instances)]


def train(benchmark: Benchmark, cfg: TrainConfig) -> TrainResult:
    """Adam over shuffled (query, valid answer) pairs of the train split."""
    cfg.validate()
    g = benchmark.split.train
    queries = benchmark.queries["train"]
    pairs = [(i, a) for i, q in enumerate(queries) for a in sorted(q.answers)]
    if not pairs:
        raise TrainingError("no training pairs in the train split")
    ablation = Ablation(cfg.ablation)
    infos = effective_info(queries, g, ablation, cfg.seed, "train")

    model = MEQEModel(g.num_vertices, cfg.dim, cfg.seed, normalize_scores=cfg.normalize_scores,
                      memory_on_anchor=cfg.memory_on_anchor, ablation=ablation)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    losses: List[float] = []

    for epoch in tqdm(range(cfg.epochs), desc="train", disable=not cfg.progress):
        order = rng.permutation(len(pairs))
        total = 0.0
        for start in range(0, len(order), cfg.batch):
            batch = [pairs[int(k)] for k in order[start:start + cfg.batch]]
            tape = GradientTape()
            encoded: Dict[int, torch.Tensor] = {}
            for i, _ in batch:
                if i not in encoded:
                    encoded[i] = model.encode(queries[i].query, infos[i], tape)
            value = model.loss([encoded[i] for i, _ in batch], [a for _, a in batch], tape)
            if not torch.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}", [int(k) for k in order[start:start + cfg.batch]])
            grads = tape.backward(model)
            optimizer.zero_grad()
            for name, p in model.named_parameters():
                p.grad = grads[name]
            optimizer.step()
            total += value.item() * len(batch)
        losses.append(total / len(pairs))
        logger.debug("epoch %d loss %.6f", epoch, losses[-1])
    logger.info("trained %d epochs on %d pairs: loss %.4f -> %.4f", cfg.epochs, len(pairs), losses[0], losses[-1])
    return TrainResult(model, losses, cfg)


def train_seeds(benchmark: Benchmark, cfg: TrainConfig, seeds: Iterable[int]) -> List[TrainResult]:
    return [train(benchmark, replace(cfg, seed=s)) for s in seeds]


def rank_targets(scores: np.ndarray, targets: Iterable[int], known: Iterable[int]) -> Dict[int, int]:
    """Filtered ranks with ties counted against the target.

    Only other known answers leave the candidate pool; everything else competes.
    """
    known = set(known)
    ranks = {}
    for v in sorted(targets):
        keep = np.ones(len(scores), dtype=bool)
        others = [u for u in known if u != v]
        keep[others] = False
        keep[v] = False
        pool = scores[keep]
        ranks[v] = 1 + int(np.count_nonzero(pool >= scores[v]))
    return ranks


def rank(q: QueryInstance, model: MEQEModel, known: Iterable[int], targets: Iterable[int],
         info: Optional[Sequence[InformationalAtomic]] = None) -> Dict[int, int]:
    with torch.no_grad():
        state = model.encode(q.query, q.info_atomics if info is None else info)
        scores = model.score_all(state).cpu().numpy()
    return rank_targets(scores, targets, known)


def hits_at_k(ranks: Sequence[int], k: int) -> float:
    return float(np.mean([1.0 if r <= k else 0.0 for r in ranks]))


def mrr(ranks: Sequence[int]) -> float:
    return float(np.mean([1.0 / r for r in ranks]))


@dataclass(frozen=True)
class EvalRow:
    family: str
    query_type: str
    n: int
    hit1: float
    hit3: float
    mrr: float

    def __post_init__(self):
        if self.n and not (0.0 <= self.hit1 <= self.hit3 <= 1.0 and self.hit1 <= self.mrr + 1e-12 <= 1.0 + 1e-12):
            raise TrainingError(f"metric bounds violated in {self}")


@dataclass
class EvalResult:
    rows: List[EvalRow] = field(default_factory=list)
    skipped: int = 0

    def row(self, family: str, query_type: str = ALL) -> EvalRow:
        for r in self.rows:
            if r.family == family and r.query_type == query_type:
                return r
        raise KeyError((family, query_type))

    @property
    def overall(self) -> EvalRow:
        return self.row(ALL, ALL)

    def to_tsv(self) -> str:
        lines = ["family\ttype\tn\thit1\thit3\tmrr"]
        lines += [f"{r.family}\t{r.query_type}\t{r.n}\t{r.hit1:.4f}\t{r.hit3:.4f}\t{r.mrr:.4f}" for r in self.rows]
        return "\n".join(lines) + "\n"


def _mean_row(family: str, query_type: str, metrics: Sequence[Tuple[float, float, float]], n: int) -> EvalRow:
    if not metrics:
        return EvalRow(family, query_type, n, 0.0, 0.0, 0.0)
    h1, h3, m = (float(np.mean(column)) for column in zip(*metrics))
    return EvalRow(family, query_type, n, h1, h3, m)


def evaluate(benchmark: Benchmark, model: MEQEModel, split: str = "test",
             types: Optional[Sequence[str]] = None) -> EvalResult:
    """Per-type and per-family Hit@1, Hit@3 and MRR on held-out answers.

    Type rows average per-query metrics, family rows average their type rows and the
    overall row averages the two families.
    """
    if split not in ("valid", "test"):
        raise ConfigError(f"evaluation split must be valid or test, got {split!r}")
    graph, smaller = benchmark.split.graph(split), benchmark.split.smaller(split)
    queries = benchmark.queries[split]
    infos = effective_info(queries, graph, model.ablation, model.seed, split)

    per_type: Dict[Tuple[str, str], List[Tuple[float, float, float]]] = OrderedDict()
    for family in ("occurrence", "temporal"):
        for t in types or []:
            per_type[(family, t)] = []
    skipped = 0
    for q, info in zip(queries, infos):
        targets = held_out_answers(q, smaller)
        if not targets:
            skipped += 1
            continue
        ranks = list(rank(q, model, q.answers, targets, info).values())
        key = (q.constraint_family.value, serialize_query_type(q.query_type))
        per_type.setdefault(key, []).append((hits_at_k(ranks, 1), hits_at_k(ranks, 3), mrr(ranks)))
    if skipped:
        logger.warning("%s: skipped %d queries without held-out answers", split, skipped)

    result = EvalResult(skipped=skipped)
    family_rows: List[EvalRow] = []
    for family in ("occurrence", "temporal"):
        rows = [_mean_row(family, t, metrics, len(metrics)) for (f, t), metrics in per_type.items() if f == family]
        result.rows.extend(rows)
        measured = [(r.hit1, r.hit3, r.mrr) for r in rows if r.n]
        family_row = _mean_row(family, ALL, measured, sum(r.n for r in rows))
        result.rows.append(family_row)
        if family_row.n:
            family_rows.append(family_row)
    result.rows.append(_mean_row(ALL, ALL, [(r.hit1, r.hit3, r.mrr) for r in family_rows],
                                 sum(r.n for r in family_rows)))
    return result


def average_results(results: Sequence[EvalResult]) -> EvalResult:
    """Row-wise mean over several models (seeds) evaluated on the same split."""
    if not results:
        raise ValueError("nothing to average")
    averaged = EvalResult(skipped=results[0].skipped)
    for template in results[0].rows:
        matching = [r.row(template.family, template.query_type) for r in results]
        averaged.rows.append(EvalRow(
            template.family, template.query_type, template.n,
            float(np.mean([r.hit1 for r in matching])),
            float(np.mean([r.hit3 for r in matching])),
            float(np.mean([r.mrr for r in matching])),
        ))
    return averaged


def grid_search(benchmark: Benchmark, cfg: TrainConfig, lr_grid: Sequence[float] = LR_GRID,
                batch_grid: Sequence[int] = BATCH_GRID) -> Tuple[TrainResult, List[Tuple[float, int, float]]]:
    """Train every (lr, batch) pair and keep the best validation MRR; earlier pairs win ties."""
    best: Optional[TrainResult] = None
    best_mrr = -1.0
    table = []
    for lr in lr_grid:
        for batch in batch_grid:
            result = train(benchmark, replace(cfg, lr=lr, batch=batch))
            score = evaluate(benchmark, result.model, "valid").overall.mrr
            table.append((lr, batch, score))
            logger.info("grid lr=%g batch=%d valid MRR %.4f", lr, batch, score)
            if score > best_mrr:
                best, best_mrr = result, score
    return best, table


def run_ablations(benchmark: Benchmark, cfg: TrainConfig, seeds: Sequence[int],
                  modes: Sequence[str] = tuple(a.value for a in Ablation),
                  split: str = "test") -> Mapping[str, EvalResult]:
    """Seed-averaged evaluation of every ablation mode under one training setup."""
    results: Dict[str, EvalResult] = OrderedDict()
    for mode in modes:
        trained = train_seeds(benchmark, replace(cfg, ablation=mode), seeds)
        results[mode] = average_results([evaluate(benchmark, t.model, split) for t in trained])
        logger.info("ablation %s: MRR %.4f", mode, results[mode].overall.mrr)
    return results


def ablation_tsv(results: Mapping[str, EvalResult]) -> str:
    lines = ["ablation\tfamily\ttype\tn\thit1\thit3\tmrr"]
    for mode, result in results.items():
        for r in result.rows:
            if r.query_type == ALL:
                lines.append(f"{mode}\t{r.family}\t{r.query_type}\t{r.n}\t{r.hit1:.4f}\t{r.hit3:.4f}\t{r.mrr:.4f}")
    return "\n".join(lines) + "\n"
