"""Memory-enhanced query encoder over a GQE-style backbone.

Projection is a per-relation affine map plus the relation embedding, intersection is a
DeepSets mean, and after every operator the query state reads a key-value memory built
from the query's informational atomics: keys are head embeddings, values are relation
plus tail embeddings, and the relevance-weighted readout enters residually through a
feed-forward layer whose output map starts at zero.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from src.errors import TapeError
from src.kg_store import NUM_RELATIONS, RelationType
from src.query_lang import Anchor, GroundedNode, InformationalAtomic, Proj, count_nodes

BACKBONE = "gqe"


class Ablation(Enum):
    NONE = "none"
    NO_FFN = "no_ffn"
    RANDOM_CONSTRAINTS = "random_constraints"
    NO_MEMORY = "no_memory"


@dataclass(frozen=True)
class MemoryBank:
    keys: torch.Tensor
    values: torch.Tensor

    @property
    def size(self) -> int:
        return int(self.keys.shape[0])


@dataclass(frozen=True)
class MemoryReadout:
    scores: torch.Tensor
    aggregate: torch.Tensor
    delta: torch.Tensor


class GradientTape:
    """Operator cost log plus the scalar loss whose gradients `backward` returns once."""

    def __init__(self):
        self.entries: List[Tuple[str, int]] = []
        self._loss: Optional[torch.Tensor] = None
        self._consumed = False

    def record(self, op: str, cost: int) -> None:
        self.entries.append((op, cost))

    @property
    def cost(self) -> int:
        return sum(cost for _, cost in self.entries)

    def watch_loss(self, loss: torch.Tensor) -> None:
        if loss.dim() != 0:
            raise TapeError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
        self._loss = loss
        self._consumed = False

    def backward(self, model: "MEQEModel") -> Dict[str, torch.Tensor]:
        if self._loss is None:
            raise TapeError("no loss recorded on this tape")
        if self._consumed:
            raise TapeError("tape already consumed; record a new loss first")
        named = list(model.named_parameters())
        grads = torch.autograd.grad(self._loss, [p for _, p in named], allow_unused=True)
        self._consumed = True
        return {name: g if g is not None else torch.zeros_like(p)
                for (name, p), g in zip(named, grads)}


def _record(tape: Optional[GradientTape], op: str, cost: int) -> None:
    if tape is not None:
        tape.record(op, cost)


class MEQEModel(nn.Module):

    def __init__(self, num_vertices: int, dim: int, seed: int = 0,
                 normalize_scores: bool = False, memory_on_anchor: bool = False,
                 ablation: Ablation = Ablation.NONE):
        super().__init__()
        if dim < 1 or num_vertices < 1:
            raise ValueError(f"need dim >= 1 and at least one vertex, got dim={dim}, |V|={num_vertices}")
        self.num_vertices = num_vertices
        self.dim = dim
        self.seed = seed
        self.normalize_scores = normalize_scores
        self.memory_on_anchor = memory_on_anchor
        self.ablation = Ablation(ablation)

        generator = torch.Generator().manual_seed(seed)
        bound = 1.0 / math.sqrt(dim)

        def uniform(*shape: int) -> nn.Parameter:
            values = torch.rand(*shape, generator=generator, dtype=torch.float64) * (2 * bound) - bound
            return nn.Parameter(values)

        d, r = dim, NUM_RELATIONS
        self.entity = uniform(num_vertices, d)
        self.relation = uniform(r, d)
        self.proj_weight = uniform(r, d, d)
        self.proj_bias = uniform(r, d)
        self.inter_in_weight = uniform(d, d)
        self.inter_in_bias = uniform(d)
        self.inter_out_weight = uniform(d, d)
        self.inter_out_bias = uniform(d)
        self.ffn_hidden_weight = uniform(d, d)
        self.ffn_hidden_bias = uniform(d)
        self.ffn_out_weight = nn.Parameter(torch.zeros(d, d, dtype=torch.float64))
        self.ffn_out_bias = nn.Parameter(torch.zeros(d, dtype=torch.float64))

    @property
    def flags(self) -> Dict[str, object]:
        return {
            "normalize_scores": self.normalize_scores,
            "memory_on_anchor": self.memory_on_anchor,
            "ablation": self.ablation.value,
        }

    def project(self, q: torch.Tensor, rel: RelationType, tape: Optional[GradientTape] = None) -> torch.Tensor:
        _record(tape, "project", self.dim * self.dim)
        r = int(rel)
        return self.proj_weight[r] @ q + self.proj_bias[r] + self.relation[r]

    def intersect(self, states: Sequence[torch.Tensor], tape: Optional[GradientTape] = None) -> torch.Tensor:
        if len(states) < 2:
            raise ValueError(f"intersection needs at least 2 inputs, got {len(states)}")
        _record(tape, "intersect", (len(states) + 1) * self.dim * self.dim)
        stacked = torch.stack(list(states))
        hidden = F.relu(stacked @ self.inter_in_weight.T + self.inter_in_bias)
        return self.inter_out_weight @ hidden.mean(dim=0) + self.inter_out_bias

    def memory_bank(self, info: Sequence[InformationalAtomic]) -> MemoryBank:
        if not info or self.ablation is Ablation.NO_MEMORY:
            empty = self.entity.new_zeros((0, self.dim))
            return MemoryBank(empty, empty)
        heads = torch.tensor([a.head for a in info], dtype=torch.long)
        rels = torch.tensor([int(a.rel) for a in info], dtype=torch.long)
        tails = torch.tensor([a.tail for a in info], dtype=torch.long)
        return MemoryBank(self.entity[heads], self.relation[rels] + self.entity[tails])

    def memory_read(self, q: torch.Tensor, bank: MemoryBank,
                    tape: Optional[GradientTape] = None) -> Tuple[torch.Tensor, MemoryReadout]:
        if bank.size == 0:
            zero = q.new_zeros(self.dim)
            return q, MemoryReadout(q.new_zeros(0), zero, zero)
        _record(tape, "memory_read", 3 * bank.size * self.dim + 2 * self.dim * self.dim)
        scores = bank.keys @ q
        if self.normalize_scores:
            scores = torch.softmax(scores, dim=0)
        aggregate = scores @ bank.values
        if self.ablation is Ablation.NO_FFN:
            delta = aggregate
        else:
            hidden = F.relu(self.ffn_hidden_weight @ aggregate + self.ffn_hidden_bias)
            delta = self.ffn_out_weight @ hidden + self.ffn_out_bias
        return q + delta, MemoryReadout(scores, aggregate, delta)

    def encode(self, query: GroundedNode, info: Sequence[InformationalAtomic] = (),
               tape: Optional[GradientTape] = None) -> torch.Tensor:
        bank = self.memory_bank(info)

        def visit(node: GroundedNode) -> torch.Tensor:
            if isinstance(node, Anchor):
                state = self.entity[node.vertex]
                if not self.memory_on_anchor:
                    return state
            elif isinstance(node, Proj):
                state = self.project(visit(node.child), node.rel, tape)
            else:
                state = self.intersect([visit(c) for c in node.children], tape)
            return self.memory_read(state, bank, tape)[0]

        return visit(query)

    def score_all(self, q: torch.Tensor) -> torch.Tensor:
        return self.entity @ q

    def loss(self, states: Sequence[torch.Tensor], answers: Sequence[int],
             tape: Optional[GradientTape] = None) -> torch.Tensor:
        """Mean negative log-probability of each answer under a softmax over all vertices."""
        if len(states) == 0:
            raise ValueError("loss needs at least one (state, answer) pair")
        logits = torch.stack(list(states)) @ self.entity.T
        target = torch.as_tensor(list(answers), dtype=torch.long)
        value = F.cross_entropy(logits, target)
        if tape is not None:
            tape.watch_loss(value)
        return value


def init_params(num_vertices: int, dim: int, seed: int, **flags) -> MEQEModel:
    return MEQEModel(num_vertices, dim, seed, **flags)


def softmax(scores: torch.Tensor) -> torch.Tensor:
    return torch.softmax(scores, dim=-1)


def encoding_cost_bound(query: GroundedNode, dim: int, memory_size: int) -> int:
    """Upper bound on recorded operator cost for one encode call."""
    nodes = count_nodes(query)
    return nodes * (4 * dim * dim + 3 * memory_size * dim)
