import math

import numpy as np
import pytest
import torch

from src.checkpoint import load_checkpoint, read_header, save_checkpoint
from src.errors import CheckpointError, TapeError
from src.kg_store import Edge, RelationType
from src.neural_meqe import (
    Ablation,
    GradientTape,
    MEQEModel,
    encoding_cost_bound,
    init_params,
    softmax,
)
from src.query_lang import Anchor, Inter, Proj, label_variables

QUERY = label_variables(Proj(
    RelationType.Reason,
    Inter((Proj(RelationType.Succession, Anchor(0)), Proj(RelationType.Precedence, Anchor(1)))),
))
INFO = (Edge(2, RelationType.ChosenAlternative, 3), Edge(0, RelationType.Precedence, 4))


def test_init_is_seeded():
    a, b, c = MEQEModel(10, 4, seed=1), MEQEModel(10, 4, seed=1), MEQEModel(10, 4, seed=2)
    for (name, pa), (_, pb), (_, pc) in zip(a.named_parameters(), b.named_parameters(), c.named_parameters()):
        assert torch.equal(pa, pb)
        if not name.startswith("ffn_out"):
            assert not torch.equal(pa, pc)
    bound = 1 / math.sqrt(4)
    assert a.entity.abs().max() <= bound
    assert all(p.dtype == torch.float64 for p in a.parameters())


def test_memory_output_starts_at_zero():
    model = init_params(10, 4, seed=0)
    assert torch.count_nonzero(model.ffn_out_weight) == 0
    assert torch.count_nonzero(model.ffn_out_bias) == 0
    with torch.no_grad():
        assert torch.allclose(model.encode(QUERY, INFO), model.encode(QUERY, ()))


def test_project_identity():
    model = MEQEModel(3, 4)
    r = int(RelationType.Result)
    with torch.no_grad():
        model.proj_weight[r] = torch.eye(4, dtype=torch.float64)
        model.proj_bias[r] = 0
        model.relation[r] = 0
    q = torch.tensor([1.0, -2.0, 0.5, 3.0], dtype=torch.float64)
    assert torch.allclose(model.project(q, RelationType.Result), q)


def test_intersect_ignores_operand_order():
    model = MEQEModel(5, 6, seed=4)
    states = [model.entity[i] for i in (0, 2, 4)]
    with torch.no_grad():
        forward = model.intersect(states)
        backward = model.intersect(states[::-1])
    assert (forward - backward).abs().max().item() <= 1e-12
    with pytest.raises(ValueError):
        model.intersect(states[:1])


def test_memory_read_arithmetic():
    model = MEQEModel(2, 2, ablation=Ablation.NO_FFN)
    with torch.no_grad():
        model.entity.copy_(torch.tensor([[2.0, 0.0], [0.0, 3.0]], dtype=torch.float64))
        model.relation.zero_()
    bank = model.memory_bank((Edge(0, RelationType.Precedence, 1),))
    q = torch.tensor([1.0, 0.0], dtype=torch.float64)
    with torch.no_grad():
        updated, readout = model.memory_read(q, bank)
    assert readout.scores.tolist() == [2.0]
    assert readout.aggregate.tolist() == [0.0, 6.0]
    assert updated.tolist() == [1.0, 6.0]


def test_empty_memory_is_identity():
    model = MEQEModel(5, 3, ablation=Ablation.NO_MEMORY)
    bank = model.memory_bank(INFO[:1])
    assert bank.size == 0
    q = model.entity[1]
    assert model.memory_read(q, bank)[0] is q


def test_normalized_scores_sum_to_one():
    model = MEQEModel(6, 4, seed=2, normalize_scores=True)
    bank = model.memory_bank(INFO)
    with torch.no_grad():
        _, readout = model.memory_read(model.entity[0], bank)
    assert readout.scores.sum().item() == pytest.approx(1.0)


def test_softmax_cases():
    assert softmax(torch.tensor([0.0, 0.0])).tolist() == [0.5, 0.5]
    big = softmax(torch.tensor([1000.0, 1000.0, -1000.0], dtype=torch.float64))
    assert torch.isfinite(big).all()
    assert big[:2].tolist() == pytest.approx([0.5, 0.5])


def test_uniform_scores_give_log_two():
    model = MEQEModel(2, 3)
    loss = model.loss([torch.zeros(3, dtype=torch.float64)], [1])
    assert loss.item() == pytest.approx(math.log(2))


def _loss(model):
    return model.loss([model.encode(QUERY, INFO)], [4])


@pytest.mark.parametrize("normalize_scores, memory_on_anchor", [(False, False), (True, True)])
def test_gradients_match_finite_differences(normalize_scores, memory_on_anchor):
    model = MEQEModel(6, 6, seed=11, normalize_scores=normalize_scores, memory_on_anchor=memory_on_anchor)
    with torch.no_grad():
        model.ffn_out_weight.uniform_(-0.3, 0.3, generator=torch.Generator().manual_seed(0))
        model.ffn_out_bias.uniform_(-0.3, 0.3, generator=torch.Generator().manual_seed(1))
    tape = GradientTape()
    model.loss([model.encode(QUERY, INFO, tape)], [4], tape)
    grads = tape.backward(model)
    params = dict(model.named_parameters())
    names = list(params)
    rng = np.random.default_rng(0)
    h = 1e-5
    for _ in range(100):
        name = names[int(rng.integers(len(names)))]
        p = params[name]
        index = tuple(int(rng.integers(n)) for n in p.shape)
        with torch.no_grad():
            original = p[index].item()
            p[index] = original + h
            up = _loss(model).item()
            p[index] = original - h
            down = _loss(model).item()
            p[index] = original
        numeric = (up - down) / (2 * h)
        assert grads[name][index].item() == pytest.approx(numeric, rel=1e-4, abs=1e-7), (name, index)


def test_tape_is_one_shot():
    model = MEQEModel(6, 3)
    tape = GradientTape()
    with pytest.raises(TapeError):
        tape.backward(model)
    model.loss([model.encode(QUERY, (), tape)], [1], tape)
    tape.backward(model)
    with pytest.raises(TapeError):
        tape.backward(model)
    with pytest.raises(TapeError):
        tape.watch_loss(torch.zeros(2))


def test_recorded_cost_is_bounded():
    model = MEQEModel(6, 5, memory_on_anchor=True)
    tape = GradientTape()
    with torch.no_grad():
        model.encode(QUERY, INFO, tape)
    assert 0 < tape.cost <= encoding_cost_bound(QUERY, 5, len(INFO))
    assert {op for op, _ in tape.entries} == {"project", "intersect", "memory_read"}


def test_checkpoint_round_trip(tmp_path):
    model = MEQEModel(6, 4, seed=3, normalize_scores=True, ablation=Ablation.NO_FFN)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path, extra={"epochs": 2})
    header = read_header(path)
    assert header["extra"] == {"epochs": 2}
    assert header["flags"]["ablation"] == "no_ffn"
    restored = load_checkpoint(path, num_vertices=6)
    assert restored.flags == model.flags
    for (_, a), (_, b) in zip(model.named_parameters(), restored.named_parameters()):
        assert torch.equal(a, b)


def test_checkpoint_rejects_bad_files(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(MEQEModel(6, 4), path)
    with pytest.raises(CheckpointError, match="vertices"):
        load_checkpoint(path, num_vertices=7)
    data = path.read_bytes()
    (tmp_path / "short.ckpt").write_bytes(data[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "short.ckpt")
    (tmp_path / "long.ckpt").write_bytes(data + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "long.ckpt")
    (tmp_path / "other.ckpt").write_bytes(b"not a model")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "other.ckpt")


def test_no_memory_ablation_ignores_info():
    model = MEQEModel(6, 4, seed=5, ablation=Ablation.NO_MEMORY, memory_on_anchor=True)
    with torch.no_grad():
        model.ffn_out_weight.fill_(0.5)
        assert torch.equal(model.encode(QUERY, INFO), model.encode(QUERY, ()))
