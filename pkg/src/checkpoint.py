"""Model checkpoint files.

Layout: 8-byte magic, uint32 format version, uint32 header length, a UTF-8 JSON
header, then every parameter as a little-endian float64 block in header order.
"""
import json
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import torch

from src.errors import CheckpointError
from src.kg_store import NUM_RELATIONS
from src.neural_meqe import BACKBONE, Ablation, MEQEModel
from src.utils import get_logger

logger = get_logger("checkpoint")

MAGIC = b"CEQACKPT"
FORMAT_VERSION = 1
_U32 = np.dtype("<u4")
_F64 = np.dtype("<f8")


def save_checkpoint(model: MEQEModel, path: Path, extra: Optional[Dict[str, Any]] = None) -> None:
    named = list(model.named_parameters())
    header = {
        "version": FORMAT_VERSION,
        "backbone": BACKBONE,
        "dim": model.dim,
        "num_vertices": model.num_vertices,
        "num_relations": NUM_RELATIONS,
        "seed": model.seed,
        "flags": model.flags,
        "blocks": [{"name": name, "shape": list(p.shape)} for name, p in named],
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.array([FORMAT_VERSION, len(header_bytes)], dtype=_U32).tobytes())
        f.write(header_bytes)
        for _, p in named:
            f.write(p.detach().cpu().numpy().astype(_F64).tobytes())
    logger.info("saved checkpoint %s (dim=%d, |V|=%d)", path, model.dim, model.num_vertices)


def read_header(path: Path) -> Dict[str, Any]:
    return _read(path)[0]


def _read(path: Path):
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    offset = len(MAGIC)
    if len(data) < offset + 2 * _U32.itemsize:
        raise CheckpointError(f"{path}: truncated header")
    version, header_len = np.frombuffer(data, dtype=_U32, count=2, offset=offset)
    if int(version) != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {int(version)}")
    offset += 2 * _U32.itemsize
    try:
        header = json.loads(data[offset:offset + int(header_len)].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header ({e})") from None
    return header, data, offset + int(header_len)


def load_checkpoint(path: Path, num_vertices: Optional[int] = None) -> MEQEModel:
    """Rebuild a model; `num_vertices`, when given, must match the stored table."""
    header, data, offset = _read(path)
    if header.get("num_relations") != NUM_RELATIONS:
        raise CheckpointError(f"{path}: expected {NUM_RELATIONS} relations, found {header.get('num_relations')}")
    if header.get("backbone") != BACKBONE:
        raise CheckpointError(f"{path}: unknown backbone {header.get('backbone')!r}")
    if num_vertices is not None and header["num_vertices"] != num_vertices:
        raise CheckpointError(f"{path}: trained on {header['num_vertices']} vertices, graph has {num_vertices}")
    flags = header["flags"]
    model = MEQEModel(header["num_vertices"], header["dim"], header["seed"],
                      normalize_scores=flags["normalize_scores"],
                      memory_on_anchor=flags["memory_on_anchor"],
                      ablation=Ablation(flags["ablation"]))
    params = dict(model.named_parameters())
    blocks = header["blocks"]
    if [b["name"] for b in blocks] != list(params):
        raise CheckpointError(f"{path}: parameter blocks do not match the model layout")
    with torch.no_grad():
        for block in blocks:
            p = params[block["name"]]
            if list(p.shape) != block["shape"]:
                raise CheckpointError(f"{path}: {block['name']} has shape {block['shape']}, expected {list(p.shape)}")
            count = p.numel()
            if offset + count * _F64.itemsize > len(data):
                raise CheckpointError(f"{path}: truncated block {block['name']}")
            values = np.frombuffer(data, dtype=_F64, count=count, offset=offset).reshape(p.shape)
            p.copy_(torch.from_numpy(values.astype(np.float64)))
            offset += count * _F64.itemsize
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return model
