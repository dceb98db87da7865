"""Serialization of models, prototypes, and memory snapshots.

Everything rides on the section container from ``container.py`` with a JSON
"meta" section describing shapes and little-endian float64 blobs for the
numeric payloads, which makes round trips bit-exact.
"""

import json

import numpy as np

from .container import read_container, write_container
from .errors import CorruptFileError
from .geometry import SimplexPrototypes
from .memory import EpisodicMemory, MemoryEntry
from .network import FeatureExtractorState, ModelConfig

MODEL_MAGIC = b"MODLCKPT"
MODEL_VERSION = 1
PROTO_MAGIC = b"PROTOSET"
PROTO_VERSION = 1
MEMORY_MAGIC = b"MEMSNAPS"
MEMORY_VERSION = 1


def _array_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _array_from(payload: bytes, shape) -> np.ndarray:
    arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    arr.setflags(write=True)
    return arr


def save_model(state: FeatureExtractorState, path) -> None:
    cfg = state.config
    meta = {
        "config": {
            "input_dim": cfg.input_dim,
            "hidden_layers": list(cfg.hidden_layers),
            "feature_dim": cfg.feature_dim,
            "nonlinearity": cfg.nonlinearity,
            "seed": cfg.seed,
        },
        "step": state.step,
        "num_layers": len(state.weights),
        "weight_shapes": [list(w.shape) for w in state.weights],
        "bias_shapes": [list(b.shape) for b in state.biases],
    }
    sections = [("meta", json.dumps(meta, sort_keys=True).encode("utf-8"))]
    for i, w in enumerate(state.weights):
        sections.append((f"w{i}", _array_bytes(w)))
    for i, b in enumerate(state.biases):
        sections.append((f"b{i}", _array_bytes(b)))
    for i, v in enumerate(state.velocity_w):
        sections.append((f"vw{i}", _array_bytes(v)))
    for i, v in enumerate(state.velocity_b):
        sections.append((f"vb{i}", _array_bytes(v)))
    write_container(path, MODEL_MAGIC, MODEL_VERSION, sections)


def load_model(path) -> FeatureExtractorState:
    _, sections = read_container(path, MODEL_MAGIC, MODEL_VERSION)
    try:
        meta = json.loads(sections["meta"].decode("utf-8"))
        cfg = meta["config"]
        config = ModelConfig(
            input_dim=cfg["input_dim"],
            hidden_layers=tuple(cfg["hidden_layers"]),
            feature_dim=cfg["feature_dim"],
            nonlinearity=cfg["nonlinearity"],
            seed=cfg["seed"],
        )
        n = meta["num_layers"]
        weights = [_array_from(sections[f"w{i}"], meta["weight_shapes"][i]) for i in range(n)]
        biases = [_array_from(sections[f"b{i}"], meta["bias_shapes"][i]) for i in range(n)]
        vel_w = [_array_from(sections[f"vw{i}"], meta["weight_shapes"][i]) for i in range(n)]
        vel_b = [_array_from(sections[f"vb{i}"], meta["bias_shapes"][i]) for i in range(n)]
        step = int(meta["step"])
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptFileError(f"{path}: malformed model checkpoint ({exc})") from exc
    return FeatureExtractorState(config, weights, biases, vel_w, vel_b, step=step)


def save_prototypes(prototypes: SimplexPrototypes, path) -> None:
    meta = {
        "num_vertices": prototypes.num_vertices,
        "dim": prototypes.dim,
        "alpha": prototypes.alpha,
        "centered": prototypes.centered,
    }
    sections = [
        ("meta", json.dumps(meta, sort_keys=True).encode("utf-8")),
        ("vertices", _array_bytes(prototypes.vertices)),
    ]
    write_container(path, PROTO_MAGIC, PROTO_VERSION, sections)


def load_prototypes(path) -> SimplexPrototypes:
    _, sections = read_container(path, PROTO_MAGIC, PROTO_VERSION)
    try:
        meta = json.loads(sections["meta"].decode("utf-8"))
        vertices = _array_from(sections["vertices"], (meta["num_vertices"], meta["dim"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptFileError(f"{path}: malformed prototype file ({exc})") from exc
    vertices.setflags(write=False)
    return SimplexPrototypes(
        num_vertices=int(meta["num_vertices"]),
        dim=int(meta["dim"]),
        vertices=vertices,
        alpha=float(meta["alpha"]),
        centered=bool(meta["centered"]),
    )


def save_memory(memory: EpisodicMemory, path) -> None:
    meta = {
        "per_class_budget": memory.per_class_budget,
        "rng_seed": memory.rng_seed,
        "count": len(memory),
        "input_dim": int(memory.entries[0].input.shape[0]) if memory.entries else 0,
        "labels": [e.label for e in memory.entries],
        "source_tasks": [e.source_task for e in memory.entries],
        "sample_indices": [e.sample_index for e in memory.entries],
    }
    if memory.entries:
        inputs = np.stack([e.input for e in memory.entries])
    else:
        inputs = np.empty((0, 0), dtype=np.float64)
    sections = [
        ("meta", json.dumps(meta, sort_keys=True).encode("utf-8")),
        ("inputs", _array_bytes(inputs)),
    ]
    write_container(path, MEMORY_MAGIC, MEMORY_VERSION, sections)


def load_memory(path) -> EpisodicMemory:
    _, sections = read_container(path, MEMORY_MAGIC, MEMORY_VERSION)
    try:
        meta = json.loads(sections["meta"].decode("utf-8"))
        count = int(meta["count"])
        dim = int(meta["input_dim"])
        inputs = _array_from(sections["inputs"], (count, dim) if count else (0, 0))
        entries = tuple(
            MemoryEntry(
                input=inputs[i],
                label=int(meta["labels"][i]),
                source_task=int(meta["source_tasks"][i]),
                sample_index=int(meta["sample_indices"][i]),
            )
            for i in range(count)
        )
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        raise CorruptFileError(f"{path}: malformed memory snapshot ({exc})") from exc
    return EpisodicMemory(
        per_class_budget=int(meta["per_class_budget"]),
        rng_seed=int(meta["rng_seed"]),
        entries=entries,
    )
