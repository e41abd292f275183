"""Versioned checkpoint directories with bit-exact round-tripping.

Layout: ``metadata.json`` (schema version, config snapshot, step counter,
RNG state, parameter manifest) plus ``params.bin`` holding every tensor's
raw little-endian bytes in manifest order, and optionally ``vocab.json``.
Saving what ``load_checkpoint`` returned reproduces both files byte for
byte.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
import torch

from .corpus.vocab import Vocabulary

SCHEMA_VERSION = 1

_DTYPES = {
    "float32": np.float32,
    "float64": np.float64,
    "int64": np.int64,
    "uint8": np.uint8,
}


@dataclass
class Checkpoint:
    state: dict[str, torch.Tensor]
    config: dict
    step: int
    rng_state: bytes
    vocab: Optional[Vocabulary] = None


def save_checkpoint(
    directory: str | Path,
    state: Mapping[str, torch.Tensor],
    config: dict,
    step: int,
    rng_state: Optional[bytes] = None,
    vocab: Optional[Vocabulary] = None,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if rng_state is None:
        rng_state = bytes(torch.get_rng_state().numpy().tobytes())

    manifest = []
    blob = bytearray()
    for name, tensor in state.items():
        array = tensor.detach().cpu().numpy()
        dtype = str(array.dtype)
        if dtype not in _DTYPES:
            raise ValueError(f"unsupported checkpoint dtype {dtype} for '{name}'")
        manifest.append({"name": name, "shape": list(array.shape), "dtype": dtype})
        blob.extend(np.ascontiguousarray(array).tobytes())

    metadata = {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "step": step,
        "rng_state": rng_state.hex(),
        "params": manifest,
    }
    (directory / "metadata.json").write_text(
        json.dumps(metadata, sort_keys=True, separators=(",", ":")), encoding="utf-8"
    )
    (directory / "params.bin").write_bytes(bytes(blob))
    if vocab is not None:
        vocab.save(directory / "vocab.json")
    return directory


def load_checkpoint(directory: str | Path) -> Checkpoint:
    directory = Path(directory)
    metadata = json.loads((directory / "metadata.json").read_text(encoding="utf-8"))
    if metadata.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"checkpoint schema {metadata.get('schema_version')} != supported {SCHEMA_VERSION}"
        )
    raw = (directory / "params.bin").read_bytes()
    state: dict[str, torch.Tensor] = {}
    cursor = 0
    for entry in metadata["params"]:
        dtype = _DTYPES[entry["dtype"]]
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * np.dtype(dtype).itemsize
        array = np.frombuffer(raw, dtype=dtype, count=count, offset=cursor)
        state[entry["name"]] = torch.from_numpy(array.copy()).reshape(entry["shape"])
        cursor += nbytes
    if cursor != len(raw):
        raise ValueError("params.bin length does not match the manifest")

    vocab_path = directory / "vocab.json"
    vocab = Vocabulary.load(vocab_path) if vocab_path.exists() else None
    return Checkpoint(
        state=state,
        config=metadata["config"],
        step=metadata["step"],
        rng_state=bytes.fromhex(metadata["rng_state"]),
        vocab=vocab,
    )


def restore_model(model: torch.nn.Module, checkpoint: Checkpoint) -> None:
    target_dtypes = {k: v.dtype for k, v in model.state_dict().items()}
    state = {k: v.to(target_dtypes[k]) for k, v in checkpoint.state.items()}
    model.load_state_dict(state)
