"""Versioned, bit-exact parameter checkpoints.

The file is a JSON document; every float is stored as a hexadecimal float
string (``float.hex``) so a save/load round trip is bitwise exact.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig
from .matcher import GraphMatchingModel, MatcherConfig
from .tensor import Tensor

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(eq=False)
class Checkpoint:
    params: dict[str, np.ndarray]
    encoder: EncoderConfig
    matcher: MatcherConfig
    metadata: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model: GraphMatchingModel, extra: dict[str, Tensor] | None = None, **metadata):
        params = {k: v.data.copy() for k, v in model.params.items()}
        for k, v in (extra or {}).items():
            params[k] = v.data.copy()
        return cls(params, model.encoder, model.matcher, dict(metadata))

    def encoder_params(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if k.startswith("encoder.")}

    def to_model(self) -> GraphMatchingModel:
        params = {
            k: Tensor(v.copy(), requires_grad=True)
            for k, v in self.params.items()
            if k.startswith(("encoder.", "matcher."))
        }
        return GraphMatchingModel(self.encoder, self.matcher, params)

    def same_as(self, other: "Checkpoint") -> bool:
        if self.params.keys() != other.params.keys():
            return False
        for k, v in self.params.items():
            w = other.params[k]
            if v.shape != w.shape or not np.array_equal(v.view(np.int64), w.view(np.int64)):
                return False
        return (
            self.encoder == other.encoder
            and self.matcher == other.matcher
            and self.metadata == other.metadata
            and self.version == other.version
        )


def _encode_array(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "values": [float(v).hex() for v in a.reshape(-1).tolist()]}


def _decode_array(d: dict) -> np.ndarray:
    shape = tuple(int(s) for s in d["shape"])
    values = np.array([float.fromhex(v) for v in d["values"]], dtype=np.float64)
    if values.size != int(np.prod(shape)):
        raise CheckpointError(f"value count {values.size} does not match shape {shape}")
    return values.reshape(shape)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    doc = {
        "format": "gmpt-checkpoint",
        "version": ckpt.version,
        "encoder": asdict(ckpt.encoder),
        "matcher": asdict(ckpt.matcher),
        "metadata": ckpt.metadata,
        "params": {k: _encode_array(v) for k, v in sorted(ckpt.params.items())},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: parse error: {e}") from None
    if not isinstance(doc, dict) or doc.get("format") != "gmpt-checkpoint":
        raise CheckpointError(f"{path}: not a checkpoint file")
    if doc.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    try:
        params = {k: _decode_array(v) for k, v in doc["params"].items()}
        return Checkpoint(
            params=params,
            encoder=EncoderConfig(**doc["encoder"]),
            matcher=MatcherConfig(**doc["matcher"]),
            metadata=doc.get("metadata", {}),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: malformed checkpoint: {e}") from None
