"""
Checkpoint files for trained encoders.

Layout: magic ``BPIN``, u32 little-endian version, u64 little-endian manifest
length, UTF-8 JSON manifest, then the tensors as little-endian float32 in
manifest order. Manifest byte ranges tile the payload exactly.
"""

import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from agents.bert_pin.encoder import ModelConfig, ModelParams, validate_params
from agents.bert_pin.trainer import TrainConfig
from core_numerics.errors import ConfigError, DataError
from core_numerics.tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"BPIN"
VERSION = 1
HEADER = struct.Struct("<4sIQ")
PAYLOAD_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    params: ModelParams
    model_config: ModelConfig
    train_config: Optional[TrainConfig]
    step: int
    rng_digest: str
    config_digest: str
    manifest: Dict[str, object]


def rng_digest(rng: np.random.Generator) -> str:
    """SHA-256 of the generator state, for reproducibility checks."""
    state = json.dumps(rng.bit_generator.state, sort_keys=True, default=str)
    return hashlib.sha256(state.encode("utf-8")).hexdigest()


def save_checkpoint(
    params: ModelParams,
    model_config: ModelConfig,
    path: Union[str, Path],
    train_config: Optional[TrainConfig] = None,
    step: int = 0,
    rng: Optional[np.random.Generator] = None,
    config_digest: str = "",
) -> Path:
    validate_params(params, model_config)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    registry = []
    chunks = []
    offset = 0
    for name, tensor in params.items():
        raw = np.ascontiguousarray(tensor.data, dtype=PAYLOAD_DTYPE).tobytes()
        registry.append({
            "name": name,
            "shape": list(tensor.shape),
            "dtype": "float32",
            "offset": offset,
            "nbytes": len(raw),
            "frozen": name in params.frozen,
        })
        chunks.append(raw)
        offset += len(raw)

    manifest = {
        "model_config": model_config.to_dict(),
        "train_config": train_config.to_dict() if train_config is not None else None,
        "tensors": registry,
        "tensor_count": len(registry),
        "payload_bytes": offset,
        "step": step,
        "rng_digest": rng_digest(rng) if rng is not None else "",
        "config_digest": config_digest,
    }
    encoded = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, VERSION, len(encoded)))
        f.write(encoded)
        for chunk in chunks:
            f.write(chunk)
    logger.info("Saved checkpoint with %d tensors (%d bytes) to %s", len(registry), offset, path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, version, manifest_len = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DataError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    start = HEADER.size + manifest_len
    if len(blob) < start:
        raise DataError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[HEADER.size:start].decode("utf-8"))
        registry = manifest["tensors"]
        model_config = ModelConfig.from_dict(manifest["model_config"])
        train_values = manifest.get("train_config")
        train_config = TrainConfig.from_dict(train_values) if train_values else None
    except (UnicodeDecodeError, ValueError, KeyError, TypeError, ConfigError) as exc:
        raise DataError(f"{path}: corrupt manifest ({exc})") from exc

    if manifest.get("tensor_count") != len(registry):
        raise DataError(
            f"{path}: manifest lists {len(registry)} tensors but declares {manifest.get('tensor_count')}"
        )
    payload = memoryview(blob)[start:]
    expected = 0
    tensors: Dict[str, Tensor] = {}
    frozen = set()
    for entry in registry:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * PAYLOAD_DTYPE.itemsize
        if entry["offset"] != expected or entry["nbytes"] != nbytes:
            raise DataError(f"{path}: tensor {entry['name']} does not tile the payload")
        if expected + nbytes > len(payload):
            raise DataError(f"{path}: truncated payload at tensor {entry['name']}")
        data = np.frombuffer(payload[expected:expected + nbytes], dtype=PAYLOAD_DTYPE).reshape(shape)
        tensors[entry["name"]] = Tensor(data.astype(np.float64))
        if entry.get("frozen"):
            frozen.add(entry["name"])
        expected += nbytes
    if expected != len(payload):
        raise DataError(f"{path}: {len(payload) - expected} trailing payload bytes")

    params = ModelParams(tensors, frozenset(frozen))
    try:
        validate_params(params, model_config)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return Checkpoint(
        params=params,
        model_config=model_config,
        train_config=train_config,
        step=int(manifest.get("step", 0)),
        rng_digest=manifest.get("rng_digest", ""),
        config_digest=manifest.get("config_digest", ""),
        manifest=manifest,
    )
