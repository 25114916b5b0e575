"""
BERT-PIN Encoder
Transformer encoder that turns a masked load window plus its temperature
profile into one categorical distribution over load classes per position.

Key Characteristics:
1. Load, temperature and position embeddings are summed per position
2. Pre-norm layers: multi-head self-attention and a GELU feed-forward block,
   each with a residual connection
3. A linear classification head plus softmax gives the distribution matrix D
4. Top-1 decoding is the per-position argmax
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, FrozenSet, Iterator, List, Optional, Tuple, Union

import numpy as np

from core_numerics.errors import ConfigError, DataError, NumericalError, ShapeError
from core_numerics.tensor import (
    Tensor,
    add,
    dropout,
    embedding,
    gelu,
    layer_norm,
    matmul,
    no_grad,
    reshape,
    scale,
    softmax,
    transpose,
)
from load_data.windows import MaskedWindow, TokenSequence, tokenize

logger = logging.getLogger(__name__)

EMBEDDINGS = ("learned", "one_hot")
POSITIONALS = ("learned", "none")
LAYER_KEYS = (
    "wq", "wk", "wv", "wo", "ln1_gamma", "ln1_beta",
    "w1", "b1", "w2", "b2", "ln2_gamma", "ln2_beta",
)


@dataclass
class ModelConfig:
    """Encoder hyperparameters."""

    classes: int = 200
    hidden: int = 200
    heads: int = 2
    layers: int = 2
    ffn_mult: int = 4
    dropout: float = 0.1
    window_len: int = 96
    embedding: str = "learned"
    positional: str = "learned"
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        for name in ("classes", "hidden", "heads", "layers", "ffn_mult", "window_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model {name} must be >= 1, got {getattr(self, name)}")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden width {self.hidden} is not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.embedding not in EMBEDDINGS:
            raise ConfigError(f"embedding must be one of {EMBEDDINGS}, got {self.embedding!r}")
        if self.positional not in POSITIONALS:
            raise ConfigError(f"positional must be one of {POSITIONALS}, got {self.positional!r}")
        if self.embedding == "one_hot" and self.hidden != self.classes:
            raise ConfigError("one_hot embeddings need hidden == classes")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, object]) -> "ModelConfig":
        return cls(**values)


class ModelParams:
    """Named parameter tensors; frozen names are excluded from optimization."""

    def __init__(self, tensors: Dict[str, Tensor], frozen: FrozenSet[str] = frozenset()):
        self.tensors = tensors
        self.frozen = frozenset(frozen)
        for name, t in tensors.items():
            t.name = name
            t.requires_grad = name not in self.frozen

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.tensors.items())

    def trainable(self) -> List[Tuple[str, Tensor]]:
        return [(n, t) for n, t in self.tensors.items() if n not in self.frozen]

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def arrays(self) -> Dict[str, np.ndarray]:
        return {n: t.data for n, t in self.tensors.items()}

    def copy(self) -> "ModelParams":
        return ModelParams({n: Tensor(t.data.copy()) for n, t in self.tensors.items()}, self.frozen)

    def check_finite(self) -> None:
        for name, t in self.tensors.items():
            if not np.all(np.isfinite(t.data)):
                raise NumericalError(f"parameter {name} holds non-finite values")


def expected_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    c, d, f = config.classes, config.hidden, config.ffn_mult * config.hidden
    shapes: Dict[str, Tuple[int, ...]] = {"load_embed": (c, d), "temp_embed": (c, d)}
    if config.positional == "learned":
        shapes["pos_embed"] = (config.window_len, d)
    for i in range(config.layers):
        p = f"layers.{i}."
        shapes.update({
            p + "wq": (d, d), p + "wk": (d, d), p + "wv": (d, d), p + "wo": (d, d),
            p + "ln1_gamma": (d,), p + "ln1_beta": (d,),
            p + "w1": (d, f), p + "b1": (f,), p + "w2": (f, d), p + "b2": (d,),
            p + "ln2_gamma": (d,), p + "ln2_beta": (d,),
        })
    shapes["head_w"] = (d, c)
    shapes["head_b"] = (c,)
    return shapes


def _truncated_normal(rng: np.random.Generator, shape: Tuple[int, ...], std: float) -> np.ndarray:
    z = rng.standard_normal(shape)
    outside = np.abs(z) > 2.0
    while outside.any():
        z[outside] = rng.standard_normal(int(outside.sum()))
        outside = np.abs(z) > 2.0
    return z * std


def init_params(config: ModelConfig, seed: int = 0, std: float = 0.02) -> ModelParams:
    """Truncated normal weights, zero biases and betas, unit gammas."""
    rng = np.random.default_rng(seed)
    tensors: Dict[str, Tensor] = {}
    frozen = set()
    for name, shape in expected_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("_gamma"):
            data = np.ones(shape)
        elif leaf.endswith("_beta") or leaf in ("b1", "b2", "head_b"):
            data = np.zeros(shape)
        elif config.embedding == "one_hot" and name in ("load_embed", "temp_embed"):
            data = np.eye(config.classes)
            frozen.add(name)
        else:
            data = _truncated_normal(rng, shape, std)
        tensors[name] = Tensor(data)
    return ModelParams(tensors, frozenset(frozen))


def validate_params(params: ModelParams, config: ModelConfig) -> None:
    expected = expected_shapes(config)
    if set(expected) != set(params.tensors):
        missing = sorted(set(expected) - set(params.tensors))
        extra = sorted(set(params.tensors) - set(expected))
        raise ShapeError(f"parameter names differ from config: missing {missing}, extra {extra}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ShapeError(f"{name}: expected {shape}, got {params[name].shape}")


# -----------------------------------------------------------------------------
# Building blocks
# -----------------------------------------------------------------------------


def _embed(load_cls: np.ndarray, temp_cls: np.ndarray, params: ModelParams) -> Tensor:
    n = load_cls.shape[-1]
    x = add(embedding(params["load_embed"], load_cls), embedding(params["temp_embed"], temp_cls))
    if "pos_embed" in params:
        table = params["pos_embed"]
        if n > table.shape[0]:
            raise ShapeError(f"sequence of {n} positions exceeds positional table {table.shape}")
        positions = embedding(table, np.arange(n))
        x = add(x, positions)
    return x


def embed_inputs(tokens: TokenSequence, params: ModelParams) -> Tensor:
    """out[t] = load_embed[load(t)] + temp_embed[temp(t)] + pos_embed[t]."""
    return _embed(np.asarray(tokens.load_classes), np.asarray(tokens.temp_classes), params)


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    """softmax(q·kᵀ/√dₕ) over the key axis."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query {q.shape} and key {k.shape} widths differ")
    axes = list(range(k.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    scores = scale(matmul(q, transpose(k, axes)), 1.0 / math.sqrt(q.shape[-1]))
    return softmax(scores, axis=-1)


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention: Σᵢ α(q, kᵢ)·vᵢ."""
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    return matmul(attention_weights(q, k), v)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return transpose(reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


def multi_head_attention(x: Tensor, params: ModelParams, prefix: str, heads: int) -> Tensor:
    q = _split_heads(matmul(x, params[prefix + "wq"]), heads)
    k = _split_heads(matmul(x, params[prefix + "wk"]), heads)
    v = _split_heads(matmul(x, params[prefix + "wv"]), heads)
    return matmul(_merge_heads(attention(q, k, v)), params[prefix + "wo"])


def _encoder_layer(
    x: Tensor,
    params: ModelParams,
    index: int,
    config: ModelConfig,
    training: bool,
    rng: Optional[np.random.Generator],
) -> Tensor:
    p = f"layers.{index}."
    eps = config.layer_norm_eps
    h = layer_norm(x, params[p + "ln1_gamma"], params[p + "ln1_beta"], eps)
    h = multi_head_attention(h, params, p, config.heads)
    x = add(x, dropout(h, config.dropout, rng, training))

    h = layer_norm(x, params[p + "ln2_gamma"], params[p + "ln2_beta"], eps)
    h = gelu(add(matmul(h, params[p + "w1"]), params[p + "b1"]))
    h = add(matmul(h, params[p + "w2"]), params[p + "b2"])
    return add(x, dropout(h, config.dropout, rng, training))


def _ensure_finite(t: Tensor, where: str) -> None:
    if not np.all(np.isfinite(t.data)):
        bad = int((~np.isfinite(t.data)).sum())
        raise NumericalError(f"{bad} non-finite activations after {where}")


# -----------------------------------------------------------------------------
# Forward pass
# -----------------------------------------------------------------------------


def forward_logits(
    load_cls: np.ndarray,
    temp_cls: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Class logits of shape (B, N, C); a 1-D input is treated as a batch of one."""
    load_cls = np.atleast_2d(np.asarray(load_cls))
    temp_cls = np.atleast_2d(np.asarray(temp_cls))
    if load_cls.shape != temp_cls.shape:
        raise ShapeError(f"load tokens {load_cls.shape} and temperature tokens {temp_cls.shape} differ")

    x = _embed(load_cls, temp_cls, params)
    x = dropout(x, config.dropout, rng, training)
    _ensure_finite(x, "embedding")
    for i in range(config.layers):
        x = _encoder_layer(x, params, i, config, training, rng)
        _ensure_finite(x, f"layer {i}")
    logits = add(matmul(x, params["head_w"]), params["head_b"])
    _ensure_finite(logits, "classification head")
    return logits


@dataclass
class DistributionMatrix:
    """D: one categorical distribution over load classes per position (rows)."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2:
            raise ShapeError(f"distribution matrix must be N×C, got {self.probs.shape}")
        if np.any(self.probs < 0) or not np.allclose(self.probs.sum(axis=1), 1.0, atol=1e-6):
            raise DataError("distribution rows must be non-negative and sum to 1")

    @property
    def positions(self) -> int:
        return self.probs.shape[0]

    @property
    def classes(self) -> int:
        return self.probs.shape[1]


def predict_proba(
    load_classes: np.ndarray,
    temp_classes: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
) -> np.ndarray:
    """Eval-mode probabilities, (N, C) for one sequence or (B, N, C) for a batch."""
    single = np.asarray(load_classes).ndim == 1
    with no_grad():
        probs = softmax(forward_logits(load_classes, temp_classes, params, config)).data
    return probs[0] if single else probs


def forward(
    window: MaskedWindow,
    params: ModelParams,
    config: ModelConfig,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
) -> DistributionMatrix:
    """Quantize, encode and classify one masked window."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    if window.window_len != config.window_len:
        raise ShapeError(f"window of {window.window_len} points, model expects {config.window_len}")
    tokens = tokenize(window, config.classes)
    if mode == "eval":
        return DistributionMatrix(predict_proba(tokens.load_classes, tokens.temp_classes, params, config))
    with no_grad():
        logits = forward_logits(tokens.load_classes, tokens.temp_classes, params, config, True, rng)
        return DistributionMatrix(softmax(logits).data[0])


def decode_top1(dist: Union[DistributionMatrix, np.ndarray]) -> np.ndarray:
    """Per-position argmax; ties go to the lowest class index."""
    probs = dist.probs if isinstance(dist, DistributionMatrix) else np.asarray(dist)
    return np.argmax(probs, axis=-1)
