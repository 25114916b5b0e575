"""
Trainer for the BERT-PIN encoder.
Minimizes the blend of global and masked-only cross-entropy with Adam,
re-masking the training windows every epoch.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from agents.bert_pin.encoder import (
    DistributionMatrix,
    ModelConfig,
    ModelParams,
    decode_top1,
    forward_logits,
    init_params,
    predict_proba,
)
from core_numerics.errors import ConfigError, DataError, NumericalError
from core_numerics.tensor import Tensor, cross_entropy, no_grad, softmax_cross_entropy
from evaluation.metrics import compute_pointwise
from load_data.windows import MaskedWindow, MaskSpec, apply_mask, dequantize, quantize, tokenize

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "step", "train_loss", "test_loss", "test_mpe"]


@dataclass
class TrainConfig:
    """Optimization settings for the encoder."""

    learning_rate: float = 1e-4
    lam: float = 0.8
    batch_size: int = 16
    epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    init_std: float = 0.02
    eval_every: int = 100
    jitter: int = 0
    progress: bool = True

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.learning_rate < 0.0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.clip_norm < 0.0 or self.jitter < 0 or self.eval_every < 1:
            raise ConfigError("clip_norm and jitter must be >= 0, eval_every >= 1")

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, object]) -> "TrainConfig":
        return cls(**values)


def loss_weights(mask: np.ndarray, lam: float) -> np.ndarray:
    """w_i = (1−λ)/N + λ·(1−M_i)/K; the local term is dropped when K = 0."""
    mask = np.asarray(mask)
    n = mask.shape[-1]
    missing = 1.0 - mask.astype(np.float64)
    k = missing.sum(axis=-1, keepdims=True)
    if np.any(k == 0) and lam > 0.0:
        logger.warning("Window without masked positions; local loss term set to 0")
    local = np.divide(missing, k, out=np.zeros_like(missing), where=k > 0)
    return (1.0 - lam) / n + lam * local


def compute_loss(
    dist: Union[DistributionMatrix, np.ndarray], truth_classes: np.ndarray, mask: np.ndarray, lam: float
) -> float:
    """(1−λ)·CE over all positions + λ·CE over the masked positions."""
    probs = dist.probs if isinstance(dist, DistributionMatrix) else np.asarray(dist)
    weights = loss_weights(mask, lam)
    return cross_entropy(Tensor(probs), np.asarray(truth_classes), weights).item()


def _stack(batch: Sequence[MaskedWindow], classes: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    tokens = [tokenize(w, classes) for w in batch]
    load_cls = np.stack([t.load_classes for t in tokens])
    temp_cls = np.stack([t.temp_classes for t in tokens])
    truth = np.stack([quantize(w.load, classes) for w in batch])
    mask = np.stack([w.mask for w in batch])
    return load_cls, temp_cls, truth, mask


class BertPinTrainer:
    """Owns the parameters, the Adam moments, the seeded generator and the history."""

    def __init__(
        self,
        model_config: ModelConfig,
        train_config: TrainConfig,
        params: Optional[ModelParams] = None,
        mask_spec: Optional[MaskSpec] = None,
    ):
        self.model_config = model_config
        self.config = train_config
        self.mask_spec = mask_spec
        self.params = params if params is not None else init_params(
            model_config, train_config.seed, train_config.init_std
        )
        self.rng = np.random.default_rng(train_config.seed)
        self.m = {n: np.zeros_like(t.data) for n, t in self.params.trainable()}
        self.v = {n: np.zeros_like(t.data) for n, t in self.params.trainable()}
        self.step = 0
        self.epoch = 0
        self.history: List[Dict[str, float]] = []

    def batch_loss(self, batch: Sequence[MaskedWindow], training: bool) -> Tensor:
        load_cls, temp_cls, truth, mask = _stack(batch, self.model_config.classes)
        logits = forward_logits(load_cls, temp_cls, self.params, self.model_config, training, self.rng)
        weights = loss_weights(mask, self.config.lam) / len(batch)
        return softmax_cross_entropy(logits, truth, weights)

    def _clip(self, grads: Dict[str, np.ndarray]) -> float:
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if self.config.clip_norm > 0.0 and norm > self.config.clip_norm:
            factor = self.config.clip_norm / (norm + 1e-12)
            for name in grads:
                grads[name] = grads[name] * factor
        return norm

    def train_step(self, batch: Sequence[MaskedWindow]) -> Tuple[ModelParams, float]:
        """One forward/backward pass and Adam update; returns (params, loss)."""
        if not batch:
            raise DataError("train_step needs a non-empty batch")
        self.params.zero_grad()
        loss = self.batch_loss(batch, training=True)
        value = loss.item()
        if not math.isfinite(value):
            largest = max(float(np.abs(t.data).max()) for _, t in self.params.items())
            raise NumericalError(
                f"non-finite loss {value} at step {self.step} (epoch {self.epoch}, "
                f"batch of {len(batch)}, largest |param| {largest:.3g})"
            )
        loss.backward()

        grads = {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self.params.trainable()
        }
        grad_norm = self._clip(grads)
        if not math.isfinite(grad_norm):
            raise NumericalError(f"non-finite gradient norm at step {self.step}")

        self.step += 1
        cfg = self.config
        bias1 = 1.0 - cfg.beta1 ** self.step
        bias2 = 1.0 - cfg.beta2 ** self.step
        for name, tensor in self.params.trainable():
            g = grads[name]
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * g * g
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            tensor.data = tensor.data - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        self.params.zero_grad()
        return self.params, value

    def evaluate_loss(self, windows: Sequence[MaskedWindow]) -> float:
        """Mean eval-mode loss over ``windows`` (NaN when empty)."""
        if not windows:
            return float("nan")
        total = 0.0
        size = self.config.batch_size
        with no_grad():
            for start in range(0, len(windows), size):
                batch = windows[start:start + size]
                total += self.batch_loss(batch, training=False).item() * len(batch)
        return total / len(windows)

    def evaluate_mpe(self, windows: Sequence[MaskedWindow]) -> float:
        """Mean MPE of the top-1 restoration over masked positions, on normalized load."""
        if not windows:
            return float("nan")
        classes = self.model_config.classes
        size = self.config.batch_size
        scores = []
        for start in range(0, len(windows), size):
            batch = windows[start:start + size]
            load_cls, temp_cls, _, _ = _stack(batch, classes)
            probs = predict_proba(load_cls, temp_cls, self.params, self.model_config)
            restored = dequantize(decode_top1(probs), classes)
            for w, values in zip(batch, restored):
                hole = w.mask == 0
                if hole.any():
                    scores.append(compute_pointwise(w.load[hole], values[hole]).mpe)
        return float(np.mean(scores)) if scores else float("nan")

    def _prepare_epoch(self, windows: Sequence[MaskedWindow]) -> List[MaskedWindow]:
        order = self.rng.permutation(len(windows))
        prepared = []
        for idx in order:
            mw = windows[idx]
            window = mw.window
            if self.config.jitter:
                low = -min(self.config.jitter, window.left_margin)
                high = min(self.config.jitter, window.right_margin)
                window = window.recut(int(self.rng.integers(low, high + 1)))
            if self.mask_spec is not None:
                prepared.append(apply_mask(window, self.mask_spec, self.rng))
            else:
                prepared.append(MaskedWindow(window, mw.mask, mw.intervals))
        return prepared

    def train(self, train_set: Sequence[MaskedWindow], test_set: Sequence[MaskedWindow]) -> List[Dict[str, float]]:
        """Epoch loop; one history row per epoch."""
        if not train_set:
            raise DataError("training set is empty")
        cfg = self.config
        logger.info(
            "Training on %d windows (%d test), %d epochs, batch %d, lr %g, lambda %.2f",
            len(train_set), len(test_set), cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.lam,
        )
        epochs = tqdm(range(cfg.epochs), desc="epochs", unit="epoch", disable=None if cfg.progress else True)
        for epoch in epochs:
            self.epoch = epoch
            batches = self._prepare_epoch(train_set)
            losses = []
            for start in range(0, len(batches), cfg.batch_size):
                _, loss = self.train_step(batches[start:start + cfg.batch_size])
                losses.append(loss)
                if self.step % cfg.eval_every == 0:
                    logger.info("epoch %d | step %d | batch loss %.4f", epoch, self.step, loss)
            row = {
                "epoch": epoch,
                "step": self.step,
                "train_loss": float(np.mean(losses)),
                "test_loss": self.evaluate_loss(test_set),
                "test_mpe": self.evaluate_mpe(test_set),
            }
            self.history.append(row)
            epochs.set_postfix(train=f"{row['train_loss']:.4f}", test=f"{row['test_loss']:.4f}")
            logger.info(
                "epoch %d | step %d | train loss %.4f | test loss %.4f | test MPE %.4f",
                epoch, self.step, row["train_loss"], row["test_loss"], row["test_mpe"],
            )
        return self.history

    def save_progress(self, directory: Union[str, Path]) -> Dict[str, Path]:
        """Write the history CSV, ``training_stats.json`` and ``training_report.txt``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "history": directory / "history.csv",
            "stats": directory / "training_stats.json",
            "report": directory / "training_report.txt",
        }
        pd.DataFrame(self.history, columns=HISTORY_COLUMNS).to_csv(
            paths["history"], index=False, float_format="%.17g"
        )

        final = self.history[-1] if self.history else {}
        best = min(self.history, key=lambda r: r["test_loss"]) if self.history else {}
        stats = {
            "epochs": len(self.history),
            "steps": self.step,
            "final_train_loss": final.get("train_loss"),
            "final_test_loss": final.get("test_loss"),
            "final_test_mpe": final.get("test_mpe"),
            "best_test_loss": best.get("test_loss"),
            "best_epoch": best.get("epoch"),
            "model_config": self.model_config.to_dict(),
            "train_config": self.config.to_dict(),
        }
        paths["stats"].write_text(json.dumps(stats, indent=2, default=_json_default), encoding="utf-8")

        lines = ["BERT-PIN Training Report", "=" * 40]
        if not self.history:
            lines.append("No training epochs were run.")
        else:
            lines += [
                f"Epochs: {len(self.history)}",
                f"Steps: {self.step}",
                f"Final train loss: {final['train_loss']:.6f}",
                f"Final test loss: {final['test_loss']:.6f}",
                f"Final test MPE: {final['test_mpe']:.6f}",
                f"Best test loss: {best['test_loss']:.6f} (epoch {best['epoch']})",
                "",
                "Detailed Statistics:",
                f"Train losses: {[round(r['train_loss'], 6) for r in self.history]}",
                f"Test losses: {[round(r['test_loss'], 6) for r in self.history]}",
            ]
        paths["report"].write_text("\n".join(lines) + "\n", encoding="utf-8")
        logger.info("Training progress saved to %s", directory)
        return paths


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def fit(
    train_set: Sequence[MaskedWindow],
    test_set: Sequence[MaskedWindow],
    model_config: ModelConfig,
    train_config: TrainConfig,
    mask_spec: Optional[MaskSpec] = None,
) -> Tuple[ModelParams, List[Dict[str, float]]]:
    """Train from scratch; ``epochs = 0`` returns the initial parameters and no history."""
    trainer = BertPinTrainer(model_config, train_config, mask_spec=mask_spec)
    if train_config.epochs == 0:
        return trainer.params, []
    history = trainer.train(train_set, test_set)
    return trainer.params, history
