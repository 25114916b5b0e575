"""
Run configuration.

A run is described by flat ``key = value`` text (``#`` starts a comment).
Every key is registered below with its type and default; unknown keys are
rejected. Command-line ``--key value`` overrides win over the file.
"""

import hashlib
import logging
from pathlib import Path
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Tuple, Union

from agents.bert_pin.encoder import ModelConfig
from agents.bert_pin.selection import SelectionConfig
from agents.bert_pin.trainer import TrainConfig
from core_numerics.errors import ConfigError, DataError
from load_data.fleet import FleetParams
from load_data.windows import MaskSpec

logger = logging.getLogger(__name__)

RESTORE_METHODS = ("top1", "direct_top2", "iterative_top2", "linear_interp", "copy_prev_day")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_optional_int(text: str) -> Optional[int]:
    return None if text.strip().lower() in ("", "none") else int(text)


def _parse_intervals(text: str) -> Tuple[Tuple[int, int], ...]:
    """``"40-56, 120-136"`` → ((40, 56), (120, 136)), half-open."""
    if not text.strip():
        return ()
    intervals = []
    for part in text.split(","):
        start, end = part.strip().split("-")
        intervals.append((int(start), int(end)))
    return tuple(intervals)


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(f"{a}-{b}" for a, b in value)
    return str(value)


class ConfigKey(NamedTuple):
    name: str
    parse: Callable[[str], object]
    default: object
    help: str = ""


_FLEET = FleetParams()
_MODEL = ModelConfig()
_TRAIN = TrainConfig()

REGISTRY: List[ConfigKey] = [
    ConfigKey("seed", int, 0, "master seed for every random draw"),
    ConfigKey("out_dir", str, "runs/default", "directory for every artifact of the run"),
    ConfigKey("dataset", str, "", "prepared dataset CSV (default <out_dir>/dataset.csv)"),
    ConfigKey("checkpoint", str, "", "checkpoint path (default <out_dir>/model.bpin)"),
    ConfigKey("window_len", int, 96, "points per window: 96 daily, 672 weekly"),
    ConfigKey("margin", int, 16, "context points kept on each side of a window"),
    ConfigKey("split_ratio", float, 0.8, "share of windows used for training"),
    ConfigKey("fleet.users", int, 400, "synthetic user pool size"),
    ConfigKey("fleet.days", int, 365, "synthetic horizon in days"),
    ConfigKey("fleet.draw", int, 100, "users summed per feeder profile"),
    ConfigKey("fleet.profiles", int, 4, "independent feeder draws pooled into the dataset"),
    ConfigKey("fleet.floor", float, 0.05, "lower clip of the normalized aggregate"),
    ConfigKey("fleet.write_users", _parse_bool, False, "also write the users in load CSV format"),
    ConfigKey("data.load_csv", str, "", "comma-separated load CSVs to ingest instead of generating"),
    ConfigKey("data.temp_csv", str, "", "temperature CSV accompanying data.load_csv"),
    ConfigKey("mask.strategy", str, "central", "central | peak | multi_peak | explicit"),
    ConfigKey("mask.segment_len", int, 16, "points per missing data segment"),
    ConfigKey("mask.count", int, 1, "segments per window (fewest for multi_peak)"),
    ConfigKey("mask.max_count", _parse_optional_int, None, "most multi_peak segments; unset means one per day"),
    ConfigKey("mask.intervals", _parse_intervals, (), "explicit half-open intervals, e.g. 40-56"),
    ConfigKey("model.classes", int, _MODEL.classes, ""),
    ConfigKey("model.hidden", int, _MODEL.hidden, ""),
    ConfigKey("model.heads", int, _MODEL.heads, ""),
    ConfigKey("model.layers", int, _MODEL.layers, ""),
    ConfigKey("model.ffn_mult", int, _MODEL.ffn_mult, ""),
    ConfigKey("model.dropout", float, _MODEL.dropout, ""),
    ConfigKey("model.embedding", str, _MODEL.embedding, "learned | one_hot"),
    ConfigKey("model.positional", str, _MODEL.positional, "learned | none"),
    ConfigKey("model.layer_norm_eps", float, _MODEL.layer_norm_eps, ""),
    ConfigKey("train.learning_rate", float, _TRAIN.learning_rate, ""),
    ConfigKey("train.lambda", float, _TRAIN.lam, "weight of the masked-only loss"),
    ConfigKey("train.batch_size", int, _TRAIN.batch_size, ""),
    ConfigKey("train.epochs", int, _TRAIN.epochs, ""),
    ConfigKey("train.beta1", float, _TRAIN.beta1, ""),
    ConfigKey("train.beta2", float, _TRAIN.beta2, ""),
    ConfigKey("train.adam_eps", float, _TRAIN.adam_eps, ""),
    ConfigKey("train.clip_norm", float, _TRAIN.clip_norm, "global gradient norm limit, 0 disables"),
    ConfigKey("train.init_std", float, _TRAIN.init_std, ""),
    ConfigKey("train.eval_every", int, _TRAIN.eval_every, "steps between progress log lines"),
    ConfigKey("train.jitter", int, _TRAIN.jitter, "max re-cut offset of training windows"),
    ConfigKey("train.progress", _parse_bool, _TRAIN.progress, "tqdm progress bar"),
    ConfigKey("restore.method", str, "iterative_top2", " | ".join(RESTORE_METHODS)),
    ConfigKey("restore.e", float, 0.5, "fork threshold on the top-1/top-2 probability gap"),
    ConfigKey("restore.edge_padding", _parse_bool, False, "replicate edges when margins run out"),
    ConfigKey("restore.split", str, "test", "test | all"),
    ConfigKey("evaluate.inputs", str, "", "comma-separated restoration CSVs to compare"),
]

_FLEET_FIELDS = {
    "base_kw", "user_spread", "morning_kw", "morning_hour", "evening_kw", "evening_hour",
    "peak_width_h", "peak_jitter_h", "cooling_kw_per_c", "heating_kw_per_c", "t_cool", "t_heat",
    "weekend_factor", "noise_kw", "noise_phi", "standby_kw", "temp_mean", "temp_seasonal",
    "temp_diurnal", "temp_noise", "temp_noise_phi", "start",
}
for _name in sorted(_FLEET_FIELDS):
    _default = getattr(_FLEET, _name)
    REGISTRY.append(ConfigKey(f"fleet.{_name}", type(_default), _default, "synthetic generator"))

KEYS: Dict[str, ConfigKey] = {key.name: key for key in REGISTRY}


class RunConfig:
    """Resolved configuration: registry defaults, then file values, then overrides."""

    def __init__(self, values: Optional[Dict[str, object]] = None):
        self.values: Dict[str, object] = {key.name: key.default for key in REGISTRY}
        for name, value in (values or {}).items():
            self.set(name, value)

    def set(self, name: str, value: object) -> None:
        if name not in KEYS:
            raise ConfigError(f"unknown config key {name!r}")
        if isinstance(value, str):
            try:
                value = KEYS[name].parse(value.strip())
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from exc
        self.values[name] = value

    def __getitem__(self, name: str) -> object:
        if name not in KEYS:
            raise ConfigError(f"unknown config key {name!r}")
        return self.values[name]

    @classmethod
    def from_text(cls, text: str, source: str = "<text>") -> "RunConfig":
        config = cls()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            name, value = (part.strip() for part in line.split("=", 1))
            config.set(name, value)
        return config

    @classmethod
    def load(
        cls, path: Optional[Union[str, Path]] = None, overrides: Iterable[Tuple[str, str]] = ()
    ) -> "RunConfig":
        if path is None:
            config = cls()
        else:
            try:
                text = Path(path).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            config = cls.from_text(text, str(path))
        for name, value in overrides:
            config.set(name, value)
        return config

    def to_text(self) -> str:
        return "".join(f"{name} = {_render(self.values[name])}\n" for name in sorted(self.values))

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    # -------------------------------------------------------------------------
    # Paths
    # -------------------------------------------------------------------------

    @property
    def out_dir(self) -> Path:
        return Path(self["out_dir"])

    @property
    def dataset_path(self) -> Path:
        return Path(self["dataset"]) if self["dataset"] else self.out_dir / "dataset.csv"

    @property
    def checkpoint_path(self) -> Path:
        return Path(self["checkpoint"]) if self["checkpoint"] else self.out_dir / "model.bpin"

    # -------------------------------------------------------------------------
    # Module configs
    # -------------------------------------------------------------------------

    def fleet_params(self) -> FleetParams:
        try:
            return FleetParams(**{name: self[f"fleet.{name}"] for name in _FLEET_FIELDS})
        except DataError as exc:
            raise ConfigError(f"fleet settings: {exc}") from exc

    def mask_spec(self) -> MaskSpec:
        return MaskSpec(
            strategy=self["mask.strategy"],
            segment_len=self["mask.segment_len"],
            count=self["mask.count"],
            max_count=self["mask.max_count"],
            intervals=self["mask.intervals"],
            seed=self["seed"],
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            classes=self["model.classes"],
            hidden=self["model.hidden"],
            heads=self["model.heads"],
            layers=self["model.layers"],
            ffn_mult=self["model.ffn_mult"],
            dropout=self["model.dropout"],
            window_len=self["window_len"],
            embedding=self["model.embedding"],
            positional=self["model.positional"],
            layer_norm_eps=self["model.layer_norm_eps"],
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self["train.learning_rate"],
            lam=self["train.lambda"],
            batch_size=self["train.batch_size"],
            epochs=self["train.epochs"],
            seed=self["seed"],
            beta1=self["train.beta1"],
            beta2=self["train.beta2"],
            adam_eps=self["train.adam_eps"],
            clip_norm=self["train.clip_norm"],
            init_std=self["train.init_std"],
            eval_every=self["train.eval_every"],
            jitter=self["train.jitter"],
            progress=self["train.progress"],
        )

    def restore_method(self) -> str:
        method = self["restore.method"]
        if method not in RESTORE_METHODS:
            raise ConfigError(f"restore.method must be one of {RESTORE_METHODS}, got {method!r}")
        return method

    def selection_config(self) -> SelectionConfig:
        method = self.restore_method()
        return SelectionConfig(
            method=method if method in ("top1", "direct_top2", "iterative_top2") else "top1",
            e=self["restore.e"],
            edge_padding=self["restore.edge_padding"],
        )
