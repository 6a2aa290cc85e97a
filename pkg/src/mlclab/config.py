"""Experiment configuration: one flat text format with dotted keys.

A config file is a sequence of `key = value` lines ('#' starts a comment).
Every key has a default, so an empty file is a complete configuration. The
effective (defaulted) config can be rendered back to text; render-then-parse
is an exact round trip, which is what makes the echoed config in an output
directory re-runnable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError, ParseError
from .losses import LOSS_IDS, LossConfig
from .training import TrainConfig

_BOOL_NAMES = {"true": True, "false": False}


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def _parse_bool(s: str) -> bool:
    if s.lower() not in _BOOL_NAMES:
        raise ValueError(f"expected true/false, got {s!r}")
    return _BOOL_NAMES[s.lower()]


def _parse_list(item_parser):
    def parse(s: str):
        s = s.strip()
        if not s:
            return tuple()
        return tuple(item_parser(tok.strip()) for tok in s.split(","))
    return parse


# key -> (parser, default)
SCHEMA: dict = {
    "data.source": (str, "generate"),
    "data.n": (int, 2500),
    "data.labels": (int, 20),
    "data.features": (int, 32),
    "data.seed": (int, 7),
    "data.tail_exponent": (float, 1.2),
    "data.avg_labels": (float, 2.5),
    "data.noise": (float, 0.5),
    "data.cooccur_boost": (float, 0.35),
    "data.split": (_parse_list(float), (0.8, 0.1, 0.1)),
    "loss.id": (str, "reg"),
    "loss.tau": (float, 0.1),
    "loss.alpha": (float, 0.0),
    "loss.beta": (float, 1.0),
    "loss.gamma_pos": (float, 0.0),
    "loss.gamma_neg": (float, 1.0),
    "loss.margin": (float, 0.0),
    "loss.use_prototypes": (_parse_bool, False),
    "loss.use_regularizer": (_parse_bool, True),
    "loss.use_alpha_weighting": (_parse_bool, False),
    "loss.epsilon": (float, 1e-12),
    "loss.proto_denominator": (str, "prototypes"),
    "train.epochs": (int, 20),
    "train.batch_size": (int, 64),
    "train.lr": (float, 0.05),
    "train.momentum": (float, 0.9),
    "train.weight_decay": (float, 1e-4),
    "train.warmup_frac": (float, 0.05),
    "train.clip": (float, 1.0),
    "train.seed": (int, 0),
    "train.hidden": (int, 64),
    "train.proj_dim": (int, 256),
    "eval.lrs": (_parse_list(float), (1.0, 0.1)),
    "eval.wds": (_parse_list(float), (1e-2, 1e-4)),
    "run.seeds": (_parse_list(int), (0, 1, 2, 3, 4)),
    "run.losses": (_parse_list(str), ("bce", "zlpr", "base", "mulsupcon", "reg-noreg", "reg")),
    "run.taus": (_parse_list(float), (0.05, 0.1, 0.5, 1.0)),
    "run.fractions": (_parse_list(float), (0.2, 0.5, 1.0)),
    "run.out": (str, "runs"),
}


@dataclass
class ExperimentConfig:
    """Fully-defaulted experiment configuration keyed by dotted names."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {key: default for key, (_, default) in SCHEMA.items()}
        for key, val in self.values.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = val
        self.values = merged
        if self.values["loss.id"] not in LOSS_IDS:
            raise ConfigError(
                f"unknown loss id {self.values['loss.id']!r}; valid: {' | '.join(LOSS_IDS)}"
            )
        for loss in self.values["run.losses"]:
            if loss not in LOSS_IDS:
                raise ConfigError(f"unknown loss id {loss!r} in run.losses")

    def __getitem__(self, key: str):
        if key not in self.values:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def override(self, key: str, value) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser, _ = SCHEMA[key]
        self.values[key] = parser(value) if isinstance(value, str) else value

    def loss_config(self) -> LossConfig:
        v = self.values
        return LossConfig(
            tau=v["loss.tau"],
            alpha=v["loss.alpha"],
            beta=v["loss.beta"],
            gamma_pos=v["loss.gamma_pos"],
            gamma_neg=v["loss.gamma_neg"],
            margin=v["loss.margin"],
            use_prototypes=v["loss.use_prototypes"],
            use_regularizer=v["loss.use_regularizer"],
            use_alpha_weighting=v["loss.use_alpha_weighting"],
            epsilon=v["loss.epsilon"],
            proto_denominator=v["loss.proto_denominator"],
        )

    def train_config(self, seed: int | None = None) -> TrainConfig:
        v = self.values
        return TrainConfig(
            epochs=v["train.epochs"],
            batch_size=v["train.batch_size"],
            lr=v["train.lr"],
            momentum=v["train.momentum"],
            weight_decay=v["train.weight_decay"],
            warmup_frac=v["train.warmup_frac"],
            clip=v["train.clip"],
            seed=v["train.seed"] if seed is None else seed,
            hidden=v["train.hidden"],
            proj_dim=v["train.proj_dim"],
        )

    def render(self) -> str:
        lines = [f"{key} = {_fmt(self.values[key])}" for key in sorted(self.values)]
        return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            values[key] = parser(val)
        except (ValueError, TypeError) as exc:
            raise ParseError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return ExperimentConfig(values=values)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def default_config() -> ExperimentConfig:
    return ExperimentConfig()
