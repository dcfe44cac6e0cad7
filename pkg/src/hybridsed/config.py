"""Pipeline configuration: one flat ``key = value`` file plus CLI overrides.

Values use Python/TOML literal syntax (``0.5``, ``[3, 6, 9]``, ``true``,
``"text"``); ``#`` starts a comment.  Unknown keys are rejected.
"""

from __future__ import annotations

import ast
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from hybridsed.boundaries import BoundaryConfig
from hybridsed.errors import DataError
from hybridsed.evaluation import MatchConfig
from hybridsed.labeling import ClassifierConfig
from hybridsed.models import TrainConfig


@dataclass
class PipelineConfig:
    seed: int = 0
    jobs: int = 0  # 0 = one worker per CPU

    # front end / generative models
    stack_frames: int = 3
    rbm_hidden: int = 350
    crbm_hidden: int = 300
    contexts: list = field(default_factory=lambda: list(range(3, 31, 3)))
    cd_steps: int = 10
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    minibatch: int = 64
    rbm_epochs: int = 30
    crbm_epochs: int = 30
    init_std: float = 0.01

    # boundary detection
    pca_dims: int = 16
    orient_pca: bool = True
    smoothing_const: float = 30.0
    threshold_k: float = 2.0
    min_peak_separation_s: float = 0.100
    onset_fraction: float = 0.25
    onset_gate_ratio: float = 5.0
    onset_gate_window_s: float = 0.200
    noise_floor_percentile: float = 10.0
    offset_refractory_s: float = 0.100
    offset_min_low_s: float = 0.060
    offset_theta_abs: float = 1e-6
    offset_theta_rel: float = 0.1
    offset_median_window_s: float = 0.500
    min_event_s: float = 0.060

    # labeling
    train_classifier: bool = True
    classifier_context: int = 4
    classifier_epochs: int = 300
    classifier_learning_rate: float = 1.0
    classifier_momentum: float = 0.9
    classifier_l2: float = 1e-4

    # evaluation
    onset_collar_s: float = 0.200
    offset_collar_s: float = 0.200
    offset_relative: float = 0.20

    def __post_init__(self):
        self.validate()

    def validate(self):
        positive_ints = ["stack_frames", "rbm_hidden", "crbm_hidden", "cd_steps", "minibatch",
                         "pca_dims"]
        for name in positive_ints:
            if int(getattr(self, name)) < 1:
                raise DataError(f"config: {name} must be >= 1")
        non_negative = ["jobs", "rbm_epochs", "crbm_epochs", "classifier_epochs", "classifier_context",
                        "learning_rate", "weight_decay", "threshold_k", "onset_gate_ratio",
                        "offset_refractory_s", "offset_min_low_s", "offset_theta_abs",
                        "offset_theta_rel", "min_event_s", "classifier_learning_rate",
                        "classifier_l2", "onset_collar_s", "offset_collar_s", "offset_relative",
                        "min_peak_separation_s", "init_std"]
        for name in non_negative:
            if getattr(self, name) < 0:
                raise DataError(f"config: {name} must be >= 0")
        for name in ("momentum", "classifier_momentum"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise DataError(f"config: {name} must lie in [0, 1)")
        if not 0.0 < self.onset_fraction < 1.0:
            raise DataError("config: onset_fraction must lie in (0, 1)")
        if not 0.0 <= self.noise_floor_percentile <= 100.0:
            raise DataError("config: noise_floor_percentile must lie in [0, 100]")
        if self.smoothing_const <= 0 or self.offset_median_window_s <= 0 or self.onset_gate_window_s <= 0:
            raise DataError("config: smoothing_const and window lengths must be > 0")
        if not self.contexts or any(int(c) < 1 for c in self.contexts):
            raise DataError("config: contexts must be a non-empty list of positive frame counts")
        if len(set(self.contexts)) != len(self.contexts):
            raise DataError("config: contexts must be distinct")
        self.contexts = [int(c) for c in self.contexts]

    # -- derived configs ---------------------------------------------------

    def train_config(self, epochs: int, seed_offset: int = 0) -> TrainConfig:
        return TrainConfig(cd_steps=self.cd_steps, learning_rate=self.learning_rate, epochs=epochs,
                           minibatch=self.minibatch, momentum=self.momentum,
                           weight_decay=self.weight_decay, rng_seed=self.seed + seed_offset,
                           init_std=self.init_std)

    def boundary_config(self) -> BoundaryConfig:
        names = {f.name for f in fields(BoundaryConfig)} - {"stack"}
        return BoundaryConfig(stack=self.stack_frames, **{n: getattr(self, n) for n in names})

    def classifier_config(self) -> ClassifierConfig:
        return ClassifierConfig(epochs=self.classifier_epochs,
                                learning_rate=self.classifier_learning_rate,
                                momentum=self.classifier_momentum, l2=self.classifier_l2,
                                init_std=self.init_std, rng_seed=self.seed)

    def match_config(self, mode: str = "full") -> MatchConfig:
        return MatchConfig.for_mode(mode, onset_collar_s=self.onset_collar_s,
                                    offset_collar_s=self.offset_collar_s,
                                    offset_relative=self.offset_relative)

    def workers(self) -> int:
        return self.jobs or os.cpu_count() or 1

    # -- text form ---------------------------------------------------------

    def with_overrides(self, overrides: dict) -> "PipelineConfig":
        values = asdict(self)
        for key, value in overrides.items():
            if key not in values:
                raise DataError(f"config: unknown key {key!r}")
            values[key] = _coerce(key, value, values[key])
        return PipelineConfig(**values)

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in asdict(self).items())

    @classmethod
    def loads(cls, text: str, source: str = "<config>") -> "PipelineConfig":
        return cls().with_overrides(parse_key_values(text, source))

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.loads(Path(path).read_text(), str(path))


def parse_key_values(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise DataError(f"{source}:{lineno}: empty key")
        if key in out:
            raise DataError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = parse_value(value, f"{source}:{lineno}")
    return out


def parse_value(text: str, where: str = ""):
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("inf", "+inf", "infinity"):
        return float("inf")
    try:
        return ast.literal_eval(text.replace("true", "True").replace("false", "False"))
    except (ValueError, SyntaxError):
        return text


def _coerce(key, value, default):
    if isinstance(default, bool):
        if isinstance(value, str):
            value = parse_value(value)
        if not isinstance(value, bool):
            raise DataError(f"config: {key} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, str):
            value = parse_value(value)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise DataError(f"config: {key} must be an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, str):
            value = parse_value(value)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise DataError(f"config: {key} must be a number")
        return float(value)
    if isinstance(default, list):
        if isinstance(value, str):
            value = parse_value(value)
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, (list, tuple)):
            raise DataError(f"config: {key} must be a list")
        return list(value)
    return value


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_format(x) for x in v) + "]"
    if isinstance(v, str):
        return '"' + v.replace('"', '\\"') + '"'
    return str(v)
