"""Experiment configuration: an INI file with every default embedded.

Sections are ``experiment``, ``dataset``, ``model``, ``training``,
``sinkhorn`` and ``evaluation``. Unknown sections or keys are rejected so a
typo never silently falls back to a default.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .evaluation import EvalSetting
from .metrics import SinkhornConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class DatasetConfig:
    n: int = 10000
    d: int = 6
    horizon: int = 10
    epsilon: float = 0.05
    cluster_separation: float = 2.0
    csv: str = ""  # optional initial cohort file replacing the synthetic one


@dataclass(frozen=True)
class ModelConfig:
    classifier_hidden: tuple[int, int] = (32, 64)
    generator_hidden: tuple[int, int] = (64, 64)
    noise_dim: int = 6


@dataclass(frozen=True)
class EvaluationConfig:
    setting1_T: int = 10
    setting2_start: int = 10
    setting2_T: int = 19
    n_eval: int = 0
    n_repeats: int = 5
    reference: str = "ground_truth"

    def setting(self, which: int) -> EvalSetting:
        common = dict(n_eval=self.n_eval, n_repeats=self.n_repeats)
        if which == 1:
            return EvalSetting.setting1(self.setting1_T, **common)
        if which == 2:
            return EvalSetting.setting2(self.setting2_start, self.setting2_T, **common)
        raise ConfigError(f"setting must be 1 or 2, got {which}")


_TRAIN_KEYS = (
    "lambda_long",
    "lambda_util",
    "lambda_local",
    "gamma_mmd",
    "learning_rate",
    "batch_size",
    "epochs",
    "gan_rounds",
    "rgd_rounds",
    "inner_steps",
    "target_T",
    "split_ratios",
    "penalty_weight",
    "convergence_tol",
)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: dict = field(default_factory=dict)
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            **self.training,
            seed=self.seed,
            classifier_hidden=self.model.classifier_hidden,
            generator_hidden=self.model.generator_hidden,
            noise_dim=self.model.noise_dim,
            sinkhorn=self.sinkhorn,
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "dataset": dataclasses.asdict(self.dataset),
            "model": dataclasses.asdict(self.model),
            "training": {k: getattr(self.train_config(), k) for k in _TRAIN_KEYS},
            "sinkhorn": dataclasses.asdict(self.sinkhorn),
            "evaluation": dataclasses.asdict(self.evaluation),
        }

    def fingerprint(self) -> str:
        """Hash of the canonical resolved configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        cfg = dataclasses.replace(self, seed=int(seed))
        cfg.train_config()
        return cfg


def _parse_value(section: str, key: str, raw: str, default):
    where = f"[{section}] {key}"
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p for p in raw.replace(" ", "").split(",") if p]
            typ = type(default[0])
            if len(parts) != len(default):
                raise ValueError(f"expected {len(default)} comma-separated values")
            return tuple(typ(p) for p in parts)
        return raw.strip()
    except ValueError as err:
        raise ConfigError(f"{where}: cannot parse {raw!r} ({err})") from err


def _section(parser, name: str, defaults: dict) -> dict:
    if not parser.has_section(name):
        return {}
    out = {}
    for key, raw in parser.items(name):
        if key not in defaults:
            raise ConfigError(f"[{name}] {key}: unknown key (allowed: {', '.join(sorted(defaults))})")
        out[key] = _parse_value(name, key, raw, defaults[key])
    return out


_TRAIN_DEFAULTS = {k: getattr(TrainConfig(), k) for k in _TRAIN_KEYS}


def _lower_keys(d: dict) -> dict:
    return {k.lower(): v for k, v in d.items()}


def parse_config(text: str, seed_override: int | None = None) -> ExperimentConfig:
    """Parse and fully validate a configuration document."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"malformed configuration: {err}") from err
    known = {"experiment", "dataset", "model", "training", "sinkhorn", "evaluation"}
    for sec in parser.sections():
        if sec not in known:
            raise ConfigError(f"[{sec}]: unknown section (allowed: {', '.join(sorted(known))})")

    exp = _section(parser, "experiment", {"seed": 0})
    ds = _section(parser, "dataset", dataclasses.asdict(DatasetConfig()))
    model = _section(parser, "model", dataclasses.asdict(ModelConfig()))
    # configparser lower-cases keys; map back to the field names
    train_lower = _section(parser, "training", _lower_keys(_TRAIN_DEFAULTS))
    train = {k: train_lower[k.lower()] for k in _TRAIN_KEYS if k.lower() in train_lower}
    sk = _section(parser, "sinkhorn", dataclasses.asdict(SinkhornConfig()))
    ev_lower = _section(parser, "evaluation", _lower_keys(dataclasses.asdict(EvaluationConfig())))
    ev_names = {f.name.lower(): f.name for f in dataclasses.fields(EvaluationConfig)}
    ev = {ev_names[k]: v for k, v in ev_lower.items()}

    seed = exp.get("seed", 0) if seed_override is None else int(seed_override)
    if seed < 0:
        raise ConfigError("[experiment] seed: must be nonnegative")
    try:
        dataset = DatasetConfig(**ds)
        model_cfg = ModelConfig(**model)
        sinkhorn = SinkhornConfig(**sk)
        evaluation = EvaluationConfig(**ev)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    cfg = ExperimentConfig(seed, dataset, model_cfg, train, sinkhorn, evaluation)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    d = cfg.dataset
    if d.n < 2:
        raise ConfigError("[dataset] n: need at least 2 individuals")
    if d.d < 1:
        raise ConfigError("[dataset] d: must be at least 1")
    if d.horizon < 1:
        raise ConfigError("[dataset] horizon: must be at least 1")
    if d.epsilon < 0:
        raise ConfigError("[dataset] epsilon: must be nonnegative")
    m = cfg.model
    if min(m.classifier_hidden) < 1 or min(m.generator_hidden) < 1:
        raise ConfigError("[model] hidden sizes must be positive")
    if m.noise_dim < 1:
        raise ConfigError("[model] noise_dim: must be at least 1")
    try:
        cfg.train_config()
    except ValueError as err:
        name = str(err).split(" ", 1)[0]
        raise ConfigError(f"[training] {name}: {err}") from err
    ev = cfg.evaluation
    if ev.reference not in ("ground_truth", "h_omega"):
        raise ConfigError("[evaluation] reference: must be ground_truth or h_omega")
    try:
        ev.setting(1)
        ev.setting(2)
    except ValueError as err:
        raise ConfigError(f"[evaluation] {err}") from err


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read configuration {path}: {err}") from err
    return parse_config(text, seed_override)


def default_config_text() -> str:
    """A complete configuration file listing every default."""
    cfg = ExperimentConfig()
    lines = ["[experiment]", f"seed = {cfg.seed}", ""]

    def fmt(v):
        if isinstance(v, tuple):
            return ", ".join(str(x) for x in v)
        return str(v).lower() if isinstance(v, bool) else str(v)

    for name, obj in (("dataset", cfg.dataset), ("model", cfg.model)):
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {fmt(v)}" for k, v in dataclasses.asdict(obj).items())
        lines.append("")
    lines.append("[training]")
    lines.extend(f"{k} = {fmt(v)}" for k, v in _TRAIN_DEFAULTS.items())
    lines.append("")
    for name, obj in (("sinkhorn", cfg.sinkhorn), ("evaluation", cfg.evaluation)):
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {fmt(v)}" for k, v in dataclasses.asdict(obj).items())
        lines.append("")
    return "\n".join(lines)
