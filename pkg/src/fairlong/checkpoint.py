"""Bit-exact JSON checkpoints for model parameters.

Values are stored as ``float.hex`` strings so a load reproduces every
parameter exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .models import Discriminator, Generator, MlpClassifier, Module
from .simulator import GroundTruthModel, _atomic_write_text

KINDS = ("classifier", "generator", "discriminator", "ground_truth")
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    kind: str
    arch: dict
    names: list[str]
    shapes: list[list[int]]
    values: list[list[str]]
    config_fingerprint: str = ""
    seed_lineage: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown checkpoint kind {self.kind!r}")
        if not len(self.names) == len(self.shapes) == len(self.values):
            raise ValueError("checkpoint names, shapes and values differ in length")
        for name, shape, vals in zip(self.names, self.shapes, self.values):
            if int(np.prod(shape, dtype=np.int64)) != len(vals):
                raise ValueError(f"checkpoint tensor {name}: {len(vals)} values for shape {shape}")


def _encode(module: Module) -> tuple[list[str], list[list[int]], list[list[str]]]:
    names, shapes, values = [], [], []
    for name, p in module.named_parameters():
        names.append(name)
        shapes.append(list(p.shape))
        values.append([float(v).hex() for v in p.data.ravel()])
    return names, shapes, values


def _arch(module: Module) -> dict:
    if isinstance(module, MlpClassifier):
        return {"n_features": module.n_features, "hidden": list(module.hidden)}
    if isinstance(module, Generator):
        return {"n_features": module.n_features, "noise_dim": module.noise_dim, "hidden": list(module.hidden)}
    if isinstance(module, Discriminator):
        return {"n_features": module.n_features, "hidden": list(module.hidden)}
    raise TypeError(f"cannot checkpoint {type(module).__name__}")


def make_checkpoint(model, config_fingerprint: str = "", seed_lineage: dict | None = None, **extra) -> Checkpoint:
    if isinstance(model, GroundTruthModel):
        kind, module = "ground_truth", model.classifier
        extra = {**extra, "epsilon": float(model.epsilon).hex()}
    elif isinstance(model, MlpClassifier):
        kind, module = "classifier", model
    elif isinstance(model, Generator):
        kind, module = "generator", model
    elif isinstance(model, Discriminator):
        kind, module = "discriminator", model
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    names, shapes, values = _encode(module)
    return Checkpoint(kind, _arch(module), names, shapes, values, config_fingerprint, dict(seed_lineage or {}), extra)


def restore(ck: Checkpoint):
    """Rebuild the model object a checkpoint describes."""
    a = ck.arch
    if ck.kind in ("classifier", "ground_truth"):
        module = MlpClassifier(a["n_features"], tuple(a["hidden"]))
    elif ck.kind == "generator":
        module = Generator(a["n_features"], a["noise_dim"], tuple(a["hidden"]))
    else:
        module = Discriminator(a["n_features"], tuple(a["hidden"]))
    expected = [(n, list(p.shape)) for n, p in module.named_parameters()]
    if expected != list(zip(ck.names, ck.shapes)):
        raise ValueError(f"checkpoint tensors {list(zip(ck.names, ck.shapes))} do not match architecture {expected}")
    module.load_values(
        [np.array([float.fromhex(v) for v in vals], dtype=np.float64).reshape(shape) for vals, shape in zip(ck.values, ck.shapes)]
    )
    if ck.kind == "ground_truth":
        return GroundTruthModel(module, float.fromhex(ck.extra["epsilon"]))
    return module


def save_checkpoint(model, path, config_fingerprint: str = "", seed_lineage: dict | None = None, **extra) -> Checkpoint:
    ck = make_checkpoint(model, config_fingerprint, seed_lineage, **extra)
    doc = {"format": FORMAT_VERSION, **ck.__dict__}
    _atomic_write_text(path, json.dumps(doc, sort_keys=True) + "\n")
    return ck


def read_checkpoint(path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise ValueError(f"{path}: not a checkpoint file ({err})") from err
    if doc.pop("format", None) != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format")
    try:
        return Checkpoint(**doc)
    except TypeError as err:
        raise ValueError(f"{path}: malformed checkpoint ({err})") from err


def load_checkpoint(path, kind: str | None = None):
    ck = read_checkpoint(path)
    if kind is not None and ck.kind != kind:
        raise ValueError(f"{path}: expected a {kind} checkpoint, found {ck.kind}")
    return restore(ck)
