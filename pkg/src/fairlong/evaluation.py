"""Evaluation protocols: interventional rollouts of a decision model through
the learned generator, scored per step against a reference classifier, plus
report assembly and comparison tables.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tensor
from .metrics import S_MINUS, S_PLUS, SinkhornConfig, direct_discrimination, group_divergence
from .models import DecisionFn, Generator, Module, as_column
from .seeding import derive_rng
from .simulator import Cohort, GroundTruthModel, _atomic_write_text, _fmt

THRESHOLD = 0.5


@dataclass(frozen=True)
class EvalSetting:
    """Evaluated step range [start_step, target_T] and repeat count."""

    target_T: int = 10
    start_step: int = 1
    horizon: int = 10
    n_eval: int = 0  # 0 means the whole cohort
    n_repeats: int = 5

    def __post_init__(self):
        if self.start_step < 1:
            raise ValueError("start_step must be at least 1")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.target_T != self.start_step + self.horizon - 1:
            raise ValueError(
                f"target_T ({self.target_T}) must equal start_step + horizon - 1 "
                f"({self.start_step + self.horizon - 1})"
            )
        if self.n_repeats < 1:
            raise ValueError("n_repeats must be at least 1")
        if self.n_eval < 0:
            raise ValueError("n_eval must be nonnegative")

    @classmethod
    def setting1(cls, target_T: int = 10, **kw) -> "EvalSetting":
        return cls(target_T=target_T, start_step=1, horizon=target_T, **kw)

    @classmethod
    def setting2(cls, start_step: int = 10, target_T: int = 19, **kw) -> "EvalSetting":
        return cls(target_T=target_T, start_step=start_step, horizon=target_T - start_step + 1, **kw)

    @property
    def label(self) -> str:
        return f"range-[{self.start_step},{self.target_T}]"

    @property
    def steps(self) -> list[int]:
        return list(range(self.start_step, self.target_T + 1))


@dataclass
class StepRecord:
    t: int
    accuracy: float
    local_unfairness: float
    accuracy_std: float = 0.0
    local_unfairness_std: float = 0.0


@dataclass
class FairnessReport:
    model_name: str
    setting: EvalSetting
    per_step: list[StepRecord]
    long_term_j1: float
    long_term_j1_std: float
    seeds_used: list[int]
    converged: list[bool]
    reference: str = "ground_truth"
    cohort_source: str = "initial cohort"
    long_term_j1_runs: list[float] = field(default_factory=list)

    def __post_init__(self):
        ts = [r.t for r in self.per_step]
        if ts != self.setting.steps:
            raise ValueError(f"per_step covers steps {ts}, expected {self.setting.steps}")
        for r in self.per_step:
            if not 0.0 <= r.accuracy <= 1.0:
                raise ValueError(f"accuracy {r.accuracy} at step {r.t} outside [0, 1]")

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([r.accuracy for r in self.per_step]))

    @property
    def mean_local_unfairness(self) -> float:
        return float(np.mean([r.local_unfairness for r in self.per_step]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["setting"] = {**asdict(self.setting), "label": self.setting.label}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "FairnessReport":
        d = dict(d)
        setting = dict(d.pop("setting"))
        setting.pop("label", None)
        d["setting"] = EvalSetting(**setting)
        d["per_step"] = [StepRecord(**r) for r in d["per_step"]]
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def per_step_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "accuracy", "local_unfairness"])
        for r in self.per_step:
            w.writerow([r.t, _fmt(r.accuracy), _fmt(r.local_unfairness)])
        return buf.getvalue()

    def write(self, directory, stem: str | None = None) -> tuple[str, str]:
        stem = stem or self.model_name
        os.makedirs(directory, exist_ok=True)
        jpath = os.path.join(directory, f"{stem}.json")
        cpath = os.path.join(directory, f"{stem}_per_step.csv")
        _atomic_write_text(jpath, self.to_json() + "\n")
        _atomic_write_text(cpath, self.per_step_csv())
        return jpath, cpath


def load_report(path) -> FairnessReport:
    with open(path, encoding="utf-8") as fh:
        return FairnessReport.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# rollouts
# --------------------------------------------------------------------------


def _frozen_fn(fn):
    return fn.frozen() if isinstance(fn, Module) else fn


def _probabilities(fn: DecisionFn, s: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = fn(as_column(s), Tensor(x))
    out = out.data if isinstance(out, Tensor) else np.asarray(out, dtype=np.float64)
    return out.reshape(-1)


def _check_groups(s: np.ndarray) -> None:
    if not (s == S_PLUS).any() or not (s == S_MINUS).any():
        raise ValueError("evaluation cohort must contain both sensitive groups")


def _select(cohort: Cohort, n_eval: int) -> Cohort:
    if n_eval == 0 or n_eval >= cohort.n:
        return cohort
    return cohort.subset(np.arange(n_eval))


def prepare_setting2_cohort(
    gen: Generator,
    policy: DecisionFn,
    cohort: Cohort,
    start_step: int = 10,
    seed: int = 0,
    noise_dim: int | None = None,
) -> Cohort:
    """Roll ``policy`` through the generator once (sampled decisions, fixed
    seed) and return the step-``start_step`` features as a new cohort."""
    if start_step < 1:
        raise ValueError("start_step must be at least 1")
    if start_step == 1:
        return Cohort(cohort.s.copy(), cohort.x1.copy())
    rng = derive_rng(seed, "eval", "setting2-prefix")
    dz = gen.noise_dim if noise_dim is None else noise_dim
    noise = rng.standard_normal((cohort.n, start_step - 1, dz))
    xs, _ = gen.frozen().rollout(_frozen_fn(policy), cohort.s, cohort.x1, noise, mode="sampled", rng=rng)
    return Cohort(cohort.s.copy(), xs[-1].data.copy())


def interventional_rollout(
    decision_fn: DecisionFn, gen: Generator, cohort: Cohort, horizon: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Feature matrices for ``horizon`` steps under sampled decisions."""
    noise = rng.standard_normal((cohort.n, horizon - 1, gen.noise_dim))
    xs, _ = gen.rollout(decision_fn, cohort.s, cohort.x1, noise, mode="sampled", rng=rng)
    return [x.data for x in xs]


def evaluate_model(
    decision_fn: DecisionFn,
    gen: Generator,
    gt: GroundTruthModel,
    cohort: Cohort,
    setting: EvalSetting,
    sinkhorn_cfg: SinkhornConfig | None = None,
    seed: int = 0,
    model_name: str = "model",
    reference_fn: DecisionFn | None = None,
    reference: str = "ground_truth",
    cohort_source: str = "initial cohort",
) -> FairnessReport:
    """Score ``decision_fn`` on ``n_repeats`` generator rollouts.

    ``cohort`` holds the step-``start_step`` features. Accuracy at a step is
    the agreement of thresholded decisions with the reference classifier
    (the ground truth unless ``reference_fn`` is given) at the same rows.
    """
    cohort = _select(cohort, setting.n_eval)
    _check_groups(cohort.s)
    fn = _frozen_fn(decision_fn)
    ref = _frozen_fn(reference_fn) if reference_fn is not None else gt.classifier
    gen = gen.frozen()
    minus = np.nonzero(cohort.s == S_MINUS)[0]
    acc = np.empty((setting.n_repeats, setting.horizon))
    local = np.empty_like(acc)
    j1, conv, seeds = [], [], []
    for r in range(setting.n_repeats):
        rng = derive_rng(seed, "eval", r)
        seeds.append(r)
        xs = interventional_rollout(fn, gen, cohort, setting.horizon, rng)
        for k, x in enumerate(xs):
            pred = _probabilities(fn, cohort.s, x) >= THRESHOLD
            truth = _probabilities(ref, cohort.s, x) >= THRESHOLD
            acc[r, k] = float(np.mean(pred == truth))
            local[r, k] = direct_discrimination(fn, x[minus])
        res = group_divergence(cohort.s, Tensor(xs[-1]), sinkhorn_cfg)
        j1.append(res.value.item())
        conv.append(bool(res.converged))
    per_step = [
        StepRecord(
            t,
            float(acc[:, k].mean()),
            float(local[:, k].mean()),
            float(acc[:, k].std()),
            float(local[:, k].std()),
        )
        for k, t in enumerate(setting.steps)
    ]
    return FairnessReport(
        model_name,
        setting,
        per_step,
        float(np.mean(j1)),
        float(np.std(j1)),
        seeds,
        conv,
        reference,
        cohort_source,
        j1,
    )


# --------------------------------------------------------------------------
# comparison
# --------------------------------------------------------------------------


@dataclass
class ComparisonRow:
    model: str
    mean_accuracy: float
    mean_local_unfairness: float
    long_term_j1: float


@dataclass
class ComparisonTable:
    setting: EvalSetting
    rows: list[ComparisonRow]
    series: dict[str, list[StepRecord]]

    def ranking(self, column: str) -> list[str]:
        """Model names best-first: accuracy descending, unfairness ascending."""
        if column not in ("mean_accuracy", "mean_local_unfairness", "long_term_j1"):
            raise ValueError(f"unknown column {column!r}")
        sign = -1.0 if column == "mean_accuracy" else 1.0
        return [r.model for r in sorted(self.rows, key=lambda r: sign * getattr(r, column))]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "mean_accuracy", "mean_local_unfairness", "long_term_j1"])
        for r in self.rows:
            w.writerow([r.model, _fmt(r.mean_accuracy), _fmt(r.mean_local_unfairness), _fmt(r.long_term_j1)])
        return buf.getvalue()


def compare_models(reports: Sequence[FairnessReport]) -> ComparisonTable:
    if len(reports) < 2:
        raise ValueError("comparison needs at least two reports")
    setting = reports[0].setting
    for rep in reports[1:]:
        if rep.setting != setting:
            raise ValueError(
                f"setting mismatch: {rep.model_name} uses {rep.setting.label}, "
                f"{reports[0].model_name} uses {setting.label}"
            )
    names = [r.model_name for r in reports]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate model names in comparison: {names}")
    rows = [
        ComparisonRow(r.model_name, r.mean_accuracy, r.mean_local_unfairness, r.long_term_j1) for r in reports
    ]
    return ComparisonTable(setting, rows, {r.model_name: list(r.per_step) for r in reports})


# --------------------------------------------------------------------------
# raw clouds for external 2-D embedding
# --------------------------------------------------------------------------


def emit_projection_data(clouds: Mapping[int, np.ndarray], path) -> None:
    """Write ``group,x0..x{d-1}`` rows for every group's feature cloud."""
    if not clouds:
        raise ValueError("no feature clouds given")
    d = None
    lines = []
    for group, cloud in clouds.items():
        arr = np.atleast_2d(np.asarray(cloud, dtype=np.float64))
        if arr.size == 0:
            raise ValueError(f"feature cloud for group {group} is empty")
        if d is None:
            d = arr.shape[1]
        elif arr.shape[1] != d:
            raise ValueError("feature clouds differ in dimension")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"feature cloud for group {group} has non-finite values")
        lines.extend(",".join([str(int(group))] + [_fmt(v) for v in row]) for row in arr)
    header = ",".join(["group"] + [f"x{k}" for k in range(d)])
    _atomic_write_text(path, "\n".join([header, *lines]) + "\n")


def read_projection_data(path) -> dict[int, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "group":
        raise ValueError(f"{path}: missing projection header")
    out: dict[int, list[list[float]]] = {}
    for row in rows[1:]:
        out.setdefault(int(row[0]), []).append([float(v) for v in row[1:]])
    return {g: np.array(v) for g, v in out.items()}
