"""Ground-truth temporal SCM for the loan-style feedback loop.

Individuals carry a fixed group label ``s`` and a feature vector ``x``. At
every step a decision is drawn from the ground-truth classifier (or from a
deployed policy, which is the soft intervention), and the features move
along the gradient of the classifier's log-probability of a positive
outcome: up for approved individuals, down for rejected ones.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tensor
from .models import DecisionFn, MlpClassifier, as_column


@dataclass
class Cohort:
    s: np.ndarray
    x1: np.ndarray
    y1: np.ndarray | None = None

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.float64).reshape(-1)
        self.x1 = np.asarray(self.x1, dtype=np.float64)
        if self.x1.ndim != 2:
            raise ValueError(f"x1 must be an (n, d) matrix, got shape {self.x1.shape}")
        if self.s.shape[0] != self.x1.shape[0]:
            raise ValueError(f"{self.s.shape[0]} group labels for {self.x1.shape[0]} feature rows")
        if not np.isin(self.s, (0.0, 1.0)).all():
            raise ValueError("group labels must be 0 or 1")
        if self.y1 is not None:
            self.y1 = np.asarray(self.y1, dtype=np.float64).reshape(-1)
            if self.y1.shape != self.s.shape or not np.isin(self.y1, (0.0, 1.0)).all():
                raise ValueError("y1 must be a binary vector with one entry per individual")

    @property
    def n(self) -> int:
        return self.x1.shape[0]

    @property
    def d(self) -> int:
        return self.x1.shape[1]

    def subset(self, idx) -> "Cohort":
        return Cohort(self.s[idx], self.x1[idx], None if self.y1 is None else self.y1[idx])


@dataclass
class TimeSeriesDataset:
    s: np.ndarray  # (n,)
    x: np.ndarray  # (n, horizon, d)
    y: np.ndarray  # (n, horizon)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.float64).reshape(-1)
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.ndim != 3 or self.y.shape != self.x.shape[:2] or self.s.shape[0] != self.x.shape[0]:
            raise ValueError(
                f"inconsistent dataset shapes s={self.s.shape} x={self.x.shape} y={self.y.shape}"
            )
        if not np.all(np.isfinite(self.x)):
            raise ValueError("dataset features must be finite")
        if not np.isin(self.y, (0.0, 1.0)).all() or not np.isin(self.s, (0.0, 1.0)).all():
            raise ValueError("dataset labels and groups must be binary")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def horizon(self) -> int:
        return self.x.shape[1]

    @property
    def d(self) -> int:
        return self.x.shape[2]

    def subset(self, idx) -> "TimeSeriesDataset":
        return TimeSeriesDataset(self.s[idx], self.x[idx], self.y[idx])

    def cohort(self, step: int = 1) -> Cohort:
        return Cohort(self.s, self.x[:, step - 1, :], self.y[:, step - 1])

    def flat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All (individual, step) rows as ``(s, x, y)`` with shapes (N,), (N, d), (N,)."""
        n, h, d = self.x.shape
        return np.repeat(self.s, h), self.x.reshape(n * h, d), self.y.reshape(n * h)


@dataclass
class GroundTruthModel:
    classifier: MlpClassifier
    epsilon: float = 0.05

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        self.classifier = self.classifier.frozen()

    def __call__(self, s, x) -> Tensor:
        return self.classifier(s, x)


def generate_initial_cohort(n: int, d: int, cluster_separation: float = 2.0, seed: int = 0) -> Cohort:
    """Two-cluster Gaussian mixture with group label = cluster.

    Cluster means sit at +/- (separation / 2) * u with u = 1/sqrt(d) along
    every axis; both clusters have identity covariance. Labels come from a
    random linear scorer thresholded at its median, so half are positive.
    """
    if n < 2:
        raise ValueError("a cohort needs at least two individuals")
    if d < 1:
        raise ValueError("feature dimension must be at least 1")
    rng = np.random.default_rng(seed)
    u = np.full(d, 1.0 / np.sqrt(d))
    s = (rng.random(n) < 0.5).astype(np.float64)
    x = rng.standard_normal((n, d)) + np.outer(2.0 * s - 1.0, 0.5 * cluster_separation * u)
    w = rng.standard_normal(d)
    score = x @ w
    y = np.zeros(n)
    y[np.argsort(score, kind="stable")[n - n // 2 :]] = 1.0
    return Cohort(s, x, y)


def sample_decision(gt: GroundTruthModel, s, x, rng: np.random.Generator, policy: DecisionFn | None = None) -> np.ndarray:
    """Y ~ Bernoulli(h(s, x)) for every row; ``policy`` replaces the ground truth."""
    fn = gt.classifier if policy is None else policy
    p = fn(as_column(s), Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))).data[:, 0]
    return (rng.random(p.shape[0]) < p).astype(np.float64)


def feature_gradient(gt: GroundTruthModel, s, x) -> np.ndarray:
    """Row-wise gradient of -log h*(s, x) with respect to x."""
    xt = Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)), requires_grad=True)
    # -log sigmoid(z) = softplus(-z)
    loss = ad.sum_(ad.softplus(ad.scale(gt.classifier.logits(as_column(s), xt), -1.0)))
    ad.backward(loss)
    grad = xt.grad
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite feature gradient")
    return grad


def step_features(gt: GroundTruthModel, s, x, y) -> np.ndarray:
    """X^{t+1} = X^t - eps * (2Y - 1) * d(-log h*(S, X^t)) / dX^t."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("decisions must be 0 or 1")
    return x - gt.epsilon * (2.0 * y - 1.0) * feature_gradient(gt, s, x)


def roll_out_truth(
    gt: GroundTruthModel,
    cohort: Cohort,
    policy: DecisionFn | None,
    horizon: int,
    rng: np.random.Generator,
) -> TimeSeriesDataset:
    """Simulate ``horizon`` steps; ``policy=None`` is the observational process."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    n, d = cohort.n, cohort.d
    xs = np.empty((n, horizon, d))
    ys = np.empty((n, horizon))
    x = cohort.x1.copy()
    for t in range(horizon):
        xs[:, t] = x
        ys[:, t] = sample_decision(gt, cohort.s, x, rng, policy)
        if t + 1 < horizon:
            x = step_features(gt, cohort.s, x, ys[:, t])
    return TimeSeriesDataset(cohort.s.copy(), xs, ys)


# --------------------------------------------------------------------------
# CSV persistence: header id,t,s,x0..x{d-1},y; one row per (individual, step)
# --------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _header(d: int) -> list[str]:
    return ["id", "t", "s"] + [f"x{k}" for k in range(d)] + ["y"]


def write_dataset_csv(ds: TimeSeriesDataset, path, start_step: int = 1) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_header(ds.d))
    for i in range(ds.n):
        for t in range(ds.horizon):
            w.writerow(
                [i, t + start_step, int(ds.s[i])]
                + [_fmt(v) for v in ds.x[i, t]]
                + [int(ds.y[i, t])]
            )
    _atomic_write_text(path, buf.getvalue())


def write_cohort_csv(cohort: Cohort, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_header(cohort.d))
    for i in range(cohort.n):
        y = "" if cohort.y1 is None else int(cohort.y1[i])
        w.writerow([i, 1, int(cohort.s[i])] + [_fmt(v) for v in cohort.x1[i]] + [y])
    _atomic_write_text(path, buf.getvalue())


def _read_rows(path) -> tuple[int, list[tuple[int, int, float, list[float], float | None]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        d = len(header) - 4
        if d < 1 or header != _header(d):
            raise ValueError(f"{path}: expected header id,t,s,x0,...,x{{d-1}},y, got {','.join(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 4:
                raise ValueError(f"{path}: line {lineno}: expected {d + 4} fields, got {len(row)}")
            try:
                ident, t = int(row[0]), int(row[1])
                s = float(row[2])
                x = [float(v) for v in row[3 : 3 + d]]
                y = None if row[-1].strip() == "" else float(row[-1])
            except ValueError as err:
                raise ValueError(f"{path}: line {lineno}: malformed value ({err})") from None
            if s not in (0.0, 1.0):
                raise ValueError(f"{path}: line {lineno}: sensitive attribute s must be 0 or 1, got {row[2]}")
            if y is not None and y not in (0.0, 1.0):
                raise ValueError(f"{path}: line {lineno}: decision y must be 0 or 1, got {row[-1]}")
            if not all(np.isfinite(x)):
                raise ValueError(f"{path}: line {lineno}: non-finite feature value")
            rows.append((ident, t, s, x, y))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return d, rows


def load_initial_cohort_csv(path) -> Cohort:
    """Read a cohort: rows at the earliest step in the file, one per id."""
    d, rows = _read_rows(path)
    first = min(r[1] for r in rows)
    rows = sorted((r for r in rows if r[1] == first), key=lambda r: r[0])
    ids = [r[0] for r in rows]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate id at step {first}")
    ys = [r[4] for r in rows]
    y1 = None if any(y is None for y in ys) else np.array(ys)
    return Cohort(np.array([r[2] for r in rows]), np.array([r[3] for r in rows]).reshape(len(rows), d), y1)


def load_dataset_csv(path) -> TimeSeriesDataset:
    d, rows = _read_rows(path)
    ids = sorted({r[0] for r in rows})
    steps = sorted({r[1] for r in rows})
    index = {i: k for k, i in enumerate(ids)}
    tindex = {t: k for k, t in enumerate(steps)}
    n, h = len(ids), len(steps)
    seen = set()
    for r in rows:
        if (r[0], r[1]) in seen:
            raise ValueError(f"{path}: duplicate row for id {r[0]} at step {r[1]}")
        seen.add((r[0], r[1]))
    if len(rows) != n * h:
        raise ValueError(f"{path}: expected {n * h} rows for {n} individuals x {h} steps, got {len(rows)}")
    s = np.full(n, np.nan)
    x = np.empty((n, h, d))
    y = np.empty((n, h))
    for ident, t, sv, xv, yv in rows:
        i = index[ident]
        if yv is None:
            raise ValueError(f"{path}: missing decision for id {ident} at step {t}")
        if not np.isnan(s[i]) and s[i] != sv:
            raise ValueError(f"{path}: id {ident} changes its sensitive attribute")
        s[i] = sv
        x[i, tindex[t]] = xv
        y[i, tindex[t]] = yv
    return TimeSeriesDataset(s, x, y)
