"""Learning phases: decision classifier fitting (plain and with DP/EO
penalties), adversarial training of the recurrent generator, and repeated
gradient descent on the long-term fair objective.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tensor
from .metrics import S_MINUS, S_PLUS, SinkhornConfig, direct_discrimination_tensor, group_divergence, mmd_rbf
from .models import Discriminator, Generator, MlpClassifier, Module
from .seeding import derive_rng, derive_seed
from .simulator import Cohort, GroundTruthModel, TimeSeriesDataset

log = logging.getLogger(__name__)

LogFn = Callable[[dict], None]


@dataclass
class TrainConfig:
    """Hyperparameters shared by all learning phases.

    Loss weights default to values suited to the synthetic loan data. Epoch
    and round counts are sized for a single CPU core.
    """

    lambda_long: float = 128.4
    lambda_util: float = 1.0
    lambda_local: float = 2.1
    gamma_mmd: float = 100.0
    learning_rate: float = 1e-3
    batch_size: int = 512
    epochs: int = 30
    gan_rounds: int = 200
    rgd_rounds: int = 20
    inner_steps: int = 1
    target_T: int = 10
    seed: int = 0
    split_ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    classifier_hidden: tuple[int, int] = (32, 64)
    generator_hidden: tuple[int, int] = (64, 64)
    noise_dim: int = 6
    penalty_weight: float = 10.0
    convergence_tol: float = 1e-6
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)

    def __post_init__(self):
        for name in ("lambda_long", "lambda_util", "lambda_local", "gamma_mmd", "penalty_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        for name in ("batch_size", "inner_steps", "target_T", "noise_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        for name in ("epochs", "gan_rounds", "rgd_rounds"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        validate_ratios(self.split_ratios)

    def to_dict(self) -> dict:
        return asdict(self)


def validate_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    r = tuple(float(v) for v in ratios)
    if len(r) != 3 or any(not v > 0 for v in r) or abs(sum(r) - 1.0) > 1e-9:
        raise ValueError(f"split_ratios must be three positive numbers summing to 1, got {ratios}")
    return r


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Sequence[np.ndarray], lr: float) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("parameter, gradient and moment lists differ in length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch: parameter {p.shape}, gradient {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3):
        self.params = list(params)
        self.lr = lr
        self.state = AdamState.for_params(self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.state, self.params, [p.grad for p in self.params], self.lr)


# --------------------------------------------------------------------------
# data handling
# --------------------------------------------------------------------------


def split_dataset(ds, ratios=(0.7, 0.1, 0.2), seed: int = 0):
    """Shuffle individuals and cut them into train/val/test (whole trajectories)."""
    r = validate_ratios(ratios)
    n = ds.n
    n_train = int(round(r[0] * n))
    n_val = int(round(r[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"split of {n} individuals by {r} leaves an empty part")
    perm = np.random.default_rng(seed).permutation(n)
    parts = perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]
    return tuple(ds.subset(np.sort(p)) for p in parts)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def _bce_with_logits(z: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy; ``target`` may hold soft labels."""
    t = Tensor(np.asarray(target, dtype=np.float64).reshape(z.shape))
    return ad.mean(ad.sub(ad.softplus(z), ad.mul(t, z)))


def _check_loss(loss: Tensor, where: str) -> float:
    v = loss.item()
    if not np.isfinite(v):
        raise NumericError(f"non-finite loss in {where}")
    return v


# --------------------------------------------------------------------------
# Phase 1 and baselines
# --------------------------------------------------------------------------


def _soft_gap(p: Tensor, s: np.ndarray, mask: np.ndarray | None = None) -> Tensor | None:
    keep = np.ones(s.shape[0], dtype=bool) if mask is None else mask
    plus = np.nonzero(keep & (s == S_PLUS))[0]
    minus = np.nonzero(keep & (s == S_MINUS))[0]
    if plus.size == 0 or minus.size == 0:
        return None
    return ad.abs_(ad.sub(ad.mean(p[plus]), ad.mean(p[minus])))


class ClassifierHistory(NamedTuple):
    epoch_loss: list[float]
    val_loss: list[float]
    skipped_penalty_batches: int


def train_baseline(
    train: TimeSeriesDataset,
    kind: str = "plain",
    penalty_weight: float = 0.0,
    cfg: TrainConfig | None = None,
    val: TimeSeriesDataset | None = None,
    log_fn: LogFn | None = None,
    phase: str | None = None,
) -> tuple[MlpClassifier, ClassifierHistory]:
    """Cross-entropy classifier over all (individual, step) rows, optionally
    penalised by the per-batch soft DP gap (``dp``) or EO gap over Y=1 rows
    (``eo``)."""
    cfg = cfg or TrainConfig()
    if kind not in ("plain", "dp", "eo"):
        raise ValueError(f"unknown baseline kind {kind!r}")
    if penalty_weight < 0:
        raise ValueError("penalty_weight must be nonnegative")
    if train.n == 0:
        raise ValueError("empty training set")
    phase = phase or f"baseline-{kind}"
    s, x, y = train.flat()
    model = MlpClassifier(train.d, cfg.classifier_hidden, rng=derive_rng(cfg.seed, "init", "classifier"))
    opt = Adam(model.parameters(), cfg.learning_rate)
    order = derive_rng(cfg.seed, "batch-order", "classifier")
    use_penalty = kind != "plain" and penalty_weight > 0
    history = ClassifierHistory([], [], 0)
    skipped = 0

    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for idx in _batches(x.shape[0], cfg.batch_size, order):
            z = model.logits(s[idx], x[idx])
            loss = _bce_with_logits(z, y[idx])
            if use_penalty:
                p = ad.sigmoid(z)
                gap = _soft_gap(p, s[idx], y[idx] == 1 if kind == "eo" else None)
                if gap is None:
                    skipped += 1
                else:
                    loss = ad.add(loss, ad.scale(gap, penalty_weight))
            total += _check_loss(loss, f"{phase} epoch {epoch}") * idx.size
            count += idx.size
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
        history.epoch_loss.append(total / count)
        record = {"phase": phase, "round": epoch, "loss": total / count, "seed": cfg.seed}
        if val is not None and val.n > 0:
            vs, vx, vy = val.flat()
            vl = _bce_with_logits(model.logits(vs, vx), vy).item()
            history.val_loss.append(vl)
            record["val_loss"] = vl
        if log_fn:
            log_fn(record)
    return model, history._replace(skipped_penalty_batches=skipped)


def train_phase1(train: TimeSeriesDataset, cfg: TrainConfig | None = None, **kw):
    """Unconstrained classifier h_omega fitted on every step of the series."""
    kw.setdefault("phase", "phase1")
    return train_baseline(train, "plain", 0.0, cfg, **kw)


def fit_ground_truth(cohort: Cohort, epsilon: float, cfg: TrainConfig | None = None) -> GroundTruthModel:
    """Train h* on (S, X^1, Y^1) and freeze it."""
    if cohort.y1 is None:
        raise ValueError("fitting the ground truth needs initial labels y1")
    cfg = cfg or TrainConfig()
    ds = TimeSeriesDataset(cohort.s, cohort.x1[:, None, :], cohort.y1[:, None])
    # own seed stream so h* and h_omega never share an initialisation
    gt_cfg = replace(cfg, seed=derive_seed(cfg.seed, "ground_truth"))
    model, _ = train_phase1(ds, gt_cfg, phase="ground_truth")
    return GroundTruthModel(model, epsilon)


# --------------------------------------------------------------------------
# Phase 2: RCGAN
# --------------------------------------------------------------------------


class GanHistory(NamedTuple):
    d_loss: list[float]
    g_loss: list[float]
    mmd: list[float]


def _series_matrix(xs: Sequence[Tensor]) -> Tensor:
    return ad.concat(list(xs), axis=1)


def train_rcgan(
    train: TimeSeriesDataset,
    classifier: MlpClassifier,
    cfg: TrainConfig | None = None,
    log_fn: LogFn | None = None,
) -> tuple[Generator, Discriminator, GanHistory]:
    """Alternate one discriminator and one generator Adam step per round.

    The classifier makes the generator's decisions and is never updated.
    Generated series start from the real X^1 of each sampled individual.
    """
    cfg = cfg or TrainConfig()
    decide = classifier.frozen()
    gen = Generator(train.d, cfg.noise_dim, cfg.generator_hidden, rng=derive_rng(cfg.seed, "init", "generator"))
    disc = Discriminator(train.d, cfg.generator_hidden, rng=derive_rng(cfg.seed, "init", "discriminator"))
    g_opt = Adam(gen.parameters(), cfg.learning_rate)
    d_opt = Adam(disc.parameters(), cfg.learning_rate)
    batch_rng = derive_rng(cfg.seed, "batch-order", "rcgan")
    noise_rng = derive_rng(cfg.seed, "noise", "rcgan")
    h = train.horizon
    history = GanHistory([], [], [])

    for rnd in range(cfg.gan_rounds):
        idx = np.sort(batch_rng.choice(train.n, size=min(cfg.batch_size, train.n), replace=False))
        s = train.s[idx]
        real = [Tensor(train.x[idx, t]) for t in range(h)]
        noise = noise_rng.standard_normal((idx.size, h - 1, cfg.noise_dim))

        # discriminator: maximise log D(real) + log(1 - D(fake))
        fake, _ = gen.rollout(decide, s, train.x[idx, 0], noise, mode="soft")
        fake_const = [f.detach() for f in fake]
        lr_real = disc.logits(real)
        lr_fake = disc.logits(fake_const)
        d_loss = ad.add(
            ad.mean(ad.concat([ad.softplus(ad.scale(l, -1.0)) for l in lr_real], axis=1)),
            ad.mean(ad.concat([ad.softplus(l) for l in lr_fake], axis=1)),
        )
        d_val = _check_loss(d_loss, f"rcgan discriminator round {rnd}")
        d_opt.zero_grad()
        ad.backward(d_loss)
        d_opt.step()

        # generator: minimise log(1 - D(fake)) + gamma * MMD(real, fake)
        lg = disc.logits(fake)
        adv = ad.scale(ad.mean(ad.concat([ad.softplus(l) for l in lg], axis=1)), -1.0)
        mmd = mmd_rbf(Tensor(train.x[idx].reshape(idx.size, -1)), _series_matrix(fake))
        g_loss = ad.add(adv, ad.scale(mmd, cfg.gamma_mmd))
        g_val = _check_loss(g_loss, f"rcgan generator round {rnd}")
        g_opt.zero_grad()
        disc.zero_grad()
        ad.backward(g_loss)
        g_opt.step()
        disc.zero_grad()

        history.d_loss.append(d_val)
        history.g_loss.append(g_val)
        history.mmd.append(mmd.item())
        if log_fn:
            log_fn({"phase": "rcgan", "round": rnd, "loss": g_val, "d_loss": d_val, "mmd": mmd.item(), "seed": cfg.seed})
    return gen, disc, history


# --------------------------------------------------------------------------
# Phase 3: long-term fair decision model
# --------------------------------------------------------------------------


class Objective(NamedTuple):
    value: Tensor
    j1: float
    j2: float
    j3: list[float]
    converged: bool


@dataclass
class RolloutBatch:
    """Individuals and noise shared by the observational and interventional rollouts."""

    s: np.ndarray
    x1: np.ndarray
    noise: np.ndarray  # (n, steps - 1, noise_dim)


def total_objective(
    theta: MlpClassifier,
    gen: Generator,
    obs_classifier: MlpClassifier,
    batch: RolloutBatch,
    cfg: TrainConfig,
    obs_horizon: int = 10,
) -> Objective:
    """lambda_long * J1(T) + lambda_util * J2 + lambda_local / T * sum_t J3(t).

    J2 is the cross-entropy of ``theta`` against the observational
    generator's decisions over steps 1..obs_horizon; J1 and J3 are computed on
    the rollout in which ``theta`` makes the decisions.
    """
    T = cfg.target_T
    steps = batch.noise.shape[1] + 1
    if T > steps or obs_horizon > steps:
        raise ValueError(f"batch noise covers {steps} steps, need {max(T, obs_horizon)}")
    obs = obs_classifier.frozen()
    terms = []

    j2 = Tensor(0.0)
    if cfg.lambda_util > 0:
        xs_obs, ys_obs = gen.rollout(obs, batch.s, batch.x1, batch.noise[:, : obs_horizon - 1], mode="soft")
        parts = [
            _bce_with_logits(theta.logits(batch.s, x.detach()), y.data) for x, y in zip(xs_obs, ys_obs)
        ]
        j2 = ad.scale(_sum(parts), 1.0 / len(parts))
        terms.append(ad.scale(j2, cfg.lambda_util))

    xs, _ = gen.rollout(theta, batch.s, batch.x1, batch.noise[:, : T - 1], mode="soft")
    res = group_divergence(batch.s, xs[T - 1], cfg.sinkhorn)
    j1 = res.value
    if cfg.lambda_long > 0:
        terms.append(ad.scale(j1, cfg.lambda_long))

    minus = np.nonzero(batch.s == S_MINUS)[0]
    j3 = [direct_discrimination_tensor(theta, x[minus]) for x in xs[:T]]
    if cfg.lambda_local > 0:
        terms.append(ad.scale(_sum(j3), cfg.lambda_local / T))

    value = _sum(terms) if terms else ad.scale(j1, 0.0)
    return Objective(value, j1.item(), j2.item(), [v.item() for v in j3], res.converged)


def _sum(ts: Sequence[Tensor]) -> Tensor:
    out = ts[0]
    for t in ts[1:]:
        out = ad.add(out, t)
    return out


class DeepLFHistory(NamedTuple):
    j1: list[float]
    j2: list[float]
    j3_mean: list[float]
    loss: list[float]
    param_hash: list[str]
    rounds: int
    converged: bool


def sample_rollout_batch(pool: Cohort, cfg: TrainConfig, steps: int, rng: np.random.Generator) -> RolloutBatch:
    n = min(cfg.batch_size, pool.n)
    idx = np.sort(rng.choice(pool.n, size=n, replace=False))
    noise = rng.standard_normal((n, steps - 1, cfg.noise_dim))
    return RolloutBatch(pool.s[idx], pool.x1[idx], noise)


def train_deeplf(
    gen: Generator,
    classifier_init: MlpClassifier,
    cfg: TrainConfig,
    pool: Cohort,
    obs_horizon: int = 10,
    log_fn: LogFn | None = None,
    on_round: Callable[[int, MlpClassifier], None] | None = None,
) -> tuple[MlpClassifier, DeepLFHistory]:
    """Repeated gradient descent: every round regenerates the interventional
    data with the current decision model, then takes ``inner_steps`` Adam
    steps on the total objective. The generator stays fixed.

    ``pool`` supplies the (S, X^1) rows the generator starts from.
    ``on_round(round, theta)`` is called after each round's update.
    """
    theta = classifier_init.clone()
    for p in theta.parameters():
        p.requires_grad = True
        p.zero_grad()
    gen = gen.frozen()
    obs = classifier_init.frozen()
    opt = Adam(theta.parameters(), cfg.learning_rate)
    rng = derive_rng(cfg.seed, "noise", "deeplf")
    steps = max(cfg.target_T, obs_horizon)
    hist = DeepLFHistory([], [], [], [], [], 0, False)
    converged = False
    rounds = 0

    for rnd in range(cfg.rgd_rounds):
        batch = sample_rollout_batch(pool, cfg, steps, rng)
        before = [p.data.copy() for p in theta.parameters()]
        hist.param_hash.append(theta.fingerprint())
        for _ in range(cfg.inner_steps):
            obj = total_objective(theta, gen, obs, batch, cfg, obs_horizon)
            loss = _check_loss(obj.value, f"deeplf round {rnd}")
            opt.zero_grad()
            ad.backward(obj.value)
            opt.step()
        rounds = rnd + 1
        hist.j1.append(obj.j1)
        hist.j2.append(obj.j2)
        hist.j3_mean.append(float(np.mean(obj.j3)))
        hist.loss.append(loss)
        if log_fn:
            log_fn(
                {
                    "phase": "deeplf",
                    "round": rnd,
                    "loss": loss,
                    "j1": obj.j1,
                    "j2": obj.j2,
                    "j3_mean": float(np.mean(obj.j3)),
                    "seed": cfg.seed,
                    "sinkhorn_converged": obj.converged,
                }
            )
        if on_round:
            on_round(rnd, theta)
        change = max(float(np.max(np.abs(p.data - b))) for p, b in zip(theta.parameters(), before))
        if change < cfg.convergence_tol:
            converged = True
            break
    for p in theta.parameters():
        p.zero_grad()
    return theta, hist._replace(rounds=rounds, converged=converged)


def parameter_hash(model: Module) -> str:
    return model.fingerprint()
