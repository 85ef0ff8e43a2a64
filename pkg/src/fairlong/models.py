"""Network architectures: MLP decision classifiers, GRU cells, the recurrent
generator and the recurrent discriminator.

All models keep their weights as ``Tensor`` leaves and expose them in a fixed
order through ``named_parameters()``; that order is also the checkpoint order.
Batched inputs are used throughout: ``s`` is an (n, 1) array of group labels
and ``x`` an (n, d) matrix of features.
"""

from __future__ import annotations

import copy
import hashlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

DecisionFn = Callable[[np.ndarray, Tensor], Tensor]


def _uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def as_column(s) -> np.ndarray:
    """Coerce a group-label vector (or scalar) into an (n, 1) float column."""
    arr = np.asarray(s, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != 1:
        raise ShapeError(f"group labels must be a vector, got shape {arr.shape}")
    return arr


def as_rows(x) -> Tensor:
    if isinstance(x, Tensor):
        return x if x.data.ndim == 2 else ad.reshape(x, (1, -1))
    arr = np.asarray(x, dtype=np.float64)
    return Tensor(arr if arr.ndim == 2 else arr.reshape(1, -1))


class Module:
    """Shared parameter bookkeeping."""

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def clone(self):
        """Deep copy with independent parameter storage."""
        return copy.deepcopy(self)

    def frozen(self):
        """Copy whose parameters do not track gradients."""
        out = copy.deepcopy(self)
        for p in out.parameters():
            p.requires_grad = False
            p.zero_grad()
        return out

    def load_values(self, values: Sequence[np.ndarray]) -> None:
        params = self.parameters()
        if len(values) != len(params):
            raise ShapeError(f"expected {len(params)} parameter arrays, got {len(values)}")
        for p, v in zip(params, values):
            v = np.asarray(v, dtype=np.float64)
            if v.shape != p.shape:
                raise ShapeError(f"parameter shape {p.shape} does not match value shape {v.shape}")
            p.data = v.copy()
            p.zero_grad()

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None, zero: bool = False):
        self.n_in, self.n_out = n_in, n_out
        if zero or rng is None:
            self.weight = Tensor(np.zeros((n_in, n_out)), requires_grad=True)
            self.bias = Tensor(np.zeros(n_out), requires_grad=True)
        else:
            self.weight = _uniform(rng, n_in, (n_in, n_out))
            self.bias = _uniform(rng, n_in, (n_out,))

    def named_parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"linear layer expects {self.n_in} inputs, got shape {x.shape}")
        return ad.add_bias(ad.matmul(x, self.weight), self.bias)


class MlpClassifier(Module):
    """Decision model P(Y=1 | s, x): FC(d+1 -> h1) -> ReLU -> FC(h1 -> h2) -> ReLU -> FC(h2 -> 1) -> sigmoid.

    The input row is the concatenation [x, s].
    """

    def __init__(
        self,
        n_features: int,
        hidden: tuple[int, int] = (32, 64),
        rng: np.random.Generator | None = None,
    ):
        self.n_features = n_features
        self.hidden = tuple(hidden)
        h1, h2 = self.hidden
        self.fc1 = Linear(n_features + 1, h1, rng)
        self.fc2 = Linear(h1, h2, rng)
        self.fc3 = Linear(h2, 1, rng)

    def named_parameters(self):
        out = []
        for name, layer in (("fc1", self.fc1), ("fc2", self.fc2), ("fc3", self.fc3)):
            out.extend((f"{name}.{k}", v) for k, v in layer.named_parameters())
        return out

    def logits(self, s, x) -> Tensor:
        x = as_rows(x)
        s = as_column(s)
        if x.shape[1] != self.n_features:
            raise ShapeError(f"classifier expects {self.n_features} features, got {x.shape[1]}")
        if s.shape[0] != x.shape[0]:
            raise ShapeError(f"{s.shape[0]} group labels for {x.shape[0]} feature rows")
        h = ad.concat([x, Tensor(s)], axis=1)
        h = ad.maximum(self.fc1(h), 0.0)
        h = ad.maximum(self.fc2(h), 0.0)
        return self.fc3(h)

    def __call__(self, s, x) -> Tensor:
        return ad.sigmoid(self.logits(s, x))

    def predict_proba(self, s, x) -> np.ndarray:
        return self(s, x).data[:, 0]


def mlp_forward(params: MlpClassifier, s, x) -> Tensor:
    """P(Y=1 | s, x) for one individual or a batch."""
    return params(s, x)


class GruCell(Module):
    """GRU update ``h' = (1 - z) * n + z * h`` with reset gate applied to ``h``."""

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator | None = None):
        self.n_in, self.n_hidden = n_in, n_hidden
        H = n_hidden
        if rng is None:
            mk = lambda shape: Tensor(np.zeros(shape), requires_grad=True)  # noqa: E731
        else:
            mk = lambda shape: _uniform(rng, H, shape)  # noqa: E731
        # update and reset gates are fused column-wise: [:, :H] update, [:, H:] reset
        self.w_gates = mk((n_in, 2 * H))
        self.u_gates = mk((H, 2 * H))
        self.b_gates = mk((2 * H,))
        self.w_cand = mk((n_in, H))
        self.u_cand = mk((H, H))
        self.b_cand = mk((H,))

    def named_parameters(self):
        return [
            ("w_gates", self.w_gates),
            ("u_gates", self.u_gates),
            ("b_gates", self.b_gates),
            ("w_cand", self.w_cand),
            ("u_cand", self.u_cand),
            ("b_cand", self.b_cand),
        ]

    def __call__(self, inp: Tensor, h_prev: Tensor) -> Tensor:
        inp, h_prev = as_rows(inp), as_rows(h_prev)
        H = self.n_hidden
        if inp.shape[1] != self.n_in or h_prev.shape[1] != H or inp.shape[0] != h_prev.shape[0]:
            raise ShapeError(
                f"GRU cell ({self.n_in}->{H}) got input {inp.shape} and state {h_prev.shape}"
            )
        gates = ad.sigmoid(
            ad.add_bias(ad.matmul(inp, self.w_gates) + ad.matmul(h_prev, self.u_gates), self.b_gates)
        )
        z = gates[:, :H]
        r = gates[:, H:]
        cand = ad.tanh(
            ad.add_bias(ad.matmul(inp, self.w_cand) + ad.matmul(r * h_prev, self.u_cand), self.b_cand)
        )
        return cand + z * (h_prev - cand)


def gru_cell(params: GruCell, inp, h_prev) -> Tensor:
    return params(inp, h_prev)


class Generator(Module):
    """Recurrent generator: hidden state from X^1, two stacked GRUs fed by
    [decision, s, noise], and an affine read-out to the feature space."""

    def __init__(
        self,
        n_features: int,
        noise_dim: int = 6,
        hidden: tuple[int, int] = (64, 64),
        rng: np.random.Generator | None = None,
    ):
        self.n_features = n_features
        self.noise_dim = noise_dim
        self.hidden = tuple(hidden)
        h1, h2 = self.hidden
        self.init = Linear(n_features, h1 + h2, rng)
        self.gru1 = GruCell(2 + noise_dim, h1, rng)
        self.gru2 = GruCell(h1, h2, rng)
        self.out = Linear(h2, n_features, rng)

    def named_parameters(self):
        out = []
        for name, mod in (("init", self.init), ("gru1", self.gru1), ("gru2", self.gru2), ("out", self.out)):
            out.extend((f"{name}.{k}", v) for k, v in mod.named_parameters())
        return out

    def rollout(
        self,
        decision_fn: DecisionFn,
        s,
        x1,
        noise,
        mode: str = "soft",
        rng: np.random.Generator | None = None,
    ) -> tuple[list[Tensor], list[Tensor]]:
        """Generate features and decisions for steps 1..horizon.

        ``noise`` has shape (n, horizon - 1, noise_dim); the horizon is
        inferred from it. Returns ``(xs, ys)`` with one (n, d) and one (n, 1)
        tensor per step. In soft mode the decisions are the probabilities of
        ``decision_fn``; in sampled mode they are Bernoulli draws from ``rng``.
        """
        if mode not in ("soft", "sampled"):
            raise ValueError(f"unknown decision mode {mode!r}")
        if mode == "sampled" and rng is None:
            raise ValueError("sampled decision mode requires an rng")
        s = as_column(s)
        x = as_rows(x1)
        n = x.shape[0]
        noise = np.asarray(noise, dtype=np.float64)
        if noise.ndim == 2:
            noise = noise[None]
        if noise.shape[0] != n or noise.shape[2] != self.noise_dim:
            raise ShapeError(f"noise shape {noise.shape} does not fit {n} rows of noise_dim {self.noise_dim}")
        if x.shape[1] != self.n_features or s.shape[0] != n:
            raise ShapeError(f"x1 shape {x.shape} / s shape {s.shape} do not fit generator")
        horizon = noise.shape[1] + 1
        s_t = Tensor(s)

        def decide(xt: Tensor) -> Tensor:
            p = decision_fn(s, xt)
            if mode == "soft":
                return p
            return Tensor((rng.random(n) < p.data[:, 0]).astype(np.float64).reshape(n, 1))

        xs = [x]
        ys = [decide(x)]
        if horizon == 1:
            return xs, ys
        h1_dim = self.hidden[0]
        h0 = ad.tanh(self.init(x))
        h1, h2 = h0[:, :h1_dim], h0[:, h1_dim:]
        for t in range(horizon - 1):
            inp = ad.concat([ys[-1], s_t, Tensor(noise[:, t, :])], axis=1)
            h1 = self.gru1(inp, h1)
            h2 = self.gru2(h1, h2)
            x = self.out(h2)
            xs.append(x)
            ys.append(decide(x))
        return xs, ys


def generator_rollout(gen: Generator, decision_fn, s, x1, noise, decision_mode="soft", rng=None):
    return gen.rollout(decision_fn, s, x1, noise, mode=decision_mode, rng=rng)


class Discriminator(Module):
    """Two stacked GRUs over the feature series and a per-step logit.

    The read-out layer starts at zero so every step scores 0.5 at
    initialisation.
    """

    def __init__(
        self,
        n_features: int,
        hidden: tuple[int, int] = (64, 64),
        rng: np.random.Generator | None = None,
    ):
        self.n_features = n_features
        self.hidden = tuple(hidden)
        h1, h2 = self.hidden
        self.gru1 = GruCell(n_features, h1, rng)
        self.gru2 = GruCell(h1, h2, rng)
        self.out = Linear(h2, 1, zero=True)

    def named_parameters(self):
        out = []
        for name, mod in (("gru1", self.gru1), ("gru2", self.gru2), ("out", self.out)):
            out.extend((f"{name}.{k}", v) for k, v in mod.named_parameters())
        return out

    def logits(self, series: Iterable[Tensor]) -> list[Tensor]:
        series = [as_rows(x) for x in series]
        if not series:
            raise ShapeError("discriminator needs at least one time step")
        n = series[0].shape[0]
        h1 = Tensor(np.zeros((n, self.hidden[0])))
        h2 = Tensor(np.zeros((n, self.hidden[1])))
        out = []
        for x in series:
            if x.shape != (n, self.n_features):
                raise ShapeError(f"discriminator expects ({n}, {self.n_features}) per step, got {x.shape}")
            h1 = self.gru1(x, h1)
            h2 = self.gru2(h1, h2)
            out.append(self.out(h2))
        return out

    def __call__(self, series: Iterable[Tensor]) -> list[Tensor]:
        return [ad.sigmoid(l) for l in self.logits(series)]


def discriminator_forward(disc: Discriminator, series) -> np.ndarray:
    """Per-step probabilities for a single (horizon, d) series."""
    arr = np.asarray(series.data if isinstance(series, Tensor) else series, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a (horizon, d) series, got shape {arr.shape}")
    probs = disc([Tensor(arr[t : t + 1]) for t in range(arr.shape[0])])
    return np.array([p.item() for p in probs])
