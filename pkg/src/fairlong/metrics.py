"""Distribution distances and fairness measures.

Sinkhorn and MMD values are ``Tensor``s so they can sit inside a training
loss. The Sinkhorn gradient is taken at the converged transport plan by
implicit differentiation of its marginal constraints, not by unrolling the
iterations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import logsumexp

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

S_PLUS = 1.0
S_MINUS = 0.0


@dataclass
class WeightedSample:
    points: Tensor | np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        pts = self.points if isinstance(self.points, Tensor) else Tensor(self.points)
        if pts.data.ndim == 1:
            pts = ad.reshape(pts, (-1, 1))
        if pts.data.ndim != 2 or pts.shape[0] < 1:
            raise ShapeError(f"a weighted sample needs an (m, d) point matrix with m >= 1, got {pts.shape}")
        self.points = pts
        m = pts.shape[0]
        if self.weights is None:
            self.weights = np.full(m, 1.0 / m)
        else:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (m,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("weights must be nonnegative, one per point, and sum to 1")
            self.weights = w

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass
class SinkhornConfig:
    """``reg`` is absolute unless ``relative_reg`` is set, in which case the
    regularisation is ``reg * median(cost)`` of the problem being solved."""

    reg: float = 0.05
    relative_reg: bool = True
    max_iter: int = 500
    tol: float = 1e-6
    debias: bool = True

    def __post_init__(self):
        if not self.reg > 0:
            raise ValueError("sinkhorn reg must be positive")
        if self.max_iter < 1:
            raise ValueError("sinkhorn max_iter must be at least 1")
        if not self.tol > 0:
            raise ValueError("sinkhorn tol must be positive")


class SinkhornResult(NamedTuple):
    value: Tensor
    converged: bool
    iterations: int


# --------------------------------------------------------------------------
# optimal transport
# --------------------------------------------------------------------------


def wasserstein1_exact_1d(a, b) -> float:
    """Exact W1 between two equal-size 1-D samples with uniform weights."""
    a = np.sort(np.asarray(a, dtype=np.float64).reshape(-1))
    b = np.sort(np.asarray(b, dtype=np.float64).reshape(-1))
    if a.size != b.size:
        raise ValueError(f"exact 1-D oracle needs equal sizes, got {a.size} and {b.size}")
    if a.size == 0:
        raise ValueError("empty samples")
    return float(np.mean(np.abs(a - b)))


def _reg_schedule(cost: np.ndarray, reg: float) -> list[float]:
    regs = []
    r = float(cost.max()) if cost.size else reg
    while r > reg:
        regs.append(r)
        r *= 0.5
    regs.append(reg)
    return regs


def _semi_dual_plan(cost, log_a, log_b, g, r):
    """Row-exact plan for column potential ``g`` (f eliminated in closed form)."""
    z = log_b[None, :] + (g[None, :] - cost) / r
    f = -r * logsumexp(z, axis=1)
    return f, np.exp(log_a[:, None] + f[:, None] / r + z)


def _newton_refine(cost, a, b, g, r, budget, tol):
    """Damped Newton ascent on the semi-dual in ``g``.

    The Hessian (up to 1/r) is diag(colsum) - P^T diag(1/a) P, singular along
    constant shifts of ``g``; adding the all-ones matrix pins that direction.
    """
    log_a, log_b = np.log(a), np.log(b)
    f, plan = _semi_dual_plan(cost, log_a, log_b, g, r)
    viol = np.abs(plan.sum(axis=0) - b).sum()
    it = 0
    while it < budget:
        if viol < tol:
            return f, g, True, it
        col = plan.sum(axis=0)
        hess = np.diag(col) - plan.T @ (plan / a[:, None]) + 1.0
        try:
            step = r * np.linalg.solve(hess, b - col)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while True:
            it += 1
            g_new = g + t * step
            f_new, plan_new = _semi_dual_plan(cost, log_a, log_b, g_new, r)
            v_new = np.abs(plan_new.sum(axis=0) - b).sum()
            if v_new < viol or t < 1e-4 or it >= budget:
                break
            t *= 0.5
        if not v_new < viol:
            break
        g, f, plan, viol = g_new, f_new, plan_new, v_new
    return f, g, viol < tol, it


def _solve_log_sinkhorn(
    cost: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    reg: float,
    max_iter: int,
    tol: float,
    symmetric: bool = False,
    newton_after: int = 100,
    newton_max_size: int = 2000,
):
    """Log-domain Sinkhorn with epsilon-scaling warm start.

    Returns ``(f, g, converged, iterations)``. Convergence means the L1
    violation of the marginals fell below ``tol`` at the target
    regularisation. Symmetric problems (same cloud on both sides) use the
    averaged fixed-point update. When plain iterations stall after
    ``newton_after`` steps at the target regularisation, a damped Newton
    refinement takes over (problems up to ``newton_max_size`` columns).
    """
    log_a, log_b = np.log(a), np.log(b)
    f = np.zeros(cost.shape[0])
    g = np.zeros(cost.shape[1])
    regs = _reg_schedule(cost, reg)
    it = 0
    for stage, r in enumerate(regs):
        final = stage == len(regs) - 1
        budget = max_iter - it if final else 10
        if final and cost.shape[1] <= newton_max_size:
            budget = min(budget, newton_after)
        for _ in range(budget):
            it += 1
            lse = logsumexp(log_b[None, :] + (g[None, :] - cost) / r, axis=1)
            if final and np.abs(np.exp(log_a + f / r + lse) - a).sum() < tol:
                return f, g, True, it
            if symmetric:
                f = 0.5 * (f - r * lse)
                g = f
            else:
                f = -r * lse
                g = -r * logsumexp(log_a[:, None] + (f[:, None] - cost) / r, axis=0)
        if it >= max_iter and not final:
            break
        if final and it < max_iter:
            f, g, conv, extra = _newton_refine(cost, a, b, g, r, max_iter - it, tol)
            return f, g, conv, it + extra
    return f, g, False, it


def _transport_cost_grad(plan: np.ndarray, cost: np.ndarray, a: np.ndarray, b: np.ndarray, reg: float) -> np.ndarray:
    """d<P, C>/dC for the entropic plan P(C), by implicit differentiation
    of the marginal constraints at the fixed point."""
    pc = plan * cost
    wf, wg = pc.sum(axis=1), pc.sum(axis=0)
    # Schur complement on the g-block; the 11^T term fixes the gauge (f + c, g - c)
    pa = plan / a[:, None]
    schur = np.diag(b) - plan.T @ pa + 1.0
    lam_g = np.linalg.solve(schur, wg - pa.T @ wf)
    lam_f = (wf - plan @ lam_g) / a
    return plan * (1.0 + (lam_f[:, None] + lam_g[None, :] - cost) / reg)


def _transport_cost(A: WeightedSample, B: WeightedSample, reg: float, cfg: SinkhornConfig, symmetric: bool):
    cost = ad.pairwise_dist(A.points, B.points)
    f, g, converged, it = _solve_log_sinkhorn(
        cost.data, A.weights, B.weights, reg, cfg.max_iter, cfg.tol, symmetric=symmetric
    )
    plan = np.exp(
        np.log(A.weights)[:, None] + np.log(B.weights)[None, :] + (f[:, None] + g[None, :] - cost.data) / reg
    )
    value = float((plan * cost.data).sum())
    if not cost.requires_grad:
        return Tensor(value), converged, it
    grad = _transport_cost_grad(plan, cost.data, A.weights, B.weights, reg)
    linear = ad.sum_(ad.mul(Tensor(grad), cost))
    return ad.add(linear, Tensor(value - linear.data)), converged, it


def _order_key(S: WeightedSample):
    return (S.size, S.points.data.tobytes(), S.weights.tobytes())


def _median_cost(*samples: WeightedSample) -> float:
    pts = np.concatenate([s.points.data for s in samples], axis=0)
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    iu = np.triu_indices(pts.shape[0], k=1)
    med = float(np.median(d[iu])) if iu[0].size else 0.0
    return med


def resolve_reg(cfg: SinkhornConfig, A: WeightedSample, B: WeightedSample) -> float:
    if not cfg.relative_reg:
        return cfg.reg
    med = _median_cost(A, B)
    return cfg.reg * med if med > 0 else cfg.reg


def sinkhorn_divergence(A, B, cfg: SinkhornConfig | None = None) -> SinkhornResult:
    """Sinkhorn distance between two point clouds under Euclidean ground cost.

    The value is the transport cost <P, C> of the entropic-regularised plan
    P. With ``cfg.debias`` the result is W(A,B) - W(A,A)/2 - W(B,B)/2, which is
    zero when the two clouds coincide. The arguments are put in a canonical
    order before solving so the value is exactly symmetric.
    """
    cfg = cfg or SinkhornConfig()
    A = A if isinstance(A, WeightedSample) else WeightedSample(A)
    B = B if isinstance(B, WeightedSample) else WeightedSample(B)
    if A.dim != B.dim:
        raise ShapeError(f"point clouds have different dimensions {A.dim} and {B.dim}")
    if _order_key(B) < _order_key(A):
        A, B = B, A
    reg = resolve_reg(cfg, A, B)
    # identical clouds get the symmetric solver so the debiased value is exactly 0
    same = np.array_equal(A.points.data, B.points.data) and np.array_equal(A.weights, B.weights)
    value, conv, iters = _transport_cost(A, B, reg, cfg, symmetric=same)
    if cfg.debias:
        aa, conv_a, it_a = _transport_cost(A, A, reg, cfg, symmetric=True)
        bb, conv_b, it_b = _transport_cost(B, B, reg, cfg, symmetric=True)
        value = ad.sub(value, ad.scale(ad.add(aa, bb), 0.5))
        conv = conv and conv_a and conv_b
        iters = max(iters, it_a, it_b)
    return SinkhornResult(value, conv, iters)


# --------------------------------------------------------------------------
# MMD
# --------------------------------------------------------------------------


def median_bandwidth(A: np.ndarray, B: np.ndarray) -> float:
    pooled = np.concatenate([A, B], axis=0)
    d = pdist(pooled)
    med = float(np.median(d)) if d.size else 0.0
    return med if med > 0 else 1.0


def mmd_rbf(A, B, bandwidth: float | str = "median") -> Tensor:
    """Biased (V-statistic) squared MMD with k(x, y) = exp(-|x - y|^2 / (2 bw^2))."""
    A = A if isinstance(A, Tensor) else Tensor(np.atleast_2d(np.asarray(A, dtype=np.float64)))
    B = B if isinstance(B, Tensor) else Tensor(np.atleast_2d(np.asarray(B, dtype=np.float64)))
    if A.size == 0 or B.size == 0:
        raise ValueError("mmd_rbf needs nonempty samples")
    if A.data.ndim != 2 or B.data.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ShapeError(f"mmd_rbf: incompatible shapes {A.shape} and {B.shape}")
    if bandwidth == "median":
        bw = median_bandwidth(A.data, B.data)
    else:
        bw = float(bandwidth)
        if not bw > 0:
            raise ValueError("bandwidth must be positive")
    c = -1.0 / (2.0 * bw * bw)
    kaa = ad.mean(ad.exp(ad.scale(ad.pairwise_sqdist(A, A), c)))
    kbb = ad.mean(ad.exp(ad.scale(ad.pairwise_sqdist(B, B), c)))
    kab = ad.mean(ad.exp(ad.scale(ad.pairwise_sqdist(A, B), c)))
    return kaa + kbb - ad.scale(kab, 2.0)


# --------------------------------------------------------------------------
# group fairness
# --------------------------------------------------------------------------


def _decisions(decision_fn, s: np.ndarray, x) -> np.ndarray:
    out = decision_fn(s.reshape(-1, 1), x)
    out = out.data if isinstance(out, Tensor) else np.asarray(out, dtype=np.float64)
    return out.reshape(-1)


def demographic_parity(decision_fn, s, x) -> float:
    """|E[f | S=s+] - E[f | S=s-]| over the given individuals."""
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    plus, minus = s == S_PLUS, s == S_MINUS
    if not plus.any() or not minus.any():
        raise ValueError("demographic parity needs both groups to be nonempty")
    f = _decisions(decision_fn, s, x)
    return float(abs(f[plus].mean() - f[minus].mean()))


def equal_opportunity(decision_fn, s, x, y_true) -> float:
    """|E[f | Y=1, S=s+] - E[f | Y=1, S=s-]|."""
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    y = np.asarray(y_true, dtype=np.float64).reshape(-1)
    plus, minus = (s == S_PLUS) & (y == 1), (s == S_MINUS) & (y == 1)
    if not plus.any():
        raise ValueError("equal opportunity: cell (Y=1, S=s+) is empty")
    if not minus.any():
        raise ValueError("equal opportunity: cell (Y=1, S=s-) is empty")
    f = _decisions(decision_fn, s, x)
    return float(abs(f[plus].mean() - f[minus].mean()))


def direct_discrimination_tensor(decision_fn, x_minus: Tensor) -> Tensor:
    """Differentiable |E[h(s+, X) | S=s-] - E[h(s-, X) | S=s-]|."""
    x_minus = x_minus if isinstance(x_minus, Tensor) else Tensor(np.asarray(x_minus, dtype=np.float64))
    if x_minus.data.ndim == 1:
        x_minus = ad.reshape(x_minus, (-1, 1))
    n = x_minus.shape[0]
    if n == 0:
        raise ValueError("direct discrimination needs a nonempty s- group")
    flipped = decision_fn(np.full((n, 1), S_PLUS), x_minus)
    kept = decision_fn(np.full((n, 1), S_MINUS), x_minus)
    return ad.abs_(ad.sub(ad.mean(flipped), ad.mean(kept)))


def direct_discrimination(decision_fn, interventional_xs) -> float:
    return direct_discrimination_tensor(decision_fn, interventional_xs).item()


def long_term_unfairness(
    rollout_fn: Callable[[], tuple[np.ndarray, list[Tensor]]],
    T: int,
    cfg: SinkhornConfig | None = None,
) -> SinkhornResult:
    """Sinkhorn divergence between the two groups' step-T feature clouds.

    ``rollout_fn`` returns ``(s, xs)`` where ``xs[t-1]`` is the (n, d) feature
    tensor at step t under the deployed decision model.
    """
    s, xs = rollout_fn()
    if not 1 <= T <= len(xs):
        raise ValueError(f"target step {T} outside rollout horizon {len(xs)}")
    return group_divergence(s, xs[T - 1], cfg)


def group_divergence(s, x_T: Tensor, cfg: SinkhornConfig | None = None) -> SinkhornResult:
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    plus = np.nonzero(s == S_PLUS)[0]
    minus = np.nonzero(s == S_MINUS)[0]
    if plus.size == 0 or minus.size == 0:
        raise ValueError("long-term unfairness needs both groups to be nonempty")
    return sinkhorn_divergence(WeightedSample(x_T[plus]), WeightedSample(x_T[minus]), cfg)


# --------------------------------------------------------------------------
# bound check
# --------------------------------------------------------------------------


@dataclass
class SigmoidAffine:
    """Sensitive-attribute-unaware model x -> sigmoid(x @ w + b)."""

    w: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        self.w = np.atleast_1d(np.asarray(self.w, dtype=np.float64))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        return 1.0 / (1.0 + np.exp(-(x @ self.w + self.b)))

    @property
    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.w)) / 4.0


class BoundCheck(NamedTuple):
    dp: float
    dp_bound: float
    eo: float
    eo_bound: float
    holds: bool
    distance: float
    dp_slack: float
    eo_slack: float


def verify_proposition1(
    f_model: SigmoidAffine,
    g_model: SigmoidAffine,
    groups: tuple[WeightedSample, WeightedSample],
    base_rate: float | None = None,
    rng: np.random.Generator | None = None,
    sinkhorn_cfg: SinkhornConfig | None = None,
) -> BoundCheck:
    """Empirical check of DP(f) <= l_f d and EO(f) <= (l_f + l_g) / P(y) d.

    Labels are drawn from ``g_model``. The group distance ``d`` is the exact
    sorted-sample W1 for equal-size 1-D groups and a Sinkhorn divergence
    otherwise. Each side gets a slack of 1e-6 plus three standard errors of
    its Monte-Carlo estimate.
    """
    plus, minus = groups
    xp, xm = plus.points.data, minus.points.data
    if xp.shape[0] == 0 or xm.shape[0] == 0:
        raise ValueError("both groups must be nonempty")
    rng = rng or np.random.default_rng(0)

    fp, fm = f_model(xp), f_model(xm)
    yp = rng.random(xp.shape[0]) < g_model(xp)
    ym = rng.random(xm.shape[0]) < g_model(xm)
    if not yp.any() or not ym.any():
        raise ValueError("a group has no positive labels")

    if xp.shape[1] == 1 and xp.shape[0] == xm.shape[0]:
        d = wasserstein1_exact_1d(xp[:, 0], xm[:, 0])
    else:
        d = sinkhorn_divergence(plus, minus, sinkhorn_cfg).value.item()

    p_y = float(base_rate) if base_rate is not None else float(np.concatenate([yp, ym]).mean())
    dp = float(abs(fp.mean() - fm.mean()))
    eo = float(abs(fp[yp].mean() - fm[ym].mean()))

    def se(*parts):
        return float(np.sqrt(sum(v.var(ddof=1) / v.size if v.size > 1 else 0.0 for v in parts)))

    dp_slack = 1e-6 + 3.0 * se(fp, fm)
    eo_slack = 1e-6 + 3.0 * se(fp[yp], fm[ym])
    dp_bound = f_model.lipschitz * d
    eo_bound = (f_model.lipschitz + g_model.lipschitz) / p_y * d
    holds = dp <= dp_bound + dp_slack and eo <= eo_bound + eo_slack
    return BoundCheck(dp, dp_bound, eo, eo_bound, holds, d, dp_slack, eo_slack)
