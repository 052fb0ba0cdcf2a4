"""Training losses: contrastive branch pair, credit-aware masking, corrective
regression toward the within-group positive mean, and the KL surrogate.

Conventions: every loss is a sum over latent coordinates and a mean over the
rollouts it ranges over (no division by the masked-coordinate count, so
masking genuinely shrinks gradient magnitude). Each function returns
(scalar loss, flat parameter gradient); the behavior and reference snapshots
never receive gradient.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyGroup, LayoutMismatch
from .flow import T_MIN, ModelBundle
from .mask import CreditMask, LatentLayout

WEIGHT_SCHEMES = ("uniform", "kernel")


@dataclass
class LossConfig:
    beta: float = 1.0
    lambda_cr: float = 0.5
    lambda_kl: float = 0.1
    weight_scheme: str = "uniform"
    kernel_tau: float = 1.0
    mask_enabled: bool = True

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.lambda_cr < 0 or self.lambda_kl < 0:
            raise ValueError("loss weights must be >= 0")
        if self.weight_scheme not in WEIGHT_SCHEMES:
            raise ValueError(f"weight_scheme must be one of {WEIGHT_SCHEMES}")
        if self.weight_scheme == "kernel" and self.kernel_tau <= 0:
            raise ValueError("kernel bandwidth must be > 0")


@dataclass
class RolloutGroup:
    """N same-condition rollouts with binary rewards and the shared mask."""

    condition: np.ndarray
    rollouts: np.ndarray  # (N, D)
    rewards: np.ndarray  # (N,) in {0, 1}
    layout: LatentLayout
    mask: CreditMask = None

    def __post_init__(self):
        self.rollouts = np.asarray(self.rollouts, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=int)
        if self.rollouts.ndim != 2 or self.rollouts.shape[0] != self.rewards.shape[0]:
            raise LayoutMismatch("rollouts and rewards disagree on group size")
        if self.rollouts.shape[1] != self.layout.dim:
            raise LayoutMismatch(
                f"latent dim {self.rollouts.shape[1]} vs layout dim {self.layout.dim}"
            )

    @property
    def size(self):
        return self.rollouts.shape[0]

    @property
    def positives(self):
        return np.nonzero(self.rewards == 1)[0]

    @property
    def negatives(self):
        return np.nonzero(self.rewards == 0)[0]

    @property
    def positive_mean(self):
        pos = self.positives
        if pos.size == 0:
            return None
        return self.rollouts[pos].mean(axis=0)


@dataclass
class SampleBatch:
    """One (t, eps) draw per rollout, shared by all loss components."""

    t: np.ndarray  # (N,)
    eps: np.ndarray  # (N, D)
    xt: np.ndarray  # (N, D)
    condition: np.ndarray = field(default=None)


def draw_sample_batch(group: RolloutGroup, rng) -> SampleBatch:
    n, d = group.rollouts.shape
    t = rng.uniform(T_MIN, 1.0, size=n)
    eps = rng.standard_normal((n, d))
    xt = (1.0 - t)[:, None] * group.rollouts + t[:, None] * eps
    return SampleBatch(t, eps, xt, group.condition)


def nft_branches(v_theta, v_old, beta):
    """Positive and negative reinforcement branches around the behavior field."""
    v_theta = np.asarray(v_theta, dtype=np.float64)
    v_old = np.asarray(v_old, dtype=np.float64)
    if v_theta.shape != v_old.shape:
        raise LayoutMismatch(f"branch shapes {v_theta.shape} vs {v_old.shape}")
    v_plus = (1.0 - beta) * v_old + beta * v_theta
    v_minus = (1.0 + beta) * v_old - beta * v_theta
    return v_plus, v_minus


def _mask_flat(group: RolloutGroup, config: LossConfig):
    if config.mask_enabled and group.mask is not None:
        return group.mask.flat(group.layout)
    return np.ones(group.layout.dim)


def _nft_impl(group, bundle, batch, config, m):
    if group.size == 0:
        raise EmptyGroup("cannot evaluate a reward loss on an empty group")
    beta = config.beta
    v_theta = bundle.current.velocity_batch(batch.xt, batch.t, batch.condition)
    v_old = bundle.behavior.velocity_batch(batch.xt, batch.t, batch.condition)
    v = batch.eps - group.rollouts
    v_plus, v_minus = nft_branches(v_theta, v_old, beta)
    res_p = (v_plus - v) * m
    res_m = (v_minus - v) * m
    r = group.rewards.astype(np.float64)[:, None]
    n = group.size
    loss = float(np.sum(r * res_p * res_p + (1.0 - r) * res_m * res_m) / n)
    adjoints = (r * (2.0 * beta) * res_p * m - (1.0 - r) * (2.0 * beta) * res_m * m) / n
    grad = bundle.current.vjp_batch(batch.xt, batch.t, batch.condition, adjoints)
    return loss, grad


def loss_nft(group: RolloutGroup, bundle: ModelBundle, batch: SampleBatch, config: LossConfig):
    """Reward-gated branch regression, unmasked (full latent support)."""
    return _nft_impl(group, bundle, batch, config, np.ones(group.layout.dim))


def loss_nft_credit_aware(group, bundle, batch, config):
    """Branch regression with both residuals gated by the group credit mask."""
    return _nft_impl(group, bundle, batch, config, _mask_flat(group, config))


def loss_corrective_reflow(group, bundle, batch, config, form="x0"):
    """Regress negatives' one-step x0 prediction toward the positive mean.

    ``form`` selects the x0-space expression or the algebraically equal
    velocity-space one t^2 ||M (v_theta - (x_t - mean)/t)||^2; the two are
    implemented independently and agree to rounding.
    """
    zeros = np.zeros(bundle.current.n_params)
    xbar = group.positive_mean
    neg = group.negatives
    if xbar is None or neg.size == 0:
        return 0.0, zeros
    m = _mask_flat(group, config)
    t = batch.t[neg]
    xt = batch.xt[neg]
    v_theta = bundle.current.velocity_batch(xt, t, batch.condition)
    n_neg = neg.size
    if form == "x0":
        xhat = xt - t[:, None] * v_theta
        diff = (xhat - xbar[None, :]) * m
        loss = float(np.sum(diff * diff) / n_neg)
        adjoints = (-2.0 * t[:, None]) * diff * m / n_neg
    elif form == "velocity":
        target = (xt - xbar[None, :]) / t[:, None]
        dv = (v_theta - target) * m
        loss = float(np.sum((t * t)[:, None] * dv * dv) / n_neg)
        adjoints = 2.0 * (t * t)[:, None] * dv * m / n_neg
    else:
        raise ValueError(f"unknown form {form!r}")
    grad = bundle.current.vjp_batch(xt, t, batch.condition, adjoints)
    return loss, grad


def corrective_weights(group: RolloutGroup, config: LossConfig):
    """Row-stochastic weights over positives for each negative rollout."""
    pos, neg = group.positives, group.negatives
    if config.weight_scheme == "uniform":
        return np.full((neg.size, pos.size), 1.0 / pos.size)
    m = _mask_flat(group, config)
    xn = group.rollouts[neg] * m
    xp = group.rollouts[pos] * m
    d = np.sum((xn[:, None, :] - xp[None, :, :]) ** 2, axis=2)
    logits = -d / config.kernel_tau
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def loss_corrective_weighted(group, bundle, batch, config):
    """Weighted-ERM corrective variant: per-negative weighted sum over positives."""
    zeros = np.zeros(bundle.current.n_params)
    pos, neg = group.positives, group.negatives
    if pos.size == 0 or neg.size == 0:
        return 0.0, zeros
    m = _mask_flat(group, config)
    w = corrective_weights(group, config)
    t = batch.t[neg]
    xt = batch.xt[neg]
    v_theta = bundle.current.velocity_batch(xt, t, batch.condition)
    xhat = xt - t[:, None] * v_theta
    diff = (xhat[:, None, :] - group.rollouts[pos][None, :, :]) * m
    loss = float(np.sum(w[:, :, None] * diff * diff) / neg.size)
    barycenter = w @ group.rollouts[pos]
    adjoints = (-2.0 * t[:, None]) * ((xhat - barycenter) * m) * m / neg.size
    grad = bundle.current.vjp_batch(xt, t, batch.condition, adjoints)
    return loss, grad


def loss_kl(bundle: ModelBundle, batch: SampleBatch, config: LossConfig):
    """Velocity-MSE surrogate to the frozen reference, unmasked."""
    v_theta = bundle.current.velocity_batch(batch.xt, batch.t, batch.condition)
    v_ref = bundle.reference.velocity_batch(batch.xt, batch.t, batch.condition)
    diff = v_theta - v_ref
    n = batch.xt.shape[0]
    loss = float(np.sum(diff * diff) / n)
    grad = bundle.current.vjp_batch(batch.xt, batch.t, batch.condition, 2.0 * diff / n)
    return loss, grad


def loss_total(group, bundle, batch, config):
    """Masked branch loss + lambda_cr corrective + lambda_kl KL.

    Returns (loss, gradient, components) where components maps each term's
    name to its unweighted scalar value.
    """
    total, grad = loss_nft_credit_aware(group, bundle, batch, config)
    parts = {"nft": total, "cr": 0.0, "kl": 0.0}
    if config.lambda_cr > 0:
        if config.weight_scheme == "kernel":
            cr_l, cr_g = loss_corrective_weighted(group, bundle, batch, config)
        else:
            cr_l, cr_g = loss_corrective_reflow(group, bundle, batch, config)
        parts["cr"] = cr_l
        total += config.lambda_cr * cr_l
        grad = grad + config.lambda_cr * cr_g
    if config.lambda_kl > 0:
        kl_l, kl_g = loss_kl(bundle, batch, config)
        parts["kl"] = kl_l
        total += config.lambda_kl * kl_l
        grad = grad + config.lambda_kl * kl_g
    return total, grad, parts
