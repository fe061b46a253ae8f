"""Adam + warmup/quarter-cosine schedule training for :class:`MaliteMN`."""

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidConfig, NumericalError
from . import ops

# schedule used for the published numbers (GPU-scale, kept for reference)
PAPER_EPOCHS = 1000
PAPER_WARMUP_STEPS = 5000


@dataclass(frozen=True)
class TrainConfig:
    lr_start: float = 1e-4
    lr_end: float = 5e-5
    warmup_steps: int = 100
    epochs: int = 20
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.lr_start >= self.lr_end > 0:
            raise InvalidConfig("need lr_start >= lr_end > 0")
        if self.warmup_steps < 0 or self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfig("warmup_steps >= 0, epochs >= 1, batch_size >= 1 required")


def lr_at(step, total_steps, cfg):
    """Learning rate for 0-based ``step`` out of ``total_steps``.

    Linear warmup to ``lr_start``, then a quarter cosine period that reaches
    ``lr_end`` exactly at the last step.
    """
    if step < cfg.warmup_steps:
        return cfg.lr_start * (step + 1) / cfg.warmup_steps
    span = total_steps - 1 - cfg.warmup_steps
    progress = 1.0 if span <= 0 else min((step - cfg.warmup_steps) / span, 1.0)
    return cfg.lr_end + (cfg.lr_start - cfg.lr_end) * math.cos(0.5 * math.pi * progress)


@dataclass
class TrainState:
    config: TrainConfig
    total_steps: int
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    last_lr: float = 0.0


def train_step(model, batch, state):
    """One forward/backward pass and Adam update; returns the batch loss."""
    x, y = batch
    cfg = state.config
    logits = model.forward(x, train=True)
    loss, dlogits = ops.softmax_cross_entropy(logits, y)
    if not math.isfinite(loss):
        raise NumericalError(
            f"non-finite loss {loss} at step {state.step} "
            f"(lr={lr_at(state.step, state.total_steps, cfg):.3g}, "
            f"max |logit|={np.abs(logits).max():.3g})"
        )
    model.backward(dlogits.astype(logits.dtype))
    lr = lr_at(state.step, state.total_steps, cfg)
    t = state.step + 1
    bc1 = 1 - cfg.beta1 ** t
    bc2 = 1 - cfg.beta2 ** t
    params = model.named_parameters()
    for name, g in model.named_grads().items():
        p = params[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * g * g
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)).astype(p.dtype)
    state.step += 1
    state.last_lr = lr
    return loss


def epoch_order(n, seed, epoch):
    """Sample order for one epoch; depends only on ``(seed, epoch)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch)])).permutation(n)


def fit(model, X, y, cfg, log=None):
    """Train in place on float images ``X`` (n, h, w, c) and int labels ``y``."""
    n = X.shape[0]
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    state = TrainState(cfg, cfg.epochs * steps_per_epoch)
    history = []
    for epoch in range(cfg.epochs):
        order = epoch_order(n, cfg.seed, epoch)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            losses.append(train_step(model, (X[idx], y[idx]), state))
        history.append(float(np.mean(losses)))
        if log is not None:
            log(epoch, history[-1], state.last_lr)
    return history
