"""Adam optimizer and the mini-batch training loop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_io import Dataset
from .divergence import LossSpec
from .network import ArchitectureSpec, backward, forward, init_params


@dataclass(frozen=True)
class AdamConfig:
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.alpha <= 0 or self.epsilon <= 0:
            raise ValueError("alpha and epsilon must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int


def init_adam(n_params: int) -> AdamState:
    return AdamState(m=np.zeros(n_params), v=np.zeros(n_params), t=0)


def adam_step(state: AdamState, config: AdamConfig, params: np.ndarray,
              grad: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One Adam update; returns fresh arrays, inputs are untouched."""
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient and state shapes must agree")
    t = state.t + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * grad
    v = config.beta2 * state.v + (1.0 - config.beta2) * grad * grad
    m_hat = m / (1.0 - config.beta1 ** t)
    v_hat = v / (1.0 - config.beta2 ** t)
    new_params = params - config.alpha * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return new_params, AdamState(m=m, v=v, t=t)


@dataclass(frozen=True)
class TrainConfig:
    loss: LossSpec
    epochs: int
    batch_size: int = 128
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def accuracy(params: np.ndarray, arch: ArchitectureSpec, dataset: Dataset) -> float:
    probs = forward(params, arch, dataset.features).probs
    return float(np.mean(probs.argmax(axis=1) == dataset.labels))


def train(dataset: Dataset, arch: ArchitectureSpec, init_seed: int,
          train_cfg: TrainConfig, adam_cfg: AdamConfig = AdamConfig(),
          eval_set: Dataset | None = None,
          init_scheme: str = "glorot_normal"):
    """Mini-batch Adam training; returns (params, per-epoch metrics).

    Each epoch reshuffles the example order from a per-epoch derived seed
    and visits every example exactly once; the last short batch is kept.
    Metrics rows are (epoch, mean train loss, test accuracy or nan).
    """
    if dataset.n == 0:
        raise ValueError("empty training dataset")
    if dataset.num_classes != arch.output_classes:
        raise ValueError("dataset classes do not match the architecture output")
    params = init_params(arch, init_scheme, init_seed)
    state = init_adam(params.shape[0])
    metrics = []
    n = dataset.n
    for epoch in range(1, train_cfg.epochs + 1):
        order = np.random.default_rng(train_cfg.shuffle_seed + epoch).permutation(n)
        loss_sum = 0.0
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            X = dataset.features[idx]
            y = dataset.labels[idx]
            trace = forward(params, arch, X)
            loss, grad_logits = train_cfg.loss.value_and_grad_logits(y, trace.logits)
            grad_params, _ = backward(trace, params, arch, grad_logits)
            params, state = adam_step(state, adam_cfg, params, grad_params)
            loss_sum += loss * len(idx)
        test_acc = accuracy(params, arch, eval_set) if eval_set is not None else float("nan")
        metrics.append((epoch, loss_sum / n, test_acc))
    return params, metrics
