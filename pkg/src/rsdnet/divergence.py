"""S-divergence loss family, its gradients, and baseline classification losses.

The family is indexed by a pair (beta, lambda) with derived constants
A = 1 + lambda*(1-beta) and B = beta - lambda*(1-beta).  Only pairs with
A > 0 and B > 0 are admissible; the beta = 1 line collapses to the squared
L2 distance for every lambda.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Probabilities are clamped away from 0 before any expression involving a
# negative power p**(B-1) (B < 1) or a logarithm; the plain loss values are
# finite on the closed simplex and are left unclamped.
PROB_CLIP = 1e-7


class InvalidTuningError(ValueError):
    """Rejected (beta, lambda) pair, with a machine-readable reason tag."""

    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason


@dataclass(frozen=True)
class TuningPair:
    """Admissible tuning pair with its derived constants a and b."""

    beta: float
    lam: float
    a: float
    b: float


def make_tuning(beta: float, lam: float) -> TuningPair:
    """Validate (beta, lambda) and compute the derived constants.

    Raises InvalidTuningError with reason tag ``beta_out_of_range``,
    ``a_nonpositive`` or ``b_nonpositive`` for pairs outside the
    admissible set.
    """
    beta = float(beta)
    lam = float(lam)
    if not np.isfinite(beta) or not np.isfinite(lam) or beta < 0 or beta > 1:
        raise InvalidTuningError(
            "beta_out_of_range", f"beta must lie in [0, 1], got {beta}"
        )
    a = 1.0 + lam * (1.0 - beta)
    b = beta - lam * (1.0 - beta)
    if a <= 0:
        raise InvalidTuningError(
            "a_nonpositive", f"A = 1 + lambda*(1-beta) = {a} must be positive"
        )
    if b <= 0:
        raise InvalidTuningError(
            "b_nonpositive", f"B = beta - lambda*(1-beta) = {b} must be positive"
        )
    return TuningPair(beta=beta, lam=lam, a=a, b=b)


def clip_probs(probs: np.ndarray) -> np.ndarray:
    return np.clip(probs, PROB_CLIP, 1.0 - PROB_CLIP)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(labels, probs):
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    single = probs.ndim == 1
    probs = np.atleast_2d(probs)
    if labels.shape[0] != probs.shape[0]:
        raise ValueError("labels and probs have mismatched batch sizes")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValueError("label index out of range")
    return labels, probs, single


def sd_loss(labels, probs, t: TuningPair):
    """Per-example S-divergence loss between one-hot labels and probs.

    Accepts a single example (int label, length-J probs) or a batch
    ((n,) labels, (n, J) probs).  Note the loss carries the constant
    J*A/B per example, so at probs equal to the one-hot label it equals
    (J-1)/B rather than 0.
    """
    labels, p, single = _as_batch(labels, probs)
    n, J = p.shape
    p_y = p[np.arange(n), labels]
    vals = (
        np.power(p, 1.0 + t.beta).sum(axis=1)
        - (1.0 + t.beta) / t.b * np.power(p_y, t.b)
        + J * t.a / t.b
    ) / t.a
    return float(vals[0]) if single else vals


def sd_loss_grad_probs(labels, probs, t: TuningPair):
    """Gradient of sd_loss with respect to the probability vector."""
    labels, p, single = _as_batch(labels, probs)
    n, J = p.shape
    pc = clip_probs(p)
    onehot = np.zeros((n, J))
    onehot[np.arange(n), labels] = 1.0
    g = (1.0 + t.beta) / t.a * (
        np.power(pc, t.beta) - onehot * np.power(pc, t.b - 1.0)
    )
    return g[0] if single else g


def _chain_softmax(grad_p: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Pull a gradient in probs back through softmax to the logits."""
    inner = (grad_p * p).sum(axis=-1, keepdims=True)
    return p * (grad_p - inner)


def sd_loss_grad_logits(labels, logits, t: TuningPair):
    """Gradient of sd_loss composed with softmax, with respect to logits."""
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    p = softmax(np.atleast_2d(logits))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    g = _chain_softmax(sd_loss_grad_probs(labels, p, t), p)
    return g[0] if single else g


def conditional_sd_risk(p_star, probs, t: TuningPair) -> float:
    """S-divergence between a reference distribution p_star and probs.

    A genuine divergence: non-negative, and zero iff probs == p_star.
    """
    p_star = np.asarray(p_star, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if p_star.shape != p.shape:
        raise ValueError("p_star and probs have mismatched shapes")
    val = (
        np.power(p, 1.0 + t.beta)
        - (1.0 + t.beta) / t.b * np.power(p, t.b) * np.power(p_star, t.a)
        + t.a / t.b * np.power(p_star, 1.0 + t.beta)
    ).sum() / t.a
    return float(val)


def loss_bounds(t: TuningPair, J: int) -> tuple[float, float]:
    """Lower and upper bounds on sum_j sd_loss(e_j, p) over the simplex."""
    if J < 2:
        raise ValueError("J must be at least 2")
    c = (1.0 + t.beta) / (t.a * t.b)
    lower = J ** (1.0 - t.beta) / t.a - c * max(1.0, J ** (1.0 - t.b)) + J * J / t.b
    upper = J / t.a - c * min(1.0, J ** (1.0 - t.b)) + J * J / t.b
    return lower, upper


# ---------------------------------------------------------------------------
# Baseline losses
# ---------------------------------------------------------------------------


def cce_loss(labels, probs):
    """Categorical cross-entropy, -log p_y, per example."""
    labels, p, single = _as_batch(labels, probs)
    p_y = clip_probs(p[np.arange(p.shape[0]), labels])
    vals = -np.log(p_y)
    return float(vals[0]) if single else vals


def mae_loss(labels, probs):
    """Mean absolute error sum_j |y_j - p_j| = 2(1 - p_y), per example."""
    labels, p, single = _as_batch(labels, probs)
    vals = 2.0 * (1.0 - p[np.arange(p.shape[0]), labels])
    return float(vals[0]) if single else vals


def gce_loss(labels, probs, q: float):
    """Generalized cross-entropy (1 - p_y**q) / q, per example."""
    if not 0.0 < q <= 1.0:
        raise ValueError(f"gce exponent q must lie in (0, 1], got {q}")
    labels, p, single = _as_batch(labels, probs)
    p_y = clip_probs(p[np.arange(p.shape[0]), labels])
    vals = (1.0 - np.power(p_y, q)) / q
    return float(vals[0]) if single else vals


def tcce_loss(labels, probs, delta: float):
    """Trimmed CCE: per-example cce, aggregate drops the largest losses.

    Trimming is applied within the given batch; the ceil(delta * n)
    largest per-example losses are discarded before averaging.
    Returns (per_example_cce, trimmed_mean).
    """
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"trimming proportion delta must lie in [0, 1), got {delta}")
    per = np.atleast_1d(cce_loss(labels, probs))
    n = per.shape[0]
    n_drop = int(np.ceil(delta * n))
    kept = np.sort(per)[: n - n_drop] if n_drop > 0 else per
    return per, float(kept.mean())


def baseline_loss(kind: str, labels, probs, *, q: float | None = None,
                  delta: float | None = None):
    """Dispatch on loss kind; returns (per_example_losses, batch_mean)."""
    if kind == "cce":
        per = np.atleast_1d(cce_loss(labels, probs))
        return per, float(per.mean())
    if kind == "mae":
        per = np.atleast_1d(mae_loss(labels, probs))
        return per, float(per.mean())
    if kind == "gce":
        per = np.atleast_1d(gce_loss(labels, probs, q))
        return per, float(per.mean())
    if kind == "tcce":
        return tcce_loss(labels, probs, delta)
    raise ValueError(f"unknown baseline loss kind: {kind}")


# ---------------------------------------------------------------------------
# Unified loss interface used by the trainer and the attack generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossSpec:
    """Selected training loss with its parameters.

    kind is one of {"sd", "cce", "mae", "gce", "tcce"}; tuning applies to
    "sd", q to "gce", delta to "tcce".
    """

    kind: str
    tuning: TuningPair | None = None
    q: float | None = None
    delta: float | None = None

    def __post_init__(self):
        if self.kind == "sd" and self.tuning is None:
            raise ValueError("sd loss requires a TuningPair")
        if self.kind == "gce" and (self.q is None or not 0.0 < self.q <= 1.0):
            raise ValueError("gce loss requires q in (0, 1]")
        if self.kind == "tcce" and (self.delta is None or not 0.0 <= self.delta < 1.0):
            raise ValueError("tcce loss requires delta in [0, 1)")
        if self.kind not in ("sd", "cce", "mae", "gce", "tcce"):
            raise ValueError(f"unknown loss kind: {self.kind}")

    def describe(self) -> str:
        if self.kind == "sd":
            return f"sd({self.tuning.beta:g},{self.tuning.lam:g})"
        if self.kind == "gce":
            return f"gce({self.q:g})"
        if self.kind == "tcce":
            return f"tcce({self.delta:g})"
        return self.kind

    def value_and_grad_logits(self, labels, logits):
        """Batch-mean loss and its gradient with respect to the logits.

        The returned gradient is already scaled by 1/batch (1/kept for
        tcce), so summing per-example parameter gradients downstream
        yields the gradient of the batch aggregate.
        """
        logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
        labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
        p = softmax(logits)
        n, J = p.shape
        onehot = np.zeros((n, J))
        onehot[np.arange(n), labels] = 1.0

        if self.kind == "sd":
            per = sd_loss(labels, p, self.tuning)
            grad = sd_loss_grad_logits(labels, logits, self.tuning) / n
            return float(np.mean(per)), grad
        if self.kind == "cce":
            per = cce_loss(labels, p)
            return float(np.mean(per)), (p - onehot) / n
        if self.kind == "mae":
            per = mae_loss(labels, p)
            grad = _chain_softmax(1.0 - 2.0 * onehot, p) / n
            return float(np.mean(per)), grad
        if self.kind == "gce":
            per = gce_loss(labels, p, self.q)
            p_y = clip_probs(p[np.arange(n), labels])
            grad_p = -onehot * np.power(p_y, self.q - 1.0)[:, None]
            return float(np.mean(per)), _chain_softmax(grad_p, p) / n
        # tcce: gradient of the trimmed mean; dropped examples contribute 0
        per, agg = tcce_loss(labels, p, self.delta)
        n_drop = int(np.ceil(self.delta * n))
        keep = np.ones(n, dtype=bool)
        if n_drop > 0:
            keep[np.argsort(per)[n - n_drop:]] = False
        grad = (p - onehot) * keep[:, None] / keep.sum()
        return agg, grad
