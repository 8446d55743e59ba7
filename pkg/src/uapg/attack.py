"""UAP training by projected gradient ascent with an in-house Adam, plus the
per-image gradient attack under an MSE budget used for speed comparisons.

The training objective is loss = 1 - metric(batch + p) / a, where a is the
metric's nominal maximum. Perturbed inputs are NOT clamped inside the loss
(clamping would zero gradients at saturated pixels); clamping happens at
application time in `imaging`.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError, ParameterError, ShapeError
from .imaging import ImageTensor, Perturbation, mse
from .metrics import Metric

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 8
    learning_rate: float = 0.001
    clip_bound: float = 0.1
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(
                f"batch_size must be >= 1, got {self.batch_size}"
            )
        if self.learning_rate <= 0:
            raise ParameterError(
                f"learning_rate must be > 0, got {self.learning_rate}"
            )
        if self.clip_bound <= 0:
            raise ParameterError(
                f"clip_bound must be > 0, got {self.clip_bound}"
            )


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON

    @classmethod
    def zeros_like(cls, params: np.ndarray, **kwargs) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params), **kwargs)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray,
              lr: float) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    if params.shape != grad.shape or params.shape != state.first_moment.shape:
        raise ShapeError(
            f"shape mismatch: params {params.shape}, grad {grad.shape}, "
            f"moments {state.first_moment.shape}"
        )
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, t, state.beta1, state.beta2, state.epsilon)
    return new_params, new_state


def _batch_arrays(batch, tile_shape) -> np.ndarray:
    arrays = []
    for img in batch:
        arr = img.data if isinstance(img, ImageTensor) else np.asarray(
            img, dtype=np.float64
        )
        if arr.shape != tile_shape:
            raise ShapeError(
                f"batch image shape {arr.shape} does not match perturbation "
                f"tile {tile_shape}"
            )
        arrays.append(arr)
    return np.stack(arrays)


def uap_loss(metric: Metric, batch, p: Perturbation) -> float:
    """1 - mean batch score of (image + p) / score_hi, clamp-free."""
    arrays = _batch_arrays(batch, p.data.shape)
    a = metric.descriptor.score_hi
    scores = [metric.score(arr + p.data) for arr in arrays]
    return 1.0 - float(np.mean(scores)) / a


def uap_loss_and_gradient(metric: Metric, batch,
                          p: Perturbation) -> tuple[float, np.ndarray]:
    """Loss plus its gradient w.r.t. p: -(1/a) * mean per-image gradient."""
    arrays = _batch_arrays(batch, p.data.shape)
    a = metric.descriptor.score_hi
    scores = np.empty(len(arrays))
    grad_sum = np.zeros_like(p.data)
    for i, arr in enumerate(arrays):
        s, g = metric.score_and_gradient(arr + p.data)
        scores[i] = s
        grad_sum += g
    loss = 1.0 - float(scores.mean()) / a
    grad = -grad_sum / (len(arrays) * a)
    return loss, grad


@dataclass
class TrainLogRow:
    epoch: int
    batch: int
    loss: float
    max_abs_p: float


@dataclass
class TrainResult:
    perturbation: Perturbation
    epoch_losses: list[float]
    log_rows: list[TrainLogRow] = field(default_factory=list)


def training_log_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "batch", "loss", "max_abs_p"])
    for r in rows:
        writer.writerow([r.epoch, r.batch, repr(r.loss), repr(r.max_abs_p)])
    return buf.getvalue()


def train_uap(metric: Metric, dataset, cfg: TrainConfig,
              tile_shape: tuple[int, int] = (256, 256),
              step_callback=None) -> TrainResult:
    """Train a universal perturbation to inflate `metric` on `dataset`.

    The perturbation starts at zero; every batch takes one Adam step on the
    loss gradient and then projects elementwise onto
    [-clip_bound, +clip_bound]. The dataset is reshuffled each epoch from
    cfg.seed. `step_callback(epoch, batch_index, params)` runs after every
    projection (used by instrumented tests).
    """
    if not metric.descriptor.supports_gradient:
        raise CapabilityError(
            f"metric {metric.descriptor.name!r} cannot be trained against: "
            "no gradient"
        )
    images = list(dataset)
    if not images:
        raise ParameterError("training dataset is empty")
    shape = (tile_shape[0], tile_shape[1], 3)

    params = np.zeros(shape)
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(cfg.seed)
    rows: list[TrainLogRow] = []
    epoch_losses: list[float] = []
    n = len(images)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        batch_losses = []
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            batch = [images[j] for j in order[start:start + cfg.batch_size]]
            p = Perturbation(params, cfg.clip_bound)
            loss, grad = uap_loss_and_gradient(metric, batch, p)
            params, state = adam_step(state, params, grad, cfg.learning_rate)
            np.clip(params, -cfg.clip_bound, cfg.clip_bound, out=params)
            rows.append(TrainLogRow(epoch, bi, loss,
                                    float(np.abs(params).max())))
            batch_losses.append(loss)
            if step_callback is not None:
                step_callback(epoch, bi, params)
        epoch_losses.append(float(np.mean(batch_losses)))
    return TrainResult(Perturbation(params, cfg.clip_bound), epoch_losses,
                       rows)


@dataclass
class MadcConfig:
    steps: int = 1000
    mse_budget: float = 0.0004
    step_size: float = 0.001

    def __post_init__(self):
        if self.steps < 0:
            raise ParameterError(f"steps must be >= 0, got {self.steps}")
        if self.mse_budget <= 0:
            raise ParameterError(
                f"mse_budget must be > 0, got {self.mse_budget}"
            )
        if self.step_size <= 0:
            raise ParameterError(
                f"step_size must be > 0, got {self.step_size}"
            )


@dataclass
class MadcResult:
    image: ImageTensor
    initial_score: float
    final_score: float
    mse: float
    zero_gradient: bool = False


def madc_attack(metric: Metric, img, cfg: MadcConfig) -> MadcResult:
    """Per-image projected gradient ascent on the metric score inside an MSE
    ball around the input.

    Each step moves by step_size along the max-norm-normalized gradient,
    rescales the difference radially onto the MSE ball, and clamps to [0, 1]
    (clamping never grows the MSE). Returns the best-scoring iterate, so the
    final score never drops below the input's.
    """
    metric._require_gradient()
    x0 = img.data if isinstance(img, ImageTensor) else np.asarray(
        img, dtype=np.float64
    )
    best = x0
    best_score = metric.score(x0)
    initial_score = best_score
    x = x0.copy()
    for step in range(cfg.steps):
        g = metric.gradient(x)
        ginf = np.abs(g).max()
        if ginf == 0.0:
            if step == 0:
                return MadcResult(ImageTensor(x0.copy()), initial_score,
                                  initial_score, 0.0, zero_gradient=True)
            break
        x = x + cfg.step_size * g / ginf
        diff = x - x0
        cur = float(np.mean(diff * diff))
        if cur > cfg.mse_budget:
            diff *= np.sqrt(cfg.mse_budget / cur)
            x = x0 + diff
        x = np.clip(x, 0.0, 1.0)
        s = metric.score(x)
        if s > best_score:
            best_score = s
            best = x.copy()
    return MadcResult(ImageTensor(best.copy()), initial_score, best_score,
                      mse(x0, best))
