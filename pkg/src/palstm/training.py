"""Offline training: MSE objective, Adam with global-norm clipping, quantile threshold."""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .features import (
    ChannelStats,
    CorrelationReport,
    PhysicalFeatureSpec,
    correlation_report,
    fit_normalizer,
    select_top_k,
)
from .model import ModelConfig, batch_loss, init_params, model_inputs, predict_normalized, window_scores
from .numerics import GradientStore, NonFiniteError, ParameterStore, gradient_of
from .validation import check_windows

log = logging.getLogger(__name__)


def derive_seed(base: int, *keys) -> int:
    """Independent 64-bit seed for a named sub-stream; string keys are hashed with CRC32."""
    ints = [zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys]
    state = np.random.SeedSequence([int(base) & 0xFFFFFFFFFFFFFFFF, *ints]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 100
    grad_clip_norm: float = 5.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    quantile: float = 0.95

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not 0 < self.quantile <= 1:
            raise ValueError("quantile must lie in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: GradientStore
    v: GradientStore
    t: int = 0

    @classmethod
    def fresh(cls, params: ParameterStore) -> "AdamState":
        return cls(GradientStore.zeros_like(params), GradientStore.zeros_like(params))


def mse_loss(x, x_hat) -> float:
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    return float(np.mean((x - x_hat) ** 2))


def clip_gradients(grads: GradientStore, max_norm: float) -> float:
    """Rescale ``grads`` in place to global norm ``max_norm`` if larger; return the pre-clip norm."""
    norm = grads.global_norm()
    if max_norm is not None and norm > max_norm:
        grads.scale(max_norm / norm)
    return norm


def adam_update(params: ParameterStore, grads: GradientStore, state: AdamState, config: TrainConfig):
    if not (grads.matches(params) and state.m.matches(params)):
        raise KeyError("parameters, gradients and optimizer state do not share keys and shapes")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name in params:
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        step = (state.m[name] / c1) / (np.sqrt(state.v[name] / c2) + config.eps_adam)
        params[name] = params[name] - config.learning_rate * step
    return params, state


def compute_threshold(scores, q: float = 0.95) -> float:
    """Smallest observed score whose empirical CDF reaches ``q``."""
    s = np.sort(np.asarray(scores, dtype=np.float64).reshape(-1))
    if s.size == 0:
        raise ValueError("cannot fit a threshold on zero scores")
    if not 0 < q <= 1:
        raise ValueError(f"quantile must lie in (0, 1], got {q}")
    # rounding keeps 0.95 * 100 from landing a hair above 95
    k = math.ceil(round(q * s.size, 9))
    return float(s[max(k, 1) - 1])


@dataclass
class ThresholdModel:
    lam: float
    q: float
    training_scores: np.ndarray

    @classmethod
    def fit(cls, scores, q: float = 0.95) -> "ThresholdModel":
        s = np.sort(np.asarray(scores, dtype=np.float64))
        return cls(lam=compute_threshold(s, q), q=q, training_scores=s)

    def flag(self, scores) -> np.ndarray:
        return (np.asarray(scores) > self.lam).astype(np.int64)


@dataclass
class FitResult:
    params: ParameterStore
    threshold: ThresholdModel
    history: list
    stats: ChannelStats
    spec: PhysicalFeatureSpec
    correlation: CorrelationReport
    model_config: ModelConfig
    train_config: TrainConfig = field(default_factory=TrainConfig)

    def score(self, X, mileage) -> np.ndarray:
        inputs, m, targets = model_inputs(X, mileage, self.stats, self.spec, self.model_config)
        return window_scores(predict_normalized(self.params, inputs, m, self.model_config), targets)


class TrainingDivergedError(NonFiniteError):
    pass


def fit_arrays(X, mileage, model_config: ModelConfig, train_config: TrainConfig, epsilon: float = 1e-6) -> FitResult:
    """Train on normal windows ``X`` shaped ``(N, T, D)`` and fit the alarm threshold."""
    X, m = check_windows(X, mileage, n_channels=model_config.D, min_samples=2)
    if X.shape[1] != model_config.T:
        raise ValueError(f"windows have T={X.shape[1]} but model expects T={model_config.T}")
    stats = fit_normalizer(X, m)
    report = correlation_report(X, m, stats)
    if model_config.use_physics_features:
        spec = select_top_k(report, model_config.K, epsilon)
    else:
        spec = PhysicalFeatureSpec((), epsilon)
    inputs, mn, targets = model_inputs(X, m, stats, spec, model_config)

    params = init_params(model_config, np.random.default_rng(derive_seed(train_config.seed, "init")))
    shuffle = np.random.default_rng(derive_seed(train_config.seed, "shuffle"))
    state = AdamState.fresh(params)

    def loss_fn(tape, nodes, batch):
        return batch_loss(tape, nodes, batch, model_config)

    n = len(X)
    history = []
    for epoch in range(train_config.epochs):
        order = shuffle.permutation(n)
        total = 0.0
        for b, lo in enumerate(range(0, n, train_config.batch_size)):
            idx = order[lo : lo + train_config.batch_size]
            try:
                loss, grads = gradient_of(loss_fn, params, (inputs[idx], mn[idx], targets[idx]))
            except NonFiniteError as exc:
                raise TrainingDivergedError(f"epoch {epoch + 1}, batch {b + 1}: {exc}") from exc
            clip_gradients(grads, train_config.grad_clip_norm)
            adam_update(params, grads, state, train_config)
            total += loss * len(idx)
        history.append(total / n)
        log.debug("epoch %d loss %.6g", epoch + 1, history[-1])

    scores = window_scores(predict_normalized(params, inputs, mn, model_config), targets)
    return FitResult(
        params=params,
        threshold=ThresholdModel.fit(scores, train_config.quantile),
        history=history,
        stats=stats,
        spec=spec,
        correlation=report,
        model_config=model_config,
        train_config=train_config,
    )


def fit(train_set, model_config: ModelConfig, train_config: TrainConfig, epsilon: float = 1e-6) -> FitResult:
    """Train on a list of :class:`~palstm.data.WindowedSample`, all of which must be normal."""
    if not train_set:
        raise ValueError("training set is empty")
    if any(w.label for w in train_set):
        raise ValueError("training set must contain only normal (label 0) windows")
    X = np.stack([w.values for w in train_set])
    m = np.array([w.mileage for w in train_set])
    return fit_arrays(X, m, model_config, train_config, epsilon)


def history_csv(history) -> str:
    lines = ["epoch,loss"] + [f"{i + 1},{float(v)!r}" for i, v in enumerate(history)]
    return "\n".join(lines) + "\n"


@dataclass
class GridSearchResult:
    table: dict
    best: tuple

    def to_csv(self) -> str:
        lines = ["layers,neurons,mean_auc,std_auc"]
        for (layers, neurons), (mean, std) in sorted(self.table.items()):
            lines.append(f"{layers},{neurons},{mean!r},{std!r}")
        return "\n".join(lines) + "\n"


def grid_search(
    normal_set,
    fault_set,
    layer_choices,
    neuron_choices,
    model_config: ModelConfig,
    train_config: TrainConfig,
    folds: int = 5,
    epsilon: float = 1e-6,
) -> GridSearchResult:
    """Cross-validate every (layers, neurons) cell and pick the best mean AUC.

    Ties go to fewer layers, then fewer neurons. Each cell seeds its folds
    from ``(seed, layers, neurons, fold)`` so results do not depend on order.
    """
    from .evaluation import cross_validate

    if not layer_choices or not neuron_choices:
        raise ValueError("grid needs at least one layer and one neuron choice")
    table = {}
    for layers in layer_choices:
        for neurons in neuron_choices:
            cfg = ModelConfig(**{**model_config.to_dict(), "layers": int(layers), "hidden_size": int(neurons)})
            cv = cross_validate(
                normal_set, fault_set, cfg, train_config, folds=folds, seed_path=(layers, neurons), epsilon=epsilon
            )
            table[(int(layers), int(neurons))] = (cv.mean["auc"], cv.std["auc"])
            log.info("grid cell L=%d N=%d auc=%.4f", layers, neurons, cv.mean["auc"])
    best = min(table, key=lambda k: (-table[k][0], k[0], k[1]))
    return GridSearchResult(table=table, best=best)
