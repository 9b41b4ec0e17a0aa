"""Mileage-aware input construction.

Raw channels are z-scored with training statistics, ranked by how strongly
their per-window mean tracks mileage, and the strongest ``K`` are expanded
into interaction terms with normalized mileage. Each time step of an
augmented window is laid out as::

    [z_1 .. z_D | z_k * m (K cols) | z_k / (m + eps) (K cols) | m**2]
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .validation import check_windows

CHANNELS = ("voltage", "current", "soc", "temperature")
CONSTANT_STD = 1e-12
DEFAULT_EPSILON = 1e-6


class UndefinedCorrelationError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray
    mileage_max: float

    def __post_init__(self):
        if not self.mileage_max > 0:
            raise ValueError(f"mileage_max must be positive, got {self.mileage_max}")

    @property
    def constant(self) -> np.ndarray:
        return self.std < CONSTANT_STD

    @property
    def n_channels(self) -> int:
        return self.mean.shape[0]

    def _divisor(self):
        return np.where(self.constant, 1.0, self.std)

    def normalize(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self._divisor()

    def denormalize(self, Z):
        return np.asarray(Z, dtype=np.float64) * self._divisor() + self.mean

    def scale_mileage(self, mileage):
        return np.asarray(mileage, dtype=np.float64) / self.mileage_max


@dataclass(frozen=True)
class CorrelationReport:
    rho: np.ndarray
    valid: np.ndarray
    names: tuple = CHANNELS

    def to_table(self) -> str:
        lines = ["channel,rho"]
        for name, r, ok in zip(self.names, self.rho, self.valid):
            lines.append(f"{name},{float(r)!r}" if ok else f"{name},nan")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PhysicalFeatureSpec:
    selected_channels: tuple = ()
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if len(set(self.selected_channels)) != len(self.selected_channels):
            raise ValueError(f"duplicate channels in {self.selected_channels}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def K(self) -> int:
        return len(self.selected_channels)

    def n_columns(self, n_channels: int) -> int:
        return n_channels + 2 * self.K + 1


@dataclass(frozen=True)
class AugmentedWindow:
    values: np.ndarray
    mileage: float
    n_raw: int = field(default=0)

    @property
    def raw_slice(self) -> np.ndarray:
        return self.values[:, : self.n_raw]


def fit_normalizer(X, mileage) -> ChannelStats:
    """Population mean/std per channel over every training step, plus max mileage."""
    X, m = check_windows(X, mileage, min_samples=2)
    flat = X.reshape(-1, X.shape[2])
    mileage_max = float(m.max())
    if mileage_max <= 0:
        raise ValueError("training mileage must contain a positive value")
    return ChannelStats(mean=flat.mean(axis=0), std=flat.std(axis=0), mileage_max=mileage_max)


def pearson(x, m) -> float:
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if x.shape != m.shape or x.ndim != 1 or x.size < 2:
        raise ValueError(f"need two equal-length series of at least 2 points, got {x.shape}, {m.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(m))):
        raise ValueError("series must be finite")
    dx = x - x.mean()
    dm = m - m.mean()
    sxx = float(dx @ dx)
    smm = float(dm @ dm)
    n = x.size
    if np.sqrt(sxx / n) < CONSTANT_STD or np.sqrt(smm / n) < CONSTANT_STD:
        raise UndefinedCorrelationError("correlation undefined for a constant series")
    return float(dx @ dm) / (np.sqrt(sxx) * np.sqrt(smm))


def correlation_report(X, mileage, stats: ChannelStats | None = None, names=CHANNELS) -> CorrelationReport:
    """Correlate each channel's per-window mean with per-window mileage."""
    X, m = check_windows(X, mileage, min_samples=2)
    means = X.mean(axis=1)
    D = X.shape[2]
    rho = np.zeros(D)
    valid = np.zeros(D, dtype=bool)
    for i in range(D):
        if stats is not None and stats.constant[i]:
            continue
        try:
            rho[i] = pearson(means[:, i], m)
            valid[i] = True
        except UndefinedCorrelationError:
            pass
    names = tuple(names) if len(names) == D else tuple(f"ch{i}" for i in range(D))
    return CorrelationReport(rho=rho, valid=valid, names=names)


def select_top_k(report: CorrelationReport, K: int, epsilon: float = DEFAULT_EPSILON) -> PhysicalFeatureSpec:
    candidates = [i for i in range(len(report.rho)) if report.valid[i]]
    if K < 0 or K > len(candidates):
        raise ValueError(f"cannot select K={K} channels: only {len(candidates)} of {len(report.rho)} are valid")
    ranked = sorted(candidates, key=lambda i: (-abs(report.rho[i]), i))
    return PhysicalFeatureSpec(selected_channels=tuple(ranked[:K]), epsilon=epsilon)


def interaction_terms(x, m, epsilon=DEFAULT_EPSILON):
    """Return ``(x * m, x / (m + epsilon), m**2)``; works elementwise on arrays."""
    return x * m, x / (m + epsilon), m * m


def augment(X, mileage, stats: ChannelStats, spec: PhysicalFeatureSpec) -> np.ndarray:
    """Build ``(N, T, D + 2K + 1)`` model inputs from raw windows."""
    X, m = check_windows(X, mileage, n_channels=stats.n_channels)
    Z = stats.normalize(X)
    mn = stats.scale_mileage(m)[:, None, None]
    sel = Z[:, :, list(spec.selected_channels)]
    weighted, rate, acc = interaction_terms(sel, mn, spec.epsilon)
    acc = np.broadcast_to(acc, Z.shape[:2] + (1,))
    return np.concatenate([Z, weighted, rate, acc], axis=2)


def augment_window(window, stats: ChannelStats, spec: PhysicalFeatureSpec) -> AugmentedWindow:
    values = augment(window.values[None], [window.mileage], stats, spec)[0]
    return AugmentedWindow(
        values=values, mileage=float(stats.scale_mileage(window.mileage)), n_raw=stats.n_channels
    )


class PhysicalFeatureAugmenter(TransformerMixin, BaseEstimator):
    """Fit normalization and mileage-correlated channel selection on windows.

    ``transform`` needs the per-window mileage alongside ``X``, so both
    ``fit`` and ``transform`` take it as a keyword argument.
    """

    def __init__(self, n_selected=2, epsilon=DEFAULT_EPSILON):
        self.n_selected = n_selected
        self.epsilon = epsilon

    def fit(self, X, y=None, *, mileage):
        X, m = check_windows(X, mileage, min_samples=2)
        self.stats_ = fit_normalizer(X, m)
        self.correlation_ = correlation_report(X, m, self.stats_)
        self.spec_ = select_top_k(self.correlation_, self.n_selected, self.epsilon)
        self.n_features_in_ = X.shape[2]
        return self

    def transform(self, X, *, mileage):
        check_is_fitted(self, "spec_")
        return augment(X, mileage, self.stats_, self.spec_)

    def fit_transform(self, X, y=None, *, mileage):
        return self.fit(X, y, mileage=mileage).transform(X, mileage=mileage)
