"""Synthetic survival data with a known signal, for checks and demos."""

from __future__ import annotations

import numpy as np


def exponential_hazard(
    n: int,
    n_features: int = 5,
    signal_feature: int | None = 0,
    strength: float = 4.0,
    base_rate: float = 0.02,
    censor_fraction: float = 0.2,
    rng: np.random.Generator | int | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Features ~ U(0, 1); event time ~ Exp(base_rate * exp(strength * x_signal)).

    ``signal_feature=None`` gives pure noise (constant rate). A random
    ``censor_fraction`` of samples is censored at a uniform point before
    their event. Durations are whole months, rounded up so none is 0.

    Returns ``(X, events, durations)``.
    """
    rng = np.random.default_rng(rng)
    X = rng.random((n, n_features))
    log_rate = np.full(n, np.log(base_rate))
    if signal_feature is not None:
        log_rate += strength * X[:, signal_feature]
    times = rng.exponential(np.exp(-log_rate))
    events = np.ones(n, dtype=np.int64)
    censored = rng.permutation(n)[: int(round(censor_fraction * n))]
    events[censored] = 0
    times[censored] *= rng.random(len(censored))
    durations = np.ceil(times).astype(np.int64)
    return X, events, durations
