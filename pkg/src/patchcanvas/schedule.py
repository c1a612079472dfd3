"""Discrete diffusion time grid and per-step coefficients.

The forward corruption at time t is ``z_t = gamma[t] * x0 + sigma[t] * eps``
with ``gamma[t]**2 + sigma[t]**2 = 1`` (variance preserving), where
``gamma[t] = sqrt(alpha_bar[t])`` and ``alpha_bar`` is the cumulative product
of ``1 - beta``. Index 0 is the clean state (``alpha_bar[0] = 1``); reverse
sampling walks the transitions ``alpha_bar[t] -> alpha_bar[t-1]``.

The beta ramp is rescaled with the step count so that a short grid (say 50
steps) destroys the signal to the same degree as the conventional 1000-step
linear ramp.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BETA_START_1000 = 1e-4
BETA_END_1000 = 0.02
BETA_MAX = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable coefficient table; safe to share across workers."""

    T: int
    eta: float
    beta: np.ndarray            # (T,)   beta[i] is the rate of step t = i + 1
    alpha_bar: np.ndarray       # (T+1,) alpha_bar[0] = 1, strictly decreasing
    gamma: np.ndarray           # (T+1,) sqrt(alpha_bar)
    sigma_corrupt: np.ndarray   # (T+1,) sqrt(1 - alpha_bar)
    sigma_ddim: np.ndarray = field(repr=False, default=None)  # (T+1,), [0] = 0

    def to_config(self) -> dict:
        return {"T": self.T, "eta": self.eta, "schedule": "linear-rescaled"}


def make_linear_schedule(T: int, eta: float = 0.0) -> NoiseSchedule:
    """Build the step-count-rescaled linear beta schedule.

    beta is linearly spaced from 1e-4*(1000/T) to 0.02*(1000/T), each value
    clamped to (0, 0.999]. eta scales the per-step stochastic noise of the
    reverse update; eta = 0 gives the fully deterministic sampler.
    """
    if not isinstance(T, (int, np.integer)) or T < 2:
        raise ValueError(f"T must be an integer >= 2, got {T!r}")
    if not np.isfinite(eta) or eta < 0:
        raise ValueError(f"eta must be a finite real >= 0, got {eta!r}")

    scale = 1000.0 / T
    beta = np.linspace(BETA_START_1000 * scale, BETA_END_1000 * scale, T)
    beta = np.minimum(beta, BETA_MAX)

    alpha_bar = np.empty(T + 1)
    alpha_bar[0] = 1.0
    alpha_bar[1:] = np.cumprod(1.0 - beta)
    if not np.all(np.diff(alpha_bar) < 0):
        raise ValueError("alpha_bar is not strictly decreasing")

    gamma = np.sqrt(alpha_bar)
    sigma_corrupt = np.sqrt(1.0 - alpha_bar)

    sigma_ddim = np.zeros(T + 1)
    prev, cur = alpha_bar[:-1], alpha_bar[1:]
    sigma_ddim[1:] = eta * np.sqrt((1.0 - prev) / (1.0 - cur)) * np.sqrt(1.0 - cur / prev)
    # the direction coefficient sqrt(1 - abar[t-1] - sigma^2) must stay real
    radicand = 1.0 - prev - sigma_ddim[1:] ** 2
    if np.any(radicand < -1e-12):
        raise ValueError(f"eta={eta} makes the reverse-update direction coefficient imaginary")

    for arr in (beta, alpha_bar, gamma, sigma_corrupt, sigma_ddim):
        arr.setflags(write=False)
    return NoiseSchedule(int(T), float(eta), beta, alpha_bar, gamma, sigma_corrupt, sigma_ddim)


def corrupt(x0: np.ndarray, t: int, noise: np.ndarray, s: NoiseSchedule) -> np.ndarray:
    """Forward corruption: gamma[t] * x0 + sigma[t] * noise, elementwise."""
    x0 = np.asarray(x0, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if x0.shape != noise.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs noise {noise.shape}")
    if not 0 <= t <= s.T:
        raise ValueError(f"time index {t} outside [0, {s.T}]")
    return s.gamma[t] * x0 + s.sigma_corrupt[t] * noise
