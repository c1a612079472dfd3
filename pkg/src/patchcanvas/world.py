"""Synthetic data universe: a stationary multi-class Gaussian field.

Pixels live on a grid with squared-exponential covariance
``Sigma(p, q) = exp(-|p - q|^2 / (2 ell^2))`` and a constant per-class mean.
Because the field is Gaussian and stationary, every quantity downstream of it
has a closed form: equal-shaped crops share one distribution, and the
minimum-MSE noise predictor for the corruption ``z = gamma*x0 + sigma*eps`` is
the affine map

    eps_hat = sigma * (gamma^2 Sigma + sigma^2 I)^{-1} (z - gamma*mu).

That exact predictor serves as the reference denoiser; a trainable per-step
affine family (which contains the exact predictor) stands in for a learned
network so that training claims are checkable against the optimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .schedule import NoiseSchedule, corrupt

CHOLESKY_JITTER = 1e-10


class DenoiserInterface(Protocol):
    """Noise predictor contract: same-shape (height, width) in and out.

    ``label`` is a class index in 1..n_classes, or None for the
    unconditional branch. Implementations expose ``height``, ``width`` and
    ``n_classes`` so callers can validate compatibility.
    """

    height: int
    width: int
    n_classes: int

    def __call__(self, z: np.ndarray, t: int, label: int | None) -> np.ndarray: ...


@dataclass
class GaussianWorld:
    height: int
    width: int
    corr_length: float
    class_means: tuple[float, ...]
    null_mean: float | None = None

    cov: np.ndarray = field(init=False, repr=False)
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError("grid extent must be positive")
        if self.corr_length <= 0:
            raise ValueError("corr_length must be positive")
        self.class_means = tuple(float(m) for m in self.class_means)
        if not self.class_means:
            raise ValueError("need at least one class mean")
        if self.null_mean is None:
            self.null_mean = float(np.mean(self.class_means))
        rr, cc = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        coords = np.column_stack([rr.ravel(), cc.ravel()]).astype(float)
        sq = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2)
        self.cov = np.exp(-sq / (2.0 * self.corr_length ** 2))
        self.cov[np.diag_indices_from(self.cov)] += CHOLESKY_JITTER
        self.chol = np.linalg.cholesky(self.cov)  # raises if not PD

    @property
    def d(self) -> int:
        return self.height * self.width

    @property
    def n_classes(self) -> int:
        return len(self.class_means)

    def mean_scalar(self, label: int | None) -> float:
        """Constant mean level of a class, or of the unconditional branch."""
        if label is None or label == 0:
            return self.null_mean
        if not 1 <= label <= self.n_classes:
            raise ValueError(f"label {label} outside 1..{self.n_classes}")
        return self.class_means[label - 1]

    def mean_vector(self, label: int | None) -> np.ndarray:
        return np.full(self.d, self.mean_scalar(label))


def sample_world_patch(world: GaussianWorld, label: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one (height, width) field of class ``label``."""
    flat = world.mean_vector(label) + world.chol @ rng.standard_normal(world.d)
    return flat.reshape(world.height, world.width)


class AnalyticDenoiser:
    """Exact minimum-MSE noise predictor for the Gaussian world.

    The per-time-step system matrix ``gamma^2 Sigma + sigma^2 I`` is
    factorized once and cached; evaluation is then a pair of triangular
    solves. The unconditional branch uses the null mean with the shared
    covariance (exact whenever all class means coincide).
    """

    def __init__(self, world: GaussianWorld, schedule: NoiseSchedule):
        self.world = world
        self.schedule = schedule
        self.height = world.height
        self.width = world.width
        self.n_classes = world.n_classes
        self._factors: dict[int, tuple] = {}

    def _factor(self, t: int):
        fac = self._factors.get(t)
        if fac is None:
            s = self.schedule
            m = s.alpha_bar[t] * self.world.cov + (1.0 - s.alpha_bar[t]) * np.eye(self.world.d)
            fac = cho_factor(m, lower=True)
            self._factors[t] = fac
        return fac

    def __call__(self, z: np.ndarray, t: int, label: int | None) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.height, self.width):
            raise ValueError(f"expected shape {(self.height, self.width)}, got {z.shape}")
        if not 0 <= t <= self.schedule.T:
            raise ValueError(f"time index {t} outside [0, {self.schedule.T}]")
        s = self.schedule
        resid = z.ravel() - s.gamma[t] * self.world.mean_vector(label)
        eps = s.sigma_corrupt[t] * cho_solve(self._factor(t), resid)
        return eps.reshape(self.height, self.width)


def analytic_epsilon(world: GaussianWorld, z: np.ndarray, t: int,
                     label: int | None, s: NoiseSchedule) -> np.ndarray:
    """One-shot form of :class:`AnalyticDenoiser` (no factor reuse)."""
    return AnalyticDenoiser(world, s)(z, t, label)


@dataclass
class LinearDenoiser:
    """Trainable per-time-step affine noise predictor.

    For each t a shared scale matrix ``A[t]`` plus a per-branch offset
    ``b[t, c]`` (index 0 is the unconditional branch). The exact predictor is
    a member of this family, so training quality is measured against it.
    """

    height: int
    width: int
    n_classes: int
    T: int
    A: np.ndarray = None   # (T+1, d, d)
    b: np.ndarray = None   # (T+1, n_classes+1, d)

    def __post_init__(self):
        d = self.height * self.width
        if self.A is None:
            self.A = np.zeros((self.T + 1, d, d))
        if self.b is None:
            self.b = np.zeros((self.T + 1, self.n_classes + 1, d))
        if self.A.shape != (self.T + 1, d, d) or self.b.shape != (self.T + 1, self.n_classes + 1, d):
            raise ValueError("weight shapes inconsistent with patch size")

    def branch_index(self, label: int | None) -> int:
        if label is None or label == 0:
            return 0
        if not 1 <= label <= self.n_classes:
            raise ValueError(f"label {label} outside 1..{self.n_classes}")
        return label

    def __call__(self, z: np.ndarray, t: int, label: int | None) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.height, self.width):
            raise ValueError(f"expected shape {(self.height, self.width)}, got {z.shape}")
        eps = self.A[t] @ z.ravel() + self.b[t, self.branch_index(label)]
        return eps.reshape(self.height, self.width)


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class TrainResult:
    denoiser: LinearDenoiser
    losses: np.ndarray
    n_unconditional: int


def train_denoiser(world: GaussianWorld, denoiser: LinearDenoiser, schedule: NoiseSchedule,
                   p_unc: float, steps: int, rng: np.random.Generator,
                   lr: float = 1e-2) -> TrainResult:
    """Stochastic-gradient training of the affine denoiser.

    Each iteration draws labelled or unlabelled data (unlabelled with
    probability ``p_unc``; unlabelled samples come from the equal-weight class
    mixture and train the unconditional branch), corrupts it at a uniform
    random time step, and descends the squared noise-prediction error. The
    step size decays as lr/sqrt(n_t) in the per-time-step update count n_t.
    """
    if not 0.0 <= p_unc <= 1.0:
        raise ValueError(f"p_unc must lie in [0, 1], got {p_unc}")
    if denoiser.height != world.height or denoiser.width != world.width:
        raise ValueError("denoiser patch size does not match the world")
    if denoiser.T != schedule.T:
        raise ValueError("denoiser and schedule disagree on T")

    losses = np.empty(steps)
    n_updates = np.zeros(schedule.T + 1, dtype=np.int64)
    n_unc = 0
    d = world.d
    for i in range(steps):
        unconditional = rng.random() < p_unc
        cls = int(rng.integers(1, world.n_classes + 1))
        label = None if unconditional else cls
        n_unc += unconditional
        x0 = sample_world_patch(world, cls, rng)
        t = int(rng.integers(1, schedule.T + 1))
        eps = rng.standard_normal((world.height, world.width))
        z = corrupt(x0, t, eps, schedule)

        resid = (denoiser(z, t, label) - eps).ravel()
        loss = float(resid @ resid) / d
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss} at step {i}")
        losses[i] = loss

        n_updates[t] += 1
        step = lr / np.sqrt(n_updates[t])
        denoiser.A[t] -= step * 2.0 * np.outer(resid, z.ravel())
        denoiser.b[t, denoiser.branch_index(label)] -= step * 2.0 * resid
    return TrainResult(denoiser, losses, n_unc)
