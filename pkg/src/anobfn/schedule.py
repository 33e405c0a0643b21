"""Accuracy schedule for the Bayesian flow.

The flow is parameterised by a scalar "accuracy level" ``beta(t)`` that grows
as generation time ``t`` runs from the horizon ``T`` down to 0.  Rather than
choosing ``beta`` directly, the schedule pins the *flow-mean variance under a
unit-precision zero-mean prior*,

    f(t) = beta(t) / (1 + beta(t))**2,

to a smoothed quartic-cosine curve of t, and recovers ``beta`` as the larger
root (beta >= 1) of that quadratic.  This keeps the initial accuracy strictly
positive, which is what lets the sampler start from a prior centred on the
input image instead of on zero.

Discrete tables built here drive both training (per-step loss weights) and
generation (per-step observation accuracies).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

F_MAX = 0.25  # max of beta/(1+beta)^2, attained at beta == 1


@dataclass(frozen=True)
class ScheduleConfig:
    """Knobs of the accuracy schedule.

    n_steps:  number of discrete generation steps N (grid has N+1 nodes).
    horizon:  total generation time T; time runs from T down to 0.
    offset:   small smoothing offset applied inside the cosine argument.
    f_min:    floor for f(t); keeps beta finite where the cosine vanishes.
    """

    n_steps: int = 50
    horizon: float = 1.0
    offset: float = 0.01
    f_min: float = 1e-6

    def __post_init__(self) -> None:
        if self.n_steps < 2:
            raise ValueError(f"n_steps must be >= 2, got {self.n_steps}")
        if not (self.horizon > 0):
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if not (0 < self.offset < 1):
            raise ValueError(f"offset must lie in (0, 1), got {self.offset}")
        if not (0 < self.f_min < F_MAX):
            raise ValueError(f"f_min must lie in (0, {F_MAX}), got {self.f_min}")


@dataclass(frozen=True)
class ScheduleTable:
    """Discretised schedule on the descending grid t_i = T * (1 - i/N).

    t:     (N+1,) times, strictly decreasing from T to 0.
    f:     (N+1,) flow-mean variances, each in [f_min, 1/4] for the default
           variant (the unconditional variant may dip below f_min at i=0 only
           in the sense that its f is re-derived from a shifted beta).
    beta:  (N+1,) accuracy levels, non-decreasing as t falls.  Strictly
           increasing until f(t) hits the f_min floor, constant after.
    alpha: (N,) per-step accuracy increments beta[i+1] - beta[i] >= 0.
    """

    t: np.ndarray
    f: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.alpha)

    def __post_init__(self) -> None:
        n = len(self.t)
        if self.f.shape != (n,) or self.beta.shape != (n,) or self.alpha.shape != (n - 1,):
            raise ValueError("inconsistent table column lengths")
        if np.any(np.diff(self.t) >= 0):
            raise ValueError("t must be strictly decreasing")
        if np.any(np.diff(self.beta) < 0):
            raise ValueError("beta must be non-decreasing")
        if np.any(self.beta <= 0):
            raise ValueError("beta must be positive")
        if np.any(self.alpha < 0):
            raise ValueError("alpha must be non-negative")


def f_of_t(t: float, cfg: ScheduleConfig) -> float:
    """Flow-mean variance target at time ``t``, floored at ``cfg.f_min``.

    The raw curve is 0.25 * cos(((T - t) + s) / (T * (1 + s)) * pi/2) ** 4,
    which starts just below 1/4 at t = T and falls to ~0 at t = 0; the floor
    keeps the inverse map well conditioned.
    """
    T, s = cfg.horizon, cfg.offset
    if not (0.0 <= t <= T):
        raise ValueError(f"t={t} outside [0, {T}]")
    raw = 0.25 * math.cos(((T - t) + s) / (T * (1.0 + s)) * (math.pi / 2.0)) ** 4
    return max(cfg.f_min, raw)


def beta_of_f(f: float) -> float:
    """Larger root (beta >= 1) of beta/(1+beta)^2 = f.

    The quadratic f*beta^2 + (2f - 1)*beta + f = 0 has reciprocal roots; the
    larger branch is the one the conditioned flow uses, so that accuracy never
    drops below 1 and the mapping is monotone decreasing in f.
    """
    if not (0.0 < f <= F_MAX):
        raise ValueError(f"f={f} outside (0, {F_MAX}]")
    disc = max(0.0, 1.0 - 4.0 * f)
    return (1.0 - 2.0 * f + math.sqrt(disc)) / (2.0 * f)


def build_schedule(cfg: ScheduleConfig, variant: str = "conditioned") -> ScheduleTable:
    """Tabulate the schedule on the uniform descending grid.

    variant="conditioned" (default): beta(T) > 0, suitable for priors centred
    on an observed image.

    variant="unconditional": same per-step increments, but the whole beta
    column is shifted down so the flow starts with (approximately) zero
    accuracy -- beta(T) equals the smaller root of f_min, i.e. ~f_min.  This
    is the table used by the plain-generation ablation mode; exact beta(T)=0
    is outside the representable f-range, hence the floor approximation.
    """
    if variant not in ("conditioned", "unconditional"):
        raise ValueError(f"unknown schedule variant: {variant!r}")
    N, T = cfg.n_steps, cfg.horizon
    t = T * (N - np.arange(N + 1, dtype=np.float64)) / N
    f = np.array([f_of_t(float(ti), cfg) for ti in t])
    beta = np.array([beta_of_f(float(fi)) for fi in f])
    if variant == "unconditional":
        # smaller root = 1 / larger root (the quadratic's roots are reciprocal)
        beta = beta - beta[0] + 1.0 / beta_of_f(cfg.f_min)
        f = beta / (1.0 + beta) ** 2
    alpha = np.diff(beta)
    return ScheduleTable(t=t, f=f, beta=beta, alpha=alpha)


def flow_params(
    x0: np.ndarray,
    beta: float,
    prior_mu: np.ndarray | float,
    prior_rho: float,
) -> tuple[np.ndarray, float]:
    """Mean and (scalar) std of the flow state after absorbing accuracy ``beta``.

    Starting from a Gaussian prior N(prior_mu, prior_rho**-1) per pixel and
    accumulating total observation accuracy ``beta`` about ``x0``:

        mean = (beta * x0 + prior_rho * prior_mu) / (prior_rho + beta)
        std  = sqrt(beta) / (prior_rho + beta)

    With the standard prior (mu=0, rho=1), the variance equals f(beta) by
    construction.
    """
    if not (beta > 0):
        raise ValueError(f"beta must be positive, got {beta}")
    if not (prior_rho > 0):
        raise ValueError(f"prior_rho must be positive, got {prior_rho}")
    x0 = np.asarray(x0, dtype=np.float64)
    mu = np.asarray(prior_mu, dtype=np.float64)
    if mu.ndim and mu.shape != x0.shape:
        raise ValueError(f"prior_mu shape {mu.shape} != x0 shape {x0.shape}")
    denom = prior_rho + beta
    mean = (beta * x0 + prior_rho * mu) / denom
    std = math.sqrt(beta) / denom
    return mean, std
