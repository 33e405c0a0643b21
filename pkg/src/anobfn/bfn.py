"""Per-pixel Gaussian belief updates and the discrete training loss.

The generative state is a factorised Gaussian belief over the clean image:
mean ``mu`` and precision ``rho`` per pixel.  Each generation step folds one
noisy pseudo-observation into the belief by precision-weighted averaging; the
conditioned variant additionally folds in the *actual* input image with its
own per-pixel accuracy, which is how input feedback enters the sampler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .noise import NoiseField


@dataclass(frozen=True)
class ThetaState:
    """Gaussian belief over the image: N(mu, 1/rho) per pixel.

    rho is a scalar while all updates have been spatially uniform and becomes
    a per-pixel array after the first conditioned update.
    """

    mu: np.ndarray
    rho: float | np.ndarray

    def __post_init__(self) -> None:
        rho = np.asarray(self.rho)
        if rho.ndim and rho.shape != self.mu.shape:
            raise ValueError(f"rho shape {rho.shape} != mu shape {self.mu.shape}")
        if np.any(rho <= 0) or not np.all(np.isfinite(rho)):
            raise ValueError("rho must be positive and finite")
        if not np.all(np.isfinite(self.mu)):
            raise ValueError("mu must be finite")

    @property
    def mean_rho(self) -> float:
        return float(np.mean(self.rho))


def _as_values(eps: NoiseField | np.ndarray) -> np.ndarray:
    return eps.values if isinstance(eps, NoiseField) else np.asarray(eps, dtype=np.float64)


def sample_sender(x0: np.ndarray, alpha: float, eps: NoiseField | np.ndarray) -> np.ndarray:
    """Noisy observation of x0 at accuracy alpha: x0 + alpha**-0.5 * eps."""
    if not (alpha > 0):
        raise ValueError(f"alpha must be positive, got {alpha}")
    e = _as_values(eps)
    x0 = np.asarray(x0, dtype=np.float64)
    if e.shape != x0.shape:
        raise ValueError(f"eps shape {e.shape} != x0 shape {x0.shape}")
    return x0 + e / np.sqrt(alpha)


def bayes_update(theta: ThetaState, x: np.ndarray, alpha: float | np.ndarray) -> ThetaState:
    """Fold one observation ``x`` at accuracy ``alpha`` into the belief.

    Precisions add; means combine precision-weighted.  alpha == 0 is the
    identity (useful where a schedule's increment underflows to zero).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != theta.mu.shape:
        raise ValueError(f"x shape {x.shape} != mu shape {theta.mu.shape}")
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim and a.shape != theta.mu.shape:
        raise ValueError(f"alpha shape {a.shape} != mu shape {theta.mu.shape}")
    if np.any(a < 0):
        raise ValueError("alpha must be non-negative")
    rho_new = theta.rho + a
    mu_new = (theta.rho * theta.mu + a * x) / rho_new
    return ThetaState(mu=mu_new, rho=rho_new if np.asarray(rho_new).ndim else float(rho_new))


def bayes_update_conditioned(
    theta: ThetaState,
    x_hat: np.ndarray,
    alpha_t: float,
    x0: np.ndarray,
    alpha_a: np.ndarray,
) -> ThetaState:
    """Conditioned update: one pseudo-observation plus direct input feedback.

    ``x_hat`` enters at scalar accuracy ``alpha_t`` as in the plain update;
    the input image ``x0`` enters at per-pixel accuracy ``alpha_a``.  With
    alpha_a == 0 everywhere this reduces exactly to ``bayes_update``.
    """
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    alpha_a = np.asarray(alpha_a, dtype=np.float64)
    for name, arr in (("x_hat", x_hat), ("x0", x0), ("alpha_a", alpha_a)):
        if arr.shape != theta.mu.shape:
            raise ValueError(f"{name} shape {arr.shape} != mu shape {theta.mu.shape}")
    if not (alpha_t >= 0):
        raise ValueError(f"alpha_t must be non-negative, got {alpha_t}")
    if np.any(alpha_a < 0):
        raise ValueError("alpha_a must be non-negative")
    rho_new = theta.rho + alpha_t + alpha_a
    mu_new = (theta.rho * theta.mu + alpha_t * x_hat + alpha_a * x0) / rho_new
    return ThetaState(mu=mu_new, rho=rho_new)


def compute_alpha_a(
    psi_out: np.ndarray,
    x0: np.ndarray,
    alpha_t: float,
    t: float,
    horizon: float,
    k: float = 30.0,
    t_c: float = 0.5,
) -> np.ndarray:
    """Per-pixel accuracy granted to the input image during generation.

    Two gates multiply the step accuracy alpha_t:

      * agreement: exp(-(psi_out - x0)^2) -- pixels where the current
        prediction already matches the input trust the input more;
      * time: logistic(k * (t/horizon - t_c)) -- feedback is strong early in
        generation (t near the horizon) and shuts off late, letting the
        denoiser override residual disagreement near t = 0.

    Result lies in [0, alpha_t] elementwise.
    """
    if not (k > 0):
        raise ValueError(f"k must be positive, got {k}")
    if not (0 <= t <= horizon):
        raise ValueError(f"t={t} outside [0, {horizon}]")
    if not (alpha_t >= 0):
        raise ValueError(f"alpha_t must be non-negative, got {alpha_t}")
    psi_out = np.asarray(psi_out, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if psi_out.shape != x0.shape:
        raise ValueError(f"psi_out shape {psi_out.shape} != x0 shape {x0.shape}")
    gate_time = 1.0 / (1.0 + np.exp(-k * (t / horizon - t_c)))
    return alpha_t * np.exp(-((psi_out - x0) ** 2)) * gate_time


def discrete_loss(
    x0: np.ndarray,
    psi_out: np.ndarray,
    alpha_i: float,
    n_steps: int,
) -> float:
    """Discrete-time training loss for one step index.

    Equals n_steps * (alpha_i / 2) * ||x0 - psi_out||^2, the KL divergence
    between the true and predicted observation distributions at accuracy
    alpha_i (which share their variance, so only the mean gap survives),
    scaled by the number of steps.  Squared error is summed over pixels and
    averaged over a leading batch axis if present.
    """
    if not (alpha_i > 0):
        raise ValueError(f"alpha_i must be positive, got {alpha_i}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    x0 = np.asarray(x0, dtype=np.float64)
    psi_out = np.asarray(psi_out, dtype=np.float64)
    if x0.shape != psi_out.shape:
        raise ValueError(f"x0 shape {x0.shape} != psi_out shape {psi_out.shape}")
    sq = (x0 - psi_out) ** 2
    if x0.ndim == 3:  # (batch, h, w)
        per_image = sq.sum(axis=(1, 2))
        return float(n_steps * (alpha_i / 2.0) * per_image.mean())
    return float(n_steps * (alpha_i / 2.0) * sq.sum())
