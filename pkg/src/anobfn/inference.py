"""Pseudo-healthy reconstruction via conditional Bayesian-flow generation.

Three modes share one update loop:

  * ``bfn_vanilla``    -- unconditional start (zero mean, unit precision);
                          plain belief updates from receiver samples only.
  * ``anobfn_no_c2``   -- the prior is centred on the input image through the
                          schedule's initial accuracy; plain updates after.
  * ``anobfn``         -- conditional start plus per-step input feedback:
                          each update also folds the input back in with an
                          agreement- and time-gated per-pixel accuracy.

The reconstruction is the denoiser's output at the final time; the anomaly
map is reconstruction minus input on the uptake scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bfn import ThetaState, bayes_update, bayes_update_conditioned, compute_alpha_a
from .denoiser import DenoiserNet, psi_forward
from .noise import NoiseConfig, sample_field
from .schedule import ScheduleTable, flow_params

MODES = ("bfn_vanilla", "anobfn_no_c2", "anobfn")
RECEIVER_NOISE = ("simplex", "gaussian", "mean_only")


class InferenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class InferenceConfig:
    mode: str = "anobfn"
    n_steps: int = 50
    receiver_noise: str = "simplex"
    k: float = 30.0            # steepness of the feedback time gate
    t_c: float = 0.5           # centre of the feedback time gate (fraction of T)
    seed: int = 0
    zero_feedback: bool = False  # test hook: the k -> -inf limit (alpha_a == 0)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_steps < 2:
            raise ValueError(f"n_steps must be >= 2, got {self.n_steps}")
        if self.receiver_noise not in RECEIVER_NOISE:
            raise ValueError(f"receiver_noise must be one of {RECEIVER_NOISE}")
        if not (self.k > 0):
            raise ValueError(f"k must be positive, got {self.k}")
        if not (0 < self.t_c < 1):
            raise ValueError(f"t_c must lie in (0, 1), got {self.t_c}")


@dataclass
class StepStats:
    index: int
    t: float
    alpha: float
    mean_rho: float
    pred_input_mse: float


@dataclass
class ReconstructionResult:
    pseudo_healthy: np.ndarray
    anomaly_map: np.ndarray
    trajectory: list[StepStats] = field(default_factory=list)


def anomaly_map(x0: np.ndarray, pseudo_healthy: np.ndarray) -> np.ndarray:
    """Signed reconstruction-minus-input difference on the uptake scale.

    Images live on [-1, 1]; dividing the difference by 2 re-expresses it in
    [0, 1] uptake units, so a fractional uptake drop of d under a perfect
    reconstruction scores ~d inside the lesion.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    pseudo_healthy = np.asarray(pseudo_healthy, dtype=np.float64)
    if x0.shape != pseudo_healthy.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {pseudo_healthy.shape}")
    return (pseudo_healthy - x0) / 2.0


def reconstruct(
    x0: np.ndarray,
    model: DenoiserNet,
    table: ScheduleTable,
    cfg: InferenceConfig,
    noise_cfg: NoiseConfig | None = None,
) -> ReconstructionResult:
    """Run the generation loop conditioned (or not) on the input image.

    Noise streams are fully determined by (noise seed, stream index): stream
    0 initialises the state, stream i+1 perturbs the receiver sample of step
    i.  Zero-accuracy steps (where the schedule has saturated) are identity
    updates and consume no stream.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 2:
        raise ValueError(f"x0 must be 2-D, got shape {x0.shape}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    if table.n_steps != cfg.n_steps:
        raise ValueError(
            f"schedule table has {table.n_steps} steps but config expects {cfg.n_steps}"
        )

    base = noise_cfg if noise_cfg is not None else NoiseConfig()
    if cfg.receiver_noise == "mean_only":
        def draw(stream: int) -> np.ndarray:
            return np.zeros_like(x0)
    else:
        ncfg = NoiseConfig(
            kind=cfg.receiver_noise,
            octaves=base.octaves,
            base_frequency=base.base_frequency,
            persistence=base.persistence,
            seed=cfg.seed,
        )

        def draw(stream: int) -> np.ndarray:
            return sample_field(x0.shape[0], x0.shape[1], ncfg, stream).values

    horizon = float(table.t[0])
    if cfg.mode == "bfn_vanilla":
        theta = ThetaState(mu=np.zeros_like(x0), rho=1.0)
    else:
        beta_start = float(table.beta[0])
        mean, std = flow_params(x0, beta_start, 0.0, 1.0)
        theta = ThetaState(mu=mean + std * draw(0), rho=1.0 + beta_start)

    trajectory: list[StepStats] = []
    for i in range(table.n_steps):
        t_i = float(table.t[i])
        a_i = float(table.alpha[i])
        x_hat = psi_forward(model, theta.mu, t_i / horizon)
        if not np.all(np.isfinite(x_hat)):
            raise InferenceError(f"non-finite denoiser output at step {i}")
        if a_i > 0.0:
            x_s = x_hat + draw(i + 1) / math.sqrt(a_i)
            if cfg.mode == "anobfn":
                if cfg.zero_feedback:
                    alpha_a = np.zeros_like(x0)
                else:
                    alpha_a = compute_alpha_a(
                        x_hat, x0, a_i, t_i, horizon, k=cfg.k, t_c=cfg.t_c
                    )
                theta = bayes_update_conditioned(theta, x_s, a_i, x0, alpha_a)
            else:
                theta = bayes_update(theta, x_s, a_i)
        trajectory.append(
            StepStats(
                index=i,
                t=t_i,
                alpha=a_i,
                mean_rho=theta.mean_rho,
                pred_input_mse=float(np.mean((x_hat - x0) ** 2)),
            )
        )

    pseudo = psi_forward(model, theta.mu, float(table.t[-1]) / horizon)
    if not np.all(np.isfinite(pseudo)):
        raise InferenceError("non-finite denoiser output at the final evaluation")
    return ReconstructionResult(
        pseudo_healthy=pseudo,
        anomaly_map=anomaly_map(x0, pseudo),
        trajectory=trajectory,
    )
