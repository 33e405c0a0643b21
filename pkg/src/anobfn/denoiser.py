"""Time-conditioned UNet denoiser, its training loop, and checkpoints.

The network maps a noisy flow mean plus a scalar time in [0, 1] to an
estimate of the clean image.  Training draws a random step of the accuracy
schedule per image, corrupts the image to that step's flow distribution with
the configured noise kind, and regresses the clean image under the
KL-derived per-step weight.  Parameters are tracked twice: raw (optimised)
and an exponential moving average used for generation.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .noise import NoiseConfig, sample_field
from .schedule import ScheduleTable, flow_params
from .seeds import derive_seed, generator


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass(frozen=True)
class DenoiserConfig:
    base_width: int = 32       # C; stage widths are [C, C, 2C]
    n_stages: int = 3
    time_embed_dim: int = 64
    use_attention: bool = False

    def __post_init__(self) -> None:
        if self.base_width < 4:
            raise ValueError(f"base_width must be >= 4, got {self.base_width}")
        if self.n_stages != 3:
            raise ValueError("only the 3-stage layout is supported")
        if self.time_embed_dim < 8 or self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be an even integer >= 8")

    @property
    def downsample_factor(self) -> int:
        return 2 ** (self.n_stages - 1)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    adam_betas: tuple = (0.9, 0.98)
    ema_decay: float = 0.9999
    grad_clip_norm: float = 1.0
    batch_size: int = 8
    epochs: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.learning_rate > 0):
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if len(self.adam_betas) != 2 or not all(0 <= b < 1 for b in self.adam_betas):
            raise ValueError("adam_betas must be two values in [0, 1)")
        if not (0 <= self.ema_decay < 1):
            raise ValueError("ema_decay must lie in [0, 1)")
        if not (self.grad_clip_norm > 0):
            raise ValueError("grad_clip_norm must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


def _groups(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos embedding; t in [0, 1] is stretched to ~[0, 1000]."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / (half - 1)
    )
    angles = t[:, None] * 1000.0 * freqs[None, :]
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, t_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(c_in), c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.temb = nn.Linear(t_dim, c_out)
        self.norm2 = nn.GroupNorm(_groups(c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + self.temb(torch.nn.functional.silu(temb))[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class SelfAttention2d(nn.Module):
    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(channels), channels)
        self.qkv = nn.Conv2d(channels, channels * 3, 1)
        self.proj = nn.Conv2d(channels, channels, 1)
        self.heads = heads

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        qkv = self.qkv(self.norm(x)).reshape(b, 3, self.heads, c // self.heads, h * w)
        q, k, v = qkv[:, 0], qkv[:, 1], qkv[:, 2]
        attn = torch.softmax(q.transpose(-1, -2) @ k / math.sqrt(c // self.heads), dim=-1)
        out = (v @ attn.transpose(-1, -2)).reshape(b, c, h, w)
        return x + self.proj(out)


class DenoiserNet(nn.Module):
    """3-stage UNet, widths [C, C, 2C], two 2x downsamplings, skip concats."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_width
        td = cfg.time_embed_dim
        self.time_mlp = nn.Sequential(nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td))
        self.stem = nn.Conv2d(1, c, 3, padding=1)
        self.enc1 = ResBlock(c, c, td)
        self.down1 = nn.Conv2d(c, c, 3, stride=2, padding=1)
        self.enc2 = ResBlock(c, c, td)
        self.down2 = nn.Conv2d(c, 2 * c, 3, stride=2, padding=1)
        self.mid1 = ResBlock(2 * c, 2 * c, td)
        self.attn = SelfAttention2d(2 * c) if cfg.use_attention else None
        self.mid2 = ResBlock(2 * c, 2 * c, td)
        self.up2 = nn.Conv2d(2 * c, c, 3, padding=1)
        self.dec2 = ResBlock(2 * c, c, td)
        self.up1 = nn.Conv2d(c, c, 3, padding=1)
        self.dec1 = ResBlock(2 * c, c, td)
        self.out_norm = nn.GroupNorm(_groups(c), c)
        self.out_conv = nn.Conv2d(c, 1, 3, padding=1)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] % self.cfg.downsample_factor or x.shape[-2] % self.cfg.downsample_factor:
            raise ValueError(
                f"image sides must be divisible by {self.cfg.downsample_factor}, "
                f"got {tuple(x.shape[-2:])}"
            )
        temb = self.time_mlp(sinusoidal_embedding(t, self.cfg.time_embed_dim))
        h1 = self.enc1(self.stem(x), temb)
        h2 = self.enc2(self.down1(h1), temb)
        m = self.mid1(self.down2(h2), temb)
        if self.attn is not None:
            m = self.attn(m)
        m = self.mid2(m, temb)
        u2 = self.up2(torch.nn.functional.interpolate(m, scale_factor=2, mode="nearest"))
        d2 = self.dec2(torch.cat([u2, h2], dim=1), temb)
        u1 = self.up1(torch.nn.functional.interpolate(d2, scale_factor=2, mode="nearest"))
        d1 = self.dec1(torch.cat([u1, h1], dim=1), temb)
        return self.out_conv(torch.nn.functional.silu(self.out_norm(d1)))


def build_model(cfg: DenoiserConfig, init_seed: int | None = None) -> DenoiserNet:
    if init_seed is not None:
        torch.manual_seed(init_seed & (2**63 - 1))
    return DenoiserNet(cfg)


def psi_forward(model: DenoiserNet, mu: np.ndarray, t: float) -> np.ndarray:
    """Numpy-facing single-image evaluation of the denoiser."""
    mu = np.asarray(mu, dtype=np.float64)
    if mu.ndim != 2:
        raise ValueError(f"mu must be 2-D, got shape {mu.shape}")
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"t={t} outside [0, 1]")
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(mu.astype(np.float32))[None, None]
        out = model(x, torch.tensor([t], dtype=torch.float32))
    return out[0, 0].numpy().astype(np.float64)


# --------------------------------------------------------------------------
# EMA


def ema_update(
    raw_params: dict[str, torch.Tensor],
    ema_params: dict[str, torch.Tensor],
    decay: float,
) -> None:
    """In-place ema = decay * ema + (1 - decay) * raw; decay 0 copies raw."""
    if not (0 <= decay < 1):
        raise ValueError(f"decay must lie in [0, 1), got {decay}")
    with torch.no_grad():
        for name, raw in raw_params.items():
            ema_params[name].mul_(decay).add_(raw, alpha=1.0 - decay)


def make_ema(model: nn.Module) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


# --------------------------------------------------------------------------
# training


@dataclass
class TrainerState:
    model: DenoiserNet
    ema: dict[str, torch.Tensor]
    optimizer: torch.optim.AdamW
    step: int
    seed: int          # shared train seed; all per-step streams derive from it
    train_cfg: TrainConfig
    denoiser_cfg: DenoiserConfig


def make_trainer(
    denoiser_cfg: DenoiserConfig, train_cfg: TrainConfig
) -> TrainerState:
    model = build_model(denoiser_cfg, init_seed=derive_seed(train_cfg.seed, "init"))
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=train_cfg.learning_rate,
        betas=tuple(train_cfg.adam_betas),
        weight_decay=train_cfg.weight_decay,
    )
    return TrainerState(
        model=model,
        ema=make_ema(model),
        optimizer=optimizer,
        step=0,
        seed=train_cfg.seed,
        train_cfg=train_cfg,
        denoiser_cfg=denoiser_cfg,
    )


def train_step(
    batch: np.ndarray,
    table: ScheduleTable,
    noise_cfg: NoiseConfig,
    state: TrainerState,
) -> tuple[float, float]:
    """One optimisation step on a (B, H, W) batch of clean images.

    Per image: draw a schedule step j, sample the flow state at t_j with the
    configured noise kind, predict the clean image at time t_j, and weight
    the summed squared error by N * alpha_j / 2.  Returns (loss, grad_norm).
    All randomness is keyed by (state.seed, state.step), so a resumed run
    retraces exactly the steps a continuous one would take.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3:
        raise ValueError(f"batch must be (B, H, W), got shape {batch.shape}")
    b, h, w = batch.shape
    n = table.n_steps
    rng = generator(state.seed, 2, state.step)
    steps = rng.integers(0, n, size=b)  # state times t_j, weights alpha_j

    mus = np.empty((b, h, w), dtype=np.float32)
    for i in range(b):
        j = int(steps[i])
        eps = sample_field(h, w, noise_cfg, state.step * b + i).values
        mean, std = flow_params(batch[i], float(table.beta[j]), 0.0, 1.0)
        mus[i] = (mean + std * eps).astype(np.float32)

    model = state.model
    model.train()
    x0 = torch.from_numpy(batch.astype(np.float32))[:, None]
    mu = torch.from_numpy(mus)[:, None]
    horizon = float(table.t[0])  # network time input is normalised to [0, 1]
    t = torch.from_numpy((table.t[steps] / horizon).astype(np.float32))
    weight = torch.from_numpy((n * table.alpha[steps] / 2.0).astype(np.float32))

    pred = model(mu, t)
    per_image = ((x0 - pred) ** 2).sum(dim=(1, 2, 3))
    loss = (weight * per_image).mean()

    value = float(loss.detach())
    if not math.isfinite(value):
        raise TrainingDiverged(state.step, value)

    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    grad_norm = float(
        torch.nn.utils.clip_grad_norm_(model.parameters(), state.train_cfg.grad_clip_norm)
    )
    state.optimizer.step()
    ema_update(model.state_dict(), state.ema, state.train_cfg.ema_decay)
    state.step += 1
    return value, grad_norm


# --------------------------------------------------------------------------
# checkpoints


def _flatten(tensors: list[torch.Tensor]) -> np.ndarray:
    return np.concatenate([t.detach().cpu().numpy().ravel() for t in tensors]).astype(np.float32)


def _unflatten(flat: np.ndarray, like: list[torch.Tensor]) -> list[torch.Tensor]:
    out, off = [], 0
    for ref in like:
        n = ref.numel()
        out.append(torch.from_numpy(flat[off : off + n].copy()).reshape(ref.shape))
        off += n
    if off != flat.size:
        raise ValueError(f"checkpoint tensor size mismatch: {flat.size} vs {off}")
    return out


def save_checkpoint(
    out_dir: str,
    state: TrainerState,
    schedule_cfg,
    noise_cfg: NoiseConfig,
    image_size: int,
) -> str:
    """Write <out_dir>/ckpt_<step>/ plus an atomically-updated latest.json."""
    from .formats import write_abfn, write_json_atomic

    name = f"ckpt_{state.step:08d}"
    ckpt_dir = os.path.join(out_dir, name)
    os.makedirs(ckpt_dir, exist_ok=True)

    sd = state.model.state_dict()
    keys = sorted(sd.keys())
    write_abfn(os.path.join(ckpt_dir, "raw.abfn"), _flatten([sd[k] for k in keys]))
    write_abfn(os.path.join(ckpt_dir, "ema.abfn"), _flatten([state.ema[k] for k in keys]))

    params = [p for p in state.model.parameters()]
    opt_state = state.optimizer.state
    exp_avg = [
        opt_state[p]["exp_avg"] if p in opt_state else torch.zeros_like(p) for p in params
    ]
    exp_avg_sq = [
        opt_state[p]["exp_avg_sq"] if p in opt_state else torch.zeros_like(p) for p in params
    ]
    write_abfn(os.path.join(ckpt_dir, "opt_exp_avg.abfn"), _flatten(exp_avg))
    write_abfn(os.path.join(ckpt_dir, "opt_exp_avg_sq.abfn"), _flatten(exp_avg_sq))

    manifest = {
        "step": state.step,
        "image_size": image_size,
        "denoiser": asdict(state.denoiser_cfg),
        "train": asdict(state.train_cfg),
        "schedule": asdict(schedule_cfg),
        "noise": asdict(noise_cfg),
        "state_keys": keys,
        "adam_step": state.step,
    }
    manifest["train"]["adam_betas"] = list(manifest["train"]["adam_betas"])
    write_json_atomic(os.path.join(ckpt_dir, "manifest.json"), manifest)
    write_json_atomic(os.path.join(out_dir, "latest.json"), {"checkpoint": name, "step": state.step})
    return ckpt_dir


def load_manifest(checkpoint_dir: str) -> tuple[str, dict]:
    """Resolve a checkpoint root (via latest.json) or a concrete ckpt dir."""
    import json

    latest = os.path.join(checkpoint_dir, "latest.json")
    if os.path.exists(latest):
        with open(latest) as fh:
            checkpoint_dir = os.path.join(checkpoint_dir, json.load(fh)["checkpoint"])
    manifest_path = os.path.join(checkpoint_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"no checkpoint manifest under {manifest_path}")
    with open(manifest_path) as fh:
        return checkpoint_dir, json.load(fh)


def load_model(checkpoint_dir: str, use_ema: bool = True) -> tuple[DenoiserNet, dict]:
    """Instantiate the network from a checkpoint (EMA weights by default)."""
    from .formats import read_abfn

    ckpt_dir, manifest = load_manifest(checkpoint_dir)
    cfg = DenoiserConfig(**manifest["denoiser"])
    model = build_model(cfg)
    sd = model.state_dict()
    keys = manifest["state_keys"]
    flat = read_abfn(os.path.join(ckpt_dir, "ema.abfn" if use_ema else "raw.abfn"))
    tensors = _unflatten(flat, [sd[k] for k in keys])
    model.load_state_dict({k: t for k, t in zip(keys, tensors)})
    model.eval()
    return model, manifest


def load_trainer(checkpoint_dir: str) -> tuple[TrainerState, dict]:
    """Rebuild the full trainer (raw + EMA + optimiser moments) for resuming."""
    from .formats import read_abfn

    ckpt_dir, manifest = load_manifest(checkpoint_dir)
    denoiser_cfg = DenoiserConfig(**manifest["denoiser"])
    tc = dict(manifest["train"])
    tc["adam_betas"] = tuple(tc["adam_betas"])
    train_cfg = TrainConfig(**tc)
    state = make_trainer(denoiser_cfg, train_cfg)

    sd = state.model.state_dict()
    keys = manifest["state_keys"]
    raw = _unflatten(read_abfn(os.path.join(ckpt_dir, "raw.abfn")), [sd[k] for k in keys])
    state.model.load_state_dict({k: t for k, t in zip(keys, raw)})
    ema = _unflatten(read_abfn(os.path.join(ckpt_dir, "ema.abfn")), [sd[k] for k in keys])
    state.ema = {k: t.clone() for k, t in zip(keys, ema)}

    params = [p for p in state.model.parameters()]
    avg = _unflatten(read_abfn(os.path.join(ckpt_dir, "opt_exp_avg.abfn")), params)
    avg_sq = _unflatten(read_abfn(os.path.join(ckpt_dir, "opt_exp_avg_sq.abfn")), params)
    for p, a, s in zip(params, avg, avg_sq):
        state.optimizer.state[p] = {
            "step": torch.tensor(float(manifest["adam_step"])),
            "exp_avg": a.clone(),
            "exp_avg_sq": s.clone(),
        }
    state.step = int(manifest["step"])
    return state, manifest
