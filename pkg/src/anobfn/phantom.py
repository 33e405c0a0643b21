"""Synthetic 2-D uptake phantoms and dataset assembly.

Each "subject" is one slice-like image: an elliptical head with a bright
cortical ribbon, a darker ventricle region, a few subcortical high-uptake
blobs, a smooth per-subject intensity modulation, and white acquisition
noise.  Intensities are built on a [0, 1] uptake scale and shipped on
[-1, 1].  Anomalous counterparts apply a fractional uptake decrease inside a
smoothly-feathered region (an angular cortical sector or a round focus).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .noise import NoiseConfig, sample_field
from .seeds import derive_seed, generator

_REGIONS = ("angular_sector", "blob")
_AREA_LO, _AREA_HI = 0.05, 0.20  # anomaly area as a fraction of head area
_HEAD_THRESHOLD = 0.2  # uptake level separating head from background


@dataclass(frozen=True)
class PhantomConfig:
    size: int = 64
    n_subjects: int = 30
    hypometabolism_fraction: float = 0.30
    anomaly_region: str = "angular_sector"
    mask_smoothing_sigma: float = 1.5
    acquisition_noise_std: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        if self.size < 32 or self.size % 4 != 0:
            raise ValueError(f"size must be >= 32 and divisible by 4, got {self.size}")
        if self.n_subjects < 10:
            raise ValueError(
                f"n_subjects must be >= 10 for subject-level splits, got {self.n_subjects}"
            )
        if not (0 < self.hypometabolism_fraction < 1):
            raise ValueError("hypometabolism_fraction must lie in (0, 1)")
        if self.anomaly_region not in _REGIONS:
            raise ValueError(f"anomaly_region must be one of {_REGIONS}")
        if not (self.mask_smoothing_sigma > 0):
            raise ValueError("mask_smoothing_sigma must be positive")
        if self.acquisition_noise_std < 0:
            raise ValueError("acquisition_noise_std must be non-negative")


def _head_geometry(rng: np.random.Generator, size: int):
    """Per-subject ellipse: centre, semi-axes, rotation."""
    cx = size * (0.5 + 0.02 * (rng.uniform() - 0.5))
    cy = size * (0.5 + 0.02 * (rng.uniform() - 0.5))
    a = size * (0.34 + 0.05 * rng.uniform())
    b = size * (0.28 + 0.05 * rng.uniform())
    phi = (rng.uniform() - 0.5) * 0.6
    return cx, cy, a, b, phi


def _radial_coords(size: int, cx: float, cy: float, a: float, b: float, phi: float):
    """Normalised elliptical radius (1 at the head boundary) and polar angle."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx = xx - cx
    dy = yy - cy
    xr = dx * math.cos(phi) + dy * math.sin(phi)
    yr = -dx * math.sin(phi) + dy * math.cos(phi)
    r = np.sqrt((xr / a) ** 2 + (yr / b) ** 2)
    theta = np.arctan2(yr, xr)
    return r, theta


def generate_healthy(subject_seed: int, cfg: PhantomConfig) -> np.ndarray:
    """One healthy image on [-1, 1], fully determined by the subject seed."""
    size = cfg.size
    rng = generator(subject_seed)
    cx, cy, a, b, phi = _head_geometry(rng, size)
    r, theta = _radial_coords(size, cx, cy, a, b, phi)

    uptake = np.zeros((size, size), dtype=np.float64)
    interior = 0.42 + 0.06 * rng.uniform()
    uptake += interior

    # bright cortical ribbon hugging the boundary
    ribbon_r = 0.86 + 0.03 * rng.uniform()
    ribbon_amp = 0.40 + 0.08 * rng.uniform()
    uptake += ribbon_amp * np.exp(-(((r - ribbon_r) / 0.07) ** 2))

    # central low-uptake ventricles
    vent_amp = 0.20 + 0.08 * rng.uniform()
    vent_r = 0.16 + 0.04 * rng.uniform()
    uptake -= vent_amp * np.exp(-((r / vent_r) ** 2))

    # 2-4 subcortical high-uptake blobs, mirrored-ish placement not enforced
    n_blobs = int(rng.integers(2, 5))
    for _ in range(n_blobs):
        br = 0.25 + 0.30 * rng.uniform()
        bth = rng.uniform(-math.pi, math.pi)
        bcx = br * math.cos(bth)
        bcy = br * math.sin(bth)
        bw = 0.06 + 0.05 * rng.uniform()
        bamp = 0.10 + 0.10 * rng.uniform()
        xr = (r * np.cos(theta) - bcx) / bw
        yr = (r * np.sin(theta) - bcy) / bw
        uptake += bamp * np.exp(-(xr**2 + yr**2))

    # smooth per-subject modulation from low-frequency correlated noise
    mod_cfg = NoiseConfig(kind="simplex", octaves=2, base_frequency=2.0, persistence=0.5,
                          seed=derive_seed(subject_seed, "modulation"))
    uptake += 0.05 * sample_field(size, size, mod_cfg, 0).values

    # soft head boundary, zero outside
    edge = 1.0 / (1.0 + np.exp((r - 1.0) / 0.02))
    uptake = np.clip(uptake, 0.0, 1.0) * edge

    if cfg.acquisition_noise_std > 0:
        uptake += cfg.acquisition_noise_std * generator(subject_seed, 1).standard_normal(
            (size, size)
        )
    uptake = np.clip(uptake, 0.0, 1.0)
    return 2.0 * uptake - 1.0


def _head_mask(healthy: np.ndarray) -> np.ndarray:
    uptake = (healthy + 1.0) / 2.0
    mask = uptake > _HEAD_THRESHOLD
    return ndimage.binary_fill_holes(mask)


def _sector_mask(head: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
    cy, cx = ndimage.center_of_mass(head)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    theta = np.arctan2(yy - cy, xx - cx)
    rr = np.hypot(yy - cy, xx - cx)
    r_max = rr[head].max()
    target = rng.uniform(0.07, 0.17)
    inner = 0.35
    width = target * 2.0 * math.pi / (1.0 - inner**2)
    start = rng.uniform(-math.pi, math.pi)
    ang = np.mod(theta - start, 2.0 * math.pi)
    return head & (ang < width) & (rr >= inner * r_max)


def _blob_mask(head: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
    ys, xs = np.nonzero(head)
    pick = int(rng.integers(0, len(ys)))
    cy, cx = float(ys[pick]), float(xs[pick])
    target = rng.uniform(0.07, 0.17)
    radius = math.sqrt(target * int(head.sum()) / math.pi)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return head & (np.hypot(yy - cy, xx - cx) <= radius)


def apply_hypometabolism(
    healthy: np.ndarray, cfg: PhantomConfig, anomaly_seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Reduce uptake by cfg.hypometabolism_fraction inside a feathered region.

    Returns (abnormal image on [-1, 1], binary pre-smoothing mask).  The
    decrease is multiplicative on the uptake scale and weighted by a
    Gaussian-smoothed copy of the binary mask, so the lesion has soft edges
    while the ground-truth mask stays crisp.  The region is resampled (up to
    10 times) until its area lands in [5%, 20%] of the head area.
    """
    healthy = np.asarray(healthy, dtype=np.float64)
    size = healthy.shape[0]
    if healthy.shape != (size, size):
        raise ValueError(f"square image required, got {healthy.shape}")
    head = _head_mask(healthy)
    head_area = int(head.sum())
    if head_area == 0:
        raise ValueError("no head region found in the healthy image")

    rng = generator(anomaly_seed)
    mask = None
    for _ in range(10):
        cand = (
            _sector_mask(head, rng, size)
            if cfg.anomaly_region == "angular_sector"
            else _blob_mask(head, rng, size)
        )
        frac = cand.sum() / head_area
        if _AREA_LO <= frac <= _AREA_HI:
            mask = cand
            break
    if mask is None:
        raise RuntimeError("could not sample an anomaly region within the area bounds")

    weight = ndimage.gaussian_filter(mask.astype(np.float64), sigma=cfg.mask_smoothing_sigma)
    uptake = (healthy + 1.0) / 2.0
    uptake_abn = uptake * (1.0 - cfg.hypometabolism_fraction * weight)
    return 2.0 * uptake_abn - 1.0, mask.astype(np.uint8)


# --------------------------------------------------------------------------
# dataset assembly


def subject_splits(cfg: PhantomConfig) -> dict[str, list[int]]:
    """Disjoint subject-level split indices: ~70/10/20 train/val/test."""
    n = cfg.n_subjects
    order = generator(derive_seed(cfg.seed, "split")).permutation(n).tolist()
    n_test = max(1, int(n * 0.2))
    n_val = max(1, int(n * 0.1))
    test = sorted(order[:n_test])
    val = sorted(order[n_test : n_test + n_val])
    train = sorted(order[n_test + n_val :])
    if not train:
        raise ValueError("not enough subjects for a non-empty training split")
    return {"train": train, "val": val, "test": test}


def build_dataset(cfg: PhantomConfig) -> dict:
    """Pure manifest of subjects, seeds, splits and relative file paths."""
    splits = subject_splits(cfg)
    split_of = {}
    for name, ids in splits.items():
        for ix in ids:
            split_of[ix] = name
    subjects = []
    for ix in range(cfg.n_subjects):
        sid = f"s{ix:03d}"
        split = split_of[ix]
        entry = {
            "subject_id": sid,
            "index": ix,
            "slice_id": 0,
            "split": split,
            "subject_seed": derive_seed(cfg.seed, f"subject-{ix}"),
        }
        stem = f"{sid}_00.abfn"
        if split == "test":
            entry["anomaly_seed"] = derive_seed(cfg.seed, f"anomaly-{ix}")
            entry["files"] = {
                "healthy": f"test_cn/{stem}",
                "abnormal": f"test_sad/abnormal/{stem}",
                "mask": f"test_sad/mask/{stem}",
            }
        else:
            entry["files"] = {"healthy": f"{split}/{stem}"}
        subjects.append(entry)
    return {
        "phantom": asdict(cfg),
        "splits": splits,
        "subjects": subjects,
    }


def write_dataset(cfg: PhantomConfig, out_dir: str) -> dict:
    """Generate every image and write the on-disk layout; returns the manifest.

    Layout: train/, val/, test_cn/ (healthy), test_sad/abnormal/,
    test_sad/mask/, manifest.json at the root.
    """
    from .formats import write_abfn  # local import: formats owns file encodings

    manifest = build_dataset(cfg)
    for sub in ("train", "val", "test_cn", "test_sad/abnormal", "test_sad/mask"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    for entry in manifest["subjects"]:
        healthy = generate_healthy(entry["subject_seed"], cfg)
        if entry["split"] == "test":
            abnormal, mask = apply_hypometabolism(healthy, cfg, entry["anomaly_seed"])
            write_abfn(os.path.join(out_dir, entry["files"]["healthy"]), healthy)
            write_abfn(os.path.join(out_dir, entry["files"]["abnormal"]), abnormal)
            write_abfn(os.path.join(out_dir, entry["files"]["mask"]), mask.astype(np.float32))
        else:
            write_abfn(os.path.join(out_dir, entry["files"]["healthy"]), healthy)
    manifest_path = os.path.join(out_dir, "manifest.json")
    tmp = manifest_path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, manifest_path)
    return manifest
