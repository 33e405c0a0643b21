"""Reconstruction and detection metrics, plus CSV reporting.

Everything here is written directly against the definitions (no image-metric
library underneath) so the test-suite oracles -- naive per-window / per-pixel
loops -- exercise a genuinely independent code path.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

PSNR_CAP_DB = 100.0
DEFAULT_DATA_RANGE = 2.0  # images live in [-1, 1]
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class MetricsConfig:
    iou_threshold: float = 0.05
    data_range: float = DEFAULT_DATA_RANGE

    def __post_init__(self) -> None:
        if not (self.iou_threshold > 0):
            raise ValueError("iou_threshold must be positive")
        if not (self.data_range > 0):
            raise ValueError("data_range must be positive")


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("inputs must be finite")
    return a, b


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = DEFAULT_DATA_RANGE) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 (identical inputs)."""
    if not (data_range > 0):
        raise ValueError("data_range must be positive")
    m = mse(a, b)
    if m == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(data_range**2 / m))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    d = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(d**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    data_range: float = DEFAULT_DATA_RANGE,
    window_size: int = SSIM_WINDOW,
    sigma: float = SSIM_SIGMA,
) -> float:
    """Mean structural similarity over all fully interior Gaussian windows.

    Local weighted means/variances/covariance per window, combined as

        (2*ua*ub + C1)(2*cov + C2) / ((ua^2 + ub^2 + C1)(va + vb + C2))

    with C1 = (0.01 * data_range)^2 and C2 = (0.03 * data_range)^2.  Windows
    are 'valid' -- no padding is invented at the borders.
    """
    a, b = _check_pair(a, b)
    if a.ndim != 2:
        raise ValueError(f"2-D images required, got ndim={a.ndim}")
    if min(a.shape) < window_size:
        raise ValueError(f"image smaller than the {window_size}x{window_size} window")
    if not (data_range > 0):
        raise ValueError("data_range must be positive")

    win = _gaussian_window(window_size, sigma)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def _local(x: np.ndarray) -> np.ndarray:
        # weighted window sums via a sliding view; exact 'valid' semantics
        view = np.lib.stride_tricks.sliding_window_view(x, (window_size, window_size))
        return np.einsum("ijkl,kl->ij", view, win)

    ua = _local(a)
    ub = _local(b)
    uaa = _local(a * a)
    ubb = _local(b * b)
    uab = _local(a * b)
    va = np.maximum(uaa - ua**2, 0.0)
    vb = np.maximum(ubb - ub**2, 0.0)
    cov = uab - ua * ub

    num = (2.0 * ua * ub + c1) * (2.0 * cov + c2)
    den = (ua**2 + ub**2 + c1) * (va + vb + c2)
    return float(np.mean(num / den))


def iou_at_threshold(score_map: np.ndarray, mask: np.ndarray, threshold: float = 0.05) -> float:
    """Intersection-over-union of (score > threshold) against a binary mask.

    An empty union (no predictions and no positives) counts as a perfect 1.
    """
    score_map = np.asarray(score_map, dtype=np.float64)
    mask = np.asarray(mask)
    if score_map.shape != mask.shape:
        raise ValueError(f"shape mismatch: {score_map.shape} vs {mask.shape}")
    truth = mask.astype(bool)
    pred = score_map > threshold
    union = int(np.logical_or(pred, truth).sum())
    if union == 0:
        return 1.0
    inter = int(np.logical_and(pred, truth).sum())
    return inter / union


def average_precision(scores: np.ndarray, mask: np.ndarray) -> float:
    """Pixel-level average precision with step-wise interpolation.

    Thresholds sweep the distinct score values in descending order; AP is
    sum over thresholds of (recall gain) * precision, which makes the result
    invariant under strictly monotone transforms of the scores.  A mask with
    no positive pixel is undefined and raises.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(mask).astype(bool).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and mask must have the same number of elements")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("average precision is undefined for an all-negative mask")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order].astype(np.float64)
    tp = np.cumsum(y)
    fp = np.cumsum(1.0 - y)
    # last index of each tie group = positions where the score changes next
    last = np.nonzero(np.append(s[1:] != s[:-1], True))[0]
    precision = tp[last] / (tp[last] + fp[last])
    recall = tp[last] / n_pos
    return float(np.sum(np.diff(recall, prepend=0.0) * precision))


# --------------------------------------------------------------------------
# reporting

CSV_HEADER = ["subject_id", "slice_id", "mse", "psnr", "ssim", "iou", "ap"]

_METRIC_COLUMNS = ("mse", "psnr", "ssim", "iou", "ap")


@dataclass
class ImageRecord:
    """Per-image metric row; detection columns stay None for healthy inputs."""

    subject_id: str
    slice_id: int
    mse: float | None = None
    psnr: float | None = None
    ssim: float | None = None
    iou: float | None = None
    ap: float | None = None


@dataclass
class MetricsReport:
    records: list[ImageRecord] = field(default_factory=list)

    def subject_means(self) -> dict[str, dict[str, float]]:
        """Average each metric over slices within a subject."""
        by_subject: dict[str, list[ImageRecord]] = {}
        for rec in self.records:
            by_subject.setdefault(rec.subject_id, []).append(rec)
        out: dict[str, dict[str, float]] = {}
        for sid, recs in by_subject.items():
            means: dict[str, float] = {}
            for col in _METRIC_COLUMNS:
                vals = [getattr(r, col) for r in recs if getattr(r, col) is not None]
                if vals:
                    means[col] = float(np.mean(vals))
            out[sid] = means
        return out

    def aggregate(self) -> dict[str, dict[str, float]]:
        """Subject-level mean and (population) std for each metric."""
        per_subject = self.subject_means()
        agg: dict[str, dict[str, float]] = {}
        for col in _METRIC_COLUMNS:
            vals = [m[col] for m in per_subject.values() if col in m]
            if vals:
                arr = np.asarray(vals, dtype=np.float64)
                agg[col] = {"mean": float(arr.mean()), "std": float(arr.std())}
        return agg


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.9f}"


def write_metrics_csv(path, report: MetricsReport) -> None:
    """One row per image plus a final subject-level aggregate (mean) row."""
    agg = report.aggregate()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for rec in sorted(report.records, key=lambda r: (r.subject_id, r.slice_id)):
            writer.writerow(
                [rec.subject_id, rec.slice_id]
                + [_fmt(getattr(rec, col)) for col in _METRIC_COLUMNS]
            )
        writer.writerow(
            ["aggregate", ""]
            + [_fmt(agg[col]["mean"]) if col in agg else "" for col in _METRIC_COLUMNS]
        )


def read_metrics_csv(path) -> tuple[list[dict[str, str]], dict[str, str]]:
    """Rows as dicts plus the aggregate row, for tests and tooling."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or rows[-1]["subject_id"] != "aggregate":
        raise ValueError(f"{path}: missing aggregate row")
    return rows[:-1], rows[-1]
