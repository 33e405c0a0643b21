"""Independent brute-force oracles used to cross-check the implementations.

Everything here is deliberately naive: explicit Python loops, bisection,
numerical quadrature.  None of it shares code with the package modules it
verifies.
"""

from __future__ import annotations

import math

import numpy as np


def mse_loop(a: np.ndarray, b: np.ndarray) -> float:
    total = 0.0
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            d = float(a[i, j]) - float(b[i, j])
            total += d * d
    return total / (a.shape[0] * a.shape[1])


def ssim_windows(
    a: np.ndarray,
    b: np.ndarray,
    data_range: float = 2.0,
    window: int = 11,
    sigma: float = 1.5,
) -> float:
    """Per-window weighted-moment SSIM, averaged over all valid windows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    h, w = a.shape
    half = (window - 1) / 2.0
    weights = [[0.0] * window for _ in range(window)]
    total_w = 0.0
    for u in range(window):
        for v in range(window):
            g = math.exp(-(((u - half) ** 2) + ((v - half) ** 2)) / (2 * sigma**2))
            weights[u][v] = g
            total_w += g
    for u in range(window):
        for v in range(window):
            weights[u][v] /= total_w

    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    vals = []
    for top in range(h - window + 1):
        for left in range(w - window + 1):
            ua = ub = uaa = ubb = uab = 0.0
            for u in range(window):
                for v in range(window):
                    wt = weights[u][v]
                    av = float(a[top + u, left + v])
                    bv = float(b[top + u, left + v])
                    ua += wt * av
                    ub += wt * bv
                    uaa += wt * av * av
                    ubb += wt * bv * bv
                    uab += wt * av * bv
            va = max(uaa - ua * ua, 0.0)
            vb = max(ubb - ub * ub, 0.0)
            cov = uab - ua * ub
            vals.append(
                ((2 * ua * ub + c1) * (2 * cov + c2))
                / ((ua * ua + ub * ub + c1) * (va + vb + c2))
            )
    return sum(vals) / len(vals)


def iou_count(score_map: np.ndarray, mask: np.ndarray, threshold: float) -> float:
    inter = union = 0
    h, w = np.asarray(score_map).shape
    for i in range(h):
        for j in range(w):
            p = float(score_map[i, j]) > threshold
            t = bool(mask[i, j])
            if p and t:
                inter += 1
            if p or t:
                union += 1
    return 1.0 if union == 0 else inter / union


def ap_threshold_sweep(scores: np.ndarray, labels: np.ndarray) -> float:
    """O(n^2) average precision: sweep every distinct score as a threshold."""
    s = [float(v) for v in np.asarray(scores).ravel()]
    y = [bool(v) for v in np.asarray(labels).ravel()]
    n_pos = sum(y)
    if n_pos == 0:
        raise ValueError("no positives")
    thresholds = sorted(set(s), reverse=True)
    ap = 0.0
    prev_recall = 0.0
    for thr in thresholds:
        tp = fp = 0
        for sv, yv in zip(s, y):
            if sv >= thr:
                if yv:
                    tp += 1
                else:
                    fp += 1
        precision = tp / (tp + fp)
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def beta_bisection(f: float, lo: float = 1.0, hi: float = 1e12) -> float:
    """Larger root of b/(1+b)^2 = f by bisection on the monotone branch."""

    def g(b: float) -> float:
        return b / (1.0 + b) ** 2 - f

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def kl_quadrature(x0: np.ndarray, psi: np.ndarray, alpha: float, n_grid: int = 20001) -> float:
    """Sum over pixels of KL(N(x0, 1/a) || N(psi, 1/a)) by trapezoid quadrature."""
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    psi = np.asarray(psi, dtype=np.float64).ravel()
    sigma = 1.0 / math.sqrt(alpha)
    total = 0.0
    for m0, m1 in zip(x0, psi):
        lo = min(m0, m1) - 12 * sigma
        hi = max(m0, m1) + 12 * sigma
        xs = np.linspace(lo, hi, n_grid)
        p = np.exp(-((xs - m0) ** 2) / (2 * sigma**2)) / (sigma * math.sqrt(2 * math.pi))
        log_ratio = (-((xs - m0) ** 2) + (xs - m1) ** 2) / (2 * sigma**2)
        total += float(np.trapezoid(p * log_ratio, xs))
    return total
