"""Supervision losses and saliency evaluation metrics.

Metric constants follow the community-standard evaluation code: adaptive
threshold ``min(2 * mean(S), 1)``, beta^2 = 0.3 for F-measure, beta^2 = 1
for weighted F, alpha = 0.5 for S-measure, eps = machine epsilon.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

BCE_EPS = 1e-7
EPS = np.spacing(1.0)
BETA2_F = 0.3
BETA2_WF = 1.0
S_ALPHA = 0.5
METRIC_NAMES = ("E_phi", "S_m", "wFbeta", "Fbeta", "MAE")


@dataclass(frozen=True)
class LossWeights:
    alpha: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if len(self.alpha) != 3 or any(a < 0 for a in self.alpha):
            raise ValueError(f"need three nonnegative side-output weights, got {self.alpha}")


def _pair(s, g) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if s.ndim == 3 and s.shape[0] == 1:
        s = s[0]
    if g.ndim == 3 and g.shape[0] == 1:
        g = g[0]
    if s.shape != g.shape or s.ndim != 2:
        raise ValueError(f"map shapes differ or are not 2-D: {s.shape} vs {g.shape}")
    return s, g


def _binary_gt(g: np.ndarray) -> np.ndarray:
    if not np.all((g == 0) | (g == 1)):
        raise ValueError("ground truth must be binary {0, 1}")
    return g.astype(bool)


# losses -------------------------------------------------------------------

def bce_loss(p, g) -> float:
    p, g = _pair(p, g)
    p = np.clip(p, BCE_EPS, 1 - BCE_EPS)
    return float(-np.mean(g * np.log(p) + (1 - g) * np.log(1 - p)))


def bce_grad(p, g) -> np.ndarray:
    """Analytic derivative of :func:`bce_loss` with respect to each pixel of ``p``."""
    p, g = _pair(p, g)
    p = np.clip(p, BCE_EPS, 1 - BCE_EPS)
    return (p - g) / (p * (1 - p)) / p.size


def total_loss(dom: float, sides, weights: LossWeights | None = None) -> float:
    weights = weights or LossWeights()
    sides = list(sides)
    if len(sides) != 3:
        raise ValueError(f"expected three side losses, got {len(sides)}")
    return float(dom + sum(a * s for a, s in zip(weights.alpha, sides)))


# metrics ------------------------------------------------------------------

def adaptive_threshold(s) -> float:
    return min(2.0 * float(np.mean(s)), 1.0)


def mae(s, g) -> float:
    s, g = _pair(s, g)
    return float(np.mean(np.abs(s - g)))


def _empty_gt_score(s: np.ndarray) -> float:
    # empty ground truth: a prediction is perfect iff nothing exceeds the threshold
    return 1.0 if np.all(s <= adaptive_threshold(s)) else 0.0


def f_measure(s, g, beta2: float = BETA2_F) -> float:
    s, g = _pair(s, g)
    gt = _binary_gt(g)
    if not gt.any():
        return _empty_gt_score(s)
    pred = s >= adaptive_threshold(s)
    tp = np.count_nonzero(pred & gt)
    if tp == 0:
        return 0.0
    precision = tp / np.count_nonzero(pred)
    recall = tp / np.count_nonzero(gt)
    return float((1 + beta2) * precision * recall / (beta2 * precision + recall))


def matlab_gaussian(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    r = (size - 1) / 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    h = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    h[h < np.finfo(float).eps * h.max()] = 0
    return h / h.sum()


def nearest_foreground_mean(gt: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distance to the nearest True pixel and the mean of ``values`` over all such pixels.

    Averaging over equally near pixels (instead of picking one) keeps the
    result independent of scan order, so it is symmetric under flips.
    """
    h, w = gt.shape
    dist = ndimage.distance_transform_edt(~gt)
    d2 = np.rint(dist * dist).astype(np.int64)
    out = np.where(gt, values, 0.0)
    rows, cols = np.nonzero(~gt)
    for r2 in np.unique(d2[rows, cols]):
        sel = d2[rows, cols] == r2
        ys, xs = rows[sel], cols[sel]
        total = np.zeros(ys.shape)
        count = np.zeros(ys.shape)
        lim = int(np.floor(np.sqrt(r2)))
        for dy in range(-lim, lim + 1):
            rem = r2 - dy * dy
            dx0 = int(round(np.sqrt(rem)))
            if dx0 * dx0 != rem:
                continue
            for dx in sorted({-dx0, dx0}):
                ty, tx = ys + dy, xs + dx
                ok = (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
                ok[ok] &= gt[ty[ok], tx[ok]]
                total[ok] += values[ty[ok], tx[ok]]
                count[ok] += 1
        out[ys, xs] = total / count
    return dist, out


def weighted_f_measure(s, g, beta2: float = BETA2_WF) -> float:
    s, g = _pair(s, g)
    gt = _binary_gt(g)
    if not gt.any():
        return _empty_gt_score(s)
    err = np.abs(s - g)
    dist, et = nearest_foreground_mean(gt, err)
    ea = ndimage.correlate(et, matlab_gaussian(), mode="constant", cval=0.0)
    min_e = np.where(gt & (ea < err), ea, err)
    b = np.where(gt, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dist))
    ew = min_e * b
    tpw = np.count_nonzero(gt) - ew[gt].sum()
    fpw = ew[~gt].sum()
    recall = 1.0 - ew[gt].mean()
    precision = tpw / (EPS + tpw + fpw)
    return float((1 + beta2) * recall * precision / (EPS + recall + beta2 * precision))


def _object_score(x: np.ndarray) -> float:
    mu = x.mean()
    sigma = x.std(ddof=1) if x.size > 1 else 0.0
    return 2.0 * mu / (mu * mu + 1.0 + sigma + EPS)


def _s_object(s: np.ndarray, gt: np.ndarray) -> float:
    u = gt.mean()
    fg = _object_score(s[gt])
    bg = _object_score(1.0 - s[~gt])
    return u * fg + (1 - u) * bg


def centroid(gt: np.ndarray) -> tuple[int, int]:
    """1-based (x, y) split point: rounded mean foreground position plus one."""
    h, w = gt.shape
    if not gt.any():
        return int(np.round(w / 2)) + 1, int(np.round(h / 2)) + 1
    y, x = np.argwhere(gt).mean(axis=0).round()
    return int(x) + 1, int(y) + 1


def _ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    x, y = p.mean(), g.mean()
    denom = max(n - 1, 1)
    sx = ((p - x) ** 2).sum() / denom
    sy = ((g - y) ** 2).sum() / denom
    sxy = ((p - x) * (g - y)).sum() / denom
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + EPS)
    return 1.0 if beta == 0 else 0.0


def _s_region(s: np.ndarray, g: np.ndarray, gt: np.ndarray) -> float:
    h, w = g.shape
    x, y = centroid(gt)
    total = 0.0
    for rs, cs in ((slice(0, y), slice(0, x)), (slice(0, y), slice(x, w)),
                   (slice(y, h), slice(0, x)), (slice(y, h), slice(x, w))):
        ps = s[rs, cs]
        if ps.size == 0:
            continue
        total += ps.size / (h * w) * _ssim(ps, g[rs, cs])
    return total


def s_measure(s, g, alpha: float = S_ALPHA) -> float:
    s, g = _pair(s, g)
    gt = _binary_gt(g)
    y = g.mean()
    if y == 0:
        return float(1.0 - s.mean())
    if y == 1:
        return float(s.mean())
    score = alpha * _s_object(s, gt) + (1 - alpha) * _s_region(s, g, gt)
    return float(max(score, 0.0))


def e_measure(s, g) -> float:
    """Enhanced alignment with an adaptive threshold, averaged over all pixels."""
    s, g = _pair(s, g)
    gt = _binary_gt(g)
    fm = (s >= adaptive_threshold(s)).astype(np.float64)
    if not gt.any():
        enhanced = 1.0 - fm
    elif gt.all():
        enhanced = fm
    else:
        a_fm = fm - fm.mean()
        a_gt = g - g.mean()
        align = 2.0 * a_gt * a_fm / (a_gt * a_gt + a_fm * a_fm + EPS)
        enhanced = (align + 1.0) ** 2 / 4.0
    return float(enhanced.mean())


METRICS = {
    "E_phi": e_measure,
    "S_m": s_measure,
    "wFbeta": weighted_f_measure,
    "Fbeta": f_measure,
    "MAE": mae,
}


def psnr(a, b, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    return float("inf") if mse == 0 else float(10 * np.log10(peak * peak / mse))


# reports ------------------------------------------------------------------

@dataclass
class EvalReport:
    images: list = field(default_factory=list)  # dicts with name, five metrics, threshold

    @classmethod
    def evaluate(cls, pairs) -> "EvalReport":
        """``pairs`` yields ``(name, S, G)``; metrics run per image in input order."""
        rows = []
        for name, s, g in pairs:
            row = {"name": name}
            row.update({k: fn(s, g) for k, fn in METRICS.items()})
            row["threshold"] = adaptive_threshold(np.asarray(s, dtype=np.float64))
            rows.append(row)
        return cls(rows)

    def mean(self) -> dict:
        if not self.images:
            return {k: float("nan") for k in METRIC_NAMES}
        return {k: float(np.mean([r[k] for r in self.images])) for k in METRIC_NAMES}

    def to_dict(self) -> dict:
        return {
            "metrics": list(METRIC_NAMES),
            "threshold": "adaptive: min(2*mean(S), 1)",
            "count": len(self.images),
            "mean": self.mean(),
            "images": self.images,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["name", *METRIC_NAMES, "threshold"])
            writer.writeheader()
            writer.writerows(self.images)
