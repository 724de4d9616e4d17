"""Quantitative evaluation: image quality plus disentanglement/sync proxies.

Perceptual and identity metrics that would need large pretrained networks
are replaced by two proxies with the same intent: cross-validated linear
probes quantify what a representation encodes, and top-1 retrieval of a
frame's audio window against its mouth embedding quantifies lip sync.
"""

import json
from dataclasses import dataclass, field

import numpy as np

PSNR_SATURATION_DB = 100.0


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); identical images report the documented
    saturation value of 100 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_SATURATION_DB
    return float(10.0 * np.log10(peak * peak / mse))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _window_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # separable valid-mode convolution
    n = len(kernel)
    rows = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="valid"), 1, img)
    return np.apply_along_axis(lambda c: np.convolve(c, kernel, mode="valid"), 0, rows)


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, peak: float = 1.0) -> float:
    """Mean structural similarity over an 11-wide Gaussian window.

    Color images are converted to grayscale as the channel mean. Raises if
    either spatial dimension is smaller than the window.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a = a.mean(axis=2)
        b = b.mean(axis=2)
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"image {a.shape} smaller than the {window}-wide window")
    kern = _gaussian_kernel(window, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    mu_a = _window_mean(a, kern)
    mu_b = _window_mean(b, kern)
    var_a = _window_mean(a * a, kern) - mu_a ** 2
    var_b = _window_mean(b * b, kern) - mu_b ** 2
    cov = _window_mean(a * b, kern) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def linear_probe_r2(features: np.ndarray, targets: np.ndarray, folds: int = 5,
                    seed: int = 0) -> float:
    """Cross-validated coefficient of determination of ordinary least squares.

    Fold assignment is a seeded permutation; the returned value is the mean
    of the per-fold held-out R^2.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("features must be (N, D) with matching targets")
    n, d = x.shape
    if n <= d:
        raise ValueError(f"need more samples than features, got N={n}, D={d}")
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if np.var(y) == 0:
        raise ValueError("targets are constant; R^2 undefined")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    scores = []
    design = np.column_stack([x, np.ones(n)])
    for f in range(folds):
        test = order[f::folds]
        train = np.setdiff1d(order, test, assume_unique=True)
        coef, *_ = np.linalg.lstsq(design[train], y[train], rcond=None)
        pred = design[test] @ coef
        ss_res = float(np.sum((y[test] - pred) ** 2))
        ss_tot = float(np.sum((y[test] - y[test].mean()) ** 2))
        if ss_tot == 0:
            raise ValueError("a fold has constant targets; use fewer folds")
        scores.append(1.0 - ss_res / ss_tot)
    return float(np.mean(scores))


def sync_retrieval_accuracy(audio_embeds: np.ndarray, mouth_embeds: np.ndarray) -> float:
    """Fraction of frames whose own audio window is the top-1 cosine match
    to the frame's mouth embedding."""
    a = np.asarray(audio_embeds, dtype=np.float64)
    m = np.asarray(mouth_embeds, dtype=np.float64)
    if a.ndim != 2 or m.ndim != 2 or a.shape[0] != m.shape[0]:
        raise ValueError("need aligned (N, D) embedding lists")
    if a.shape[0] < 2:
        raise ValueError("need at least two frames for retrieval")
    an = a / np.linalg.norm(a, axis=1, keepdims=True)
    mn = m / np.linalg.norm(m, axis=1, keepdims=True)
    sims = mn @ an.T  # rows: mouth anchors, cols: audio candidates
    top1 = np.argmax(sims, axis=1)
    return float(np.mean(top1 == np.arange(a.shape[0])))


@dataclass
class MetricReport:
    """Named scalar metrics with units, plus run provenance."""

    metrics: dict = field(default_factory=dict)  # name -> (value, unit)
    saturated: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0

    def add(self, name: str, value: float, unit: str, saturated: bool = False):
        if not np.isfinite(value):
            raise ValueError(f"metric {name} is not finite")
        self.metrics[name] = (float(value), unit)
        if saturated:
            self.saturated.append(name)

    def write_text(self, path):
        with open(path, "w") as fh:
            for name in sorted(self.metrics):
                value, unit = self.metrics[name]
                flag = " saturated" if name in self.saturated else ""
                fh.write(f"{name}\t{value:.6f}\t{unit}{flag}\n")

    def write_json(self, path):
        doc = {"metrics": {k: {"value": v[0], "unit": v[1],
                               "saturated": k in self.saturated}
                           for k, v in self.metrics.items()},
               "config": self.config, "seed": self.seed}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
