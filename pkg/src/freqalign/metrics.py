"""Image-quality and detection metrics: PSNR, SSIM, RSPD, Acc/ER."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError
from .spectral import SpectralProfile, as_image, as_image_stack, mean_profile

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

FAKE = 1
REAL = 0


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise InvalidInputError(f"dimension mismatch: {a.shape} vs {b.shape}")


def psnr(a, b) -> float:
    """PSNR in dB with peak 1; identical inputs give ``inf``."""
    a, b = as_image(a), as_image(b)
    _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation over the last two axes."""
    k = len(g)
    x = sliding_window_view(x, k, axis=-1) @ g
    x = sliding_window_view(x, k, axis=-2) @ g
    return x


def ssim_map(a: np.ndarray, b: np.ndarray, g: np.ndarray | None = None) -> np.ndarray:
    """Local SSIM over the last two axes of broadcastable arrays ``a`` and ``b``."""
    g = gaussian_window() if g is None else g
    mu_a = filter_valid(a, g)
    mu_b = filter_valid(b, g)
    var_a = filter_valid(a * a, g) - mu_a * mu_a
    var_b = filter_valid(b * b, g) - mu_b * mu_b
    cov = filter_valid(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def ssim(a, b) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels."""
    a, b = as_image(a), as_image(b)
    _same_shape(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise InvalidInputError(f"image {a.shape[:2]} smaller than the {SSIM_WINDOW}px SSIM window")
    maps = ssim_map(np.moveaxis(a, 2, 0), np.moveaxis(b, 2, 0))
    return float(np.mean([m.mean() for m in maps]))


def rspd_from_profiles(real: SpectralProfile, test: SpectralProfile) -> float:
    if len(real) != len(test):
        raise InvalidInputError(f"profile lengths differ: {len(real)} vs {len(test)}")
    return 100.0 * float(np.mean(np.abs(real.bins - test.bins)))


def rspd(real_set, test_set) -> float:
    """Real-referenced spectral profile distance, in percent."""
    real = as_image_stack(real_set)
    test = as_image_stack(test_set)
    if real.shape[1:] != test.shape[1:]:
        raise InvalidInputError(f"size mismatch between sets: {real.shape[1:]} vs {test.shape[1:]}")
    return rspd_from_profiles(mean_profile(real), mean_profile(test))


def encode_labels(labels) -> np.ndarray:
    """Map ``'fake'``/``'real'`` (or 1/0, bools) to ints with fake = 1."""
    out = []
    for lab in labels:
        if isinstance(lab, str):
            key = lab.strip().lower()
            if key not in ("fake", "real"):
                raise InvalidInputError(f"unknown label {lab!r}")
            out.append(FAKE if key == "fake" else REAL)
        else:
            out.append(FAKE if int(lab) else REAL)
    return np.asarray(out, dtype=np.int64)


def classification_metrics(preds, truth) -> tuple[float, float]:
    """Detection accuracy on the fake samples and the complementary error rate.

    Real samples in ``truth`` are ignored; ER is the share of fakes called real.
    """
    p, t = encode_labels(preds), encode_labels(truth)
    if len(p) == 0:
        raise InvalidInputError("empty label vectors")
    if len(p) != len(t):
        raise InvalidInputError(f"length mismatch: {len(p)} predictions vs {len(t)} labels")
    fakes = t == FAKE
    if not fakes.any():
        raise InvalidInputError("no fake samples to score")
    acc = 100.0 * float(np.mean(p[fakes] == FAKE))
    return acc, 100.0 - acc


@dataclass
class MetricsReport:
    psnr: float = math.nan
    ssim: float = math.nan
    rspd: float = math.nan
    acc: float = math.nan
    er: float = math.nan

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v)
                for k, v in asdict(self).items()}

    def to_json(self) -> str:
        def enc(v):
            if v is None:
                return None
            if math.isinf(v):
                return "inf"
            return v
        return json.dumps({k: enc(v) for k, v in self.to_dict().items()}, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        rows = ["metric,value"]
        for k, v in asdict(self).items():
            rows.append(f"{k},{v!r}")
        return "\n".join(rows) + "\n"
