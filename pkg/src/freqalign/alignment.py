"""Spectral magnitude rescaling (SMR) and the composed two-step alignment.

SMR pulls a fake image's spectrum towards the real distribution: it retrieves
the K most SSIM-similar images from a real and a fake corpus, fits a power law
``a * r**b`` to each side's mean log-magnitude profile and multiplies every
coefficient above a threshold radius by the smoothed ratio of the two fits.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateFitError, InvalidFitError, InvalidInputError, InvalidModelError
from .metrics import SSIM_C1, SSIM_C2, filter_valid, gaussian_window, SSIM_WINDOW
from .spectral import (
    SpectralProfile,
    as_image,
    as_image_stack,
    clamp01,
    profile_radii,
    profile_radius,
    profile_values,
    require_square,
)

logger = logging.getLogger(__name__)


@dataclass
class PowerLawFit:
    a: float
    b: float
    fit_lo: float
    fit_hi: float
    residual: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PowerLawFit":
        return cls(**json.loads(text))

    def __call__(self, r):
        return self.a * np.asarray(r, dtype=np.float64) ** self.b


@dataclass
class AlignConfig:
    k: int = 50
    r_t: float = 0.2
    fit_lo: float | None = None
    fit_hi: float = 1.0
    # False selects the plain ratio rescale (no threshold, no smoothing)
    smoothing: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise InvalidInputError(f"K must be >= 1, got {self.k}")
        if not 0.0 < self.r_t < 1.0:
            raise InvalidInputError(f"r_T must lie in (0, 1), got {self.r_t}")
        if self.fit_lo is None:
            self.fit_lo = self.r_t
        if not self.fit_lo < self.fit_hi:
            raise InvalidInputError("fit_lo must be below fit_hi")


def _fit_bins(bins: np.ndarray, radii: np.ndarray, lo: float, hi: float) -> PowerLawFit:
    bins = np.asarray(bins, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.float64)
    use = (radii >= lo - 1e-12) & (radii <= hi + 1e-12) & (radii > 0) & (bins > 0)
    if np.count_nonzero(use) < 2:
        raise DegenerateFitError(
            f"only {np.count_nonzero(use)} usable bins in [{lo}, {hi}] for a power-law fit")
    x = np.log(radii[use])
    y = np.log(bins[use])
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        raise DegenerateFitError("fit range collapses to a single radius")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = float(np.sqrt(np.mean((y - (intercept + slope * x)) ** 2)))
    return PowerLawFit(a=math.exp(intercept), b=slope, fit_lo=float(lo), fit_hi=float(hi),
                       residual=resid)


def fit_power_law(profiles: Sequence[SpectralProfile] | SpectralProfile, lo: float = 0.2,
                  hi: float = 1.0) -> PowerLawFit:
    """Least-squares line in log-log space through the mean profile on [lo, hi]."""
    if isinstance(profiles, SpectralProfile):
        profiles = [profiles]
    profiles = list(profiles)
    if not profiles:
        raise InvalidInputError("no profiles to fit")
    radii = profiles[0].radii
    if any(len(p) != len(radii) for p in profiles):
        raise InvalidInputError("profiles of different lengths")
    bins = np.mean([p.bins for p in profiles], axis=0)
    return _fit_bins(bins, radii, lo, hi)


class Corpus:
    """An image set with cached grayscale SSIM statistics and spectral profiles.

    Caching makes retrieval an O(n) vectorized scan per query.
    """

    def __init__(self, images):
        self.images = as_image_stack(images)
        self.size = require_square(self.images[0], even=True)
        self._g = gaussian_window()
        gray = self.images.mean(axis=3)
        self._gray = gray
        self._mu = filter_valid(gray, self._g)
        self._var = filter_valid(gray * gray, self._g) - self._mu ** 2
        self.profiles = profile_values(self.images)
        self.radii = profile_radii(self.size)

    def __len__(self) -> int:
        return len(self.images)

    def ssim_scores(self, query) -> np.ndarray:
        q = as_image(query)
        if q.shape != self.images.shape[1:]:
            raise InvalidInputError(f"query {q.shape} does not match corpus {self.images.shape[1:]}")
        if self.size < SSIM_WINDOW:
            raise InvalidInputError("corpus images smaller than the SSIM window")
        qg = q.mean(axis=2)
        mu_q = filter_valid(qg, self._g)
        var_q = filter_valid(qg * qg, self._g) - mu_q ** 2
        cov = filter_valid(self._gray * qg, self._g) - self._mu * mu_q
        num = (2.0 * self._mu * mu_q + SSIM_C1) * (2.0 * cov + SSIM_C2)
        den = (self._mu ** 2 + mu_q ** 2 + SSIM_C1) * (self._var + var_q + SSIM_C2)
        return (num / den).mean(axis=(1, 2))

    def retrieve(self, query, k: int) -> np.ndarray:
        """Indices of the ``k`` highest-SSIM members, ties by ascending index."""
        if k > len(self):
            raise InvalidInputError(f"corpus has {len(self)} images, cannot retrieve K={k}")
        if k < 1:
            raise InvalidInputError(f"K must be >= 1, got {k}")
        scores = self.ssim_scores(query)
        order = np.lexsort((np.arange(len(self)), -scores))
        return order[:k]

    def fit(self, indices, lo: float, hi: float) -> PowerLawFit:
        return _fit_bins(self.profiles[indices].mean(axis=0), self.radii, lo, hi)


def _as_corpus(corpus) -> Corpus:
    return corpus if isinstance(corpus, Corpus) else Corpus(corpus)


def retrieve_similar(query, corpus, k: int) -> np.ndarray:
    """The ``k`` corpus images most SSIM-similar to ``query``, best first."""
    c = _as_corpus(corpus)
    return c.images[c.retrieve(query, k)]


def smooth_factor(r, r_t: float):
    """Zero below ``r_t``, logistic ``1/(1+exp(-(r - r_t)))`` from ``r_t`` on."""
    r = np.asarray(r, dtype=np.float64)
    s = np.where(r >= r_t, 1.0 / (1.0 + np.exp(-(r - r_t))), 0.0)
    return float(s) if s.ndim == 0 else s


def power_ratio_factor(r: np.ndarray, amplitude: float, exponent: float, r_t: float,
                       smoothing: bool = True) -> np.ndarray:
    """Per-coefficient factor ``1 + (amplitude * r**exponent - 1) * S(r)``.

    Coefficients with ``r < r_t`` get exactly 1.0. With ``smoothing`` off the
    factor is the plain ratio ``amplitude * r**exponent`` at every ``r > 0``
    and DC is kept.
    """
    r = np.asarray(r, dtype=np.float64)
    factor = np.ones_like(r)
    if smoothing:
        sel = r >= r_t
        rs = r[sel]
        s = 1.0 / (1.0 + np.exp(-(rs - r_t)))
        factor[sel] = 1.0 + (amplitude * rs ** exponent - 1.0) * s
    else:
        sel = r > 0
        factor[sel] = amplitude * r[sel] ** exponent
    return factor


def smr_factor(r, fit_real: PowerLawFit, fit_fake: PowerLawFit, r_t: float,
               smoothing: bool = True) -> np.ndarray:
    if not fit_fake.a > 0:
        raise InvalidFitError(f"fake-side amplitude must be positive, got {fit_fake.a}")
    if not fit_real.a > 0:
        raise InvalidFitError(f"real-side amplitude must be positive, got {fit_real.a}")
    return power_ratio_factor(r, fit_real.a / fit_fake.a, fit_real.b - fit_fake.b, r_t, smoothing)


def rescale_spectrum(img, factor: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centered spectrum of ``img`` before and after multiplying by ``factor``."""
    arr = as_image(img)
    coeffs = np.fft.fftshift(np.fft.fft2(arr, axes=(0, 1)), axes=(0, 1))
    return coeffs, coeffs * factor[:, :, None]


def _invert_centered(coeffs: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(np.fft.ifftshift(coeffs, axes=(0, 1)), axes=(0, 1)).real


def smr_rescale(fake, fit_real: PowerLawFit, fit_fake: PowerLawFit, r_t: float,
                smoothing: bool = True, return_clamp: bool = False):
    """Rescale ``fake``'s spectrum by the ratio of two power-law fits."""
    arr = as_image(fake)
    n = require_square(arr, even=True)
    factor = smr_factor(profile_radius(n), fit_real, fit_fake, r_t, smoothing)
    _, scaled = rescale_spectrum(arr, factor)
    out, frac = clamp01(_invert_centered(scaled))
    if frac:
        logger.debug("smr clamp fraction %.4f", frac)
    return (out, frac) if return_clamp else out


@dataclass
class SmrResult:
    image: np.ndarray
    fit_real: PowerLawFit
    fit_fake: PowerLawFit
    clamp_fraction: float
    real_indices: np.ndarray = field(repr=False)
    fake_indices: np.ndarray = field(repr=False)


def smr_detailed(fake, real_corpus, fake_corpus, cfg: AlignConfig | None = None) -> SmrResult:
    cfg = cfg or AlignConfig()
    real_c, fake_c = _as_corpus(real_corpus), _as_corpus(fake_corpus)
    arr = as_image(fake)
    ri = real_c.retrieve(arr, cfg.k)
    fi = fake_c.retrieve(arr, cfg.k)
    fit_real = real_c.fit(ri, cfg.fit_lo, cfg.fit_hi)
    fit_fake = fake_c.fit(fi, cfg.fit_lo, cfg.fit_hi)
    out, frac = smr_rescale(arr, fit_real, fit_fake, cfg.r_t, cfg.smoothing, return_clamp=True)
    return SmrResult(out, fit_real, fit_fake, frac, ri, fi)


def smr(fake, real_corpus, fake_corpus, cfg: AlignConfig | None = None) -> np.ndarray:
    """Spectral magnitude rescaling of one fake image."""
    return smr_detailed(fake, real_corpus, fake_corpus, cfg).image


def check_model(model, shape) -> None:
    if model is None or not callable(getattr(model, "infer", None)):
        raise InvalidModelError("alignment needs a trained calibration model")
    if getattr(model, "trained", True) is False:
        raise InvalidModelError("calibration model has not been trained")
    size = getattr(model, "image_size", None)
    if size is not None and tuple(shape[:2]) != (size, size):
        raise InvalidModelError(f"model expects {size}x{size} images, got {shape[:2]}")
    channels = getattr(model, "channels", None)
    if channels is not None and shape[2] != channels:
        raise InvalidModelError(f"model expects {channels} channels, got {shape[2]}")


def align(fake, real_corpus, fake_corpus, cfg: AlignConfig | None, model) -> np.ndarray:
    """Full alignment: SMR followed by the calibration network."""
    arr = as_image(fake)
    check_model(model, arr.shape)
    rescaled = smr(arr, real_corpus, fake_corpus, cfg)
    out = np.asarray(model.infer(rescaled), dtype=np.float64)
    return np.clip(out, 0.0, 1.0)


class Aligner:
    """Callable alignment operator over fixed corpora and model.

    ``model=None`` gives SMR only. Batches run the network in chunks.
    """

    def __init__(self, real_corpus, fake_corpus, cfg: AlignConfig | None = None, model=None,
                 batch_size: int = 16):
        self.real = _as_corpus(real_corpus)
        self.fake = _as_corpus(fake_corpus)
        self.cfg = cfg or AlignConfig()
        self.model = model
        self.batch_size = batch_size
        if model is not None:
            check_model(model, self.real.images.shape[1:])

    def smr_batch(self, imgs) -> np.ndarray:
        stack = as_image_stack(imgs)
        return np.stack([smr(im, self.real, self.fake, self.cfg) for im in stack])

    def __call__(self, imgs) -> np.ndarray:
        single = isinstance(imgs, np.ndarray) and imgs.ndim in (2, 3)
        stack = as_image_stack([imgs] if single else imgs)
        out = self.smr_batch(stack)
        if self.model is not None:
            chunks = [self.model.infer_batch(out[i:i + self.batch_size])
                      for i in range(0, len(out), self.batch_size)]
            out = np.clip(np.concatenate(chunks), 0.0, 1.0)
        return out[0] if single else out
