"""Fourier analysis substrate: transforms, ideal/Butterworth filtering and
azimuthally averaged spectral profiles.

Images are ``float`` arrays shaped ``(H, W, C)`` with values in ``[0, 1]``.
2D arrays are accepted everywhere and promoted to a single channel.

Two radius conventions are used and both are exposed here:

* filter radius: distance to the spectrum centroid divided by the half
  diagonal, so ``1.0`` reaches the spectrum corners (used by ``decompose``
  and ``butterworth_lowpass``);
* profile radius: distance divided by ``N/2 - 1``, so profile bin ``k`` sits
  at ``k / (N/2 - 1)`` and the last bin is exactly ``1.0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

logger = logging.getLogger(__name__)


def as_image(img) -> np.ndarray:
    """Return ``img`` as a float64 ``(H, W, C)`` array, validating it."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise InvalidInputError(f"expected an (H, W) or (H, W, C) image, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0 or arr.shape[2] == 0:
        raise InvalidInputError(f"zero-sized image {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("image contains non-finite pixels")
    return arr


def as_image_stack(imgs) -> np.ndarray:
    """Stack a nonempty collection of equally sized images into ``(n, H, W, C)``."""
    if isinstance(imgs, np.ndarray) and imgs.ndim == 4:
        stack = np.asarray(imgs, dtype=np.float64)
    else:
        items = [as_image(im) for im in imgs]
        if not items:
            raise InvalidInputError("empty image set")
        shapes = {im.shape for im in items}
        if len(shapes) != 1:
            raise InvalidInputError(f"mixed image sizes in set: {sorted(shapes)}")
        stack = np.stack(items)
    if stack.shape[0] == 0:
        raise InvalidInputError("empty image set")
    return stack


def require_square(img: np.ndarray, even: bool = False) -> int:
    h, w = img.shape[:2]
    if h != w:
        raise InvalidInputError(f"square image required, got {h}x{w}")
    if even and h % 2:
        raise InvalidInputError(f"even image size required, got {h}")
    return h


def clamp01(img: np.ndarray) -> tuple[np.ndarray, float]:
    """Clip to ``[0, 1]`` and report the fraction of pixels that were clipped."""
    out = np.clip(img, 0.0, 1.0)
    frac = float(np.mean((img < 0.0) | (img > 1.0))) if img.size else 0.0
    return out, frac


@dataclass
class Spectrum:
    """Per-channel 2D DFT coefficients, shape ``(H, W, C)``."""

    coeffs: np.ndarray
    shifted: bool = False

    @property
    def height(self) -> int:
        return self.coeffs.shape[0]

    @property
    def width(self) -> int:
        return self.coeffs.shape[1]

    @property
    def channels(self) -> int:
        return self.coeffs.shape[2]

    def centered(self) -> "Spectrum":
        if self.shifted:
            return self
        return Spectrum(np.fft.fftshift(self.coeffs, axes=(0, 1)), True)

    def uncentered(self) -> "Spectrum":
        if not self.shifted:
            return self
        return Spectrum(np.fft.ifftshift(self.coeffs, axes=(0, 1)), False)


def dft2(img, shift: bool = False) -> Spectrum:
    """Unnormalized per-channel 2D DFT; ``shift`` moves DC to ``(H//2, W//2)``."""
    arr = as_image(img)
    coeffs = np.fft.fft2(arr, axes=(0, 1))
    if shift:
        coeffs = np.fft.fftshift(coeffs, axes=(0, 1))
    return Spectrum(coeffs, shift)


def idft2(spec: Spectrum, clamp: bool = False, size: tuple[int, int] | None = None,
          return_residue: bool = False):
    """Inverse of :func:`dft2`. The real part is returned.

    ``size`` optionally declares the expected ``(H, W)``; a mismatch raises.
    With ``return_residue`` the largest absolute imaginary part is returned too.
    """
    coeffs = np.asarray(spec.coeffs)
    if coeffs.ndim == 2:
        coeffs = coeffs[:, :, None]
    if coeffs.ndim != 3 or 0 in coeffs.shape:
        raise InvalidInputError(f"invalid spectrum shape {coeffs.shape}")
    if size is not None and tuple(size) != coeffs.shape[:2]:
        raise InvalidInputError(f"spectrum is {coeffs.shape[:2]}, declared size {tuple(size)}")
    if spec.shifted:
        coeffs = np.fft.ifftshift(coeffs, axes=(0, 1))
    out = np.fft.ifft2(coeffs, axes=(0, 1))
    residue = float(np.max(np.abs(out.imag)))
    if residue > 1e-6:
        logger.debug("idft2 imaginary residue %.3g", residue)
    img = out.real
    if clamp:
        img, _ = clamp01(img)
    if return_residue:
        return img, residue
    return img


def centered_distance(h: int, w: int) -> np.ndarray:
    """Euclidean distance of each shifted-spectrum index to ``(h//2, w//2)``."""
    u = np.arange(h, dtype=np.float64) - h // 2
    v = np.arange(w, dtype=np.float64) - w // 2
    return np.sqrt(u[:, None] ** 2 + v[None, :] ** 2)


def filter_radius(h: int, w: int) -> np.ndarray:
    """Centroid distance normalized by the half diagonal (corners map to 1)."""
    half_diag = np.sqrt((h / 2.0) ** 2 + (w / 2.0) ** 2)
    return centered_distance(h, w) / half_diag


def profile_radius(n: int, clip: bool = True) -> np.ndarray:
    """Centroid distance on the profile scale ``d / (n/2 - 1)``.

    With ``clip`` the corner region beyond the last profile bin is folded to
    ``1.0``, matching how :func:`spectral_profile` folds those coefficients.
    """
    if n < 4:
        raise InvalidInputError(f"profile radius needs n >= 4, got {n}")
    r = centered_distance(n, n) / (n / 2 - 1)
    return np.minimum(r, 1.0) if clip else r


def ideal_mask(h: int, w: int, r0: float) -> np.ndarray:
    """Binary circular low-pass mask on the shifted spectrum."""
    return (filter_radius(h, w) <= r0 + 1e-12).astype(np.float64)


def apply_spectral_filter(img, transfer: np.ndarray) -> np.ndarray:
    """Multiply the centered spectrum by ``transfer`` (H, W) and invert."""
    arr = as_image(img)
    spec = dft2(arr, shift=True)
    return idft2(Spectrum(spec.coeffs * transfer[:, :, None], True))


def decompose(img, r0: float) -> tuple[np.ndarray, np.ndarray]:
    """Split ``img`` into ideal low-pass and high-pass parts at radius ``r0``."""
    arr = as_image(img)
    n = require_square(arr)
    if not 0.0 <= r0 <= 1.0:
        raise InvalidInputError(f"r0 must lie in [0, 1], got {r0}")
    mask = ideal_mask(n, n, r0)[:, :, None]
    spec = dft2(arr, shift=True)
    low = idft2(Spectrum(spec.coeffs * mask, True))
    high = idft2(Spectrum(spec.coeffs * (1.0 - mask), True))
    return low, high


def lowpass(img, r0: float) -> np.ndarray:
    return decompose(img, r0)[0]


def butterworth_transfer(n: int, r0: float, order: int) -> np.ndarray:
    d = filter_radius(n, n)
    return 1.0 / (1.0 + (d / r0) ** (2 * order))


def butterworth_lowpass(img, r0: float, order: int = 2) -> np.ndarray:
    """Butterworth low-pass with cutoff ``r0`` on the filter-radius scale."""
    arr = as_image(img)
    n = require_square(arr)
    if r0 <= 0 or r0 > 1:
        raise InvalidInputError(f"cutoff must lie in (0, 1], got {r0}")
    if int(order) != order or order < 1:
        raise InvalidInputError(f"order must be a positive integer, got {order}")
    return apply_spectral_filter(arr, butterworth_transfer(n, r0, int(order)))


@dataclass
class SpectralProfile:
    """Azimuthal mean of ``log(1 + |F|)`` per integer radial bin."""

    bins: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.float64)
        self.radii = np.asarray(self.radii, dtype=np.float64)
        if self.bins.shape != self.radii.shape:
            raise InvalidInputError("bins and radii lengths differ")

    def __len__(self) -> int:
        return len(self.bins)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("k,r_k,value\n")
            for k, (r, val) in enumerate(zip(self.radii, self.bins)):
                fh.write(f"{k},{r:.10g},{val:.17g}\n")


def profile_radii(n: int) -> np.ndarray:
    half = n // 2
    return np.arange(half, dtype=np.float64) / (half - 1)


def _bin_index(n: int) -> np.ndarray:
    k = np.rint(centered_distance(n, n)).astype(np.int64)
    return np.minimum(k, n // 2 - 1)


def _profile_from_values(values: np.ndarray, n: int) -> np.ndarray:
    """Azimuthal mean of ``values`` (..., n, n) over the rounded-radius bins."""
    idx = _bin_index(n).ravel()
    counts = np.bincount(idx, minlength=n // 2).astype(np.float64)
    flat = values.reshape(-1, n * n)
    sums = np.stack([np.bincount(idx, weights=row, minlength=n // 2) for row in flat])
    return (sums / counts).reshape(values.shape[:-2] + (n // 2,))


def _check_profile_size(arr: np.ndarray) -> int:
    n = require_square(arr, even=True)
    if n < 4:
        raise InvalidInputError(f"spectral profile needs N >= 4, got {n}")
    return n


def log_magnitude(img) -> np.ndarray:
    """Channel-averaged ``log(1 + |F|)`` of the centered spectrum, shape (H, W)."""
    spec = dft2(img, shift=True)
    return np.log1p(np.abs(spec.coeffs)).mean(axis=2)


def profile_values(imgs) -> np.ndarray:
    """Profile bins for a stack of images, shape ``(n_images, N/2)``."""
    stack = as_image_stack(imgs)
    n = _check_profile_size(stack[0])
    coeffs = np.fft.fftshift(np.fft.fft2(stack, axes=(1, 2)), axes=(1, 2))
    logmag = np.log1p(np.abs(coeffs)).mean(axis=3)
    return _profile_from_values(logmag, n)


def spectral_profile(img) -> SpectralProfile:
    arr = as_image(img)
    n = _check_profile_size(arr)
    return SpectralProfile(profile_values(arr[None])[0], profile_radii(n))


def mean_profile(imgs) -> SpectralProfile:
    """Bin-wise mean of the profiles of an image set."""
    stack = as_image_stack(imgs)
    n = _check_profile_size(stack[0])
    return SpectralProfile(profile_values(stack).mean(axis=0), profile_radii(n))


def radial_power_profile(imgs) -> SpectralProfile:
    """Mean azimuthal average of the power ``|F|^2`` (no log scaling).

    Used to check the power-law exponent of generated corpora; the log-scaled
    :func:`spectral_profile` is the analysis profile everywhere else.
    """
    stack = as_image_stack(imgs)
    n = _check_profile_size(stack[0])
    coeffs = np.fft.fftshift(np.fft.fft2(stack, axes=(1, 2)), axes=(1, 2))
    power = (np.abs(coeffs) ** 2).mean(axis=3)
    return SpectralProfile(_profile_from_values(power, n).mean(axis=0), profile_radii(n))


def mean_log_spectrum(imgs) -> np.ndarray:
    stack = as_image_stack(imgs)
    require_square(stack[0])
    coeffs = np.fft.fftshift(np.fft.fft2(stack, axes=(1, 2)), axes=(1, 2))
    return np.log1p(np.abs(coeffs)).mean(axis=(0, 3))


def write_heatmap_csv(path, heatmap: np.ndarray, count: int) -> None:
    n = heatmap.shape[0]
    with open(path, "w") as fh:
        fh.write(f"# mean_log_spectrum N={n} count={count}\n")
        for row in heatmap:
            fh.write(",".join(f"{v:.10g}" for v in row) + "\n")


def read_profile_csv(path) -> SpectralProfile:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return SpectralProfile(data[:, 2], data[:, 1])


def batch_lowpass(imgs: Sequence | np.ndarray, r0: float) -> np.ndarray:
    """Ideal low-pass of every image in a stack (vectorized :func:`lowpass`)."""
    stack = as_image_stack(imgs)
    n = require_square(stack[0])
    mask = ideal_mask(n, n, r0)[None, :, :, None]
    coeffs = np.fft.fftshift(np.fft.fft2(stack, axes=(1, 2)), axes=(1, 2)) * mask
    return np.fft.ifft2(np.fft.ifftshift(coeffs, axes=(1, 2)), axes=(1, 2)).real

