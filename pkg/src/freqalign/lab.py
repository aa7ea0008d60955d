"""Synthetic forgery lab and image perturbations.

Real images are Gaussian random fields with a ``1/f^2`` power spectrum plus
smooth colour blobs. Two fake families stand in for different generators:

* ``fake-A`` blends the base with its 2x box-downsampled, nearest-upsampled
  copy, which injects grid harmonics near Nyquist;
* ``fake-B`` adds a few sinusoidal gratings at profile radius >= 0.5.

Both fake families share a weak low-frequency colour cast, the generator
trait that survives band-limiting and alignment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, UnsupportedDetectorError
from .spectral import as_image

KINDS = ("real", "fake-A", "fake-B")
_KIND_CODE = {"real": 0, "fake-A": 1, "fake-B": 2}


@dataclass
class SynthSpec:
    size: int = 64
    count: int = 100
    seed: int = 0
    kind: str = "real"
    strength: float = 0.6
    # colour-cast distribution: real ~ N(0, sd), fakes ~ N(shift, sd)
    cast_shift: float = 0.03
    cast_sd: float = 0.02
    channels: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        if self.size < 16 or self.size % 16:
            raise InvalidInputError(f"size must be a positive multiple of 16, got {self.size}")
        if self.count < 0:
            raise InvalidInputError(f"count must be >= 0, got {self.count}")
        if self.kind != "real" and not self.strength > 0:
            raise InvalidInputError("artifact strength must be positive for fake kinds")
        if self.channels not in (1, 3):
            raise InvalidInputError(f"channels must be 1 or 3, got {self.channels}")


def image_rng(seed: int, kind: str, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), _KIND_CODE.get(kind, 9), int(index)])


def power_law_field(rng: np.random.Generator, n: int, exponent: float = -2.0) -> np.ndarray:
    """Zero-mean, unit-variance field whose power spectrum falls as ``f**exponent``."""
    fy = np.fft.fftfreq(n)[:, None]
    fx = np.fft.fftfreq(n)[None, :]
    f = np.sqrt(fx ** 2 + fy ** 2)
    f[0, 0] = 1.0
    amp = f ** (exponent / 2.0)
    amp[0, 0] = 0.0
    noise = np.fft.fft2(rng.standard_normal((n, n)))
    field = np.fft.ifft2(noise * amp).real
    return field / field.std()


def _blobs(rng: np.random.Generator, n: int, channels: int) -> np.ndarray:
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    out = np.zeros((n, n, channels))
    for _ in range(int(rng.integers(2, 6))):
        cy, cx = rng.uniform(0, n, size=2)
        sigma = rng.uniform(n / 10, n / 4)
        g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        out += g[:, :, None] * rng.normal(0.0, 1.2, size=channels)
    return out


def _base(rng: np.random.Generator, n: int, channels: int) -> np.ndarray:
    lum = power_law_field(rng, n)
    if channels == 3:
        chroma = np.stack([power_law_field(rng, n), power_law_field(rng, n)], axis=-1)
        mix = np.array([[0.30, 0.10], [-0.15, -0.20], [-0.15, 0.25]])
        field = lum[:, :, None] + chroma @ mix.T
    else:
        field = lum[:, :, None]
    img = field + _blobs(rng, n, channels)
    lo, hi = img.min(), img.max()
    return 0.06 + 0.88 * (img - lo) / (hi - lo)


def _cast(img: np.ndarray, amount: float) -> np.ndarray:
    if img.shape[2] == 3:
        return img + np.array([amount, 0.0, -amount])
    return img + amount


def box_down_nearest_up(img: np.ndarray) -> np.ndarray:
    h, w, c = img.shape
    small = img.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))
    return small.repeat(2, axis=0).repeat(2, axis=1)


def gratings(rng: np.random.Generator, n: int, channels: int, amplitude: float) -> np.ndarray:
    """Sum of 2-4 on-grid sinusoids with profile radius in [0.5, 0.95]."""
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    out = np.zeros((n, n))
    half = n / 2 - 1
    count = int(rng.integers(2, 5))
    placed = 0
    while placed < count:
        u, v = rng.integers(-n // 2 + 1, n // 2, size=2)
        r = np.hypot(u, v) / half
        if not 0.5 <= r <= 0.95:
            continue
        phase = rng.uniform(0, 2 * np.pi)
        out += np.cos(2 * np.pi * (u * yy + v * xx) / n + phase)
        placed += 1
    return amplitude * out[:, :, None] * np.ones(channels)


def synth_image(spec: SynthSpec, index: int) -> np.ndarray:
    rng = image_rng(spec.seed, spec.kind, index)
    n, c = spec.size, spec.channels
    img = _base(rng, n, c)
    if spec.kind == "real":
        return np.clip(_cast(img, rng.normal(0.0, spec.cast_sd)), 0.0, 1.0)
    img = _cast(img, rng.normal(spec.cast_shift, spec.cast_sd))
    if spec.kind == "fake-A":
        s = min(spec.strength, 1.0)
        img = (1.0 - s) * img + s * box_down_nearest_up(img)
    else:
        img = img + gratings(rng, n, c, 0.02 * spec.strength)
    return np.clip(img, 0.0, 1.0)


def gen_synthetic(spec: SynthSpec) -> np.ndarray:
    """Deterministic batch ``(count, size, size, channels)`` for one family."""
    if spec.count == 0:
        return np.zeros((0, spec.size, spec.size, spec.channels))
    return np.stack([synth_image(spec, i) for i in range(spec.count)])


# ---------------------------------------------------------------------------
# perturbations


BLUR_KERNELS = (3, 5, 7, 9)
FGSM_EPSILONS = (4 / 255, 8 / 255)


def gaussian_kernel(size: int) -> np.ndarray:
    sigma = 0.3 * ((size - 1) / 2 - 1) + 0.8
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def blur(img, kernel: int) -> np.ndarray:
    """Separable Gaussian blur with reflect (edge-excluded) padding."""
    arr = as_image(img)
    if kernel % 2 == 0 or kernel < 1:
        raise InvalidInputError(f"blur kernel must be odd, got {kernel}")
    if kernel not in BLUR_KERNELS:
        raise InvalidInputError(f"blur kernel must be one of {BLUR_KERNELS}, got {kernel}")
    g = gaussian_kernel(kernel)
    p = kernel // 2
    xp = np.pad(arr, ((p, p), (p, p), (0, 0)), mode="reflect")
    h, w = arr.shape[:2]
    tmp = sum(g[i] * xp[:, i:i + w, :] for i in range(kernel))
    return sum(g[i] * tmp[i:i + h, :, :] for i in range(kernel))


LUMINANCE_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


def quant_table(quality: int) -> np.ndarray:
    """Luminance table scaled by the libjpeg quality rule."""
    if not 1 <= quality <= 100:
        raise InvalidInputError(f"quality must lie in 1..100, got {quality}")
    scale = 5000 / quality if quality < 50 else 200 - 2 * quality
    return np.maximum(1.0, np.floor((LUMINANCE_TABLE * scale + 50) / 100))


def dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * x + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


def compress_sim(img, quality: int) -> np.ndarray:
    """Blockwise 8x8 DCT quantize/dequantize (no entropy coding), clamped."""
    arr = as_image(img)
    h, w, c = arr.shape
    if h % 8 or w % 8:
        raise InvalidInputError(f"image dimensions must be multiples of 8, got {h}x{w}")
    q = quant_table(int(quality))
    d = dct_matrix()
    blocks = (arr * 255.0 - 128.0).reshape(h // 8, 8, w // 8, 8, c)
    coef = np.einsum("ij,ajbkc,lk->aiblc", d, blocks, d)
    coef = np.round(coef / q[None, :, None, :, None]) * q[None, :, None, :, None]
    rec = np.einsum("ji,ajbkc,kl->aiblc", d, coef, d)
    return np.clip((rec.reshape(h, w, c) + 128.0) / 255.0, 0.0, 1.0)


def add_noise(img, variance: float, rng: np.random.Generator | int | None = None) -> np.ndarray:
    """I.i.d. Gaussian noise; ``variance`` is on the 0-255 scale."""
    arr = as_image(img)
    if variance < 0:
        raise InvalidInputError(f"noise variance must be non-negative, got {variance}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    sigma = np.sqrt(variance) / 255.0
    return np.clip(arr + rng.normal(0.0, 1.0, size=arr.shape) * sigma, 0.0, 1.0)


def fgsm(img, detector, eps: float, label) -> np.ndarray:
    """One signed-gradient step that increases the detector's loss on ``label``."""
    arr = as_image(img)
    grad_fn = getattr(detector, "loss_input_gradient", None)
    if grad_fn is None or not getattr(detector, "differentiable", False):
        raise UnsupportedDetectorError(
            f"detector {getattr(detector, 'kind', type(detector).__name__)!r} has no input gradient")
    grad = grad_fn(arr[None], [label])[0]
    return np.clip(arr + eps * np.sign(grad), 0.0, 1.0)


@dataclass
class PerturbSpec:
    kind: str
    kernel: int = 3
    quality: int = 50
    variance: float = 10.0
    epsilon: float = 4 / 255
    seed: int = 0

    @classmethod
    def sample(cls, kind: str, rng: np.random.Generator) -> "PerturbSpec":
        if kind not in ("blur", "compress", "noise", "fgsm"):
            raise InvalidInputError(f"unknown perturbation {kind!r}")
        return cls(
            kind=kind,
            kernel=int(rng.choice(BLUR_KERNELS)),
            quality=int(rng.integers(10, 76)),
            variance=float(rng.uniform(5.0, 20.0)),
            epsilon=float(rng.choice(FGSM_EPSILONS)),
            seed=int(rng.integers(0, 2 ** 31)),
        )


def apply_perturbation(img, spec: PerturbSpec, detector=None, label="fake") -> np.ndarray:
    if spec.kind == "blur":
        return blur(img, spec.kernel)
    if spec.kind == "compress":
        return compress_sim(img, spec.quality)
    if spec.kind == "noise":
        return add_noise(img, spec.variance, spec.seed)
    if spec.kind == "fgsm":
        if detector is None:
            raise InvalidInputError("FGSM needs a detector")
        return fgsm(img, detector, spec.epsilon, label)
    raise InvalidInputError(f"unknown perturbation {spec.kind!r}")


def perturb_set(imgs, kind: str, seed: int, detector=None, label="fake") -> np.ndarray:
    """Apply one perturbation family with per-image sampled parameters."""
    rng = np.random.default_rng([int(seed), 77])
    out = []
    for im in imgs:
        spec = PerturbSpec.sample(kind, rng)
        out.append(apply_perturbation(im, spec, detector, label))
    return np.stack(out)
