"""Reconstructive dual-domain calibration (RDC).

A U-shaped denoising autoencoder is trained on real images only: each real
image is spectrally "noised" by a random power-law rescale above a threshold
radius, and the network learns to undo it under a loss that compares low
frequencies through a frozen feature stack and high frequencies through a
focal-frequency term. At inference the trained network calibrates
SMR-rescaled fakes.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .alignment import power_ratio_factor
from .errors import InvalidInputError, InvalidModelError, TrainingDivergedError
from .nn import (
    Add,
    Concat,
    Conv2d,
    MaxPool2,
    Network,
    OptimizerState,
    PlateauDecay,
    ReLU,
    Sigmoid,
    Upsample2,
    adam_step,
)
from .nn import fqal
from .spectral import as_image, as_image_stack, clamp01, ideal_mask, profile_radius, require_square

logger = logging.getLogger(__name__)

A_RANGE = (0.5, 2.0)
B_RANGE = (-4.0, 4.0)


@dataclass
class NoiseSpec:
    a_prime: float
    b_prime: float
    r_t: float = 0.2

    def __post_init__(self):
        if not A_RANGE[0] <= self.a_prime <= A_RANGE[1]:
            raise InvalidInputError(f"a' must lie in {A_RANGE}, got {self.a_prime}")
        if not B_RANGE[0] <= self.b_prime <= B_RANGE[1]:
            raise InvalidInputError(f"b' must lie in {B_RANGE}, got {self.b_prime}")

    @classmethod
    def sample(cls, rng: np.random.Generator, r_t: float = 0.2, a_range=A_RANGE,
               b_range=B_RANGE) -> "NoiseSpec":
        """Uniform draws of ``a'`` and ``b'``; sub-ranges must lie inside the valid ones."""
        return cls(float(rng.uniform(*a_range)), float(rng.uniform(*b_range)), r_t)


def noise_factor(n: int, spec: NoiseSpec) -> np.ndarray:
    return power_ratio_factor(profile_radius(n), spec.a_prime, spec.b_prime, spec.r_t)


def make_noised_real(real, spec: NoiseSpec, return_clamp: bool = False):
    """Imitate SMR on a real image with a random power-law factor."""
    arr = as_image(real)
    n = require_square(arr, even=True)
    coeffs = np.fft.fftshift(np.fft.fft2(arr, axes=(0, 1)), axes=(0, 1))
    coeffs = coeffs * noise_factor(n, spec)[:, :, None]
    out = np.fft.ifft2(np.fft.ifftshift(coeffs, axes=(0, 1)), axes=(0, 1)).real
    out, frac = clamp01(out)
    return (out, frac) if return_clamp else out


# ---------------------------------------------------------------------------
# losses; all operate on (B, H, W, C) batches and return the gradient w.r.t.
# their second argument


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise InvalidInputError(f"dimension mismatch: {a.shape} vs {b.shape}")


def _batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim == 3:
        x = x[None]
    return x


class FeatureExtractor:
    """Frozen seed-initialized conv+ReLU stack standing in for pretrained
    perceptual features. ``widths=()`` gives the identity extractor whose only
    feature map is the input itself."""

    def __init__(self, channels: int, widths=(8, 16, 32), seed: int = 1234):
        self.channels = channels
        self.widths = tuple(widths)
        rng = np.random.default_rng(seed)
        net = Network(channels)
        prev = channels
        self.feature_nodes = []
        for i, w in enumerate(self.widths):
            net.add(f"f{i}", Conv2d(prev, w, 3, rng, dtype=np.float64))
            self.feature_nodes.append(net.add(f"f{i}r", ReLU()))
            prev = w
        if not self.widths:
            self.feature_nodes = ["input"]
        net.freeze()
        self.net = net

    def loss(self, a, b) -> tuple[float, np.ndarray]:
        """Mean over layers of the mean absolute feature difference; grad w.r.t. ``b``."""
        a, b = _batch(a), _batch(b)
        _check_pair(a, b)
        fa = self.net.forward_nodes(a, self.feature_nodes, keep_cache=False)
        fb = self.net.forward_nodes(b, self.feature_nodes, keep_cache=True)
        k = len(self.feature_nodes)
        total = 0.0
        grads = {}
        for name, xa, xb in zip(self.feature_nodes, fa, fb):
            d = xb - xa
            total += float(np.mean(np.abs(d)))
            g = np.sign(d) / (d.size * k)
            grads[name] = grads[name] + g if name in grads else g
        if self.feature_nodes == ["input"]:
            self.net._cache = None
            return total / k, grads["input"]
        _, dx = self.net.backward(None, node_grads=grads)
        return total / k, dx


def perceptual_loss(a_low, b_low, extractor: FeatureExtractor) -> tuple[float, np.ndarray]:
    return extractor.loss(a_low, b_low)


def focal_freq_loss(a_high, b_high) -> tuple[float, np.ndarray]:
    """``mean |F(a) - F(b)|^3`` per image/channel, averaged over the batch.

    ``F`` is the orthonormal DFT (unnormalized coefficients scaled by
    ``1/sqrt(MN)``), which keeps the term on the scale of pixel differences.
    The spectral difference is its own weight; the gradient w.r.t. ``b`` comes
    from the adjoint of the transform.
    """
    a, b = _batch(a_high), _batch(b_high)
    _check_pair(a, b)
    bsz, h, w, c = a.shape
    d = np.fft.fft2(a - b, axes=(1, 2), norm="ortho")
    mag = np.abs(d)
    loss = float(np.sum(mag ** 3) / (h * w) / (bsz * c))
    grad = -3.0 * np.fft.ifft2(mag * d, axes=(1, 2), norm="ortho").real / (h * w * bsz * c)
    return loss, grad


def _lowpass_stack(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    coeffs = np.fft.fftshift(np.fft.fft2(x, axes=(1, 2)), axes=(1, 2)) * mask
    return np.fft.ifft2(np.fft.ifftshift(coeffs, axes=(1, 2)), axes=(1, 2)).real


@dataclass
class LossParts:
    total: float
    perceptual: float
    focal: float


def rdc_loss(target, output, r: float, lam: float = 10.0,
             extractor: FeatureExtractor | None = None) -> tuple[LossParts, np.ndarray]:
    """Perceptual loss on the low band plus ``lam`` times focal-frequency loss
    on the high band, both bands split with the ideal filter at radius ``r``.

    Returns the loss terms and the gradient w.r.t. ``output``.
    """
    t, o = _batch(target), _batch(output)
    _check_pair(t, o)
    n = require_square(t[0])
    if extractor is None:
        extractor = FeatureExtractor(t.shape[3])
    mask = ideal_mask(n, n, r)[None, :, :, None]
    t_low, o_low = _lowpass_stack(t, mask), _lowpass_stack(o, mask)
    lp, g_low = extractor.loss(t_low, o_low)
    lf, g_high = focal_freq_loss(t - t_low, o - o_low)
    # the ideal low-pass is an orthogonal projection, so it is its own adjoint
    g_low = _lowpass_stack(g_low, mask)
    g_high = g_high - _lowpass_stack(g_high, mask)
    grad = g_low + lam * g_high
    return LossParts(lp + lam * lf, lp, lf), grad


# ---------------------------------------------------------------------------
# network


def build_unet(channels: int, widths=(16, 32, 64, 128), seed: int = 0,
               dtype=np.float32, residual: bool = True) -> Network:
    """Four encoder blocks (two 3x3 conv+ReLU, 2x2 max pool), a bottleneck, and
    four decoder blocks (nearest 2x upsample + 3x3 conv, skip concatenation,
    two 3x3 conv+ReLU), ending in a 3x3 conv.

    With ``residual`` the final conv predicts a correction that is added to the
    input (zero-initialized, so an untrained model is the identity); otherwise
    a sigmoid maps it to the output.
    """
    rng = np.random.default_rng(seed)
    net = Network(channels)
    prev, src = channels, "input"
    skips = []
    for i, w in enumerate(widths, start=1):
        net.add(f"e{i}c1", Conv2d(prev, w, 3, rng, dtype), src)
        net.add(f"e{i}r1", ReLU())
        net.add(f"e{i}c2", Conv2d(w, w, 3, rng, dtype))
        skips.append(net.add(f"e{i}r2", ReLU()))
        src = net.add(f"e{i}p", MaxPool2())
        prev = w
    wb = widths[-1]
    net.add("bc1", Conv2d(prev, wb, 3, rng, dtype), src)
    net.add("br1", ReLU())
    net.add("bc2", Conv2d(wb, wb, 3, rng, dtype))
    src = net.add("br2", ReLU())
    prev = wb
    for i in range(len(widths), 0, -1):
        w = widths[i - 1]
        net.add(f"d{i}u", Upsample2(), src)
        net.add(f"d{i}uc", Conv2d(prev, w, 3, rng, dtype))
        up = net.add(f"d{i}ur", ReLU())
        net.add(f"d{i}cat", Concat(), [up, skips[i - 1]])
        net.add(f"d{i}c1", Conv2d(2 * w, w, 3, rng, dtype))
        net.add(f"d{i}r1", ReLU())
        net.add(f"d{i}c2", Conv2d(w, w, 3, rng, dtype))
        src = net.add(f"d{i}r2", ReLU())
        prev = w
    outc = Conv2d(prev, channels, 3, rng, dtype)
    net.add("outc", outc, src)
    if residual:
        outc.params["weight"][...] = 0.0
        net.add("out", Add(), ["outc", "input"])
    else:
        net.add("out", Sigmoid())
    return net


@dataclass
class RdcTrainConfig:
    lam: float = 10.0
    lr: float = 1.6e-3
    batch_size: int = 8
    epochs: int = 20
    r_range: tuple[float, float] = (0.1, 0.5)
    r_t: float = 0.2
    a_range: tuple[float, float] = A_RANGE
    b_range: tuple[float, float] = B_RANGE
    widths: tuple[int, ...] = (16, 32, 64, 128)
    residual: bool = True
    extractor_widths: tuple[int, ...] = (8, 16, 32)
    aug_noise: bool = True
    aug_jitter: bool = True
    aug_blur: bool = True
    aug_rotate: bool = True
    aug_prob: float = 0.5
    # train on random square crops of this size (None = full images)
    crop: int | None = None
    # epochs without improvement before the learning rate is halved
    plateau_patience: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidInputError(f"lambda must be positive, got {self.lam}")
        if self.batch_size < 1:
            raise InvalidInputError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise InvalidInputError(f"epochs must be >= 0, got {self.epochs}")
        if self.crop is not None and (self.crop < 16 or self.crop % 16):
            raise InvalidInputError(f"crop must be a multiple of 16, got {self.crop}")
        self.r_range = tuple(self.r_range)
        self.a_range = tuple(self.a_range)
        self.b_range = tuple(self.b_range)
        if not A_RANGE[0] <= self.a_range[0] <= self.a_range[1] <= A_RANGE[1]:
            raise InvalidInputError(f"a' range must lie inside {A_RANGE}, got {self.a_range}")
        if not B_RANGE[0] <= self.b_range[0] <= self.b_range[1] <= B_RANGE[1]:
            raise InvalidInputError(f"b' range must lie inside {B_RANGE}, got {self.b_range}")
        self.widths = tuple(self.widths)
        self.extractor_widths = tuple(self.extractor_widths)


class RdcModel:
    """The trained calibration autoencoder plus its training record."""

    def __init__(self, net: Network, image_size: int, channels: int, widths,
                 meta: dict | None = None, loss_curve: list[dict] | None = None):
        self.net = net
        self.image_size = image_size
        self.channels = channels
        self.widths = tuple(widths)
        self.meta = dict(meta or {})
        self.loss_curve = list(loss_curve or [])

    @property
    def trained(self) -> bool:
        return self.meta.get("epochs", 0) > 0

    def _check(self, stack: np.ndarray) -> None:
        if stack.shape[1:] != (self.image_size, self.image_size, self.channels):
            raise InvalidInputError(
                f"model expects {self.image_size}x{self.image_size}x{self.channels}, "
                f"got {stack.shape[1:]}")

    def infer_batch(self, imgs) -> np.ndarray:
        stack = as_image_stack(imgs)
        self._check(stack)
        out = self.net.predict(stack.astype(np.float32))
        return np.clip(out.astype(np.float64), 0.0, 1.0)

    def infer(self, img) -> np.ndarray:
        return self.infer_batch(as_image(img)[None])[0]

    def save(self, path) -> None:
        path = Path(path)
        self.net.save(path)
        sidecar = {
            "architecture": self.net.descriptor(),
            "image_size": self.image_size,
            "channels": self.channels,
            "widths": list(self.widths),
            "meta": self.meta,
        }
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2,
                                                                      sort_keys=True))

    @classmethod
    def load(cls, path) -> "RdcModel":
        path = Path(path)
        side = path.with_suffix(path.suffix + ".json")
        if not path.exists():
            raise InvalidModelError(f"model file not found: {path}")
        if not side.exists():
            raise InvalidModelError(f"model descriptor not found: {side}")
        info = json.loads(side.read_text())
        net = Network.from_descriptor(info["architecture"])
        net.set_parameters(fqal.load(path))
        return cls(net, info["image_size"], info["channels"], info["widths"], info["meta"])


def rdc_infer(model: RdcModel, x) -> np.ndarray:
    return model.infer(x)


def augment(img: np.ndarray, rng: np.random.Generator, cfg: RdcTrainConfig) -> np.ndarray:
    """Random noise, colour jitter, blur and rotation, each with ``aug_prob``."""
    out = img
    p = cfg.aug_prob
    if cfg.aug_rotate and rng.random() < p:
        out = np.rot90(out, int(rng.integers(1, 4)), axes=(0, 1))
        if rng.random() < 0.5:
            out = out[:, ::-1]
    if cfg.aug_jitter and rng.random() < p:
        gain = rng.uniform(0.9, 1.1, size=out.shape[2])
        out = (out - 0.5) * gain + 0.5 + rng.uniform(-0.05, 0.05)
    if cfg.aug_blur and rng.random() < p:
        out = gaussian_filter(out, sigma=(rng.uniform(0.3, 0.8),) * 2 + (0,), mode="reflect")
    if cfg.aug_noise and rng.random() < p:
        out = out + rng.normal(0.0, rng.uniform(0.0, 0.01), size=out.shape)
    return np.clip(np.ascontiguousarray(out), 0.0, 1.0)


def _crop(img: np.ndarray, size: int | None, rng: np.random.Generator) -> np.ndarray:
    if size is None or size >= img.shape[0]:
        return img
    y, x = rng.integers(0, img.shape[0] - size + 1, size=2)
    return img[y:y + size, x:x + size]


def init_model(size: int, channels: int, cfg: RdcTrainConfig) -> RdcModel:
    if size % (2 ** len(cfg.widths)):
        raise InvalidInputError(
            f"image size {size} must be a multiple of {2 ** len(cfg.widths)} for the U-Net")
    net = build_unet(channels, cfg.widths, cfg.seed, residual=cfg.residual)
    meta = {"seed": cfg.seed, "epochs": 0, "final_loss": None, "config": _cfg_dict(cfg)}
    return RdcModel(net, size, channels, cfg.widths, meta)


def _cfg_dict(cfg: RdcTrainConfig) -> dict:
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def train_rdc(real_corpus, cfg: RdcTrainConfig | None = None, progress=None) -> RdcModel:
    """Train the calibration autoencoder on real images only.

    ``progress`` is an optional callable receiving each loss-curve row.
    """
    cfg = cfg or RdcTrainConfig()
    try:
        reals = as_image_stack(real_corpus)
    except InvalidInputError as exc:
        raise InvalidInputError(f"empty or inconsistent training corpus: {exc}") from exc
    n_img, size, _, channels = reals.shape
    require_square(reals[0], even=True)
    model = init_model(size, channels, cfg)
    net = model.net
    rng = np.random.default_rng(cfg.seed)
    extractor = FeatureExtractor(channels, cfg.extractor_widths, seed=cfg.seed + 7919)
    state = OptimizerState(lr=cfg.lr)
    plateau = PlateauDecay(state, patience=cfg.plateau_patience)
    curve: list[dict] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_img)
        losses, clamps = [], []
        for start in range(0, n_img, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            targets = np.stack([augment(_crop(reals[i], cfg.crop, rng), rng, cfg) for i in idx])
            noised = []
            for t in targets:
                x, frac = make_noised_real(t, NoiseSpec.sample(rng, cfg.r_t, cfg.a_range, cfg.b_range), return_clamp=True)
                noised.append(x)
                clamps.append(frac)
            r = float(rng.uniform(*cfg.r_range))
            y = net.forward(np.stack(noised).astype(np.float32))
            parts, dy = rdc_loss(targets, y, r, cfg.lam, extractor)
            if not math.isfinite(parts.total):
                raise TrainingDivergedError(epoch)
            grads, _ = net.backward(dy.astype(np.float32), input_grad=False)
            adam_step(state, net.trainable(), {k: grads[k] for k in net.trainable()})
            losses.append(parts.total)
        epoch_loss = float(np.mean(losses))
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch)
        row = {"epoch": epoch, "loss": epoch_loss, "lr": state.lr,
               "clamp_fraction": float(np.mean(clamps))}
        curve.append(row)
        logger.info("rdc epoch %d loss %.5g lr %.3g clamp %.3f", epoch, epoch_loss, state.lr,
                    row["clamp_fraction"])
        if progress is not None:
            progress(row)
        plateau.observe(epoch_loss)
    model.loss_curve = curve
    model.meta.update({"epochs": cfg.epochs, "train_size": n_img,
                       "final_loss": curve[-1]["loss"] if curve else None})
    return model


def write_loss_curve(path, curve: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss,lr,clamp_fraction\n")
        for row in curve:
            fh.write(f"{row['epoch']},{row['loss']:.10g},{row['lr']:.10g},"
                     f"{row['clamp_fraction']:.10g}\n")
