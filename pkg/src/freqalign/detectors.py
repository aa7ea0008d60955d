"""Reference forgery detectors, defense protocols and frequency-bias experiments.

Two detectors are provided: ``pixel-cnn`` (three conv blocks, global pooling
and a dense logit) and ``profile-mlp`` (two dense layers on the spectral
profile). Both emit a logit; ``scores`` applies the sigmoid and scores at or
above 0.5 mean "fake".
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import InvalidInputError, InvalidModelError, StateError, TrainingDivergedError
from .lab import PerturbSpec, apply_perturbation
from .metrics import FAKE, REAL, MetricsReport, classification_metrics, encode_labels
from .nn import (
    Conv2d,
    Dense,
    Flatten,
    GlobalAvgPool,
    MaxPool2,
    Network,
    OptimizerState,
    ReLU,
    adam_step,
    bce_logits_loss,
)
from .nn import fqal
from .spectral import as_image_stack, batch_lowpass, profile_values, require_square

logger = logging.getLogger(__name__)

DETECTOR_KINDS = ("pixel-cnn", "profile-mlp")
PROTOCOLS = ("none", "mda", "p1", "p2", "p3")


# ---------------------------------------------------------------------------
# preprocessing


@dataclass(frozen=True)
class Preprocess:
    """What happens to every input before the network sees it."""

    kind: str = "none"  # none | lowpass | align
    r0: float | None = None

    def __post_init__(self):
        if self.kind not in ("none", "lowpass", "align"):
            raise InvalidInputError(f"unknown preprocessing {self.kind!r}")
        if self.kind == "lowpass" and (self.r0 is None or not 0.0 <= self.r0 <= 1.0):
            raise InvalidInputError(f"low-pass preprocessing needs r0 in [0, 1], got {self.r0}")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# detector


def build_pixel_cnn(channels: int, widths=(8, 16, 32), seed: int = 0) -> Network:
    rng = np.random.default_rng(seed)
    net = Network(channels)
    prev = channels
    for i, w in enumerate(widths, start=1):
        net.add(f"c{i}", Conv2d(prev, w, 3, rng))
        net.add(f"r{i}", ReLU())
        net.add(f"p{i}", MaxPool2())
        prev = w
    net.add("gap", GlobalAvgPool())
    net.add("fc", Dense(prev, 1, rng))
    return net


def build_profile_mlp(bins: int, hidden: int = 32, seed: int = 0) -> Network:
    rng = np.random.default_rng(seed)
    net = Network(bins)
    net.add("flat", Flatten())
    net.add("fc1", Dense(bins, hidden, rng))
    net.add("r1", ReLU())
    net.add("fc2", Dense(hidden, 1, rng))
    return net


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Detector:
    """A trained binary classifier plus its input preprocessing.

    ``align`` preprocessing needs a runtime alignment operator (any callable
    mapping an image stack to an aligned stack), attached with
    :meth:`attach_aligner`; it is not serialized.
    """

    def __init__(self, kind: str, net: Network, image_size: int, channels: int,
                 preprocess: Preprocess | None = None, meta: dict | None = None):
        if kind not in DETECTOR_KINDS:
            raise InvalidInputError(f"unknown detector kind {kind!r}; expected {DETECTOR_KINDS}")
        self.kind = kind
        self.net = net
        self.image_size = image_size
        self.channels = channels
        self.preprocess = preprocess or Preprocess()
        self.meta = dict(meta or {})
        self.aligner: Callable | None = None

    @property
    def trained(self) -> bool:
        return self.meta.get("epochs", 0) > 0

    @property
    def differentiable(self) -> bool:
        # retrieval inside the alignment operator has no gradient
        return self.kind == "pixel-cnn" and self.preprocess.kind != "align"

    def attach_aligner(self, aligner: Callable) -> "Detector":
        self.aligner = aligner
        return self

    # inputs --------------------------------------------------------------------

    def _check(self, stack: np.ndarray) -> None:
        if stack.shape[1:] != (self.image_size, self.image_size, self.channels):
            raise InvalidInputError(
                f"detector expects {self.image_size}x{self.image_size}x{self.channels} images, "
                f"got {stack.shape[1:]}")

    def prepare(self, imgs) -> np.ndarray:
        """Apply the preprocessing descriptor to an image stack."""
        stack = as_image_stack(imgs)
        self._check(stack)
        p = self.preprocess
        if p.kind == "lowpass":
            return batch_lowpass(stack, p.r0)
        if p.kind == "align":
            if self.aligner is None:
                raise StateError("detector needs an alignment pipeline for its preprocessing")
            return as_image_stack(self.aligner(stack))
        return stack

    def features(self, prepared: np.ndarray) -> np.ndarray:
        if self.kind == "pixel-cnn":
            return (prepared - 0.5).astype(np.float32)
        prof = profile_values(prepared)
        mu = np.asarray(self.meta["feature_mean"])
        sd = np.asarray(self.meta["feature_std"])
        return ((prof - mu) / sd).astype(np.float32)[:, None, None, :]

    # outputs -------------------------------------------------------------------

    def logits_prepared(self, prepared: np.ndarray, batch_size: int = 64) -> np.ndarray:
        out = [self.net.predict(self.features(prepared[i:i + batch_size]))[:, 0]
               for i in range(0, len(prepared), batch_size)]
        return np.concatenate(out).astype(np.float64) if out else np.zeros(0)

    def scores(self, imgs) -> np.ndarray:
        return _sigmoid(self.logits_prepared(self.prepare(imgs)))

    def predict(self, imgs) -> np.ndarray:
        """Labels with fake = 1, real = 0."""
        return (self.scores(imgs) >= 0.5).astype(np.int64)

    def loss_input_gradient(self, imgs, labels) -> np.ndarray:
        """Gradient of the mean BCE loss w.r.t. the raw input pixels."""
        if not self.differentiable:
            raise StateError(f"{self.kind} detector with {self.preprocess.kind} preprocessing "
                             "has no input gradient")
        prepared = self.prepare(imgs)
        t = encode_labels(labels).astype(np.float64)
        z = self.net.forward(self.features(prepared))
        _, dz = bce_logits_loss(t)(z)
        _, dx = self.net.backward(dz)
        dx = dx.astype(np.float64)
        if self.preprocess.kind == "lowpass":
            # the ideal low-pass is self-adjoint
            dx = batch_lowpass(dx, self.preprocess.r0)
        return dx

    # persistence ---------------------------------------------------------------

    def save(self, path) -> None:
        path = Path(path)
        self.net.save(path)
        side = {
            "kind": self.kind,
            "architecture": self.net.descriptor(),
            "image_size": self.image_size,
            "channels": self.channels,
            "preprocess": self.preprocess.to_dict(),
            "meta": self.meta,
        }
        path.with_suffix(path.suffix + ".json").write_text(
            json.dumps(side, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "Detector":
        path = Path(path)
        side = path.with_suffix(path.suffix + ".json")
        if not path.exists():
            raise InvalidModelError(f"detector file not found: {path}")
        if not side.exists():
            raise InvalidModelError(f"detector descriptor not found: {side}")
        info = json.loads(side.read_text())
        net = Network.from_descriptor(info["architecture"])
        net.set_parameters(fqal.load(path))
        return cls(info["kind"], net, info["image_size"], info["channels"],
                   Preprocess(**info["preprocess"]), info["meta"])


# ---------------------------------------------------------------------------
# defense protocols


@dataclass
class DefenseProtocol:
    variant: str = "none"  # none | mda | p1 | p2 | p3
    prob: float = 0.5
    abs_delta: bool = False

    def __post_init__(self):
        self.variant = self.variant.lower().replace("fa-", "")
        if self.variant == "mda-like":
            self.variant = "mda"
        if self.variant not in PROTOCOLS:
            raise InvalidInputError(f"unknown protocol {self.variant!r}; expected {PROTOCOLS}")
        if not 0.0 <= self.prob <= 1.0:
            raise InvalidInputError(f"augmentation probability must lie in [0, 1], got {self.prob}")

    @property
    def needs_alignment(self) -> bool:
        return self.variant in ("p1", "p2", "p3")


def mixup_augment(real, fake, aligned, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Add ``delta`` times the alignment residual ``|fake - aligned|`` to both a
    real image and the aligned fake, clamped to [0, 1]."""
    r, f, a = (np.asarray(x, dtype=np.float64) for x in (real, fake, aligned))
    if not r.shape == f.shape == a.shape:
        raise InvalidInputError(f"dimension mismatch: {r.shape}, {f.shape}, {a.shape}")
    res = delta * np.abs(f - a)
    return np.clip(r + res, 0.0, 1.0), np.clip(a + res, 0.0, 1.0)


def mda_augment(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One random blur, compression or noise perturbation."""
    kind = ("blur", "compress", "noise")[int(rng.integers(0, 3))]
    return apply_perturbation(img, PerturbSpec.sample(kind, rng))


# ---------------------------------------------------------------------------
# training


@dataclass
class DetectorConfig:
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    widths: tuple[int, ...] = (8, 16, 32)
    hidden: int = 32
    lowpass_r0: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidInputError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidInputError(f"batch size must be >= 1, got {self.batch_size}")
        self.widths = tuple(self.widths)


def _training_view(kind: str, stack: np.ndarray, labels: np.ndarray, protocol: DefenseProtocol,
                   aligned: np.ndarray | None, rng: np.random.Generator) -> np.ndarray:
    """The (possibly augmented) image stack seen during one epoch."""
    v = protocol.variant
    if v == "none" or v == "p2":
        return stack if v == "none" else aligned
    out = stack.copy() if v != "p3" else aligned.copy()
    fakes = np.flatnonzero(labels == FAKE)
    reals = np.flatnonzero(labels == REAL)
    if v == "mda":
        for i in range(len(out)):
            if rng.random() < protocol.prob:
                out[i] = mda_augment(out[i], rng)
    elif v == "p1":
        for i in fakes:
            if rng.random() < protocol.prob:
                out[i] = aligned[i]
    else:
        partners = rng.choice(reals, size=len(fakes))
        for i, j in zip(fakes, partners):
            if rng.random() < protocol.prob:
                delta = float(rng.standard_normal())
                if protocol.abs_delta:
                    delta = abs(delta)
                out[j], out[i] = mixup_augment(aligned[j], stack[i], aligned[i], delta)
    return out


def train_detector(kind: str, images, labels, protocol: DefenseProtocol | str = "none",
                   cfg: DetectorConfig | None = None, aligner: Callable | None = None,
                   epoch_callback: Callable[[int, "Detector"], None] | None = None) -> Detector:
    """Binary cross-entropy training of a reference detector.

    Protocols: ``mda`` perturbs each sample with probability ``prob``; ``p1``
    swaps each fake for its aligned version with probability ``prob``; ``p2``
    aligns every training image and makes alignment the detector's
    preprocessing; ``p3`` is ``p2`` plus residual mix-up with probability
    ``prob``. ``epoch_callback(epoch, detector)`` runs after every epoch.
    """
    cfg = cfg or DetectorConfig()
    protocol = protocol if isinstance(protocol, DefenseProtocol) else DefenseProtocol(protocol)
    stack = as_image_stack(images)
    y = encode_labels(labels)
    if len(y) != len(stack):
        raise InvalidInputError(f"{len(stack)} images but {len(y)} labels")
    if len(set(y.tolist())) < 2:
        raise InvalidInputError("training set must contain both real and fake images")
    if protocol.needs_alignment and aligner is None:
        raise InvalidInputError(f"protocol {protocol.variant} needs an alignment pipeline")
    n = require_square(stack[0])
    channels = stack.shape[3]

    if cfg.lowpass_r0 is not None:
        if protocol.needs_alignment:
            raise InvalidInputError("low-pass preprocessing cannot be combined with alignment")
        pre = Preprocess("lowpass", cfg.lowpass_r0)
    elif protocol.variant in ("p2", "p3"):
        pre = Preprocess("align")
    else:
        pre = Preprocess()

    aligned = None
    if protocol.variant == "p1":
        aligned = stack.copy()
        fakes = np.flatnonzero(y == FAKE)
        aligned[fakes] = as_image_stack(aligner(stack[fakes]))
    elif protocol.variant in ("p2", "p3"):
        aligned = as_image_stack(aligner(stack))
    if pre.kind == "lowpass":
        stack = batch_lowpass(stack, pre.r0)

    if kind == "pixel-cnn":
        net = build_pixel_cnn(channels, cfg.widths, cfg.seed)
        meta = {}
    elif kind == "profile-mlp":
        net = build_profile_mlp(n // 2, cfg.hidden, cfg.seed)
        base = aligned if protocol.variant in ("p2", "p3") else stack
        prof = profile_values(base)
        meta = {"feature_mean": prof.mean(axis=0).tolist(),
                "feature_std": np.maximum(prof.std(axis=0), 1e-6).tolist()}
    else:
        raise InvalidInputError(f"unknown detector kind {kind!r}; expected {DETECTOR_KINDS}")
    meta.update({"seed": cfg.seed, "epochs": 0, "protocol": protocol.variant,
                 "config": {k: (list(v) if isinstance(v, tuple) else v)
                            for k, v in asdict(cfg).items()}})
    det = Detector(kind, net, n, channels, pre, meta)
    if aligner is not None:
        det.attach_aligner(aligner)

    rng = np.random.default_rng([cfg.seed, 101])
    state = OptimizerState(lr=cfg.lr)
    curve = []
    for epoch in range(cfg.epochs):
        view = _training_view(kind, stack, y, protocol, aligned, rng)
        order = rng.permutation(len(view))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x = det.features(view[idx])
            z = net.forward(x)
            loss, dz = bce_logits_loss(y[idx])(z)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch)
            grads, _ = net.backward(dz, input_grad=False)
            adam_step(state, net.trainable(), grads)
            total += loss * len(idx)
        curve.append(total / len(order))
        det.meta["epochs"] = epoch + 1
        logger.info("detector epoch %d loss %.5f", epoch, curve[-1])
        if epoch_callback is not None:
            epoch_callback(epoch, det)
    det.meta["loss_curve"] = curve
    return det


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class DetectionReport:
    acc: float
    er: float
    real_acc: float | None
    n_fake: int
    n_real: int

    def metrics(self) -> MetricsReport:
        return MetricsReport(acc=self.acc, er=self.er)


def evaluate(detector: Detector, images, labels) -> DetectionReport:
    """Acc and ER on the fake samples; real-class accuracy reported separately."""
    stack = as_image_stack(images) if len(images) else None
    if stack is None or len(stack) == 0:
        raise InvalidInputError("empty test set")
    truth = encode_labels(labels)
    if len(truth) != len(stack):
        raise InvalidInputError(f"{len(stack)} images but {len(truth)} labels")
    preds = detector.predict(stack)
    reals = truth == REAL
    real_acc = 100.0 * float(np.mean(preds[reals] == REAL)) if reals.any() else None
    if (truth == FAKE).any():
        acc, er = classification_metrics(preds, truth)
    else:
        acc, er = math.nan, math.nan
    return DetectionReport(acc, er, real_acc, int((~reals).sum()), int(reals.sum()))


def fake_accuracy(detector: Detector, fakes) -> float:
    preds = detector.predict(fakes)
    return 100.0 * float(np.mean(preds == FAKE))


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentRow:
    condition: str
    train_family: str
    test_family: str
    r0_or_epoch: str
    acc: float
    er: float


@dataclass
class ExperimentReport:
    name: str
    seed: int
    rows: list[ExperimentRow] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def add(self, condition, train_family, test_family, r0_or_epoch, acc) -> None:
        acc = float(acc)
        self.rows.append(ExperimentRow(condition, train_family, test_family, str(r0_or_epoch),
                                       acc, 100.0 - acc))

    def table(self) -> dict[tuple[str, str], float]:
        return {(r.r0_or_epoch, r.condition): r.acc for r in self.rows}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["condition", "train_family", "test_family", "r0_or_epoch", "acc", "er"])
        for r in self.rows:
            w.writerow([r.condition, r.train_family, r.test_family, r.r0_or_epoch,
                        f"{r.acc:.4f}", f"{r.er:.4f}"])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"experiment": self.name, "seed": self.seed,
                           "rows": [asdict(r) for r in self.rows], "extra": self.extra},
                          indent=2, sort_keys=True)


PERTURBATIONS = ("blur", "compress", "noise", "fgsm")
CONDITIONS = ("fake-A", "fake-B") + PERTURBATIONS
BANDS = (None, 0.75, 0.5, 0.25)


def perturbed_fakes(fakes: np.ndarray, seed: int, detector: Detector | None) -> dict:
    """The four perturbation families applied to a fake test set.

    FGSM uses ``detector`` (white-box) and is skipped when it is not
    differentiable.
    """
    rng = np.random.default_rng([seed, 303])
    out = {}
    for kind in PERTURBATIONS:
        specs = [PerturbSpec.sample(kind, rng) for _ in range(len(fakes))]
        if kind == "fgsm":
            if detector is None or not detector.differentiable:
                continue
            grad = detector.loss_input_gradient(fakes, ["fake"] * len(fakes))
            eps = np.array([s.epsilon for s in specs])[:, None, None, None]
            out[kind] = np.clip(fakes + eps * np.sign(grad), 0.0, 1.0)
        else:
            out[kind] = np.stack([apply_perturbation(f, s) for f, s in zip(fakes, specs)])
    return out


def condition_sets(lab, detector: Detector | None, seed: int) -> dict[str, np.ndarray]:
    sets = {"fake-A": lab.test_a, "fake-B": lab.test_b}
    sets.update(perturbed_fakes(lab.test_a, seed, detector))
    return sets


def experiment_bias_bands(lab, cfg: DetectorConfig | None = None,
                          bands=BANDS) -> ExperimentReport:
    """Train pixel-cnn on real vs fake-A at each low-pass radius and test every condition."""
    cfg = cfg or DetectorConfig(seed=lab.seed)
    report = ExperimentReport("bias-bands", cfg.seed)
    x, y = lab.train_set()
    for r0 in bands:
        c = DetectorConfig(**{**asdict(cfg), "lowpass_r0": r0})
        det = train_detector("pixel-cnn", x, y, "none", c)
        label = "none" if r0 is None else f"{r0:g}"
        for name, imgs in condition_sets(lab, det, cfg.seed).items():
            fam = "fake-B" if name == "fake-B" else "fake-A"
            report.add(name, "fake-A", fam, label, fake_accuracy(det, imgs))
        logger.info("bias-bands r0=%s done", label)
    return report


def experiment_bias_epochs(lab, cfg: DetectorConfig | None = None) -> ExperimentReport:
    """Train pixel-cnn on real vs fake-A and test every condition after each epoch."""
    cfg = cfg or DetectorConfig(seed=lab.seed)
    report = ExperimentReport("bias-epochs", cfg.seed)
    # perturbations other than FGSM are fixed up front; FGSM follows the detector
    fixed = perturbed_fakes(lab.test_a, cfg.seed, None)

    def on_epoch(epoch, det):
        sets = {"fake-A": lab.test_a, "fake-B": lab.test_b, **fixed}
        sets.update({k: v for k, v in perturbed_fakes(lab.test_a, cfg.seed, det).items()
                     if k == "fgsm"})
        for name in CONDITIONS:
            fam = "fake-B" if name == "fake-B" else "fake-A"
            report.add(name, "fake-A", fam, epoch + 1, fake_accuracy(det, sets[name]))

    x, y = lab.train_set()
    train_detector("pixel-cnn", x, y, "none", cfg, epoch_callback=on_epoch)
    return report


# ---------------------------------------------------------------------------
# desk lab


@dataclass
class DeskLab:
    """Seeded corpora for the detector experiments.

    Training uses ``real``/``fake_a``; evaluation uses disjoint ``test_*`` sets.
    """

    seed: int
    real: np.ndarray
    fake_a: np.ndarray
    test_real: np.ndarray
    test_a: np.ndarray
    test_b: np.ndarray

    def train_set(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.concatenate([self.real, self.fake_a])
        y = np.array([REAL] * len(self.real) + [FAKE] * len(self.fake_a))
        return x, y


def make_desk_lab(seed: int = 0, n_train: int = 400, n_test: int = 200, size: int = 64,
                  strength: float = 0.6) -> DeskLab:
    from .lab import SynthSpec, gen_synthetic

    def batch(kind, count, offset):
        return gen_synthetic(SynthSpec(size=size, count=count, seed=seed + offset, kind=kind,
                                       strength=strength))

    return DeskLab(
        seed=seed,
        real=batch("real", n_train, 0),
        fake_a=batch("fake-A", n_train, 0),
        test_real=batch("real", n_test, 1000),
        test_a=batch("fake-A", n_test, 1000),
        test_b=batch("fake-B", n_test, 1000),
    )
