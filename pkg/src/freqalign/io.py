"""Image files, manifests and run records."""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, InvalidInputError

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm")
LABELS = ("real", "fake")


def to_uint8(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def read_image(path) -> np.ndarray:
    """Decode a PNG or PGM/PPM file to ``(H, W, C)`` floats with ``v -> v/255``.

    16-bit files are scaled by their maximum value instead.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            else:
                if mode not in ("L", "RGB"):
                    im = im.convert("RGB")
                arr = np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def write_image(path, img) -> None:
    """Write an 8-bit PNG, PGM or PPM according to the suffix."""
    path = Path(path)
    arr = to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    suffix = path.suffix.lower()
    fmt = {".png": "PNG", ".pgm": "PPM", ".ppm": "PPM", ".pnm": "PPM"}.get(suffix)
    if fmt is None:
        raise InvalidInputError(f"unsupported image suffix {suffix!r}")
    if suffix == ".pgm" and arr.ndim == 3:
        raise InvalidInputError("PGM files hold a single channel")
    # PNG metadata is left empty so repeated writes are byte-identical
    Image.fromarray(arr).save(path, format=fmt)


@dataclass
class ManifestRow:
    path: str
    label: str
    family: str
    seed: int


def write_manifest(path, rows: list[ManifestRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label", "family", "seed"])
        for r in rows:
            w.writerow([r.path, r.label, r.family, r.seed])


def read_manifest(path) -> list[ManifestRow]:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"path", "label"} <= set(reader.fieldnames):
                raise DataError(f"manifest {path} needs at least 'path' and 'label' columns")
            rows = []
            for rec in reader:
                label = (rec.get("label") or "").strip().lower()
                if label not in LABELS:
                    raise DataError(f"manifest {path}: invalid label {rec.get('label')!r}")
                seed = rec.get("seed") or "0"
                rows.append(ManifestRow(rec["path"], label, rec.get("family") or "", int(seed)))
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"manifest {path}: {exc}") from exc
    paths = [r.path for r in rows]
    if len(set(paths)) != len(paths):
        raise DataError(f"manifest {path} lists a path more than once")
    return rows


@dataclass
class LabeledSet:
    images: np.ndarray
    labels: list[str]
    families: list[str]
    paths: list[str]

    def __len__(self) -> int:
        return len(self.paths)

    def select(self, label: str) -> np.ndarray:
        idx = [i for i, lab in enumerate(self.labels) if lab == label]
        return self.images[idx]


def _stack(arrays: list[np.ndarray], paths: list[str]) -> np.ndarray:
    shape = arrays[0].shape
    for a, p in zip(arrays, paths):
        if a.shape != shape:
            raise DataError(f"size mismatch: {p} is {a.shape}, expected {shape}")
    return np.stack(arrays)


def load_images(source, label: str | None = None) -> LabeledSet:
    """Load a manifest CSV or every image in a directory.

    Directory loads take files in lexicographic path order and use ``label``
    (default ``real``) for every image.
    """
    source = Path(source)
    if source.is_file() and source.suffix.lower() == ".csv":
        rows = read_manifest(source)
        if not rows:
            raise DataError(f"manifest {source} is empty")
        base = source.parent
        paths = [str(Path(r.path) if Path(r.path).is_absolute() else base / r.path) for r in rows]
        labels = [r.label for r in rows]
        families = [r.family for r in rows]
    elif source.is_dir():
        files = sorted(p for p in source.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise DataError(f"no images found in {source}")
        paths = [str(p) for p in files]
        labels = [label or "real"] * len(paths)
        families = [""] * len(paths)
    elif source.is_file():
        paths, labels, families = [str(source)], [label or "real"], [""]
    else:
        raise DataError(f"no such file or directory: {source}")
    arrays = [read_image(p) for p in paths]
    return LabeledSet(_stack(arrays, paths), labels, families, paths)


# ---------------------------------------------------------------------------
# run records


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def versions() -> dict:
    import scipy
    import PIL

    from . import __version__
    return {"freqalign": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "pillow": PIL.__version__, "python": platform.python_version()}


def write_run_record(out_dir, command: str, config: dict, seed, artifacts: list) -> Path:
    """``run.json`` with the command, config hash, seed, versions and artifact digests.

    No timestamps are recorded so identical runs give identical records.
    """
    out_dir = Path(out_dir)
    digests = {}
    for a in artifacts:
        p = Path(a)
        if p.is_file():
            digests[str(p.relative_to(out_dir)) if p.is_relative_to(out_dir) else str(p)] = \
                sha256_file(p)
    record = {"command": command, "seed": seed, "config": config,
              "config_hash": config_hash(config), "versions": versions(),
              "artifacts": dict(sorted(digests.items()))}
    path = out_dir / "run.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")
    return path
