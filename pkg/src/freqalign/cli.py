"""Command-line interface.

Every command writes its artifacts plus ``run.json`` (command, seed, config
hash, library versions and artifact digests) into ``--out``. Exit codes: 0
success, 1 usage error, 2 data or resource error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import alignment, detectors, lab, metrics, rdc, spectral
from .errors import (
    DataError,
    DegenerateFitError,
    FreqAlignError,
    InvalidFitError,
    InvalidInputError,
    InvalidModelError,
    StateError,
    TrainingDivergedError,
    UnsupportedDetectorError,
)
from .io import (
    ManifestRow,
    load_images,
    write_image,
    write_manifest,
    write_run_record,
)

logger = logging.getLogger("freqalign")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# defaults for options that may also come from the config file
DEFAULTS = {
    "seed": 0, "out": "out", "k": 50, "rt": 0.2, "epsilon": 4 / 255, "quality": 50,
    "r0": None, "protocol": "p2", "epochs": None, "lam": 10.0, "kind": None, "count": 100,
    "size": 64, "strength": 0.6, "lo": 0.2, "hi": 1.0, "power": False, "widths": None,
    "batch_size": None, "lr": None, "kernel": 3, "variance": 10.0, "detector_kind": "pixel-cnn",
    "n_train": 400, "n_test": 200, "label": "fake", "family": None,
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its fields")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--out", help="output directory (default ./out)")


def _align_resources(p: argparse.ArgumentParser, model: bool = True) -> None:
    p.add_argument("--real-corpus", dest="real_corpus", help="real images for SMR retrieval")
    p.add_argument("--fake-corpus", dest="fake_corpus", help="fake images for SMR retrieval")
    p.add_argument("--k", type=int, help="retrieval count K (default 50)")
    p.add_argument("--rt", type=float, help="threshold radius r_T (default 0.2)")
    if model:
        p.add_argument("--model", help="trained calibration model (.fqal)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="freqalign", description="Spectral forensics and frequency alignment")
    _add_common(parser)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic corpus")
    _add_common(p)
    p.add_argument("--kind", choices=lab.KINDS, required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--strength", type=float)

    p = sub.add_parser("analyze", help="spectral analysis")
    asub = p.add_subparsers(dest="analysis", parser_class=_Parser)
    q = asub.add_parser("spectrum", help="mean log-spectrum heatmap and profile")
    _add_common(q)
    q.add_argument("--input", required=True)

    p = sub.add_parser("profile", help="mean 1D spectral profile")
    _add_common(p)
    p.add_argument("--input", required=True)

    p = sub.add_parser("fit-powerlaw", help="fit a*r^b to the mean profile")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--lo", type=float)
    p.add_argument("--hi", type=float)
    p.add_argument("--power", action="store_true", default=None,
                   help="fit the radial power spectrum instead of the log profile")

    p = sub.add_parser("rspd", help="real-referenced spectral profile distance")
    _add_common(p)
    p.add_argument("--real", required=True)
    p.add_argument("--test", required=True)

    p = sub.add_parser("smr", help="spectral magnitude rescaling")
    _add_common(p)
    p.add_argument("--input", required=True)
    _align_resources(p, model=False)

    p = sub.add_parser("train-rdc", help="train the calibration autoencoder")
    _add_common(p)
    p.add_argument("--input", required=True, help="real training images")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--widths", help="comma-separated encoder widths, e.g. 16,32,64,128")

    p = sub.add_parser("align", help="SMR followed by the calibration model")
    _add_common(p)
    p.add_argument("--input", required=True)
    _align_resources(p)

    p = sub.add_parser("perturb", help="blur, compress, noise or FGSM")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--kind", choices=("blur", "compress", "noise", "fgsm"), required=True)
    p.add_argument("--kernel", type=int)
    p.add_argument("--quality", type=int)
    p.add_argument("--variance", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--detector", help="detector for FGSM")
    p.add_argument("--label", choices=("real", "fake"), help="true label for FGSM")

    for name, helptext in (("train-detector", "train a reference detector"),
                           ("defend", "train a protected detector and evaluate it")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        p.add_argument("--train", required=True, help="training manifest")
        p.add_argument("--detector-kind", dest="detector_kind",
                       choices=detectors.DETECTOR_KINDS)
        p.add_argument("--protocol", choices=("none", "mda", "p1", "p2", "p3"))
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--r0", type=float, help="low-pass radius applied to every input")
        _align_resources(p)
        if name == "defend":
            p.add_argument("--test", required=True, action="append",
                           help="test manifest (repeatable)")

    p = sub.add_parser("eval-detector", help="evaluate a trained detector")
    _add_common(p)
    p.add_argument("--detector", required=True)
    p.add_argument("--test", required=True)
    _align_resources(p)

    p = sub.add_parser("experiment", help="frequency-bias experiments")
    esub = p.add_subparsers(dest="experiment", parser_class=_Parser)
    for name in ("bias-bands", "bias-epochs"):
        q = esub.add_parser(name)
        _add_common(q)
        q.add_argument("--epochs", type=int)
        q.add_argument("--n-train", dest="n_train", type=int)
        q.add_argument("--n-test", dest="n_test", type=int)
        q.add_argument("--size", type=int)
        q.add_argument("--strength", type=float)
    return parser


# ---------------------------------------------------------------------------
# helpers


def _settings(args: argparse.Namespace) -> dict:
    """Defaults < config file < flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text())
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise DataError(f"config {path} must hold a JSON object")
        if "lambda" in loaded:
            loaded["lam"] = loaded.pop("lambda")
        cfg.update(loaded)
    for k, v in vars(args).items():
        if v is not None and k != "config":
            cfg[k] = v
    return cfg


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(cfg: dict, key: str, what: str) -> str:
    val = cfg.get(key)
    if not val:
        raise DataError(f"missing {what} (--{key.replace('_', '-')})")
    if not Path(val).exists():
        raise DataError(f"{what} not found: {val}")
    return val


def _write_set(out: Path, imgs, names, labels, family: str, seed: int) -> list[Path]:
    img_dir = out / "images"
    img_dir.mkdir(exist_ok=True)
    rows, paths = [], []
    for im, name, label in zip(imgs, names, labels):
        path = img_dir / name
        write_image(path, im)
        rows.append(ManifestRow(f"images/{name}", label, family, seed))
        paths.append(path)
    write_manifest(out / "manifest.csv", rows)
    return paths + [out / "manifest.csv"]


def _record_config(cfg: dict) -> dict:
    return {k: v for k, v in sorted(cfg.items()) if k not in ("out",)}


def _aligner(cfg: dict, need_model: bool):
    real = load_images(_require(cfg, "real_corpus", "real retrieval corpus")).images
    fake = load_images(_require(cfg, "fake_corpus", "fake retrieval corpus")).images
    model = None
    if need_model:
        model = rdc.RdcModel.load(_require(cfg, "model", "trained calibration model"))
    acfg = alignment.AlignConfig(k=int(cfg["k"]), r_t=float(cfg["rt"]))
    return alignment.Aligner(real, fake, acfg, model)


def _names(paths) -> list[str]:
    return [Path(p).stem + ".png" for p in paths]


# ---------------------------------------------------------------------------
# commands


def cmd_gen_synthetic(cfg):
    out = _out_dir(cfg)
    spec = lab.SynthSpec(size=int(cfg["size"]), count=int(cfg["count"]), seed=int(cfg["seed"]),
                         kind=cfg["kind"], strength=float(cfg["strength"]))
    imgs = lab.gen_synthetic(spec)
    label = "real" if spec.kind == "real" else "fake"
    names = [f"{spec.kind}_{i:05d}.png" for i in range(len(imgs))]
    return _write_set(out, imgs, names, [label] * len(imgs), spec.kind, spec.seed)


def cmd_analyze_spectrum(cfg):
    out = _out_dir(cfg)
    imgs = load_images(cfg["input"]).images
    heat = spectral.mean_log_spectrum(imgs)
    spectral.write_heatmap_csv(out / "spectrum.csv", heat, len(imgs))
    spectral.mean_profile(imgs).to_csv(out / "profile.csv")
    return [out / "spectrum.csv", out / "profile.csv"]


def cmd_profile(cfg):
    out = _out_dir(cfg)
    imgs = load_images(cfg["input"]).images
    spectral.mean_profile(imgs).to_csv(out / "profile.csv")
    return [out / "profile.csv"]


def cmd_fit_powerlaw(cfg):
    out = _out_dir(cfg)
    imgs = load_images(cfg["input"]).images
    prof = spectral.radial_power_profile(imgs) if cfg["power"] else spectral.mean_profile(imgs)
    fit = alignment.fit_power_law(prof, float(cfg["lo"]), float(cfg["hi"]))
    (out / "fit.json").write_text(fit.to_json() + "\n")
    print(f"a={fit.a:.6g} b={fit.b:.6g} residual={fit.residual:.4g}")
    return [out / "fit.json"]


def cmd_rspd(cfg):
    out = _out_dir(cfg)
    real = load_images(cfg["real"]).images
    test = load_images(cfg["test"]).images
    value = metrics.rspd(real, test)
    print(f"{value:.4f}")
    (out / "rspd.json").write_text(json.dumps({"rspd": value}, sort_keys=True) + "\n")
    return [out / "rspd.json"]


def cmd_smr(cfg):
    out = _out_dir(cfg)
    src = load_images(cfg["input"])
    aligner = _aligner(cfg, need_model=False)
    imgs = aligner(src.images)
    return _write_set(out, imgs, _names(src.paths), src.labels, "smr", int(cfg["seed"]))


def _widths(cfg, default):
    w = cfg.get("widths")
    if w is None:
        return default
    if isinstance(w, str):
        try:
            return tuple(int(x) for x in w.split(","))
        except ValueError:
            raise UsageError(f"--widths must be comma-separated integers, got {w!r}") from None
    return tuple(w)


def cmd_train_rdc(cfg):
    out = _out_dir(cfg)
    reals = load_images(cfg["input"]).images
    base = rdc.RdcTrainConfig()
    tcfg = rdc.RdcTrainConfig(
        lam=float(cfg["lam"]), seed=int(cfg["seed"]),
        epochs=int(cfg["epochs"]) if cfg["epochs"] is not None else base.epochs,
        batch_size=int(cfg["batch_size"] or base.batch_size),
        lr=float(cfg["lr"] or base.lr),
        widths=_widths(cfg, base.widths))
    model = rdc.train_rdc(reals, tcfg)
    model.save(out / "rdc.fqal")
    rdc.write_loss_curve(out / "loss_curve.csv", model.loss_curve)
    return [out / "rdc.fqal", out / "rdc.fqal.json", out / "loss_curve.csv"]


def cmd_align(cfg):
    out = _out_dir(cfg)
    _require(cfg, "model", "trained calibration model")
    src = load_images(cfg["input"])
    aligner = _aligner(cfg, need_model=True)
    imgs = aligner(src.images)
    return _write_set(out, imgs, _names(src.paths), src.labels, "aligned", int(cfg["seed"]))


def cmd_perturb(cfg):
    out = _out_dir(cfg)
    src = load_images(cfg["input"])
    kind = cfg["kind"]
    det = None
    if kind == "fgsm":
        det = detectors.Detector.load(_require(cfg, "detector", "detector for FGSM"))
    spec = lab.PerturbSpec(kind=kind, kernel=int(cfg["kernel"]), quality=int(cfg["quality"]),
                           variance=float(cfg["variance"]), epsilon=float(cfg["epsilon"]),
                           seed=int(cfg["seed"]))
    imgs = []
    for i, im in enumerate(src.images):
        s = lab.PerturbSpec(**{**spec.__dict__, "seed": int(cfg["seed"]) + i})
        imgs.append(lab.apply_perturbation(im, s, det, cfg["label"]))
    return _write_set(out, imgs, _names(src.paths), src.labels, kind, int(cfg["seed"]))


def _train(cfg):
    train = load_images(cfg["train"])
    protocol = detectors.DefenseProtocol(cfg["protocol"])
    aligner = _aligner(cfg, need_model=True) if protocol.needs_alignment else None
    base = detectors.DetectorConfig()
    dcfg = detectors.DetectorConfig(
        epochs=int(cfg["epochs"]) if cfg["epochs"] is not None else base.epochs,
        lr=float(cfg["lr"] or base.lr), seed=int(cfg["seed"]),
        lowpass_r0=None if cfg["r0"] is None else float(cfg["r0"]))
    det = detectors.train_detector(cfg["detector_kind"], train.images, train.labels, protocol,
                                   dcfg, aligner)
    return det, aligner


def cmd_train_detector(cfg):
    out = _out_dir(cfg)
    det, _ = _train(cfg)
    det.save(out / "detector.fqal")
    return [out / "detector.fqal", out / "detector.fqal.json"]


def _report_rows(det, tests: list[str]) -> list[dict]:
    rows = []
    for t in tests:
        data = load_images(t)
        rep = detectors.evaluate(det, data.images, data.labels)
        rows.append({"test": str(t), "acc": rep.acc, "er": rep.er, "real_acc": rep.real_acc,
                     "n_fake": rep.n_fake, "n_real": rep.n_real})
    return rows


def _write_eval(out: Path, rows: list[dict]) -> list[Path]:
    (out / "metrics.json").write_text(json.dumps(rows, indent=2, sort_keys=True,
                                                 default=str) + "\n")
    lines = ["test,acc,er,real_acc,n_fake,n_real"]
    for r in rows:
        lines.append(",".join(str(r[k]) for k in ("test", "acc", "er", "real_acc", "n_fake",
                                                   "n_real")))
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")
    for r in rows:
        print(f"{r['test']}: acc={r['acc']:.2f} er={r['er']:.2f} real_acc={r['real_acc']}")
    return [out / "metrics.json", out / "metrics.csv"]


def cmd_eval_detector(cfg):
    out = _out_dir(cfg)
    det = detectors.Detector.load(_require(cfg, "detector", "detector"))
    if det.preprocess.kind == "align":
        det.attach_aligner(_aligner(cfg, need_model=True))
    return _write_eval(out, _report_rows(det, [cfg["test"]]))


def cmd_defend(cfg):
    out = _out_dir(cfg)
    det, _ = _train(cfg)
    det.save(out / "detector.fqal")
    arts = [out / "detector.fqal", out / "detector.fqal.json"]
    return arts + _write_eval(out, _report_rows(det, cfg["test"]))


def _experiment(cfg, name):
    out = _out_dir(cfg)
    seed = int(cfg["seed"])
    desk = detectors.make_desk_lab(seed, int(cfg["n_train"]), int(cfg["n_test"]),
                                   int(cfg["size"]), float(cfg["strength"]))
    base = detectors.DetectorConfig()
    dcfg = detectors.DetectorConfig(
        epochs=int(cfg["epochs"]) if cfg["epochs"] is not None else base.epochs, seed=seed)
    if name == "bias-bands":
        report = detectors.experiment_bias_bands(desk, dcfg)
    else:
        report = detectors.experiment_bias_epochs(desk, dcfg)
    stem = name.replace("-", "_")
    (out / f"{stem}.csv").write_text(report.to_csv())
    (out / f"{stem}.json").write_text(report.to_json() + "\n")
    print(report.to_csv(), end="")
    return [out / f"{stem}.csv", out / f"{stem}.json"]


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "profile": cmd_profile,
    "fit-powerlaw": cmd_fit_powerlaw,
    "rspd": cmd_rspd,
    "smr": cmd_smr,
    "train-rdc": cmd_train_rdc,
    "align": cmd_align,
    "perturb": cmd_perturb,
    "train-detector": cmd_train_detector,
    "eval-detector": cmd_eval_detector,
    "defend": cmd_defend,
}


def run_command(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help and EXIT_USAGE for bad arguments
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    command = args.command
    if command == "analyze":
        if args.analysis is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        command, fn = "analyze spectrum", cmd_analyze_spectrum
    elif command == "experiment":
        if args.experiment is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        name = args.experiment
        command, fn = f"experiment {name}", (lambda c, n=name: _experiment(c, n))
    else:
        fn = COMMANDS[command]
    try:
        cfg = _settings(args)
        artifacts = fn(cfg)
        write_run_record(Path(cfg["out"]), command, _record_config(cfg), cfg["seed"],
                         artifacts)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDivergedError, DegenerateFitError, InvalidFitError,
            FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, InvalidModelError, InvalidInputError, StateError,
            UnsupportedDetectorError, FreqAlignError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    sys.exit(run_command())


if __name__ == "__main__":
    main()
