import json
import math

import numpy as np
import pytest

from freqalign.detectors import (
    CONDITIONS,
    DefenseProtocol,
    Detector,
    DetectorConfig,
    ExperimentReport,
    evaluate,
    experiment_bias_bands,
    experiment_bias_epochs,
    fake_accuracy,
    make_desk_lab,
    mixup_augment,
    train_detector,
)
from freqalign.errors import InvalidInputError, StateError
from freqalign.lab import SynthSpec, fgsm, gen_synthetic


class Stub:
    """Minimal object exposing ``predict`` for the evaluation contract."""

    def __init__(self, fn):
        self.fn = fn

    def predict(self, imgs):
        return self.fn(imgs)


class TestMixup:
    def test_delta_zero(self, rng):
        r, f, a = rng.random((3, 8, 8, 1))
        out_r, out_a = mixup_augment(r, f, a, 0.0)
        np.testing.assert_array_equal(out_r, r)
        np.testing.assert_array_equal(out_a, a)

    def test_zero_residual(self, rng):
        r, a = rng.random((2, 8, 8, 1))
        for delta in (-1.3, 0.4, 2.0):
            out_r, out_a = mixup_augment(r, a, a, delta)
            np.testing.assert_array_equal(out_r, r)
            np.testing.assert_array_equal(out_a, a)

    def test_residual_offset(self):
        r = np.full((4, 4, 1), 0.3)
        a = np.full((4, 4, 1), 0.5)
        f = a + 0.1
        out_r, out_a = mixup_augment(r, f, a, 1.0)
        np.testing.assert_allclose(out_r, 0.4, atol=1e-12)
        np.testing.assert_allclose(out_a, 0.6, atol=1e-12)

    def test_mismatch(self):
        with pytest.raises(InvalidInputError):
            mixup_augment(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 2)), 1.0)


class TestEvaluate:
    def test_always_fake(self, rng):
        imgs = rng.random((6, 8, 8, 1))
        rep = evaluate(Stub(lambda x: np.ones(len(x), int)), imgs, ["fake"] * 3 + ["real"] * 3)
        assert (rep.acc, rep.er, rep.real_acc) == (100.0, 0.0, 0.0)

    def test_random_detector(self):
        imgs = np.zeros((200, 4, 4, 1))
        labels = ["fake"] * 100 + ["real"] * 100
        coin = np.random.default_rng(2024).integers(0, 2, size=200)
        rep = evaluate(Stub(lambda x: coin), imgs, labels)
        assert 35 <= rep.acc <= 65
        assert rep.acc + rep.er == 100.0

    def test_deterministic(self):
        lab = make_desk_lab(seed=1, n_train=16, n_test=8, size=16)
        x, y = lab.train_set()
        det = train_detector("pixel-cnn", x, y, "none", DetectorConfig(epochs=1, batch_size=8))
        a = evaluate(det, lab.test_a, ["fake"] * 8)
        b = evaluate(det, lab.test_a, ["fake"] * 8)
        assert a == b

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            evaluate(Stub(lambda x: x), [], [])


@pytest.fixture(scope="module")
def small_lab():
    return make_desk_lab(seed=3, n_train=24, n_test=12, size=16)


class TestTraining:
    def test_separable_profiles(self):
        real = gen_synthetic(SynthSpec(size=16, count=20, seed=0))
        fake = gen_synthetic(SynthSpec(size=16, count=20, seed=0, kind="fake-B", strength=10.0))
        x = np.concatenate([real, fake])
        y = ["real"] * 20 + ["fake"] * 20
        det = train_detector("profile-mlp", x, y, "none",
                             DetectorConfig(epochs=50, batch_size=8, lr=1e-2))
        preds = det.predict(x)
        assert np.all(preds == np.array([0] * 20 + [1] * 20))

    def test_single_class(self, small_lab):
        with pytest.raises(InvalidInputError):
            train_detector("pixel-cnn", small_lab.real, ["real"] * 24, "none",
                           DetectorConfig(epochs=1))

    def test_same_seed_identical_files(self, small_lab, tmp_path):
        x, y = small_lab.train_set()
        cfg = DetectorConfig(epochs=2, batch_size=8, seed=5)
        for name in ("a", "b"):
            train_detector("pixel-cnn", x, y, "mda", cfg).save(tmp_path / f"{name}.fqal")
        assert (tmp_path / "a.fqal").read_bytes() == (tmp_path / "b.fqal").read_bytes()
        loaded = Detector.load(tmp_path / "a.fqal")
        np.testing.assert_array_equal(loaded.predict(small_lab.test_a),
                                      Detector.load(tmp_path / "b.fqal").predict(small_lab.test_a))

    def test_scores_in_unit_interval(self, small_lab):
        x, y = small_lab.train_set()
        det = train_detector("profile-mlp", x, y, "none", DetectorConfig(epochs=1))
        s = det.scores(small_lab.test_b)
        assert np.all((s >= 0) & (s <= 1))

    def test_alignment_protocols_need_pipeline(self, small_lab):
        x, y = small_lab.train_set()
        for v in ("p1", "p2", "p3"):
            with pytest.raises(InvalidInputError):
                train_detector("pixel-cnn", x, y, v, DetectorConfig(epochs=1))

    def test_protocol_names(self):
        assert DefenseProtocol("FA-P2").variant == "p2"
        assert DefenseProtocol("MDA-like").variant == "mda"
        with pytest.raises(InvalidInputError):
            DefenseProtocol("p4")
        with pytest.raises(InvalidInputError):
            DefenseProtocol("p1", prob=1.5)


class CountingAligner:
    def __init__(self):
        self.seen = 0

    def __call__(self, imgs):
        self.seen += len(imgs)
        return np.clip(np.asarray(imgs) * 0.9 + 0.05, 0, 1)


class TestPreprocessingProtocols:
    @pytest.mark.parametrize("variant", ["p2", "p3"])
    def test_label_blind_alignment(self, small_lab, variant):
        x, y = small_lab.train_set()
        al = CountingAligner()
        det = train_detector("pixel-cnn", x, y, variant, DetectorConfig(epochs=1), aligner=al)
        assert al.seen == len(x)  # every training image, real or fake
        assert det.preprocess.kind == "align" and not det.differentiable
        al.seen = 0
        evaluate(det, np.concatenate([small_lab.test_real, small_lab.test_b]),
                 ["real"] * 12 + ["fake"] * 12)
        assert al.seen == 24

    def test_missing_runtime_aligner(self, small_lab, tmp_path):
        x, y = small_lab.train_set()
        det = train_detector("pixel-cnn", x, y, "p2", DetectorConfig(epochs=1),
                             aligner=CountingAligner())
        det.save(tmp_path / "d.fqal")
        with pytest.raises(StateError):
            Detector.load(tmp_path / "d.fqal").predict(small_lab.test_a)

    def test_p1_aligns_only_fakes(self, small_lab):
        x, y = small_lab.train_set()
        al = CountingAligner()
        train_detector("pixel-cnn", x, y, "p1", DetectorConfig(epochs=1), aligner=al)
        assert al.seen == 24

    def test_fgsm_increases_loss(self, small_lab):
        x, y = small_lab.train_set()
        det = train_detector("pixel-cnn", x, y, "none", DetectorConfig(epochs=3, batch_size=8))
        img = small_lab.test_a[0]

        def loss(im):
            p = det.scores(im[None])[0]
            return -math.log(max(p, 1e-12))
        assert loss(fgsm(img, det, 4 / 255, "fake")) > loss(img)


class TestExperiments:
    def test_bias_epochs_rows(self, small_lab):
        rep = experiment_bias_epochs(small_lab, DetectorConfig(epochs=3, batch_size=8))
        assert len(rep.rows) == 3 * len(CONDITIONS)
        assert all(r.acc + r.er == 100.0 for r in rep.rows)

    def test_bias_bands_rows(self, small_lab):
        rep = experiment_bias_bands(small_lab, DetectorConfig(epochs=1, batch_size=8))
        assert len(rep.rows) == 4 * len(CONDITIONS)
        assert {r.r0_or_epoch for r in rep.rows} == {"none", "0.75", "0.5", "0.25"}

    def test_report_exports(self):
        rep = ExperimentReport("x", 0)
        rep.add("fake-B", "fake-A", "fake-B", "0.5", 62.5)
        lines = rep.to_csv().splitlines()
        assert lines[0] == "condition,train_family,test_family,r0_or_epoch,acc,er"
        assert lines[1] == "fake-B,fake-A,fake-B,0.5,62.5000,37.5000"
        data = json.loads(rep.to_json())
        assert data["rows"][0]["er"] == 37.5

    def test_fake_accuracy(self, rng):
        det = Stub(lambda x: np.array([1, 0, 1, 1]))
        assert fake_accuracy(det, rng.random((4, 8, 8, 1))) == 75.0
