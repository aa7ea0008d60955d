import json
import math

import numpy as np
import pytest

from freqalign.errors import InvalidInputError
from freqalign.lab import SynthSpec, gen_synthetic
from freqalign.metrics import MetricsReport, classification_metrics, psnr, rspd, ssim
from freqalign.spectral import SpectralProfile, profile_radii
from freqalign.metrics import rspd_from_profiles

from oracles import rspd_direct, ssim_direct


class TestPsnr:
    def test_identical_is_inf(self, rng):
        a = rng.random((8, 8, 3))
        assert psnr(a, a) == math.inf

    def test_constant_offset_16_levels(self):
        a = np.full((8, 8, 1), 0.25)
        b = a + 16 / 255
        expected = 10 * math.log10(255 ** 2 / 16 ** 2)
        assert psnr(a, b) == pytest.approx(expected, abs=1e-9)
        assert psnr(a, b) == pytest.approx(24.049, abs=1e-3)

    def test_max_error_zero_db(self):
        assert psnr(np.zeros((1, 1, 1)), np.ones((1, 1, 1))) == pytest.approx(0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_decreases_with_mse(self, rng):
        a = rng.random((8, 8, 1))
        vals = [psnr(a, a + d) for d in (0.01, 0.02, 0.05)]
        assert vals[0] > vals[1] > vals[2]


class TestSsim:
    def test_self_is_one(self, rng):
        a = rng.random((16, 16, 3))
        assert ssim(a, a) == 1.0

    def test_inverted_binary_negative(self):
        a = np.zeros((16, 16, 1))
        a[:, 8:] = 1.0
        val = ssim(a, 1.0 - a)
        assert val < 0
        assert val == pytest.approx(ssim_direct(a, 1.0 - a), abs=1e-12)

    def test_matches_direct_windows(self, rng):
        a, b = rng.random((14, 14, 2)), rng.random((14, 14, 2))
        assert ssim(a, b) == pytest.approx(ssim_direct(a, b), abs=1e-12)

    def test_symmetric(self):
        r = np.random.default_rng(4)
        for _ in range(5):
            a, b = r.random((16, 16, 1)), r.random((16, 16, 1))
            assert abs(ssim(a, b) - ssim(b, a)) <= 1e-9

    def test_too_small(self):
        with pytest.raises(InvalidInputError):
            ssim(np.zeros((10, 10)), np.zeros((10, 10)))


class TestRspd:
    def test_identical_sets(self, rng):
        s = rng.random((3, 8, 8, 1))
        assert rspd(s, s) == 0.0

    def test_uniform_offset(self):
        radii = profile_radii(16)
        a = SpectralProfile(np.linspace(1, 2, 8), radii)
        b = SpectralProfile(a.bins + 0.01, radii)
        assert rspd_from_profiles(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_checkerboard_fakes_oracle(self):
        real = gen_synthetic(SynthSpec(size=16, count=3, seed=5, kind="real"))
        yy, xx = np.mgrid[0:16, 0:16]
        board = (((yy + xx) % 2) * 0.1)[:, :, None]
        fakes = np.clip(real + board, 0, 1)
        assert rspd(real, fakes) == pytest.approx(rspd_direct(real, fakes), abs=1e-9)

    def test_symmetric(self, rng):
        a, b = rng.random((2, 8, 8, 1)), rng.random((3, 8, 8, 1))
        assert rspd(a, b) == pytest.approx(rspd(b, a), abs=1e-12)

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            rspd([], [np.zeros((8, 8))])

    def test_size_mismatch(self):
        with pytest.raises(InvalidInputError):
            rspd([np.zeros((8, 8))], [np.zeros((16, 16))])


class TestClassification:
    def test_all_correct(self):
        assert classification_metrics(["fake"] * 4, ["fake"] * 4) == (100.0, 0.0)

    def test_all_wrong(self):
        assert classification_metrics(["real"] * 4, ["fake"] * 4) == (0.0, 100.0)

    def test_three_of_four(self):
        assert classification_metrics(["fake", "fake", "real", "fake"],
                                      ["fake"] * 4) == (75.0, 25.0)

    def test_reals_ignored(self):
        acc, er = classification_metrics([1, 0, 0], [1, 0, 1])
        assert (acc, er) == (50.0, 50.0)

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            classification_metrics([], [])

    def test_unknown_label(self):
        with pytest.raises(InvalidInputError):
            classification_metrics(["maybe"], ["fake"])


class TestReport:
    def test_exports(self):
        rep = MetricsReport(psnr=math.inf, ssim=0.9, rspd=1.5, acc=80.0, er=20.0)
        data = json.loads(rep.to_json())
        assert data == {"psnr": "inf", "ssim": 0.9, "rspd": 1.5, "acc": 80.0, "er": 20.0}
        lines = rep.to_csv().splitlines()
        assert lines[0] == "metric,value" and len(lines) == 6

    def test_missing_fields_are_null(self):
        data = json.loads(MetricsReport(acc=50.0, er=50.0).to_json())
        assert data["psnr"] is None and data["acc"] == 50.0
