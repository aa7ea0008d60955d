import math

import numpy as np
import pytest

from freqalign.alignment import (
    AlignConfig,
    Aligner,
    Corpus,
    PowerLawFit,
    align,
    fit_power_law,
    power_ratio_factor,
    retrieve_similar,
    smooth_factor,
    smr,
    smr_detailed,
    smr_factor,
    smr_rescale,
)
from freqalign.errors import DegenerateFitError, InvalidFitError, InvalidInputError, InvalidModelError
from freqalign.lab import SynthSpec, gen_synthetic
from freqalign.metrics import rspd, ssim
from freqalign.spectral import SpectralProfile, profile_radii, profile_radius

from oracles import ols_loglog, threshold_ratio_factor


def law_profile(a, b, n=64):
    r = profile_radii(n)
    vals = np.zeros_like(r)
    vals[1:] = a * r[1:] ** b
    return SpectralProfile(vals, r)


def fit(a, b):
    return PowerLawFit(a=a, b=b, fit_lo=0.2, fit_hi=1.0)


class TestFit:
    def test_noiseless(self):
        f = fit_power_law([law_profile(3.0, -0.8)])
        assert f.a == pytest.approx(3.0, abs=1e-6)
        assert f.b == pytest.approx(-0.8, abs=1e-6)
        assert f.residual < 1e-9

    def test_constant(self):
        f = fit_power_law(law_profile(5.0, 0.0))
        assert abs(f.a - 5.0) <= 1e-9 and abs(f.b) <= 1e-9

    def test_noisy_100_seeds(self):
        r = profile_radii(64)
        worst = 0.0
        for seed in range(100):
            g = np.random.default_rng(seed)
            a, b = g.uniform(1, 8), g.uniform(-2.0, -0.5)
            vals = np.zeros_like(r)
            vals[1:] = a * r[1:] ** b * (1 + 0.01 * g.standard_normal(len(r) - 1))
            f = fit_power_law(SpectralProfile(vals, r))
            worst = max(worst, abs(f.a - a) / a, abs(f.b - b) / abs(b))
        assert worst <= 0.05

    def test_matches_normal_equations(self):
        g = np.random.default_rng(2)
        r = profile_radii(32)
        vals = np.abs(g.normal(3, 1, len(r))) + 0.1
        f = fit_power_law(SpectralProfile(vals, r), 0.2, 1.0)
        sel = r >= 0.2
        a, b = ols_loglog(r[sel], vals[sel])
        assert f.a == pytest.approx(a, rel=1e-10) and f.b == pytest.approx(b, rel=1e-10)

    def test_fits_the_mean_profile(self):
        p, q = law_profile(2.0, -1.0), law_profile(4.0, -1.0)
        f = fit_power_law([p, q])
        assert f.a == pytest.approx(3.0) and f.b == pytest.approx(-1.0)

    def test_degenerate(self):
        r = profile_radii(16)
        with pytest.raises(DegenerateFitError):
            fit_power_law(SpectralProfile(np.zeros_like(r), r))
        with pytest.raises(DegenerateFitError):
            fit_power_law(law_profile(1.0, -1.0, 16), lo=0.5, hi=0.55)

    def test_json_round_trip(self):
        f = PowerLawFit(1.5, -0.3, 0.2, 1.0, 0.01)
        assert PowerLawFit.from_json(f.to_json()) == f


@pytest.fixture(scope="module")
def corpora():
    real = gen_synthetic(SynthSpec(size=32, count=20, seed=1, kind="real"))
    fake = gen_synthetic(SynthSpec(size=32, count=20, seed=1, kind="fake-B", strength=3.0))
    return real, fake


class TestRetrieval:
    def test_query_in_corpus(self, corpora):
        real, _ = corpora
        got = retrieve_similar(real[7], real, 1)
        np.testing.assert_array_equal(got[0], real[7])

    def test_identical_corpus_tie_break(self, corpora):
        real, _ = corpora
        c = Corpus(np.stack([real[0]] * 6))
        assert list(c.retrieve(real[3], 4)) == [0, 1, 2, 3]

    def test_matches_exhaustive_ranking(self, corpora):
        real, fake = corpora
        q = fake[2]
        scores = [ssim(q.mean(axis=2), im.mean(axis=2)) for im in real]
        oracle = sorted(range(len(real)), key=lambda i: (-scores[i], i))[:5]
        assert list(Corpus(real).retrieve(q, 5)) == oracle

    def test_too_few(self, corpora):
        with pytest.raises(InvalidInputError):
            retrieve_similar(corpora[0][0], corpora[0][:3], 4)

    def test_deterministic(self, corpora):
        real, fake = corpora
        c = Corpus(real)
        assert list(c.retrieve(fake[0], 8)) == list(c.retrieve(fake[0], 8))


class TestSmoothFactor:
    def test_at_threshold(self):
        assert smooth_factor(0.2, 0.2) == 0.5

    def test_below(self):
        assert smooth_factor(0.1, 0.2) == 0.0

    def test_at_one(self):
        assert smooth_factor(1.0, 0.2) == pytest.approx(1 / (1 + math.exp(-0.8)), abs=1e-12)
        assert smooth_factor(1.0, 0.2) == pytest.approx(0.68997, abs=1e-5)

    def test_jump_at_threshold(self):
        # the factor leaps from 0 to 0.5 as r crosses r_T
        assert smooth_factor(0.2 - 1e-9, 0.2) == 0.0
        assert smooth_factor(0.2, 0.2) == 0.5


class TestRescale:
    def test_equal_fits_identity(self, corpora):
        img = corpora[1][0]
        out = smr_rescale(img, fit(2.0, -1.0), fit(2.0, -1.0), 0.2)
        assert np.max(np.abs(out - img)) <= 1e-5

    def test_threshold_one(self):
        # smooth content only: the r >= 1 corner carries no energy
        yy, xx = np.mgrid[0:32, 0:32]
        img = (0.5 + 0.2 * np.cos(2 * np.pi * 3 * xx / 32))[:, :, None]
        out = smr_rescale(img, fit(3.0, -1.0), fit(1.0, 0.5), 1.0)
        assert np.max(np.abs(out - img)) <= 1e-5

    def test_coefficient_oracle(self):
        n = 32
        fr, ff, r_t = fit(2.0, -1.0), fit(1.5, -0.4), 0.2
        r = profile_radius(n)
        factor = smr_factor(r, fr, ff, r_t)
        for (u, v) in [(16, 16), (16, 18), (20, 25), (2, 3), (0, 0), (16, 27)]:
            hand = threshold_ratio_factor(r[u, v], 2.0 / 1.5, -1.0 + 0.4, r_t)
            assert factor[u, v] == pytest.approx(hand, abs=1e-9)

    def test_single_coefficient_image(self):
        n = 32
        fr, ff, r_t = fit(2.0, -1.0), fit(1.5, -0.4), 0.2
        c = np.zeros((n, n), dtype=complex)
        u, v = 16 + 3, 16 + 9
        c[u, v] = 40.0
        c[n - u, n - v] = 40.0
        img = 0.5 + np.fft.ifft2(np.fft.ifftshift(c)).real
        out = smr_rescale(img[:, :, None], fr, ff, r_t)
        got = np.fft.fftshift(np.fft.fft2(out[:, :, 0]))
        expected = threshold_ratio_factor(profile_radius(n)[u, v], 2.0 / 1.5, -0.6, r_t)
        assert abs(got[u, v]) / 40.0 == pytest.approx(expected, abs=1e-9)

    def test_low_band_bit_identical(self, corpora):
        img = corpora[1][3]
        out = smr_rescale(img, fit(0.5, -1.5), fit(2.0, 0.3), 0.3)
        r = profile_radius(32)
        low = r < 0.3
        before = np.fft.fftshift(np.fft.fft2(img, axes=(0, 1)), axes=(0, 1))
        factor = smr_factor(r, fit(0.5, -1.5), fit(2.0, 0.3), 0.3)
        assert np.all(factor[low] == 1.0)
        assert np.all((before * factor[:, :, None])[low] == before[low])

    def test_plain_ratio_switch(self):
        r = profile_radius(16)
        f = power_ratio_factor(r, 2.0, -0.5, 0.2, smoothing=False)
        sel = r > 0
        np.testing.assert_allclose(f[sel], 2.0 * r[sel] ** -0.5, rtol=1e-12)
        assert f[r == 0][0] == 1.0
        # S == 1 with no threshold reduces the smoothed form to the plain ratio
        for (u, v) in [(8, 9), (3, 12), (0, 0)]:
            plain = 2.0 * r[u, v] ** -0.5
            assert 1.0 + (plain - 1.0) * 1.0 == pytest.approx(f[u, v], abs=1e-9)

    def test_bad_fit(self, corpora):
        with pytest.raises(InvalidFitError):
            smr_rescale(corpora[0][0], fit(1.0, 0.0), PowerLawFit(0.0, 0.0, 0.2, 1.0), 0.2)


class TestSmr:
    def test_same_corpora_identity(self, corpora):
        real, _ = corpora
        cfg = AlignConfig(k=5)
        out = smr(real[4], real, real, cfg)
        assert np.max(np.abs(out - real[4])) <= 1e-5

    def test_spike_rspd_drops(self, corpora):
        real, fake = corpora
        cfg = AlignConfig(k=10)
        out = np.stack([smr(f, real, fake, cfg) for f in fake])
        assert rspd(real, out) < rspd(real, fake)

    def test_full_corpus_k(self, corpora):
        real, fake = corpora
        res = smr_detailed(fake[0], real, fake, AlignConfig(k=20))
        f_real = fit_power_law([SpectralProfile(p, profile_radii(32))
                                for p in Corpus(real).profiles], 0.2, 1.0)
        assert res.fit_real.a == pytest.approx(f_real.a, rel=1e-10)
        assert res.fit_real.b == pytest.approx(f_real.b, rel=1e-10)

    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            AlignConfig(k=0)
        with pytest.raises(InvalidInputError):
            AlignConfig(r_t=1.0)
        assert AlignConfig(r_t=0.3).fit_lo == 0.3


class CopyModel:
    trained = True

    def infer(self, img):
        return np.array(img, copy=True)

    def infer_batch(self, imgs):
        return np.array(imgs, copy=True)


class TestAlign:
    def test_stub_model_equals_smr(self, corpora):
        real, fake = corpora
        cfg = AlignConfig(k=5)
        np.testing.assert_array_equal(align(fake[1], real, fake, cfg, CopyModel()),
                                      smr(fake[1], real, fake, cfg))

    def test_missing_model(self, corpora):
        real, fake = corpora
        with pytest.raises(InvalidModelError):
            align(fake[0], real, fake, None, None)

    def test_untrained_model(self, corpora):
        real, fake = corpora
        m = CopyModel()
        m.trained = False
        with pytest.raises(InvalidModelError):
            align(fake[0], real, fake, None, m)

    def test_aligner_batch(self, corpora):
        real, fake = corpora
        cfg = AlignConfig(k=5)
        al = Aligner(real, fake, cfg, CopyModel())
        out = al(fake[:3])
        for i in range(3):
            np.testing.assert_array_equal(out[i], smr(fake[i], real, fake, cfg))
        np.testing.assert_array_equal(al(fake[0]), out[0])
