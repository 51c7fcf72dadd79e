import numpy as np
import pytest

from bandsplice.andenoise import BandEstimate, denoise_band, fit_coeffs
from bandsplice.cleaner import clean_all, clean_band, estimate_band_distortion
from bandsplice.model import (
    Cir, CsiMatrix, DistortionParams, apply_distortion, cfr, make_band_plan,
    per_band_parameters, synth_cfr,
)


def well_separated_cir(rng, plan, K=3):
    gap = 2.0 / (plan.subcarriers_per_band * plan.subcarrier_spacing)
    while True:
        d = np.sort(rng.uniform(0, 333e-9, K))
        if np.all(np.diff(d) >= gap):
            break
    gains = (rng.standard_normal(K) + 1j * rng.standard_normal(K)) * np.sqrt(4.0 ** -np.arange(1, K + 1) / 2)
    # keep every path clearly above the noiseless regularizer
    gains = gains / np.abs(gains) * np.maximum(np.abs(gains), 0.1)
    return Cir(d, gains)


def composite_first_path(cir, distortion, plan):
    taus, gains = per_band_parameters(cir, distortion, plan)
    return taus[:, 0], np.mod(-np.angle(gains[:, 0]) / (2 * np.pi), 1.0)


class TestEstimateDistortion:
    def test_real_positive(self):
        assert estimate_band_distortion(BandEstimate(np.array([5e-9, 9e-9]),
                                                     np.array([2.0, 1j]))) == (5e-9, 0.0)

    def test_quarter_cycle(self):
        delta, phi = estimate_band_distortion(BandEstimate(np.array([7e-9]), np.array([3j])))
        assert delta == 7e-9 and phi == pytest.approx(0.75)

    def test_earliest_not_strongest(self):
        est = BandEstimate(np.array([3e-9, 1e-9]), np.array([5.0, -0.1]))
        delta, phi = estimate_band_distortion(est)
        assert delta == 1e-9 and phi == pytest.approx(0.5)

    def test_empty(self):
        with pytest.raises(ValueError):
            estimate_band_distortion(BandEstimate(np.empty(0), np.empty(0, complex)))

    def test_recovers_composite_parameters(self):
        plan = make_band_plan(2)
        rng = np.random.default_rng(0)
        cir = well_separated_cir(rng, plan)
        d = DistortionParams(rng.uniform(0, 960e-9, 2), rng.uniform(0, 1, 2))
        y = apply_distortion(synth_cfr(cir, plan), d).values
        want_delta, want_phi = composite_first_path(cir, d, plan)
        for m in range(2):
            delta, phi = estimate_band_distortion(denoise_band(y[m], 1e4, plan.subset([m])))
            assert delta == pytest.approx(want_delta[m], abs=1e-15)
            assert np.angle(np.exp(2j * np.pi * (phi - want_phi[m]))) == pytest.approx(0, abs=1e-9)


class TestCleanBand:
    def test_identity(self):
        plan = make_band_plan(1)
        y = np.arange(65) + 1j
        assert np.array_equal(clean_band(y, 0.0, 0.0, plan), y)

    def test_true_composite_gives_relative_response(self):
        plan = make_band_plan(4)
        rng = np.random.default_rng(1)
        cir = well_separated_cir(rng, plan)
        d = DistortionParams(rng.uniform(0, 960e-9, 4), rng.uniform(0, 1, 4))
        y = apply_distortion(synth_cfr(cir, plan), d).values
        delta, phi = composite_first_path(cir, d, plan)
        ref = cfr(cir.relative(), plan.frequencies)
        for m in range(4):
            assert np.allclose(clean_band(y[m], delta[m], phi[m], plan), ref[m], rtol=0, atol=1e-9)

    def test_inverse_of_distortion(self):
        plan = make_band_plan(1)
        rng = np.random.default_rng(2)
        y = rng.standard_normal(65) + 1j * rng.standard_normal(65)
        d = DistortionParams([412e-9], [0.37])
        cleaned = clean_band(y, 412e-9, 0.37, plan)
        back = apply_distortion(CsiMatrix(cleaned[None, :], plan), d).values[0]
        assert np.allclose(back, y, rtol=0, atol=1e-12)


class TestCleanAll:
    def test_cleaning_identity_and_band_consistency(self):
        plan = make_band_plan(4)
        rng = np.random.default_rng(3)
        cir = well_separated_cir(rng, plan)
        d = DistortionParams(rng.uniform(0, 960e-9, 4), rng.uniform(0, 1, 4))
        cleaned = clean_all(apply_distortion(synth_cfr(cir, plan), d), 1e4)
        ref = cfr(cir.relative(), plan.frequencies)
        assert cleaned.csi.kind == "cleaned"
        assert np.all(cleaned.usable) and np.all(cleaned.counts == 3)
        assert np.linalg.norm(cleaned.csi.values - ref) <= 1e-6 * np.linalg.norm(ref)
        assert np.all((cleaned.distortion.phi >= 0) & (cleaned.distortion.phi < 1))

        # refit at the relative delays: phases across bands follow the carrier offsets
        rel = cir.relative().delays
        coeffs = np.array([fit_coeffs(cleaned.csi.values[m], rel, plan) for m in range(4)])
        for m in range(1, 4):
            got = np.angle(coeffs[m] / coeffs[0])
            want = -2 * np.pi * (plan.carriers[m] - plan.carriers[0]) * rel
            assert np.allclose(np.angle(np.exp(1j * (got - want))), 0, atol=1e-3)

    def test_unusable_band_stays_zero(self):
        plan = make_band_plan(2)
        values = np.zeros((2, 65), complex)
        values[0] = cfr(Cir([50e-9], [1.0]), plan.frequencies[0])
        cleaned = clean_all(CsiMatrix(values, plan, "distorted"), 100)
        assert cleaned.usable.tolist() == [True, False]
        assert cleaned.unusable_bands == [1]
        assert not np.any(cleaned.csi.values[1])

    def test_threaded_matches_serial(self):
        plan = make_band_plan(3)
        rng = np.random.default_rng(4)
        cir = well_separated_cir(rng, plan)
        d = DistortionParams(rng.uniform(0, 960e-9, 3), rng.uniform(0, 1, 3))
        csi = apply_distortion(synth_cfr(cir, plan), d)
        a = clean_all(csi, 1e3)
        b = clean_all(csi, 1e3, workers=3)
        assert np.array_equal(a.csi.values, b.csi.values)
