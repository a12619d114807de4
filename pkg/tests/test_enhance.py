"""Tests for silab.enhance: masks, SCMs, steering, MVDR, full pipeline."""

import numpy as np
import pytest

from silab.dsp import AudioBuffer, StftParams
from silab.enhance import (
    Beamformer,
    EnhancementMethod,
    Mask,
    ScmBank,
    apply_mask,
    beamform,
    compute_irm,
    enhance,
    enhance_with_info,
    est_mask,
    estimate_scms,
    mvdr_weights,
    ones_mask,
    steering_vector,
)
from silab.scene import (
    PRESET_POSITIONS,
    SceneConfig,
    NoisyObservation,
    build_scene,
    make_observation,
    synth_babble,
    synth_ir,
)
from silab.scene import SourcePosition
from tests.test_scene import word_like


def random_spec(shape, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def spec_of(bins, params=None, n_samples=None):
    params = params or StftParams()
    from silab.dsp import Spectrogram

    n = n_samples if n_samples is not None else (bins.shape[0] - 1) * params.hop + 1
    return Spectrogram(bins, params, 16000, n)


def random_psd(rng):
    """Random Hermitian-PSD 2x2 with a bit of diagonal mass."""
    m = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    return m @ m.conj().T + 1e-3 * np.eye(2)


class TestComputeIrm:
    def test_equal_magnitudes(self):
        s = spec_of(np.full((4, 257), 1.0 + 0j))
        v = spec_of(np.full((4, 257), 0.0 + 1.0j))  # same magnitude, any phase
        mask = compute_irm(s, v)
        np.testing.assert_allclose(mask.values, 1.0 / np.sqrt(2.0), atol=1e-12)

    def test_zero_noise_gives_one(self):
        s = spec_of(random_spec((4, 257), 1))
        v = spec_of(np.zeros((4, 257), dtype=complex))
        np.testing.assert_allclose(compute_irm(s, v).values, 1.0, atol=1e-12)

    def test_power_ratio_quarter(self):
        s = spec_of(np.full((2, 257), 1.0 + 0j))
        v = spec_of(np.full((2, 257), np.sqrt(3.0) + 0j))
        np.testing.assert_allclose(compute_irm(s, v).values, 0.5, atol=1e-12)

    def test_both_silent_gives_zero(self):
        z = spec_of(np.zeros((3, 257), dtype=complex))
        assert np.all(compute_irm(z, z).values == 0.0)

    def test_dimension_mismatch(self):
        s = spec_of(random_spec((4, 257), 1))
        v = spec_of(random_spec((5, 257), 2))
        with pytest.raises(ValueError):
            compute_irm(s, v)

    def test_complementary_identity(self):
        s = spec_of(random_spec((6, 257), 3))
        v = spec_of(random_spec((6, 257), 4))
        m = compute_irm(s, v).values
        m_noise = compute_irm(v, s).values
        np.testing.assert_allclose(m**2 + m_noise**2, 1.0, atol=1e-12)

    def test_range(self):
        s = spec_of(random_spec((6, 257), 5) * 100)
        v = spec_of(random_spec((6, 257), 6) * 0.01)
        m = compute_irm(s, v).values
        assert m.min() >= 0.0 and m.max() <= 1.0


class TestApplyMask:
    def test_ones_identity(self):
        x = spec_of(random_spec((5, 257), 7))
        out = apply_mask(ones_mask(5, x.params), x)
        np.testing.assert_array_equal(out.bins, x.bins)

    def test_zeros(self):
        x = spec_of(random_spec((5, 257), 8))
        out = apply_mask(Mask(np.zeros((5, 257)), "est"), x)
        assert np.all(out.bins == 0)

    def test_distributes_over_addition(self):
        s = spec_of(random_spec((5, 257), 9))
        v = spec_of(random_spec((5, 257), 10))
        m = Mask(np.random.default_rng(0).uniform(size=(5, 257)), "irm")
        both = spec_of(s.bins + v.bins)
        np.testing.assert_allclose(
            apply_mask(m, both).bins,
            apply_mask(m, s).bins + apply_mask(m, v).bins,
            atol=1e-12,
        )

    def test_dimension_mismatch(self):
        x = spec_of(random_spec((5, 257), 11))
        with pytest.raises(ValueError, match="shape"):
            apply_mask(Mask(np.ones((4, 257)), "est"), x)


class TestEstMask:
    def test_288ms_at_16k_hop256(self):
        # 288 ms * 16 kHz = 4608 samples = 18 hops -> first and last 18 frames
        params = StftParams()
        mask = est_mask(100, params, 288.0, 16000)
        col = mask.values[:, 0]
        assert np.all(col[:18] == 0.0)
        assert np.all(col[18:82] == 1.0)
        assert np.all(col[82:] == 0.0)
        # constant across frequency
        assert np.all(mask.values == col[:, None])

    def test_zero_period_all_ones(self):
        mask = est_mask(40, StftParams(), 0.0, 16000)
        assert np.all(mask.values == 1.0)

    def test_symmetric_under_reversal(self):
        mask = est_mask(101, StftParams(), 288.0, 16000)
        np.testing.assert_array_equal(mask.values, mask.values[::-1])

    def test_too_short_rejected(self):
        with pytest.raises(ValueError, match="shorter"):
            est_mask(30, StftParams(), 288.0, 16000)


class TestEstimateScms:
    def frames(self, t=8, f=5, seed=0):
        params = StftParams(window_length=8, hop=4, fft_size=8)
        return [
            spec_of(random_spec((t, 5), seed), params, n_samples=64),
            spec_of(random_spec((t, 5), seed + 1), params, n_samples=64),
        ]

    def test_ones_mask_zero_noise_scm(self):
        specs = self.frames()
        scms = estimate_scms(ones_mask(8, specs[0].params), specs)
        np.testing.assert_allclose(scms.r_v, 0.0, atol=1e-15)

    def test_zeros_mask_zero_speech_scm(self):
        specs = self.frames()
        scms = estimate_scms(Mask(np.zeros((8, 5)), "est"), specs)
        np.testing.assert_allclose(scms.r_s, 0.0, atol=1e-15)

    def test_single_frame_outer_product(self):
        params = StftParams(window_length=1, hop=1, fft_size=1)
        x = np.array([[1.0 + 2.0j], [3.0 - 1.0j]])  # channel values at one (t, f)
        specs = [
            spec_of(np.array([[x[0, 0]]]), params, n_samples=1),
            spec_of(np.array([[x[1, 0]]]), params, n_samples=1),
        ]
        scms = estimate_scms(Mask(np.ones((1, 1)), "ones"), specs)
        expected = x @ x.conj().T  # hand-computable 2x2
        np.testing.assert_allclose(scms.r_s[0], expected, atol=1e-12)

    def test_hermitian_psd(self):
        specs = self.frames(seed=5)
        mask = Mask(np.random.default_rng(2).uniform(size=(8, 5)), "irm")
        scms = estimate_scms(mask, specs)
        for bank in (scms.r_s, scms.r_v):
            np.testing.assert_allclose(bank, np.conj(np.swapaxes(bank, -1, -2)), atol=1e-12)
            eigs = np.linalg.eigvalsh(bank)
            assert eigs.min() > -1e-10

    def test_dimension_mismatch(self):
        specs = self.frames()
        with pytest.raises(ValueError):
            estimate_scms(Mask(np.ones((9, 5)), "ones"), specs)

    def test_bank_rejects_non_hermitian(self):
        bad = np.array([[[1.0, 1.0 + 1.0j], [0.0, 1.0]]], dtype=complex)
        eye = np.eye(2, dtype=complex)[None]
        with pytest.raises(ValueError, match="Hermitian"):
            ScmBank(r_s=bad, r_v=eye, frame_count=1)

    def test_bank_rejects_indefinite(self):
        indefinite = np.diag([1.0, -1.0]).astype(complex)[None]
        eye = np.eye(2, dtype=complex)[None]
        with pytest.raises(ValueError, match="PSD"):
            ScmBank(r_s=indefinite, r_v=eye, frame_count=1)


class TestSteeringVector:
    def test_recovers_rank1_direction(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            r_s = np.outer(a, a.conj())[None, :, :]
            r_v = np.eye(2, dtype=complex)[None, :, :]
            scms = ScmBank(r_s=r_s, r_v=r_v, frame_count=1)
            steer, flagged = steering_vector(scms)
            assert not flagged[0]
            cos = np.abs(np.vdot(steer[0], a)) / (
                np.linalg.norm(steer[0]) * np.linalg.norm(a)
            )
            assert cos > 1.0 - 1e-8

    def test_matches_numpy_eig_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            r_s = random_psd(rng)[None]
            r_v = random_psd(rng)[None]
            scms = ScmBank(r_s=r_s, r_v=r_v, frame_count=1)
            steer, _ = steering_vector(scms)
            # independent oracle: numpy generalized eigensolution
            vals, vecs = np.linalg.eig(np.linalg.inv(r_v[0]) @ r_s[0])
            principal = vecs[:, np.argmax(vals.real)]
            expected = r_v[0] @ principal
            cos = np.abs(np.vdot(steer[0], expected)) / (
                np.linalg.norm(steer[0]) * np.linalg.norm(expected)
            )
            assert cos > 1.0 - 1e-8

    def test_identity_tie_break(self):
        eye = np.eye(2, dtype=complex)[None]
        scms = ScmBank(r_s=eye.copy(), r_v=eye.copy(), frame_count=1)
        steer, _ = steering_vector(scms)
        np.testing.assert_allclose(steer[0], [1.0, 0.0], atol=1e-12)

    def test_scale_invariant_direction(self):
        rng = np.random.default_rng(3)
        r_s = random_psd(rng)[None]
        r_v = random_psd(rng)[None]
        a1, _ = steering_vector(ScmBank(r_s=r_s, r_v=r_v, frame_count=1))
        a2, _ = steering_vector(ScmBank(r_s=10.0 * r_s, r_v=r_v, frame_count=1))
        cos = np.abs(np.vdot(a1[0], a2[0])) / (np.linalg.norm(a1[0]) * np.linalg.norm(a2[0]))
        assert cos > 1.0 - 1e-10

    def test_zero_noise_scm_flagged_with_rs_fallback(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        r_s = np.outer(a, a.conj())[None]
        r_v = np.zeros((1, 2, 2), dtype=complex)
        steer, flagged = steering_vector(ScmBank(r_s=r_s, r_v=r_v, frame_count=1))
        assert flagged[0]
        cos = np.abs(np.vdot(steer[0], a)) / (np.linalg.norm(steer[0]) * np.linalg.norm(a))
        assert cos > 1.0 - 1e-8

    def test_reference_entry_real_nonnegative(self):
        rng = np.random.default_rng(5)
        r_s = np.stack([random_psd(rng) for _ in range(20)])
        r_v = np.stack([random_psd(rng) for _ in range(20)])
        steer, _ = steering_vector(ScmBank(r_s=r_s, r_v=r_v, frame_count=1))
        assert np.all(np.abs(steer[:, 0].imag) < 1e-12)
        assert np.all(steer[:, 0].real >= 0.0)


class TestMvdrWeights:
    def test_hand_evaluated_case(self):
        # R_v = I, a = [1, 1]/sqrt(2), ref 0 -> w = [0.5, 0.5]
        a = np.array([[1.0, 1.0]], dtype=complex) / np.sqrt(2.0)
        scms = ScmBank(
            r_s=np.eye(2, dtype=complex)[None], r_v=np.eye(2, dtype=complex)[None], frame_count=1
        )
        bf = mvdr_weights(a, scms, ref_channel=0)
        np.testing.assert_allclose(bf.weights[0], [0.5, 0.5], atol=1e-6)

    def test_distortionless_random(self):
        rng = np.random.default_rng(10)
        for _ in range(200):
            r_v = random_psd(rng)[None]
            a = (rng.standard_normal(2) + 1j * rng.standard_normal(2))[None]
            scms = ScmBank(r_s=r_v.copy(), r_v=r_v, frame_count=1)
            bf = mvdr_weights(a, scms)
            lhs = np.vdot(bf.weights[0], a[0])
            assert abs(lhs - a[0, 0]) <= 1e-10 * max(abs(a[0, 0]), 1e-30)

    def test_invariant_under_steering_scaling(self):
        rng = np.random.default_rng(11)
        r_v = random_psd(rng)[None]
        scms = ScmBank(r_s=r_v.copy(), r_v=r_v, frame_count=1)
        a = (rng.standard_normal(2) + 1j * rng.standard_normal(2))[None]
        alpha = 0.7 - 1.9j
        w1 = mvdr_weights(a, scms).weights
        w2 = mvdr_weights(alpha * a, scms).weights
        np.testing.assert_allclose(w1, w2, atol=1e-12)

    def test_zero_steering_passthrough(self):
        scms = ScmBank(
            r_s=np.eye(2, dtype=complex)[None], r_v=np.eye(2, dtype=complex)[None], frame_count=1
        )
        bf = mvdr_weights(np.zeros((1, 2), dtype=complex), scms, ref_channel=0)
        assert bf.flagged[0]
        np.testing.assert_array_equal(bf.weights[0], [1.0, 0.0])


class TestBeamform:
    def params(self):
        return StftParams(window_length=8, hop=4, fft_size=8)

    def test_passthrough_selects_reference(self):
        params = self.params()
        specs = [
            spec_of(random_spec((6, 5), 1), params, 32),
            spec_of(random_spec((6, 5), 2), params, 32),
        ]
        w = np.zeros((5, 2), dtype=complex)
        w[:, 0] = 1.0
        bf = Beamformer(steering=w.copy(), weights=w, ref_channel=0, flagged=np.zeros(5, bool))
        out = beamform(bf, specs)
        np.testing.assert_allclose(out.bins, specs[0].bins, atol=1e-15)

    def test_pure_source_recovers_reference_component(self):
        params = self.params()
        rng = np.random.default_rng(7)
        a = rng.standard_normal((5, 2)) + 1j * rng.standard_normal((5, 2))
        c = rng.standard_normal((6, 5)) + 1j * rng.standard_normal((6, 5))
        x = [spec_of(c * a[:, ch][None, :], params, 32) for ch in range(2)]
        r_v = np.stack([np.eye(2, dtype=complex)] * 5)
        scms = ScmBank(r_s=r_v.copy(), r_v=r_v, frame_count=6)
        bf = mvdr_weights(a, scms, ref_channel=0)
        out = beamform(bf, x)
        expected = a[:, 0][None, :] * c
        np.testing.assert_allclose(out.bins, expected, rtol=1e-9)

    def test_linear(self):
        params = self.params()
        x1 = [spec_of(random_spec((6, 5), s), params, 32) for s in (1, 2)]
        x2 = [spec_of(random_spec((6, 5), s), params, 32) for s in (3, 4)]
        rng = np.random.default_rng(9)
        w = rng.standard_normal((5, 2)) + 1j * rng.standard_normal((5, 2))
        bf = Beamformer(steering=w.copy(), weights=w, ref_channel=0, flagged=np.zeros(5, bool))
        summed = [spec_of(x1[ch].bins + x2[ch].bins, params, 32) for ch in range(2)]
        np.testing.assert_allclose(
            beamform(bf, summed).bins,
            beamform(bf, x1).bins + beamform(bf, x2).bins,
            atol=1e-12,
        )


@pytest.fixture(scope="module")
def babble_scene():
    word = word_like(seed=31)
    babble = synth_babble(8.0, 12, seed=6)
    cfg = SceneConfig(snr_db=-9.0, position=PRESET_POSITIONS[5], seed=99)
    return build_scene(word, babble, cfg)


class TestEnhance:
    def test_unprocessed_is_channel_one(self, babble_scene):
        out = enhance(babble_scene, EnhancementMethod.UNPROCESSED)
        np.testing.assert_array_equal(out.mono(), babble_scene.mixture.samples[0])

    def test_zero_noise_scene_mask_is_identity(self):
        word = word_like(seed=41)
        ir = synth_ir(SourcePosition(0.0, 100.0, 5), reverb_time=0.1, seed=2)
        obs_ref = make_observation(word, ir, synth_babble(2.0, 4, seed=1), snr_db=0.0)
        zero_noise = NoisyObservation(
            mixture=obs_ref.speech_image,
            speech_image=obs_ref.speech_image,
            noise_image=AudioBuffer(np.zeros_like(obs_ref.speech_image.samples), 16000),
            config=obs_ref.config,
            speech_span=obs_ref.speech_span,
        )
        out = enhance(zero_noise, EnhancementMethod.MASK1CH_IRM).mono()
        ref = zero_noise.speech_image.samples[0]
        err = np.sqrt(np.mean((out - ref) ** 2)) / np.sqrt(np.mean(ref**2))
        assert err < 1e-6

    def test_irm_oracle_gain_at_minus9(self, babble_scene):
        out, info = enhance_with_info(babble_scene, EnhancementMethod.MASK1CH_IRM)
        assert info.oracle_snr_db > -9.0
        assert out.n_samples == babble_scene.mixture.n_samples

    def test_mvdr_irm_runs_and_gains(self, babble_scene):
        out, info = enhance_with_info(babble_scene, EnhancementMethod.MVDR2CH_IRM)
        assert info.oracle_snr_db > -9.0
        assert out.n_samples == babble_scene.mixture.n_samples

    def test_mvdr_est_runs_and_gains(self, babble_scene):
        out, info = enhance_with_info(babble_scene, EnhancementMethod.MVDR2CH_EST)
        assert info.oracle_snr_db > -9.0

    def test_unprocessed_info_matches_scene_snr(self, babble_scene):
        _, info = enhance_with_info(babble_scene, EnhancementMethod.UNPROCESSED)
        assert info.oracle_snr_db == pytest.approx(-9.0, abs=0.01)

    def test_method_accepts_string(self, babble_scene):
        out = enhance(babble_scene, "unprocessed")
        np.testing.assert_array_equal(out.mono(), babble_scene.mixture.samples[0])
