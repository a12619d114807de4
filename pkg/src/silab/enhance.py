"""Oracle-mask enhancement and mask-based MVDR beamforming.

Four conditions: unprocessed channel-1 passthrough, single-channel oracle
ratio masking, and two-channel MVDR driven either by the oracle mask or by
a fixed noise-period mask. The 2x2 per-frequency eigenproblems are solved
in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dsp import PROCESS_RATE, AudioBuffer, Spectrogram, StftParams, istft, stft
from .scene import NOISE_PAD_MS, NoisyObservation


class EnhancementMethod(str, Enum):
    UNPROCESSED = "unprocessed"
    MASK1CH_IRM = "mask1ch_irm"
    MVDR2CH_IRM = "mvdr2ch_irm"
    MVDR2CH_EST = "mvdr2ch_est"


@dataclass(frozen=True)
class Mask:
    """Real T x F gain grid in [0, 1]."""

    values: np.ndarray
    kind: str  # irm | est | ones

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("mask must be 2-D (T, F)")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("mask values outside [0, 1]")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class ScmBank:
    """Per-frequency 2x2 spatial covariance matrices, (F, 2, 2).

    Both banks must be Hermitian and positive semidefinite up to rounding
    (tolerances scale with matrix magnitude)."""

    r_s: np.ndarray
    r_v: np.ndarray
    frame_count: int

    def __post_init__(self):
        for name, bank in (("r_s", self.r_s), ("r_v", self.r_v)):
            bank = np.asarray(bank, dtype=np.complex128)
            scale = max(1.0, float(np.abs(bank).max(initial=0.0)))
            asym = np.abs(bank - np.conj(np.swapaxes(bank, -1, -2))).max(initial=0.0)
            if asym > 1e-12 * scale:
                raise ValueError(f"{name} not Hermitian (asymmetry {asym:.2e})")
            eig_min = float(np.linalg.eigvalsh(bank).min(initial=0.0))
            if eig_min < -1e-10 * scale:
                raise ValueError(f"{name} not PSD (min eigenvalue {eig_min:.2e})")
            object.__setattr__(self, name, bank)


@dataclass(frozen=True)
class Beamformer:
    steering: np.ndarray  # (F, 2)
    weights: np.ndarray  # (F, 2)
    ref_channel: int
    flagged: np.ndarray  # (F,) bool, frequencies that needed a fallback


def compute_irm(speech_spec: Spectrogram, noise_spec: Spectrogram) -> Mask:
    """Oracle ratio mask sqrt(|s|^2 / (|s|^2 + |v|^2)); 0/0 bins give 0."""
    if speech_spec.bins.shape != noise_spec.bins.shape:
        raise ValueError("speech/noise spectrogram dimensions differ")
    ps = np.abs(speech_spec.bins) ** 2
    pv = np.abs(noise_spec.bins) ** 2
    denom = ps + pv
    values = np.zeros_like(ps)
    live = denom > 0.0
    values[live] = np.sqrt(ps[live] / denom[live])
    return Mask(np.clip(values, 0.0, 1.0), kind="irm")


def apply_mask(mask: Mask, spec: Spectrogram) -> Spectrogram:
    """Element-wise gain; phase untouched."""
    if mask.values.shape != spec.bins.shape:
        raise ValueError(
            f"mask shape {mask.values.shape} != spectrogram shape {spec.bins.shape}"
        )
    return Spectrogram(mask.values * spec.bins, spec.params, spec.sample_rate, spec.n_samples)


def est_mask(
    frame_count: int,
    params: StftParams,
    noise_period_ms: float = NOISE_PAD_MS,
    sample_rate: int = PROCESS_RATE,
) -> Mask:
    """Fixed mask: 0 for frames centered in the leading/trailing noise
    period, 1 elsewhere, constant across frequency."""
    period = noise_period_ms / 1000.0 * sample_rate
    span = (frame_count - 1) * params.hop
    if span < 2.0 * period:
        raise ValueError(
            f"utterance span {span} samples shorter than two {noise_period_ms} ms noise periods"
        )
    centers = np.arange(frame_count) * params.hop
    values = np.ones((frame_count, params.n_bins))
    noise_frames = (centers < period) | (centers > span - period)
    values[noise_frames, :] = 0.0
    return Mask(values, kind="est")


def ones_mask(frame_count: int, params: StftParams) -> Mask:
    return Mask(np.ones((frame_count, params.n_bins)), kind="ones")


def estimate_scms(mask: Mask, multi_spec: list[Spectrogram]) -> ScmBank:
    """Mask-weighted SCMs R_s and R_v, each averaged over all T frames."""
    if len(multi_spec) != 2:
        raise ValueError(f"expected 2 channels, got {len(multi_spec)}")
    shapes = {s.bins.shape for s in multi_spec}
    if len(shapes) != 1 or mask.values.shape != multi_spec[0].bins.shape:
        raise ValueError("mask and spectrogram dimensions differ")
    x = np.stack([s.bins for s in multi_spec], axis=-1)  # (T, F, 2)
    t_count = x.shape[0]
    m = mask.values
    r_s = np.einsum("tf,tfi,tfj->fij", m, x, np.conj(x)) / t_count
    r_v = np.einsum("tf,tfi,tfj->fij", 1.0 - m, x, np.conj(x)) / t_count
    # symmetrize away rounding-level asymmetry
    r_s = 0.5 * (r_s + np.conj(np.swapaxes(r_s, -1, -2)))
    r_v = 0.5 * (r_v + np.conj(np.swapaxes(r_v, -1, -2)))
    return ScmBank(r_s=r_s, r_v=r_v, frame_count=t_count)


def _loaded(r_v: np.ndarray) -> np.ndarray:
    """Diagonal loading before inversion: eps = 1e-6 * trace/2 + 1e-12."""
    tr = np.real(np.trace(r_v, axis1=-2, axis2=-1))
    eps = 1e-6 * tr / 2.0 + 1e-12
    return r_v + eps[..., None, None] * np.eye(2)


def _inv2(m: np.ndarray) -> np.ndarray:
    """Batched closed-form 2x2 inverse."""
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    inv = np.empty_like(m)
    inv[..., 0, 0] = m[..., 1, 1]
    inv[..., 1, 1] = m[..., 0, 0]
    inv[..., 0, 1] = -m[..., 0, 1]
    inv[..., 1, 0] = -m[..., 1, 0]
    return inv / det[..., None, None]


def _principal_eigvec_2x2(b: np.ndarray) -> np.ndarray:
    """Unit principal eigenvector of batched 2x2 matrices, closed form.

    Intended for matrices similar to Hermitian-PSD products (real
    nonnegative eigenvalues). Eigenvalue ties return [1, 0].
    """
    b00, b01 = b[..., 0, 0], b[..., 0, 1]
    b10, b11 = b[..., 1, 0], b[..., 1, 1]
    tr = b00 + b11
    det = b00 * b11 - b01 * b10
    disc = tr * tr - 4.0 * det
    lam = (tr + np.sqrt(disc.astype(np.complex128))) / 2.0

    v1 = np.stack([b01, lam - b00], axis=-1)
    v2 = np.stack([lam - b11, b10], axis=-1)
    n1 = np.linalg.norm(v1, axis=-1)
    n2 = np.linalg.norm(v2, axis=-1)
    v = np.where((n1 >= n2)[..., None], v1, v2)

    tie = np.abs(disc) < 1e-12 * np.abs(tr) ** 2
    degenerate = tie | (np.linalg.norm(v, axis=-1) == 0.0)
    v[degenerate] = np.array([1.0, 0.0], dtype=np.complex128)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _fix_phase(vectors: np.ndarray, ref: int) -> np.ndarray:
    """Rotate each vector so its reference entry is real non-negative."""
    ref_entries = vectors[..., ref]
    phase = np.ones_like(ref_entries)
    nz = ref_entries != 0
    phase[nz] = ref_entries[nz] / np.abs(ref_entries[nz])
    return vectors / phase[..., None]


def steering_vector(scms: ScmBank, ref_channel: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-frequency steering a_f = R_v . maxeig(R_v^{-1} R_s).

    Returns (steering (F, 2), flagged (F,)). Frequencies where R_v carries
    no energy fall back to the principal eigenvector of R_s and are flagged.
    """
    r_v, r_s = scms.r_v, scms.r_s
    flagged = np.real(np.trace(r_v, axis1=-2, axis2=-1)) <= 0.0

    r_vl = _loaded(r_v)
    b = _inv2(r_vl) @ r_s
    v = _principal_eigvec_2x2(b)
    a = np.einsum("fij,fj->fi", r_v, v)

    if np.any(flagged):
        fallback = _principal_eigvec_2x2(r_s[flagged])
        a[flagged] = fallback
    return _fix_phase(a, ref_channel), flagged


def mvdr_weights(steering: np.ndarray, scms: ScmBank, ref_channel: int = 0) -> Beamformer:
    """Distortionless weights w = a_r^* R_v^{-1} a / (a^H R_v^{-1} a).

    Zero steering vectors get a flagged pass-through weight (reference
    channel selector).
    """
    a = np.asarray(steering, dtype=np.complex128)
    r_vl = _loaded(scms.r_v)
    u = np.einsum("fij,fj->fi", _inv2(r_vl), a)
    denom = np.einsum("fi,fi->f", np.conj(a), u)
    zero = np.linalg.norm(a, axis=-1) == 0.0
    safe = np.where(zero, 1.0, denom)
    w = np.conj(a[:, ref_channel])[:, None] * u / safe[:, None]
    if np.any(zero):
        w[zero] = 0.0
        w[zero, ref_channel] = 1.0
    return Beamformer(steering=a, weights=w, ref_channel=ref_channel, flagged=zero)


def beamform(bf: Beamformer, multi_spec: list[Spectrogram]) -> Spectrogram:
    """y_tf = w_f^H x_tf."""
    shapes = {s.bins.shape for s in multi_spec}
    if len(shapes) != 1:
        raise ValueError("channel spectrogram dimensions differ")
    x = np.stack([s.bins for s in multi_spec], axis=-1)  # (T, F, 2)
    if x.shape[-1] != bf.weights.shape[-1] or x.shape[1] != bf.weights.shape[0]:
        raise ValueError("weights do not match spectrogram dimensions")
    y = np.einsum("fi,tfi->tf", np.conj(bf.weights), x)
    ref = multi_spec[0]
    return Spectrogram(y, ref.params, ref.sample_rate, ref.n_samples)


# ---------------------------------------------------------------------------
# Full per-utterance pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnhanceInfo:
    method: EnhancementMethod
    oracle_snr_db: float
    flagged_freqs: tuple[int, ...]


def _scene_mask(
    obs: NoisyObservation,
    method: EnhancementMethod,
    params: StftParams,
    noise_period_ms: float,
) -> Mask:
    if method is EnhancementMethod.MVDR2CH_EST:
        frames = stft(obs.mixture.channel(0), params).n_frames
        return est_mask(frames, params, noise_period_ms, obs.mixture.sample_rate)
    speech_spec = stft(obs.speech_image.channel(0), params)
    noise_spec = stft(obs.noise_image.channel(0), params)
    return compute_irm(speech_spec, noise_spec)


def _build_beamformer(
    obs: NoisyObservation, mask: Mask, params: StftParams
) -> Beamformer:
    mix_specs = [stft(obs.mixture.channel(ch), params) for ch in range(2)]
    scms = estimate_scms(mask, mix_specs)
    steering, flagged_steer = steering_vector(scms)
    bf = mvdr_weights(steering, scms)
    flagged = flagged_steer | bf.flagged
    return Beamformer(bf.steering, bf.weights, bf.ref_channel, flagged)


def enhance(
    obs: NoisyObservation,
    method: EnhancementMethod,
    params: StftParams | None = None,
    noise_period_ms: float = NOISE_PAD_MS,
) -> AudioBuffer:
    """Run one enhancement condition over a scene, returning 16 kHz mono."""
    audio, _ = enhance_with_info(obs, method, params, noise_period_ms)
    return audio


def enhance_with_info(
    obs: NoisyObservation,
    method: EnhancementMethod,
    params: StftParams | None = None,
    noise_period_ms: float = NOISE_PAD_MS,
) -> tuple[AudioBuffer, EnhanceInfo]:
    """Like :func:`enhance`, also returning the oracle output SNR
    (mask/weights applied separately to the stored speech and noise images)
    and any flagged frequencies."""
    method = EnhancementMethod(method)
    params = params or StftParams()

    if method is EnhancementMethod.UNPROCESSED:
        out = obs.mixture.channel(0)
        proc_s = obs.speech_image.samples[0]
        proc_n = obs.noise_image.samples[0]
        info = EnhanceInfo(method, _span_snr(proc_s, proc_n, obs.speech_span), ())
        return out, info

    if method is EnhancementMethod.MASK1CH_IRM:
        mask = _scene_mask(obs, method, params, noise_period_ms)
        mix_spec = stft(obs.mixture.channel(0), params)
        out = istft(apply_mask(mask, mix_spec))
        proc_s = istft(apply_mask(mask, stft(obs.speech_image.channel(0), params))).mono()
        proc_n = istft(apply_mask(mask, stft(obs.noise_image.channel(0), params))).mono()
        info = EnhanceInfo(method, _span_snr(proc_s, proc_n, obs.speech_span), ())
        return out, info

    # MVDR variants
    mask = _scene_mask(obs, method, params, noise_period_ms)
    bf = _build_beamformer(obs, mask, params)
    mix_specs = [stft(obs.mixture.channel(ch), params) for ch in range(2)]
    out = istft(beamform(bf, mix_specs))
    s_specs = [stft(obs.speech_image.channel(ch), params) for ch in range(2)]
    n_specs = [stft(obs.noise_image.channel(ch), params) for ch in range(2)]
    proc_s = istft(beamform(bf, s_specs)).mono()
    proc_n = istft(beamform(bf, n_specs)).mono()
    info = EnhanceInfo(
        method,
        _span_snr(proc_s, proc_n, obs.speech_span),
        tuple(int(i) for i in np.nonzero(bf.flagged)[0]),
    )
    return out, info


def _span_snr(speech: np.ndarray, noise: np.ndarray, span: tuple[int, int]) -> float:
    a, b = span
    es = float(np.sum(speech[a:b] ** 2))
    en = float(np.sum(noise[a:b] ** 2))
    if en == 0.0:
        return float("inf")
    return 10.0 * np.log10(es / en)
