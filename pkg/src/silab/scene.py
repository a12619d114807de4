"""Two-channel noisy scene synthesis.

Builds observations mixture = speech_image + noise_image from a clean word,
a synthetic two-microphone impulse response, and babble noise scaled to an
exact target SNR at the reference channel. Everything is seeded and
deterministic so a scene can be regenerated bit-identically from its config.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy.signal import fftconvolve

from .dsp import AudioBuffer

SPEED_OF_SOUND = 343.0  # m/s
SNR_GRID_DB = (-9.0, -6.0, -3.0, 0.0, 3.0)
NOISE_PAD_MS = 288.0  # noise-only head/tail around each word


@dataclass(frozen=True)
class SourcePosition:
    azimuth_deg: float
    distance_cm: float
    position_id: int


# Nine positions on a 3 x 3 direction/distance grid plus three at 90 cm
# behind/beside the array.
PRESET_POSITIONS = {
    p.position_id: p
    for p in (
        [
            SourcePosition(az, dist, 1 + i * 3 + k)
            for i, az in enumerate((-30.0, 0.0, 30.0))
            for k, dist in enumerate((70.0, 100.0, 130.0))
        ]
        + [
            SourcePosition(90.0, 90.0, 10),
            SourcePosition(-75.0, 90.0, 11),
            SourcePosition(-105.0, 90.0, 12),
        ]
    )
}


@dataclass(frozen=True)
class SceneConfig:
    mic_spacing_cm: float = 4.0
    reverb_time: float = 0.36
    snr_db: float = 0.0
    position: SourcePosition | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mic_spacing_cm <= 0:
            raise ValueError("mic_spacing_cm must be positive")


@dataclass(frozen=True)
class NoisyObservation:
    """mixture = speech_image + noise_image, sample-exact."""

    mixture: AudioBuffer
    speech_image: AudioBuffer
    noise_image: AudioBuffer
    config: SceneConfig
    speech_span: tuple[int, int]  # [start, stop) of the convolved-speech support

    def __post_init__(self):
        n = self.mixture.n_samples
        if self.speech_image.n_samples != n or self.noise_image.n_samples != n:
            raise ValueError("component lengths differ")
        resid = self.mixture.samples - self.speech_image.samples - self.noise_image.samples
        if np.max(np.abs(resid)) > 1e-9:
            raise ValueError("mixture != speech_image + noise_image")

    def measured_snr_db(self, channel: int = 0) -> float:
        """Recompute SNR from the stored images over the speech support."""
        a, b = self.speech_span
        es = float(np.sum(self.speech_image.samples[channel, a:b] ** 2))
        en = float(np.sum(self.noise_image.samples[channel, a:b] ** 2))
        return 10.0 * np.log10(es / en)


def _fractional_delay_kernel(delay: float, n_taps: int = 81) -> tuple[np.ndarray, int]:
    """Hann-windowed sinc at a fractional sample delay.

    Returns (kernel, offset) with the kernel to be placed starting at
    sample `offset` so its group delay lands at `delay`.
    """
    center = int(np.floor(delay))
    frac = delay - center
    half = n_taps // 2
    n = np.arange(n_taps) - half
    kernel = np.sinc(n - frac)
    kernel *= 0.5 + 0.5 * np.cos(np.pi * (n - frac) / (half + 1))
    return kernel, center - half


def synth_ir(
    position: SourcePosition,
    mic_spacing_cm: float = 4.0,
    reverb_time: float = 0.36,
    seed: int = 0,
    sample_rate: int = 16_000,
) -> AudioBuffer:
    """Synthetic two-channel impulse response for a given source position.

    Direct path: unit-amplitude fractional delays consistent with a far-field
    source (inter-channel delay = spacing * sin(azimuth) / c), placed after
    the absolute distance/c propagation delay. Tail: per-channel independent
    Gaussian noise decaying exponentially to -60 dB at reverb_time.
    """
    if reverb_time < 0:
        raise ValueError("reverb_time must be >= 0")
    theta = np.deg2rad(position.azimuth_deg)
    spacing_m = mic_spacing_cm / 100.0
    dist_m = position.distance_cm / 100.0
    base_delay = dist_m / SPEED_OF_SOUND * sample_rate
    itd = spacing_m * np.sin(theta) / SPEED_OF_SOUND * sample_rate
    delays = (base_delay - itd / 2.0, base_delay + itd / 2.0)

    guard = 48  # room for the sinc kernel skirt
    tail_len = int(round(reverb_time * sample_rate))
    onset = int(np.ceil(max(delays))) + guard + int(0.005 * sample_rate)
    length = max(int(np.ceil(max(delays))) + 2 * guard, onset + tail_len) + 1
    ir = np.zeros((2, length))
    for ch, d in enumerate(delays):
        kernel, start = _fractional_delay_kernel(d + guard)
        ir[ch, start : start + kernel.size] += kernel

    if tail_len > 0:
        rng = np.random.default_rng(seed)
        t = np.arange(tail_len) / sample_rate
        envelope = 0.35 * 10.0 ** (-3.0 * t / reverb_time)
        for ch in range(2):
            ir[ch, onset : onset + tail_len] += envelope * rng.standard_normal(tail_len)

    return AudioBuffer(ir, sample_rate)


def _speech_shaped(noise_spectrum_f: np.ndarray, sample_rate: int) -> np.ndarray:
    """Long-term-speech-like gain curve: flat to 500 Hz, -9 dB/oct above,
    rolled off below 100 Hz."""
    f = noise_spectrum_f
    gain = np.ones_like(f)
    hi = f > 500.0
    gain[hi] = (500.0 / f[hi]) ** 1.5
    lo = f < 100.0
    gain[lo] = (f[lo] / 100.0) ** 2
    return gain


def _one_talker(n: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Speech-shaped noise with syllabic-rate amplitude modulation."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    shaped = np.fft.irfft(spec * _speech_shaped(f, sample_rate), n=n)

    # modulation: lowpass Gaussian noise around 4 Hz, exponentiated
    mod_spec = np.fft.rfft(rng.standard_normal(n))
    mod_spec[f > 8.0] = 0.0
    mod = np.fft.irfft(mod_spec, n=n)
    mod = mod / (np.std(mod) + 1e-30)
    env = np.exp(0.7 * mod)
    return shaped * env


def synth_babble(
    duration: float,
    n_talkers: int,
    seed: int = 0,
    sample_rate: int = 16_000,
    mic_spacing_cm: float = 4.0,
    reverb_time: float = 0.36,
) -> AudioBuffer:
    """Multi-talker babble: independent modulated speech-shaped streams,
    each spatialized at a random position, normalized to -20 dBFS RMS."""
    if n_talkers < 1:
        raise ValueError("n_talkers must be >= 1")
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    out = np.zeros((2, n))
    for k in range(n_talkers):
        talker = _one_talker(n, sample_rate, rng)
        pos = SourcePosition(
            azimuth_deg=float(rng.uniform(-180.0, 180.0)),
            distance_cm=float(rng.uniform(60.0, 200.0)),
            position_id=-1,
        )
        ir = synth_ir(pos, mic_spacing_cm, reverb_time, seed=int(rng.integers(2**31)), sample_rate=sample_rate)
        for ch in range(2):
            out[ch] += fftconvolve(talker, ir.samples[ch])[:n]
    rms = np.sqrt(np.mean(out**2))
    out *= 10.0 ** (-20.0 / 20.0) / rms
    return AudioBuffer(out, sample_rate)


def make_observation(
    clean: AudioBuffer,
    ir: AudioBuffer,
    noise: AudioBuffer,
    snr_db: float,
    speech_offset: int = 0,
    config: SceneConfig | None = None,
) -> NoisyObservation:
    """Convolve, place, and mix at an exact channel-1 SNR.

    The noise is scaled by the scalar g that makes the energy ratio of the
    stored images over the convolved-speech support equal snr_db.
    """
    c = clean.mono()
    if not np.any(c):
        raise ValueError("silent clean input")
    if clean.sample_rate != ir.sample_rate or clean.sample_rate != noise.sample_rate:
        raise ValueError("sample rates differ")
    conv = np.stack([fftconvolve(c, ir.samples[ch]) for ch in range(ir.channel_count)])
    span = (speech_offset, speech_offset + conv.shape[1])
    if noise.n_samples < span[1]:
        raise ValueError(
            f"noise too short: {noise.n_samples} < {span[1]} samples of convolved speech"
        )
    speech = np.zeros((conv.shape[0], noise.n_samples))
    speech[:, span[0] : span[1]] = conv

    es = float(np.sum(speech[0, span[0] : span[1]] ** 2))
    en = float(np.sum(noise.samples[0, span[0] : span[1]] ** 2))
    if en == 0.0:
        raise ValueError("noise silent over the speech support; no finite gain")
    g = float(np.sqrt(es / (en * 10.0 ** (snr_db / 10.0))))
    noise_img = g * noise.samples

    cfg = config or SceneConfig(snr_db=snr_db)
    return NoisyObservation(
        mixture=AudioBuffer(speech + noise_img, clean.sample_rate),
        speech_image=AudioBuffer(speech, clean.sample_rate),
        noise_image=AudioBuffer(noise_img, clean.sample_rate),
        config=cfg,
        speech_span=span,
    )


def build_scene(
    clean: AudioBuffer,
    babble: AudioBuffer,
    config: SceneConfig,
    pad_ms: float = NOISE_PAD_MS,
) -> NoisyObservation:
    """Full scene: seeded babble segment, noise-only head/tail of pad_ms,
    word convolved through the config's position IR in the middle."""
    if config.position is None:
        raise ValueError("SceneConfig.position required")
    sr = clean.sample_rate
    ir = synth_ir(config.position, config.mic_spacing_cm, config.reverb_time, config.seed, sr)
    pad = int(round(pad_ms / 1000.0 * sr))
    conv_len = clean.n_samples + ir.n_samples - 1
    seg_len = conv_len + 2 * pad
    if babble.n_samples < seg_len:
        raise ValueError(f"babble buffer too short: {babble.n_samples} < {seg_len}")
    rng = np.random.default_rng(config.seed)
    offset = int(rng.integers(0, babble.n_samples - seg_len + 1))
    noise = AudioBuffer(babble.samples[:, offset : offset + seg_len], sr)
    return make_observation(clean, ir, noise, config.snr_db, speech_offset=pad, config=config)


def synthetic_word(seed: int, duration: float = 0.7, sample_rate: int = 16_000) -> AudioBuffer:
    """Word-shaped stand-in signal: band-limited noise burst with a smooth
    syllabic envelope. Deterministic in the seed."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    x = rng.standard_normal(n)
    spec = np.fft.rfft(x)
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec[f > 6000.0] = 0.0
    spec[f < 120.0] = 0.0
    x = np.fft.irfft(spec, n)
    t = np.arange(n) / sample_rate
    syllables = 2.0 + (seed % 3)
    env = (0.5 - 0.5 * np.cos(2.0 * np.pi * t / duration)) * (
        0.6 + 0.4 * np.cos(2.0 * np.pi * syllables * t / duration)
    )
    x = x * env
    return AudioBuffer.from_mono(0.1 * x / np.sqrt(np.mean(x**2)), sample_rate)


# ---------------------------------------------------------------------------
# Scene manifest (JSON): one entry per stimulus to synthesize
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    word_id: str
    position_id: int
    snr_db: float
    seed: int
    mixture_path: str
    speech_path: str
    noise_path: str


def save_manifest(path, entries: list[ManifestEntry]) -> None:
    with open(path, "w") as fh:
        json.dump({"entries": [asdict(e) for e in entries]}, fh, indent=2)


def load_manifest(path) -> list[ManifestEntry]:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return [ManifestEntry(**e) for e in doc["entries"]]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"bad manifest {path}: {exc}") from exc
