"""Audio containers, STFT/ISTFT, resampling, level measurement, and WAV I/O.

Everything downstream (scene synthesis, enhancement, tone-pip stimuli)
works on :class:`AudioBuffer` and :class:`Spectrogram`. Processing runs at
16 kHz; 48 kHz appears only at playback export.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import firwin, resample_poly

PROCESS_RATE = 16_000
PLAYBACK_RATE = 48_000

_WINDOWS = {
    "hann": lambda n: 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n),
    "rect": lambda n: np.ones(n),
}


@dataclass(frozen=True)
class AudioBuffer:
    """Multi-channel PCM audio, full-scale floats in [-1, 1] by convention.

    ``samples`` is a (channels, n) float64 array; all channels share one
    length and one sample rate. Finite values only.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if x.ndim != 2:
            raise ValueError(f"samples must be 1-D or 2-D, got ndim={x.ndim}")
        if x.shape[1] == 0:
            raise ValueError("empty signal")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples contain non-finite values")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channel_count(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def channel(self, index: int) -> "AudioBuffer":
        """Extract one channel as a mono buffer."""
        return AudioBuffer(self.samples[index : index + 1], self.sample_rate)

    def mono(self) -> np.ndarray:
        """Return the single channel as a 1-D array; error if not mono."""
        if self.channel_count != 1:
            raise ValueError(f"expected mono, got {self.channel_count} channels")
        return self.samples[0]

    @staticmethod
    def from_mono(x: np.ndarray, sample_rate: int) -> "AudioBuffer":
        return AudioBuffer(np.asarray(x, dtype=np.float64)[None, :], sample_rate)

    @staticmethod
    def from_channels(channels, sample_rate: int) -> "AudioBuffer":
        return AudioBuffer(np.stack([np.asarray(c, dtype=np.float64) for c in channels]), sample_rate)


@dataclass(frozen=True)
class StftParams:
    """Analysis/synthesis framing. Defaults: 32 ms Hann, 50% overlap at 16 kHz."""

    window_length: int = 512
    hop: int = 256
    fft_size: int = 512
    window: str = "hann"

    def __post_init__(self):
        if not (0 < self.hop <= self.window_length <= self.fft_size):
            raise ValueError(
                f"need 0 < hop <= window_length <= fft_size, got "
                f"hop={self.hop}, window_length={self.window_length}, fft_size={self.fft_size}"
            )
        if self.window not in _WINDOWS:
            raise ValueError(f"unknown window {self.window!r}")

    def window_array(self) -> np.ndarray:
        return _WINDOWS[self.window](self.window_length)

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class Spectrogram:
    """Complex T x F grid from :func:`stft`, F = fft_size/2 + 1."""

    bins: np.ndarray
    params: StftParams
    sample_rate: int
    n_samples: int  # original signal length, needed for exact resynthesis

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=np.complex128)
        if b.ndim != 2:
            raise ValueError(f"bins must be 2-D (T, F), got ndim={b.ndim}")
        if b.shape[0] < 1:
            raise ValueError("spectrogram must have at least one frame")
        if b.shape[1] != self.params.n_bins:
            raise ValueError(
                f"F={b.shape[1]} inconsistent with fft_size={self.params.fft_size}"
            )
        object.__setattr__(self, "bins", b)

    @property
    def n_frames(self) -> int:
        return self.bins.shape[0]

    @property
    def n_bins(self) -> int:
        return self.bins.shape[1]

    def frame_centers(self) -> np.ndarray:
        """Sample index at the center of each analysis frame (t*hop)."""
        return np.arange(self.n_frames) * self.params.hop


def stft(signal: AudioBuffer, params: StftParams | None = None) -> Spectrogram:
    """Short-time Fourier transform of a mono buffer.

    The signal is zero-padded by half a window on both sides so frame t is
    centered at sample t*hop; frames cover the padded signal end to end.
    """
    params = params or StftParams()
    x = signal.mono()
    if x.size < params.window_length:
        raise ValueError(
            f"signal length {x.size} shorter than window_length {params.window_length}"
        )
    half = params.window_length // 2
    padded = np.pad(x, (half, half))
    n_frames = 1 + (padded.size - params.window_length) // params.hop
    idx = np.arange(params.window_length)[None, :] + params.hop * np.arange(n_frames)[:, None]
    frames = padded[idx] * params.window_array()[None, :]
    bins = np.fft.rfft(frames, n=params.fft_size, axis=1)
    return Spectrogram(bins, params, signal.sample_rate, x.size)


def istft(spec: Spectrogram) -> AudioBuffer:
    """Weighted overlap-add resynthesis; exact inverse of :func:`stft`.

    Frames are windowed again on synthesis and the overlap-added result is
    divided by the accumulated squared window, so istft(stft(x)) == x for
    any window wherever the window-square sum is nonzero.
    """
    params = spec.params
    win = params.window_array()
    frames = np.fft.irfft(spec.bins, n=params.fft_size, axis=1)[:, : params.window_length]
    frames = frames * win[None, :]

    half = params.window_length // 2
    total = half * 2 + spec.n_samples
    acc = np.zeros(total + params.window_length)
    norm = np.zeros_like(acc)
    wsq = win * win
    for t in range(spec.n_frames):
        start = t * params.hop
        acc[start : start + params.window_length] += frames[t]
        norm[start : start + params.window_length] += wsq
    valid = norm > 1e-10
    acc[valid] /= norm[valid]
    out = acc[half : half + spec.n_samples]
    return AudioBuffer.from_mono(out, spec.sample_rate)


def resample(signal: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Polyphase windowed-sinc resampling; duration preserved within a sample.

    The signal is extended by odd reflection before filtering and trimmed
    after, which keeps filter transients out of the output at abrupt signal
    edges (full-band noise cut mid-waveform).
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == signal.sample_rate:
        return signal
    g = np.gcd(int(target_rate), int(signal.sample_rate))
    up, down = target_rate // g, signal.sample_rate // g
    proto = firwin(60 * max(up, down) + 1, 1.0 / max(up, down), window=("kaiser", 8.0))

    n = signal.n_samples
    pad = min(128 * down, max(0, (n - 1) // down * down))
    n_out = -(-n * up // down)  # ceil
    padded = np.pad(signal.samples, ((0, 0), (pad, pad)), mode="reflect", reflect_type="odd")
    out = resample_poly(padded, up, down, axis=1, window=proto)
    trim = pad * up // down
    return AudioBuffer(out[:, trim : trim + n_out], target_rate)


def rms_db(signal: AudioBuffer, channel: int = 0) -> float | None:
    """RMS level in dBFS (full-scale square wave -> 0 dBFS).

    Returns None for an all-zero channel: silence has no level.
    """
    x = signal.samples[channel]
    rms = float(np.sqrt(np.mean(x * x)))
    if rms == 0.0:
        return None
    return 20.0 * np.log10(rms)


def write_wav(path, signal: AudioBuffer, pcm16: bool = False) -> None:
    """Write WAV, float32 by default or PCM 16-bit on request."""
    data = signal.samples.T  # scipy wants (n, channels)
    if data.shape[1] == 1:
        data = data[:, 0]
    if pcm16:
        clipped = np.clip(data, -1.0, 1.0)
        wavfile.write(path, signal.sample_rate, np.round(clipped * 32767.0).astype(np.int16))
    else:
        wavfile.write(path, signal.sample_rate, data.astype(np.float32))


def read_wav(path) -> AudioBuffer:
    """Read WAV (PCM 16/32-bit int or float32/64) to full-scale floats."""
    rate, data = wavfile.read(path)
    data = np.atleast_2d(data.T if data.ndim == 2 else data)
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    else:
        data = data.astype(np.float64)
    return AudioBuffer(data, rate)
