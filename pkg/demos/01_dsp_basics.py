# Containers, STFT/ISTFT round trip, resampling, and level measurement.
#
# Everything in the pipeline runs on AudioBuffer (float64, full scale) at
# 16 kHz; 48 kHz only appears when exporting for playback.

import numpy as np

from silab.dsp import AudioBuffer, StftParams, istft, resample, rms_db, stft

rng = np.random.default_rng(0)

# a one-second noise burst
x = AudioBuffer.from_mono(0.25 * rng.standard_normal(16_000), 16_000)
print(f"signal: {x.duration:.2f} s at {x.sample_rate} Hz, RMS {rms_db(x):.2f} dBFS")

# analysis/synthesis with the default 32 ms Hann / 50% overlap framing
params = StftParams()
spec = stft(x, params)
print(f"spectrogram: {spec.n_frames} frames x {spec.n_bins} bins")

rec = istft(spec)
err = np.sqrt(np.mean((rec.mono() - x.mono()) ** 2)) / np.sqrt(np.mean(x.mono() ** 2))
print(f"round-trip relative RMS error: {err:.2e}")

# a pure tone lands on a single bin (1 kHz -> bin 32 at 512-pt frames)
t = np.arange(16_000) / 16_000
tone = AudioBuffer.from_mono(np.sin(2 * np.pi * 1000 * t), 16_000)
tone_spec = stft(tone, params)
peak_bin = int(np.argmax(np.abs(tone_spec.bins[10])))
print(f"1 kHz tone: strongest bin in frame 10 is {peak_bin} (expected 32)")
print(f"unit sine level: {rms_db(tone):.2f} dBFS (expected -3.01)")

# upsample for playback, then back; content must sit below the filter's
# passband edge to survive, so band-limit to 6 kHz first
spec_bl = np.fft.rfft(x.mono())
spec_bl[np.fft.rfftfreq(x.n_samples, 1 / 16_000) > 6000] = 0.0
bl = AudioBuffer.from_mono(np.fft.irfft(spec_bl, x.n_samples), 16_000)
up = resample(bl, 48_000)
back = resample(up, 16_000)
rt = np.sqrt(np.mean((back.mono() - bl.mono()) ** 2)) / np.sqrt(np.mean(bl.mono() ** 2))
print(f"16k -> 48k -> 16k on 6 kHz-limited noise: {up.n_samples} samples at 48k, "
      f"round-trip error {rt:.2e}")
