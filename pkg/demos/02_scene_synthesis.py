# Building two-channel noisy observations at exact SNRs.
#
# A scene is: a word convolved through a two-microphone impulse response,
# dropped into babble noise with 288 ms of noise-only padding on both
# sides, with the noise scaled so the channel-1 SNR over the word's
# support hits the requested value exactly.

from pathlib import Path

import numpy as np

from silab.dsp import write_wav
from silab.scene import (
    PRESET_POSITIONS,
    SceneConfig,
    build_scene,
    synth_babble,
    synth_ir,
    synthetic_word,
)

out = Path(__file__).parent / "output" / "scenes"
out.mkdir(parents=True, exist_ok=True)

# the measured-geometry stand-in: 12 preset positions around a 4 cm pair
print("preset positions:")
for pid in (1, 5, 9, 10, 11, 12):
    p = PRESET_POSITIONS[pid]
    print(f"  #{pid}: azimuth {p.azimuth_deg:+.0f} deg, distance {p.distance_cm:.0f} cm")

# inter-channel delay follows the geometry (about 0.93 samples at +30 deg)
ir = synth_ir(PRESET_POSITIONS[4], mic_spacing_cm=4.0, reverb_time=0.36, seed=7)
print(f"\nIR: {ir.channel_count} channels, {ir.duration * 1000:.0f} ms with reverb tail")

# babble from 16 modulated, spatialized talkers, normalized to -20 dBFS
babble = synth_babble(duration=10.0, n_talkers=16, seed=42)
print(f"babble: {babble.duration:.0f} s, RMS {20 * np.log10(np.sqrt(np.mean(babble.samples**2))):.1f} dBFS")

word = synthetic_word(seed=3)
for snr in (-9.0, 0.0):
    cfg = SceneConfig(snr_db=snr, position=PRESET_POSITIONS[4], seed=100)
    obs = build_scene(word, babble, cfg)
    resid = np.max(np.abs(obs.mixture.samples - obs.speech_image.samples - obs.noise_image.samples))
    print(
        f"\nscene at {snr:+.0f} dB: measured {obs.measured_snr_db():+.3f} dB, "
        f"decomposition residual {resid:.1e}"
    )
    write_wav(out / f"mixture_{snr:+.0f}dB.wav", obs.mixture)

print(f"\nwrote mixtures to {out}")
