# Tone-pip screening: the descending staircase stimulus, the listening-level
# math, and the cohort screening rule.

from pathlib import Path

from silab.dsp import write_wav
from silab.tonepip import (
    ParticipantRecord,
    ScreeningRule,
    TonePipResult,
    TonePipSequenceSpec,
    ansi_reference_threshold,
    gen_tonepip_sequence,
    listening_level,
    mean_pips,
    screen_participants,
    threshold_spl,
)

out = Path(__file__).parent / "output" / "tonepips"
out.mkdir(parents=True, exist_ok=True)

# one sequence per screening frequency: 1 s reference tone, then 15 pips
# stepping down 5 dB each
for freq in (500.0, 1000.0, 2000.0, 4000.0):
    spec = TonePipSequenceSpec(frequency=freq, ref_level_dbfs=-26.0)
    audio, meta = gen_tonepip_sequence(spec, sample_rate=48_000)
    write_wav(out / f"{int(freq)}hz.wav", audio)
print(f"wrote 4 staircases to {out}")

# a participant who hears 13 pips is listening 60 dB above threshold;
# at a 64 dB SPL reference that places their threshold at 4 dB SPL,
# below the audiometric-zero reference at every screening frequency
n_pip = 13
l_lis = listening_level(n_pip)
print(f"\nN_pip={n_pip}: listening level {l_lis:.0f} dB")
print(f"threshold at 64 dB SPL reference: {threshold_spl(64.0, l_lis):.0f} dB SPL")
for f in (500.0, 1000.0, 2000.0, 4000.0):
    print(f"  audiometric zero at {f:>6.0f} Hz: {ansi_reference_threshold(f):.1f} dB SPL")

# screening keeps mean counts in [9, 13]: below suggests the sound was too
# quiet for consonants, above suggests an untrustworthy report
freqs = (500.0, 1000.0, 2000.0, 4000.0)
cohort = [
    ParticipantRecord("quiet", tuple(TonePipResult(f, 7) for f in freqs)),
    ParticipantRecord("good-a", tuple(TonePipResult(f, n) for f, n in zip(freqs, (10, 11, 12, 11)))),
    ParticipantRecord("good-b", tuple(TonePipResult(f, 13) for f in freqs)),
    ParticipantRecord("suspect", tuple(TonePipResult(f, 15) for f in freqs)),
]
outcome = screen_participants(cohort, ScreeningRule())
for rec in cohort:
    nbar = mean_pips(rec.tonepip_results)
    verdict = "keep" if rec.participant_id in outcome.kept else outcome.rejected[rec.participant_id]
    print(f"  {rec.participant_id:<8} mean pips {nbar:5.2f} -> {verdict}")
