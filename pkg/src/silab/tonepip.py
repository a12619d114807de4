"""Tone-pip screening stimuli and the listening-level / participant rules.

A screening run plays, per frequency, a 1 s reference tone followed by a
staircase of pips descending 5 dB each; the reported audible count maps to
a listening level of 5*(count - 1) dB, which drives cohort screening.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import PLAYBACK_RATE, AudioBuffer

TONEPIP_FREQUENCIES = (500.0, 1000.0, 2000.0, 4000.0)

# Audiometric-zero reference thresholds (dB SPL) at the screening frequencies.
ANSI_REFERENCE_DB_SPL = {500.0: 13.5, 1000.0: 7.5, 2000.0: 9.0, 4000.0: 12.0}

DIGITAL_FLOOR_DBFS = -120.0


@dataclass(frozen=True)
class TonePipSequenceSpec:
    frequency: float = 1000.0
    n_pips: int = 15
    step_db: float = 5.0
    ref_level_dbfs: float = -26.0
    ref_duration: float = 1.0
    pip_duration: float = 0.1
    gap_duration: float = 0.2
    ramp_duration: float = 0.01
    ascending: bool = False

    def __post_init__(self):
        if self.n_pips < 1:
            raise ValueError("n_pips must be >= 1")
        if self.step_db <= 0:
            raise ValueError("step_db must be positive")

    def pip_levels_dbfs(self) -> np.ndarray:
        """Nominal RMS level of each pip; pip 1 sits at the reference level."""
        levels = self.ref_level_dbfs - self.step_db * np.arange(self.n_pips)
        return levels[::-1] if self.ascending else levels


@dataclass(frozen=True)
class PipMetadata:
    start_sample: int
    end_sample: int
    level_dbfs: float


@dataclass(frozen=True)
class TonePipResult:
    frequency: float
    n_pip: int
    listening_level_db: float | None = None

    def __post_init__(self):
        if self.n_pip < 0:
            raise ValueError("n_pip must be >= 0")
        if self.listening_level_db is None:
            object.__setattr__(self, "listening_level_db", listening_level(self.n_pip))


@dataclass(frozen=True)
class ParticipantRecord:
    participant_id: str
    tonepip_results: tuple[TonePipResult, ...] = ()
    mean_srt_db: float | None = None


@dataclass(frozen=True)
class ScreeningRule:
    min_mean_pips: float = 9.0
    max_mean_pips: float = 13.0
    srt_exclude_ids: tuple[str, ...] = ()
    mad_outlier_factor: float | None = None  # e.g. 3.0 to enable |SRT-median|>k*MAD

    def __post_init__(self):
        if self.min_mean_pips >= self.max_mean_pips:
            raise ValueError("min_mean_pips must be < max_mean_pips")


REJECT_TOO_FEW = "too_few_pips"
REJECT_TOO_MANY = "too_many_pips"
REJECT_SRT_OUTLIER = "srt_outlier"
REJECT_MISSING_TONEPIP = "missing_tonepip"


@dataclass(frozen=True)
class ScreeningOutcome:
    kept: tuple[str, ...]
    rejected: dict[str, str] = field(default_factory=dict)  # id -> reason


def _scaled_tone(
    frequency: float, duration: float, ramp: float, level_dbfs: float, sample_rate: int
) -> np.ndarray:
    """Ramped sinusoid rescaled so its measured RMS equals level_dbfs exactly."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    tone = np.sin(2.0 * np.pi * frequency * t)
    n_ramp = int(round(ramp * sample_rate))
    if n_ramp > 0:
        edge = 0.5 - 0.5 * np.cos(np.pi * np.arange(n_ramp) / n_ramp)
        tone[:n_ramp] *= edge
        tone[-n_ramp:] *= edge[::-1]
    rms = np.sqrt(np.mean(tone**2))
    return tone * (10.0 ** (level_dbfs / 20.0) / rms)


def gen_tonepip_sequence(
    spec: TonePipSequenceSpec, sample_rate: int = PLAYBACK_RATE
) -> tuple[AudioBuffer, list[PipMetadata]]:
    """Render reference tone + pip staircase; returns audio and per-pip spans.

    Rendered RMS of each pip matches its metadata level exactly by
    construction (the ramped tone is rescaled after windowing).
    """
    levels = spec.pip_levels_dbfs()
    if np.min(levels) < DIGITAL_FLOOR_DBFS:
        raise ValueError(
            f"pip level {np.min(levels):.1f} dBFS underflows the digital floor"
        )
    gap = np.zeros(int(round(spec.gap_duration * sample_rate)))
    chunks = [
        _scaled_tone(
            spec.frequency, spec.ref_duration, spec.ramp_duration, spec.ref_level_dbfs, sample_rate
        ),
        gap,
    ]
    meta: list[PipMetadata] = []
    cursor = chunks[0].size + gap.size
    for k, level in enumerate(levels):
        pip = _scaled_tone(
            spec.frequency, spec.pip_duration, spec.ramp_duration, float(level), sample_rate
        )
        meta.append(PipMetadata(cursor, cursor + pip.size, float(level)))
        chunks.append(pip)
        cursor += pip.size
        if k < len(levels) - 1:
            chunks.append(gap)
            cursor += gap.size
    return AudioBuffer.from_mono(np.concatenate(chunks), sample_rate), meta


def listening_level(n_pip: int) -> float | None:
    """5 * (n_pip - 1) dB; zero audible pips is 'inaudible', reported as None."""
    if n_pip < 0:
        raise ValueError("n_pip must be >= 0")
    if n_pip == 0:
        return None
    return 5.0 * (n_pip - 1)


def threshold_spl(l_ref: float, l_lis: float) -> float:
    """Tone-pip SPL at the audibility threshold: reference minus margin."""
    return l_ref - l_lis


def ansi_reference_threshold(frequency: float) -> float:
    try:
        return ANSI_REFERENCE_DB_SPL[float(frequency)]
    except KeyError:
        raise ValueError(f"no reference threshold tabulated at {frequency} Hz") from None


def mean_pips(results) -> float:
    """Mean audible-pip count across the tested frequencies."""
    counts = [r.n_pip for r in results]
    if not counts:
        raise ValueError("no tone-pip results")
    return float(np.mean(counts))


def screen_participants(
    records,
    rule: ScreeningRule | None = None,
    srts: dict[str, float] | None = None,
) -> ScreeningOutcome:
    """Keep records with min <= mean pip count <= max (inclusive) that are
    not SRT outliers; everyone lands in exactly one bucket with a reason."""
    rule = rule or ScreeningRule()
    records = list(records)
    seen = set()
    for r in records:
        if r.participant_id in seen:
            raise ValueError(f"duplicate participant id {r.participant_id!r}")
        seen.add(r.participant_id)

    outlier_ids = set(rule.srt_exclude_ids)
    if rule.mad_outlier_factor is not None:
        values = {}
        for r in records:
            srt = (srts or {}).get(r.participant_id, r.mean_srt_db)
            if srt is not None:
                values[r.participant_id] = srt
        if values:
            arr = np.array(list(values.values()))
            median = np.median(arr)
            mad = np.median(np.abs(arr - median))
            if mad > 0:
                outlier_ids |= {
                    pid
                    for pid, v in values.items()
                    if abs(v - median) > rule.mad_outlier_factor * mad
                }

    kept: list[str] = []
    rejected: dict[str, str] = {}
    for r in sorted(records, key=lambda r: r.participant_id):
        if not r.tonepip_results:
            rejected[r.participant_id] = REJECT_MISSING_TONEPIP
            continue
        nbar = mean_pips(r.tonepip_results)
        if nbar < rule.min_mean_pips:
            rejected[r.participant_id] = REJECT_TOO_FEW
        elif nbar > rule.max_mean_pips:
            rejected[r.participant_id] = REJECT_TOO_MANY
        elif r.participant_id in outlier_ids:
            rejected[r.participant_id] = REJECT_SRT_OUTLIER
        else:
            kept.append(r.participant_id)
    return ScreeningOutcome(kept=tuple(kept), rejected=rejected)
