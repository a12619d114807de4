"""Simulated listeners running full sessions against the session machinery.

A cohort member carries a :class:`ListenerProfile`; the runner walks the
whole session protocol (volume, four tone-pip reports, practice, forty
main blocks) exactly as a human client would, drawing word correctness
from the profile's psychometric model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .enhance import EnhancementMethod
from .psycho import ListenerProfile, simulate_tonepip_response, simulate_word_response
from .session import (
    Corpus,
    SessionState,
    advance_phase,
    create_session,
    new_session_state,
    next_stimulus,
    record_volume,
    submit_block_answers,
    submit_tonepip,
)
from .tonepip import TONEPIP_FREQUENCIES, TonePipSequenceSpec

# true condition means for the default cohort; mask enhancement best,
# the two beamformers close together, unprocessed worst
DEFAULT_TRUE_MU = {
    EnhancementMethod.MASK1CH_IRM: -10.5,
    EnhancementMethod.MVDR2CH_IRM: -7.5,
    EnhancementMethod.MVDR2CH_EST: -6.9,
    EnhancementMethod.UNPROCESSED: -3.5,
}
DEFAULT_TRUE_SIGMA = 2.0
DEFAULT_PRESENTATION_DB = 64.0


@dataclass(frozen=True)
class CohortMember:
    participant_id: str
    profile: ListenerProfile
    volume: str = "50%"


def _threshold_for_pips(n_pip: int, presentation_db: float = DEFAULT_PRESENTATION_DB) -> float:
    """Threshold placed mid-bin so a descending staircase from
    presentation_db yields exactly n_pip audible pips."""
    return presentation_db - 5.0 * n_pip + 2.5


def default_cohort(
    n_kept: int = 25,
    n_low: int = 8,
    n_high: int = 6,
    seed: int = 0,
    true_mu: dict | None = None,
    true_sigma: float = DEFAULT_TRUE_SIGMA,
    mu_jitter_db: float = 0.5,
) -> list[CohortMember]:
    """Cohort shaped like a remote experiment: n_kept members with mean pip
    counts inside [9, 13], the rest below or above."""
    rng = np.random.default_rng(seed)
    true_mu = {EnhancementMethod(k): float(v) for k, v in (true_mu or DEFAULT_TRUE_MU).items()}

    members = []

    def add(pid, pip_counts, srt_penalty_db=0.0):
        thresholds = {
            f: _threshold_for_pips(n) for f, n in zip(TONEPIP_FREQUENCIES, pip_counts)
        }
        jitter = float(rng.normal(0.0, mu_jitter_db))
        mu = {m: v + jitter + srt_penalty_db for m, v in true_mu.items()}
        members.append(
            CohortMember(
                participant_id=pid,
                profile=ListenerProfile(
                    thresholds_db=thresholds,
                    true_mu=mu,
                    true_sigma=true_sigma,
                    seed=int(rng.integers(2**31)),
                ),
            )
        )

    for i in range(n_kept):
        base = 9 + i % 5
        add(f"sim_keep_{i:02d}", [min(13, max(9, base + d)) for d in (0, 1, -1, 0)])
    # out-of-range listeners tend to poorer, more variable intelligibility
    # (too-quiet playback or untrustworthy reports); kept members are built
    # first so their rng draws are unaffected
    for i in range(n_low):
        base = 4 + i % 4
        add(f"sim_low_{i:02d}", [base, base + 1, base, base + 1],
            srt_penalty_db=float(rng.uniform(1.0, 5.0)))
    for i in range(n_high):
        base = 14 + i % 2
        add(f"sim_high_{i:02d}", [base, min(15, base + 1), base, base],
            srt_penalty_db=float(rng.uniform(0.0, 4.0)))
    return members


def wrong_answer(truth: str, rng: np.random.Generator, charset: str) -> str:
    """A plausible but incorrect answer of the same length."""
    if charset == "kana":
        alphabet = list("あいうえおかきくけこさしすせそたちつてとなにぬねの")
    else:
        alphabet = list("abcdefghijklmnopqrstuvwxyz")
    chars = list(truth)
    pos = int(rng.integers(len(chars)))
    choices = [c for c in alphabet if c != chars[pos]]
    chars[pos] = choices[int(rng.integers(len(choices)))]
    return "".join(chars)


def run_simulated_session(
    corpus: Corpus,
    member: CohortMember,
    plan_seed: int,
    presentation_level_db: float = DEFAULT_PRESENTATION_DB,
) -> SessionState:
    """Drive one listener through the complete protocol."""
    plan = create_session(corpus, member.participant_id, plan_seed)
    state = new_session_state(plan)
    rng = np.random.default_rng(member.profile.seed)

    record_volume(state, member.volume)
    advance_phase(state)  # -> tonepip

    for freq in TONEPIP_FREQUENCIES:
        spec = TonePipSequenceSpec(frequency=freq)
        n = simulate_tonepip_response(member.profile, spec, presentation_level_db)
        submit_tonepip(state, freq, n)
    advance_phase(state)  # -> practice

    for phase_blocks in (plan.practice_blocks, plan.blocks):
        for block_index, block in enumerate(phase_blocks):
            answers = []
            for _ in block:
                stim = next_stimulus(state)
                truth = corpus.transcript_of(stim.word_id)
                heard = simulate_word_response(
                    member.profile, stim.method, stim.snr_db, rng
                )
                answers.append(truth if heard else wrong_answer(truth, rng, corpus.answer_charset))
            submit_block_answers(state, block_index, answers, corpus)
        if state.phase == "practice":
            advance_phase(state)  # -> main
    return state


def run_cohort(
    corpus: Corpus, members, plan_seed: int = 0
) -> list[SessionState]:
    return [run_simulated_session(corpus, m, plan_seed) for m in members]


# ---------------------------------------------------------------------------
# Cohort spec file (JSON) for the CLI
# ---------------------------------------------------------------------------


def save_cohort(path, members) -> None:
    doc = {
        "members": [
            {
                "participant_id": m.participant_id,
                "volume": m.volume,
                "thresholds_db": {str(k): v for k, v in m.profile.thresholds_db.items()},
                "true_mu": {k.value: v for k, v in m.profile.true_mu.items()},
                "true_sigma": m.profile.true_sigma,
                "seed": m.profile.seed,
            }
            for m in members
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def load_cohort(path) -> list[CohortMember]:
    doc = json.loads(Path(path).read_text())
    members = []
    try:
        for m in doc["members"]:
            members.append(
                CohortMember(
                    participant_id=m["participant_id"],
                    volume=m.get("volume", "50%"),
                    profile=ListenerProfile(
                        thresholds_db={float(k): float(v) for k, v in m["thresholds_db"].items()},
                        true_mu={
                            EnhancementMethod(k): float(v) for k, v in m["true_mu"].items()
                        },
                        true_sigma=float(m["true_sigma"]),
                        seed=int(m["seed"]),
                    ),
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"bad cohort spec {path}: {exc}") from exc
    return members
