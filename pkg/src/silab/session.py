"""Session plans, phase state machine, event-sourced persistence, export.

A session walks setup -> tonepip -> practice -> main -> done. Every state
change is an event; replaying a session's event log reconstructs the same
state, and the on-disk form is one JSON document per line.
"""

from __future__ import annotations

import json
import time
import unicodedata
import zlib
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .enhance import EnhancementMethod
from .psycho import normalize_answer, score_answer
from .scene import SNR_GRID_DB
from .tonepip import TONEPIP_FREQUENCIES, TonePipResult

PHASES = ("setup", "tonepip", "practice", "main", "done")


class SessionError(Exception):
    """Base for session-rule violations; `code` is the stable integer the
    HTTP layer exposes."""

    code = 1000


class PhaseError(SessionError):
    code = 1002


class ArityError(SessionError):
    code = 1003


class AnswerValidationError(SessionError):
    code = 1004

    def __init__(self, message, per_field=None):
        super().__init__(message)
        self.per_field = per_field or {}


class DuplicateSubmission(SessionError):
    code = 1005


class OutOfRangeError(SessionError):
    code = 1006


class WrongBlockError(SessionError):
    code = 1007


class InsufficientCorpus(SessionError):
    code = 1010


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusEntry:
    word_id: str
    transcript: str
    familiarity_rank: int
    audio_path: str | None = None


@dataclass(frozen=True)
class Corpus:
    entries: tuple[CorpusEntry, ...]
    answer_charset: str = "kana"  # "kana" or "any"
    min_answer_chars: int = 3
    max_answer_chars: int = 6

    def __post_init__(self):
        ids = [e.word_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate word_ids in corpus")
        object.__setattr__(self, "entries", tuple(self.entries))

    def lowest_rank_pool(self) -> list[CorpusEntry]:
        """All entries of the least-familiar rank (highest rank number)."""
        if not self.entries:
            return []
        rank = max(e.familiarity_rank for e in self.entries)
        return [e for e in self.entries if e.familiarity_rank == rank]

    def transcript_of(self, word_id: str) -> str:
        for e in self.entries:
            if e.word_id == word_id:
                return e.transcript
        raise KeyError(word_id)

    def save(self, path) -> None:
        doc = {
            "answer_charset": self.answer_charset,
            "min_answer_chars": self.min_answer_chars,
            "max_answer_chars": self.max_answer_chars,
            "entries": [asdict(e) for e in self.entries],
        }
        Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=2))

    @staticmethod
    def load(path) -> "Corpus":
        doc = json.loads(Path(path).read_text())
        return Corpus(
            entries=tuple(CorpusEntry(**e) for e in doc["entries"]),
            answer_charset=doc.get("answer_charset", "kana"),
            min_answer_chars=doc.get("min_answer_chars", 3),
            max_answer_chars=doc.get("max_answer_chars", 6),
        )

    @staticmethod
    def synthetic(n_words: int = 440, seed: int = 0) -> "Corpus":
        """ASCII token corpus for desk-scale runs; 4-letter pseudo-words."""
        rng = np.random.default_rng(seed)
        letters = "abcdefghijklmnopqrstuvwxyz"
        seen = set()
        entries = []
        while len(entries) < n_words:
            token = "".join(rng.choice(list(letters), size=4))
            if token in seen:
                continue
            seen.add(token)
            # first 10 words get rank 3 (practice pool), the rest rank 4
            rank = 3 if len(entries) < 10 else 4
            entries.append(CorpusEntry(f"w{len(entries):04d}", token, rank))
        return Corpus(tuple(entries), answer_charset="any", min_answer_chars=3, max_answer_chars=6)


_KANA_OK = set("ー゙゚")  # long-vowel mark, combining marks


def _is_kana(ch: str) -> bool:
    code = ord(ch)
    return 0x3041 <= code <= 0x309F or 0x30A1 <= code <= 0x30FA or ch in _KANA_OK


def validate_answer(corpus: Corpus, text: str) -> list[str]:
    """Per-answer problems; empty list means valid."""
    norm = unicodedata.normalize("NFKC", text).strip()
    problems = []
    if not norm:
        return ["empty answer"]
    if corpus.answer_charset == "kana" and not all(_is_kana(c) for c in norm):
        problems.append("answer must be kana only")
    n = len(norm)
    if not (corpus.min_answer_chars <= n <= corpus.max_answer_chars):
        problems.append(
            f"answer length {n} outside {corpus.min_answer_chars}-{corpus.max_answer_chars} characters"
        )
    return problems


# ---------------------------------------------------------------------------
# Session plan
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlannedStimulus:
    stimulus_id: str
    word_id: str
    method: EnhancementMethod
    snr_db: float
    practice: bool = False


@dataclass(frozen=True)
class SessionPlan:
    participant_id: str
    seed: int
    practice_blocks: tuple[tuple[PlannedStimulus, ...], ...]
    blocks: tuple[tuple[PlannedStimulus, ...], ...]
    task_split: int  # first task covers blocks [0, task_split)

    @property
    def n_stimuli(self) -> int:
        return sum(len(b) for b in self.blocks)

    def stimulus(self, stimulus_id: str) -> PlannedStimulus:
        for block in list(self.practice_blocks) + list(self.blocks):
            for s in block:
                if s.stimulus_id == stimulus_id:
                    return s
        raise KeyError(stimulus_id)

    def to_doc(self) -> dict:
        def enc(block):
            return [
                {
                    "stimulus_id": s.stimulus_id,
                    "word_id": s.word_id,
                    "method": s.method.value,
                    "snr_db": s.snr_db,
                    "practice": s.practice,
                }
                for s in block
            ]

        return {
            "participant_id": self.participant_id,
            "seed": self.seed,
            "practice_blocks": [enc(b) for b in self.practice_blocks],
            "blocks": [enc(b) for b in self.blocks],
            "task_split": self.task_split,
        }

    @staticmethod
    def from_doc(doc: dict) -> "SessionPlan":
        def dec(block):
            return tuple(
                PlannedStimulus(
                    s["stimulus_id"],
                    s["word_id"],
                    EnhancementMethod(s["method"]),
                    s["snr_db"],
                    s["practice"],
                )
                for s in block
            )

        return SessionPlan(
            participant_id=doc["participant_id"],
            seed=doc["seed"],
            practice_blocks=tuple(dec(b) for b in doc["practice_blocks"]),
            blocks=tuple(dec(b) for b in doc["blocks"]),
            task_split=doc["task_split"],
        )


def _plan_rng(participant_id: str, seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(participant_id.encode())])


def create_session(
    corpus: Corpus,
    participant_id: str,
    seed: int,
    words_per_cell: int = 20,
    block_size: int = 10,
    practice_size: int = 10,
    snr_grid=SNR_GRID_DB,
) -> SessionPlan:
    """Seeded balanced plan: every (method, SNR) cell gets words_per_cell
    words from the least-familiar pool, no word repeats, blocks of
    block_size in shuffled presentation order, split into two tasks."""
    methods = list(EnhancementMethod)
    cells = [(m, float(s)) for m in methods for s in snr_grid]
    total = words_per_cell * len(cells)
    if total % block_size != 0:
        raise ValueError("block_size must divide the stimulus count")

    pool = corpus.lowest_rank_pool()
    if len(pool) < total:
        raise InsufficientCorpus(
            f"need {total} least-familiar words, corpus has {len(pool)}"
        )
    rng = _plan_rng(participant_id, seed)
    order = rng.permutation(len(pool))
    chosen = [pool[i] for i in order[:total]]

    stimuli = []
    for i, entry in enumerate(chosen):
        method, snr = cells[i // words_per_cell]
        stimuli.append((entry.word_id, method, snr))
    rng.shuffle(stimuli)
    planned = tuple(
        PlannedStimulus(f"{participant_id}:{k:03d}", w, m, s) for k, (w, m, s) in enumerate(stimuli)
    )
    blocks = tuple(planned[i : i + block_size] for i in range(0, total, block_size))

    used = {s.word_id for s in planned}
    spare = [e for e in corpus.entries if e.word_id not in used]
    if len(spare) < practice_size:
        raise InsufficientCorpus(
            f"need {practice_size} practice words disjoint from the main set"
        )
    practice_pick = [spare[i] for i in rng.permutation(len(spare))[:practice_size]]
    practice = tuple(
        PlannedStimulus(
            f"{participant_id}:p{k:02d}",
            e.word_id,
            methods[k % len(methods)],
            float(snr_grid[k % len(snr_grid)]),
            practice=True,
        )
        for k, e in enumerate(practice_pick)
    )
    practice_blocks = tuple(
        practice[i : i + block_size] for i in range(0, len(practice), block_size)
    )
    return SessionPlan(
        participant_id=participant_id,
        seed=seed,
        practice_blocks=practice_blocks,
        blocks=blocks,
        task_split=len(blocks) // 2,
    )


# ---------------------------------------------------------------------------
# Session state (event sourced)
# ---------------------------------------------------------------------------


@dataclass
class StoredAnswer:
    stimulus_id: str
    response: str
    block_index: int
    practice: bool
    timestamp: float


class SessionState:
    """Single-writer session state. Mutate only through the submit/advance
    functions below; every mutation appends to `events`."""

    def __init__(self, plan: SessionPlan):
        self.plan = plan
        self.phase = "setup"
        self.volume_setting: str | None = None
        self.tonepip: dict[float, TonePipResult] = {}
        self.answers: dict[str, StoredAnswer] = {}
        self.accepted_blocks: set[int] = set()
        self.accepted_practice: set[int] = set()
        self.block_served = 0  # stimuli served from the current block
        self.events: list[dict] = []

    # -- derived ------------------------------------------------------------

    @property
    def participant_id(self) -> str:
        return self.plan.participant_id

    def current_blocks(self) -> tuple[tuple[PlannedStimulus, ...], ...]:
        return self.plan.practice_blocks if self.phase == "practice" else self.plan.blocks

    def current_block_index(self) -> int:
        accepted = self.accepted_practice if self.phase == "practice" else self.accepted_blocks
        return len(accepted)

    @property
    def cursor(self) -> int:
        """Committed main-phase stimulus count."""
        return len(self.accepted_blocks) * (len(self.plan.blocks[0]) if self.plan.blocks else 0)

    def is_complete(self) -> bool:
        return self.phase == "done"

    # -- event machinery ------------------------------------------------------

    def _append(self, event: dict) -> dict:
        event = {"t": event.pop("t", time.time()), **event}
        self.events.append(event)
        return event

    @staticmethod
    def replay(events: list[dict]) -> "SessionState":
        if not events or events[0]["type"] != "created":
            raise ValueError("event log must start with a created event")
        state = SessionState(SessionPlan.from_doc(events[0]["plan"]))
        state.events.append(events[0])
        for ev in events[1:]:
            state._apply(ev)
            state.events.append(ev)
        return state

    def _apply(self, ev: dict) -> None:
        kind = ev["type"]
        if kind == "volume_set":
            self.volume_setting = ev["value"]
        elif kind == "phase_advanced":
            self.phase = ev["to"]
        elif kind == "tonepip_submitted":
            freq = float(ev["frequency"])
            self.tonepip[freq] = TonePipResult(freq, int(ev["n_pip"]))
        elif kind == "stimulus_served":
            self.block_served += 1
        elif kind == "block_answers":
            idx = ev["block_index"]
            practice = ev["practice"]
            blocks = self.plan.practice_blocks if practice else self.plan.blocks
            for stim, resp in zip(blocks[idx], ev["answers"]):
                self.answers[stim.stimulus_id] = StoredAnswer(
                    stim.stimulus_id, resp, idx, practice, ev["t"]
                )
            (self.accepted_practice if practice else self.accepted_blocks).add(idx)
            self.block_served = 0
        else:
            raise ValueError(f"unknown event type {kind!r}")


def new_session_state(plan: SessionPlan) -> SessionState:
    state = SessionState(plan)
    state._append({"type": "created", "plan": plan.to_doc()})
    return state


def record_volume(state: SessionState, value: str) -> None:
    if state.phase != "setup":
        raise PhaseError(f"volume can only be set during setup, phase is {state.phase}")
    ev = state._append({"type": "volume_set", "value": str(value)})
    state._apply(ev)


def advance_phase(state: SessionState) -> str:
    """Move to the next phase after its prerequisites are met."""
    i = PHASES.index(state.phase)
    if state.phase == "done":
        raise PhaseError("session already done")
    nxt = PHASES[i + 1]
    if state.phase == "setup" and state.volume_setting is None:
        raise PhaseError("record a volume setting before leaving setup")
    if state.phase == "tonepip":
        missing = [f for f in TONEPIP_FREQUENCIES if f not in state.tonepip]
        if missing:
            raise PhaseError(f"tone-pip results missing for {missing}")
    if state.phase == "practice" and len(state.accepted_practice) < len(
        state.plan.practice_blocks
    ):
        raise PhaseError("practice blocks not finished")
    if state.phase == "main" and len(state.accepted_blocks) < len(state.plan.blocks):
        raise PhaseError("main blocks not finished")
    ev = state._append({"type": "phase_advanced", "to": nxt})
    state._apply(ev)
    return nxt


def submit_tonepip(state: SessionState, frequency: float, n_pip: int) -> TonePipResult:
    if state.phase != "tonepip":
        raise PhaseError(f"tone-pip submissions only during tonepip phase, not {state.phase}")
    frequency = float(frequency)
    if frequency not in TONEPIP_FREQUENCIES:
        raise OutOfRangeError(f"frequency {frequency} not in the screening set")
    if not (0 <= int(n_pip) <= 15):
        raise OutOfRangeError(f"n_pip must be in [0, 15], got {n_pip}")
    if frequency in state.tonepip:
        raise DuplicateSubmission(f"tone-pip result for {frequency} Hz already stored")
    ev = state._append({"type": "tonepip_submitted", "frequency": frequency, "n_pip": int(n_pip)})
    state._apply(ev)
    return state.tonepip[frequency]


def next_stimulus(state: SessionState) -> PlannedStimulus:
    """Serve the next stimulus of the current block. The committed cursor
    advances only when the block's answers are accepted."""
    if state.phase not in ("practice", "main"):
        raise PhaseError(f"no stimuli to serve in phase {state.phase}")
    blocks = state.current_blocks()
    idx = state.current_block_index()
    if idx >= len(blocks):
        raise PhaseError("all blocks in this phase are complete")
    block = blocks[idx]
    if state.block_served >= len(block):
        raise PhaseError("block fully served; awaiting answers")
    stim = block[state.block_served]
    ev = state._append({"type": "stimulus_served", "stimulus_id": stim.stimulus_id})
    state._apply(ev)
    return stim


def submit_block_answers(state: SessionState, block_index: int, answers, corpus: Corpus) -> dict:
    """Validate and commit a served block. Rejection stores nothing."""
    if state.phase not in ("practice", "main"):
        raise PhaseError(f"no answers accepted in phase {state.phase}")
    practice = state.phase == "practice"
    blocks = state.current_blocks()
    accepted = state.accepted_practice if practice else state.accepted_blocks
    if block_index in accepted:
        raise WrongBlockError(f"block {block_index} already accepted")
    if block_index != state.current_block_index():
        raise WrongBlockError(
            f"expected block {state.current_block_index()}, got {block_index}"
        )
    block = blocks[block_index]
    answers = list(answers)
    if len(answers) != len(block):
        raise ArityError(f"expected {len(block)} answers, got {len(answers)}")
    if state.block_served < len(block):
        raise PhaseError("block not fully served yet")

    problems = {}
    for i, text in enumerate(answers):
        issues = validate_answer(corpus, text)
        if issues:
            problems[i] = issues
    if problems:
        raise AnswerValidationError("invalid answers", per_field=problems)

    ev = state._append(
        {
            "type": "block_answers",
            "block_index": block_index,
            "practice": practice,
            "answers": [str(a) for a in answers],
        }
    )
    state._apply(ev)

    # finishing the last main block completes the session
    if state.phase == "main" and len(state.accepted_blocks) == len(state.plan.blocks):
        advance_phase(state)
    return {"accepted": True, "block_index": block_index}


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


class SessionStore:
    """One NDJSON event log per session under <root>/sessions/."""

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)

    def _path(self, session_id: str) -> Path:
        safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in session_id)
        return self.root / "sessions" / f"{safe}.ndjson"

    def exists(self, session_id: str) -> bool:
        return self._path(session_id).exists()

    def session_ids(self) -> list[str]:
        return sorted(p.stem for p in (self.root / "sessions").glob("*.ndjson"))

    def append(self, session_id: str, events: list[dict], state: "SessionState | None" = None) -> None:
        with open(self._path(session_id), "a") as fh:
            for ev in events:
                fh.write(json.dumps(ev, ensure_ascii=False) + "\n")
        if state is not None:
            self._write_snapshot(state)

    def save_all(self, state: SessionState) -> None:
        path = self._path(state.participant_id)
        with open(path, "w") as fh:
            for ev in state.events:
                fh.write(json.dumps(ev, ensure_ascii=False) + "\n")
        self._write_snapshot(state)

    def _write_snapshot(self, state: SessionState) -> None:
        """Derived view for quick inspection; the event log stays the truth."""
        doc = {
            "participant_id": state.participant_id,
            "phase": state.phase,
            "volume_setting": state.volume_setting,
            "tonepip": {str(f): r.n_pip for f, r in sorted(state.tonepip.items())},
            "accepted_blocks": len(state.accepted_blocks),
            "accepted_practice": len(state.accepted_practice),
            "answers_stored": len(state.answers),
            "n_events": len(state.events),
        }
        path = self._path(state.participant_id).with_suffix(".snapshot.json")
        path.write_text(json.dumps(doc, ensure_ascii=False, indent=2))

    def load(self, session_id: str) -> SessionState:
        path = self._path(session_id)
        events = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        return SessionState.replay(events)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnswerRow:
    participant_id: str
    stimulus_id: str
    block_index: int
    word_id: str
    method: EnhancementMethod
    snr_db: float
    response: str
    truth: str
    correct: bool
    practice: bool


@dataclass(frozen=True)
class TonePipRow:
    participant_id: str
    frequency: float
    n_pip: int
    listening_level_db: float | None


@dataclass(frozen=True)
class ExportBundle:
    answer_rows: tuple[AnswerRow, ...]
    tonepip_rows: tuple[TonePipRow, ...]

    def write_csv(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        answers = out / "answers.csv"
        with open(answers, "w") as fh:
            fh.write(
                "participant_id,stimulus_id,block_index,word_id,method,snr_db,"
                "response,truth,correct,practice\n"
            )
            for r in self.answer_rows:
                fh.write(
                    f"{r.participant_id},{r.stimulus_id},{r.block_index},{r.word_id},"
                    f"{r.method.value},{r.snr_db},{r.response},{r.truth},"
                    f"{int(r.correct)},{int(r.practice)}\n"
                )
        tonepips = out / "tonepips.csv"
        with open(tonepips, "w") as fh:
            fh.write("participant_id,frequency,n_pip,listening_level_db\n")
            for r in self.tonepip_rows:
                lev = "" if r.listening_level_db is None else r.listening_level_db
                fh.write(f"{r.participant_id},{r.frequency},{r.n_pip},{lev}\n")
        return {"answers": answers, "tonepips": tonepips}


def export_results(
    sessions,
    corpus: Corpus,
    include_partial: bool = False,
    include_practice: bool = False,
) -> ExportBundle:
    """Analysis-ready rows from finished sessions; answers are scored here."""
    answer_rows = []
    tonepip_rows = []
    for state in sessions:
        if not state.is_complete() and not include_partial:
            raise PhaseError(
                f"session {state.participant_id} not done; pass include_partial to export anyway"
            )
        for stim_id, stored in sorted(state.answers.items()):
            stim = state.plan.stimulus(stim_id)
            if stim.practice and not include_practice:
                continue
            truth = corpus.transcript_of(stim.word_id)
            answer_rows.append(
                AnswerRow(
                    participant_id=state.participant_id,
                    stimulus_id=stim_id,
                    block_index=stored.block_index,
                    word_id=stim.word_id,
                    method=stim.method,
                    snr_db=stim.snr_db,
                    response=normalize_answer(stored.response),
                    truth=normalize_answer(truth),
                    correct=score_answer(stored.response, truth),
                    practice=stim.practice,
                )
            )
        for freq in sorted(state.tonepip):
            r = state.tonepip[freq]
            tonepip_rows.append(
                TonePipRow(state.participant_id, r.frequency, r.n_pip, r.listening_level_db)
            )
    return ExportBundle(tuple(answer_rows), tuple(tonepip_rows))
