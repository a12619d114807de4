"""Tests for silab.session: plans, phase machine, events, persistence, export."""

import pytest

from silab.session import (
    AnswerValidationError,
    ArityError,
    Corpus,
    CorpusEntry,
    DuplicateSubmission,
    InsufficientCorpus,
    OutOfRangeError,
    PhaseError,
    SessionState,
    SessionStore,
    WrongBlockError,
    advance_phase,
    create_session,
    export_results,
    new_session_state,
    next_stimulus,
    record_volume,
    submit_block_answers,
    submit_tonepip,
    validate_answer,
)
from silab.tonepip import TONEPIP_FREQUENCIES


@pytest.fixture(scope="module")
def corpus():
    return Corpus.synthetic(440, seed=1)


def fresh_state(corpus, pid="p01", seed=3):
    return new_session_state(create_session(corpus, pid, seed))


def drive_to_phase(state, corpus, phase):
    """Walk the protocol forward to the requested phase."""
    if state.phase == "setup" and phase != "setup":
        record_volume(state, "55%")
        advance_phase(state)
    if state.phase == "tonepip" and phase not in ("setup", "tonepip"):
        for f in TONEPIP_FREQUENCIES:
            submit_tonepip(state, f, 11)
        advance_phase(state)
    if state.phase == "practice" and phase in ("main", "done"):
        complete_blocks(state, corpus)
        advance_phase(state)
    if state.phase == "main" and phase == "done":
        complete_blocks(state, corpus)
    return state


def complete_blocks(state, corpus, n_blocks=None):
    blocks = state.current_blocks()
    limit = len(blocks) if n_blocks is None else n_blocks
    start = state.current_block_index()
    for b in range(start, min(start + limit, len(blocks))):
        answers = []
        for _ in blocks[b]:
            stim = next_stimulus(state)
            answers.append(corpus.transcript_of(stim.word_id))
        submit_block_answers(state, b, answers, corpus)


class TestCorpus:
    def test_synthetic_shape(self, corpus):
        assert len(corpus.entries) == 440
        assert len(corpus.lowest_rank_pool()) == 430

    def test_duplicate_ids_rejected(self):
        e = CorpusEntry("w1", "abcd", 4)
        with pytest.raises(ValueError, match="duplicate"):
            Corpus((e, e))

    def test_save_load_round_trip(self, corpus, tmp_path):
        path = tmp_path / "corpus.json"
        corpus.save(path)
        assert Corpus.load(path) == corpus

    def test_kana_validation(self):
        kana = Corpus((CorpusEntry("w1", "たまご", 4),), answer_charset="kana")
        assert validate_answer(kana, "たまご") == []
        assert validate_answer(kana, "カナダ") == []  # katakana allowed
        assert any("kana" in p for p in validate_answer(kana, "abc"))
        assert validate_answer(kana, "") == ["empty answer"]
        assert any("length" in p for p in validate_answer(kana, "あ"))
        assert any("length" in p for p in validate_answer(kana, "あ" * 9))

    def test_ascii_validation(self, corpus):
        assert validate_answer(corpus, "abcd") == []
        assert any("length" in p for p in validate_answer(corpus, "ab"))


class TestCreateSession:
    def test_balanced_plan(self, corpus):
        plan = create_session(corpus, "alice", 7)
        assert plan.n_stimuli == 400
        assert len(plan.blocks) == 40
        assert all(len(b) == 10 for b in plan.blocks)
        counts = {}
        words = set()
        for block in plan.blocks:
            for s in block:
                counts[(s.method, s.snr_db)] = counts.get((s.method, s.snr_db), 0) + 1
                assert s.word_id not in words
                words.add(s.word_id)
        assert len(counts) == 20
        assert all(v == 20 for v in counts.values())

    def test_deterministic(self, corpus):
        assert create_session(corpus, "alice", 7) == create_session(corpus, "alice", 7)

    def test_participants_differ(self, corpus):
        a = create_session(corpus, "alice", 7)
        b = create_session(corpus, "bob", 8)
        assign_a = {s.word_id: (s.method, s.snr_db) for blk in a.blocks for s in blk}
        assign_b = {s.word_id: (s.method, s.snr_db) for blk in b.blocks for s in blk}
        assert assign_a != assign_b

    def test_practice_disjoint(self, corpus):
        plan = create_session(corpus, "alice", 7)
        main_words = {s.word_id for blk in plan.blocks for s in blk}
        practice_words = {s.word_id for blk in plan.practice_blocks for s in blk}
        assert not main_words & practice_words
        assert len(practice_words) == 10

    def test_task_split_half(self, corpus):
        assert create_session(corpus, "alice", 7).task_split == 20

    def test_insufficient_corpus(self):
        small = Corpus.synthetic(200, seed=0)
        with pytest.raises(InsufficientCorpus):
            create_session(small, "alice", 7)

    def test_balance_over_seeds(self, corpus):
        for seed in range(20):
            plan = create_session(corpus, f"p{seed}", seed)
            counts = {}
            for blk in plan.blocks:
                for s in blk:
                    counts[(s.method, s.snr_db)] = counts.get((s.method, s.snr_db), 0) + 1
            assert all(v == 20 for v in counts.values())


class TestPhaseMachine:
    def test_initial_phase_setup(self, corpus):
        assert fresh_state(corpus).phase == "setup"

    def test_cannot_skip_volume(self, corpus):
        state = fresh_state(corpus)
        with pytest.raises(PhaseError, match="volume"):
            advance_phase(state)

    def test_volume_then_tonepip(self, corpus):
        state = fresh_state(corpus)
        record_volume(state, "70%")
        assert advance_phase(state) == "tonepip"

    def test_tonepip_requires_all_frequencies(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "tonepip")
        submit_tonepip(state, 500.0, 11)
        with pytest.raises(PhaseError, match="missing"):
            advance_phase(state)

    def test_full_walkthrough_reaches_done(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "done")
        assert state.phase == "done"
        assert len(state.answers) == 410  # 400 main + 10 practice

    def test_no_stimuli_in_setup(self, corpus):
        with pytest.raises(PhaseError):
            next_stimulus(fresh_state(corpus))

    def test_done_serves_nothing(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "done")
        with pytest.raises(PhaseError):
            next_stimulus(state)
        with pytest.raises(PhaseError, match="done"):
            advance_phase(state)


class TestTonePipSubmission:
    def test_stores_listening_level(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "tonepip")
        result = submit_tonepip(state, 1000.0, 13)
        assert result.listening_level_db == 60.0

    def test_rejects_out_of_range_count(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "tonepip")
        with pytest.raises(OutOfRangeError):
            submit_tonepip(state, 1000.0, 16)

    def test_rejects_unknown_frequency(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "tonepip")
        with pytest.raises(OutOfRangeError):
            submit_tonepip(state, 3000.0, 10)

    def test_rejects_duplicate_frequency(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "tonepip")
        submit_tonepip(state, 1000.0, 13)
        with pytest.raises(DuplicateSubmission):
            submit_tonepip(state, 1000.0, 12)

    def test_rejects_wrong_phase(self, corpus):
        with pytest.raises(PhaseError):
            submit_tonepip(fresh_state(corpus), 1000.0, 10)


class TestServingAndAnswers:
    def test_fresh_main_starts_at_zero(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "main")
        stim = next_stimulus(state)
        assert stim.stimulus_id.endswith(":000")
        assert state.cursor == 0

    def test_cursor_advances_per_accepted_block(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "main")
        complete_blocks(state, corpus, n_blocks=1)
        assert state.cursor == 10
        stim = next_stimulus(state)
        assert stim.stimulus_id.endswith(":010")

    def test_block_must_be_fully_served(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "main")
        next_stimulus(state)
        with pytest.raises(PhaseError, match="not fully served"):
            submit_block_answers(state, 0, ["abcd"] * 10, corpus)

    def test_serving_past_block_requires_answers(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "main")
        for _ in range(10):
            next_stimulus(state)
        with pytest.raises(PhaseError, match="awaiting answers"):
            next_stimulus(state)

    def test_arity_enforced(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "main")
        for _ in range(10):
            next_stimulus(state)
        with pytest.raises(ArityError):
            submit_block_answers(state, 0, ["abcd"] * 9, corpus)

    def test_invalid_answer_rejects_block_without_storing(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "main")
        for _ in range(10):
            next_stimulus(state)
        n_before = len(state.answers)  # practice answers are already stored
        answers = ["abcd"] * 10
        answers[3] = ""
        with pytest.raises(AnswerValidationError) as exc_info:
            submit_block_answers(state, 0, answers, corpus)
        assert 3 in exc_info.value.per_field
        assert len(state.answers) == n_before
        # corrected resubmission accepted
        answers[3] = "abcd"
        submit_block_answers(state, 0, answers, corpus)
        assert len(state.answers) == n_before + 10

    def test_resubmission_rejected(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "main")
        complete_blocks(state, corpus, n_blocks=1)
        with pytest.raises(WrongBlockError, match="already accepted"):
            submit_block_answers(state, 0, ["abcd"] * 10, corpus)

    def test_wrong_block_index_rejected(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "main")
        for _ in range(10):
            next_stimulus(state)
        with pytest.raises(WrongBlockError):
            submit_block_answers(state, 5, ["abcd"] * 10, corpus)

    def test_answers_immutable_after_acceptance(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "main")
        complete_blocks(state, corpus, n_blocks=1)
        stored_before = {k: v.response for k, v in state.answers.items()}
        with pytest.raises(WrongBlockError):
            submit_block_answers(state, 0, ["zzzz"] * 10, corpus)
        assert {k: v.response for k, v in state.answers.items()} == stored_before


class TestEventSourcing:
    def test_replay_reconstructs_state(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "main")
        complete_blocks(state, corpus, n_blocks=3)
        replayed = SessionState.replay(state.events)
        assert replayed.phase == state.phase
        assert replayed.plan == state.plan
        assert replayed.tonepip == state.tonepip
        assert replayed.accepted_blocks == state.accepted_blocks
        assert replayed.block_served == state.block_served
        assert {k: v.response for k, v in replayed.answers.items()} == {
            k: v.response for k, v in state.answers.items()
        }

    def test_replay_requires_created_first(self):
        with pytest.raises(ValueError, match="created"):
            SessionState.replay([{"type": "volume_set", "value": "1", "t": 0.0}])

    def test_store_round_trip(self, corpus, tmp_path):
        state = drive_to_phase(fresh_state(corpus, pid="stored"), corpus, "done")
        store = SessionStore(tmp_path)
        store.save_all(state)
        assert store.exists("stored")
        loaded = store.load("stored")
        assert loaded.phase == "done"
        assert len(loaded.answers) == 410

    def test_incremental_append_matches_full_save(self, corpus, tmp_path):
        state = fresh_state(corpus, pid="inc")
        store = SessionStore(tmp_path)
        n = 0
        store.append("inc", state.events[n:])
        n = len(state.events)
        record_volume(state, "40%")
        advance_phase(state)
        store.append("inc", state.events[n:])
        loaded = store.load("inc")
        assert loaded.phase == "tonepip"
        assert loaded.volume_setting == "40%"

    def test_snapshot_written_alongside_log(self, corpus, tmp_path):
        import json

        state = drive_to_phase(fresh_state(corpus, pid="snap"), corpus, "done")
        store = SessionStore(tmp_path)
        store.save_all(state)
        snap = json.loads((tmp_path / "sessions" / "snap.snapshot.json").read_text())
        assert snap["phase"] == "done"
        assert snap["answers_stored"] == 410
        assert snap["n_events"] == len(state.events)
        # snapshots are derived views, not sessions
        assert store.session_ids() == ["snap"]


class TestExport:
    def test_finished_session_row_counts(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "done")
        bundle = export_results([state], corpus)
        assert len(bundle.answer_rows) == 400  # practice excluded by default
        assert len(bundle.tonepip_rows) == 4

    def test_practice_rows_flagged_when_included(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "done")
        bundle = export_results([state], corpus, include_practice=True)
        assert len(bundle.answer_rows) == 410
        assert sum(r.practice for r in bundle.answer_rows) == 10

    def test_unfinished_session_rejected(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "main")
        with pytest.raises(PhaseError, match="not done"):
            export_results([state], corpus)
        bundle = export_results([state], corpus, include_partial=True)
        assert len(bundle.answer_rows) == 0  # no main blocks answered yet

    def test_empty_session_set(self, corpus):
        bundle = export_results([], corpus)
        assert bundle.answer_rows == () and bundle.tonepip_rows == ()

    def test_csv_files_written(self, corpus, tmp_path):
        state = drive_to_phase(fresh_state(corpus), corpus, "done")
        bundle = export_results([state], corpus)
        paths = bundle.write_csv(tmp_path)
        lines = paths["answers"].read_text().splitlines()
        assert len(lines) == 401  # header + 400
        assert lines[0].startswith("participant_id,")

    def test_correctness_scored_against_truth(self, corpus):
        state = drive_to_phase(fresh_state(corpus), corpus, "done")
        bundle = export_results([state], corpus)
        assert all(r.correct for r in bundle.answer_rows)  # we answered with truth
