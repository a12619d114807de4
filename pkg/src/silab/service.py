"""HTTP session service for live experiments.

JSON API over the session machinery plus on-demand stimulus audio. Errors
carry stable integer codes (`ERROR_CODES`) so clients can react without
parsing messages. Static frontend files are served from the data
directory's `webroot/` when present.
"""

from __future__ import annotations

import io
import threading
import zlib
from collections import defaultdict
from functools import lru_cache
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import analysis
from .dsp import PLAYBACK_RATE, write_wav, resample
from .enhance import EnhancementMethod, enhance
from .scene import PRESET_POSITIONS, SceneConfig, build_scene, synth_babble, synthetic_word
from .session import (
    Corpus,
    SessionError,
    SessionState,
    SessionStore,
    advance_phase,
    create_session,
    export_results,
    new_session_state,
    next_stimulus,
    record_volume,
    submit_block_answers,
    submit_tonepip,
)
from .tonepip import TONEPIP_FREQUENCIES, TonePipSequenceSpec, gen_tonepip_sequence

ERROR_CODES = {
    "unknown_session": 1001,
    "phase": 1002,
    "arity": 1003,
    "validation": 1004,
    "duplicate": 1005,
    "out_of_range": 1006,
    "wrong_block": 1007,
    "session_exists": 1011,
    "unknown_stimulus": 1012,
    "audio_unavailable": 1013,
    "insufficient_corpus": 1010,
}


class ApiError(Exception):
    def __init__(self, code: int, message: str, status: int = 400, detail=None):
        self.code = code
        self.message = message
        self.status = status
        self.detail = detail


class CreateSessionBody(BaseModel):
    participant_id: str
    seed: int = 0


class VolumeBody(BaseModel):
    value: str


class TonePipBody(BaseModel):
    frequency: float
    n_pip: int


class AnswersBody(BaseModel):
    answers: list[str]


class ExportBody(BaseModel):
    include_partial: bool = False


class StimulusRenderer:
    """Resolves a planned stimulus to 48 kHz WAV bytes.

    Pre-rendered files win when present under <data>/stimuli/; otherwise the
    scene is synthesized on demand from a shared babble buffer and a
    word-id-seeded synthetic word.
    """

    def __init__(self, data_dir: Path, allow_synth: bool = True):
        self.data_dir = Path(data_dir)
        self.allow_synth = allow_synth
        self._babble = None
        self._lock = threading.Lock()

    def _babble_buffer(self):
        with self._lock:
            if self._babble is None:
                self._babble = synth_babble(30.0, 16, seed=101)
            return self._babble

    def _prerendered(self, stim) -> Path | None:
        path = (
            self.data_dir
            / "stimuli"
            / stim.word_id
            / f"{stim.method.value}@{stim.snr_db:+.0f}dB.wav"
        )
        return path if path.exists() else None

    def render(self, stim) -> bytes:
        path = self._prerendered(stim)
        if path is not None:
            return path.read_bytes()
        if not self.allow_synth:
            raise ApiError(
                ERROR_CODES["audio_unavailable"],
                f"no audio for stimulus {stim.stimulus_id}",
                status=404,
            )
        return self._synthesize(stim.word_id, stim.method.value, stim.snr_db)

    @lru_cache(maxsize=128)  # noqa: B019 - renderer is a process-wide singleton
    def _synthesize(self, word_id: str, method: str, snr_db: float) -> bytes:
        word = synthetic_word(zlib.crc32(word_id.encode()))
        cfg = SceneConfig(
            snr_db=snr_db,
            position=PRESET_POSITIONS[5],
            seed=zlib.crc32(f"{word_id}|{snr_db}".encode()),
        )
        obs = build_scene(word, self._babble_buffer(), cfg)
        out = enhance(obs, EnhancementMethod(method))
        return wav_bytes(resample(out, PLAYBACK_RATE))


def wav_bytes(buf) -> bytes:
    bio = io.BytesIO()
    write_wav(bio, buf)
    return bio.getvalue()


class ExperimentService:
    """Session registry with per-session single-writer locking and
    append-on-mutation persistence."""

    def __init__(self, data_dir, corpus: Corpus | None = None, allow_synth: bool = True):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.store = SessionStore(self.data_dir)
        corpus_path = self.data_dir / "corpus.json"
        if corpus is not None:
            self.corpus = corpus
            if not corpus_path.exists():
                corpus.save(corpus_path)
        elif corpus_path.exists():
            self.corpus = Corpus.load(corpus_path)
        else:
            self.corpus = Corpus.synthetic()
            self.corpus.save(corpus_path)
        self.renderer = StimulusRenderer(self.data_dir, allow_synth)
        self._sessions: dict[str, SessionState] = {}
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)

    def state(self, session_id: str) -> SessionState:
        if session_id not in self._sessions:
            if not self.store.exists(session_id):
                raise ApiError(
                    ERROR_CODES["unknown_session"], f"no session {session_id!r}", status=404
                )
            self._sessions[session_id] = self.store.load(session_id)
        return self._sessions[session_id]

    def create(self, participant_id: str, seed: int) -> SessionState:
        with self._locks[participant_id]:
            if self.store.exists(participant_id):
                raise ApiError(
                    ERROR_CODES["session_exists"],
                    f"session {participant_id!r} already exists",
                    status=409,
                )
            plan = create_session(self.corpus, participant_id, seed)
            state = new_session_state(plan)
            self.store.save_all(state)
            self._sessions[participant_id] = state
            return state

    def mutate(self, session_id: str, fn):
        """Apply fn(state) under the session lock, persisting new events."""
        with self._locks[session_id]:
            state = self.state(session_id)
            n_before = len(state.events)
            try:
                result = fn(state)
            except SessionError as exc:
                raise api_error_from(exc) from exc
            if len(state.events) > n_before:
                self.store.append(session_id, state.events[n_before:], state)
            return result


def api_error_from(exc: SessionError) -> ApiError:
    detail = getattr(exc, "per_field", None)
    status = 400
    return ApiError(exc.code, str(exc), status=status, detail=detail)


def session_summary(state: SessionState) -> dict:
    blocks = state.current_blocks() if state.phase in ("practice", "main") else ()
    return {
        "participant_id": state.participant_id,
        "phase": state.phase,
        "volume_setting": state.volume_setting,
        "tonepip_done": sorted(state.tonepip),
        "tonepip_remaining": [f for f in TONEPIP_FREQUENCIES if f not in state.tonepip],
        "block_index": state.current_block_index() if blocks else None,
        "n_blocks": len(blocks) if blocks else None,
        "block_served": state.block_served,
        "block_size": len(blocks[0]) if blocks else None,
        "answers_stored": len(state.answers),
        "done": state.is_complete(),
    }


def create_app(
    data_dir,
    corpus: Corpus | None = None,
    allow_synth: bool = True,
    webroot=None,
) -> FastAPI:
    service = ExperimentService(data_dir, corpus=corpus, allow_synth=allow_synth)
    app = FastAPI(title="silab experiment service")
    app.state.service = service

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        body = {"code": exc.code, "message": exc.message}
        if exc.detail:
            body["detail"] = exc.detail
        return JSONResponse(status_code=exc.status, content=body)

    @app.get("/api/healthz")
    def healthz():
        return {"ok": True}

    @app.get("/api/config")
    def config():
        return {
            "tonepip_frequencies": list(TONEPIP_FREQUENCIES),
            "block_size": 10,
            "answer_charset": service.corpus.answer_charset,
            "min_answer_chars": service.corpus.min_answer_chars,
            "max_answer_chars": service.corpus.max_answer_chars,
        }

    @app.get("/api/sessions")
    def list_sessions():
        return {"sessions": service.store.session_ids()}

    @app.post("/api/sessions", status_code=201)
    def create_session_ep(body: CreateSessionBody):
        state = service.create(body.participant_id, body.seed)
        return session_summary(state)

    @app.get("/api/sessions/{sid}")
    def get_session(sid: str):
        return session_summary(service.state(sid))

    @app.post("/api/sessions/{sid}/volume")
    def set_volume(sid: str, body: VolumeBody):
        service.mutate(sid, lambda st: record_volume(st, body.value))
        return session_summary(service.state(sid))

    @app.post("/api/sessions/{sid}/advance")
    def advance(sid: str):
        service.mutate(sid, advance_phase)
        return session_summary(service.state(sid))

    @app.get("/api/sessions/{sid}/tonepip/{frequency}/audio")
    def tonepip_audio(sid: str, frequency: float):
        state = service.state(sid)
        if frequency not in TONEPIP_FREQUENCIES:
            raise ApiError(
                ERROR_CODES["out_of_range"], f"frequency {frequency} not in screening set"
            )
        if frequency in state.tonepip:
            raise ApiError(
                ERROR_CODES["audio_unavailable"],
                "tone-pip already answered; replay not allowed",
                status=409,
            )
        audio, _ = gen_tonepip_sequence(TonePipSequenceSpec(frequency=frequency))
        return Response(content=wav_bytes(audio), media_type="audio/wav")

    @app.post("/api/sessions/{sid}/tonepip")
    def tonepip_submit(sid: str, body: TonePipBody):
        result = service.mutate(
            sid, lambda st: submit_tonepip(st, body.frequency, body.n_pip)
        )
        return {
            "frequency": result.frequency,
            "n_pip": result.n_pip,
            "listening_level_db": result.listening_level_db,
        }

    @app.post("/api/sessions/{sid}/next-stimulus")
    def next_stimulus_ep(sid: str):
        stim = service.mutate(sid, next_stimulus)
        state = service.state(sid)
        # descriptor never exposes word, method, or SNR
        return {
            "stimulus_id": stim.stimulus_id,
            "block_index": state.current_block_index(),
            "index_in_block": state.block_served - 1,
            "audio_url": f"/api/sessions/{sid}/stimuli/{stim.stimulus_id}/audio",
        }

    @app.get("/api/sessions/{sid}/stimuli/{stimulus_id}/audio")
    def stimulus_audio(sid: str, stimulus_id: str):
        state = service.state(sid)
        served = {
            ev["stimulus_id"] for ev in state.events if ev["type"] == "stimulus_served"
        }
        if stimulus_id not in served:
            raise ApiError(
                ERROR_CODES["unknown_stimulus"],
                f"stimulus {stimulus_id!r} has not been served",
                status=404,
            )
        try:
            stim = state.plan.stimulus(stimulus_id)
        except KeyError:
            raise ApiError(
                ERROR_CODES["unknown_stimulus"], f"unknown stimulus {stimulus_id!r}", status=404
            ) from None
        accepted = state.accepted_practice if stim.practice else state.accepted_blocks
        block_idx = next(
            i
            for i, block in enumerate(
                state.plan.practice_blocks if stim.practice else state.plan.blocks
            )
            if any(s.stimulus_id == stimulus_id for s in block)
        )
        if block_idx in accepted:
            raise ApiError(
                ERROR_CODES["audio_unavailable"],
                "block already answered; replay not allowed",
                status=409,
            )
        return Response(content=service.renderer.render(stim), media_type="audio/wav")

    @app.post("/api/sessions/{sid}/blocks/{block_index}/answers")
    def submit_answers(sid: str, block_index: int, body: AnswersBody):
        service.mutate(
            sid,
            lambda st: submit_block_answers(st, block_index, body.answers, service.corpus),
        )
        return session_summary(service.state(sid))

    @app.post("/api/export")
    def export(body: ExportBody):
        states = [service.state(sid) for sid in service.store.session_ids()]
        if not body.include_partial:
            states = [s for s in states if s.is_complete()]
        bundle = export_results(states, service.corpus, include_partial=body.include_partial)
        out_dir = service.data_dir / "export"
        paths = bundle.write_csv(out_dir)
        result = analysis.analyze_bundle(bundle) if bundle.answer_rows else None
        if result is not None:
            analysis.write_fits_csv(result.fits, out_dir / "fits.csv")
            analysis.write_summary_csv(result, out_dir / "summary.csv")
            analysis.write_screening_report(
                result, bundle.tonepip_rows, out_dir / "screening.json", out_dir / "screening.csv"
            )
            analysis.write_plot_data(result, out_dir / "plot_data.json")
        return {
            "n_sessions": len(states),
            "n_answer_rows": len(bundle.answer_rows),
            "n_tonepip_rows": len(bundle.tonepip_rows),
            "paths": {k: str(v) for k, v in paths.items()},
        }

    root = Path(webroot) if webroot else Path(data_dir) / "webroot"
    if root.is_dir():
        app.mount("/", StaticFiles(directory=root, html=True), name="webroot")

    return app
