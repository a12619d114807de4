"""Batch entry points: scene synthesis, enhancement, tone-pip stimuli,
simulated cohorts, screening, analysis, and the live service.

One binary, subcommand style. A JSON config file can pre-set any flag
(flags win); every run appends NDJSON events to the run log.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis
from .dsp import PLAYBACK_RATE, AudioBuffer, read_wav, resample, write_wav
from .enhance import EnhancementMethod, enhance_with_info
from .scene import (
    PRESET_POSITIONS,
    SceneConfig,
    NoisyObservation,
    build_scene,
    load_manifest,
    synth_babble,
    synthetic_word,
)
from .session import Corpus, SessionStore, export_results
from .simulate import default_cohort, load_cohort, run_simulated_session, save_cohort
from .tonepip import TONEPIP_FREQUENCIES, ScreeningRule, TonePipSequenceSpec, gen_tonepip_sequence


class RunLog:
    def __init__(self, path=None):
        self.fh = open(path, "a") if path else sys.stdout

    def emit(self, event: str, **fields):
        self.fh.write(json.dumps({"event": event, **fields}) + "\n")
        self.fh.flush()

    def close(self):
        if self.fh is not sys.stdout:
            self.fh.close()


def _load_word(args, word_id: str) -> AudioBuffer:
    if args.words_dir:
        return read_wav(Path(args.words_dir) / f"{word_id}.wav")
    return synthetic_word(zlib.crc32(word_id.encode()))


def _load_babble(args) -> AudioBuffer:
    if args.babble:
        return read_wav(args.babble)
    return synth_babble(args.babble_duration, args.babble_talkers, seed=args.babble_seed)


def _synth_entry(entry, args, babble) -> dict:
    word = _load_word(args, entry.word_id)
    cfg = SceneConfig(
        snr_db=entry.snr_db, position=PRESET_POSITIONS[entry.position_id], seed=entry.seed
    )
    obs = build_scene(word, babble, cfg)
    out = Path(args.out)
    for path, buf in (
        (entry.mixture_path, obs.mixture),
        (entry.speech_path, obs.speech_image),
        (entry.noise_path, obs.noise_image),
    ):
        target = out / path
        target.parent.mkdir(parents=True, exist_ok=True)
        write_wav(target, buf)
    return {
        "word_id": entry.word_id,
        "snr_db": entry.snr_db,
        "measured_snr_db": obs.measured_snr_db(),
    }


def cmd_synth(args, log: RunLog) -> int:
    entries = load_manifest(args.manifest)
    babble = _load_babble(args)
    log.emit("synth_start", n_entries=len(entries), out=str(args.out))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_synth_entry, entries, [args] * len(entries), [babble] * len(entries)))
    else:
        results = [_synth_entry(e, args, babble) for e in entries]
    for r in results:
        log.emit("scene_written", **r)
    log.emit("synth_done", n_entries=len(results))
    return 0


def _speech_span(speech: AudioBuffer) -> tuple[int, int]:
    nz = np.nonzero(speech.samples[0])[0]
    if nz.size == 0:
        raise ValueError("speech image is silent")
    return int(nz[0]), int(nz[-1]) + 1


def _enhance_entry(entry, args) -> dict:
    scenes = Path(args.scenes)
    mixture = read_wav(scenes / entry.mixture_path)
    speech = read_wav(scenes / entry.speech_path)
    cfg = SceneConfig(
        snr_db=entry.snr_db, position=PRESET_POSITIONS[entry.position_id], seed=entry.seed
    )
    # float32 files round each component independently; close the
    # decomposition against the stored mixture so it holds exactly
    noise = AudioBuffer(mixture.samples - speech.samples, mixture.sample_rate)
    obs = NoisyObservation(
        mixture=mixture,
        speech_image=speech,
        noise_image=noise,
        config=cfg,
        speech_span=_speech_span(speech),
    )
    method = EnhancementMethod(args.method)
    audio, info = enhance_with_info(obs, method)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{entry.word_id}__{method.value}@{entry.snr_db:+.0f}dB"
    write_wav(out / f"{stem}.wav", audio)
    if args.export_48k:
        write_wav(out / f"{stem}_48k.wav", resample(audio, PLAYBACK_RATE))
    sidecar = {
        "word_id": entry.word_id,
        "method": method.value,
        "input_snr_db": entry.snr_db,
        "oracle_snr_db": info.oracle_snr_db,
        "flagged_freqs": list(info.flagged_freqs),
    }
    (out / f"{stem}.json").write_text(json.dumps(sidecar, indent=2))
    return sidecar


def cmd_enhance(args, log: RunLog) -> int:
    entries = load_manifest(args.manifest)
    log.emit("enhance_start", method=args.method, n_entries=len(entries))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_enhance_entry, entries, [args] * len(entries)))
    else:
        results = [_enhance_entry(e, args) for e in entries]
    for r in results:
        log.emit("enhanced", **r)
    log.emit("enhance_done", n_entries=len(results))
    return 0


def cmd_tonepip(args, log: RunLog) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    freqs = [float(f) for f in args.frequencies] if args.frequencies else list(TONEPIP_FREQUENCIES)
    for freq in freqs:
        spec = TonePipSequenceSpec(
            frequency=freq, ref_level_dbfs=args.ref_level_dbfs, ascending=args.ascending
        )
        audio, meta = gen_tonepip_sequence(spec, sample_rate=PLAYBACK_RATE)
        path = out / f"tonepip_{int(freq)}hz.wav"
        write_wav(path, audio)
        (out / f"tonepip_{int(freq)}hz.json").write_text(
            json.dumps(
                {
                    "frequency": freq,
                    "ref_level_dbfs": args.ref_level_dbfs,
                    "pips": [
                        {"start": m.start_sample, "end": m.end_sample, "level_dbfs": m.level_dbfs}
                        for m in meta
                    ],
                },
                indent=2,
            )
        )
        log.emit("tonepip_written", frequency=freq, path=str(path))
    return 0


def cmd_simulate(args, log: RunLog) -> int:
    corpus = Corpus.load(args.corpus) if args.corpus else Corpus.synthetic()
    if args.cohort:
        members = load_cohort(args.cohort)
    else:
        members = default_cohort(seed=args.seed)
        cohort_path = Path(args.out) / "cohort.json"
        cohort_path.parent.mkdir(parents=True, exist_ok=True)
        save_cohort(cohort_path, members)
        log.emit("cohort_written", path=str(cohort_path), n_members=len(members))
    out = Path(args.out)
    store = SessionStore(out)
    if not (out / "corpus.json").exists():
        corpus.save(out / "corpus.json")
    sessions = []
    for member in members:
        state = run_simulated_session(corpus, member, plan_seed=args.seed)
        store.save_all(state)
        sessions.append(state)
        log.emit("session_done", participant_id=member.participant_id)
    bundle = export_results(sessions, corpus)
    paths = bundle.write_csv(out / "export")
    log.emit(
        "simulate_done",
        n_sessions=len(sessions),
        n_answer_rows=len(bundle.answer_rows),
        paths={k: str(v) for k, v in paths.items()},
    )
    return 0


def _screening_rule(args) -> ScreeningRule:
    return ScreeningRule(
        min_mean_pips=args.min_pips,
        max_mean_pips=args.max_pips,
        srt_exclude_ids=tuple(args.exclude or ()),
        mad_outlier_factor=args.mad_factor,
    )


def cmd_screen(args, log: RunLog) -> int:
    results_dir = Path(args.results)
    bundle = analysis.load_bundle(results_dir)
    result = analysis.analyze_bundle(bundle, rule=_screening_rule(args))
    out = Path(args.out) if args.out else results_dir
    out.mkdir(parents=True, exist_ok=True)
    analysis.write_screening_report(
        result, bundle.tonepip_rows, out / "screening.json", out / "screening.csv"
    )
    log.emit(
        "screen_done",
        kept=len(result.screening.kept),
        rejected=len(result.screening.rejected),
        report=str(out / "screening.json"),
    )
    return 0


def cmd_analyze(args, log: RunLog) -> int:
    results_dir = Path(args.results)
    bundle = analysis.load_bundle(results_dir)
    result = analysis.analyze_bundle(bundle, rule=_screening_rule(args))
    out = Path(args.out) if args.out else results_dir
    out.mkdir(parents=True, exist_ok=True)
    analysis.write_results_csv(bundle, out / "results.csv")
    analysis.write_fits_csv(result.fits, out / "fits.csv")
    analysis.write_summary_csv(result, out / "summary.csv")
    analysis.write_screening_report(
        result, bundle.tonepip_rows, out / "screening.json", out / "screening.csv"
    )
    analysis.write_plot_data(result, out / "plot_data.json")
    log.emit(
        "analyze_done",
        n_fits=len(result.fits),
        kept=len(result.screening.kept),
        summary=str(out / "summary.csv"),
    )
    return 0


def cmd_serve(args, log: RunLog) -> int:
    import uvicorn

    from .service import create_app

    data_dir = args.data_dir or os.environ.get("SILAB_DATA_DIR") or "./silab_data"
    app = create_app(data_dir, allow_synth=not args.no_synth, webroot=args.webroot)
    log.emit("serve_start", port=args.port, data_dir=str(data_dir))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> tuple[argparse.ArgumentParser, list[argparse.ArgumentParser]]:
    # SUPPRESS keeps subparser defaults from clobbering values the main
    # parser already read (argparse copies the whole subnamespace back)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", default=argparse.SUPPRESS, help="JSON config file; flags override its values"
    )
    common.add_argument(
        "--log", default=argparse.SUPPRESS, help="run log path (NDJSON); default stdout"
    )
    parser = argparse.ArgumentParser(prog="silab", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = []

    def add_parser(name, **kw):
        p = sub.add_parser(name, parents=[common], **kw)
        subparsers.append(p)
        return p

    p = add_parser("synth", help="synthesize scenes from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--words-dir", help="directory of <word_id>.wav; synthetic words if omitted")
    p.add_argument("--babble", help="babble WAV; synthesized if omitted")
    p.add_argument("--babble-duration", type=float, default=30.0)
    p.add_argument("--babble-talkers", type=int, default=16)
    p.add_argument("--babble-seed", type=int, default=101)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = add_parser("enhance", help="enhance synthesized scenes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scenes", required=True, help="directory holding the synth outputs")
    p.add_argument("--out", required=True)
    p.add_argument(
        "--method", required=True, choices=[m.value for m in EnhancementMethod]
    )
    p.add_argument("--export-48k", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_enhance)

    p = add_parser("tonepip", help="render tone-pip screening stimuli")
    p.add_argument("--out", required=True)
    p.add_argument("--frequencies", nargs="*", type=float)
    p.add_argument("--ref-level-dbfs", type=float, default=-26.0)
    p.add_argument("--ascending", action="store_true")
    p.set_defaults(func=cmd_tonepip)

    p = add_parser("simulate", help="run a simulated-listener cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--cohort", help="cohort JSON; default 39-member cohort if omitted")
    p.add_argument("--corpus", help="corpus JSON; synthetic corpus if omitted")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    def add_rule_flags(p):
        p.add_argument("--min-pips", type=float, default=9.0)
        p.add_argument("--max-pips", type=float, default=13.0)
        p.add_argument("--exclude", nargs="*", help="participant ids to drop as SRT outliers")
        p.add_argument("--mad-factor", type=float, default=None)

    p = add_parser("screen", help="screen participants from exported results")
    p.add_argument("--results", required=True, help="export directory (answers/tonepips CSVs)")
    p.add_argument("--out")
    add_rule_flags(p)
    p.set_defaults(func=cmd_screen)

    p = add_parser("analyze", help="fits, SRTs, summaries, plot data")
    p.add_argument("--results", required=True)
    p.add_argument("--out")
    add_rule_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = add_parser("serve", help="run the live experiment service")
    p.add_argument("--port", type=int, default=8340)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data-dir", help="defaults to $SILAB_DATA_DIR or ./silab_data")
    p.add_argument("--webroot", help="static frontend directory")
    p.add_argument("--no-synth", action="store_true", help="disable on-demand stimulus audio")
    p.set_defaults(func=cmd_serve)
    return parser, subparsers


def _apply_config(parser, subparsers, argv: list[str]) -> argparse.Namespace:
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if known.config:
        values = json.loads(Path(known.config).read_text())
        if not isinstance(values, dict):
            raise ValueError("config file must hold a JSON object")
        defaults = {k.replace("-", "_"): v for k, v in values.items()}
        # subparser defaults shadow the main parser's, so set them everywhere
        for p in [parser, *subparsers]:
            p.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()
    try:
        args = _apply_config(parser, subparsers, argv)
    except (ValueError, OSError) as exc:
        print(json.dumps({"event": "error", "message": str(exc)}), file=sys.stderr)
        return 2
    log = RunLog(getattr(args, "log", None))
    try:
        return args.func(args, log)
    except Exception as exc:  # report, never traceback-spam, nonzero exit
        log.emit("error", type=type(exc).__name__, message=str(exc))
        return 1
    finally:
        log.close()


if __name__ == "__main__":
    sys.exit(main())
