"""Analysis pipeline over exported session data.

Takes the export bundle (or its CSV form) through scoring tallies,
per-participant psychometric fits, SRTs, cohort screening, and the summary
tables; emits fits/summary CSVs and plot-ready JSON.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .enhance import EnhancementMethod
from .psycho import PsychFit, ScoredTrial, fit_psychometric, srt, summarize, tally
from .session import AnswerRow, ExportBundle, TonePipRow
from .tonepip import (
    ParticipantRecord,
    ScreeningOutcome,
    ScreeningRule,
    TonePipResult,
    mean_pips,
    screen_participants,
)


def read_answer_rows(path) -> list[AnswerRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                AnswerRow(
                    participant_id=rec["participant_id"],
                    stimulus_id=rec["stimulus_id"],
                    block_index=int(rec["block_index"]),
                    word_id=rec["word_id"],
                    method=EnhancementMethod(rec["method"]),
                    snr_db=float(rec["snr_db"]),
                    response=rec["response"],
                    truth=rec["truth"],
                    correct=bool(int(rec["correct"])),
                    practice=bool(int(rec["practice"])),
                )
            )
    return rows


def read_tonepip_rows(path) -> list[TonePipRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            lev = rec["listening_level_db"]
            rows.append(
                TonePipRow(
                    participant_id=rec["participant_id"],
                    frequency=float(rec["frequency"]),
                    n_pip=int(rec["n_pip"]),
                    listening_level_db=float(lev) if lev != "" else None,
                )
            )
    return rows


def load_bundle(dir_path) -> ExportBundle:
    d = Path(dir_path)
    return ExportBundle(
        tuple(read_answer_rows(d / "answers.csv")),
        tuple(read_tonepip_rows(d / "tonepips.csv")),
    )


@dataclass(frozen=True)
class ParticipantFit:
    participant_id: str
    method: EnhancementMethod
    fit: PsychFit


def fit_participants(
    answer_rows, include_practice: bool = False
) -> list[ParticipantFit]:
    """One cumulative-Gaussian fit per participant per method."""
    by_participant: dict[str, list[AnswerRow]] = {}
    for row in answer_rows:
        by_participant.setdefault(row.participant_id, []).append(row)

    fits = []
    for pid in sorted(by_participant):
        trials = [
            ScoredTrial(r.stimulus_id, r.method, r.snr_db, r.correct, r.practice)
            for r in by_participant[pid]
        ]
        cells = tally(trials, include_practice=include_practice)
        by_method: dict[EnhancementMethod, list] = {}
        for (method, _), cell in cells.items():
            by_method.setdefault(method, []).append(cell)
        for method in sorted(by_method):
            fits.append(ParticipantFit(pid, method, fit_psychometric(by_method[method])))
    return fits


def participant_srts(fits) -> dict[str, dict[EnhancementMethod, float]]:
    """SRTs of converged fits, keyed participant -> method."""
    out: dict[str, dict[EnhancementMethod, float]] = {}
    for pf in fits:
        if pf.fit.converged:
            out.setdefault(pf.participant_id, {})[pf.method] = srt(pf.fit)
    return out


def mean_srt_per_participant(srts: dict[str, dict[EnhancementMethod, float]]) -> dict[str, float]:
    return {pid: float(np.mean(list(per.values()))) for pid, per in srts.items() if per}


def screening_records(tonepip_rows, mean_srts=None) -> list[ParticipantRecord]:
    by_pid: dict[str, list[TonePipRow]] = {}
    for row in tonepip_rows:
        by_pid.setdefault(row.participant_id, []).append(row)
    records = []
    for pid in sorted(by_pid):
        results = tuple(
            TonePipResult(r.frequency, r.n_pip) for r in sorted(by_pid[pid], key=lambda r: r.frequency)
        )
        records.append(
            ParticipantRecord(pid, results, mean_srt_db=(mean_srts or {}).get(pid))
        )
    return records


@dataclass(frozen=True)
class AnalysisResult:
    fits: tuple[ParticipantFit, ...]
    srts: dict[str, dict[EnhancementMethod, float]]
    screening: ScreeningOutcome
    summary_all: dict
    summary_kept: dict


def analyze_bundle(bundle: ExportBundle, rule: ScreeningRule | None = None) -> AnalysisResult:
    """Full pipeline: fits -> SRTs -> screening -> per-condition summaries
    before and after screening."""
    fits = fit_participants(bundle.answer_rows)
    srts = participant_srts(fits)
    mean_srts = mean_srt_per_participant(srts)
    records = screening_records(bundle.tonepip_rows, mean_srts)
    screening = screen_participants(records, rule, srts=mean_srts)
    kept_srts = {pid: per for pid, per in srts.items() if pid in screening.kept}
    summary_all = summarize(srts) if srts else {}
    summary_kept = summarize(kept_srts) if kept_srts else {}
    return AnalysisResult(tuple(fits), srts, screening, summary_all, summary_kept)


# ---------------------------------------------------------------------------
# File outputs
# ---------------------------------------------------------------------------


def write_results_csv(bundle: ExportBundle, path) -> Path:
    """Per-cell counts: participant_id, method, snr_db, n_correct, n_trials."""
    counts: dict[tuple[str, EnhancementMethod, float], list[int]] = {}
    for r in bundle.answer_rows:
        if r.practice:
            continue
        key = (r.participant_id, r.method, r.snr_db)
        n, k = counts.setdefault(key, [0, 0])
        counts[key][0] = n + 1
        counts[key][1] = k + int(r.correct)
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("participant_id,method,snr_db,n_correct,n_trials\n")
        for (pid, method, snr), (n, k) in sorted(counts.items()):
            fh.write(f"{pid},{method.value},{snr},{k},{n}\n")
    return path


def write_fits_csv(fits, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("participant_id,method,mu,sigma,log_likelihood,converged\n")
        for pf in fits:
            f = pf.fit
            mu = "" if np.isnan(f.mu) else f"{f.mu:.6f}"
            sigma = "" if np.isnan(f.sigma) else f"{f.sigma:.6f}"
            ll = "" if np.isnan(f.log_likelihood) else f"{f.log_likelihood:.6f}"
            fh.write(
                f"{pf.participant_id},{pf.method.value},{mu},{sigma},{ll},{int(f.converged)}\n"
            )
    return path


def write_summary_csv(result: AnalysisResult, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("cohort,method,mean_srt_db,sd_srt_db,n\n")
        for name, summary in (("all", result.summary_all), ("screened", result.summary_kept)):
            for method, row in summary.items():
                sd = "" if row.sd_srt_db is None else f"{row.sd_srt_db:.4f}"
                fh.write(f"{name},{method.value},{row.mean_srt_db:.4f},{sd},{row.n}\n")
    return path


def write_screening_report(result: AnalysisResult, tonepip_rows, json_path, csv_path) -> None:
    records = screening_records(tonepip_rows)
    rows = []
    for rec in records:
        nbar = mean_pips(rec.tonepip_results) if rec.tonepip_results else None
        decision = "keep" if rec.participant_id in result.screening.kept else "reject"
        reason = result.screening.rejected.get(rec.participant_id, "")
        per_freq = {str(int(r.frequency)): r.n_pip for r in rec.tonepip_results}
        rows.append(
            {
                "participant_id": rec.participant_id,
                "n_pip": per_freq,
                "mean_pips": nbar,
                "decision": decision,
                "reason": reason,
            }
        )
    Path(json_path).write_text(json.dumps({"participants": rows}, indent=2))
    with open(csv_path, "w") as fh:
        freqs = (500, 1000, 2000, 4000)
        fh.write(
            "participant_id," + ",".join(f"n_pip_{f}" for f in freqs) + ",mean_pips,decision,reason\n"
        )
        for row in rows:
            per = ",".join(str(row["n_pip"].get(str(f), "")) for f in freqs)
            nbar = "" if row["mean_pips"] is None else f"{row['mean_pips']:.2f}"
            fh.write(f"{row['participant_id']},{per},{nbar},{row['decision']},{row['reason']}\n")


def write_plot_data(result: AnalysisResult, path, snr_lo=-12.0, snr_hi=6.0, n_points=73) -> Path:
    """Psychometric curves sampled on an SNR grid, for external plotting."""
    grid = np.linspace(snr_lo, snr_hi, n_points)
    curves = []
    for pf in result.fits:
        if not pf.fit.converged:
            continue
        p = ndtr((grid - pf.fit.mu) / pf.fit.sigma)
        curves.append(
            {
                "participant_id": pf.participant_id,
                "method": pf.method.value,
                "mu": pf.fit.mu,
                "sigma": pf.fit.sigma,
                "snr_db": [float(s) for s in grid],
                "p_correct": [float(v) for v in p],
            }
        )
    doc = {
        "curves": curves,
        "summary": {
            name: {
                m.value: {"mean_srt_db": row.mean_srt_db, "sd_srt_db": row.sd_srt_db, "n": row.n}
                for m, row in summary.items()
            }
            for name, summary in (("all", result.summary_all), ("screened", result.summary_kept))
        },
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2))
    return path
