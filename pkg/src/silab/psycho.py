"""Scoring, psychometric fitting, SRTs, aggregation, and simulated listeners.

Word answers are scored whole-word after kana normalization. Per-condition
correct counts are fitted with a cumulative Gaussian P(correct | snr) =
Phi((snr - mu) / sigma) by maximum likelihood (guess and lapse rates fixed
at zero); the SRT is the fitted 50% point mu.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr

from .enhance import EnhancementMethod
from .tonepip import TonePipSequenceSpec

SNR_SIGMA_BOUNDS = (0.1, 30.0)

_KANA_VOWEL_ROWS = {
    "あ": "あかがさざただなはばぱまやらわゃぁゎ",
    "い": "いきぎしじちぢにひびぴみりぃ",
    "う": "うくぐすずつづぬふぶぷむゆるゅぅゔ",
    "え": "えけげせぜてでねへべぺめれぇ",
    "お": "おこごそぞとどのほぼぽもよろをょぉ",
}
_KANA_VOWEL = {k: v for v, row in _KANA_VOWEL_ROWS.items() for k in row}


def normalize_answer(text: str) -> str:
    """Canonical answer form: NFKC, trimmed, casefolded, katakana folded to
    hiragana, long-vowel marks replaced by the preceding kana's vowel."""
    s = unicodedata.normalize("NFKC", text).strip().casefold()
    out = []
    for ch in s:
        code = ord(ch)
        if 0x30A1 <= code <= 0x30F6 or code in (0x30FD, 0x30FE):  # katakana block
            ch = chr(code - 0x60)
        if ch == "ー":  # long-vowel mark
            prev = out[-1] if out else ""
            ch = _KANA_VOWEL.get(prev, "")
            if not ch:
                continue
        out.append(ch)
    return "".join(out)


def score_answer(response: str, truth: str) -> bool:
    """Whole-word scoring: exact match after normalization."""
    truth_n = normalize_answer(truth)
    if not truth_n:
        raise ValueError("empty truth")
    return normalize_answer(response) == truth_n


@dataclass(frozen=True)
class ScoredTrial:
    trial_id: str
    method: EnhancementMethod
    snr_db: float
    correct: bool
    practice: bool = False


@dataclass(frozen=True)
class ConditionCell:
    method: EnhancementMethod
    snr_db: float
    n_trials: int
    n_correct: int

    def __post_init__(self):
        if not (0 <= self.n_correct <= self.n_trials):
            raise ValueError(
                f"need 0 <= n_correct <= n_trials, got {self.n_correct}/{self.n_trials}"
            )


def tally(trials, include_practice: bool = False) -> dict[tuple[EnhancementMethod, float], ConditionCell]:
    """Per-(method, SNR) counts. Practice trials are skipped by default;
    duplicate trial ids are an integrity error. Only observed cells appear."""
    counts: dict[tuple[EnhancementMethod, float], list[int]] = {}
    seen = set()
    for t in trials:
        if t.trial_id in seen:
            raise ValueError(f"duplicate trial id {t.trial_id!r}")
        seen.add(t.trial_id)
        if t.practice and not include_practice:
            continue
        method = EnhancementMethod(t.method)
        key = (method, float(t.snr_db))
        n, k = counts.setdefault(key, [0, 0])
        counts[key][0] = n + 1
        counts[key][1] = k + int(t.correct)
    return {
        key: ConditionCell(key[0], key[1], n, k) for key, (n, k) in sorted(counts.items())
    }


def missing_cells(cells, methods=None, snrs=None) -> list[tuple[EnhancementMethod, float]]:
    """Grid combinations absent from a tally (reported, never fabricated)."""
    methods = list(methods or EnhancementMethod)
    snrs = list(snrs if snrs is not None else (-9.0, -6.0, -3.0, 0.0, 3.0))
    return [(m, s) for m in methods for s in snrs if (m, float(s)) not in cells]


@dataclass(frozen=True)
class PsychFit:
    mu: float
    sigma: float
    log_likelihood: float
    converged: bool
    message: str = ""
    ci_mu: tuple[float, float] | None = None


def _neg_log_likelihood(params, x, n, k):
    mu, sigma = params
    p = ndtr((x - mu) / sigma)
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return -np.sum(k * np.log(p) + (n - k) * np.log(1.0 - p))


def fit_psychometric(cells, bootstrap_ci: bool = False, n_boot: int = 1000, seed: int = 0) -> PsychFit:
    """Maximum-likelihood cumulative-Gaussian fit over one method's cells.

    Bounded Nelder-Mead on (mu, sigma), three deterministic starts. Data
    that are all correct or all wrong leave mu unidentifiable and come back
    converged=False.
    """
    cells = [c for c in cells if c.n_trials > 0]
    x = np.array([c.snr_db for c in cells], dtype=float)
    n = np.array([c.n_trials for c in cells], dtype=float)
    k = np.array([c.n_correct for c in cells], dtype=float)
    if np.unique(x).size < 2:
        raise ValueError("need at least two distinct SNRs with trials")

    total_k = k.sum()
    if total_k == 0 or total_k == n.sum():
        word = "wrong" if total_k == 0 else "correct"
        return PsychFit(
            mu=float("nan"), sigma=float("nan"), log_likelihood=float("nan"),
            converged=False, message=f"all responses {word}; mu unidentifiable",
        )

    mu_lo, mu_hi = x.min() - 30.0, x.max() + 30.0
    # crude 50% crossing from the observed rates for the first start
    rates = k / n
    mu_guess = float(x[np.argmin(np.abs(rates - 0.5))])
    starts = [(mu_guess, 2.0), (x.min() - 2.0, 5.0), (x.max() + 2.0, 5.0)]

    best = None
    for start in starts:
        res = minimize(
            _neg_log_likelihood,
            np.array(start),
            args=(x, n, k),
            method="Nelder-Mead",
            bounds=[(mu_lo, mu_hi), SNR_SIGMA_BOUNDS],
            options={"xatol": 1e-6, "fatol": 1e-12, "maxiter": 4000},
        )
        if best is None or res.fun < best.fun:
            best = res

    fit = PsychFit(
        mu=float(best.x[0]),
        sigma=float(best.x[1]),
        log_likelihood=float(-best.fun),
        converged=bool(best.success),
        message=str(best.message),
    )
    if bootstrap_ci and fit.converged:
        rng = np.random.default_rng(seed)
        boots = []
        for _ in range(n_boot):
            kb = rng.binomial(n.astype(int), np.clip(k / n, 0.0, 1.0))
            if kb.sum() in (0, n.sum()):
                continue
            res = minimize(
                _neg_log_likelihood,
                np.array([fit.mu, fit.sigma]),
                args=(x, n, kb.astype(float)),
                method="Nelder-Mead",
                bounds=[(mu_lo, mu_hi), SNR_SIGMA_BOUNDS],
                options={"xatol": 1e-4, "maxiter": 1000},
            )
            boots.append(res.x[0])
        if len(boots) >= 10:
            lo, hi = np.percentile(boots, [2.5, 97.5])
            fit = PsychFit(fit.mu, fit.sigma, fit.log_likelihood, fit.converged,
                           fit.message, ci_mu=(float(lo), float(hi)))
    return fit


def srt(fit: PsychFit) -> float:
    """SNR of the 50% point; with zero guess/lapse that is the fitted mu."""
    if not fit.converged:
        raise ValueError(f"fit did not converge: {fit.message}")
    return fit.mu


@dataclass(frozen=True)
class ConditionSummary:
    method: EnhancementMethod
    mean_srt_db: float
    sd_srt_db: float | None
    n: int


def summarize(per_participant_srts: dict[str, dict[EnhancementMethod, float]]) -> dict[EnhancementMethod, ConditionSummary]:
    """Mean and (n-1)-denominator SD of SRT across participants, per method."""
    if not per_participant_srts:
        raise ValueError("no participants")
    by_method: dict[EnhancementMethod, list[float]] = {}
    for srts in per_participant_srts.values():
        for method, value in srts.items():
            by_method.setdefault(EnhancementMethod(method), []).append(float(value))
    out = {}
    for method, values in sorted(by_method.items()):
        arr = np.array(values)
        sd = float(np.std(arr, ddof=1)) if arr.size > 1 else None
        out[method] = ConditionSummary(method, float(arr.mean()), sd, arr.size)
    return out


# ---------------------------------------------------------------------------
# Simulated listeners (test oracles standing in for humans)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ListenerProfile:
    """Deterministic listener: per-frequency audibility thresholds on the
    presentation dB scale, plus true psychometric parameters per method."""

    thresholds_db: dict[float, float]
    true_mu: dict[EnhancementMethod, float]
    true_sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.true_sigma <= 0:
            raise ValueError("true_sigma must be positive")


def simulate_tonepip_response(
    profile: ListenerProfile, spec: TonePipSequenceSpec, presentation_level_db: float
) -> int:
    """Count of pips presented above the profile's threshold at spec.frequency."""
    threshold = profile.thresholds_db[spec.frequency]
    levels = presentation_level_db - spec.step_db * np.arange(spec.n_pips)
    return int(np.sum(levels > threshold))


def simulate_word_response(
    profile: ListenerProfile,
    method: EnhancementMethod,
    snr_db: float,
    rng: np.random.Generator,
) -> bool:
    """Seeded Bernoulli draw at Phi((snr - true_mu) / true_sigma)."""
    method = EnhancementMethod(method)
    if method not in profile.true_mu:
        raise ValueError(f"profile has no condition {method.value}")
    p = float(ndtr((snr_db - profile.true_mu[method]) / profile.true_sigma))
    return bool(rng.random() < p)
