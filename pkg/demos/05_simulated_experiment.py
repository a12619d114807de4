# The whole experiment at desk scale with simulated listeners:
# cohort -> 400-word sessions -> export -> screening -> psychometric fits
# -> SRT summary, before and after screening.
#
# The cohort has 39 members: 25 whose mean pip counts land in [9, 13] and
# 14 designed to fail screening, mirroring a remote-experiment shape.

from pathlib import Path

from silab.analysis import analyze_bundle, write_plot_data, write_summary_csv
from silab.session import Corpus, export_results
from silab.simulate import default_cohort, run_cohort

out = Path(__file__).parent / "output" / "experiment"
out.mkdir(parents=True, exist_ok=True)

corpus = Corpus.synthetic(440, seed=1)
members = default_cohort(seed=0)
print(f"running {len(members)} simulated sessions of 400 words each...")
sessions = run_cohort(corpus, members, plan_seed=0)

bundle = export_results(sessions, corpus)
print(f"exported {len(bundle.answer_rows)} answers, {len(bundle.tonepip_rows)} tone-pip reports")
bundle.write_csv(out)

result = analyze_bundle(bundle)
print(f"\nscreening: kept {len(result.screening.kept)}, rejected {len(result.screening.rejected)}")
reasons = {}
for reason in result.screening.rejected.values():
    reasons[reason] = reasons.get(reason, 0) + 1
print(f"rejection reasons: {reasons}")

print(f"\n{'condition':<14} {'all (N=39)':>20} {'screened (N=25)':>20}")
for method in result.summary_all:
    a = result.summary_all[method]
    k = result.summary_kept[method]
    print(
        f"{method.value:<14} {a.mean_srt_db:>+12.2f} ± {a.sd_srt_db:4.2f} "
        f"{k.mean_srt_db:>+13.2f} ± {k.sd_srt_db:4.2f}"
    )

write_summary_csv(result, out / "summary.csv")
write_plot_data(result, out / "plot_data.json")
print(f"\nwrote summary.csv and plot_data.json to {out}")
