"""Tests for the silab CLI: subcommand flows, determinism, exit codes."""

import json

import numpy as np
import pytest

from silab.cli import main
from silab.dsp import read_wav
from silab.scene import ManifestEntry, save_manifest


def run(args):
    return main([str(a) for a in args])


@pytest.fixture()
def scene_setup(tmp_path):
    manifest = tmp_path / "scenes.json"
    entries = [
        ManifestEntry(
            word_id=f"w{k:03d}",
            position_id=5,
            snr_db=-6.0,
            seed=100 + k,
            mixture_path=f"w{k:03d}/mixture.wav",
            speech_path=f"w{k:03d}/speech.wav",
            noise_path=f"w{k:03d}/noise.wav",
        )
        for k in range(2)
    ]
    save_manifest(manifest, entries)
    scenes = tmp_path / "scenes"
    return manifest, scenes, tmp_path


class TestSynth:
    def test_writes_scene_wavs(self, scene_setup):
        manifest, scenes, tmp = scene_setup
        log = tmp / "log.ndjson"
        code = run(
            ["--log", log, "synth", "--manifest", manifest, "--out", scenes,
             "--babble-duration", "6", "--babble-talkers", "6"]
        )
        assert code == 0
        mix = read_wav(scenes / "w000/mixture.wav")
        speech = read_wav(scenes / "w000/speech.wav")
        noise = read_wav(scenes / "w000/noise.wav")
        assert mix.channel_count == 2
        np.testing.assert_allclose(
            mix.samples, speech.samples + noise.samples, atol=1e-6
        )
        events = [json.loads(line) for line in log.read_text().splitlines()]
        kinds = [e["event"] for e in events]
        assert kinds[0] == "synth_start" and kinds[-1] == "synth_done"
        written = [e for e in events if e["event"] == "scene_written"]
        assert all(abs(e["measured_snr_db"] + 6.0) < 0.01 for e in written)

    def test_deterministic(self, scene_setup, tmp_path):
        manifest, scenes, tmp = scene_setup
        args = ["synth", "--manifest", manifest, "--babble-duration", "6",
                "--babble-talkers", "6", "--log", tmp / "l1"]
        run(args + ["--out", scenes])
        other = tmp_path / "again"
        run(args + ["--out", other])
        a = read_wav(scenes / "w001/mixture.wav")
        b = read_wav(other / "w001/mixture.wav")
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_parallel_workers_match_serial(self, scene_setup, tmp_path):
        manifest, scenes, tmp = scene_setup
        base = ["synth", "--manifest", manifest, "--babble-duration", "6",
                "--babble-talkers", "6"]
        assert run(base + ["--out", scenes, "--log", tmp / "l1"]) == 0
        par = tmp_path / "parallel"
        assert run(base + ["--out", par, "--log", tmp / "l2", "--workers", 2]) == 0
        a = read_wav(scenes / "w000/mixture.wav")
        b = read_wav(par / "w000/mixture.wav")
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_missing_manifest_exits_nonzero(self, tmp_path):
        log = tmp_path / "log"
        code = run(["--log", log, "synth", "--manifest", tmp_path / "nope.json",
                    "--out", tmp_path / "o"])
        assert code == 1
        events = [json.loads(line) for line in log.read_text().splitlines()]
        assert events[-1]["event"] == "error"


class TestEnhance:
    def test_unprocessed_matches_mixture_channel1(self, scene_setup):
        manifest, scenes, tmp = scene_setup
        run(["--log", tmp / "l1", "synth", "--manifest", manifest, "--out", scenes,
             "--babble-duration", "6", "--babble-talkers", "6"])
        out = tmp / "enhanced"
        code = run(["--log", tmp / "l2", "enhance", "--manifest", manifest,
                    "--scenes", scenes, "--out", out, "--method", "unprocessed"])
        assert code == 0
        enhanced = read_wav(out / "w000__unprocessed@-6dB.wav")
        mixture = read_wav(scenes / "w000/mixture.wav")
        np.testing.assert_array_equal(enhanced.samples[0], mixture.samples[0])
        sidecar = json.loads((out / "w000__unprocessed@-6dB.json").read_text())
        assert sidecar["oracle_snr_db"] == pytest.approx(-6.0, abs=0.01)

    def test_mask_sidecar_reports_gain(self, scene_setup):
        manifest, scenes, tmp = scene_setup
        run(["--log", tmp / "l1", "synth", "--manifest", manifest, "--out", scenes,
             "--babble-duration", "6", "--babble-talkers", "6"])
        out = tmp / "enhanced"
        code = run(["--log", tmp / "l2", "enhance", "--manifest", manifest,
                    "--scenes", scenes, "--out", out, "--method", "mask1ch_irm",
                    "--export-48k"])
        assert code == 0
        sidecar = json.loads((out / "w000__mask1ch_irm@-6dB.json").read_text())
        assert sidecar["oracle_snr_db"] > -6.0
        assert read_wav(out / "w000__mask1ch_irm@-6dB_48k.wav").sample_rate == 48000


class TestTonepip:
    def test_renders_four_frequencies(self, tmp_path):
        out = tmp_path / "pips"
        code = run(["--log", tmp_path / "log", "tonepip", "--out", out])
        assert code == 0
        for f in (500, 1000, 2000, 4000):
            buf = read_wav(out / f"tonepip_{f}hz.wav")
            assert buf.sample_rate == 48000
            meta = json.loads((out / f"tonepip_{f}hz.json").read_text())
            assert len(meta["pips"]) == 15


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("sim")
    out = tmp / "run"
    cohort = tmp / "cohort.json"
    from silab.simulate import default_cohort, save_cohort

    save_cohort(cohort, default_cohort(n_kept=4, n_low=2, n_high=1, seed=13))
    code = run(["--log", tmp / "log", "simulate", "--out", out, "--cohort", cohort,
                "--seed", 13])
    assert code == 0
    return out


class TestSimulateScreenAnalyze:
    def test_simulate_outputs(self, sim_dir):
        answers = (sim_dir / "export/answers.csv").read_text().splitlines()
        assert len(answers) == 1 + 7 * 400
        tonepips = (sim_dir / "export/tonepips.csv").read_text().splitlines()
        assert len(tonepips) == 1 + 7 * 4
        assert len(list((sim_dir / "sessions").glob("*.ndjson"))) == 7

    def test_screen_matches_design(self, sim_dir, tmp_path):
        out = tmp_path / "screen"
        code = run(["--log", tmp_path / "log", "screen", "--results", sim_dir / "export",
                    "--out", out])
        assert code == 0
        doc = json.loads((out / "screening.json").read_text())
        keeps = [p for p in doc["participants"] if p["decision"] == "keep"]
        assert len(keeps) == 4
        reasons = {p["reason"] for p in doc["participants"] if p["decision"] == "reject"}
        assert reasons == {"too_few_pips", "too_many_pips"}

    def test_analyze_outputs(self, sim_dir, tmp_path):
        out = tmp_path / "analysis"
        code = run(["--log", tmp_path / "log", "analyze", "--results", sim_dir / "export",
                    "--out", out])
        assert code == 0
        summary = (out / "summary.csv").read_text().splitlines()
        assert summary[0] == "cohort,method,mean_srt_db,sd_srt_db,n"
        assert sum(line.startswith("screened,") for line in summary) == 4
        assert (out / "plot_data.json").exists()
        assert (out / "fits.csv").exists()
        results = (out / "results.csv").read_text().splitlines()
        assert len(results) == 1 + 7 * 20

    def test_default_cohort_written_when_unspecified(self, tmp_path):
        out = tmp_path / "auto"
        # default cohort is 39 members; use a config file to prove config loading
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 3}))
        code = run(["--config", cfg, "--log", tmp_path / "log", "simulate", "--out", out])
        assert code == 0
        cohort = json.loads((out / "cohort.json").read_text())
        assert len(cohort["members"]) == 39


class TestConfigHandling:
    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"ref_level_dbfs": -40.0}))
        out = tmp_path / "pips"
        code = run(["--config", cfg, "--log", tmp_path / "log", "tonepip", "--out", out,
                    "--frequencies", "1000", "--ref-level-dbfs", "-30"])
        assert code == 0
        meta = json.loads((out / "tonepip_1000hz.json").read_text())
        assert meta["ref_level_dbfs"] == -30.0

    def test_config_value_used(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"ref_level_dbfs": -40.0, "frequencies": [2000.0]}))
        out = tmp_path / "pips"
        code = run(["--config", cfg, "--log", tmp_path / "log", "tonepip", "--out", out])
        assert code == 0
        meta = json.loads((out / "tonepip_2000hz.json").read_text())
        assert meta["ref_level_dbfs"] == -40.0

    def test_bad_config_exit_2(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("[1, 2]")
        assert run(["--config", cfg, "tonepip", "--out", tmp_path / "o"]) == 2
