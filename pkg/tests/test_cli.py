import json
import os

import pytest

from scalevit.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def tiny_eegp(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "tiny.eegp"
    code = main(["synth", "--out", str(path), "--seed", "11", "--participants", "2",
                 "--videos", "8", "--channels", "2", "--duration", "1.0",
                 "--noise-sigma", "0.2"])
    assert code == 0
    return str(path)


FAST_TRAIN = ["--image-size", "16", "--scales", "16", "--patch-size", "8",
              "--embed-dim", "16", "--depth", "1", "--heads", "2",
              "--linformer-k", "4", "--lr", "1e-3", "--batch-size", "4",
              "--max-epochs", "3", "--folds", "2"]


class TestSubsets:
    def test_json_registry(self, capsys):
        code, out, _ = run_cli(capsys, "subsets")
        assert code == 0
        payload = json.loads(out)
        assert payload["subsets"]["muse-4a"] == ["AF3", "AF4", "P7", "P8"]
        assert payload["indices"]["channel-33"] == [33]
        assert len(payload["subsets"]["eeg-only"]) == 32


class TestSynth:
    def test_writes_dataset(self, tiny_eegp):
        assert os.path.getsize(tiny_eegp) > 0

    def test_usage_error_exit_1(self, capsys):
        code, _, err = run_cli(capsys, "synth")  # missing --out
        assert code == 1
        assert "required" in err


class TestCwtPreview:
    def test_writes_pgm(self, capsys, tiny_eegp, tmp_path):
        out = tmp_path / "img.pgm"
        code, _, _ = run_cli(capsys, "cwt-preview", "--data", tiny_eegp,
                             "--trial", "0", "--channel", "0", "--out", str(out),
                             "--scales", "16", "--image-size", "32")
        assert code == 0
        data = out.read_bytes()
        assert data.startswith(b"P5\n32 32\n255\n")
        assert len(data) == len(b"P5\n32 32\n255\n") + 32 * 32

    def test_channel_by_name(self, capsys, tiny_eegp, tmp_path):
        out = tmp_path / "img.pgm"
        code, _, _ = run_cli(capsys, "cwt-preview", "--data", tiny_eegp,
                             "--channel", "AF3", "--out", str(out),
                             "--scales", "16", "--image-size", "16")
        assert code == 0

    def test_bad_trial_index(self, capsys, tiny_eegp, tmp_path):
        code, _, err = run_cli(capsys, "cwt-preview", "--data", tiny_eegp,
                               "--trial", "99", "--channel", "0",
                               "--out", str(tmp_path / "x.pgm"))
        assert code == 1
        assert not (tmp_path / "x.pgm").exists()


class TestPca:
    def test_csv_output(self, capsys, tiny_eegp):
        code, out, _ = run_cli(capsys, "pca", "--data", tiny_eegp)
        assert code == 0
        lines = out.strip().split("\n")
        assert lines[0] == "rank,channel_index,channel_name,score,cumulative"
        assert len(lines) == 3  # two channels
        scores = [float(line.split(",")[3]) for line in lines[1:]]
        assert sum(scores) == pytest.approx(1.0, abs=1e-6)


class TestTrain:
    def test_report_files_and_determinism(self, capsys, tiny_eegp, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        for out in (out1, out2):
            code, stdout, _ = run_cli(capsys, "train", "--data", tiny_eegp,
                                      "--subset", "all", "--seed", "3",
                                      "--out", str(out), *FAST_TRAIN)
            assert code == 0
            assert "mean accuracy" in stdout
        blob1 = (out1 / "report.json").read_bytes()
        assert blob1 == (out2 / "report.json").read_bytes()
        assert (out1 / "report.csv").read_bytes() == (out2 / "report.csv").read_bytes()
        assert (out1 / "boxplot.svg").read_bytes() == (out2 / "boxplot.svg").read_bytes()
        payload = json.loads(blob1)
        assert payload["k"] == 2
        csv_header = (out1 / "report.csv").read_text().splitlines()[0]
        assert csv_header == "subset,n_channels,fold1,fold2,mean"

    def test_unknown_subset_exit_1(self, capsys, tiny_eegp, tmp_path):
        out = tmp_path / "r"
        code, _, err = run_cli(capsys, "train", "--data", tiny_eegp,
                               "--subset", "nonexistent", "--out", str(out),
                               *FAST_TRAIN)
        assert code == 1
        assert "unknown subset" in err.lower()
        assert not (out / "report.json").exists()

    def test_missing_data_exit_2(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "train", "--data", str(tmp_path / "none.eegp"),
                               "--out", str(tmp_path / "r"), *FAST_TRAIN)
        assert code == 2

    def test_corrupt_data_exit_2(self, capsys, tmp_path):
        bad = tmp_path / "bad.eegp"
        bad.write_bytes(b"NOPE" + b"\x00" * 64)
        code, _, err = run_cli(capsys, "train", "--data", str(bad),
                               "--out", str(tmp_path / "r"), *FAST_TRAIN)
        assert code == 2
        assert not (tmp_path / "r" / "report.json").exists()

    def test_sam_and_vaq_share_fold_assignment(self, capsys, tiny_eegp, tmp_path):
        reports = {}
        for labels in ("vaq", "sam"):
            out = tmp_path / labels
            code, _, _ = run_cli(capsys, "train", "--data", tiny_eegp,
                                 "--labels", labels, "--seed", "3",
                                 "--out", str(out), *FAST_TRAIN)
            assert code == 0
            reports[labels] = json.loads((out / "report.json").read_text())
        assert reports["vaq"]["fold_of"] == reports["sam"]["fold_of"]
        assert reports["vaq"]["labels"] == "vaq"
        assert reports["sam"]["labels"] == "sam"

    def test_jobs_flag_reproduces_report(self, capsys, tiny_eegp, tmp_path):
        outs = {}
        for jobs in ("1", "2"):
            out = tmp_path / f"j{jobs}"
            code, _, _ = run_cli(capsys, "train", "--data", tiny_eegp,
                                 "--seed", "4", "--jobs", jobs,
                                 "--out", str(out), *FAST_TRAIN)
            assert code == 0
            outs[jobs] = (out / "report.json").read_bytes()
        assert outs["1"] == outs["2"]

    def test_permuted_labels_flag_changes_report(self, capsys, tiny_eegp, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        run_cli(capsys, "train", "--data", tiny_eegp, "--seed", "3",
                "--out", str(out_a), *FAST_TRAIN)
        run_cli(capsys, "train", "--data", tiny_eegp, "--seed", "3",
                "--permute-labels-seed", "13", "--out", str(out_b), *FAST_TRAIN)
        a = json.loads((out_a / "report.json").read_text())
        b = json.loads((out_b / "report.json").read_text())
        assert a["fold_of"] == b["fold_of"]  # folds depend on trials, not labels


class TestEvalAndReport:
    def test_checkpoint_eval_round_trip(self, capsys, tiny_eegp, tmp_path):
        out = tmp_path / "run"
        code, _, _ = run_cli(capsys, "train", "--data", tiny_eegp, "--seed", "5",
                             "--out", str(out), "--save-checkpoints", *FAST_TRAIN)
        assert code == 0
        ckpt = out / "fold0.ckpt"
        assert ckpt.exists()
        code, stdout, _ = run_cli(capsys, "eval", "--model", str(ckpt),
                                  "--data", tiny_eegp)
        assert code == 0
        payload = json.loads(stdout)
        assert payload["metric"] == "accuracy"
        assert 0.0 <= payload["value"] <= 1.0
        assert payload["n_trials"] == 16

    def test_report_regeneration(self, capsys, tiny_eegp, tmp_path):
        out = tmp_path / "run"
        run_cli(capsys, "train", "--data", tiny_eegp, "--seed", "5",
                "--out", str(out), *FAST_TRAIN)
        regen = tmp_path / "regen"
        code, _, _ = run_cli(capsys, "report", "--in", str(out / "report.json"),
                             "--out", str(regen))
        assert code == 0
        assert (regen / "report.csv").read_bytes() == (out / "report.csv").read_bytes()
        assert (regen / "boxplot.svg").read_bytes() == (out / "boxplot.svg").read_bytes()

    def test_eval_on_corrupt_checkpoint_exit_2(self, capsys, tiny_eegp, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"JUNKJUNKJUNK")
        code, _, _ = run_cli(capsys, "eval", "--model", str(bad), "--data", tiny_eegp)
        assert code == 2


class TestDataDirEnv:
    def test_data_dir_fallback(self, capsys, tiny_eegp, tmp_path, monkeypatch):
        monkeypatch.setenv("SCALEVIT_DATA_DIR", os.path.dirname(tiny_eegp))
        out = tmp_path / "img.pgm"
        code, _, _ = run_cli(capsys, "cwt-preview",
                             "--data", os.path.basename(tiny_eegp),
                             "--channel", "0", "--out", str(out),
                             "--scales", "16", "--image-size", "16")
        assert code == 0
