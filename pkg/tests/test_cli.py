import json
import subprocess
import sys

import pytest

from accentrec.cli import EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, RunConfig, dispatch
from accentrec.trainer import METRICS_HEADER

TINY_FLAGS = [
    "--syn-classes", "2", "--syn-utts-per-class", "8", "--syn-speakers", "4", "--syn-dev-speakers", "1",
    "--syn-min-frames", "40", "--syn-max-frames", "80", "--syn-dim", "8",
    "--stages", "2", "--channels", "2,3", "--hidden", "4", "--max-epochs", "2", "--batch-size", "8",
]


def run(capsys, *argv):
    code = dispatch(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    flags = TINY_FLAGS + ["--data-dir", str(root / "data"), "--out-dir", str(root / "run")]
    assert dispatch(["gen-data", *flags]) == EXIT_OK
    assert dispatch(["train", *flags]) == EXIT_OK
    return root, flags


class TestUsage:
    def test_no_arguments(self, capsys):
        code, _, err = run(capsys)
        assert code == EXIT_USAGE and "usage" in err.lower()

    def test_unknown_subcommand(self, capsys):
        code, _, err = run(capsys, "frobnicate")
        assert code == EXIT_USAGE and "usage" in err.lower()

    def test_help_lists_every_key(self, capsys):
        code, out, _ = run(capsys, "train", "--help")
        assert code == EXIT_OK
        for key in RunConfig.__dataclass_fields__:
            assert "--" + key.replace("_", "-") in out

    def test_help_hides_corruption_flag(self, capsys):
        _, out, _ = run(capsys, "gradcheck", "--help")
        assert "corrupt" not in out


class TestValidation:
    def test_bad_value(self, capsys):
        code, _, err = run(capsys, "gen-data", "--lr", "abc")
        assert code == EXIT_DATA and "lr" in err

    def test_unknown_config_key(self, capsys, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"learning_rate": 0.1}))
        code, _, err = run(capsys, "gen-data", "--config", str(tmp_path / "c.json"))
        assert code == EXIT_DATA and "learning_rate" in err

    def test_config_file_then_flags(self, capsys, tmp_path):
        from accentrec.cli import build_parser, resolve_config

        (tmp_path / "c.json").write_text(json.dumps({"lr": 0.5, "decay": 0.5}))
        args = build_parser().parse_args(["train", "--config", str(tmp_path / "c.json"), "--lr", "0.2"])
        cfg = resolve_config(args)
        assert (cfg.lr, cfg.decay, cfg.patience) == (0.2, 0.5, 3)

    def test_missing_checkpoint(self, capsys, tmp_path):
        code, _, err = run(capsys, "eval", "--out-dir", str(tmp_path), "--data-dir", str(tmp_path))
        assert code == EXIT_DATA and err.startswith("error:")

    def test_missing_data(self, capsys, tmp_path):
        code, _, _ = run(capsys, "train", "--data-dir", str(tmp_path / "none"))
        assert code == EXIT_DATA


class TestChecks:
    def test_corrupted_gradient_fails(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--grad-seeds", "1", "--corrupt-gradient")
        assert code == EXIT_NUMERICAL and "FAIL" in out

    def test_gradcheck_passes(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--grad-seeds", "1")
        assert code == EXIT_OK and "FAIL" not in out and "end_to_end" in out

    def test_ctc_oracle(self, capsys):
        code, out, _ = run(capsys, "ctc-oracle", "--oracle-grids", "3")
        assert code == EXIT_OK and out.startswith("PASS")


class TestPipeline:
    def test_train_outputs(self, trained):
        root, _ = trained
        lines = (root / "run" / "metrics.csv").read_text().splitlines()
        assert lines[0] == METRICS_HEADER and len(lines) == 3
        assert (root / "run" / "model.ckpt").exists()
        saved = json.loads((root / "run" / "config.json").read_text())
        assert saved["hidden"] == 4 and saved["channels"] == "2,3"

    def test_eval(self, trained, capsys):
        root, flags = trained
        code, out, _ = run(capsys, "eval", *flags)
        res = json.loads(out)
        assert code == EXIT_OK and res["split"] == "dev" and 0.0 <= res["accuracy"] <= 1.0
        assert sum(map(sum, res["confusion"])) == res["n"]

    def test_export(self, trained, capsys):
        root, flags = trained
        code, out, _ = run(capsys, "export-embeddings", *flags, "--split", "train")
        res = json.loads(out)
        assert code == EXIT_OK and res["columns"] == 4 + 2
        assert len(open(res["path"]).read().splitlines()) == res["rows"] + 1

    def test_export_needs_bottleneck(self, trained, capsys):
        _, flags = trained
        code, _, err = run(capsys, "export-embeddings", *flags, "--embed-dim", "3")
        assert code == EXIT_DATA and "bottleneck" in err

    def test_retraining_is_byte_identical(self, trained, tmp_path):
        root, flags = trained
        again = flags + ["--out-dir", str(tmp_path)]
        assert dispatch(["train", *again]) == EXIT_OK
        assert (tmp_path / "model.ckpt").read_bytes() == (root / "run" / "model.ckpt").read_bytes()
        assert (tmp_path / "metrics.csv").read_bytes() == (root / "run" / "metrics.csv").read_bytes()


class TestEntryPoint:
    def test_module_invocation(self):
        proc = subprocess.run([sys.executable, "-m", "accentrec", "nope"], capture_output=True, text=True)
        assert proc.returncode == EXIT_USAGE
