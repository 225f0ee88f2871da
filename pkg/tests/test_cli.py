import subprocess
import sys

import pytest

from dfmr import cli
from dfmr.experiment import format_config, read_table
from helpers import cartesian_config


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(format_config(cartesian_config(snr_db=20, epochs=5)))
    return path


def test_selftest_passes(capsys):
    assert cli.main(["selftest"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out and all(line.startswith("PASS") for line in out)


def test_run_then_compare(tmp_path, config_file, capsys):
    out = tmp_path / "run"
    code = cli.main(["run", "--config", str(config_file), "--out", str(out),
                     "--method", "gridding", "--method", "lowrank(4)"])
    assert code == 0
    methods = {r["method"] for r in read_table(out / "metrics.csv")}
    assert methods == {"gridding", "lowrank(4)"}
    assert cli.main(["compare", str(out), "--out", str(tmp_path / "cmp")]) == 0
    assert (tmp_path / "cmp" / "compare.csv").exists()
    assert "no ordering violations" in capsys.readouterr().out


def test_staged_pipeline_matches_run(tmp_path, config_file):
    staged, direct = tmp_path / "staged", tmp_path / "direct"
    base = ["--config", str(config_file)]
    assert cli.main(["simulate", *base, "--out", str(staged)]) == 0
    assert cli.main(["recon", *base, "--out", str(staged), "--method", "lowrank2"]) == 0
    assert cli.main(["eval", *base, "--out", str(staged)]) == 0
    assert cli.main(["run", *base, "--out", str(direct), "--method", "lowrank2"]) == 0
    assert (staged / "metrics.csv").read_bytes() == (direct / "metrics.csv").read_bytes()


def test_seed_override(tmp_path, config_file):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", "--config", str(config_file), "--out", str(a), "--method", "gridding"]) == 0
    assert cli.main(["run", "--config", str(config_file), "--out", str(b), "--method", "gridding",
                     "--seed", "9"]) == 0
    assert (a / "metrics.csv").read_bytes() != (b / "metrics.csv").read_bytes()
    # different experiments cannot be compared: configuration error
    assert cli.main(["compare", str(a), str(b)]) == 2


def test_strict_compare_exit_code(tmp_path, config_file):
    a, b = tmp_path / "a", tmp_path / "b"
    lowrank = config_file.parent / "lowrank.cfg"
    lowrank.write_text(format_config(cartesian_config(snr_db=20, epochs=200, lowrank_lr=0.05)))
    dfm = config_file.parent / "dfm.cfg"
    dfm.write_text(format_config(cartesian_config(snr_db=20, epochs=1)))
    assert cli.main(["run", "--config", str(lowrank), "--out", str(a), "--method", "lowrank4"]) == 0
    assert cli.main(["run", "--config", str(dfm), "--out", str(b), "--method", "dfm"]) == 0
    assert cli.main(["compare", str(a), str(b)]) == 0
    assert cli.main(["compare", "--strict", str(a), str(b)]) == 1


@pytest.mark.parametrize("argv", [["bogus"], ["run", "--seed", "x"], ["recon", "--method"]])
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 2


def test_bad_config_value_exit_2(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("size = huge\n")
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    bad.write_text("method = nonsense\n")
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_io_errors_exit_4(tmp_path, config_file):
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 4
    assert cli.main(["eval", "--config", str(config_file), "--out", str(tmp_path / "empty")]) == 4
    broken = tmp_path / "broken"
    broken.mkdir()
    (broken / "kspace.dfmr").write_bytes(b"garbage")
    assert cli.main(["recon", "--config", str(config_file), "--out", str(broken)]) == 4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_abort_exit_3(tmp_path):
    cfg = tmp_path / "diverge.cfg"
    cfg.write_text(format_config(cartesian_config(snr_db=20, epochs=50, lowrank_lr=1e200)))
    code = cli.main(["recon", "--config", str(cfg), "--out", str(tmp_path / "o"),
                     "--method", "lowrank4"])
    assert code == 3


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "dfmr.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "selftest" in res.stdout
