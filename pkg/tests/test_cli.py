import pytest
import yaml

from pufsim.cli import main, sci
from pufsim.data import load_dataset


@pytest.fixture
def config_file(tmp_path, tiny_config):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump({**tiny_config, "seeds": [0], "output_dir": str(tmp_path / "out")}))
    return path


def test_sci():
    assert sci(1.62e11) == "1.62e11"
    assert sci(4.49e7) == "4.49e7"
    assert sci(0) == "0"


def test_validate(config_file, capsys):
    assert main(["validate", str(config_file)]) == 0
    assert "ok" in capsys.readouterr().out


def test_validate_bad_config_names_key(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("clients: 10\nunlearn:\n  targets: [11]\n")
    assert main(["validate", str(bad)]) != 0
    err = capsys.readouterr().err
    assert "unlearn.targets[0]" in err and len(err.strip().splitlines()) == 1


def test_missing_config(capsys):
    assert main(["validate", "does-not-exist.yaml"]) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_usage_error_prints_help(capsys):
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_costs_reference_inputs(capsys):
    assert main(["costs", "configs/cifar100_costs.yaml"]) == 0
    out = capsys.readouterr().out
    retrain = next(line for line in out.splitlines() if line.startswith("Retrain"))
    assert "1.62e11" in retrain and "1.35e15" in retrain and "4.49e7" in retrain


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_costs_formats(fmt, capsys):
    assert main(["costs", "configs/cifar100_costs.yaml", "--format", fmt]) == 0
    out = capsys.readouterr().out
    if fmt == "csv":
        assert out.splitlines()[0] == "method,phase,comm_bytes,comp_flops,storage_bytes,ratio_vs_retrain"
    else:
        assert '"retrain"' in out


def test_gen_data(config_file, tmp_path):
    out = tmp_path / "d.bin"
    assert main(["gen-data", str(config_file), "--out", str(out)]) == 0
    assert load_dataset(out).num_clients == 4


def test_run_twice_identical(config_file, tmp_path):
    assert main(["run", str(config_file), "--out", str(tmp_path / "r1")]) == 0
    assert main(["run", str(config_file), "--out", str(tmp_path / "r2")]) == 0
    assert (tmp_path / "r1/summary.json").read_bytes() == (tmp_path / "r2/summary.json").read_bytes()


def test_jobs_must_be_positive(config_file):
    with pytest.raises(SystemExit):
        main(["run", str(config_file), "--jobs", "0"])
