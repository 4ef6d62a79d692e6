import json
import math
import subprocess
import sys

import pytest

from kraichnan_lab.cli import UsageError, build_config, main, parse_args, run_experiment


def _run(tmp_path, name, *args):
    out = tmp_path / name
    assert main(["--out", str(out), *args]) == 0
    return out, json.loads((out / "manifest.json").read_text())


def test_covariance_validate_constants(tmp_path):
    out, man = _run(tmp_path, "cv", "--experiment", "covariance_validate", "--alpha=0.5")
    consts = json.loads((out / "constants.json").read_text())
    assert consts["b_l_at_zero"] == pytest.approx(math.pi, abs=1e-6)
    assert consts["b_n_at_zero"] == pytest.approx(math.pi, abs=1e-6)
    assert man["status"] == "complete"
    assert man["config"]["fields"]["alpha"] == 0.5
    assert man["code_version"] and len(man["seeds"]) == 1


def test_reruns_are_byte_identical(tmp_path):
    args = ["--experiment", "energy_budget", "--realizations", "2", "--seed", "9", "--delta=0.2",
            "--box_len=6.0", "--grid_n=64", "--steps=20", "--c_hat=1.0"]
    a, _ = _run(tmp_path, "a", *args)
    b, _ = _run(tmp_path, "b", *args, "--threads", "2")
    for name in ("ledger_0000.csv", "ledger_0001.csv", "budget.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["seeds"] == mb["seeds"] and ma["summary"] == mb["summary"]


def test_two_point_dimension(tmp_path):
    out, man = _run(tmp_path, "tp", "--experiment", "two_point", "--paths=2000", "--dt=1e-4")
    res = json.loads((out / "bessel_dimension.json").read_text())
    assert res["target"] == pytest.approx(8 / 3)
    assert abs(res["d_eff"] - 8 / 3) < 5 * res["stderr"] + 0.05 * 8 / 3
    assert (out / "path_statistics.csv").read_text().startswith("t,mean_R,")


@pytest.mark.parametrize("experiment,args,artifact", [
    ("multiplier_profile", ["--delta=0.1", "--box_len=8.0", "--grid_n=256"], "multiplier.csv"),
    ("coupling", ["--steps=5", "--eps=[0.0, 0.001]"], "coupling.json"),
    ("picard", ["--particles=30", "--iterations=2", "--T=0.05", "--gap_stride=1"], "picard_gaps.csv"),
    ("product_check", ["--samples=20"], "product_ratios.csv"),
])
def test_small_experiments_write_artifacts(tmp_path, experiment, args, artifact):
    out, man = _run(tmp_path, experiment, "--experiment", experiment, *args)
    assert (out / artifact).exists()
    assert man["status"] == "complete"


def test_failed_run_leaves_manifest(tmp_path, capsys):
    out = tmp_path / "bad"
    assert main(["--experiment", "product_check", "--alpha=0.6", "--out", str(out)]) == 1
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "failed" and "DiagnosticsError" in man["error"]
    assert "product_check" in capsys.readouterr().err


@pytest.mark.parametrize("raw,field", [
    ({"experiment": "nope"}, "experiment"),
    ({"experiment": "picard", "bogus": 1}, "bogus"),
    ({"experiment": "picard", "seed": "x"}, "seed"),
    ({"experiment": "picard", "seed": -1}, "seed"),
    ({"experiment": "picard", "alpha": 1.5}, "alpha"),
    ({"experiment": "picard", "delta": 0.0}, "delta"),
    ({"experiment": "picard", "realizations": 0}, "realizations"),
])
def test_usage_errors_name_the_field(raw, field):
    with pytest.raises(UsageError, match=field):
        build_config(raw)


def test_parse_args_overrides_and_config_file(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"experiment": "two_point", "alpha": 0.75, "seed": 4}))
    cfg = parse_args(["--config", str(path), "--seed", "5", "--paths=1500", "--scheme=bessel"])
    f = cfg.resolved()
    assert cfg.seed == 5 and f["alpha"] == 0.75 and f["paths"] == 1500 and f["scheme"] == "bessel"
    with pytest.raises(SystemExit) as info:
        parse_args(["--experiment", "picard", "--wat=1"])
    assert info.value.code == 2 and "wat" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        parse_args(["--experiment", "picard", "stray"])


def test_module_entry_point(tmp_path):
    out = tmp_path / "m"
    proc = subprocess.run([sys.executable, "-m", "kraichnan_lab", "--experiment", "product_check",
                           "--samples=5", "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip().endswith("manifest.json")


def test_run_experiment_accepts_dict(tmp_path):
    assert run_experiment({"experiment": "product_check", "samples": 3, "output_dir": str(tmp_path / "d")}) == 0
