import json
from pathlib import Path

import numpy as np
import pytest

from spurlab import cli
from spurlab import verify as V

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """
[distribution]
kind = toy
gamma_radius = 2.0

[trainer]
max_steps = 5
gradient_source = empirical

[experiment]
n_samples = 500
n_test = 500
seeds = 0, 1
source_max_steps = 300
"""


def _write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_shipped_configs_load():
    for path in sorted(CONFIGS.glob("*.ini")):
        cli.load_config(str(path))


def test_load_config_defaults():
    cfg = cli.load_config(None)
    assert cfg["trainer"]["eta"] == 0.5
    assert cfg["distribution"]["gamma_radius"] == "auto"
    assert cfg["concentration"]["n_values"] == [10**3, 10**4, 10**5, 10**6]


@pytest.mark.parametrize("text", [
    "[trainer]\nlearning_rate = 0.1\n",
    "[optimizer]\neta = 0.1\n",
    "[trainer]\neta = -1\n",
    "[trainer]\neta = nan\n",
    "[trainer]\nvariant = adam\n",
    "[distribution]\ncorr_prob = 1.5\n",
    "not an ini file",
])
def test_bad_config_exit_2(tmp_path, text):
    assert cli.main(["simulate", "--config", _write(tmp_path, text),
                     "--out", str(tmp_path / "o")]) == cli.EXIT_USAGE


def test_missing_config_and_bad_args(tmp_path):
    assert cli.main(["simulate", "--config", str(tmp_path / "none.ini")]) == cli.EXIT_USAGE
    assert cli.main(["train"]) == cli.EXIT_USAGE
    assert cli.main(["simulate", "--suite", "kernels", "--out", str(tmp_path)]) == cli.EXIT_USAGE


def test_verify_unknown_suite(tmp_path):
    assert cli.main(["verify", "--suite", "bogus", "--out", str(tmp_path)]) == cli.EXIT_USAGE


def test_verify_examples_suite(tmp_path):
    rc = cli.main(["verify", "--suite", "examples", "--out", str(tmp_path)])
    assert rc == cli.EXIT_OK
    lines = (tmp_path / "verify_summary.csv").read_text().splitlines()
    assert lines[0] == "name,status,worst_witness,tolerance"
    names = [l.split(",")[0] for l in lines[1:]]
    assert "example1" in names and "example2" in names
    for n in names:
        assert (tmp_path / "witnesses" / f"{n}.csv").exists()


def test_verify_failure_exit_1(tmp_path, monkeypatch):
    bad = V.VerificationReport("broken", V.FAIL, (V.Witness((0.0,), 1.0, 0.0),))
    monkeypatch.setattr(V, "run_suite", lambda *a, **k: [bad])
    assert cli.main(["verify", "--out", str(tmp_path)]) == cli.EXIT_CHECK
    assert "broken,fail" in (tmp_path / "verify_summary.csv").read_text()


def test_numeric_abort_exit_3(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise cli.NumericAbort(4, "gradient")
    monkeypatch.setattr(cli, "run", boom)
    cfg = _write(tmp_path, SMALL)
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_NUMERIC


def test_simulate_outputs_and_determinism(tmp_path):
    cfg = _write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", cfg, "--out", str(a)]) == 0
    assert cli.main(["simulate", "--config", cfg, "--out", str(b)]) == 0
    for name in ("trajectory_0.csv", "trajectory_1.csv", "summary.json", "report.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    summary = json.loads((a / "summary.json").read_text())
    assert [r["seed"] for r in summary["runs"]] == [0, 1]
    assert (a / "report.svg").read_text().startswith("<svg")


def test_simulate_single_seed(tmp_path):
    cfg = _write(tmp_path, SMALL)
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path), "--seed", "7"]) == 0
    assert (tmp_path / "trajectory_7.csv").exists()
    assert not (tmp_path / "trajectory_0.csv").exists()


def test_thread_count_does_not_change_results(tmp_path, monkeypatch):
    cfg = _write(tmp_path, SMALL)
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "one")])
    monkeypatch.setenv("SPURLAB_THREADS", "2")
    cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "two")])
    for name in ("trajectory_0.csv", "trajectory_1.csv", "summary.json"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


def test_bad_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("SPURLAB_THREADS", "0")
    cfg = _write(tmp_path, SMALL)
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == cli.EXIT_USAGE


def test_surrogate_compare(tmp_path):
    cfg = _write(tmp_path, SMALL)
    assert cli.main(["surrogate-compare", "--config", cfg, "--out", str(tmp_path),
                     "--seed", "0"]) == 0
    assert (tmp_path / "trajectory_exp_0.csv").exists()
    assert (tmp_path / "trajectory_ent_0.csv").exists()
    tab = cli.surrogate_ratio_table()
    assert tab[:, 3].min() == pytest.approx(np.log(2), rel=1e-12)


def test_population_source_rejects_ent_surrogate():
    cfg = cli.load_config(None)
    cfg["trainer"]["gradient_source"] = "population"
    cfg["distribution"]["gamma_radius"] = 2.0
    with pytest.raises(cli.ConfigError):
        cli.run_toy(cfg, 0, "ent")


def test_concentration_needs_four_sizes(tmp_path):
    cfg = _write(tmp_path, "[concentration]\nn_values = 1000\ntrials = 2\n")
    assert cli.main(["concentration", "--config", cfg, "--out", str(tmp_path)]) == cli.EXIT_USAGE


def test_concentration_small(tmp_path):
    cfg = _write(tmp_path, "[concentration]\nn_values = 100, 400, 1600, 6400\ntrials = 4\n"
                           "n_classifiers = 3\n")
    assert cli.main(["concentration", "--config", cfg, "--out", str(tmp_path)]) == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    assert -0.8 < s["slope"] < -0.2
    assert (tmp_path / "deviation.csv").read_text().startswith("n,trial,sup_dev")


def test_gaussian_kind(tmp_path):
    cfg = _write(tmp_path, "[distribution]\nkind = gaussian\ngamma_radius = 3\nd1 = 1\n"
                           "[trainer]\nmax_steps = 10\ngradient_source = population\n"
                           "[experiment]\nseeds = 0\nn_test = 200\n")
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    s = json.loads((tmp_path / "summary.json").read_text())["runs"][0]
    assert s["final_norm_w2"] < s["initial_norm_w2"]


def test_svg_chart_handles_log_axes():
    svg = cli.svg_line_chart([{"title": "t", "xlabel": "x", "ylabel": "y", "logx": True,
                               "logy": True, "series": {"a": ([1, 10, 100], [1.0, 0.3, 0.1])}}])
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_atomic_write(tmp_path):
    p = tmp_path / "sub" / "f.txt"
    cli.atomic_write(p, "hello\n")
    assert p.read_text() == "hello\n"
    assert [x.name for x in p.parent.iterdir()] == ["f.txt"]
