import json

import numpy as np
import pytest

from snakelab import cli
from snakelab.cli import ConfigError, build_config, main, make_parser


def cfg(argv, env=None):
    return build_config(make_parser().parse_args(argv), env=env or {})


def test_defaults_and_seed_fallback():
    c = cfg(["verify-semigroup"])
    assert c.seed == 0 and c.params["ctilde"] == 2.0 and c.formats == ("json",)
    assert cfg(["verify-semigroup"], env={"SNAKELAB_SEED": "17"}).seed == 17
    assert cfg(["verify-semigroup", "--seed", "3"], env={"SNAKELAB_SEED": "17"}).seed == 3


def test_precedence_cli_over_file_over_default(tmp_path):
    f = tmp_path / "run.ini"
    f.write_text("[common]\nseed = 5\n\n[verify-identity]\neps = 0.4\nreps = 7\n\n"
                 "[verify-mass]\neps = 0.9\n")
    c = cfg(["verify-identity", "--config", str(f)])
    assert (c.seed, c.params["eps"], c.params["reps"]) == (5, 0.4, 7)
    assert c.sources["eps"] == "file" and c.sources["c"] == "default"
    c = cfg(["verify-identity", "--config", str(f), "--eps", "0.6", "--seed", "1"])
    assert (c.seed, c.params["eps"], c.params["reps"]) == (1, 0.6, 7)
    assert c.sources["eps"] == "cli"


def test_eps_and_h_are_interchangeable():
    assert cfg(["verify-tree-law", "--eps", "0.6"]).params["h"] == pytest.approx(0.3)
    assert cfg(["verify-identity", "--h", "0.2"]).params["eps"] == pytest.approx(0.4)


def test_list_and_set_overrides():
    c = cfg(["simulate-oobbm", "--s", "0.1,0.3", "--set", "d=3"])
    assert c.params["s_list"] == [0.1, 0.3] and c.params["d"] == 3


@pytest.mark.parametrize("argv, field", [
    (["verify-mass", "--ctilde", "0"], "ctilde"),
    (["verify-identity", "--eps", "-1"], "eps"),
    (["verify-mass", "--c", "0"], "c"),
    (["verify-identity", "--set", "bogus=1"], "bogus"),
    (["verify-identity", "--set", "d=1.5"], "d"),
    (["emit-figure", "--set", "figure=pie"], "figure"),
    (["verify-coupling", "--set", "s1=0.5"], "s1"),
    (["simulate-oobbm", "--md", "0", "--ma", "0"], "md"),
])
def test_invalid_config_names_the_field(argv, field, capsys, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert field in err


def test_c_zero_allowed_outside_semigroup_commands():
    assert cfg(["verify-identity", "--c", "0"]).params["c"] == 0.0


def test_semigroup_command_writes_report(tmp_path, capsys):
    assert main(["verify-semigroup", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "verify-semigroup.json").read_text())
    assert doc["schema_version"] == 1 and doc["seed"] == 0 and doc["passed"]
    assert doc["config"]["ctilde"] == 2.0 and "workers" not in doc["config"]
    assert "PASS" in capsys.readouterr().out


def test_failed_gate_exits_two(tmp_path, monkeypatch):
    monkeypatch.setitem(cli.V.CHECKS, "verify-semigroup",
                        lambda **kw: dict(passed=False, gates=[dict(name="x", passed=False)],
                                          rows=[]))
    assert main(["verify-semigroup", "--out", str(tmp_path)]) == 2


def test_truncation_budget_exits_three(tmp_path):
    argv = ["sample-excursion", "--h", "0.5", "--set", "max_points=50", "--out", str(tmp_path)]
    assert main(argv) == 3
    assert main(argv + ["--set", "truncation_budget=1"]) == 0


def _bytes(tmp_path, argv, tag):
    out = tmp_path / tag
    code = main(argv + ["--out", str(out), "--format", "json,csv"])
    return code, {p.name: p.read_bytes() for p in sorted(out.iterdir())}


@pytest.mark.parametrize("argv", [
    ["simulate-oobbm", "--eps", "0.2", "--reps", "3", "--s", "0.2,0.5"],
    ["simulate-forward", "--eps", "0.2", "--reps", "3", "--s", "0.2,0.5"],
    ["verify-identity", "--reps", "6", "--set", "dt=0.01"],
])
def test_byte_identical_across_runs_and_workers(tmp_path, argv):
    c1, a = _bytes(tmp_path, argv + ["--workers", "1"], "a")
    c2, b = _bytes(tmp_path, argv + ["--workers", "2"], "b")
    c3, c = _bytes(tmp_path, argv + ["--workers", "1"], "c")
    assert c1 == c2 == c3
    assert a == b == c


def test_csv_schema(tmp_path):
    main(["simulate-oobbm", "--eps", "0.2", "--reps", "2", "--s", "0.3",
          "--format", "csv", "--out", str(tmp_path)])
    lines = (tmp_path / "simulate-oobbm.csv").read_text().splitlines()
    assert lines[0] == "seed,replicate,time,component,count,scaled_mass"
    rows = [r.split(",") for r in lines[1:]]
    assert len(rows) == 2 * 1 * 2
    for r in rows:
        assert r[0] == "0" and r[3] in ("dormant", "active")
        assert float(r[5]) == pytest.approx(int(r[4]) * 0.2)


def test_hand_trace_figure(tmp_path):
    argv = ["emit-figure", "--set", "hand_trace=true", "--format", "svg,json",
            "--out", str(tmp_path)]
    assert main(argv) == 0
    doc = json.loads((tmp_path / "emit-figure.json").read_text())
    edges = sorted((e["Y"], e["Z"]) for e in doc["edges"])
    assert edges == [(0.0, 0.5), (0.5, 0.8), (0.5, 1.0)]
    svg = (tmp_path / "emit-figure.svg").read_text()
    for layer in ("excursion", "erased-contour", "tree", "jumps"):
        assert f'id="{layer}"' in svg
    assert svg.count("data-edge=") == 3


def test_figure_bytes_are_reproducible(tmp_path):
    for fig in ("contour-tree", "age-process", "downcrossings"):
        argv = ["emit-figure", "--set", f"figure={fig}", "--set", "height_cap=2", "--seed", "4"]
        main(argv + ["--out", str(tmp_path / "x")])
        main(argv + ["--out", str(tmp_path / "y")])
        a = (tmp_path / "x" / "emit-figure.svg").read_bytes()
        assert a == (tmp_path / "y" / "emit-figure.svg").read_bytes()
        assert a.startswith(b"<svg")


def test_age_figure_without_jumps_is_min_of_height_and_age():
    argv = ["emit-figure", "--c", "0", "--md", "0", "--set", "height_cap=2", "--seed", "2"]
    p = cfg(argv).params
    real = cli.figure_realization(p)
    prof = cli.evaluate_age_over_contour(real, 0.5)
    assert np.allclose(prof.H, np.minimum(prof.f, 0.5))
    svg = cli.render_svg(real, "age-process", s=0.5)
    assert 'id="age-process"' in svg and "<circle" not in svg


def test_missing_item_is_selector_error(tmp_path, capsys):
    assert main(["emit-figure", "--set", "item=10000", "--out", str(tmp_path)]) == 1
    assert "item" in capsys.readouterr().err


def test_svg_only_for_figures(tmp_path):
    assert main(["verify-semigroup", "--format", "svg", "--out", str(tmp_path)]) == 1


def test_bad_config_file(tmp_path):
    with pytest.raises(ConfigError):
        cfg(["verify-semigroup", "--config", str(tmp_path / "missing.ini")])
