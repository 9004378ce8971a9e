import csv
import json

import pytest

from kimura_mixed import cli
from kimura_mixed.cli import RunConfig, UsageError, build_parser, main
from kimura_mixed.parametrix import ContractionError


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("sub", ["eval-kernel", "solve", "simulate", "validate"])
def test_help_for_every_subcommand(sub, capsys):
    with pytest.raises(SystemExit) as info:
        main([sub, "--help"])
    assert info.value.code == 0
    assert "usage" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv, expected",
    [
        (["--class", "c_reg", "--d", "1", "--e", "1", "--t", "1", "--src", "0,0", "--dst", "1,1"], 0.1353352832),
        (["--class", "c_inf", "--a", "1", "--b", "1", "--t", "1", "--src", "1,1", "--dst", "1,1"], 0.0795774715),
    ],
)
def test_eval_kernel_reference_values(argv, expected, tmp_path):
    out = tmp_path / "k.csv"
    assert main(["eval-kernel", *argv, "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == ["t", "src_x", "src_y", "dst_x", "dst_y", "value", "atom_flags"]
    assert float(rows[1][5]) == pytest.approx(expected, rel=1e-9)


def test_eval_kernel_zero_time_is_usage_error(capsys):
    code = main(["eval-kernel", "--class", "c_reg", "--t", "0", "--src", "0,0", "--dst", "1,1"])
    assert code == 2
    assert "positive" in capsys.readouterr().err


def test_eval_kernel_atom_flags(tmp_path):
    out = tmp_path / "k.csv"
    main(["eval-kernel", "--class", "c_reg", "--t", "1", "--src", "0.3,0.2", "--dst", "0,0.5;0,0;0.4,0.4",
          "--out", str(out)])
    flags = [r[6] for r in _rows(out)[1:]]
    assert flags == ["face0", "corner", ""]


@pytest.mark.parametrize("argv", [["--class", "bogus"], ["--class", "c_reg", "--a", "-1"], []])
def test_eval_kernel_bad_model(argv):
    assert main(["eval-kernel", *argv, "--t", "1", "--src", "0.2,0.2", "--dst", "0.3,0.3"]) == 2


def test_eval_kernel_degenerate_global(tmp_path):
    out = tmp_path / "k.csv"
    main(["eval-kernel", "--operator", "triangle", "--t", "0.05", "--src", "0.5,0.5", "--dst", "0.3,0.3",
          "--out", str(out)])
    row = _rows(out)[1]
    assert row[5] == "0.0" and row[6] == "infinity-edge"


def test_solve_constant_data_stays_constant(tmp_path):
    out = tmp_path / "w.csv"
    code = main(["solve", "--f", "1", "--g", "0", "--T", "0.01", "--points", "0.3,0.3;0.5,0.2", "--out", str(out)])
    assert code == 0
    rows = _rows(out)
    assert rows[0] == ["t", "x", "y", "value"]
    assert [float(r[3]) for r in rows[1:]] == pytest.approx([1.0, 1.0], abs=1e-12)
    meta = json.loads((tmp_path / "w.csv.json").read_text())
    assert meta["method"] == "parametrix" and meta["converged"]
    assert meta["config"]["gamma_prime"] == pytest.approx(0.25)


def test_solve_fd_constant(tmp_path):
    out = tmp_path / "w.csv"
    main(["solve", "--method", "fd", "--f", "1", "--T", "0.01", "--n", "16", "--dt", "2e-3",
          "--points", "0.3,0.3", "--out", str(out)])
    assert float(_rows(out)[1][3]) == pytest.approx(1.0, abs=1e-10)


def test_solve_contraction_failure_suggests_fix(monkeypatch, capsys):
    def boom(*a, **k):
        raise ContractionError("no contraction", 1.7)

    monkeypatch.setattr("kimura_mixed.parametrix.neumann_solve", boom)
    code = main(["solve", "--g", "1", "--T", "0.05", "--points", "0.3,0.3"])
    assert code == cli.EXIT_CONTRACTION
    err = capsys.readouterr().err
    assert "ratio" in err and "reduce" in err


@pytest.mark.parametrize("text", ["x+", "z*x", "t"])
def test_solve_bad_initial_data(text):
    assert main(["solve", "--f", text, "--T", "0.01", "--points", "0.3,0.3"]) == 2


def test_solve_malformed_config(tmp_path, capsys):
    cfg = tmp_path / "op.ini"
    cfg.write_text("[operator]\nbuiltin = triangle\nbogus = 1\n")
    assert main(["solve", "--operator", str(cfg), "--T", "0.01", "--points", "0.3,0.3"]) == 2
    assert "bogus" in capsys.readouterr().err


def test_solve_config_run_section(tmp_path):
    cfg = tmp_path / "op.ini"
    cfg.write_text("[operator]\nbuiltin = triangle\n[run]\nt = 0.01\ngamma = 0.4\n")
    out = tmp_path / "w.csv"
    assert main(["solve", "--operator", str(cfg), "--f", "1", "--points", "0.3,0.3", "--out", str(out)]) == 0
    meta = json.loads((tmp_path / "w.csv.json").read_text())
    assert meta["config"]["T"] == 0.01 and meta["config"]["gamma"] == 0.4


def test_unknown_operator():
    assert main(["solve", "--operator", "nowhere.ini", "--T", "0.01"]) == 2


@pytest.mark.parametrize(
    "kw, ok",
    [
        ({"gamma": 0.5}, True),
        ({"gamma": 0.5, "gamma_prime": 0.25}, True),
        ({"gamma": 1.0}, False),
        ({"gamma": 0.0}, False),
        ({"gamma": 0.7, "gamma_prime": 0.3}, False),
        ({"gamma": 0.5, "gamma_prime": 0.6}, False),
        ({"epsilon": 0.0}, False),
        ({"T": -1.0}, False),
        ({"N": 5}, False),
    ],
)
def test_run_config_validation(kw, ok):
    if ok:
        RunConfig(**kw)
    else:
        with pytest.raises(UsageError):
            RunConfig(**kw)


@pytest.mark.parametrize("gamma, expected", [(0.5, 0.25), (0.2, 0.2), (0.9, 0.05)])
def test_run_config_default_gamma_prime(gamma, expected):
    assert RunConfig(gamma=gamma).gamma_prime == pytest.approx(expected)


def test_simulate_requires_seed(capsys):
    assert main(["simulate", "--start", "0.3,0.3", "--T", "0.01", "--n", "2"]) == 2
    assert "seed" in capsys.readouterr().err


def test_simulate_is_reproducible(tmp_path):
    paths = []
    for k in range(2):
        out = tmp_path / f"p{k}.csv"
        assert main(["simulate", "--start", "0.3,0.3", "--T", "0.01", "--n", "3", "--dt", "1e-3", "--seed", "7",
                     "--out", str(out)]) == 0
        paths.append(out.read_text())
    assert paths[0] == paths[1]
    assert paths[0].splitlines()[0] == "t,x,y,path_id"


def test_threads_env_fallback(monkeypatch):
    args = build_parser().parse_args(["validate", "--suite", "kernels"])
    monkeypatch.setenv("KIMURA_THREADS", "3")
    assert cli._threads(args) == 3
    args = build_parser().parse_args(["--threads", "2", "validate", "--suite", "kernels"])
    assert cli._threads(args) == 2


def test_validate_unknown_suite():
    assert main(["validate", "--suite", "nope"]) == 2


def test_validate_writes_reports(tmp_path, monkeypatch):
    from kimura_mixed.validation import ValidationReport

    reps = [ValidationReport("a", {}, 0.1, 1.0, True, 0.0), ValidationReport("b", {}, 2.0, 1.0, False, 0.0)]
    monkeypatch.setattr("kimura_mixed.validation.run_suite", lambda suite, config: reps)
    jl, cs = tmp_path / "r.jsonl", tmp_path / "r.csv"
    code = main(["validate", "--suite", "kernels", "--out", str(jl), "--csv", str(cs)])
    assert code != 0
    lines = [json.loads(line) for line in jl.read_text().splitlines()]
    assert [d["check_id"] for d in lines] == ["a", "b"]
    assert _rows(cs)[0][:2] == ["check_id", "verdict"]
