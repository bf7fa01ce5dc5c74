"""End-to-end checks of the command-line front end.

Every test drives ``main(argv)`` directly and inspects exit codes, captured
streams, and output files.  The synthetic front fixture keeps two criteria
live (the rest constant): a and c are hull vertices, b is non-dominated but
above the hull, d is dominated.
"""

import os

import numpy as np
import pytest

from metasolve.cli import main
from metasolve.moo import CRITERIA, PerformanceVector, load_records, save_records


@pytest.fixture
def front_csv(tmp_path):
    # the dominated row comes first so record indices and front positions
    # disagree; indexing mixups between the two then surface as failures
    path = tmp_path / "front.csv"
    save_records(
        path,
        [
            ("d", PerformanceVector(0.5, 1.5, 1.0, 1.0, 1.0, 1.0)),
            ("a", PerformanceVector(0.0, 1.0, 1.0, 1.0, 1.0, 1.0)),
            ("b", PerformanceVector(0.6, 0.6, 1.0, 1.0, 1.0, 1.0)),
            ("c", PerformanceVector(1.0, 0.0, 1.0, 1.0, 1.0, 1.0)),
        ],
    )
    return str(path)


@pytest.fixture
def singleton_csv(tmp_path):
    path = tmp_path / "single.csv"
    save_records(path, [("only", PerformanceVector(1.0, 2.0, 3.0, 4.0, 5.0, 6.0))])
    return str(path)


def _solve_args(**extra):
    args = [
        "solve", "--n", "9", "--seed", "2", "--dt", "0.125", "--t-end", "0.5",
        "--basis", "geometric", "--krylov", "cg", "--smoother", "ssor",
        "--strategy", "1-1-1", "--levels", "2",
    ]
    for key, value in extra.items():
        args += [f"--{key.replace('_', '-')}", str(value)]
    return args


def test_mesh_info(capsys):
    assert main(["mesh-info", "--n", "13", "--levels", "3"]) == 0
    out = capsys.readouterr().out
    assert "interior        121" in out
    assert "13 -> 7 -> 4" in out


def test_mesh_info_dead_chain(capsys):
    assert main(["mesh-info", "--n", "11", "--levels", "3"]) == 0
    out = capsys.readouterr().out
    assert "unavailable" in out


def test_grf_sample_respects_floor(tmp_path, capsys):
    out_path = tmp_path / "field.csv"
    rc = main(["grf-sample", "--n", "9", "--seed", "4", "--floor", "0.1",
               "--output", str(out_path)])
    assert rc == 0
    rows = out_path.read_text().splitlines()
    assert rows[0] == "x,y,value"
    values = np.array([float(line.split(",")[2]) for line in rows[1:]])
    assert values.size == 81
    assert values.min() >= 0.1


def test_grf_sample_env_seed(tmp_path, capsys, monkeypatch):
    flagged = tmp_path / "flagged.csv"
    from_env = tmp_path / "from_env.csv"
    assert main(["grf-sample", "--n", "9", "--seed", "7", "--output", str(flagged)]) == 0
    monkeypatch.setenv("METASOLVE_SEED", "7")
    assert main(["grf-sample", "--n", "9", "--output", str(from_env)]) == 0
    assert flagged.read_text() == from_env.read_text()


def test_env_seed_garbage_rejected(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("METASOLVE_SEED", "not-a-seed")
    rc = main(["grf-sample", "--n", "9", "--output", str(tmp_path / "f.csv")])
    assert rc == 1
    assert "METASOLVE_SEED" in capsys.readouterr().err


def test_solve_prints_criteria(capsys):
    assert main(_solve_args()) == 0
    out = capsys.readouterr().out
    lines = dict(line.split(None, 1) for line in out.splitlines())
    for name in CRITERIA:
        assert name in lines
    assert float(lines["rel_error"]) < 1e-9
    assert int(lines["macs"]) > 0


def test_solve_env_seed_matches_flag(capsys, monkeypatch):
    assert main(_solve_args()) == 0
    flagged = capsys.readouterr().out
    monkeypatch.setenv("METASOLVE_SEED", "2")
    args = _solve_args()
    del args[args.index("--seed"): args.index("--seed") + 2]
    assert main(args) == 0
    from_env = capsys.readouterr().out

    def stable(text):
        return [line for line in text.splitlines()
                if not line.startswith(("wall_seconds", "setup_seconds"))]

    assert stable(flagged) == stable(from_env)


def test_solve_reports_divergence(capsys):
    rc = main(_solve_args(basis="none", maxit="2"))
    assert rc == 1
    assert capsys.readouterr().err != ""


def test_solve_rejects_bad_strategy(capsys):
    rc = main(_solve_args(strategy="3+3"))
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_pareto_outputs(front_csv, capsys):
    assert main(["pareto", front_csv]) == 0
    out = capsys.readouterr().out
    assert "3 of 4" in out
    members = load_records(front_csv.replace(".csv", "_pareto.csv"))
    assert [cid for cid, _ in members] == ["a", "b", "c"]
    projection = open(front_csv.replace(".csv", "_projection.csv")).read().splitlines()
    assert projection[0] == "# degenerate: peak_megabytes"
    assert projection[1] == "config_id,wall_seconds,rel_error,peak_megabytes"
    assert projection[2].split(",") == ["a", "1.0", "0.0", "1.0"]


def test_pareto_projection_order_follows_request(front_csv, tmp_path):
    proj = tmp_path / "proj.csv"
    rc = main(["pareto", front_csv, "--projection", "macs,iterations,rel_error",
               "--projection-out", str(proj),
               "--pareto-out", str(tmp_path / "members.csv")])
    assert rc == 0
    rows = proj.read_text().splitlines()
    assert rows[0] == "# degenerate: macs,iterations"
    assert rows[1] == "config_id,macs,iterations,rel_error"
    assert rows[2].split(",") == ["a", "1.0", "1.0", "0.0"]


def test_pareto_unknown_criterion(front_csv, capsys):
    rc = main(["pareto", front_csv, "--projection", "wall_seconds,rel_error,bogus"])
    assert rc == 1
    err = capsys.readouterr().err
    assert "bogus" in err
    for name in CRITERIA:
        assert name in err


def test_pareto_needs_three_names(front_csv, capsys):
    rc = main(["pareto", front_csv, "--projection", "wall_seconds,rel_error"])
    assert rc == 1
    assert "3" in capsys.readouterr().err


def test_pareto_singleton(singleton_csv, capsys):
    assert main(["pareto", singleton_csv]) == 0
    assert "1 of 1" in capsys.readouterr().out
    members = load_records(singleton_csv.replace(".csv", "_pareto.csv"))
    assert [cid for cid, _ in members] == ["only"]


def test_pareto_missing_file(tmp_path, capsys):
    rc = main(["pareto", str(tmp_path / "absent.csv")])
    assert rc == 1
    assert "absent.csv" in capsys.readouterr().err


def test_prefer_table(front_csv, capsys):
    rc = main(["prefer", front_csv, "--weights", "0.5,0.5,0,0,0,0", "--k", "3"])
    assert rc == 0
    rows = [line.split() for line in capsys.readouterr().out.splitlines()]
    assert rows[0][:3] == ["rank", "config_id", "score"]
    # a and c tie at 0.5 and sort by id; b scores 0.6
    assert [row[1] for row in rows[1:]] == ["a", "c", "b"]
    assert float(rows[1][2]) == pytest.approx(0.5)
    assert float(rows[3][2]) == pytest.approx(0.6)


def test_prefer_vertex_weights_pick_minimizer(front_csv, capsys):
    assert main(["prefer", front_csv, "--weights", "1,0,0,0,0,0", "--k", "1"]) == 0
    assert capsys.readouterr().out.splitlines()[1].split()[1] == "a"
    assert main(["prefer", front_csv, "--weights", "0,1,0,0,0,0", "--k", "1"]) == 0
    assert capsys.readouterr().out.splitlines()[1].split()[1] == "c"


def test_prefer_two_member_uniform(tmp_path, capsys):
    path = tmp_path / "two.csv"
    save_records(
        path,
        [
            ("wide", PerformanceVector(0.0, 1.0, 1.0, 1.0, 1.0, 1.0)),
            ("slim", PerformanceVector(1.0, 0.0, 0.0, 1.0, 1.0, 1.0)),
        ],
    )
    weights = ",".join(["0.16666666666666666"] * 5 + ["0.1666666666666667"])
    assert main(["prefer", str(path), "--weights", weights, "--k", "1"]) == 0
    # slim is rescaled-better in two of the three live criteria
    assert capsys.readouterr().out.splitlines()[1].split()[1] == "slim"


def test_prefer_off_simplex(front_csv, capsys):
    rc = main(["prefer", front_csv, "--weights", "0.5,0.5,0,0,0,0.1"])
    assert rc == 1
    assert "1.1" in capsys.readouterr().err


def test_prefer_rejects_negative_and_short(front_csv, capsys):
    assert main(["prefer", front_csv, "--weights", "1.5,-0.5,0,0,0,0"]) == 1
    assert "nonnegative" in capsys.readouterr().err
    assert main(["prefer", front_csv, "--weights", "1,0,0"]) == 1
    assert "6" in capsys.readouterr().err


def test_prefer_k_clamped(front_csv, capsys):
    rc = main(["prefer", front_csv, "--weights", "1,0,0,0,0,0", "--k", "9"])
    assert rc == 0
    captured = capsys.readouterr()
    assert "showing all" in captured.err
    assert len(captured.out.splitlines()) == 4


def test_prefer_singleton(singleton_csv, capsys):
    rc = main(["prefer", singleton_csv, "--weights", "1,0,0,0,0,0"])
    assert rc == 0
    captured = capsys.readouterr()
    assert "single-member front" in captured.err
    assert captured.out.splitlines()[1].split()[1] == "only"


def test_rediscover_hull_vertex(front_csv, capsys):
    rc = main(["rediscover", front_csv, "c"])
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    assert [line.split(" = ")[0] for line in lines[:6]] == [
        f"lambda_{name}" for name in CRITERIA
    ]
    weights = np.array([float(line.split(" = ")[1]) for line in lines[:6]])
    assert weights.sum() == pytest.approx(1.0)
    # all mass on wall_seconds, where c is best
    assert weights[1] == pytest.approx(1.0)
    assert lines[6].startswith("verified:")
    assert "c" in lines[6]


def test_rediscover_above_hull(front_csv, capsys):
    rc = main(["rediscover", front_csv, "b"])
    assert rc == 0
    assert "infeasible (nonconvex region)" in capsys.readouterr().out


def test_rediscover_dominated(front_csv, capsys):
    rc = main(["rediscover", front_csv, "d"])
    assert rc == 1
    assert "dominated" in capsys.readouterr().err


def test_rediscover_unknown_id(front_csv, capsys):
    rc = main(["rediscover", front_csv, "zzz"])
    assert rc == 1
    err = capsys.readouterr().err
    assert "unknown id" in err
    assert "dominated" not in err


def test_rediscover_singleton(singleton_csv, capsys):
    rc = main(["rediscover", singleton_csv, "only"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "lambda_rel_error" in out
    assert "only Pareto member" in out


def _write_manifest(tmp_path):
    path = tmp_path / "grid.txt"
    path.write_text(
        "n = 9\ndt = 0.125\nt_end = 0.5\nseed = 2\nscheme = imex\n"
        "basis = geometric,none\nkrylov = cg\nsmoother = ssor\n"
        "strategy = 1-1-1\nlevels = 2\n"
    )
    return path


def test_sweep_runs_and_resumes(tmp_path, capsys):
    manifest = _write_manifest(tmp_path)
    results = tmp_path / "results.csv"
    assert main(["sweep", str(manifest), "--output", str(results)]) == 0
    out = capsys.readouterr().out
    assert "2 runs, 0 failures" in out
    assert str(results) in out
    assert len(load_records(results)) == 2
    assert main(["sweep", str(manifest), "--output", str(results)]) == 0
    assert "0 runs, 0 failures, 2 already done" in capsys.readouterr().out


def test_sweep_single_config_summary_is_singular(tmp_path, capsys):
    path = tmp_path / "one.txt"
    path.write_text(
        "n = 9\ndt = 0.125\nt_end = 0.25\nseed = 2\nbasis = geometric\n"
        "krylov = cg\nsmoother = ssor\nstrategy = 1-1-1\nlevels = 2\n"
    )
    assert main(["sweep", str(path), "--output", str(tmp_path / "one.csv")]) == 0
    assert "1 run, 0 failures" in capsys.readouterr().out


def test_sweep_missing_manifest(tmp_path, capsys):
    rc = main(["sweep", str(tmp_path / "absent.txt")])
    assert rc == 1
    assert capsys.readouterr().err != ""


def test_sweep_bad_manifest(tmp_path, capsys):
    path = tmp_path / "bad.txt"
    path.write_text("n = 9\nwarp = 7\n")
    rc = main(["sweep", str(path)])
    assert rc == 1
    assert "warp" in capsys.readouterr().err


def test_sweep_feeds_pareto(tmp_path, capsys):
    manifest = _write_manifest(tmp_path)
    results = tmp_path / "results.csv"
    assert main(["sweep", str(manifest), "--output", str(results)]) == 0
    assert main(["pareto", str(results)]) == 0
    capsys.readouterr()
    members = load_records(str(results).replace(".csv", "_pareto.csv"))
    assert 1 <= len(members) <= 2
