"""End-to-end command-line checks driven through cli.main."""

import csv

import numpy as np
import pytest

from nbibd import ScoreTable, extend, read_design, write_design, write_scores
from nbibd.cli import main
from nbibd.design import Block, Design, DesignConfig

GEN = ["generate", "--posters", "30", "--block-size", "4", "--judges", "12"]


def run(capsys, argv, expect=0):
    code = main(argv)
    captured = capsys.readouterr()
    assert code == expect, f"{argv} -> {code}: {captured.err}"
    return captured


def write_pair_reuse_design(path):
    # both blocks share the pair (0, 1); everything else is legal
    config = DesignConfig(t=6, k=4, b=2, seed=0)
    blocks = [Block(0, (0, 1, 2, 3), True), Block(1, (0, 1, 4, 5), True)]
    write_design(str(path), Design.from_blocks(config, blocks))


def write_two_clique_design(path):
    config = DesignConfig(t=6, k=3, b=2, seed=0)
    blocks = [Block(0, (0, 1, 2), True), Block(1, (3, 4, 5), True)]
    write_design(str(path), Design.from_blocks(config, blocks))


def test_version_and_help_exit_zero(capsys):
    for flag in ("--version", "--help"):
        with pytest.raises(SystemExit) as excinfo:
            main([flag])
        assert excinfo.value.code == 0
    assert "nbibd" in capsys.readouterr().out


def test_unknown_arguments_exit_two(capsys):
    for argv in (["--bogus"], [], ["generate", "--bogus"]):
        with pytest.raises(SystemExit) as excinfo:
            main(argv)
        assert excinfo.value.code == 2
    capsys.readouterr()


def test_generate_validate_round_trip(tmp_path, capsys):
    out = tmp_path / "design.csv"
    captured = run(capsys, GEN + ["--kind", "nb1", "--seed", "5", "--out", str(out)])
    assert "command=generate" in captured.out
    assert "restarts=" in captured.out

    again = tmp_path / "again.csv"
    run(capsys, GEN + ["--kind", "nb1", "--seed", "5", "--out", str(again)])
    assert out.read_bytes() == again.read_bytes()

    captured = run(capsys, ["validate", str(out), "--kind", "nb1"])
    assert "covered=true" in captured.out
    assert "all_prefixes_connected=true" in captured.out
    assert "faculty_ok=true" in captured.out


def test_generate_infeasible_exits_one(tmp_path, capsys):
    argv = [
        "generate", "--posters", "6", "--block-size", "4", "--judges", "2",
        "--kind", "nb1", "--max-attempts", "20", "--restart-budget", "5",
        "--out", str(tmp_path / "never.csv"),
    ]
    captured = run(capsys, argv, expect=1)
    assert "error:" in captured.err
    assert not (tmp_path / "never.csv").exists()


def test_generate_rejects_uncoverable_random_shape(tmp_path, capsys):
    # the unstructured baseline promises coverage, which 2 * 5 reviews
    # cannot deliver for 30 posters
    argv = [
        "generate", "--posters", "30", "--block-size", "5", "--judges", "2",
        "--kind", "random", "--out", str(tmp_path / "never.csv"),
    ]
    captured = run(capsys, argv, expect=1)
    assert "error:" in captured.err


def test_validate_enforcement_depends_on_kind(tmp_path, capsys):
    path = tmp_path / "reuse.csv"
    write_pair_reuse_design(path)

    run(capsys, ["validate", str(path)])
    run(capsys, ["validate", str(path), "--kind", "nb2"])
    captured = run(capsys, ["validate", str(path), "--kind", "nb1"], expect=1)
    assert "concurrence" in captured.err


def test_validate_flags_disconnection(tmp_path, capsys):
    path = tmp_path / "cliques.csv"
    write_two_clique_design(path)

    captured = run(capsys, ["validate", str(path)], expect=1)
    assert "connected" in captured.err
    # the unstructured baseline only promises coverage
    captured = run(capsys, ["validate", str(path), "--kind", "random"])
    assert "covered=true" in captured.out
    assert "connected=false" in captured.out


def test_validate_missing_file_exits_two(tmp_path, capsys):
    captured = run(capsys, ["validate", str(tmp_path / "absent.csv")], expect=2)
    assert "error:" in captured.err


def test_extend_cli_matches_library(tmp_path, capsys):
    base = tmp_path / "base.csv"
    run(capsys, GEN + ["--kind", "nb2", "--seed", "7", "--out", str(base)])

    cli_out = tmp_path / "cli.csv"
    captured = run(
        capsys,
        ["extend", "--design", str(base), "--blocks", "5", "--kind", "nb2",
         "--seed", "7", "--out", str(cli_out)],
    )
    assert "blocks=17" in captured.out

    lib_out = tmp_path / "lib.csv"
    write_design(str(lib_out), extend(read_design(str(base), seed=7), 5, "nb2"))
    assert cli_out.read_bytes() == lib_out.read_bytes()

    run(capsys, ["validate", str(cli_out), "--kind", "nb2"])


def test_score_complete_block_recovers_raw_means(tmp_path, capsys):
    design_path = tmp_path / "complete.csv"
    run(
        capsys,
        ["generate", "--posters", "4", "--block-size", "4", "--judges", "5",
         "--kind", "nb2", "--seed", "3", "--out", str(design_path)],
    )
    design = read_design(str(design_path))
    rng = np.random.default_rng(12)
    matrix = 65.0 + rng.normal(0.0, 6.0, (4, 5))
    scores_path = tmp_path / "scores.csv"
    write_scores(str(scores_path), ScoreTable.from_design_matrix(design, matrix))
    means = matrix.mean(axis=1)

    for model in ("fixed", "random"):
        out = tmp_path / f"{model}.csv"
        captured = run(
            capsys,
            ["score", "--design", str(design_path), "--scores", str(scores_path),
             "--model", model, "--out", str(out)],
        )
        assert f"model={model}" in captured.out
        with open(out, newline="") as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == 4
        for row in rows:
            assert float(row["pmm"]) == pytest.approx(means[int(row["poster_id"])], abs=1e-8)
        sidecar = tmp_path / f"{model}.summary.csv"
        with open(sidecar, newline="") as handle:
            summary = list(csv.DictReader(handle))[0]
        assert summary["model_kind"] == model
        assert summary["converged"] == "true"
        if model == "fixed":
            assert summary["var_judge"] == ""
        else:
            float(summary["var_judge"])


def test_score_respects_explicit_summary_path(tmp_path, capsys):
    design_path = tmp_path / "design.csv"
    run(capsys, GEN + ["--kind", "nb2", "--seed", "1", "--out", str(design_path)])
    design = read_design(str(design_path))
    rng = np.random.default_rng(4)
    scores_path = tmp_path / "scores.csv"
    write_scores(str(scores_path), ScoreTable.from_design_matrix(design, rng.normal(70.0, 5.0, (30, 12))))
    out = tmp_path / "fit.csv"
    summary = tmp_path / "elsewhere.csv"
    run(
        capsys,
        ["score", "--design", str(design_path), "--scores", str(scores_path),
         "--out", str(out), "--summary-out", str(summary)],
    )
    assert summary.exists()
    assert not (tmp_path / "fit.summary.csv").exists()


def test_score_disconnected_design_exits_one(tmp_path, capsys):
    design_path = tmp_path / "cliques.csv"
    write_two_clique_design(design_path)
    design = read_design(str(design_path))
    rng = np.random.default_rng(2)
    scores_path = tmp_path / "scores.csv"
    write_scores(str(scores_path), ScoreTable.from_design_matrix(design, rng.normal(70.0, 5.0, (6, 2))))
    captured = run(
        capsys,
        ["score", "--design", str(design_path), "--scores", str(scores_path),
         "--model", "fixed", "--out", str(tmp_path / "fit.csv")],
        expect=1,
    )
    assert "error:" in captured.err


def test_score_malformed_scores_exits_two(tmp_path, capsys):
    design_path = tmp_path / "design.csv"
    run(capsys, GEN + ["--kind", "nb2", "--seed", "2", "--out", str(design_path)])
    scores_path = tmp_path / "scores.csv"
    scores_path.write_text("not,a,scores\nfile,,\n")
    captured = run(
        capsys,
        ["score", "--design", str(design_path), "--scores", str(scores_path),
         "--out", str(tmp_path / "fit.csv")],
        expect=2,
    )
    assert "error:" in captured.err


def test_simulate_then_report_pipeline(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("NBIBD_THREADS", "1")
    metrics = tmp_path / "metrics.csv"
    captured = run(
        capsys,
        ["simulate", "--preset", "paper", "--posters", "40", "--judges", "18",
         "--awards", "8", "--iterations", "4", "--seed", "1", "--out", str(metrics)],
    )
    assert "iterations=4" in captured.out
    assert "designs=nb1,nb2,random" in captured.out
    lines = metrics.read_text().splitlines()
    assert len(lines) == 1 + 4 * 3

    summary = tmp_path / "summary.csv"
    hist = tmp_path / "hist.csv"
    captured = run(
        capsys,
        ["report", str(metrics), "--out", str(summary), "--hist-out", str(hist),
         "--hist-bins", "4"],
    )
    assert f"hist={hist}" in captured.out
    summary_lines = summary.read_text().splitlines()
    assert len(summary_lines) == 1 + 12 + 12 + 6
    assert len(hist.read_text().splitlines()) == 1 + (3 + 3) * 4 * 4

    summary_bytes = summary.read_bytes()
    hist_bytes = hist.read_bytes()
    run(
        capsys,
        ["report", str(metrics), "--out", str(summary), "--hist-out", str(hist),
         "--hist-bins", "4"],
    )
    assert summary.read_bytes() == summary_bytes
    assert hist.read_bytes() == hist_bytes


def test_simulate_rejects_bad_overrides(tmp_path, capsys):
    captured = run(
        capsys,
        ["simulate", "--iterations", "1", "--awards", "0", "--out", str(tmp_path / "m.csv")],
        expect=1,
    )
    assert "error:" in captured.err


def test_report_default_output_name(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("NBIBD_THREADS", "1")
    metrics = tmp_path / "metrics.csv"
    run(
        capsys,
        ["simulate", "--posters", "40", "--judges", "18", "--awards", "8",
         "--iterations", "2", "--seed", "0", "--out", str(metrics)],
    )
    monkeypatch.chdir(tmp_path)
    captured = run(capsys, ["report", str(metrics)])
    assert "out=summary.csv" in captured.out
    assert (tmp_path / "summary.csv").exists()


def test_report_missing_file_exits_two(tmp_path, capsys):
    captured = run(capsys, ["report", str(tmp_path / "absent.csv")], expect=2)
    assert "error:" in captured.err
