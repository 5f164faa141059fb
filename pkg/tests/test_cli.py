import shutil
from pathlib import Path

import numpy as np
import pytest

from scripts.validate_reference import (
    fa_improves_md_stable,
    prior_wins,
    run_seed,
    spatial_sr_holds,
    zero_shot_holds,
)
from src.sainr.commands.common import EXIT_DATA, EXIT_NUMERICAL, EXIT_USAGE, StageFailure
from src.sainr.main import build_parser, main, manifest_from_args
from src.sainr.services.numerics import NonFiniteError
from src.sainr.services.quant import QuantError
from src.sainr.services.trainer import TrainingAbortedError
from src.sainr.workspace import ABLATION_VARIANT, PRIOR_VARIANT, Workspace

SMALL = ["--size", "32", "--dirs", "8", "--train-dirs", "6", "--dirs-per-step", "2",
         "--iters", "2", "--log-every", "1"]


def _tree(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "timing.json"
    }


@pytest.fixture(scope="module")
def reproduced(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("reproduce")
    assert main(["reproduce", "--out", str(out), *SMALL, "--use-prior", "false"]) == 0
    return out


# --- Argument handling ---

def test_manifest_defaults_follow_the_reference_protocol():
    args = build_parser().parse_args(["phantom", "--out", "x"])
    manifest = manifest_from_args(args)
    assert manifest.phantom.size == 64
    assert manifest.directions.count == 50 and manifest.directions.train == 40
    assert manifest.acquisition.thickness_factor == 4
    assert manifest.training.iterations == 2000
    assert not manifest.ablation


def test_missing_out_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["acquire"])
    assert exc.value.code == EXIT_USAGE


def test_bad_boolean_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--out", str(tmp_path), "--use-prior", "maybe"])
    assert exc.value.code == EXIT_USAGE


@pytest.mark.parametrize("flags", [["--ts", "0"], ["--ts", "3"], ["--train-dirs", "60"]])
def test_invalid_protocol_is_a_usage_error(tmp_path, flags, capsys):
    assert main(["phantom", "--out", str(tmp_path), *SMALL, *flags]) == EXIT_USAGE
    assert "[phantom] invalid protocol" in capsys.readouterr().err
    assert not (tmp_path / "manifest.json").exists()


def test_stage_failure_exit_codes():
    assert StageFailure("dti", QuantError("x")).exit_code == EXIT_DATA
    assert StageFailure("io", FileNotFoundError("x")).exit_code == EXIT_DATA
    assert StageFailure("train", TrainingAbortedError(5, "loss")).exit_code == EXIT_NUMERICAL
    assert StageFailure("infer", NonFiniteError("x")).exit_code == EXIT_NUMERICAL


def test_missing_artifact_names_stage_and_path(tmp_path, capsys):
    assert main(["acquire", "--out", str(tmp_path)]) == EXIT_DATA
    err = capsys.readouterr().err
    assert "[acquire]" in err
    assert str(tmp_path / "manifest.json") in err


# --- Full runs ---

def test_reproduce_writes_reports_and_tables(reproduced):
    ws = Workspace(reproduced)
    assert ws.summary_path.exists()
    summary = ws.summary_path.read_text()
    assert "SR w/o b=0" in summary
    assert "Downstream DTI" in summary
    table = (ws.tables_dir / "image_quality.csv").read_text().splitlines()
    assert table[0].startswith("split,method,directions,psnr_mean")
    assert [line.split(",")[1] for line in table[1:]] == ["LR", "SR", "SR w/o b=0"] * 2
    assert (ws.tables_dir / "dti_maps.csv").exists()
    assert (ws.tables_dir / "line_profile.csv").exists()
    for name in ("baseline_trained", "sainr_unseen", "no_prior_unseen"):
        assert ws.load_report(0, name) is not None
    assert any(ws.figures_dir(0).glob("*.pgm"))
    assert any(ws.figures_dir(0).glob("*.ppm"))


def test_inferred_trained_directions_match_training_renders(reproduced):
    ws = Workspace(reproduced)
    train = ws.load_directions(0).train_indices
    for variant in (PRIOR_VARIANT, ABLATION_VARIANT):
        sr = ws.load_renders(0, variant, "sr")
        assert sr.shape == (8, 32, 32)
        assert np.array_equal(sr[train], ws.load_renders(0, variant, "trained"))


def test_staged_run_matches_reproduce(reproduced, tmp_path):
    out = str(tmp_path)
    steps = [
        ["phantom", "--out", out, *SMALL, "--use-prior", "false"],
        ["acquire", "--out", out],
        ["train", "--out", out],
        ["train", "--out", out, "--use-prior", "false"],
        ["infer", "--out", out],
        ["infer", "--out", out, "--use-prior", "false"],
        ["dti", "--out", out],
        ["evaluate", "--out", out],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    staged, monolithic = _tree(tmp_path), _tree(reproduced)
    assert staged.keys() == monolithic.keys()
    assert [name for name in staged if staged[name] != monolithic[name]] == []


def test_custom_fit_needs_six_directions(reproduced, tmp_path, capsys):
    run = shutil.copytree(reproduced, tmp_path / "run")
    assert main(["dti", "--out", str(run), "--directions", "0,1,2"]) == EXIT_DATA
    assert "[dti]" in capsys.readouterr().err


def test_custom_fit_with_enough_directions(reproduced, tmp_path):
    run = shutil.copytree(reproduced, tmp_path / "run")
    assert main(["dti", "--out", str(run), "--directions", "0,1,2,3,4,5,6"]) == 0
    assert Workspace(run).fit_directions(0, "custom") == [0, 1, 2, 3, 4, 5, 6]


def test_repeated_run_is_byte_identical(reproduced, tmp_path):
    assert main(["reproduce", "--out", str(tmp_path), *SMALL, "--use-prior", "false"]) == 0
    first, second = _tree(reproduced), _tree(tmp_path)
    assert first.keys() == second.keys()
    assert [name for name in first if first[name] != second[name]] == []


# --- Reference experiment ---

REFERENCE_RUNS = 10


@pytest.fixture(scope="module")
def reference_results(tmp_path_factory) -> list[dict]:
    root = tmp_path_factory.mktemp("reference")
    return [run_seed(root / f"seed_{seed:02d}", seed, iters=2000) for seed in range(REFERENCE_RUNS)]


@pytest.mark.slow
def test_reference_experiment_beats_the_baseline(reference_results):
    first = reference_results[0]
    assert spatial_sr_holds(first), first
    assert zero_shot_holds(first), first


@pytest.mark.slow
def test_prior_helps_on_unseen_directions(reference_results):
    wins, compared = prior_wins(reference_results)
    assert compared == 3
    assert wins >= 2


@pytest.mark.slow
def test_zero_shot_directions_improve_fa_without_moving_md(reference_results):
    holds, needed = fa_improves_md_stable(reference_results)
    assert needed == 7
    assert holds, [(r["fa_nmse_trained"], r["fa_nmse_all"], r["md_nmse_trained"], r["md_nmse_all"])
                   for r in reference_results]
