from __future__ import annotations

import json
from pathlib import Path

import pytest

from semcvdcm.app import main

SIMULATE = ["simulate", "--n", "300", "--k", "12", "--seed", "3"]


def run_json(capsys: pytest.CaptureFixture[str], argv: list[str]) -> tuple[int, dict]:
    capsys.readouterr()
    code = main(argv)
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1, lines
    return code, json.loads(lines[0])


@pytest.fixture
def simulated(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> Path:
    code, _ = run_json(capsys, [*SIMULATE, "--out", str(tmp_path / "data")])
    assert code == 0
    return tmp_path / "data" / "manifest.json"


@pytest.fixture
def trained(
    tmp_path: Path, simulated: Path, capsys: pytest.CaptureFixture[str]
) -> tuple[Path, dict]:
    out = tmp_path / "train"
    code, summary = run_json(
        capsys,
        [
            "train",
            "--manifest",
            str(simulated),
            "--out",
            str(out),
            "--epochs",
            "2",
            "--lr",
            "0.02",
            "--seed",
            "1",
        ],
    )
    assert code == 0
    return out / "model.json", summary


def test_simulate_is_reproducible(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    for name in ("a", "b"):
        code, summary = run_json(capsys, [*SIMULATE, "--out", str(tmp_path / name)])
        assert code == 0
        assert summary["command"] == "simulate"
        assert summary["ok"] is True
        assert summary["n_observations"] == 300

    for path in sorted((tmp_path / "a").iterdir()):
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()


def test_train_then_eval_agree(
    trained: tuple[Path, dict], simulated: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    model, summary = trained
    out = model.parent

    code, evaluated = run_json(
        capsys, ["eval", "--manifest", str(simulated), "--model", str(model), "--split", "test"]
    )

    assert code == 0
    assert evaluated["log_likelihood"] == pytest.approx(summary["test"]["log_likelihood"])
    assert evaluated["cross_entropy"] == pytest.approx(
        -evaluated["log_likelihood"] / evaluated["n"]
    )
    assert "semantic_fit" in evaluated
    assert (out / "fit_report.json").exists()
    assert (out / "fit_report.txt").exists()
    assert not (out / "model.partial.json").exists()
    saved = json.loads(model.read_text(encoding="utf-8"))
    assert saved["format"] == "semcvdcm-model"
    assert saved["beta_sem"]["p_building"] == 0.0
    assert saved["config"]["max_epochs"] == [2, 2, 2]


def test_spatial_pipeline(
    tmp_path: Path,
    trained: tuple[Path, dict],
    simulated: Path,
    capsys: pytest.CaptureFixture[str],
) -> None:
    model, _ = trained
    scores_dir = tmp_path / "scores"
    zones_dir = tmp_path / "zones"
    maps_dir = tmp_path / "maps"

    code, scored = run_json(
        capsys,
        ["score", "--manifest", str(simulated), "--model", str(model), "--out", str(scores_dir)],
    )
    assert code == 0
    assert scored["n_images"] == 600

    code, aggregated = run_json(
        capsys,
        [
            "aggregate",
            "--scores",
            str(scores_dir / "image_scores.csv"),
            "--manifest",
            str(simulated),
            "--out",
            str(zones_dir),
        ],
    )
    assert code == 0
    assert aggregated["n_zones"] >= 3
    citywide = json.loads((zones_dir / "citywide.json").read_text(encoding="utf-8"))
    assert citywide["citywide"]["image_count"] == 600

    code, decomposed = run_json(
        capsys,
        ["decompose", "--manifest", str(simulated), "--model", str(model), "--out", str(maps_dir)],
    )
    assert code == 0
    assert decomposed["n_zones"] == aggregated["n_zones"]
    assert (maps_dir / "decomposition.csv").exists()
    assert "Zone " in (maps_dir / "bars.txt").read_text(encoding="utf-8")

    code, reported = run_json(
        capsys,
        [
            "report",
            "--zone-scores",
            str(zones_dir / "zone_scores.csv"),
            "--out",
            str(tmp_path / "stats"),
        ],
    )
    assert code == 0
    assert reported["n_zones"] == aggregated["n_zones"]
    assert (tmp_path / "stats" / "correlation.csv").exists()


def test_check_gradients(capsys: pytest.CaptureFixture[str]) -> None:
    code, summary = run_json(capsys, ["check-gradients", "--trials", "5"])

    assert code == 0
    assert summary["passed"] is True
    assert summary["trials"] == 5


def test_missing_manifest_is_invalid_input(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    code = main(["train", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path)])

    assert code == 1
    assert capsys.readouterr().out == ""


def test_usage_errors_are_invalid_input(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    assert main(["transmogrify"]) == 1
    assert main(["train", "--out", str(tmp_path)]) == 1
    assert main(["--version"]) == 0
    capsys.readouterr()


def test_conflicting_score_sources(
    tmp_path: Path, simulated: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    code = main(
        [
            "aggregate",
            "--scores",
            str(tmp_path / "image_scores.csv"),
            "--model",
            str(tmp_path / "model.json"),
            "--manifest",
            str(simulated),
            "--out",
            str(tmp_path / "zones"),
        ]
    )

    assert code == 1
    assert capsys.readouterr().out == ""


def test_recover_reports_failure_with_exit_code(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    config = tmp_path / "recovery_spec.json"
    config.write_text(json.dumps({"n_observations": 1500, "n_zones": 4}), encoding="utf-8")
    argv = ["recover", "--config", str(config), "--k", "12", "--seed", "3"]

    code, summary = run_json(
        capsys, [*argv, "--tolerance", "1e-12", "--out", str(tmp_path / "strict")]
    )
    assert code == 1
    assert summary["ok"] is False
    assert summary["all_within_tolerance"] is False

    code, summary = run_json(
        capsys, [*argv, "--tolerance", "100", "--out", str(tmp_path / "loose")]
    )
    assert code == 0
    assert summary["ok"] is True
    report = json.loads((tmp_path / "loose" / "recovery.json").read_text(encoding="utf-8"))
    assert report["spec"]["n_observations"] == 1500
    assert report["spec"]["dirichlet_concentration"] == 0.05
