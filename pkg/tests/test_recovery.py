from __future__ import annotations

import pytest

from semcvdcm.simulation.recovery import (
    DEFAULT_RECOVERY_SIZES,
    RECOVERY_TOLERANCE,
    parameter_recovery_experiment,
    recovery_config,
    recovery_curve,
)
from semcvdcm.simulation.spec import (
    DEFAULT_DIRICHLET_CONCENTRATION,
    RECOVERY_DIRICHLET_CONCENTRATION,
    RECOVERY_TEST_FRACTION,
    SyntheticSpec,
    recovery_spec,
)


def _errors(report: dict) -> dict[str, float]:
    return {row["coefficient"]: row["abs_error"] for row in report["coefficients"]}


def test_recovery_report_brackets_the_generating_coefficients() -> None:
    spec = SyntheticSpec(n_observations=4000, k=16, n_zones=5, seed=1)

    report = parameter_recovery_experiment(spec, recovery_config(seed=1))

    rows = {row["coefficient"]: row for row in report["coefficients"]}
    assert "beta_sem.p_building" not in rows
    assert len(rows) == 12
    assert all(row["std_error"] is not None for row in rows.values()), rows
    assert all(row["within_4se"] for row in rows.values()), rows
    assert report["test"]["cross_entropy"] >= (
        report["bayes_optimal_cross_entropy"]["realised"] - 0.05
    )
    assert all(phase["frozen_groups_intact"] for phase in report["phases"])


def test_recovery_defaults() -> None:
    config = recovery_config(seed=4)

    assert config.optimizer == "lbfgs"
    assert config.l2_lambda == 0.0
    assert config.validation_fraction == 0.0
    assert recovery_spec().dirichlet_concentration == RECOVERY_DIRICHLET_CONCENTRATION
    assert recovery_spec().test_fraction == RECOVERY_TEST_FRACTION
    assert recovery_spec(n_observations=50_000).n_observations == 50_000
    assert SyntheticSpec().dirichlet_concentration == DEFAULT_DIRICHLET_CONCENTRATION
    assert RECOVERY_TOLERANCE == 0.05
    assert DEFAULT_RECOVERY_SIZES == (5_000, 20_000, 80_000)


def test_recovery_error_shrinks_with_sample_size() -> None:
    spec = recovery_spec(k=16, n_zones=5, seed=2)

    curve = recovery_curve(spec, recovery_config(seed=2), sizes=(1000, 16000))

    assert [point["n_observations"] for point in curve["points"]] == [1000, 16000]
    assert curve["largest_beats_smallest"]


@pytest.mark.slow
def test_fifty_thousand_observations_recover_every_coefficient() -> None:
    spec = recovery_spec(n_observations=50_000, sigma_z=0.0, seed=1)

    report = parameter_recovery_experiment(spec, recovery_config(seed=1))

    assert report["tolerance"] == 0.05
    assert report["all_within_tolerance"], _errors(report)
    assert max(_errors(report).values()) <= 0.05
    assert report["test"]["cross_entropy"] >= (
        report["bayes_optimal_cross_entropy"]["realised"] - 0.002
    )


@pytest.mark.slow
def test_recovery_error_does_not_grow_over_default_sizes() -> None:
    curve = recovery_curve(recovery_spec(seed=1), recovery_config(seed=1))

    assert [point["n_observations"] for point in curve["points"]] == [5_000, 20_000, 80_000]
    assert curve["non_increasing"], curve["points"]
