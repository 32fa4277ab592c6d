from __future__ import annotations

import math

import numpy as np
import pytest

from semcvdcm.core.metrics import (
    ChoiceData,
    combined_loss,
    compile_choices,
    cross_entropy,
    cross_entropy_from_log_likelihood,
    identified_columns,
    interpretable_standard_errors,
    log_likelihood,
    loss_components,
    null_log_likelihood,
    rho_squared,
    semantic_fit,
    semantic_rmse,
)
from semcvdcm.core.params import ModelParams, init_params
from semcvdcm.core.utility import choice_probabilities, predict_semantics, systematic_utility
from semcvdcm.model.entities import PREDICTED_TARGETS
from semcvdcm.simulation.simulator import SyntheticDataset


def random_params(k: int, seed: int = 1) -> ModelParams:
    rng = np.random.default_rng(seed)
    params = init_params(k=k, m=2, seed=seed)
    beta_sem = rng.normal(0.0, 1.0, size=11)
    beta_sem[2] = 0.0
    return params.replace(
        head_weights=rng.normal(0.0, 0.3, size=(k, 10)),
        head_bias=rng.uniform(0.0, 0.1, size=10),
        beta_num=rng.normal(0.0, 1.0, size=2),
        beta_sem=beta_sem,
        beta_res=rng.normal(0.0, 0.2, size=k),
    )


def two_image_data(targets: np.ndarray, chosen: int = 0) -> ChoiceData:
    return ChoiceData(
        obs_ids=("o1",),
        x=np.zeros((1, 2, 2)),
        image_index=np.array([[0, 1]]),
        chosen=np.array([chosen]),
        image_ids=("img_a", "img_b"),
        z=np.zeros((2, 3)),
        targets=targets,
    )


def test_rho_squared_reproduces_published_fits() -> None:
    assert rho_squared(-5724.0, 9784, 2) == pytest.approx(0.156, abs=1e-3)
    assert rho_squared(-1137.6, 1948, 2) == pytest.approx(0.158, abs=1e-3)
    assert rho_squared(null_log_likelihood(50, 2), 50, 2) == pytest.approx(0.0, abs=1e-15)


def test_rho_squared_rejects_impossible_inputs() -> None:
    with pytest.raises(ValueError, match="<= 0"):
        rho_squared(0.5, 10, 2)
    with pytest.raises(ValueError):
        rho_squared(-1.0, 0, 2)
    with pytest.raises(ValueError):
        rho_squared(-1.0, 10, 1)


def test_cross_entropy_from_log_likelihood() -> None:
    assert cross_entropy_from_log_likelihood(-1137.6, 1948) == pytest.approx(0.584, abs=1e-3)
    assert cross_entropy_from_log_likelihood(-1137.6, 1948) == pytest.approx(0.585, abs=2e-3)
    assert cross_entropy_from_log_likelihood(0.0, 10) == 0.0


def test_null_model_log_likelihood(small_synthetic: SyntheticDataset) -> None:
    params = init_params(k=12, m=2)
    params = params.replace(head_weights=np.zeros((12, 10)))
    data = compile_choices(small_synthetic.observations, small_synthetic.embeddings)

    assert log_likelihood(params, data) == pytest.approx(data.n * math.log(0.5), abs=1e-9)
    assert cross_entropy(params, data) == pytest.approx(math.log(2.0), abs=1e-12)
    assert null_log_likelihood(data.n, 2) == pytest.approx(data.n * math.log(0.5))


def test_log_likelihood_matches_a_per_observation_evaluation(
    small_synthetic: SyntheticDataset,
) -> None:
    params = random_params(12)
    data = compile_choices(small_synthetic.observations, small_synthetic.embeddings)
    embeddings = small_synthetic.embeddings

    expected = 0.0
    for obs in small_synthetic.observations:
        totals = []
        for alt in obs.alternatives:
            z = embeddings[alt.image_id]
            s = predict_semantics(params, z)
            totals.append(systematic_utility(params, alt.numeric_attrs, s, z).v_total)
        expected += math.log(choice_probabilities(totals)[obs.chosen])

    assert log_likelihood(params, data) == pytest.approx(expected, abs=1e-10)


def test_rmse_counts_every_alternative() -> None:
    params = init_params(k=3, m=2)
    bias = np.linspace(0.5, 0.05, 10)
    params = params.replace(head_weights=np.zeros((3, 10)), head_bias=bias)
    targets = np.vstack([bias, bias])
    targets[1, 4] += 1.0

    assert semantic_rmse(params, two_image_data(targets)) == pytest.approx(math.sqrt(1 / 20))
    assert semantic_rmse(params, two_image_data(np.vstack([bias, bias]))) == 0.0


def test_rmse_matches_a_triple_loop(small_synthetic: SyntheticDataset) -> None:
    params = random_params(12, seed=4)
    data = compile_choices(
        small_synthetic.observations, small_synthetic.embeddings, small_synthetic.labels
    )
    embeddings = small_synthetic.embeddings
    labels = small_synthetic.labels

    total = 0.0
    count = 0
    for obs in small_synthetic.observations:
        for image_id in obs.image_ids:
            z = np.asarray(embeddings[image_id], dtype=np.float64)
            predicted = z @ params.head_weights + params.head_bias
            for s, truth in enumerate(labels[image_id].targets()):
                total += (truth - predicted[s]) ** 2
                count += 1

    assert semantic_rmse(params, data) == pytest.approx(math.sqrt(total / count), abs=1e-12)


def test_rmse_needs_labels(small_synthetic: SyntheticDataset) -> None:
    data = compile_choices(small_synthetic.observations, small_synthetic.embeddings)

    with pytest.raises(ValueError, match="missing label"):
        semantic_rmse(init_params(k=12, m=2), data)


def test_kappa_boundaries_are_exact(small_synthetic: SyntheticDataset) -> None:
    params = random_params(12, seed=2)
    data = compile_choices(
        small_synthetic.observations, small_synthetic.embeddings, small_synthetic.labels
    )
    ce = cross_entropy(params, data)
    rmse = semantic_rmse(params, data)

    assert combined_loss(params, data, 0.0) == ce
    assert combined_loss(params, data, 1.0) == rmse
    assert combined_loss(params, data, 0.5) == pytest.approx(0.5 * ce + 0.5 * rmse)
    assert loss_components(params, data, 0.0)["rmse"] is None
    assert loss_components(params, data, 1.0)["cross_entropy"] is None
    with pytest.raises(ValueError, match="kappa"):
        combined_loss(params, data, 1.5)


def test_combined_loss_weights_the_components() -> None:
    params = init_params(k=3, m=2)
    bias = np.full(10, 0.05)
    params = params.replace(head_weights=np.zeros((3, 10)), head_bias=bias)
    # rmse = 0.2 from one target off by sqrt(20 * 0.04) on image b
    targets = np.vstack([bias, bias])
    targets[1, 0] += math.sqrt(0.8)
    data = two_image_data(targets)
    ce = cross_entropy(params, data)

    assert semantic_rmse(params, data) == pytest.approx(0.2)
    assert ce == pytest.approx(math.log(2.0))
    assert combined_loss(params, data, 0.5) == pytest.approx(0.5 * math.log(2.0) + 0.1)


def test_semantic_fit_reports_each_target(small_synthetic: SyntheticDataset) -> None:
    params = random_params(12, seed=6)
    data = compile_choices(
        small_synthetic.observations, small_synthetic.embeddings, small_synthetic.labels
    )

    fit = semantic_fit(params, data)

    assert set(fit) == {
        "car_count",
        "p_car",
        "p_building",
        "p_grass",
        "p_road",
        "p_sky",
        "p_trees",
        "p_plants",
        "p_fence",
        "p_water",
    }
    assert all(row["rmse"] >= 0.0 for row in fit.values())


def test_standard_errors_cover_interpretable_coefficients(
    small_synthetic: SyntheticDataset,
) -> None:
    params = random_params(12, seed=8)
    data = compile_choices(small_synthetic.observations, small_synthetic.embeddings)

    table = interpretable_standard_errors(params, data)

    assert "beta_num.hhcost" in table
    assert "beta_sem.p_building" not in table
    assert len(table) == 2 + 10
    assert table["beta_num.hhcost"]["std_error"] > 0.0


def test_standard_errors_survive_a_class_the_head_never_predicts(
    small_synthetic: SyntheticDataset,
) -> None:
    grass = PREDICTED_TARGETS.index("p_grass")
    params = init_params(k=12, m=2, seed=5)
    bias = np.full(10, 0.08)
    bias[0] = 3.0
    bias[grass] = -1.0
    weights = params.head_weights.copy()
    weights[:, grass] = 0.0
    params = params.replace(head_weights=weights, head_bias=bias, beta_num=np.array([-0.9, -0.2]))
    data = compile_choices(small_synthetic.observations, small_synthetic.embeddings)

    table = interpretable_standard_errors(params, data)

    assert len(table) == 12
    assert table["beta_sem.p_grass"]["std_error"] is None
    assert table["beta_sem.p_grass"]["p_value"] is None
    for name, row in table.items():
        if name != "beta_sem.p_grass":
            assert row["std_error"] is not None and row["std_error"] > 0.0, name


def test_identified_columns_drop_constant_and_collinear_columns() -> None:
    rng = np.random.default_rng(11)
    base = rng.normal(size=(50, 3))
    design = np.column_stack(
        [base[:, 0], base[:, 1], base[:, 0] + base[:, 1], np.zeros(50), 100.0 * base[:, 2]]
    )

    keep, scale = identified_columns(design.T @ design)

    assert len(keep) == 3
    assert 3 not in keep
    assert 4 in keep
    assert len({0, 1, 2} & set(keep.tolist())) == 2
    assert scale[3] == 0.0
