from __future__ import annotations

import numpy as np
import pytest

from semcvdcm.core.metrics import compile_choices, log_likelihood, utilities
from semcvdcm.core.params import ModelParams, init_params
from semcvdcm.core.utility import (
    choice_probabilities,
    clamp_semantics,
    intervention_utility,
    log_choice_probabilities,
    predict_semantics,
    predict_semantics_batch,
    semantic_utility_raw_gradient,
    systematic_utility,
)
from semcvdcm.model.entities import PROPORTION_ATTRIBUTES, SEMANTIC_ATTRIBUTES, SemanticVector
from semcvdcm.simulation.simulator import simulate_dataset
from semcvdcm.simulation.spec import DEFAULT_TRUE_BETA_NUM, DEFAULT_TRUE_BETA_SEM, SyntheticSpec


def housing_params(k: int = 4) -> ModelParams:
    params = init_params(k=k, m=2)
    return params.replace(
        beta_num=np.array([DEFAULT_TRUE_BETA_NUM[name] for name in ("hhcost", "tt")]),
        beta_sem=np.array([DEFAULT_TRUE_BETA_SEM[name] for name in SEMANTIC_ATTRIBUTES]),
    )


def semantic_vector(**values: float) -> SemanticVector:
    array = np.zeros(len(SEMANTIC_ATTRIBUTES))
    for name, value in values.items():
        array[SEMANTIC_ATTRIBUTES.index(name)] = value
    return SemanticVector.from_array(array)


def test_zero_embedding_predicts_the_bias() -> None:
    params = init_params(k=3, m=2)
    params = params.replace(head_bias=np.array([2.0] + [0.1] * 9))

    vector = predict_semantics(params, np.zeros(3))

    assert vector.car_count == 2.0
    assert vector.proportions == pytest.approx((0.1,) * 9)
    assert vector.unsegmented == pytest.approx(0.1, abs=1e-12)


def test_zero_head_predicts_an_unsegmented_image() -> None:
    params = init_params(k=3, m=2)
    params = params.replace(head_weights=np.zeros((3, 10)))

    vector = predict_semantics(params, np.array([0.3, -1.0, 2.0]))

    assert vector.car_count == 0.0
    assert vector.proportions == (0.0,) * 9
    assert vector.unsegmented == 1.0


def test_clamp_rules() -> None:
    raw = np.array(
        [
            [-1.0, 1.3, 0, 0, 0, 0, 0, 0, 0, 0],
            [0.5, 0.6, 0.6, -0.2, 0, 0, 0, 0, 0, 0],
        ]
    )

    clamped = clamp_semantics(raw)

    assert clamped[0, 0] == 0.0
    assert clamped[0, 1] == 1.0
    assert clamped[0, -1] == 0.0
    assert clamped[1, 1:3] == pytest.approx([0.5, 0.5])
    assert clamped[1, 3] == 0.0
    assert clamped[:, 1:].sum(axis=1) == pytest.approx([1.0, 1.0])


def test_numeric_and_unsegmented_terms() -> None:
    breakdown = systematic_utility(
        housing_params(),
        (1.0, 1.0),
        semantic_vector(unsegmented=1.0),
        None,
        include_residual=False,
    )

    assert breakdown.v_numeric == pytest.approx(-1.18)
    assert breakdown.v_semantic == pytest.approx(-0.25)
    assert breakdown.v_total == pytest.approx(-1.43, abs=1e-12)


def test_single_large_car_is_worse_than_two_small_ones() -> None:
    params = housing_params()
    one_large = systematic_utility(
        params, None, semantic_vector(car_count=1, p_car=0.5), None, False, False
    )
    two_small = systematic_utility(
        params, None, semantic_vector(car_count=2, p_car=0.05), None, False, False
    )

    assert one_large.v_total == pytest.approx(-0.545)
    assert two_small.v_total == pytest.approx(-0.5295)
    assert one_large.v_total < two_small.v_total
    building = SEMANTIC_ATTRIBUTES.index("p_building")
    assert params.beta_sem[SEMANTIC_ATTRIBUTES.index("p_car")] < params.beta_sem[building]


def test_all_zero_coefficients_give_zero_utility() -> None:
    params = init_params(k=3, m=2)

    breakdown = systematic_utility(
        params, (5.0, -2.0), semantic_vector(car_count=4, p_sky=0.5), np.ones(3)
    )

    assert breakdown.v_total == 0.0


def test_utility_rejects_bad_inputs() -> None:
    params = init_params(k=3, m=2)

    with pytest.raises(ValueError, match="M=2"):
        systematic_utility(params, (1.0,), semantic_vector(), np.zeros(3))
    with pytest.raises(ValueError, match="non-finite"):
        systematic_utility(params, (1.0, float("nan")), semantic_vector(), np.zeros(3))
    with pytest.raises(ValueError, match="K=3"):
        systematic_utility(params, (1.0, 1.0), semantic_vector(), np.zeros(4))


def test_choice_probabilities() -> None:
    assert choice_probabilities([0.0, 0.0]).tolist() == [0.5, 0.5]
    assert choice_probabilities([1.0, 0.0]) == pytest.approx([0.731059, 0.268941], abs=1e-6)
    assert choice_probabilities([1001.0, 1000.0]) == pytest.approx(
        choice_probabilities([1.0, 0.0]), abs=1e-15
    )
    assert log_choice_probabilities(np.array([0.0, 2000.0]))[0] == -745.0
    with pytest.raises(ValueError):
        choice_probabilities([1.0])
    with pytest.raises(ValueError):
        choice_probabilities([float("inf"), 0.0])


def test_shifting_all_proportion_coefficients_leaves_choices_unchanged() -> None:
    synthetic = simulate_dataset(SyntheticSpec(n_observations=1000, k=12, n_zones=3, seed=9))
    rng = np.random.default_rng(11)
    params = init_params(k=12, m=2, seed=5)
    params = params.replace(
        head_weights=rng.normal(0.0, 0.3, size=(12, 10)),
        head_bias=rng.uniform(0.0, 0.2, size=10),
        beta_num=np.array([-0.9, -0.2]),
        beta_sem=np.array([DEFAULT_TRUE_BETA_SEM[name] for name in SEMANTIC_ATTRIBUTES]),
        beta_res=rng.normal(0.0, 0.1, size=12),
    )
    shift = np.zeros(len(SEMANTIC_ATTRIBUTES))
    shift[[SEMANTIC_ATTRIBUTES.index(name) for name in PROPORTION_ATTRIBUTES]] = 3.7
    shifted = params.replace(beta_sem=params.beta_sem + shift)
    data = compile_choices(synthetic.observations, synthetic.embeddings)
    proportions = [SEMANTIC_ATTRIBUTES.index(name) for name in PROPORTION_ATTRIBUTES]

    semantics = predict_semantics_batch(params, data.z)
    before = choice_probabilities(utilities(params, data))
    after = choice_probabilities(utilities(shifted, data))

    assert data.n == 1000
    assert np.abs(semantics[:, proportions].sum(axis=1) - 1.0).max() <= 1e-12
    assert np.abs(after - before).max() <= 1e-12
    assert log_likelihood(shifted, data) == pytest.approx(log_likelihood(params, data), abs=1e-9)


def test_intervention_utility() -> None:
    params = housing_params()

    delta = intervention_utility(params, {"p_building": -0.1, "p_trees": 0.1})

    assert delta == pytest.approx(0.14)
    with pytest.raises(ValueError, match="Unknown"):
        intervention_utility(params, {"p_tree": 0.1})


def test_raw_gradient_matches_finite_differences() -> None:
    rng = np.random.default_rng(3)
    beta = rng.normal(size=len(SEMANTIC_ATTRIBUTES))
    raw = np.array(
        [
            [1.5, 0.1, 0.2, 0.05, 0.3, 0.1, 0.05, 0.02, 0.03, 0.01],
            [0.7, 0.3, 0.4, 0.2, 0.3, 0.1, 0.2, 0.15, 0.1, 0.05],
        ]
    )
    step = 1e-7

    analytic = semantic_utility_raw_gradient(raw, beta)
    numeric = np.zeros_like(raw)
    for col in range(raw.shape[1]):
        up, down = raw.copy(), raw.copy()
        up[:, col] += step
        down[:, col] -= step
        numeric[:, col] = (clamp_semantics(up) @ beta - clamp_semantics(down) @ beta) / (2 * step)

    assert analytic == pytest.approx(numeric, abs=1e-6)
