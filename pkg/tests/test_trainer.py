from __future__ import annotations

import numpy as np
import pytest

from semcvdcm.core.metrics import compile_choices, log_likelihood, semantic_rmse
from semcvdcm.core.params import init_params, l2_norm
from semcvdcm.model.entities import SEMANTIC_ATTRIBUTES
from semcvdcm.simulation.simulator import SyntheticDataset, simulate_dataset
from semcvdcm.simulation.spec import SyntheticSpec
from semcvdcm.training.config import TrainConfig, assert_valid_config
from semcvdcm.training.trainer import (
    TrainingData,
    carve_validation,
    initial_params,
    prepare_training_data,
    run_phase,
    sgd_step,
    train_phase1,
    train_phase2,
    train_sequential,
)

QUICK = TrainConfig(learning_rate=0.02, max_epochs=(3, 3, 3), patience=2, seed=7)


def test_weight_decay_step() -> None:
    params = init_params(k=2, m=1).replace(beta_num=np.array([1.0]))
    grads = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
    config = TrainConfig(learning_rate=0.1, l2_lambda=0.1)

    updated = sgd_step(params, grads, config, ("beta_num",))

    assert updated.beta_num.tolist() == pytest.approx([0.99])


def test_zero_gradient_without_decay_keeps_parameters() -> None:
    params = init_params(k=2, m=1, seed=3)
    grads = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}

    updated = sgd_step(params, grads, TrainConfig(l2_lambda=0.0), ("head", "beta_num"))

    assert updated.checksums() == params.checksums()


def test_frozen_and_fixed_entries_ignore_gradients() -> None:
    params = init_params(k=2, m=1, seed=3)
    grads = {name: np.ones_like(arr) for name, arr in params.arrays().items()}

    updated = sgd_step(params, grads, TrainConfig(learning_rate=0.5), ("beta_sem",))

    reference = SEMANTIC_ATTRIBUTES.index("p_building")
    assert updated.beta_sem[reference] == 0.0
    assert (np.delete(updated.beta_sem, reference) == -0.5).all()
    assert updated.checksum("head") == params.checksum("head")
    assert updated.checksum("beta_res") == params.checksum("beta_res")


def test_sgd_step_rejects_mismatched_shapes() -> None:
    params = init_params(k=2, m=1)
    grads = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
    grads["beta_num"] = np.zeros(3)

    with pytest.raises(ValueError, match="shape"):
        sgd_step(params, grads, TrainConfig(), ("beta_num",))


def test_config_rejects_bad_values() -> None:
    with pytest.raises(ValueError, match="learning_rate"):
        assert_valid_config(TrainConfig(learning_rate=0.0))
    with pytest.raises(ValueError, match="kappa"):
        assert_valid_config(TrainConfig(kappa=(1.0, 2.0, 0.0)))
    with pytest.raises(ValueError, match="Unknown training options"):
        TrainConfig().with_overrides(momentum=0.9)
    assert TrainConfig.from_dict({"max_epochs": 4}).max_epochs == (4, 4, 4)


def test_validation_carve_is_seeded(small_synthetic: SyntheticDataset) -> None:
    data = compile_choices(small_synthetic.observations, small_synthetic.embeddings)

    first = carve_validation(data, 0.1, seed=1)
    second = carve_validation(data, 0.1, seed=1)

    assert first.validation.obs_ids == second.validation.obs_ids
    assert first.validation.n == 30
    assert not set(first.validation.obs_ids) & set(first.train.obs_ids)
    assert carve_validation(data, 0.0, seed=1).validation is data


def test_zero_epochs_leave_parameters_unchanged(small_synthetic: SyntheticDataset) -> None:
    dataset = small_synthetic.to_dataset()
    data = prepare_training_data(dataset, QUICK)
    params = initial_params(dataset, QUICK)

    trained, result = run_phase(params, data, QUICK, "phase1", 1.0, ("head",), 0, stream=1)

    assert trained.checksums() == params.checksums()
    assert result.epochs_run == 0
    assert result.validation_components["rmse"] is not None


def test_phase_one_needs_labels(small_synthetic: SyntheticDataset) -> None:
    data = compile_choices(small_synthetic.observations, small_synthetic.embeddings)
    params = init_params(k=12, m=2)

    with pytest.raises(ValueError, match="missing label"):
        train_phase1(params, TrainingData(train=data, validation=data), QUICK)


def test_phase_two_expects_zero_residual(small_synthetic: SyntheticDataset) -> None:
    dataset = small_synthetic.to_dataset()
    data = prepare_training_data(dataset, QUICK)
    params = initial_params(dataset, QUICK).replace(beta_res=np.ones(12))

    with pytest.raises(ValueError, match="residual"):
        train_phase2(params, data, QUICK)


def test_sequential_training_freezes_and_is_deterministic(
    small_synthetic: SyntheticDataset,
) -> None:
    dataset = small_synthetic.to_dataset()
    seen: list[str] = []

    first = train_sequential(dataset, QUICK, on_phase_end=lambda p, r: seen.append(r.phase))
    second = train_sequential(dataset, QUICK)

    assert seen == ["phase1", "phase2", "phase3"]
    assert first.params.to_dict() == second.params.to_dict()
    assert all(phase.frozen_groups_intact for phase in first.phases)
    phase1, phase2, phase3 = first.phases
    assert phase1.checksums_after["beta_sem"] == phase1.checksums_before["beta_sem"]
    assert phase2.checksums_after["head"] == phase1.checksums_after["head"]
    assert phase3.checksums_after["beta_sem"] == phase2.checksums_after["beta_sem"]
    assert first.params.beta_sem[SEMANTIC_ATTRIBUTES.index("p_building")] == 0.0
    assert [entry["phase"] for entry in first.params.history][:1] == ["phase1"]


def test_residual_phase_does_not_lower_training_likelihood(
    small_synthetic: SyntheticDataset,
) -> None:
    dataset = small_synthetic.to_dataset()
    config = QUICK.with_overrides(max_epochs=(3, 3, 10), patience=10)
    captured = {}

    result = train_sequential(
        dataset, config, on_phase_end=lambda params, phase: captured.update({phase.phase: params})
    )

    before = log_likelihood(captured["phase2"], result.data.train)
    after = log_likelihood(captured["phase3"], result.data.train)
    assert after >= before - 1e-4
    assert result.phases[2].stop_reason in ("max_epochs", "early_stop", "ll_decrease")


def test_training_needs_a_split(small_synthetic: SyntheticDataset) -> None:
    dataset = small_synthetic.to_dataset()
    dataset.split = None

    with pytest.raises(ValueError, match="split"):
        train_sequential(dataset, QUICK)


def test_semantic_head_learns_a_linear_encoder() -> None:
    spec = SyntheticSpec(n_observations=400, k=12, mixing="identity", n_zones=4, seed=2)
    dataset = simulate_dataset(spec).to_dataset()
    config = TrainConfig(optimizer="lbfgs", l2_lambda=0.0, max_epochs=(500, 0, 0), seed=2)
    data = prepare_training_data(dataset, config)

    params, result = train_phase1(initial_params(dataset, config), data, config)

    assert semantic_rmse(params, data.validation) < 0.01
    assert result.frozen_groups_intact
    assert not params.beta_sem.any()


def test_stronger_decay_never_grows_the_coefficients(small_synthetic: SyntheticDataset) -> None:
    dataset = small_synthetic.to_dataset()
    base = TrainConfig(optimizer="lbfgs", max_epochs=(20, 300, 0), validation_fraction=0.0)
    data = prepare_training_data(dataset, base)
    head, _ = train_phase1(initial_params(dataset, base), data, base)
    norms = []
    for l2 in (0.0, 0.1, 1.0):
        params, _ = train_phase2(head, data, base.with_overrides(l2_lambda=l2))
        norms.append(l2_norm([params.beta_num, params.beta_sem]))

    assert norms[0] >= norms[1] - 1e-6
    assert norms[1] >= norms[2] - 1e-6
