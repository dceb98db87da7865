import numpy as np
import pytest

from compatlearn.data import SyntheticSpec, make_synthetic, split_tasks
from compatlearn.errors import ConfigError, DivergenceError
from compatlearn.network import ModelConfig, TrainingHyperparams
from compatlearn.trainer import ExperimentConfig, run_sequence

DIM = 8


def tiny_sequence(num_tasks=2, num_classes=10, eval_classes=4, samples=12, seed=0):
    dataset = make_synthetic(
        SyntheticSpec(
            num_classes=num_classes,
            samples_per_class=samples,
            input_dim=DIM,
            cluster_sigma=0.15,
            mean_seed=seed,
            noise_seed=seed + 1,
        )
    )
    return split_tasks(dataset, num_tasks=num_tasks, eval_class_count=eval_classes, seed=seed)


def tiny_config(total_classes, **overrides):
    params = dict(
        model=ModelConfig(
            input_dim=DIM,
            hidden_layers=(10,),
            feature_dim=total_classes - 1,
            nonlinearity="tanh",
            seed=1,
        ),
        hyperparams=TrainingHyperparams(
            learning_rate=0.05,
            lr_milestones=(3,),
            lr_decay_factor=0.1,
            weight_decay=1e-4,
            momentum=0.9,
            epochs_per_task=4,
            batch_size=16,
            lambda_base=5.0,
        ),
        memory_per_class=3,
        classifier_mode="fixed_simplex",
        fd_mode="memory_only",
        train_seed=11,
    )
    params.update(overrides)
    return ExperimentConfig(**params)


def test_single_task_never_distills():
    sequence, _ = tiny_sequence(num_tasks=1)
    timeline = run_sequence(tiny_config(sequence.total_classes), sequence)
    assert len(timeline.checkpoints) == 1
    rows = timeline.all_log_rows()
    assert all(row.lambda_weight == 0.0 for row in rows)
    assert all(row.fd == 0.0 for row in rows)


def test_distillation_active_from_the_second_task():
    sequence, _ = tiny_sequence(num_tasks=2)
    timeline = run_sequence(tiny_config(sequence.total_classes), sequence)
    task2 = timeline.logs[1]
    assert all(row.lambda_weight > 0.0 for row in task2)
    assert any(row.fd > 0.0 for row in task2)


def test_fd_off_forces_zero_lambda():
    sequence, _ = tiny_sequence(num_tasks=3)
    timeline = run_sequence(tiny_config(sequence.total_classes, fd_mode="off"), sequence)
    rows = timeline.all_log_rows()
    assert all(row.lambda_weight == 0.0 for row in rows)
    assert all(row.fd == 0.0 for row in rows)


def test_prototypes_survive_training_bitwise():
    sequence, _ = tiny_sequence(num_tasks=2)
    timeline = run_sequence(tiny_config(sequence.total_classes), sequence)
    before = timeline.prototypes.checksum_bytes()
    sequence2, _ = tiny_sequence(num_tasks=2)
    timeline2 = run_sequence(tiny_config(sequence2.total_classes), sequence2)
    assert timeline2.prototypes.checksum_bytes() == before
    from compatlearn.geometry import build_simplex

    assert timeline.prototypes.checksum_bytes() == build_simplex(sequence.total_classes).checksum_bytes()


def test_sequence_is_bitwise_reproducible():
    checksums = []
    for _ in range(2):
        sequence, _ = tiny_sequence(num_tasks=3)
        timeline = run_sequence(tiny_config(sequence.total_classes), sequence)
        checksums.append([c.parameter_checksum() for c in timeline.checkpoints])
    assert checksums[0] == checksums[1]


def test_checkpoints_are_frozen_and_distinct():
    sequence, _ = tiny_sequence(num_tasks=3)
    timeline = run_sequence(tiny_config(sequence.total_classes), sequence)
    sums = [c.parameter_checksum() for c in timeline.checkpoints]
    assert len(set(sums)) == 3  # warm start but training moves the weights
    with pytest.raises(ValueError):
        timeline.checkpoints[0].weights[0][0, 0] = 1.0


def test_lambda_follows_the_class_ratio():
    sequence, _ = tiny_sequence(num_tasks=3, num_classes=13, eval_classes=4)
    # tasks of 3 classes each over 9 training classes
    timeline = run_sequence(tiny_config(sequence.total_classes), sequence)
    lam_by_task = [rows[0].lambda_weight for rows in timeline.logs]
    assert lam_by_task[0] == 0.0
    assert lam_by_task[1] == pytest.approx(5.0 * np.sqrt(3 / 3))
    assert lam_by_task[2] == pytest.approx(5.0 * np.sqrt(3 / 6))


def test_memory_covers_all_previous_classes():
    sequence, _ = tiny_sequence(num_tasks=3)
    timeline = run_sequence(tiny_config(sequence.total_classes), sequence)
    expected = sorted(c for t in sequence.tasks for c in t.classes)
    assert list(timeline.final_memory.classes()) == expected
    per_class = timeline.final_memory.per_class_sizes()
    assert all(v == 3 for v in per_class.values())


def test_trainable_mode_grows_the_classifier():
    sequence, _ = tiny_sequence(num_tasks=3)
    config = tiny_config(sequence.total_classes, classifier_mode="trainable", fd_mode="off")
    timeline = run_sequence(config, sequence)
    assert timeline.prototypes is None
    rows = [snap.shape[0] for snap in timeline.classifier_snapshots]
    per_task = [len(t.classes) for t in sequence.tasks]
    assert rows == list(np.cumsum(per_task))
    with pytest.raises(ValueError):
        timeline.classifier_snapshots[0][0, 0] = 1.0


def test_trainable_mode_with_memory_distillation_runs():
    sequence, _ = tiny_sequence(num_tasks=2)
    config = tiny_config(sequence.total_classes, classifier_mode="trainable")
    timeline = run_sequence(config, sequence)
    assert any(row.fd > 0.0 for row in timeline.logs[1])


def test_fixed_mode_requires_matching_feature_dim():
    sequence, _ = tiny_sequence(num_tasks=2)
    with pytest.raises(ConfigError):
        run_sequence(tiny_config(sequence.total_classes + 1), sequence)


def test_divergence_is_reported_with_context():
    sequence, _ = tiny_sequence(num_tasks=1)
    config = tiny_config(
        sequence.total_classes,
        hyperparams=TrainingHyperparams(
            learning_rate=1e200,
            weight_decay=1e-4,  # lr * wd blows the parameters past float range
            momentum=0.9,
            epochs_per_task=4,
            batch_size=16,
            lambda_base=0.0,
        ),
        fd_mode="off",
    )
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(DivergenceError, match="task 1"):
            run_sequence(config, sequence)


def test_full_batch_fd_mode_covers_current_samples():
    sequence, _ = tiny_sequence(num_tasks=2)
    cfg_mem = tiny_config(sequence.total_classes, fd_mode="memory_only")
    cfg_all = tiny_config(sequence.total_classes, fd_mode="full_batch")
    t_mem = run_sequence(cfg_mem, sequence)
    sequence2, _ = tiny_sequence(num_tasks=2)
    t_all = run_sequence(cfg_all, sequence2)
    # same seeds, different scope: the trained weights must differ
    assert (
        t_mem.checkpoints[1].parameter_checksum() != t_all.checkpoints[1].parameter_checksum()
    )


def test_persistence_writes_the_training_log(tmp_path):
    sequence, _ = tiny_sequence(num_tasks=2)
    config = tiny_config(sequence.total_classes, output_dir=tmp_path / "exp")
    run_sequence(config, sequence)
    out = tmp_path / "exp"
    assert (out / "checkpoint_task_001.ckpt").exists()
    assert (out / "checkpoint_task_002.ckpt").exists()
    assert (out / "prototypes.ckpt").exists()
    assert (out / "memory_final.ckpt").exists()
    log = (out / "training_log.csv").read_text().splitlines()
    assert log[0] == "task,epoch,ce,fd,lambda,total"
    assert len(log) == 1 + 2 * 4  # header + tasks * epochs
