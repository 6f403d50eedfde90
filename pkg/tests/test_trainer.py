"""Optimizer, training loop, checkpoint container, and classifier head."""

import numpy as np
import pytest

import foldgraph.network as net
import foldgraph.pointcloud as pc
import foldgraph.trainer as tr
from foldgraph.errors import CheckpointError, DomainError
from util import tiny_model_config


def make_dataset(count=3, n=16, seed=0):
    return [
        pc.normalize_unit_cube(pc.sample_synthetic("sphere", n, seed=seed + i))
        for i in range(count)
    ]


def snapshot(model):
    return {n: p.values.copy() for n, p in model.named_parameters()}


# ---------------------------------------------------------------------------
# adam


def test_adam_zero_gradient_no_change():
    cfg = tr.TrainConfig(lr=0.1, epochs=1)
    w = np.ones((2, 2))
    state = tr.AdamState.for_params([("w", w)])
    tr.adam_step([("w", w)], [np.zeros((2, 2))], state, cfg, 1)
    assert np.array_equal(w, np.ones((2, 2)))


def test_adam_first_step_is_signed_lr():
    cfg = tr.TrainConfig(lr=0.01, epochs=1)
    w = np.zeros(3)
    g = np.array([0.5, -2.0, 1e-3])
    state = tr.AdamState.for_params([("w", w)])
    tr.adam_step([("w", w)], [g], state, cfg, 1)
    # bias-corrected first step: -lr * g / (|g| + eps) ~ -lr * sign(g)
    assert np.allclose(w, -cfg.lr * np.sign(g), atol=1e-4)


def test_adam_requires_positive_step_index():
    cfg = tr.TrainConfig(epochs=1)
    w = np.zeros(1)
    state = tr.AdamState.for_params([("w", w)])
    with pytest.raises(DomainError):
        tr.adam_step([("w", w)], [np.ones(1)], state, cfg, 0)


def test_adam_finite_in_finite_out():
    cfg = tr.TrainConfig(lr=1.0, epochs=1)
    rng = np.random.default_rng(0)
    w = rng.standard_normal((4, 4))
    state = tr.AdamState.for_params([("w", w)])
    for t in range(1, 20):
        tr.adam_step([("w", w)], [rng.standard_normal((4, 4))], state, cfg, t)
    assert np.all(np.isfinite(w))


# ---------------------------------------------------------------------------
# training loop


def test_train_config_validation():
    with pytest.raises(DomainError):
        tr.TrainConfig(lr=-1.0)
    with pytest.raises(DomainError):
        tr.TrainConfig(batch_size=0)
    with pytest.raises(DomainError):
        tr.TrainConfig(loss_kind="huber")


def test_zero_lr_leaves_parameters_unchanged():
    model = net.init_model(tiny_model_config(), seed=0)
    before = snapshot(model)
    tr.train(model, make_dataset(2), tr.TrainConfig(lr=0.0, epochs=3, batch_size=2))
    after = snapshot(model)
    for name in before:
        assert np.array_equal(before[name], after[name]), name


def test_empty_dataset_rejected():
    model = net.init_model(tiny_model_config(), seed=0)
    with pytest.raises(DomainError):
        tr.train(model, [], tr.TrainConfig(epochs=1))


def test_training_descends_on_single_cloud():
    model = net.init_model(tiny_model_config(), seed=1)
    data = make_dataset(1)
    records = tr.train(model, data, tr.TrainConfig(lr=1e-3, epochs=200, batch_size=1))
    assert records[-1].loss < records[0].loss


def test_training_deterministic_logs(tmp_path):
    logs = []
    for run in range(2):
        model = net.init_model(tiny_model_config(), seed=3)
        path = tmp_path / f"run{run}.log"
        tr.train(model, make_dataset(3), tr.TrainConfig(lr=1e-3, epochs=4, batch_size=2),
                 log_path=path)
        logs.append(path.read_bytes())
    assert logs[0] == logs[1]
    first = logs[0].decode().splitlines()[0].split()
    assert first[0] == "epoch" and first[2] == "loss" and first[4] == "wallclock_s"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_loss_aborts_with_batch_index():
    model = net.init_model(tiny_model_config(), seed=4)
    # inflate a weight so the forward pass overflows to inf/nan
    model.fold2.layers[-1].weights.values[...] = 1e200
    model.encoder_point_mlp.layers[0].weights.values[...] = 1e200
    with pytest.raises(Exception) as err:
        tr.train(model, make_dataset(1), tr.TrainConfig(lr=1e-3, epochs=1, batch_size=1))
    assert "batch" in str(err.value)


def test_gradient_clipping_reported():
    model = net.init_model(tiny_model_config(), seed=5)
    cfg = tr.TrainConfig(lr=1e-3, epochs=1, batch_size=1, clip_norm=1e-9)
    records = tr.train(model, make_dataset(1), cfg)
    assert records[0].clip_events >= 1


# ---------------------------------------------------------------------------
# checkpoints


def train_briefly(tmp_path, epochs=2, seed=7):
    model = net.init_model(tiny_model_config(filter_kind="adjacency"), seed=seed)
    cfg = tr.TrainConfig(lr=1e-3, epochs=epochs, batch_size=2, seed=seed)
    path = tmp_path / "ck.bin"
    tr.train(model, make_dataset(3), cfg, checkpoint_path=path)
    return model, cfg, path


def test_checkpoint_round_trip_bitwise(tmp_path):
    model, cfg, path = train_briefly(tmp_path)
    ck = tr.load_checkpoint(path)
    assert ck.epoch == cfg.epochs
    assert ck.train_config == cfg
    assert ck.model.config == model.config
    for (name, p), (_, q) in zip(model.named_parameters(),
                                 ck.model.named_parameters()):
        assert np.array_equal(p.values, q.values), name


def test_checkpoint_bad_magic(tmp_path):
    _, _, path = train_briefly(tmp_path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        tr.load_checkpoint(path)


def test_checkpoint_truncation_reports_offset(tmp_path):
    _, _, path = train_briefly(tmp_path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointError) as err:
        tr.load_checkpoint(path)
    assert "offset" in str(err.value)


def test_checkpoint_trailing_bytes_rejected(tmp_path):
    _, _, path = train_briefly(tmp_path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError):
        tr.load_checkpoint(path)


def test_checkpoint_version_mismatch(tmp_path):
    _, _, path = train_briefly(tmp_path)
    raw = bytearray(path.read_bytes())
    raw[8] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        tr.load_checkpoint(path)


def test_resume_matches_uninterrupted_run(tmp_path):
    data = make_dataset(3)
    full_cfg = tr.TrainConfig(lr=1e-3, epochs=4, batch_size=2, seed=9)

    straight = net.init_model(tiny_model_config(), seed=9)
    tr.train(straight, data, full_cfg)

    half_cfg = tr.TrainConfig(lr=1e-3, epochs=2, batch_size=2, seed=9)
    resumed = net.init_model(tiny_model_config(), seed=9)
    path = tmp_path / "mid.bin"
    tr.train(resumed, data, half_cfg, checkpoint_path=path)
    ck = tr.load_checkpoint(path)
    tr.train(ck.model, data, full_cfg, adam_state=ck.adam_state,
             start_epoch=ck.epoch)

    for (name, p), (_, q) in zip(straight.named_parameters(),
                                 ck.model.named_parameters()):
        assert np.array_equal(p.values, q.values), name


# ---------------------------------------------------------------------------
# linear classifier


def separable_codes(per_class=10, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.array([[4.0, 0.0], [-4.0, 3.0], [0.0, -5.0]])
    codes = np.concatenate(
        [c + 0.3 * rng.standard_normal((per_class, 2)) for c in centers]
    )
    labels = np.repeat(np.arange(3), per_class)
    return codes, labels


def test_classifier_separable_reaches_full_accuracy():
    codes, labels = separable_codes()
    clf = tr.fit_classifier(codes, labels, epochs=2000, lr=0.05, seed=0)
    assert (tr.classify(clf, codes) == labels).mean() == 1.0


def test_classifier_single_class_rejected():
    with pytest.raises(DomainError):
        tr.fit_classifier(np.zeros((5, 2)), np.zeros(5, dtype=int))


def test_classifier_shuffled_labels_near_chance():
    rng = np.random.default_rng(1)
    codes = rng.standard_normal((80, 4))
    labels = np.repeat(np.arange(4), 20)
    rng.shuffle(labels)
    clf = tr.fit_classifier(codes, labels, epochs=300, lr=0.05, seed=1)
    held_codes = rng.standard_normal((40, 4))
    held_labels = rng.integers(0, 4, 40)
    train_acc = (tr.classify(clf, codes) == labels).mean()
    held_acc = (tr.classify(clf, held_codes) == held_labels).mean()
    assert train_acc < 0.8
    assert held_acc < 0.6  # near the 0.25 chance level


def test_classifier_duplication_invariance():
    codes, labels = separable_codes()
    clf_a = tr.fit_classifier(codes, labels, epochs=500, lr=0.05, seed=2)
    doubled = np.concatenate([codes, codes])
    clf_b = tr.fit_classifier(doubled, np.concatenate([labels, labels]),
                              epochs=500, lr=0.05, seed=2)
    assert np.allclose(clf_a.weights, clf_b.weights, atol=1e-8)
    assert np.allclose(clf_a.bias, clf_b.bias, atol=1e-8)


def test_classify_matches_brute_force_argmax():
    rng = np.random.default_rng(3)
    clf = tr.LinearClassifier(rng.standard_normal((4, 5)), rng.standard_normal(4))
    codes = rng.standard_normal((20, 5))
    got = tr.classify(clf, codes)
    for i, code in enumerate(codes):
        scores = [clf.weights[c] @ code + clf.bias[c] for c in range(4)]
        assert got[i] == int(np.argmax(scores))


def test_classify_tie_lowest_index():
    clf = tr.LinearClassifier(np.zeros((3, 2)), np.zeros(3))
    assert np.all(tr.classify(clf, np.ones((4, 2))) == 0)


def test_classify_one_hot_identity():
    clf = tr.LinearClassifier(np.eye(3), np.zeros(3))
    assert np.array_equal(tr.classify(clf, np.eye(3)), [0, 1, 2])


def test_classify_dimension_mismatch():
    clf = tr.LinearClassifier(np.eye(3), np.zeros(3))
    with pytest.raises(DomainError):
        tr.classify(clf, np.ones((2, 4)))
