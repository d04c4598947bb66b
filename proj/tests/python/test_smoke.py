import numpy as np
import pytest

import embracenet as en


def small_spec(m=3, seed=7):
    spec = en.SyntheticSpec()
    spec.modalities = m
    spec.classes = 4
    spec.latent = 5
    spec.width = 6
    spec.train = 200
    spec.val = 50
    spec.test = 80
    spec.stream = 0
    spec.seed = seed
    return spec


def test_weighted_f1_hand_case():
    assert en.weighted_f1([0, 0, 1, 1], [0, 0, 0, 1], 2) == pytest.approx(0.7667, abs=1e-4)
    with pytest.raises(en.UsageError):
        en.weighted_f1([], [], 2)


def test_adjust_and_calibrate():
    assert en.adjust_probabilities([0.2, 0.3, 0.5], [1, 0, 1]) == pytest.approx([0.2 / 0.7, 0.0, 0.5 / 0.7])
    with pytest.raises(en.UnrecoverableInputError):
        en.adjust_probabilities([0.5, 0.5], [0, 0])
    assert en.calibrate_probabilities([90.89, 90.92]) == pytest.approx([0.49992, 0.50008], abs=1e-5)


def test_sample_selection_law():
    picked = en.sample_selection([0.2, 0.3, 0.5], 100000, seed=3)
    freq = np.bincount(picked, minlength=3) / picked.size
    assert np.allclose(freq, [0.2, 0.3, 0.5], atol=0.01)


def test_embrace_expected_is_the_weighted_sum():
    d = [np.arange(4.0), np.ones(4)]
    out = en.embrace_expected(d, [0.25, 0.75])
    assert np.allclose(out, 0.25 * d[0] + 0.75 * d[1])


def test_fft_matches_numpy():
    rng = np.random.default_rng(0)
    x = rng.normal(size=16) + 1j * rng.normal(size=16)
    assert np.allclose(en.fft(list(x)), np.fft.fft(x), atol=1e-10)
    assert np.allclose(en.fft(list(x), inverse=True), np.fft.ifft(x), atol=1e-10)
    with pytest.raises(en.EmbraceError):
        en.fft([1.0, 2.0, 3.0])


def test_count_sketch_and_cmp():
    plan = en.CountSketchPlan.create(5, 8, 1)
    v = np.arange(5.0)
    s = en.count_sketch(v, plan)
    ref = np.zeros(8)
    for i in range(5):
        ref[plan.hash[i]] += plan.sign[i] * v[i]
    assert np.allclose(s, ref)
    fused = en.cmp_fuse([v + 1, v - 2], [plan, en.CountSketchPlan.create(5, 8, 2)])
    assert fused.shape == (8,)


def test_combinations():
    assert len(en.enumerate_combinations(8, 1000)) == 255
    assert len(en.enumerate_combinations(19, 1000)) == 14319


def test_synthetic_batches_and_missing_modalities():
    data = en.generate_synthetic(small_spec())
    train = data["train"]
    assert len(train) == 200
    assert train.modalities == 3
    assert train.inputs[0].shape == (200, 6)
    masked = en.apply_missing_modalities(train, 0b101)
    assert (masked.presence == np.array([1, 0, 1], dtype=np.uint8)).all()
    assert not masked.inputs[1].any()
    rebuilt = en.ModalityBatch(train.inputs, train.labels.tolist(), masked.presence)
    assert (rebuilt.presence == masked.presence).all()
    again = en.generate_synthetic(small_spec())["train"]
    assert all((a == b).all() for a, b in zip(train.inputs, again.inputs))


CONFIG = """
run.name = py_smoke
data.source = synthetic
data.train_limit = 0
data.normalize = 0,1
synthetic.modalities = 3
synthetic.classes = 3
synthetic.latent = 4
synthetic.width = 4
synthetic.class_separation = 1.0
synthetic.noise = 0.3
synthetic.correlation = 0.5
synthetic.run_min = 20
synthetic.run_max = 100
synthetic.train = 300
synthetic.val = 60
synthetic.test = 60
synthetic.stream = 0
synthetic.seed = 1
model.strategy = embracenet
model.encoder = dense:8
model.feature_width = 8
model.fusion_width = 16
model.head = 8
model.dropout_keep = 1.0
model.fill = mean
model.seed = 2
embrace.p = uniform
embrace.inference = expected
embrace.modality_dropout = independent:0.5
mae.corrupt_rate = 0.5
mae.pretrain_epochs = 0
train.epochs = 2
train.batch_size = 64
train.learning_rate = 0.001
train.beta1 = 0.9
train.beta2 = 0.999
train.epsilon = 0.01
train.seed = 3
train.log_every = 100
output.dir = unused
"""


def test_train_save_load_round_trip(tmp_path):
    config = tmp_path / "run.conf"
    config.write_text(CONFIG)
    model, metrics, splits = en.train_config(config)
    assert model.trained and model.strategy == "embracenet"
    assert metrics["steps"] == 10
    test = splits["test"]
    pred = model.predict(test)
    assert pred.shape == (60,)
    probs = model.probabilities(test)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-5)
    assert model.embraced(test).shape == (60, 16)

    path = tmp_path / "model.embr"
    model.save(path)
    loaded = en.FusionModel.load(path)
    assert loaded.param_digest == model.param_digest
    assert loaded.config_digest == model.config_digest
    assert (loaded.predict(test) == pred).all()

    digest = loaded.param_digest
    loaded.selection_probabilities = [0.5, 0.25, 0.25]
    assert loaded.selection_probabilities == [0.5, 0.25, 0.25]
    assert loaded.param_digest == digest

    # absent data cannot move the prediction
    masked = en.apply_missing_modalities(test, 0b001)
    noisy_inputs = masked.inputs
    noisy_inputs[1] = np.random.default_rng(0).normal(size=noisy_inputs[1].shape).astype(np.float32)
    noisy = en.ModalityBatch(noisy_inputs, masked.labels.tolist(), masked.presence)
    assert (loaded.predict(masked) == loaded.predict(noisy)).all()


def test_config_errors_surface_as_python_exceptions(tmp_path):
    config = tmp_path / "bad.conf"
    config.write_text(CONFIG.replace("model.strategy = embracenet", "model.strategy = nope"))
    with pytest.raises(en.ConfigError):
        en.train_config(config)
