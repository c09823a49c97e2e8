import numpy as np
import pytest

from sparsedepth.autodiff import Tensor
from sparsedepth.errors import ConfigurationError, TrainingDivergedError, UsageError
from sparsedepth.io import load_checkpoint, save_checkpoint
from sparsedepth.model import GlobalLocalModel, ModelConfig
from sparsedepth.scene import DataConfig, generate_dataset
from sparsedepth.training import (
    EpochSampler,
    RunLog,
    TrainConfig,
    attach_labels,
    evaluate,
    predict_inverse_depth,
    train,
)

SMALL = DataConfig(width=32, height=32, max_rotation_deg=2.0)
TINY = ModelConfig(encoder_channels=(4, 4, 8, 8, 8), local_channels=(4, 4, 4))


@pytest.fixture(scope="module")
def pairs():
    return generate_dataset(0, 6, SMALL)


class Oracle:
    """Stand-in model that returns fixed inverse depth for a whole batch."""

    def __init__(self, z):
        self.z = np.asarray(z, dtype=np.float64)

    def __call__(self, I1, I2, F):
        return Tensor(self.z[: I1.shape[0], None])


def params_bytes(model):
    return {k: v.tobytes() for k, v in model.state_dict().items()}


def test_zero_iterations_leaves_model_untouched(pairs):
    m = GlobalLocalModel(TINY, seed=0)
    before = params_bytes(m)
    _, log = train(m, attach_labels(pairs, 1), TrainConfig(iterations=0))
    assert params_bytes(m) == before
    assert log.steps == [] and log.loss_history == []


def test_training_is_deterministic(pairs):
    cfg = TrainConfig(iterations=4, batch_size=2, log_every=2, lr=1e-3, seed=3)
    runs = []
    for _ in range(2):
        m = GlobalLocalModel(TINY, seed=0)
        _, log = train(m, attach_labels(pairs, 4), cfg, testset=pairs[:2])
        runs.append((params_bytes(m), log.to_csv()))
    assert runs[0] == runs[1]
    assert runs[0][1].count("\n") == 3


def test_training_reduces_labelled_loss_on_one_pair(pairs):
    m = GlobalLocalModel(TINY, seed=0)
    cfg = TrainConfig(iterations=60, batch_size=1, lr=1e-3, augment=False, smooth_weight=0.0, log_every=60)
    samples = attach_labels(pairs[:1], 16)
    _, log = train(m, samples, cfg)
    assert np.mean(log.loss_history[-5:]) < 0.5 * log.loss_history[0]


def test_divergence_raises_with_finite_checkpoint(pairs):
    bad = pairs[0].replace(flow12=np.full_like(pairs[0].flow12, np.nan))
    m = GlobalLocalModel(TINY, seed=0)
    before = params_bytes(m)
    with pytest.raises(TrainingDivergedError) as info:
        train(m, attach_labels([bad], 1), TrainConfig(iterations=3, batch_size=1))
    err = info.value
    assert err.step == 1
    assert all(np.all(np.isfinite(v)) for v in err.checkpoint.values())
    assert {k: v.tobytes() for k, v in err.checkpoint.items()} == before


def test_checkpoint_round_trip_reproduces_metrics(pairs, tmp_path):
    m = GlobalLocalModel(TINY, seed=0)
    train(m, attach_labels(pairs, 1), TrainConfig(iterations=2, batch_size=2, lr=1e-3))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, m, config_hash="abc")
    m2, header = load_checkpoint(path)
    assert header["config_hash"] == "abc"
    assert params_bytes(m2) == params_bytes(m)
    a, b = evaluate(m, pairs), evaluate(m2, pairs)
    assert (a.abs_inv, a.abs_rel, a.s_rmse) == (b.abs_inv, b.abs_rel, b.s_rmse)
    assert predict_inverse_depth(m, pairs).tobytes() == predict_inverse_depth(m2, pairs).tobytes()


def test_evaluate_with_exact_ground_truth(pairs):
    z = np.stack([1.0 / p.depth1 for p in pairs])
    rec = evaluate(Oracle(z), pairs)
    assert rec.abs_rel < 1e-12 and rec.s_rmse < 1e-12 and rec.abs_inv < 1e-12
    assert rec.n_pixels == len(pairs) * 32 * 32


def test_evaluate_scaled_prediction_has_zero_s_rmse(pairs):
    z = np.stack([1.0 / (2.5 * p.depth1) for p in pairs])
    rec = evaluate(Oracle(z), pairs)
    assert rec.s_rmse < 1e-7
    assert rec.abs_rel == pytest.approx(1.5, rel=1e-9)


def test_epoch_sampler_covers_each_index_once_per_epoch():
    s = EpochSampler(10, 5, seed=0)
    first = np.concatenate([next(s), next(s)])
    assert sorted(first) == list(range(10))
    s = EpochSampler(7, 3, seed=1)
    seen = np.concatenate([next(s) for _ in range(7)])
    assert np.all(np.bincount(seen, minlength=7) == 3)
    with pytest.raises(UsageError):
        EpochSampler(0, 1, 0)


def test_labels_are_fixed_per_pair(pairs):
    a, b = attach_labels(pairs, 4), attach_labels(pairs, 4)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.labels.xs, y.labels.xs)
        np.testing.assert_array_equal(x.labels.ys, y.labels.ys)


def test_runlog_steps_must_increase():
    log = RunLog()
    log.add(5, 0.1, None)
    with pytest.raises(UsageError):
        log.add(5, 0.2, None)


@pytest.mark.parametrize("field,value", [("lr", 0.0), ("batch_size", 0), ("iterations", -1), ("n_labels", 0), ("label_mode", "grid")])
def test_train_config_validation(field, value):
    with pytest.raises(ConfigurationError, match=f"train.{field}"):
        TrainConfig(**{field: value})
