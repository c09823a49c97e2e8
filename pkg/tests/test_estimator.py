import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sparsedepth import GlobalLocalDepthEstimator, SmallEncDecDepthEstimator
from sparsedepth.errors import ConfigurationError
from sparsedepth.scene import DataConfig, SparseLabelSet, generate_dataset


@pytest.fixture(scope="module")
def pairs():
    return generate_dataset(0, 4, DataConfig(width=32, height=32, max_rotation_deg=2.0))


def test_params_round_trip():
    est = GlobalLocalDepthEstimator(n_labels=4, lr=1e-3, use_coords=False)
    params = est.get_params()
    assert params["n_labels"] == 4 and params["use_coords"] is False
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(iterations=7)
    assert est.iterations == 7


def test_predict_before_fit(pairs):
    with pytest.raises(NotFittedError):
        GlobalLocalDepthEstimator().predict(pairs)


@pytest.mark.parametrize("cls", [GlobalLocalDepthEstimator, SmallEncDecDepthEstimator])
def test_fit_predict_score(cls, pairs):
    est = cls(iterations=2, batch_size=2, lr=1e-3).fit(pairs)
    depth = est.predict(pairs)
    assert depth.shape == (4, 32, 32)
    assert np.all(depth > 0) and np.all(np.isfinite(depth))
    np.testing.assert_array_equal(depth, 1.0 / np.maximum(est.predict_inverse(pairs), 1e-3))
    assert est.score(pairs) == -est.evaluate(pairs).abs_inv
    assert len(est.log_.loss_history) == 2


def test_fit_is_seeded(pairs):
    a = GlobalLocalDepthEstimator(iterations=2, batch_size=2, random_state=3).fit(pairs).predict(pairs)
    b = GlobalLocalDepthEstimator(iterations=2, batch_size=2, random_state=3).fit(pairs).predict(pairs)
    assert a.tobytes() == b.tobytes()


def test_explicit_labels(pairs):
    y = [SparseLabelSet([1], [2], [1.0 / p.depth1[2, 1]]) for p in pairs]
    GlobalLocalDepthEstimator(iterations=1, batch_size=2).fit(pairs, y)
    with pytest.raises(ConfigurationError):
        GlobalLocalDepthEstimator(iterations=1).fit(pairs, y[:2])
    with pytest.raises(ConfigurationError):
        GlobalLocalDepthEstimator(iterations=1).fit(pairs, [SparseLabelSet([99], [0], [1.0])] * 4)


def test_input_validation(pairs):
    with pytest.raises(ConfigurationError):
        GlobalLocalDepthEstimator(iterations=1).fit([])
    with pytest.raises(ConfigurationError):
        GlobalLocalDepthEstimator(iterations=1).fit([np.zeros((32, 32))])
    odd = generate_dataset(0, 1, DataConfig(width=24, height=32))
    with pytest.raises(ConfigurationError):
        GlobalLocalDepthEstimator(iterations=1).fit(odd)
