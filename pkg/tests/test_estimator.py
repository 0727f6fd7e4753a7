import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from bridgediff.conditioning import ConditionPayload
from bridgediff.data import make_pointcloud_dataset
from bridgediff.estimator import BridgeRegressor, as_conditions
from bridgediff.exceptions import InvalidInputError
from bridgediff.numerics import make_rng


def small(**kw):
    base = dict(T=10, steps=20, batch=16, hidden=16, token_dim=8, attn_dim=8, time_dim=8)
    base.update(kw)
    return BridgeRegressor(**base)


@pytest.fixture(scope="module")
def xy():
    data = make_pointcloud_dataset(100, make_rng(0))
    return np.stack([d.pre for d in data]), np.stack([d.post for d in data]), np.array([d.cond.label for d in data])


def test_params_and_clone():
    est = small(lr=5e-3)
    params = est.get_params()
    assert params["lr"] == 5e-3 and params["T"] == 10
    twin = clone(est)
    assert twin.get_params() == params and twin is not est


def test_unfitted_predict():
    with pytest.raises(NotFittedError):
        small().predict(np.zeros((2, 2)))


def test_fit_predict_deterministic(xy):
    X, y, labels = xy
    est = small().fit(X, y, cond=labels)
    assert est.n_features_in_ == 2
    a, b = est.predict(X[:5], cond=labels[:5]), est.predict(X[:5], cond=labels[:5])
    assert a.shape == (5, 2) and np.array_equal(a, b)
    again = small().fit(X, y, cond=labels)
    assert np.array_equal(again.predict(X[:5], cond=labels[:5]), a)


def test_sample_trace_and_steps(xy):
    X, y, labels = xy
    est = small(sample_steps=5).fit(X, y, cond=labels)
    trace = est.sample(X[:3], cond=labels[:3], full_trace=True)
    assert trace.timesteps == [10, 8, 6, 4, 2, 0]
    assert np.array_equal(trace.steps[0][1], X[:3])


def test_from_checkpoint_matches(xy):
    X, y, labels = xy
    est = small().fit(X, y, cond=labels)
    other = BridgeRegressor.from_checkpoint(est.checkpoint_, sample_steps=5)
    assert other.sample_steps == 5 and other.T == 10
    assert np.array_equal(other.set_params(sample_steps=None).predict(X[:4], labels[:4]), est.predict(X[:4], labels[:4]))


def test_input_validation(xy):
    X, y, _ = xy
    with pytest.raises(InvalidInputError):
        small().fit(X, y[:-1])
    with pytest.raises(InvalidInputError):
        as_conditions([0, 1], 3)
    conds = as_conditions(None, 2)
    assert conds == [ConditionPayload.none()] * 2
    assert as_conditions([1, 0], 2)[0] == ConditionPayload("label", label=1)
