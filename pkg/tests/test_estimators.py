import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from switchavg import AveragedSystem, CatalogField, ChainAnalyzer

Q = [[-1.0, 1.0], [2.0, -2.0]]


def test_chain_analyzer_fit():
    est = ChainAnalyzer().fit(Q)
    np.testing.assert_allclose(est.stationary_distribution_, [2 / 3, 1 / 3])
    np.testing.assert_allclose(est.potential_, [[1 / 9, -1 / 9], [-2 / 9, 2 / 9]], atol=1e-12)
    np.testing.assert_allclose(est.projector_, [[2 / 3, 1 / 3]] * 2)


def test_chain_analyzer_transform_is_potential():
    est = ChainAnalyzer().fit(Q)
    g = np.array([[1.0, 0.0], [3.0, -3.0]])
    np.testing.assert_allclose(est.transform(g), g @ est.potential_.T)


def test_get_set_params_and_clone():
    field = CatalogField("linear", a=[3.0, -3.0])
    est = AveragedSystem(field, u0=2.0, h_max=0.005)
    params = est.get_params()
    assert params["u0"] == 2.0 and params["h_max"] == 0.005 and params["field"] is field
    est.set_params(horizon=2.0)
    assert est.horizon == 2.0
    twin = clone(est)
    assert twin.get_params()["horizon"] == 2.0 and not hasattr(twin, "path_")


def test_predict_requires_fit():
    with pytest.raises(NotFittedError):
        AveragedSystem(CatalogField("linear", a=[1.0, 2.0])).predict([0.5])


def test_predict_averaged_exponential():
    est = AveragedSystem(CatalogField("linear", a=[3.0, -3.0]), u0=1.0).fit(Q)
    t = np.array([0.0, 0.25, 1.0])
    np.testing.assert_allclose(est.predict(t)[:, 0], np.exp(t), atol=1e-8)


def test_sample_and_deviation_reproducible():
    est = AveragedSystem(CatalogField("linear", a=[3.0, -3.0]), u0=1.0).fit(Q)
    assert est.deviation(0.01, random_state=5) == est.deviation(0.01, random_state=5)
    path = est.sample(0.01, random_state=5)
    assert path.t[-1] == 1.0 and math.isfinite(path.u[-1, 0])


def test_bad_generator():
    with pytest.raises(ValueError):
        ChainAnalyzer().fit([[-1.0, 2.0], [1.0, -1.0]])
