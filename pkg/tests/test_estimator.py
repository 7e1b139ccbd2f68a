import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hybridformation.estimator import HybridFormationController


@pytest.fixture(scope="module")
def fitted():
    return HybridFormationController().fit()


def test_params_roundtrip():
    est = HybridFormationController(n_theta=12, kappa=0.5)
    assert est.get_params()["n_theta"] == 12
    c = clone(est)
    assert c.get_params() == est.get_params()
    est.set_params(v_max=3.0)
    assert est.v_max == 3.0


def test_not_fitted():
    with pytest.raises(NotFittedError):
        HybridFormationController().transform(np.zeros((1, 3)))


def test_bad_params():
    with pytest.raises(ValueError):
        HybridFormationController(mode="other").fit()
    with pytest.raises(ValueError):
        HybridFormationController(kappa=0.0).fit()


def test_transform_and_actions(fitted):
    X = np.array([[-17.0, -18.0, -8.0], [0.5, 0.2, 0.1]])
    regions = fitted.transform(X)
    assert regions.shape == (2, 3) and regions[0, 0] == 8 and regions[1, 0] == 1
    assert [str(a) for a in fitted.actions(X)] == ["C_r-", "C_0"]
    assert fitted.score(X) == 0.5


def test_predict_points_inward(fitted):
    X = np.array([[-17.0, -18.0, -8.0], [20.0, 5.0, -3.0]])
    U = fitted.predict(X)
    assert U.shape == (2, 3)
    assert np.all(np.einsum("ij,ij->i", U, X) < 0)
    assert np.all(np.linalg.norm(U, axis=1) <= 0.8 * 5.0 + 1e-9)


def test_input_validation(fitted):
    with pytest.raises(ValueError):
        fitted.transform(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        fitted.transform(np.array([[60.0, 0.0, 0.0]]))
