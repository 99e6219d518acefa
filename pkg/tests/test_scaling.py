import numpy as np
import pytest
from sklearn.base import clone

from dynlab.lab.scaling import KLogNRegressor, fit_scaling


def test_exact_line_recovered():
    X = np.array([[1e3, 2], [1e4, 2], [1e3, 4], [1e5, 8]])
    y = 3.0 * X[:, 1] * np.log(X[:, 0]) + 5.0
    reg = KLogNRegressor().fit(X, y)
    assert reg.slope_ == pytest.approx(3.0)
    assert reg.intercept_ == pytest.approx(5.0)
    assert reg.r_squared_ == pytest.approx(1.0)
    assert reg.predict(X) == pytest.approx(y)


def test_sklearn_protocol():
    reg = KLogNRegressor(predictor="ln(n)", fit_intercept=False)
    assert clone(reg).get_params() == {"predictor": "ln(n)", "fit_intercept": False}
    X = np.array([[2.0**10, 2], [2.0**12, 2], [2.0**14, 2]])
    y = 2 * np.log(X[:, 0])
    assert reg.fit(X, y).score(X, y) == pytest.approx(1.0)
    assert reg.intercept_ == 0.0


def test_degenerate_design():
    X = np.array([[1e4, 2], [1e4, 2], [1e4, 2]])
    with pytest.raises(ValueError):
        KLogNRegressor().fit(X, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        KLogNRegressor(predictor="k**2").fit(np.array([[1e3, 1], [1e4, 2]]), [1.0, 2.0])


def test_fit_scaling_needs_points():
    rows = [(1e5, k, 10.0 * k) for k in (2, 4, 8)]
    with pytest.raises(ValueError):
        fit_scaling(rows)
    res = fit_scaling(rows + [(1e5, 16, 160.0)], predictor="k")
    assert res.slope == pytest.approx(10.0)
    assert res.to_dict()["predictor"] == "k"
