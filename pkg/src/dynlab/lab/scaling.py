"""Least-squares fit of convergence time against k ln n."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

PREDICTORS = {
    "k*ln(n)": lambda n, k: k * np.log(n),
    "ln(n)": lambda n, k: np.log(n),
    "k*ln(k)": lambda n, k: k * np.log(np.maximum(k, 2)),
    "k": lambda n, k: k.astype(float),
}


@dataclass
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    predictor: str = "k*ln(n)"

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept,
                "r_squared": self.r_squared, "predictor": self.predictor}


class KLogNRegressor(RegressorMixin, BaseEstimator):
    """Linear regression of rounds on a scaling predictor of (n, k).

    ``X`` has two columns ``(n, k)``; the predictor turns each row into one
    regressor value (``k*ln(n)`` by default).
    """

    def __init__(self, predictor: str = "k*ln(n)", fit_intercept: bool = True):
        self.predictor = predictor
        self.fit_intercept = fit_intercept

    def _z(self, X):
        if self.predictor not in PREDICTORS:
            raise ValueError(f"unknown predictor {self.predictor!r}")
        return PREDICTORS[self.predictor](X[:, 0], X[:, 1])

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if X.shape[1] != 2:
            raise ValueError("X must have the two columns (n, k)")
        z = self._z(X)
        if np.ptp(z) == 0:
            raise ValueError("degenerate design: all predictor values are equal")
        if self.fit_intercept:
            A = np.column_stack([z, np.ones_like(z)])
            (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
        else:
            slope, intercept = float(z @ y / (z @ z)), 0.0
        resid = y - (slope * z + intercept)
        ss_tot = float(((y - y.mean()) ** 2).sum())
        ss_res = float((resid**2).sum())
        r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
        self.slope_ = float(slope)
        self.intercept_ = float(intercept)
        self.r_squared_ = float(min(1.0, max(0.0, r2)))
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "slope_")
        X = check_array(X, dtype=float)
        return self.slope_ * self._z(X) + self.intercept_

    def result(self) -> FitResult:
        check_is_fitted(self, "slope_")
        return FitResult(self.slope_, self.intercept_, self.r_squared_, self.predictor)


def fit_scaling(results, predictor: str = "k*ln(n)", min_points: int = 4) -> FitResult:
    """Fit median rounds against the predictor.  ``results`` rows are (n, k, median)."""
    rows = np.asarray(list(results), dtype=float)
    if rows.ndim != 2 or rows.shape[1] != 3:
        raise ValueError("results must be rows of (n, k, median_rounds)")
    distinct = {(a, b) for a, b in rows[:, :2].tolist()}
    if len(distinct) < min_points:
        raise ValueError(f"need at least {min_points} distinct (n, k) points, got {len(distinct)}")
    reg = KLogNRegressor(predictor=predictor).fit(rows[:, :2], rows[:, 2])
    return reg.result()
