"""Polynomial safety models: feature expansion, least squares, scoring,
leave-one-run-out cross-validation and JSON persistence.

Inputs are standardized (per-feature mean/std from the training rows) before
the polynomial expansion; the statistics travel with the model so prediction
needs nothing else.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ctxnav.errors import DomainError, LengthMismatch, ParseError, SingularSystem, TooFewRuns, VersionMismatch

FORMAT_VERSION = 1
DEFAULT_DEGREE = 4
RIDGE = 1e-9
INPUTS = ("narrowness", "obstacle_density")


def monomials(degree: int) -> list[tuple[int, int]]:
    """Exponent pairs (i, j) for n**i * od**j with i + j <= degree.

    Canonical order: by total degree, then by largest single exponent, then
    with the narrowness power descending.  Degree 2 gives
    [1, n, od, n*od, n^2, od^2].
    """
    if degree < 1:
        raise DomainError("degree must be >= 1")
    terms = [(i, k - i) for k in range(degree + 1) for i in range(k, -1, -1)]
    return sorted(terms, key=lambda ij: (ij[0] + ij[1], max(ij), -ij[0]))


def feature_names(degree: int) -> list[str]:
    def name(i, j):
        parts = [f"n^{i}" if i > 1 else "n"] * (i > 0) + [f"od^{j}" if j > 1 else "od"] * (j > 0)
        return "*".join(parts) or "1"
    return [name(i, j) for i, j in monomials(degree)]


def poly_features(n, od, degree: int = DEFAULT_DEGREE) -> np.ndarray:
    """Monomials of (n, od) up to ``degree``; scalar inputs give a vector, arrays a matrix."""
    terms = monomials(degree)
    n_arr = np.asarray(n, dtype=float)
    od_arr = np.asarray(od, dtype=float)
    out = np.stack([n_arr ** i * od_arr ** j for i, j in terms], axis=-1)
    return out


def fit_least_squares(X, y) -> np.ndarray:
    """Minimize ||Xw - y||^2 via normal equations with a tiny ridge on the diagonal.

    Falls back to an SVD solve when the Cholesky factorization of the
    regularized Gram matrix fails.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise LengthMismatch(f"X {X.shape} and y {y.shape} do not align")
    if X.shape[0] < X.shape[1]:
        raise DomainError("need at least as many rows as features")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise DomainError("non-finite values in X or y")
    gram = X.T @ X
    gram[np.diag_indices_from(gram)] += RIDGE
    rhs = X.T @ y
    try:
        L = np.linalg.cholesky(gram)
        w = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
    except np.linalg.LinAlgError:
        w = np.linalg.lstsq(X, y, rcond=None)[0]
    if not np.isfinite(w).all():
        raise SingularSystem("least-squares solution is not finite")
    # the normal equations lose accuracy on ill-conditioned bases; one
    # refinement step against the true residual recovers it
    corr = np.linalg.lstsq(X, y - X @ w, rcond=None)[0]
    return w + corr


def _check_pair(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(y_true, dtype=float).ravel()
    b = np.asarray(y_pred, dtype=float).ravel()
    if a.size == 0 or a.size != b.size:
        raise LengthMismatch(f"lengths {a.size} and {b.size}")
    return a, b


def mse(y_true, y_pred) -> float:
    a, b = _check_pair(y_true, y_pred)
    return float(np.mean((a - b) ** 2))


def r2_score(y_true, y_pred) -> float:
    """1 - SS_res/SS_tot; a constant target scores 1 if matched exactly, else 0."""
    a, b = _check_pair(y_true, y_pred)
    ss_res = float(np.sum((a - b) ** 2))
    ss_tot = float(np.sum((a - a.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


class PolynomialSafetyModel(RegressorMixin, BaseEstimator):
    """Degree-``degree`` polynomial regression on standardized (narrowness, obstacle density).

    ``predict`` clamps to [0, 1]; ``predict_raw`` does not.
    """

    def __init__(self, degree: int = DEFAULT_DEGREE, standardize: bool = True):
        self.degree = degree
        self.standardize = standardize

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        if X.shape[1] != len(INPUTS):
            raise ValueError(f"expected {len(INPUTS)} input columns, got {X.shape[1]}")
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            std = X.std(axis=0)
            self.scale_ = np.where(std > 0, std, 1.0)
        else:
            self.mean_ = np.zeros(X.shape[1])
            self.scale_ = np.ones(X.shape[1])
        self.coef_ = fit_least_squares(self._expand(X), y)
        self.n_features_in_ = X.shape[1]
        return self

    def _expand(self, X: np.ndarray) -> np.ndarray:
        Z = (X - self.mean_) / self.scale_
        return poly_features(Z[:, 0], Z[:, 1], self.degree)

    def predict_raw(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} input columns, got {X.shape[1]}")
        return self._expand(X) @ self.coef_

    def predict(self, X) -> np.ndarray:
        return np.clip(self.predict_raw(X), 0.0, 1.0)

    def to_quality_model(self, config_id: str, train_score=(math.nan, math.nan),
                         test_score=(math.nan, math.nan)) -> QualityModel:
        check_is_fitted(self, "coef_")
        return QualityModel(config_id, self.degree, [float(c) for c in self.coef_],
                            [float(m) for m in self.mean_], [float(s) for s in self.scale_],
                            tuple(train_score), tuple(test_score))


@dataclass
class QualityModel:
    """A fitted safety model for one configuration, as persisted on disk."""

    config_id: str
    degree: int
    coefficients: list[float]
    means: list[float] = field(default_factory=lambda: [0.0, 0.0])
    stds: list[float] = field(default_factory=lambda: [1.0, 1.0])
    train_score: tuple[float, float] = (math.nan, math.nan)
    test_score: tuple[float, float] = (math.nan, math.nan)

    def __post_init__(self):
        m = len(monomials(self.degree))
        if len(self.coefficients) != m:
            raise DomainError(f"degree {self.degree} needs {m} coefficients, got {len(self.coefficients)}")

    @property
    def feature_order(self) -> list[str]:
        return feature_names(self.degree)

    def predict_raw(self, n, od):
        zn = (np.asarray(n, dtype=float) - self.means[0]) / self.stds[0]
        zo = (np.asarray(od, dtype=float) - self.means[1]) / self.stds[1]
        return poly_features(zn, zo, self.degree) @ np.asarray(self.coefficients)

    def predict(self, n, od):
        """Predicted safety clamped to [0, 1]; a float for scalar inputs."""
        out = np.clip(self.predict_raw(n, od), 0.0, 1.0)
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "config_id": self.config_id,
            "degree": self.degree,
            "feature_order": self.feature_order,
            "standardization": {"means": list(self.means), "stds": list(self.stds)},
            "coefficients": list(self.coefficients),
            "scores": {"train": {"r2": self.train_score[0], "mse": self.train_score[1]},
                       "test": {"r2": self.test_score[0], "mse": self.test_score[1]}},
        }

    @classmethod
    def from_dict(cls, d: dict) -> QualityModel:
        if not isinstance(d, dict) or "format_version" not in d:
            raise ParseError("model file lacks format_version")
        if d["format_version"] != FORMAT_VERSION:
            raise VersionMismatch(f"model format {d['format_version']!r}, expected {FORMAT_VERSION}")
        try:
            degree = int(d["degree"])
            if d["feature_order"] != feature_names(degree):
                raise ParseError("feature_order does not match the canonical order")
            s = d["scores"]
            return cls(
                config_id=str(d["config_id"]), degree=degree,
                coefficients=[float(c) for c in d["coefficients"]],
                means=[float(v) for v in d["standardization"]["means"]],
                stds=[float(v) for v in d["standardization"]["stds"]],
                train_score=(float(s["train"]["r2"]), float(s["train"]["mse"])),
                test_score=(float(s["test"]["r2"]), float(s["test"]["mse"])),
            )
        except (KeyError, TypeError, ValueError, DomainError) as exc:
            raise ParseError(f"malformed model file: {exc}") from exc


def save_model(model: QualityModel, path) -> None:
    path = FsPath(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_dict(), indent=2, sort_keys=True) + "\n")


def load_model(path) -> QualityModel:
    try:
        d = json.loads(FsPath(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return QualityModel.from_dict(d)


@dataclass
class Run:
    """Rows of (narrowness, obstacle_density, safety) from one run, plus provenance."""

    rows: np.ndarray
    env_ids: list[str] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float).reshape(-1, 3)
        if not np.isfinite(self.rows).all():
            raise DomainError("non-finite dataset row")
        s = self.rows[:, 2]
        if ((s < 0) | (s > 1)).any():
            raise DomainError("safety outside [0, 1]")

    @property
    def X(self) -> np.ndarray:
        return self.rows[:, :2]

    @property
    def y(self) -> np.ndarray:
        return self.rows[:, 2]

    def __len__(self):
        return len(self.rows)


@dataclass
class Dataset:
    config_id: str
    runs: list[Run]


def rows_from_log(path, training: bool = True) -> np.ndarray:
    """(narrowness, obstacle_density, safety) rows from a RunLog CSV.

    With ``training`` the warm-up rows without a performance value are
    dropped, as the robot is still accelerating from rest there.
    """
    from ctxnav.sim.mission import RunLog

    log = RunLog.read(path)
    recs = [r for r in log.records if not training or r.performance is not None]
    return np.array([[r.narrowness, r.obstacle_density, r.safety] for r in recs], dtype=float).reshape(-1, 3)


@dataclass
class FoldScore:
    test_run: int
    train_r2: float
    train_mse: float
    test_r2: float
    test_mse: float


@dataclass
class FitReport:
    folds: list[FoldScore]
    selected: int

    def train_indices(self, fold: int) -> list[int]:
        k = len(self.folds)
        return [i for i in range(k) if i != self.folds[fold].test_run]


def cross_validate(ds: Dataset, degree: int = DEFAULT_DEGREE) -> tuple[QualityModel, FitReport]:
    """Leave-one-run-out: fit on the pooled other runs, score on the held-out one.

    Returns the model of the fold with the best test r2 (earliest on ties).
    """
    k = len(ds.runs)
    if k < 2:
        raise TooFewRuns(f"{ds.config_id}: need >= 2 runs, got {k}")
    folds: list[FoldScore] = []
    models: list[PolynomialSafetyModel] = []
    for i in range(k):
        train = np.vstack([r.rows for j, r in enumerate(ds.runs) if j != i])
        test = ds.runs[i].rows
        est = PolynomialSafetyModel(degree).fit(train[:, :2], train[:, 2])
        # scored as used at run time: predictions clamped to [0, 1]
        p_train = est.predict(train[:, :2])
        p_test = est.predict(test[:, :2])
        folds.append(FoldScore(i, r2_score(train[:, 2], p_train), mse(train[:, 2], p_train),
                               r2_score(test[:, 2], p_test), mse(test[:, 2], p_test)))
        models.append(est)
    best = max(range(k), key=lambda i: (folds[i].test_r2, -i))
    f = folds[best]
    model = models[best].to_quality_model(ds.config_id, (f.train_r2, f.train_mse), (f.test_r2, f.test_mse))
    return model, FitReport(folds, best)


def predict(model: QualityModel, n, od):
    return model.predict(n, od)


def degree_sweep(datasets: Sequence[Dataset], degrees: Sequence[int]) -> list[dict]:
    """Mean selected-fold test r2/mse per degree over the given datasets."""
    out = []
    for d in degrees:
        scores = [cross_validate(ds, d)[0].test_score for ds in datasets]
        out.append({"degree": int(d), "r2": float(np.mean([s[0] for s in scores])),
                    "mse": float(np.mean([s[1] for s in scores]))})
    return out
