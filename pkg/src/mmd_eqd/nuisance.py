"""Nuisance regressions and the per-example construction of R, S and their gradients."""

from __future__ import annotations

import copy
import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit

from .core import Dataset, RngSeed, ValidationError
from .kernel import FunctionalEvaluations
from .oracle import DiscreteDgp, _arm_quantities


class MissingTreatmentColumn(ValidationError):
    pass


class PropensityOutOfRange(ValidationError):
    pass


class TooFewObservations(ValidationError):
    pass


class SingularDesignWarning(RuntimeWarning):
    """OLS design was rank deficient; the minimum-norm solution was used."""


# ---------------------------------------------------------------------------
# Outcome regressions
# ---------------------------------------------------------------------------


def _2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


class LinearOLS:
    """Least squares with an intercept; multi-output when y is (n, d)."""

    kind = "linear-ols"

    def __init__(self):
        self.coef_ = None
        self.singular = False

    def fit(self, x, y):
        x = _2d(x)
        y = np.asarray(y, dtype=float)
        n, q = x.shape
        if n <= q:
            raise ValidationError(f"OLS needs n > q (got n={n}, q={q})")
        design = np.column_stack([np.ones(n), x])
        coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
        self.singular = rank < design.shape[1]
        if self.singular:
            warnings.warn("rank-deficient design; using the minimum-norm solution",
                          SingularDesignWarning, stacklevel=2)
        self.coef_ = coef
        return self

    def predict(self, x):
        x = _2d(x)
        return np.column_stack([np.ones(len(x)), x]) @ self.coef_

    def summary(self) -> dict:
        return {"kind": self.kind, "coef": np.asarray(self.coef_).tolist(),
                "singular": bool(self.singular)}


class NadarayaWatson:
    """Gaussian-weight local average with weights exp(-|x - x_i|^2 / (2 h^2))."""

    kind = "nadaraya-watson"

    def __init__(self, bandwidth: float = 1.0):
        if not bandwidth > 0:
            raise ValidationError("Nadaraya-Watson bandwidth must be positive")
        self.bandwidth = float(bandwidth)
        self.x_ = None
        self.y_ = None

    def fit(self, x, y):
        self.x_ = _2d(x).copy()
        self.y_ = np.asarray(y, dtype=float).copy()
        return self

    def predict(self, x, chunk: int = 2048):
        x = _2d(x)
        h2 = 2.0 * self.bandwidth ** 2
        xt = self.x_
        xt_sq = np.einsum("ij,ij->i", xt, xt)
        out = np.empty((len(x),) + self.y_.shape[1:])
        for lo in range(0, len(x), chunk):
            xb = x[lo:lo + chunk]
            sq = np.einsum("ij,ij->i", xb, xb)[:, None] + xt_sq[None, :] - 2.0 * xb @ xt.T
            logw = -np.maximum(sq, 0.0) / h2
            logw -= logw.max(axis=1, keepdims=True)
            wts = np.exp(logw)
            wts /= wts.sum(axis=1, keepdims=True)
            out[lo:lo + chunk] = wts @ self.y_
        return out

    def summary(self) -> dict:
        return {"kind": self.kind, "bandwidth": self.bandwidth}


class KNearest:
    """Mean outcome of the k nearest training points (Euclidean)."""

    kind = "k-nearest"

    def __init__(self, k: int = 10):
        if k < 1:
            raise ValidationError("k must be positive")
        self.k = int(k)
        self.tree_ = None
        self.y_ = None

    def fit(self, x, y):
        x = _2d(x)
        if self.k > len(x):
            raise ValidationError(f"k={self.k} exceeds the training size {len(x)}")
        self.tree_ = cKDTree(x)
        self.y_ = np.asarray(y, dtype=float).copy()
        return self

    def predict(self, x):
        _, idx = self.tree_.query(_2d(x), k=self.k)
        idx = np.asarray(idx).reshape(len(_2d(x)), self.k)
        return self.y_[idx].mean(axis=1)

    def summary(self) -> dict:
        return {"kind": self.kind, "k": self.k}


RegressionModel = LinearOLS | NadarayaWatson | KNearest


def fit_regression(model: RegressionModel, x, y) -> RegressionModel:
    """Fit a fresh copy of ``model``; the template is left untouched."""
    return copy.deepcopy(model).fit(x, y)


def make_regression(kind: str, **params) -> RegressionModel:
    kind = kind.lower().replace("_", "-")
    if kind in ("ols", "linear", "linear-ols"):
        return LinearOLS()
    if kind in ("nw", "nadaraya-watson"):
        return NadarayaWatson(params.get("bandwidth", 1.0))
    if kind in ("knn", "k-nearest"):
        return KNearest(params.get("k", 10))
    raise ValidationError(f"unknown regression kind {kind!r}")


# ---------------------------------------------------------------------------
# Propensity
# ---------------------------------------------------------------------------


def _logistic_irls(x: np.ndarray, a: np.ndarray, ridge: float = 1e-8, max_iter: int = 100):
    design = np.column_stack([np.ones(len(x)), x])
    beta = np.zeros(design.shape[1])
    for _ in range(max_iter):
        p = expit(design @ beta)
        wts = p * (1 - p)
        hess = design.T @ (design * wts[:, None]) + ridge * np.eye(design.shape[1])
        step = np.linalg.solve(hess, design.T @ (a - p) - ridge * beta)
        beta += step
        if np.max(np.abs(step)) < 1e-10:
            break
    return beta


@dataclass
class PropensityModel:
    """P(A=1 | W) as a known constant or a fitted logistic regression.

    Emitted probabilities are clamped to [floor, 1 - floor].
    """

    kind: str = "known"
    p: float = 0.5
    floor: float = 0.01
    coef_: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("known", "logistic"):
            raise ValidationError(f"unknown propensity kind {self.kind!r}")
        if not 0 < self.floor < 0.5:
            raise ValidationError("propensity floor must lie in (0, 0.5)")

    @classmethod
    def known(cls, p: float = 0.5, floor: float = 0.01) -> "PropensityModel":
        return cls("known", p, floor)

    @classmethod
    def logistic(cls, floor: float = 0.01) -> "PropensityModel":
        return cls("logistic", floor=floor)

    def fit(self, w, a) -> "PropensityModel":
        fitted = copy.deepcopy(self)
        if self.kind == "logistic":
            fitted.coef_ = _logistic_irls(_2d(w), np.asarray(a, dtype=float))
        return fitted

    def predict_treated(self, w) -> np.ndarray:
        w = _2d(w)
        if self.kind == "known":
            raw = np.full(len(w), float(self.p))
        else:
            if self.coef_ is None:
                raise ValidationError("logistic propensity model is not fitted")
            raw = expit(np.column_stack([np.ones(len(w)), w]) @ self.coef_)
        if not np.all((raw > 0) & (raw < 1)):
            raise PropensityOutOfRange("propensity estimates must lie strictly inside (0, 1)")
        return np.clip(raw, self.floor, 1 - self.floor)

    def summary(self) -> dict:
        d = {"kind": self.kind, "floor": self.floor}
        if self.kind == "known":
            d["p"] = self.p
        else:
            d["coef"] = None if self.coef_ is None else self.coef_.tolist()
        return d


# ---------------------------------------------------------------------------
# Examples
# ---------------------------------------------------------------------------


class Example(str, enum.Enum):
    CATE = "ex1"           # blip E[Y|A=1,W] - E[Y|A=0,W] identically zero
    TWO_POP = "ex2"        # E[Y|A=1,W] equal in law to E[Y|A=0,W]
    COND_MEAN = "ex3"      # E[Y|W] identically zero
    VAR_IMPORTANCE = "ex4"  # E[Y|W] = E[Y|W without coordinate k]


@dataclass
class ExampleSpec:
    """Which functional pair to test and how to estimate its nuisances.

    ``clip_b`` bounds R and S on the bandwidth-rescaled scale; ``k`` is the
    0-based covariate dropped in the variable-importance example and ``p``
    the success probability of its artificial Bernoulli label.
    """

    example: Example = Example.COND_MEAN
    outcome_model: RegressionModel = field(default_factory=LinearOLS)
    propensity_model: PropensityModel = field(default_factory=PropensityModel)
    clip_b: float = 1.0
    k: int = 0
    p: float = 0.5

    def __post_init__(self):
        self.example = Example(self.example)
        if not self.clip_b > 0:
            raise ValidationError("clip_b must be positive")
        if not 0 < self.p < 1:
            raise ValidationError("p must lie in (0, 1)")

    @property
    def needs_treatment(self) -> bool:
        return self.example in (Example.CATE, Example.TWO_POP)


def _drop_column(w: np.ndarray, k: int) -> np.ndarray:
    return np.delete(w, k, axis=1)


class FittedNuisance:
    """Nuisance fits from a training sample, ready to evaluate on any target sample."""

    def __init__(self, spec: ExampleSpec, train: Dataset):
        self.spec = spec
        ex = spec.example
        if spec.needs_treatment and train.a is None:
            raise MissingTreatmentColumn(f"example {ex.value} needs a treatment column")
        if ex is Example.VAR_IMPORTANCE:
            if train.w_dim < 2:
                raise ValidationError("variable-importance example needs at least 2 covariates")
            if not 0 <= spec.k < train.w_dim:
                raise ValidationError(f"k={spec.k} is not a covariate index")
        self.models: dict[str, RegressionModel] = {}
        self.propensity: PropensityModel | None = None
        y = train.y
        if spec.needs_treatment:
            for arm in (0, 1):
                mask = train.a == arm
                if not mask.any():
                    raise ValidationError(f"no training observations with A={arm}")
                self.models[f"mu{arm}"] = fit_regression(spec.outcome_model, train.w[mask], y[mask])
            self.propensity = spec.propensity_model.fit(train.w, train.a)
        else:
            self.models["mu"] = fit_regression(spec.outcome_model, train.w, y)
            if ex is Example.VAR_IMPORTANCE:
                self.models["mu_minus_k"] = fit_regression(
                    spec.outcome_model, _drop_column(train.w, spec.k), y)

    def evaluate(self, target: Dataset, seed: RngSeed | None = None,
                 bandwidth: float = 1.0) -> FunctionalEvaluations:
        spec = self.spec
        ex = spec.example
        if spec.needs_treatment and target.a is None:
            raise MissingTreatmentColumn(f"example {ex.value} needs a treatment column")
        y, w = target.y, target.w
        zeros = np.zeros_like(y)
        if spec.needs_treatment:
            a = target.a[:, None]
            mu1 = self.models["mu1"].predict(w).reshape(y.shape)
            mu0 = self.models["mu0"].predict(w).reshape(y.shape)
            pi1 = self.propensity.predict_treated(w)[:, None]
            if ex is Example.CATE:
                pi_a = np.where(a == 1, pi1, 1 - pi1)
                mu_a = np.where(a == 1, mu1, mu0)
                r, s = mu1 - mu0, zeros
                dr, ds = (2 * a - 1) / pi_a * (y - mu_a), zeros
            else:
                r, s = mu1, mu0
                dr = a / pi1 * (y - mu1)
                ds = (1 - a) / (1 - pi1) * (y - mu0)
        elif ex is Example.COND_MEAN:
            mu = self.models["mu"].predict(w).reshape(y.shape)
            r, s, dr, ds = mu, zeros, y - mu, zeros
        else:
            rng = (seed or RngSeed()).generator(4)
            art = rng.binomial(1, spec.p, size=target.n)[:, None]
            mu = self.models["mu"].predict(w).reshape(y.shape)
            mu_k = self.models["mu_minus_k"].predict(_drop_column(w, spec.k)).reshape(y.shape)
            r, s = mu, mu_k
            dr = y - mu
            ds = art / spec.p * (y - mu_k)
        b = spec.clip_b * bandwidth
        return FunctionalEvaluations(np.clip(r, -b, b), np.clip(s, -b, b), dr, ds, bound_b=b)

    def summary(self) -> dict:
        d = {"example": self.spec.example.value,
             "outcome_models": {k: m.summary() for k, m in self.models.items()}}
        if self.propensity is not None:
            d["propensity"] = self.propensity.summary()
        return d


def evaluate_example(spec: ExampleSpec, data: Dataset, seed: RngSeed | None = None,
                     bandwidth: float = 1.0) -> FunctionalEvaluations:
    """Fit nuisances on ``data`` and evaluate R, S, D^R, D^S at every observation."""
    return FittedNuisance(spec, data).evaluate(data, seed, bandwidth)


def split_indices(n: int, seed: RngSeed) -> tuple[np.ndarray, np.ndarray]:
    """Random halving: (fit fold, evaluation fold)."""
    if n < 4:
        raise TooFewObservations("sample splitting needs at least 4 observations")
    perm = seed.generator(1).permutation(n)
    half = n // 2
    return np.sort(perm[:half]), np.sort(perm[half:])


def split_fit(spec: ExampleSpec, data: Dataset, seed: RngSeed | None = None,
              bandwidth: float = 1.0) -> FunctionalEvaluations:
    """Fit nuisances on one random half and evaluate on the other half only."""
    seed = seed or RngSeed()
    fit_idx, eval_idx = split_indices(data.n, seed)
    nuisance = FittedNuisance(spec, data.subset(fit_idx))
    return nuisance.evaluate(data.subset(eval_idx), seed, bandwidth)


def remainder_ex1(dgp: DiscreteDgp, mu_hat, pi_hat) -> np.ndarray:
    """Closed-form linearization remainder of the blip at each atom.

    sum_a (2a - 1) [1 - P0(A=a|W) / P(A=a|W)] [mu_P(a, W) - mu_0(a, W)]

    ``mu_hat(a, w)`` and ``pi_hat(a, w)`` (the latter = P(A=a|W=w)) are
    vectorised over atoms.  Vanishes when either nuisance is correct.
    """
    if dgp.a is None:
        raise MissingTreatmentColumn("the blip remainder needs treatment labels")
    pi1_0, mu1_0, mu0_0 = _arm_quantities(dgp.w, dgp.a, dgp.y, dgp.probs)
    ones = np.ones_like(dgp.a)
    zeros = np.zeros_like(dgp.a)
    rem = np.zeros(dgp.m)
    for arm, arm_vec, pi0, mu0 in ((1, ones, pi1_0, mu1_0), (0, zeros, 1 - pi1_0, mu0_0)):
        ratio = pi0 / pi_hat(arm_vec, dgp.w)
        rem += (2 * arm - 1) * (1 - ratio) * (mu_hat(arm_vec, dgp.w) - mu0)
    return rem
