"""Pathwise coordinate descent for L1-penalized likelihoods.

Losses are negative log-likelihoods divided by n. The penalty is
``lam * sum(|beta_j|)`` on slopes only; Gaussian and multinomial fits carry
unpenalized intercepts, the Cox partial likelihood has none.  Tied event
times use the Breslow risk-set convention.

Responses are passed as:

* Cox: a ``(time, event)`` pair,
* Gaussian: a real vector,
* Multinomial: integer class labels ``0 .. n_classes - 1``; class 0 is the
  reference, so slopes have shape ``(q, n_classes - 1)``.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import _kernels as K


class DegenerateResponseError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    """Raised when the outer iteration cannot make progress; carries the
    iterate at which it stopped."""

    def __init__(self, message, coef=None, intercept=None):
        super().__init__(message)
        self.coef = coef
        self.intercept = intercept


@dataclass(frozen=True)
class Cox:
    pass


@dataclass(frozen=True)
class Gaussian:
    pass


@dataclass(frozen=True)
class Multinomial:
    n_classes: int

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("multinomial family needs at least 2 classes")


Family = Union[Cox, Gaussian, Multinomial]


@dataclass(frozen=True)
class FitOptions:
    n_lambda: int = 200
    lambda_min_ratio: float = 1e-3
    tol: float = 1e-7
    max_iter: int = 100_000
    standardize: bool = False
    # multinomial only: end the path once the fit saturates
    saturation_stop: bool = False

    def __post_init__(self):
        if self.n_lambda < 1 or self.tol <= 0 or self.max_iter < 1:
            raise ValueError("n_lambda, tol and max_iter must be positive")
        if not 0 < self.lambda_min_ratio < 1:
            raise ValueError("lambda_min_ratio must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class Fit:
    coef: np.ndarray
    intercept: np.ndarray | float | None
    converged: bool


@dataclass(frozen=True, eq=False)
class PathResult:
    lambdas: np.ndarray
    coefficients: np.ndarray
    intercepts: np.ndarray | None
    converged: np.ndarray
    family: Family

    @property
    def n_lambda(self) -> int:
        return self.lambdas.shape[0]

    def to_json(self) -> str:
        doc = {
            "family": type(self.family).__name__,
            "lambdas": self.lambdas.tolist(),
            "coefficients": self.coefficients.tolist(),
            "intercepts": None if self.intercepts is None else self.intercepts.tolist(),
            "converged": self.converged.tolist(),
        }
        return json.dumps(doc)


def _values(mm) -> np.ndarray:
    values = getattr(mm, "values", mm)
    return np.ascontiguousarray(np.asarray(values, dtype=float))


class _Problem:
    """Response-side preprocessing shared by every fit on the same data."""

    def __init__(self, family, X, response, standardize=False):
        self.family = family
        X = _values(X)
        if X.ndim != 2:
            raise ValueError("design must be 2-d")
        self.n, self.q = X.shape
        if standardize:
            sd = X.std(axis=0)
            self.scale = np.where(sd > 0, sd, 1.0)
        else:
            self.scale = np.ones(self.q)
        Xs = X / self.scale
        if isinstance(family, Cox):
            time, event = response
            time = np.asarray(time, dtype=float)
            event = np.asarray(event).astype(np.int64)
            if time.shape[0] != self.n or event.shape[0] != self.n:
                raise ValueError("response length does not match design")
            if event.sum() == 0:
                raise DegenerateResponseError("Cox response has no events")
            order = np.argsort(time, kind="stable")
            ts = time[order]
            tie_start = np.arange(self.n)
            for i in range(1, self.n):
                if ts[i] == ts[i - 1]:
                    tie_start[i] = tie_start[i - 1]
            self.order = order
            self.X = np.ascontiguousarray(Xs[order])
            self.event = np.ascontiguousarray(event[order])
            self.tie_start = tie_start.astype(np.int64)
            self.Y = np.zeros((self.n, 1))
            self.K = 1
            self.code = K.COX
        elif isinstance(family, Multinomial):
            y = np.asarray(response).astype(np.int64).ravel()
            if y.shape[0] != self.n:
                raise ValueError("response length does not match design")
            if y.min() < 0 or y.max() >= family.n_classes:
                raise ValueError("class labels out of range")
            self.K = family.n_classes - 1
            self.Y = np.zeros((self.n, self.K))
            for k in range(1, family.n_classes):
                self.Y[:, k - 1] = y == k
            self.counts = np.bincount(y, minlength=family.n_classes)
            if np.any(self.counts == 0):
                raise DegenerateResponseError("every class must be observed at least once")
            self.X = Xs
            self.event = np.zeros(self.n, dtype=np.int64)
            self.tie_start = np.zeros(self.n, dtype=np.int64)
            self.code = K.MULTINOMIAL
        elif isinstance(family, Gaussian):
            y = np.asarray(response, dtype=float).ravel()
            if y.shape[0] != self.n:
                raise ValueError("response length does not match design")
            self.y = y
            self.K = 1
            self.xmean = Xs.mean(axis=0)
            self.ymean = y.mean()
            Xc = Xs - self.xmean
            yc = y - self.ymean
            self.G = np.ascontiguousarray(Xc.T @ Xc / self.n)
            self.c = Xc.T @ yc / self.n
            self.half_yy = 0.5 * float(yc @ yc) / self.n
            self.X = Xs
            self.code = K.GAUSSIAN
        else:
            raise TypeError(f"unknown family {family!r}")

    def null_intercept(self) -> np.ndarray:
        if self.code == K.MULTINOMIAL:
            return np.log(self.counts[1:] / self.counts[0])
        return np.zeros(self.K)

    def null_gradient(self) -> np.ndarray:
        """Mean-scaled score in the standardized columns at the null model."""
        if self.code == K.GAUSSIAN:
            return self.c.reshape(-1, 1)
        eta = np.tile(self.null_intercept(), (self.n, 1))
        _, g, _ = K._loss_grad(self.code, eta, self.Y, self.event, self.tie_start)
        return -(self.X.T @ g)

    def lambda_max(self) -> float:
        if self.q == 0:
            return 0.0
        return float(np.max(np.abs(self.null_gradient())))

    def grid(self, opts: FitOptions) -> np.ndarray:
        lmax = self.lambda_max()
        if lmax <= 0:
            warnings.warn("all null scores are zero; using a unit lambda grid", RuntimeWarning, stacklevel=3)
            lmax = 1.0
        if opts.n_lambda == 1:
            return np.array([lmax])
        return lmax * np.logspace(0.0, np.log10(opts.lambda_min_ratio), opts.n_lambda)

    # coefficient conversion between standardized and raw column scales
    def to_raw(self, B):
        return B / self.scale.reshape((-1,) + (1,) * (B.ndim - 1))

    def to_std(self, B):
        return B * self.scale.reshape((-1,) + (1,) * (B.ndim - 1))

    def gaussian_intercept(self, beta_std):
        return self.ymean - self.xmean @ beta_std

    def run_path(self, lambdas, opts, stop_when_all_active=False, B_init=None, b0_init=None):
        lambdas = np.ascontiguousarray(lambdas, dtype=float)
        if self.code == K.GAUSSIAN:
            beta = np.zeros(self.q) if B_init is None else self.to_std(np.asarray(B_init, float).ravel())
            coefs, conv = K.gaussian_path(self.G, self.c, self.half_yy, lambdas, beta,
                                          opts.tol, opts.max_iter, stop_when_all_active)
            intercepts = self.ymean - coefs @ self.xmean
            return lambdas[: coefs.shape[0]], self.to_raw(coefs.T).T, intercepts, conv, None
        B = np.zeros((self.q, self.K)) if B_init is None else self.to_std(np.asarray(B_init, float).reshape(self.q, self.K))
        b0 = self.null_intercept() if b0_init is None else np.asarray(b0_init, float).reshape(self.K).copy()
        fit_intercept = self.code == K.MULTINOMIAL
        coefs, ints, conv, status = K.irls_path(
            self.code, self.X, self.Y, self.event, self.tie_start, lambdas, B, b0,
            fit_intercept, opts.tol, opts.max_iter, stop_when_all_active,
            opts.saturation_stop and self.code == K.MULTINOMIAL)
        coefs = coefs / self.scale[None, :, None]
        return lambdas[: coefs.shape[0]], coefs, ints, conv, status

    def shape_coefs(self, coefs, ints):
        """Drop the singleton class axis for Cox/Gaussian."""
        if self.code == K.MULTINOMIAL:
            return coefs, ints
        if coefs.ndim == 3:
            coefs = coefs[:, :, 0]
        if self.code == K.COX:
            return coefs, None
        return coefs, np.asarray(ints).reshape(-1)


def negative_log_likelihood(family: Family, mm, response, beta, intercept=None) -> float:
    """Mean-scaled negative log-likelihood (Gaussian: RSS / 2n)."""
    X = _values(mm)
    n = X.shape[0]
    beta = np.asarray(beta, dtype=float)
    if isinstance(family, Gaussian):
        y = np.asarray(response, dtype=float)
        r = y - X @ beta - (0.0 if intercept is None else float(intercept))
        return float(r @ r) / (2 * n)
    prob = _Problem(family, X, response)
    B = beta.reshape(prob.q, prob.K)
    b0 = np.zeros(prob.K) if intercept is None else np.asarray(intercept, float).reshape(prob.K)
    eta = prob.X @ B + b0
    return float(K._loss(prob.code, np.ascontiguousarray(eta), prob.Y, prob.event, prob.tie_start))


def score(family: Family, mm, response, beta, intercept=None) -> np.ndarray:
    """Negative gradient of the mean-scaled loss with respect to the slopes."""
    X = _values(mm)
    beta = np.asarray(beta, dtype=float)
    if isinstance(family, Gaussian):
        y = np.asarray(response, dtype=float)
        r = y - X @ beta - (0.0 if intercept is None else float(intercept))
        return X.T @ r / X.shape[0]
    prob = _Problem(family, X, response)
    B = beta.reshape(prob.q, prob.K)
    b0 = np.zeros(prob.K) if intercept is None else np.asarray(intercept, float).reshape(prob.K)
    eta = np.ascontiguousarray(prob.X @ B + b0)
    _, g, _ = K._loss_grad(prob.code, eta, prob.Y, prob.event, prob.tie_start)
    s = -(prob.X.T @ g)
    return s.reshape(beta.shape)


def kkt_residuals(family: Family, mm, response, beta, lam, intercept=None) -> np.ndarray:
    """Per-coefficient KKT violation of the lasso optimality conditions."""
    s = score(family, mm, response, beta, intercept)
    beta = np.asarray(beta, dtype=float)
    zero = beta == 0
    return np.where(zero, np.maximum(np.abs(s) - lam, 0.0), np.abs(s - lam * np.sign(beta)))


def lambda_max(family: Family, mm, response, standardize: bool = False) -> float:
    """Smallest penalty whose solution has all slopes equal to zero."""
    lmax = _Problem(family, mm, response, standardize).lambda_max()
    if lmax == 0:
        warnings.warn("all null scores are zero", RuntimeWarning, stacklevel=2)
    return lmax


def coordinate_descent_fit(family: Family, mm, response, lam: float, warm_start=None,
                           opts: FitOptions = FitOptions(), intercept=None) -> Fit:
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    prob = _Problem(family, mm, response, opts.standardize)
    if prob.code == K.GAUSSIAN:
        beta = np.zeros(prob.q) if warm_start is None else prob.to_std(np.asarray(warm_start, float).ravel())
        conv, _ = K.gaussian_fit(prob.G, prob.c, float(lam), beta,
                                 (opts.tol * max(prob.half_yy, 1e-12)) ** 2, opts.max_iter)
        return Fit(prob.to_raw(beta), float(prob.gaussian_intercept(beta)), bool(conv))
    B = np.zeros((prob.q, prob.K))
    if warm_start is not None:
        B = prob.to_std(np.asarray(warm_start, float).reshape(prob.q, prob.K)).copy()
    b0 = prob.null_intercept() if intercept is None else np.asarray(intercept, float).reshape(prob.K).copy()
    status, conv, _ = K.irls_fit(prob.code, prob.X, prob.Y, prob.event, prob.tie_start,
                                 float(lam), B, b0, prob.code == K.MULTINOMIAL, opts.tol, opts.max_iter)
    coef, ints = prob.shape_coefs(prob.to_raw(B)[None], b0[None])
    coef = coef[0]
    ints = None if ints is None else ints[0]
    if status != K.OK:
        raise NumericalFailure(f"outer iteration failed at lambda={lam:g} (status {status})", coef, ints)
    return Fit(coef, ints, bool(conv))


def lasso_path(family: Family, mm, response, opts: FitOptions = FitOptions(),
               lambdas=None, stop_when_all_active: bool = False) -> PathResult:
    """Warm-started fits along a log-spaced grid from lambda_max down.

    With ``stop_when_all_active`` the path is truncated at the first grid
    point by which every column has entered; entry lambdas are unaffected.
    """
    prob = _Problem(family, mm, response, opts.standardize)
    return _path_from_problem(prob, opts, lambdas, stop_when_all_active)


def _path_from_problem(prob, opts, lambdas=None, stop_when_all_active=False):
    grid = prob.grid(opts) if lambdas is None else np.asarray(lambdas, dtype=float)
    lams, coefs, ints, conv, _ = prob.run_path(grid, opts, stop_when_all_active)
    coefs, ints = prob.shape_coefs(coefs, ints)
    return PathResult(lams, coefs, ints, np.asarray(conv, dtype=bool), prob.family)


def entry_lambdas(path: PathResult, groups=None) -> np.ndarray:
    """Largest grid lambda at which each column is nonzero (0 if never).

    ``groups`` (a list of column-index lists, e.g. ``ModelMatrix.groups()``)
    aggregates columns into source features by taking the maximum.
    """
    nz = path.coefficients != 0
    if nz.ndim == 3:
        nz = nz.any(axis=2)
    active = nz.any(axis=0)
    first = np.argmax(nz, axis=0)
    z = np.where(active, path.lambdas[first], 0.0)
    if groups is None:
        return z
    return np.array([z[list(g)].max() if len(g) else 0.0 for g in groups])


@dataclass(frozen=True, eq=False)
class CVResult:
    lambdas: np.ndarray
    cvm: np.ndarray
    cvsd: np.ndarray
    index_min: int
    path: PathResult

    @property
    def lambda_min(self) -> float:
        return float(self.lambdas[self.index_min])


def _fold_ids(n, folds, rng, event=None):
    perm = rng.permutation(n)
    ids = np.empty(n, dtype=np.int64)
    ids[perm] = np.arange(n) % folds
    if event is None:
        return ids
    if all(event[ids == f].sum() > 0 for f in range(folds)):
        return ids
    # stratify: deal events and non-events round-robin separately
    ids = np.empty(n, dtype=np.int64)
    ev = perm[event[perm] == 1]
    ce = perm[event[perm] == 0]
    ids[ev] = np.arange(ev.size) % folds
    ids[ce] = (np.arange(ce.size) + ev.size) % folds
    return ids


def _stratified_fold_ids(labels, folds, rng):
    """Deal each class round-robin over folds so every training set keeps
    every class that has at least two members."""
    perm = rng.permutation(labels.size)
    ids = np.empty(labels.size, dtype=np.int64)
    offset = 0
    for c in np.unique(labels):
        members = perm[labels[perm] == c]
        ids[members] = (np.arange(members.size) + offset) % folds
        offset += members.size
    return ids


def _heldout_deviance(prob, X_te, y_te, coefs, ints):
    """Out-of-fold deviance for every grid point (non-Cox families)."""
    if prob.code == K.GAUSSIAN:
        pred = X_te @ coefs.T + ints[None, :]
        return ((y_te[:, None] - pred) ** 2).sum(axis=0)
    eta = np.einsum("ij,ljk->lik", X_te, coefs) + ints[:, None, :]
    mx = np.maximum(eta.max(axis=2), 0.0)
    lse = mx + np.log(np.exp(-mx) + np.exp(eta - mx[:, :, None]).sum(axis=2))
    Yk = np.zeros((X_te.shape[0], prob.K))
    for k in range(1, prob.K + 1):
        Yk[:, k - 1] = y_te == k
    ll = (Yk[None] * eta).sum(axis=2) - lse
    return -2.0 * ll.sum(axis=1)


def cross_validate(family: Family, mm, response, folds: int = 10, opts: FitOptions = FitOptions(),
                   seed: int = 0) -> CVResult:
    """K-fold CV of mean out-of-fold deviance over the full-data grid.

    Cox folds are scored by the Verweij-van Houwelingen contribution
    2 * (n * l(beta_-k) - n_-k * l_-k(beta_-k)).  Ties in the CV curve go to
    the largest lambda.
    """
    X = _values(mm)
    n = X.shape[0]
    if folds < 2 or n < folds:
        raise ValueError("need folds >= 2 and n >= folds")
    full = _Problem(family, X, response, opts.standardize)
    path = _path_from_problem(full, opts)
    lambdas = path.lambdas
    rng = np.random.default_rng(seed)

    if isinstance(family, Cox):
        time, event = (np.asarray(a) for a in response)
        event = event.astype(np.int64)
        ids = _fold_ids(n, folds, rng, event)
    elif isinstance(family, Multinomial):
        y = np.asarray(response).astype(np.int64)
        ids = _stratified_fold_ids(y, folds, rng)
    else:
        ids = _fold_ids(n, folds, rng)
        y = np.asarray(response)

    dev = np.zeros((folds, lambdas.size))
    n_common = lambdas.size
    weight = np.zeros(folds)
    for f in range(folds):
        tr = ids != f
        te = ~tr
        if isinstance(family, Cox):
            resp_tr = (time[tr], event[tr])
            sub = _Problem(family, X[tr], resp_tr, opts.standardize)
            _, coefs, ints, _, _ = sub.run_path(lambdas, opts)
            coefs = coefs[:, :, 0]
            eta_full = X @ coefs.T
            eta_tr = eta_full[tr]
            for li in range(lambdas.size):
                lf = K.cox_loss(np.ascontiguousarray(eta_full[full.order, li]), full.event, full.tie_start)
                lt = K.cox_loss(np.ascontiguousarray(eta_tr[sub.order, li]), sub.event, sub.tie_start)
                dev[f, li] = 2.0 * (n * lf - tr.sum() * lt)
            weight[f] = event[te].sum()
        else:
            if isinstance(family, Multinomial) and np.any(np.bincount(y[tr], minlength=family.n_classes) == 0):
                raise DegenerateResponseError(f"fold {f} training set misses a class")
            sub = _Problem(family, X[tr], y[tr], opts.standardize)
            _, coefs, ints, _, _ = sub.run_path(lambdas, opts)
            m = coefs.shape[0]
            if isinstance(family, Gaussian):
                dev[f, :m] = _heldout_deviance(sub, X[te], y[te].astype(float), coefs, ints)
            else:
                dev[f, :m] = _heldout_deviance(sub, X[te], y[te], coefs, ints)
            n_common = min(n_common, m)
            weight[f] = te.sum()
    if n_common < lambdas.size:
        # a fold path ended early: score only the grid points every fold reached
        lambdas = lambdas[:n_common]
        dev = dev[:, :n_common]
        path = PathResult(lambdas, path.coefficients[:n_common],
                          None if path.intercepts is None else path.intercepts[:n_common],
                          path.converged[:n_common], path.family)
    wsum = weight.sum()
    per_fold = dev / np.maximum(weight, 1)[:, None]
    cvm = dev.sum(axis=0) / max(wsum, 1)
    var = ((per_fold - cvm) ** 2 * weight[:, None]).sum(axis=0) / max(wsum, 1)
    cvsd = np.sqrt(var / (folds - 1))
    index_min = int(np.argmin(cvm))
    return CVResult(lambdas, cvm, cvsd, index_min, path)


def cv_select_penalty(family: Family, mm, response, folds: int = 10,
                      opts: FitOptions = FitOptions(), seed: int = 0) -> float:
    return cross_validate(family, mm, response, folds, opts, seed).lambda_min
