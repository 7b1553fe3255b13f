"""Sequential knockoffs for mixed continuous/categorical covariates.

Column j's knockoff is drawn from a penalized conditional model of X_j given
the other original columns and the knockoffs already generated for columns
1..j-1: a Gaussian lasso for continuous columns, a multinomial lasso (plain
logistic for two levels) for categorical ones.  The penalty of each
conditional fit is picked by K-fold cross-validation.  The outcome never
enters: generation only sees the covariates and the seed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ColumnKind, Dataset, encode_columns
from .seeding import child_seed
from .solvers import FitOptions, Gaussian, Multinomial, cross_validate

# conditional models are fitted on standardized predictors so the knockoff
# of a feature does not depend on the units of the others; a 20-point grid
# over two decades is ample for picking the penalty by CV, and logistic
# paths end once the fit saturates (near-separable indicator columns)
CONDITIONAL_FIT = FitOptions(n_lambda=20, lambda_min_ratio=0.01, tol=1e-5, standardize=True,
                             saturation_stop=True)
SIGMA_FLOOR = 1e-8

_FOLD_STREAM = 0
_SAMPLE_STREAM = 1


class KnockoffError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class KnockoffMatrix:
    x_tilde: np.ndarray
    seed: int
    kinds: tuple[ColumnKind, ...]
    names: tuple[str, ...]

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"{name}.tilde" for name in self.names])
            for row in self.x_tilde:
                writer.writerow([repr(float(v)) if not k.is_categorical else k.levels[int(v)]
                                 for v, k in zip(row, self.kinds)])


def sample_continuous_conditional(mu: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Independent N(mu_i, sigma^2) draws."""
    mu = np.asarray(mu, dtype=float)
    return mu + sigma * rng.standard_normal(mu.shape[0])


def sample_categorical_conditional(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of an n x L probability matrix."""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2:
        raise ValueError("probabilities must be an n x L matrix")
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-8):
        raise ValueError("each probability row must be nonnegative and sum to 1")
    u = rng.random(probs.shape[0])
    cum = np.cumsum(probs, axis=1)
    idx = (cum < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def _conditional_gaussian(P, target, folds, fold_seed, opts):
    n = target.shape[0]
    if P.shape[1] == 0:
        return np.full(n, target.mean()), np.std(target, ddof=1) if n > 1 else 0.0
    cv = cross_validate(Gaussian(), P, target, folds, opts, fold_seed)
    i = cv.index_min
    coef = cv.path.coefficients[i]
    mu = cv.path.intercepts[i] + P @ coef
    df = int(np.count_nonzero(coef))
    resid = target - mu
    dof = max(n - df - 1, 1)
    return mu, float(np.sqrt(resid @ resid / dof))


def _conditional_multinomial(P, labels, n_levels, folds, fold_seed, opts):
    n = labels.shape[0]
    present = np.flatnonzero(np.bincount(labels, minlength=n_levels))
    probs = np.zeros((n, n_levels))
    if present.size == 1:
        probs[:, present[0]] = 1.0
        return probs
    # refit only over the observed levels
    remap = np.full(n_levels, -1)
    remap[present] = np.arange(present.size)
    y = remap[labels]
    if P.shape[1] == 0:
        freq = np.bincount(y, minlength=present.size) / n
        probs[:, present] = freq
        return probs
    cv = cross_validate(Multinomial(present.size), P, y, folds, opts, fold_seed)
    i = cv.index_min
    eta = np.column_stack([np.zeros(n), P @ cv.path.coefficients[i] + cv.path.intercepts[i]])
    eta -= eta.max(axis=1, keepdims=True)
    e = np.exp(eta)
    probs[:, present] = e / e.sum(axis=1, keepdims=True)
    return probs


def generate_knockoffs(d: Dataset, seed: int, folds: int = 10,
                       opts: FitOptions = CONDITIONAL_FIT) -> KnockoffMatrix:
    """Draw one knockoff copy of ``d.x`` column by column."""
    n, p = d.x.shape
    if n < 10:
        raise KnockoffError("need at least 10 rows to fit conditional models")
    encoded = [encode_columns(d.x[:, [j]], [d.kinds[j]])[0] for j in range(p)]
    tilde_encoded: list[np.ndarray] = []
    x_tilde = np.empty_like(d.x)
    for j in range(p):
        blocks = [encoded[l] for l in range(p) if l != j] + tilde_encoded
        P = np.hstack(blocks) if blocks else np.zeros((n, 0))
        fold_seed = child_seed(seed, j, _FOLD_STREAM)
        rng = np.random.default_rng(child_seed(seed, j, _SAMPLE_STREAM))
        kind = d.kinds[j]
        try:
            if kind.is_categorical:
                labels = d.x[:, j].astype(np.int64)
                probs = _conditional_multinomial(P, labels, kind.n_levels, folds, fold_seed, opts)
                x_tilde[:, j] = sample_categorical_conditional(probs, rng)
            else:
                target = d.x[:, j]
                mu, sigma = _conditional_gaussian(P, target, folds, fold_seed, opts)
                floor = SIGMA_FLOOR * float(np.std(target))
                x_tilde[:, j] = sample_continuous_conditional(mu, max(sigma, floor), rng)
        except Exception as exc:
            raise KnockoffError(f"conditional fit failed for column {d.names[j]!r}: {exc}") from exc
        tilde_encoded.append(encode_columns(x_tilde[:, [j]], [kind])[0])
    x_tilde.setflags(write=False)
    return KnockoffMatrix(x_tilde, seed, d.kinds, d.names)
