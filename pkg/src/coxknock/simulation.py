"""Synthetic survival designs and the evaluation grid.

Covariates are Gaussian with covariance I/n or an AR(1) matrix divided by n;
a random subset of columns is dichotomized at zero.  Survival times follow an
exponential proportional-hazards model and are censored by independent
Uniform(0, 1) times.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .data import BINARY, CONTINUOUS, Dataset
from .derandomize import eta_superlevel, selection_probabilities
from .kfwer import (augmented_entry_lambdas, compute_v_derandomized, compute_v_single,
                    knockoff_w_stats, threshold_select)
from .knockoffs import generate_knockoffs
from .seeding import child_seed

log = logging.getLogger(__name__)


class CovKind(str, Enum):
    INDEPENDENT = "Independent"
    AR1 = "AR1"


@dataclass(frozen=True)
class DesignSpec:
    p: int
    p1: int
    pb: int
    p1b: int
    pc: int
    p1c: int
    n: int = 300
    cov_kind: CovKind = CovKind.INDEPENDENT
    rho: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "cov_kind", CovKind(self.cov_kind))
        if self.p != self.pb + self.pc or self.p1 != self.p1b + self.p1c:
            raise ValueError("need p = pb + pc and p1 = p1b + p1c")
        if not (0 <= self.p1b <= self.pb and 0 <= self.p1c <= self.pc):
            raise ValueError("nonnull counts exceed column counts")
        if self.n < 1 or not -1 < self.rho < 1:
            raise ValueError("need n >= 1 and |rho| < 1")

    def covariance(self) -> np.ndarray:
        idx = np.arange(self.p)
        if self.cov_kind is CovKind.AR1:
            sigma = self.rho ** np.abs(idx[:, None] - idx[None, :])
        else:
            sigma = np.eye(self.p)
        return sigma / self.n

    def with_cov(self, cov_kind) -> "DesignSpec":
        return DesignSpec(self.p, self.p1, self.pb, self.p1b, self.pc, self.p1c, self.n,
                          CovKind(cov_kind), self.rho)


# (p, p1, pb, p1b, pc, p1c)
SETTINGS = {
    1: DesignSpec(15, 7, 5, 2, 10, 5),
    2: DesignSpec(30, 15, 10, 5, 20, 10),
    3: DesignSpec(60, 15, 20, 5, 40, 10),
}
BETA_BIN_LEVELS = (0.001, 0.1, 0.5, 1.0, 2.0, 3.0)
BETA_CONT_LEVELS = (0.005, 2.0, 5.0, 10.0, 15.0, 25.0)


@dataclass(frozen=True)
class EffectSpec:
    beta_bin: float
    beta_cont: float
    baseline_hazard: float = 0.1

    def __post_init__(self):
        if self.baseline_hazard <= 0:
            raise ValueError("baseline hazard must be positive")


def paired_effects(baseline_hazard: float = 0.1) -> list[EffectSpec]:
    """The six signal levels; the i-th binary effect goes with the i-th
    continuous one."""
    return [EffectSpec(b, c, baseline_hazard) for b, c in zip(BETA_BIN_LEVELS, BETA_CONT_LEVELS)]


# independent streams under a design seed
_BINARY_STREAM, _X_STREAM, _BETA_STREAM = 0, 1, 2


def binary_columns(spec: DesignSpec, seed: int) -> np.ndarray:
    """Sorted indices of the dichotomized columns for this seed."""
    rng = np.random.default_rng(child_seed(seed, _BINARY_STREAM))
    return np.sort(rng.choice(spec.p, size=spec.pb, replace=False))


def gen_design(spec: DesignSpec, seed: int) -> tuple[np.ndarray, tuple]:
    """Covariate matrix and column kinds (no outcome)."""
    rng = np.random.default_rng(child_seed(seed, _X_STREAM))
    chol = np.linalg.cholesky(spec.covariance())
    x = rng.standard_normal((spec.n, spec.p)) @ chol.T
    bins = binary_columns(spec, seed)
    x[:, bins] = (x[:, bins] > 0).astype(float)
    kinds = tuple(BINARY if j in set(bins.tolist()) else CONTINUOUS for j in range(spec.p))
    return x, kinds


def build_beta(spec: DesignSpec, eff: EffectSpec, seed: int) -> tuple[np.ndarray, frozenset]:
    """Coefficients and the nonnull set.  Nonnull positions depend on the
    seed only, so every effect level shares them."""
    bins = binary_columns(spec, seed)
    conts = np.setdiff1d(np.arange(spec.p), bins)
    rng = np.random.default_rng(child_seed(seed, _BETA_STREAM))
    nb = rng.choice(bins, size=spec.p1b, replace=False)
    nc = rng.choice(conts, size=spec.p1c, replace=False)
    beta = np.zeros(spec.p)
    beta[nb] = eff.beta_bin
    beta[nc] = eff.beta_cont
    return beta, frozenset(int(j) for j in np.concatenate([nb, nc]))


def gen_outcome(linear_predictor: np.ndarray, eff: EffectSpec, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Exponential event times by inversion, Uniform(0, 1) censoring."""
    lp = np.asarray(linear_predictor, dtype=float)
    rng = np.random.default_rng(seed)
    u = rng.random(lp.size)
    c = rng.random(lp.size)
    t = -np.log(u) / (eff.baseline_hazard * np.exp(lp))
    return np.minimum(t, c), (t <= c).astype(float)


def compute_metrics(selected: Iterable[int], truth: Iterable[int], k: int) -> tuple[float, int, int]:
    """(TPP, number of false selections, 1{false selections >= k})."""
    selected = set(selected)
    truth = set(truth)
    if not truth:
        raise ValueError("TPP is undefined for an empty truth set")
    v = len(selected - truth)
    return len(selected & truth) / len(truth), v, int(v >= k)


@dataclass(frozen=True)
class MetricRow:
    setting: int
    cov_kind: str
    beta_bin: float
    beta_cont: float
    k: int
    method: str
    tpp: float
    kfwer_hat: float
    reps: int
    failures: int = 0
    censoring_rate: float = float("nan")

    FIELDS = ("setting", "cov_kind", "beta_bin", "beta_cont", "k", "method", "tpp", "kfwer_hat",
              "reps", "failures", "censoring_rate")

    def as_row(self) -> list:
        return [self.setting, self.cov_kind, repr(self.beta_bin), repr(self.beta_cont), self.k,
                self.method, repr(self.tpp), repr(self.kfwer_hat), self.reps, self.failures,
                repr(self.censoring_rate)]


def write_metrics_csv(rows: Sequence[MetricRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(MetricRow.FIELDS)
        for r in rows:
            w.writerow(r.as_row())


@dataclass(frozen=True)
class GridCell:
    """One (design, effect, k) cell.  ``reps``, when set, caps the number of
    replications the cell takes part in (the first ``reps`` of the grid)."""

    setting: int
    spec: DesignSpec
    effect: EffectSpec
    k: int
    reps: int | None = None

    def active(self, rep: int) -> bool:
        return self.reps is None or rep < self.reps


METHODS = ("derandomized", "vanilla")


def design_seed(master_seed: int, setting: int, cov_kind: CovKind, rep: int) -> int:
    return child_seed(master_seed, setting, 0 if CovKind(cov_kind) is CovKind.INDEPENDENT else 1, rep)


def run_grid(cells: Sequence[GridCell], reps: int, methods: Sequence[str] = ("derandomized",),
             master_seed: int = 0, alpha: float = 0.1, eta: float = 0.8, M: int = 30,
             fit_opts=None, folds: int = 10, record=None) -> list[MetricRow]:
    """Evaluate each method on every cell over ``reps`` replications.

    Replication r of a (setting, covariance) pair uses one design, one set
    of nonnull positions, one pair of uniform draws for the outcome and one
    family of knockoff copies for every effect level and k; these common
    random numbers make comparisons across cells less noisy and let the
    knockoffs be generated once.  Each cell on its own is an ordinary
    Monte Carlo experiment.  ``record``, when given, is called with
    (cell, method, rep, selected, truth) for every run.
    """
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    groups: dict[tuple, list[int]] = {}
    for i, c in enumerate(cells):
        groups.setdefault((c.setting, c.spec), []).append(i)
    sums = {(i, m): [0.0, 0, 0, 0] for i in range(len(cells)) for m in methods}  # tpp, hits, ok, fail
    cens = {i: [0.0, 0] for i in range(len(cells))}
    for (setting, spec), idx in groups.items():
        for r in range(reps):
            if not any(cells[i].active(r) for i in idx):
                continue
            seed = design_seed(master_seed, setting, spec.cov_kind, r)
            x, kinds = gen_design(spec, seed)
            names = tuple(f"X{j + 1}" for j in range(spec.p))
            knock_seed = child_seed(seed, 3)
            n_runs = M if "derandomized" in methods else 1
            try:
                shell = Dataset(x, kinds, np.ones(spec.n), np.ones(spec.n), names)
                tildes = [generate_knockoffs(shell, child_seed(knock_seed, m), folds).x_tilde
                          for m in range(n_runs)]
            except Exception as exc:
                log.warning("knockoff generation failed (setting %d, %s, rep %d): %s",
                            setting, spec.cov_kind.value, r, exc)
                for i in idx:
                    if cells[i].active(r):
                        for m in methods:
                            sums[(i, m)][3] += 1
                continue
            outcome_seed = child_seed(seed, 4)
            stats_cache: dict = {}
            for i in idx:
                cell = cells[i]
                if not cell.active(r):
                    continue
                beta, truth = build_beta(spec, cell.effect, seed)
                time, event = gen_outcome(x @ beta, cell.effect, outcome_seed)
                cens[i][0] += float(1.0 - event.mean())
                cens[i][1] += 1
                d = Dataset(x, kinds, time, event, names)
                key = cell.effect
                for m in methods:
                    try:
                        if key not in stats_cache:
                            stats_cache[key] = [knockoff_w_stats(*augmented_entry_lambdas(d, xt, fit_opts))
                                                for xt in tildes]
                        stats = stats_cache[key]
                        if m == "derandomized":
                            v = compute_v_derandomized(cell.k, alpha, eta, M)
                            runs = [threshold_select(s, v) for s in stats]
                            sel = eta_superlevel(selection_probabilities(runs, spec.p), eta, M)
                        else:
                            v = compute_v_single(cell.k, alpha)
                            sel = threshold_select(stats[0], v).selected
                    except Exception as exc:
                        log.warning("method %s failed (cell %d, rep %d): %s", m, i, r, exc)
                        sums[(i, m)][3] += 1
                        continue
                    if truth:
                        tpp, _, hit = compute_metrics(sel, truth, cell.k)
                    else:
                        # pure-noise design: every selection is false, TPP undefined
                        tpp, hit = float("nan"), int(len(sel) >= cell.k)
                    acc = sums[(i, m)]
                    acc[0] += tpp if truth else 0.0
                    acc[1] += hit
                    acc[2] += 1
                    if record is not None:
                        record(cell, m, r, frozenset(sel), truth)
    rows = []
    for i, c in enumerate(cells):
        rate = cens[i][0] / cens[i][1] if cens[i][1] else float("nan")
        log.info("setting %d %s beta=(%g, %g): censoring rate %.3f", c.setting, c.spec.cov_kind.value,
                 c.effect.beta_bin, c.effect.beta_cont, rate)
        for m in methods:
            tpp_sum, hits, ok, fail = sums[(i, m)]
            rows.append(MetricRow(c.setting, c.spec.cov_kind.value, c.effect.beta_bin, c.effect.beta_cont,
                                  c.k, m, tpp_sum / ok if ok and c.spec.p1 else float("nan"),
                                  hits / ok if ok else float("nan"), ok, fail, rate))
    return rows

