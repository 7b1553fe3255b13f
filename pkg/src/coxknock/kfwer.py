"""Knockoff statistics, negative-binomial calibration of the allowance v,
and the k-FWER thresholding rule."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

import numpy as np

from .data import encode_columns
from .knockoffs import generate_knockoffs
from .solvers import Cox, FitOptions, entry_lambdas, lasso_path


@dataclass(frozen=True, eq=False)
class WStatistics:
    z: np.ndarray
    z_tilde: np.ndarray
    w: np.ndarray
    chi: np.ndarray


def knockoff_w_stats(z, z_tilde) -> WStatistics:
    """W = max(Z, Z~) and chi = sign(Z - Z~)."""
    z = np.asarray(z, dtype=float)
    z_tilde = np.asarray(z_tilde, dtype=float)
    if z.shape != z_tilde.shape:
        raise ValueError("z and z_tilde must have equal length")
    if np.any(z < 0) or np.any(z_tilde < 0):
        raise ValueError("entry lambdas must be nonnegative")
    return WStatistics(z, z_tilde, np.maximum(z, z_tilde), np.sign(z - z_tilde).astype(np.int64))


def _nb_cdf_below(r: int, m: int) -> Fraction:
    """P(N < m) for N ~ NegativeBinomial(r successes, p = 1/2), exactly."""
    total = Fraction(0)
    for i in range(m):
        total += Fraction(math.comb(i + r - 1, i), 2 ** (i + r))
    return total


def nb_tail_exact(v: int, k: int) -> Fraction:
    if v < 0 or k < 1:
        raise ValueError("need v >= 0 and k >= 1")
    if v == 0:
        return Fraction(0)
    return 1 - _nb_cdf_below(v, k)


def nb_tail(v: int, k: int) -> float:
    """P(N >= k) where N counts failures before the v-th success of a fair
    coin; 0 when v = 0."""
    return float(nb_tail_exact(v, k))


def compute_v_single(k: int, alpha: float) -> int:
    """Largest v with nb_tail(v, k) <= alpha."""
    if k < 1 or not 0 < alpha < 1:
        raise ValueError("need k >= 1 and 0 < alpha < 1")
    bound = Fraction(alpha)
    v = 0
    while nb_tail_exact(v + 1, k) <= bound:
        v += 1
    return v


def _aggregate_count(eta: float, M: int, k: int) -> int:
    # ceil(eta * M * k) without binary floating-point spill (0.8 * 30 * 2)
    return math.ceil(Fraction(str(eta)) * M * k)


def aggregate_tail_exact(v: int, k: int, eta: float, M: int) -> Fraction:
    """P(NB(M v, 1/2) >= ceil(eta M k)); the sum of M independent NB(v, 1/2)
    per-run false counts is NB(M v, 1/2)."""
    if v == 0:
        return Fraction(0)
    return 1 - _nb_cdf_below(M * v, _aggregate_count(eta, M, k))


def compute_v_derandomized(k: int, alpha: float, eta: float, M: int) -> int:
    """Largest v whose aggregated false-count tail stays below alpha."""
    if k < 1 or not 0 < alpha < 1:
        raise ValueError("need k >= 1 and 0 < alpha < 1")
    if not 0 < eta <= 1 or M < 1:
        raise ValueError("need 0 < eta <= 1 and M >= 1")
    bound = Fraction(alpha)
    v = 0
    while aggregate_tail_exact(v + 1, k, eta, M) <= bound:
        v += 1
    return v


@dataclass(frozen=True)
class Prop1:
    """Single-run calibration: largest v with nb_tail(v, k) <= alpha."""


@dataclass(frozen=True)
class DerandomizedNB:
    eta: float = 0.8
    M: int = 30


@dataclass(frozen=True)
class FixedV:
    v: int


VPolicy = Union[Prop1, DerandomizedNB, FixedV]


@dataclass(frozen=True)
class FilterConfig:
    k: int = 2
    alpha: float = 0.1
    v_policy: VPolicy = field(default_factory=Prop1)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        p = self.v_policy
        if isinstance(p, FixedV) and p.v < 0:
            raise ValueError("fixed v must be >= 0")
        if isinstance(p, DerandomizedNB) and (not 0 < p.eta <= 1 or p.M < 1):
            raise ValueError("need 0 < eta <= 1 and M >= 1")

    def resolve_v(self) -> int:
        p = self.v_policy
        if isinstance(p, FixedV):
            return p.v
        if isinstance(p, DerandomizedNB):
            return compute_v_derandomized(self.k, self.alpha, p.eta, p.M)
        return compute_v_single(self.k, self.alpha)


@dataclass(frozen=True, eq=False)
class SelectionResult:
    selected: frozenset
    threshold: float | None
    v_used: int
    n_negatives_above: int
    stats: WStatistics | None = None

    def to_json(self, names=None) -> str:
        sel = sorted(self.selected)
        doc = {
            "selected": sel,
            "threshold": self.threshold,
            "v": self.v_used,
            "n_negatives_above": self.n_negatives_above,
        }
        if names is not None:
            doc["selected_names"] = [names[j] for j in sel]
        if self.stats is not None:
            doc["w"] = self.stats.w.tolist()
            doc["chi"] = self.stats.chi.tolist()
        return json.dumps(doc, sort_keys=True)


def threshold_select(stats: WStatistics, v: int) -> SelectionResult:
    """Walk W in decreasing order and keep the positive-signed features
    met before the v-th negative sign.

    At equal W a negative sign is placed ahead of a positive one, so a tied
    negative blocks the positive.  Features with chi = 0 are skipped.  With
    fewer than v negatives every positive is kept (threshold = smallest W).
    For v = 0 the kept set is the positives strictly above every negative.
    The reported threshold is the W of the v-th negative when one exists.
    """
    if v < 0:
        raise ValueError("v must be >= 0")
    w = stats.w
    chi = stats.chi
    idx = np.flatnonzero(chi != 0)
    # sort by W descending, negatives first among ties, then index for stability
    order = idx[np.lexsort((idx, chi[idx], -w[idx]))]
    selected = []
    negatives = 0
    threshold = None
    if v == 0:
        for j in order:
            if chi[j] < 0:
                break
            selected.append(int(j))
        threshold = float(w[selected[-1]]) if selected else None
        return SelectionResult(frozenset(selected), threshold, 0, 0, stats)
    for j in order:
        if chi[j] < 0:
            negatives += 1
            if negatives == v:
                threshold = float(w[j])
                break
        else:
            selected.append(int(j))
    if threshold is None:
        threshold = float(w.min()) if w.size else None
    return SelectionResult(frozenset(selected), threshold, v, negatives, stats)


# the Cox path runs on standardized columns so that entry order is not an
# artifact of measurement units
SELECTION_FIT = FitOptions(standardize=True)


def augmented_entry_lambdas(d, x_tilde: np.ndarray, fit_opts=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature entry lambdas (Z, Z~) on the Cox lasso path of [X, X~].

    Categorical features enter when their first dummy does."""
    fit_opts = SELECTION_FIT if fit_opts is None else fit_opts
    p = d.p
    values, column_map = encode_columns(np.hstack([d.x, x_tilde]), list(d.kinds) * 2)
    path = lasso_path(Cox(), values, (d.time, d.event), fit_opts, stop_when_all_active=True)
    groups = [[c for c, f in enumerate(column_map) if f == j] for j in range(2 * p)]
    z_all = entry_lambdas(path, groups)
    return z_all[:p], z_all[p:]


def base_knockoff_selection(d, seed: int, cfg: FilterConfig = FilterConfig(), fit_opts=None,
                            v: int | None = None, x_tilde: np.ndarray | None = None) -> SelectionResult:
    """One knockoff realization: generate X~, rank by Cox entry lambdas,
    threshold with the allowance ``v`` (resolved from ``cfg`` if omitted)."""
    if x_tilde is None:
        x_tilde = generate_knockoffs(d, seed).x_tilde
    z, zt = augmented_entry_lambdas(d, x_tilde, fit_opts)
    v = cfg.resolve_v() if v is None else v
    return threshold_select(knockoff_w_stats(z, zt), v)
