"""Aggregation of many knockoff realizations into one stable selection."""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .kfwer import FilterConfig, SelectionResult, base_knockoff_selection, compute_v_derandomized
from .seeding import child_seed


@dataclass(frozen=True)
class DerandomConfig:
    M: int = 30
    eta: float = 0.8
    k: int = 2
    alpha: float = 0.1
    master_seed: int = 0
    v_override: int | None = None

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if self.k < 1 or not 0 < self.alpha < 1:
            raise ValueError("need k >= 1 and 0 < alpha < 1")
        if self.v_override is not None and self.v_override < 0:
            raise ValueError("v override must be >= 0")

    def resolve_v(self) -> int:
        if self.v_override is not None:
            return self.v_override
        return compute_v_derandomized(self.k, self.alpha, self.eta, self.M)

    def run_seed(self, m: int) -> int:
        return child_seed(self.master_seed, m)


@dataclass(frozen=True, eq=False)
class DerandomizedResult:
    pi_hat: np.ndarray
    selected: frozenset
    per_run: tuple[SelectionResult, ...]
    v_used: int

    def to_json(self, names: Sequence[str] | None = None, config: DerandomConfig | None = None) -> str:
        p = self.pi_hat.size
        names = list(names) if names is not None else [f"X{j + 1}" for j in range(p)]
        doc = {
            "pi_hat": {names[j]: float(self.pi_hat[j]) for j in range(p)},
            "selected": [names[j] for j in sorted(self.selected)],
            "selected_index": sorted(self.selected),
            "v_used": self.v_used,
        }
        if config is not None:
            doc["config"] = {"M": config.M, "eta": config.eta, "k": config.k,
                             "alpha": config.alpha, "master_seed": config.master_seed}
        return json.dumps(doc, sort_keys=True, indent=2)


def selection_probabilities(runs: Sequence[SelectionResult], p: int) -> np.ndarray:
    """Fraction of runs selecting each of the p features."""
    if len(runs) < 1:
        raise ValueError("need at least one run")
    counts = np.zeros(p, dtype=np.int64)
    for r in runs:
        for j in r.selected:
            counts[j] += 1
    return counts / len(runs)


def _one_run(args):
    d, seed, v, fit_opts = args
    return base_knockoff_selection(d, seed, FilterConfig(), fit_opts, v=v)


def derandomized_select(d, cfg: DerandomConfig = DerandomConfig(), fit_opts=None,
                        n_jobs: int = 1, knockoffs=None) -> DerandomizedResult:
    """Run M base selections with split seeds and keep features whose
    selection frequency reaches eta.

    ``knockoffs`` optionally supplies precomputed knockoff matrices, one per
    run, in run order.
    """
    v = cfg.resolve_v()
    runs: list[SelectionResult] = []
    if knockoffs is not None:
        if len(knockoffs) != cfg.M:
            raise ValueError("need exactly M knockoff matrices")
        for m, xt in enumerate(knockoffs):
            try:
                runs.append(base_knockoff_selection(d, cfg.run_seed(m), FilterConfig(), fit_opts, v=v, x_tilde=xt))
            except Exception as exc:
                raise RuntimeError(f"knockoff run {m} failed: {exc}") from exc
    elif n_jobs > 1:
        tasks = [(d, cfg.run_seed(m), v, fit_opts) for m in range(cfg.M)]
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(_one_run, t) for t in tasks]
            for m, fut in enumerate(futures):
                try:
                    runs.append(fut.result())
                except Exception as exc:
                    raise RuntimeError(f"knockoff run {m} failed: {exc}") from exc
    else:
        for m in range(cfg.M):
            try:
                runs.append(_one_run((d, cfg.run_seed(m), v, fit_opts)))
            except Exception as exc:
                raise RuntimeError(f"knockoff run {m} failed: {exc}") from exc
    pi_hat = selection_probabilities(runs, d.p)
    return DerandomizedResult(pi_hat, eta_superlevel(pi_hat, cfg.eta, cfg.M), tuple(runs), v)


def eta_superlevel(pi_hat: np.ndarray, eta: float, M: int) -> frozenset:
    """{j : pi_hat_j >= eta}, compared on run counts so that e.g.
    eta = 0.8, M = 30 needs exactly 24 runs regardless of float rounding."""
    counts = np.rint(np.asarray(pi_hat) * M).astype(np.int64)
    need = math.ceil(Fraction(str(eta)) * M)
    return frozenset(int(j) for j in np.flatnonzero(counts >= need))
