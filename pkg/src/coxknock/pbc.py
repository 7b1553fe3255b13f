"""Primary biliary cirrhosis cohort: preprocessing and the repeated-selection
frequency experiment."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .data import BINARY, CONTINUOUS, Dataset, EmptyDataError, SchemaError
from .derandomize import DerandomConfig, derandomized_select
from .kfwer import FilterConfig, base_knockoff_selection
from .seeding import child_seed

log = logging.getLogger(__name__)

SOURCE_COLUMNS = ("time", "status", "trt", "age", "sex", "ascites", "hepato", "spiders", "edema",
                  "bili", "chol", "albumin", "copper", "alk.phos", "ast", "trig", "platelet",
                  "protime", "stage")
EXPECTED_N = 258

# binary features first, then continuous, each alphabetical
BINARY_FEATURES = ("Ascites", "Edema-resistant", "Edema-treated", "Hepato", "Sex", "Spiders",
                   "Stage-2", "Stage-3", "Stage-4", "Trt")
CONTINUOUS_FEATURES = ("Age", "Albumin", "Alk-phos", "Ast", "Bili", "Chol", "Copper", "Platelet",
                       "Protime", "Trig")
_CONTINUOUS_SOURCE = {"Age": "age", "Albumin": "albumin", "Alk-phos": "alk.phos", "Ast": "ast",
                      "Bili": "bili", "Chol": "chol", "Copper": "copper", "Platelet": "platelet",
                      "Protime": "protime", "Trig": "trig"}


def bundled_pbc_path() -> Path:
    return Path(str(resources.files("coxknock") / "data" / "pbc.csv"))


def load_pbc_raw(path=None) -> dict[str, list[str]]:
    """Read the clinical table as raw string columns."""
    path = bundled_pbc_path() if path is None else Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in SOURCE_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"PBC table lacks required columns: {missing}")
        cols: dict[str, list[str]] = {c: [] for c in header}
        for row in reader:
            for c in header:
                cols[c].append((row[c] or "").strip())
    return cols


def _num(cell: str) -> float:
    if cell == "" or cell.upper() in ("NA", "NAN"):
        return np.nan
    return float(cell)


def preprocess_pbc(raw: dict[str, list[str]]) -> Dataset:
    """Drop transplant rows, keep complete cases, expand edema and stage.

    Status coding is 0 censored, 1 transplant, 2 dead; the event is death.
    Treatment is coded 1 for placebo and sex 1 for male.
    """
    missing = [c for c in SOURCE_COLUMNS if c not in raw]
    if missing:
        raise SchemaError(f"PBC table lacks required columns: {missing}")
    n_raw = len(raw["time"])
    num = {c: np.array([_num(v) for v in raw[c]]) for c in SOURCE_COLUMNS if c != "sex"}
    sex = np.array([{"m": 1.0, "f": 0.0}.get(v.lower(), np.nan) if v else np.nan for v in raw["sex"]])
    keep = num["status"] != 1
    complete = ~np.isnan(np.column_stack([num[c] for c in num] + [sex])).any(axis=1)
    keep &= complete
    if not keep.any():
        raise EmptyDataError("no complete non-transplant records")

    def k(a):
        return a[keep]

    edema, stage = k(num["edema"]), k(num["stage"])
    binary = {
        "Ascites": k(num["ascites"]),
        "Edema-resistant": (edema == 1.0).astype(float),
        "Edema-treated": (edema == 0.5).astype(float),
        "Hepato": k(num["hepato"]),
        "Sex": k(sex),
        "Spiders": k(num["spiders"]),
        "Stage-2": (stage == 2).astype(float),
        "Stage-3": (stage == 3).astype(float),
        "Stage-4": (stage == 4).astype(float),
        "Trt": (k(num["trt"]) == 2).astype(float),
    }
    cols = [binary[f] for f in BINARY_FEATURES]
    cols += [k(num[_CONTINUOUS_SOURCE[f]]) for f in CONTINUOUS_FEATURES]
    x = np.column_stack(cols)
    n = x.shape[0]
    if n != EXPECTED_N:
        log.warning("PBC preprocessing kept %d rows, expected %d", n, EXPECTED_N)
    return Dataset(
        x=x,
        kinds=(BINARY,) * len(BINARY_FEATURES) + (CONTINUOUS,) * len(CONTINUOUS_FEATURES),
        time=k(num["time"]),
        event=(k(num["status"]) == 2).astype(float),
        names=BINARY_FEATURES + CONTINUOUS_FEATURES,
        n_dropped=n_raw - n,
    )


@dataclass(frozen=True)
class PbcConfig:
    input_path: str | None = None
    runs: int = 200
    k: int = 3
    alpha: float = 0.1
    eta: float = 0.8
    M: int = 30
    master_seed: int = 0
    include_single_run: bool = False

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")


@dataclass(frozen=True, eq=False)
class FrequencyTable:
    """Selection frequencies (descending) and the run-by-feature indicators."""

    names: tuple[str, ...]
    indicators: np.ndarray
    single_run_indicators: np.ndarray | None = field(default=None)

    @property
    def frequencies(self) -> np.ndarray:
        return self.indicators.mean(axis=0)

    def ordered(self) -> list[tuple[str, float]]:
        f = self.frequencies
        order = sorted(range(len(f)), key=lambda j: (-f[j], self.names[j]))
        return [(self.names[j], float(f[j])) for j in order]

    def write_frequency_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["feature", "frequency", "rank"])
            for rank, (name, freq) in enumerate(self.ordered(), start=1):
                w.writerow([name, repr(freq), rank])

    def write_indicator_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["run", *self.names])
            for r, row in enumerate(self.indicators):
                w.writerow([r, *(int(v) for v in row)])


def pbc_frequency_experiment(cfg: PbcConfig, fit_opts=None, dataset: Dataset | None = None,
                             n_jobs: int = 1) -> FrequencyTable:
    """Repeat the derandomized selection ``cfg.runs`` times with fresh
    knockoff randomness and tabulate how often each feature is chosen."""
    d = preprocess_pbc(load_pbc_raw(cfg.input_path)) if dataset is None else dataset
    ind = np.zeros((cfg.runs, d.p), dtype=np.int8)
    single = np.zeros((cfg.runs, d.p), dtype=np.int8) if cfg.include_single_run else None
    single_cfg = FilterConfig(cfg.k, cfg.alpha)
    for r in range(cfg.runs):
        seed = child_seed(cfg.master_seed, r)
        dcfg = DerandomConfig(M=cfg.M, eta=cfg.eta, k=cfg.k, alpha=cfg.alpha, master_seed=seed)
        try:
            res = derandomized_select(d, dcfg, fit_opts, n_jobs=n_jobs)
            ind[r, sorted(res.selected)] = 1
            if single is not None:
                one = base_knockoff_selection(d, child_seed(seed, 1 << 20), single_cfg, fit_opts)
                single[r, sorted(one.selected)] = 1
        except Exception as exc:
            raise RuntimeError(f"PBC repetition {r} failed: {exc}") from exc
    return FrequencyTable(tuple(d.names), ind, single)
