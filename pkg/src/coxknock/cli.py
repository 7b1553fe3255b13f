"""Command-line entry point.

Each invocation reads one JSON config (optional), applies flag overrides,
validates everything up front and writes into a single output directory:

    config.json       resolved configuration (sorted keys)
    provenance.json   seed, versions, thread budget and a timestamp
    run.log           log messages
    ...               command results (JSON / CSV)

Exit codes: 0 success, 1 runtime failure, 2 configuration error.  Errors
are reported as a JSON document on stderr (and in ``error.json`` when the
output directory is known).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataError, Dataset, Schema, load_csv_dataset
from .derandomize import DerandomConfig, derandomized_select
from .kfwer import (FilterConfig, aggregate_tail_exact, base_knockoff_selection,
                    compute_v_derandomized, compute_v_single, nb_tail)
from .pbc import PbcConfig, pbc_frequency_experiment, preprocess_pbc, load_pbc_raw
from .seeding import child_seed
from .simulation import (SETTINGS, CovKind, DesignSpec, EffectSpec, GridCell, build_beta,
                         gen_design, gen_outcome, paired_effects, run_grid, write_metrics_csv)

log = logging.getLogger("coxknock")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    """Invalid or incomplete configuration; maps to exit code 2."""


# ---------------------------------------------------------------------------
# configuration

def _read_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except OSError:
        raise ConfigError(f"config file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return doc


def _merge_flags(cfg: dict, args) -> dict:
    cfg = dict(cfg)
    for flag, key in (("seed", "seed"), ("k", "k"), ("alpha", "alpha"), ("eta", "eta"),
                      ("m", "M"), ("mode", "mode")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _require_seed(cfg: dict) -> int:
    if "seed" not in cfg or cfg["seed"] is None:
        raise ConfigError("a seed is required (--seed or \"seed\" in the config)")
    seed = cfg["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    return seed


def _int(cfg, key, default, lo=None):
    v = cfg.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key} must be an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{key} must be >= {lo}, got {v}")
    return v


def _real(cfg, key, default, lo, hi, hi_closed=False):
    v = cfg.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a number, got {v!r}")
    v = float(v)
    if not (lo < v < hi or (hi_closed and v == hi)):
        raise ConfigError(f"{key}={v} is out of range")
    return v


def _filter_params(cfg) -> dict:
    return {
        "k": _int(cfg, "k", 2, lo=1),
        "alpha": _real(cfg, "alpha", 0.1, 0.0, 1.0),
        "eta": _real(cfg, "eta", 0.8, 0.0, 1.0, hi_closed=True),
        "M": _int(cfg, "M", 30, lo=1),
    }


def _design_from(doc) -> DesignSpec:
    if isinstance(doc, int):
        if doc not in SETTINGS:
            raise ConfigError(f"unknown setting {doc}; known: {sorted(SETTINGS)}")
        return SETTINGS[doc]
    if not isinstance(doc, dict):
        raise ConfigError("a design is a setting number or an object of DesignSpec fields")
    try:
        return DesignSpec(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid design {doc}: {exc}") from None


# ---------------------------------------------------------------------------
# output

def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _prepare_out(out) -> Path:
    if out is None:
        raise ConfigError("an output directory is required (--out)")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _attach_log(out: Path) -> logging.Handler:
    handler = logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.getLogger("coxknock").addHandler(handler)
    logging.getLogger("coxknock").setLevel(logging.INFO)
    return handler


def _write_provenance(out: Path, command: str, seed, threads: int) -> None:
    import numba

    doc = {
        "command": command,
        "seed": seed,
        "threads": threads,
        "versions": {"coxknock": __version__, "numpy": np.__version__, "numba": numba.__version__,
                     "python": platform.python_version()},
        # the only non-reproducible field of any output
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    (out / "provenance.json").write_text(_dump(doc), encoding="utf-8")


# ---------------------------------------------------------------------------
# commands

def _simulated_dataset(doc: dict, seed: int) -> Dataset:
    spec = _design_from(doc.get("design", 1))
    cov = doc.get("cov_kind", spec.cov_kind.value)
    try:
        spec = spec.with_cov(cov)
        eff = EffectSpec(float(doc.get("beta_bin", 3.0)), float(doc.get("beta_cont", 25.0)),
                         float(doc.get("baseline_hazard", 0.1)))
    except ValueError as exc:
        raise ConfigError(f"invalid simulated data block: {exc}") from None
    data_seed = child_seed(seed, 1 << 30)
    x, kinds = gen_design(spec, data_seed)
    beta, _ = build_beta(spec, eff, data_seed)
    time, event = gen_outcome(x @ beta, eff, child_seed(data_seed, 4))
    return Dataset(x, kinds, time, event, tuple(f"X{j + 1}" for j in range(spec.p)))


def _load_select_data(cfg: dict, seed: int) -> Dataset:
    data = cfg.get("data")
    if not isinstance(data, dict):
        raise ConfigError("select needs a \"data\" block with either \"path\"+\"schema\" or \"simulated\"")
    if "simulated" in data:
        return _simulated_dataset(data["simulated"] or {}, seed)
    if "path" not in data or "schema" not in data:
        raise ConfigError("data block needs \"path\" and \"schema\"")
    path = Path(data["path"])
    if not path.is_file():
        raise ConfigError(f"data file not found: {path}")
    schema = data["schema"]
    if isinstance(schema, str):
        spath = Path(schema)
        if not spath.is_file():
            raise ConfigError(f"schema file not found: {spath}")
        try:
            schema = json.loads(spath.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"schema file {spath} is not valid JSON: {exc}") from None
    try:
        schema = Schema.from_dict(schema)
    except DataError as exc:
        raise ConfigError(str(exc)) from None
    try:
        return load_csv_dataset(path, schema)
    except DataError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_select(cfg: dict, out: Path, threads: int) -> dict:
    seed = _require_seed(cfg)
    mode = cfg.get("mode", "derandomized")
    if mode not in ("vanilla", "derandomized"):
        raise ConfigError(f"mode must be vanilla or derandomized, got {mode!r}")
    fp = _filter_params(cfg)
    d = _load_select_data(cfg, seed)
    resolved = {"command": "select", "seed": seed, "mode": mode, **fp, "data": cfg["data"]}
    (out / "config.json").write_text(_dump(resolved), encoding="utf-8")
    log.info("select: n=%d p=%d events=%d mode=%s", d.n, d.p, int(d.event.sum()), mode)

    if mode == "vanilla":
        res = base_knockoff_selection(d, seed, FilterConfig(fp["k"], fp["alpha"]))
        doc = json.loads(res.to_json(list(d.names)))
        doc["mode"] = mode
        text = _dump(doc)
        summary = [f"mode: vanilla  k={fp['k']}  alpha={fp['alpha']}  v={res.v_used}",
                   f"selected ({len(res.selected)}): " + ", ".join(d.names[j] for j in sorted(res.selected))]
    else:
        dcfg = DerandomConfig(M=fp["M"], eta=fp["eta"], k=fp["k"], alpha=fp["alpha"], master_seed=seed)
        res = derandomized_select(d, dcfg, n_jobs=threads)
        doc = json.loads(res.to_json(d.names, dcfg))
        doc["mode"] = mode
        text = _dump(doc)
        summary = [f"mode: derandomized  k={fp['k']}  alpha={fp['alpha']}  eta={fp['eta']}  M={fp['M']}"
                   f"  v={res.v_used}",
                   f"selected ({len(res.selected)}): " + ", ".join(d.names[j] for j in sorted(res.selected)),
                   "selection frequencies:"]
        summary += [f"  {d.names[j]:<20s} {res.pi_hat[j]:.3f}" for j in np.argsort(-res.pi_hat, kind="stable")]
    (out / "selection.json").write_text(text, encoding="utf-8")
    (out / "summary.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
    print("\n".join(summary))
    return {"seed": seed}


def _grid_cells(cfg: dict) -> list[GridCell]:
    designs = cfg.get("designs", [1])
    if not isinstance(designs, list) or not designs:
        raise ConfigError("designs must be a non-empty list")
    covs = cfg.get("cov_kinds", ["Independent"])
    try:
        covs = [CovKind(c) for c in covs]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    eff_doc = cfg.get("effects", "paired")
    hazard = cfg.get("baseline_hazard", 0.1)
    try:
        if eff_doc == "paired":
            effects = paired_effects(hazard)
        else:
            effects = [EffectSpec(float(b), float(c), hazard) for b, c in eff_doc]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid effects: {exc}") from None
    ks = cfg.get("ks", [2, 3])
    if not ks or any(isinstance(k, bool) or not isinstance(k, int) or k < 1 for k in ks):
        raise ConfigError("ks must be a list of integers >= 1")
    cells = []
    for i, ddoc in enumerate(designs):
        spec = _design_from(ddoc)
        setting = ddoc if isinstance(ddoc, int) else 100 + i
        for cov in covs:
            for eff in effects:
                for k in ks:
                    cells.append(GridCell(setting, spec.with_cov(cov), eff, k))
    return cells


def _grid_worker(args):
    cells, reps, methods, seed, alpha, eta, M = args
    return run_grid(cells, reps, methods, seed, alpha, eta, M)


def cmd_simulate(cfg: dict, out: Path, threads: int) -> dict:
    seed = _require_seed(cfg)
    fp = _filter_params(cfg)
    reps = _int(cfg, "reps", 100, lo=1)
    methods = cfg.get("methods", ["derandomized", "vanilla"])
    if not methods or any(m not in ("derandomized", "vanilla") for m in methods):
        raise ConfigError("methods must be a non-empty subset of [derandomized, vanilla]")
    cells = _grid_cells(cfg)
    resolved = {"command": "simulate", "seed": seed, "alpha": fp["alpha"], "eta": fp["eta"], "M": fp["M"],
                "reps": reps, "methods": list(methods), "designs": cfg.get("designs", [1]),
                "cov_kinds": [c.value for c in sorted({c.spec.cov_kind for c in cells}, key=lambda c: c.value)],
                "effects": cfg.get("effects", "paired"), "ks": cfg.get("ks", [2, 3])}
    (out / "config.json").write_text(_dump(resolved), encoding="utf-8")

    # one job per (design, covariance) group; rows are reassembled in cell order
    groups: dict = {}
    for i, c in enumerate(cells):
        groups.setdefault((c.setting, c.spec), []).append(i)
    jobs = [([cells[i] for i in idx], reps, tuple(methods), seed, fp["alpha"], fp["eta"], fp["M"])
            for idx in groups.values()]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_grid_worker, jobs))
    else:
        results = [_grid_worker(j) for j in jobs]
    per_cell = {}
    for idx, rows in zip(groups.values(), results):
        per = len(methods)
        for n_cell, i in enumerate(idx):
            per_cell[i] = rows[n_cell * per:(n_cell + 1) * per]
    ordered = [r for i in range(len(cells)) for r in per_cell[i]]
    write_metrics_csv(ordered, out / "metrics.csv")
    print(f"wrote {len(ordered)} rows to metrics.csv")
    return {"seed": seed}


def vcalc(k: int, alpha: float, eta: float | None = None, M: int | None = None) -> dict:
    """The allowance v under both calibrations, with the exact tails."""
    v1 = compute_v_single(k, alpha)
    doc = {"k": k, "alpha": alpha, "prop1": {"v": v1, "tail": nb_tail(v1, k)}}
    if v1 == 0:
        doc["prop1"]["warning"] = ("v = 0: no single-run allowance meets alpha at this k, "
                                   "so a run selects only positives above every negative")
    if eta is not None and M is not None:
        vd = compute_v_derandomized(k, alpha, eta, M)
        doc["aggregate"] = {"eta": eta, "M": M, "v": vd, "tail": float(aggregate_tail_exact(vd, k, eta, M))}
    return doc


def cmd_vcalc(cfg: dict, out: Path | None, threads: int) -> dict:
    k = _int(cfg, "k", 2, lo=1)
    alpha = _real(cfg, "alpha", 0.1, 0.0, 1.0)
    eta = cfg.get("eta")
    M = cfg.get("M")
    if (eta is None) != (M is None):
        raise ConfigError("give both eta and M (or neither)")
    if eta is not None:
        eta = _real(cfg, "eta", None, 0.0, 1.0, hi_closed=True)
        M = _int(cfg, "M", None, lo=1)
    doc = vcalc(k, alpha, eta, M)
    text = _dump(doc)
    if "warning" in doc["prop1"]:
        print(f"warning: {doc['prop1']['warning']}", file=sys.stderr)
    sys.stdout.write(text)
    if out is not None:
        (out / "config.json").write_text(_dump({"command": "vcalc", "k": k, "alpha": alpha,
                                                "eta": eta, "M": M}), encoding="utf-8")
        (out / "vcalc.json").write_text(text, encoding="utf-8")
    return {"seed": None}


def cmd_pbc(cfg: dict, out: Path, threads: int) -> dict:
    seed = _require_seed(cfg)
    fp = _filter_params({"k": 3, **cfg})
    input_path = cfg.get("input_path")
    if input_path is not None and not Path(input_path).is_file():
        raise ConfigError(f"PBC table not found: {input_path}")
    try:
        pcfg = PbcConfig(input_path=input_path, runs=_int(cfg, "runs", 200, lo=1), k=fp["k"],
                         alpha=fp["alpha"], eta=fp["eta"], M=fp["M"], master_seed=seed,
                         include_single_run=bool(cfg.get("include_single_run", False)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        d = preprocess_pbc(load_pbc_raw(input_path))
    except DataError as exc:
        raise ConfigError(f"PBC table: {exc}") from None
    resolved = {"command": "pbc", "seed": seed, "input_path": input_path, "runs": pcfg.runs, "k": pcfg.k,
                "alpha": pcfg.alpha, "eta": pcfg.eta, "M": pcfg.M,
                "include_single_run": pcfg.include_single_run}
    (out / "config.json").write_text(_dump(resolved), encoding="utf-8")
    n_bin = sum(k.is_categorical for k in d.kinds)
    census = f"PBC census: n={d.n} p={d.p} binary={n_bin} continuous={d.p - n_bin} events={int(d.event.sum())}"
    print(census)
    log.info(census)
    table = pbc_frequency_experiment(pcfg, dataset=d, n_jobs=threads)
    table.write_frequency_csv(out / "frequencies.csv")
    table.write_indicator_csv(out / "indicators.csv")
    if table.single_run_indicators is not None:
        from .pbc import FrequencyTable

        FrequencyTable(table.names, table.single_run_indicators).write_frequency_csv(
            out / "frequencies_single_run.csv")
    for name, freq in table.ordered()[:6]:
        print(f"  {name:<16s} {freq:.3f}")
    return {"seed": seed}


COMMANDS = {"select": cmd_select, "simulate": cmd_simulate, "vcalc": cmd_vcalc, "pbc": cmd_pbc}


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="master seed (required unless in the config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker processes (default: available CPUs)")
    common.add_argument("--k", type=int, help="false discoveries tolerated is k - 1")
    common.add_argument("--alpha", type=float, help="k-FWER level")
    common.add_argument("--eta", type=float, help="selection-frequency cutoff")
    common.add_argument("--m", type=int, help="number of knockoff realizations")
    common.add_argument("--mode", choices=("vanilla", "derandomized"), help="single run or aggregated")
    parser = argparse.ArgumentParser(prog="coxknock", description="Derandomized Cox knockoffs with k-FWER control")
    parser.add_argument("--version", action="version", version=f"coxknock {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("select", parents=[common], help="select features on one dataset")
    sub.add_parser("simulate", parents=[common], help="run the simulation grid")
    sub.add_parser("vcalc", parents=[common], help="compute the allowance v")
    sub.add_parser("pbc", parents=[common], help="PBC selection-frequency experiment")
    return parser


def _error(kind: str, exc: BaseException, out: Path | None) -> None:
    doc = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    text = json.dumps(doc, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            (out / "error.json").write_text(text + "\n", encoding="utf-8")
        except OSError:
            pass


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags, 0 on --help/--version
        return int(exc.code or 0)
    out = None
    handler = None
    try:
        cfg = _merge_flags(_read_config(args.config), args)
        threads = args.threads if args.threads is not None else cfg.get("threads", os.cpu_count() or 1)
        if isinstance(threads, bool) or not isinstance(threads, int) or threads < 1:
            raise ConfigError(f"threads must be a positive integer, got {threads!r}")
        if args.command == "vcalc":
            out = _prepare_out(args.out) if args.out else None
        else:
            out = _prepare_out(args.out)
            handler = _attach_log(out)
        info = COMMANDS[args.command](cfg, out, threads)
        if out is not None:
            _write_provenance(out, args.command, info.get("seed"), threads)
        return EXIT_OK
    except ConfigError as exc:
        _error("configuration", exc, out)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error document
        log.exception("command failed")
        _error("runtime", exc, out)
        return EXIT_RUNTIME
    finally:
        if handler is not None:
            logging.getLogger("coxknock").removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
