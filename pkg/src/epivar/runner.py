"""Experiment runs behind the command line: estimates, ground truth and grid sweeps.

Result files
------------
``<name>.csv``
    One row per (method, quantity), columns :data:`RESULT_COLUMNS`. Floats are
    written with ``repr`` so they parse back bit-exactly. Wall-clock times are
    kept out of the CSV so that reruns with the same seed produce identical
    bytes.
``<name>.json``
    The same rows plus ``wall_seconds``, the full config echo and, for
    estimates, the test point and the learning rate actually used.

Seeds
-----
From the top-level ``seed``: the dataset is sampled with ``derive_seed(seed, 0)``,
EV members with ``derive_seed(seed, 1)``, BA with ``derive_seed(seed, 2)``, the
empirical ``h0`` with ``derive_seed(seed, 3)`` and ground truth with
``derive_seed(seed, 4)``. Every grid cell uses the same top-level seed.
"""
import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import krr
from ._parallel import pmap
from ._random import derive_seed
from .datagen import load_csv, sample, test_point
from .estimators import batching, data_variance_if, ensemble_predictions, ensemble_variance
from .exceptions import ConfigError, EpivarError, RunError, UnsupportedSourceError
from .network import NetTrainer
from .ntk import KernelConfig
from .oracle import ground_truth

__all__ = [
    "ResultRow",
    "RESULT_COLUMNS",
    "TABLE_COLUMNS",
    "load_dataset",
    "make_trainer",
    "run_estimate",
    "run_ground_truth",
    "run_table",
    "format_table1",
    "write_rows",
    "read_rows",
]

RESULT_COLUMNS = ("method", "quantity", "value", "ci_lower", "ci_upper", "ci_level",
                  "dim", "n", "seed", "config_hash")
TABLE_COLUMNS = ("dim", "n", "quantity", "method", "gt", "estimate", "diff",
                 "ci_lower", "ci_upper", "ci_level", "seed", "config_hash", "status", "error")
QUANTITY = {"IF": "sigma2_over_n", "EV": "tau2", "BA": "ensemble_total"}
# ground-truth quantity each estimator is judged against
GT_MATCH = {"EV": "tau2", "IF": "sigma2_over_n", "BA": "var_ensemble"}
METHOD_ORDER = ("IF", "EV", "BA")
EV_CURVE_SIZES = (2, 5, 10, 20, 50, 100)


@dataclass
class ResultRow:
    method: str
    quantity: str
    value: float
    ci_lower: float = None
    ci_upper: float = None
    ci_level: float = None
    dim: int = None
    n: int = None
    seed: int = None
    config_hash: str = ""
    wall_seconds: float = None
    config: dict = field(default=None, repr=False)
    extra: dict = field(default_factory=dict, repr=False)

    def csv_record(self):
        return {c: _fmt(getattr(self, c)) for c in RESULT_COLUMNS}

    def json_record(self):
        rec = asdict(self)
        rec.pop("extra")
        return rec


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(value):
    if value == "":
        return None
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def write_rows(path, records, columns):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for rec in records:
            w.writerow({c: _fmt(rec.get(c)) if not isinstance(rec.get(c), str) else rec[c] for c in columns})
    return path


def read_rows(path):
    """Parse a result CSV back into dicts of ints, floats and strings."""
    with Path(path).open(newline="") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def load_dataset(config):
    if config.source == "synthetic":
        return sample(config.spec, config.n, derive_seed(config.seed, 0))
    block = config.data["dataset"]["csv"]
    return load_csv(block["path"], block.get("label_column", -1), block.get("standardize", True))


def make_trainer(config, input_dim):
    return NetTrainer(config.net_config(input_dim), auto_lr=config.auto_lr)


def _guarded(method, config, fn):
    t0 = time.perf_counter()
    try:
        out = fn()
    except RunError:
        raise
    except EpivarError as exc:
        raise RunError(method, config.canonical_json(), exc) from exc
    return out, time.perf_counter() - t0


def _row(config, shape, method, quantity, value, ci=None, ci_level=None, wall=None, **extra):
    lo, hi = ci if ci is not None else (None, None)
    return ResultRow(
        method=method, quantity=quantity, value=float(value),
        ci_lower=None if lo is None else float(lo), ci_upper=None if hi is None else float(hi),
        ci_level=None if ci_level is None else float(ci_level),
        dim=int(shape[0]), n=int(shape[1]), seed=config.seed, config_hash=config.config_hash(),
        wall_seconds=wall, config=config.semantic(), extra=extra,
    )


def _ev_curve(predictions):
    sizes = [m for m in EV_CURVE_SIZES if m <= len(predictions)]
    return [{"m": m, "ev": float(np.var(predictions[:m], ddof=1))} for m in sizes]


def run_estimate(config, trainer=None, write=True):
    """Run the selected estimators on the configured dataset and test point.

    ``trainer`` overrides the network trainer (a ``(data, seed, x0) -> float``
    callable); by default a :class:`NetTrainer` built from the ``net`` block.
    Returns rows in IF, EV, BA order.
    """
    data = load_dataset(config)
    x0 = test_point(data if config.source == "csv" else config.spec)
    trainer = trainer or make_trainer(config, data.dim)
    est = config.estimators
    shape = (data.dim, data.n)
    rows = []
    for method in METHOD_ORDER:
        if method not in est:
            continue
        block = est[method]
        if method == "IF":
            def fn():
                net_cfg = config.net_config(data.dim)
                kcfg = KernelConfig(depth=net_cfg.depth, jitter=float(config.data["kernel"]["jitter"]))
                model = krr.fit(data, net_cfg.reg_lambda, kcfg, h0_mode=config.data["kernel"]["h0_mode"],
                                net_config=net_cfg, m0=config.data["kernel"]["m0"],
                                seed=derive_seed(config.seed, 3))
                return data_variance_if(model, x0)
            res, wall = _guarded(method, config, fn)
            rows.append(_row(config, shape, method, QUANTITY[method], res.value, wall=wall))
        elif method == "EV":
            def fn():
                preds = ensemble_predictions(trainer, data, x0, block["m"], derive_seed(config.seed, 1))
                return preds, ensemble_variance(preds, block["ci_level"])
            (preds, res), wall = _guarded(method, config, fn)
            rows.append(_row(config, shape, method, QUANTITY[method], res.value, res.ci, res.ci_level, wall,
                             predictions=preds.tolist(), curve=_ev_curve(preds)))
        else:
            res, wall = _guarded(method, config, lambda: batching(
                data, block["k"], trainer, x0, block["ci_level"], seed=derive_seed(config.seed, 2)))
            rows.append(_row(config, shape, method, QUANTITY[method], res.value, res.ci, res.ci_level, wall,
                             predictions=res.meta["predictions"]))
    if write:
        meta = {"x0": x0.tolist()}
        if isinstance(trainer, NetTrainer):
            meta["learning_rate"] = trainer.config_for(data.inputs).learning_rate
        _emit(config, "estimate", rows, meta)
        ev = [r for r in rows if r.method == "EV"]
        if ev:
            write_rows(config.out_dir / "ev_curve.csv", ev[0].extra["curve"], ("m", "ev"))
    return rows


def run_ground_truth(config, trainer=None, sampler=None, write=True, workers=None):
    """Retraining ground truth at the configured synthetic cell.

    Emits GT rows for ``tau2``, ``sigma2_over_n``, ``var_single`` and
    ``var_ensemble``.
    """
    if config.source != "synthetic":
        raise UnsupportedSourceError("ground truth needs a synthetic data source; real data has no ground truth")
    spec = config.spec
    trainer = trainer or make_trainer(config, spec.dim)
    orc = config.oracle
    workers = config.workers if workers is None else workers
    gt, wall = _guarded("GT", config, lambda: ground_truth(
        spec, trainer, config.n, test_point(spec), orc["j"], orc["m_prime"], derive_seed(config.seed, 4),
        sampler=sampler, single_model=orc["single_model"], workers=workers))

    rows = [
        _row(config, (spec.dim, config.n), "GT", q, getattr(gt, q), wall=wall, j=gt.j, m_prime=gt.m_prime,
             warnings=list(gt.warnings))
        for q in ("tau2", "sigma2_over_n", "var_single", "var_ensemble")
    ]
    rows[0].extra["predictions"] = gt.predictions.tolist()
    if write:
        _emit(config, "ground_truth", rows)
    return rows


def _emit(config, name, rows, meta=None):
    out = config.out_dir
    write_rows(out / f"{name}.csv", [r.csv_record() for r in rows], RESULT_COLUMNS)
    _write_json(out / f"{name}.json", {
        "config": config.semantic(),
        "config_hash": config.config_hash(),
        "rows": [r.json_record() for r in rows],
        **(meta or {}),
    })


def _run_cell(cell, config, trainer):
    dim, n = cell
    cfg = config.for_cell(dim, n)
    try:
        est = run_estimate(cfg, trainer=trainer, write=False)
        gt = run_ground_truth(cfg, trainer=trainer, write=False, workers=1)
    except EpivarError as exc:
        return {"dim": dim, "n": n, "status": "error", "error": str(exc),
                "cause": type(getattr(exc, "cause", exc)).__name__, "config_hash": cfg.config_hash()}
    return {"dim": dim, "n": n, "status": "ok", "estimates": est, "gt": gt, "config_hash": cfg.config_hash()}


def _slope(ns, values):
    pts = [(math.log(n), math.log(v)) for n, v in zip(ns, values) if v is not None and v > 0]
    if len(pts) < 2:
        return None
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])


def run_table(config, trainer=None, write=True, workers=None):
    """Sweep the ``grid`` of (dim, n) cells: estimates, ground truth and their differences.

    Returns ``(table_rows, summary)``. A failing cell is recorded with
    ``status="error"`` and does not stop the sweep; ``summary["failed"]``
    counts such cells.
    """
    if config.source != "synthetic":
        raise UnsupportedSourceError("table sweeps need a synthetic data source")
    cells = config.grid_cells()
    if "BA" in config.estimators and config.estimators["BA"]["k"] != config.oracle["m_prime"]:
        raise ConfigError("BA estimates an ensemble of k members; set estimators.BA.k equal to oracle.m_prime")
    workers = config.workers if workers is None else workers
    results = pmap(partial(_run_cell, config=config, trainer=trainer), cells, workers)

    table = []
    for res in results:
        base = {"dim": res["dim"], "n": res["n"], "seed": config.seed, "config_hash": res["config_hash"]}
        if res["status"] != "ok":
            table.append(dict(base, quantity="", method="", status="error", error=res["error"]))
            continue
        gt = {r.quantity: r.value for r in res["gt"]}
        for r in res["estimates"]:
            ref = gt[GT_MATCH[r.method]]
            table.append(dict(base, quantity=r.quantity, method=r.method, gt=ref, estimate=r.value,
                              diff=r.value - ref, ci_lower=r.ci_lower, ci_upper=r.ci_upper,
                              ci_level=r.ci_level, status="ok", error=""))

    summary = _summarize(config, results)
    if write:
        out = config.out_dir
        write_rows(out / "table.csv", table, TABLE_COLUMNS)
        raw = [r.csv_record() for res in results if res["status"] == "ok" for r in res["estimates"] + res["gt"]]
        write_rows(out / "table_rows.csv", raw, RESULT_COLUMNS)
        _write_json(out / "table_summary.json", summary)
        (out / "table1.txt").write_text(format_table1(table))
    return table, summary


def _summarize(config, results):
    ok = [r for r in results if r["status"] == "ok"]
    by_dim = {}
    for r in ok:
        by_dim.setdefault(r["dim"], []).append(r)
    scaling = {}
    for dim, cells in sorted(by_dim.items()):
        cells.sort(key=lambda r: r["n"])
        ns = [c["n"] for c in cells]
        est = {m: [next((x.value for x in c["estimates"] if x.method == m), None) for c in cells] for m in QUANTITY}
        gt = {q: [next(x.value for x in c["gt"] if x.quantity == q) for c in cells]
              for q in ("tau2", "sigma2_over_n")}
        tau = [v for v in gt["tau2"] if v > 0]
        scaling[str(dim)] = {
            "n": ns,
            "if_sigma2_over_n": est["IF"],
            "gt_sigma2_over_n": gt["sigma2_over_n"],
            "gt_tau2": gt["tau2"],
            "if_log_log_slope": _slope(ns, est["IF"]),
            "gt_sigma2_log_log_slope": _slope(ns, gt["sigma2_over_n"]),
            "gt_tau2_max_over_min": (max(tau) / min(tau)) if len(tau) == len(ns) and tau else None,
        }
    return {
        "config": config.semantic(),
        "config_hash": config.config_hash(),
        "cells": [{"dim": r["dim"], "n": r["n"], "status": r["status"], "error": r.get("error", "")}
                  for r in results],
        "failed": sum(r["status"] != "ok" for r in results),
        "scaling": scaling,
    }


def format_table1(table):
    """Wide view: one line per (dim, n) with GT / estimate / Diff for each quantity."""
    groups = (("tau2", "EV"), ("sigma2_over_n", "IF"), ("ensemble_total", "BA"))
    header = ["d", "n"] + [f"{q} {c}" for q, m in groups for c in ("GT", m, "Diff")]
    lines = []
    cells = {}
    for row in table:
        cells.setdefault((row["dim"], row["n"]), {})[row.get("method") or ""] = row
    for (dim, n), methods in cells.items():
        if "" in methods:
            lines.append([str(dim), str(n)] + ["error"] * (len(header) - 2))
            continue
        line = [str(dim), str(n)]
        for _, m in groups:
            r = methods.get(m)
            line += ["-"] * 3 if r is None else [f"{r['gt']:.3e}", f"{r['estimate']:.3e}", f"{r['diff']:+.3e}"]
        lines.append(line)
    widths = [max(len(h), *(len(l[i]) for l in lines)) if lines else len(h) for i, h in enumerate(header)]
    fmt = "  ".join(f"{{:>{w}}}" for w in widths)
    return "\n".join([fmt.format(*header)] + [fmt.format(*l) for l in lines]) + "\n"
