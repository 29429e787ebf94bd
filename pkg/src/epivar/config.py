"""Declarative run configuration.

A config file is YAML (JSON is accepted too, being a subset)::

    seed: 0
    dataset:
      synthetic: {family: sin-sum, dim: 2, n: 200}
      # or: csv: {path: data.csv, label_column: -1, standardize: true}
    net: {hidden_widths: [1024], reg_lambda: 1.0e-3, learning_rate: auto,
          max_epochs: 5000, loss_tol: 1.0e-8}
    kernel: {jitter: 0.0, h0_mode: analytic-zero, m0: 100}
    estimators:
      IF: {}
      EV: {m: 50, ci_level: 0.95}
      BA: {k: 5, ci_level: 0.95}
    oracle: {j: 100, m_prime: 5, single_model: member-average}
    grid: {dim: [2], n: [200, 500, 1000]}
    output: {out_dir: results, format: csv}
    workers: 1          # default: $EPIVAR_WORKERS, else 1

Only ``dataset`` is required; every other block falls back to the defaults
above, and an absent ``estimators`` block selects all three methods.
"""
import copy
import hashlib
import json
from pathlib import Path

import yaml

from ._parallel import default_workers
from .datagen import FAMILIES, SyntheticSpec
from .exceptions import ConfigError, InputError
from .krr import H0_MODES
from .network import NetConfig
from .oracle import SINGLE_MODEL_MODES

__all__ = ["DEFAULTS", "RunConfig", "load_config", "apply_override"]

DEFAULTS = {
    "seed": 0,
    "net": {
        "hidden_widths": [1024],
        "reg_lambda": 1e-3,
        "learning_rate": "auto",
        "max_epochs": 5000,
        "loss_tol": 1e-8,
    },
    "kernel": {"jitter": 0.0, "h0_mode": "analytic-zero", "m0": 100},
    "estimators": {"IF": {}, "EV": {"m": 50, "ci_level": 0.95}, "BA": {"k": 5, "ci_level": 0.95}},
    "oracle": {"j": 100, "m_prime": 5, "single_model": "member-average"},
    "grid": None,
    "output": {"out_dir": "results", "format": "csv"},
    "workers": None,
}

# keys that change where or how fast results are produced but never their values
NON_SEMANTIC = ("output", "workers")


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


class RunConfig:
    """Validated, fully-defaulted configuration.

    ``data`` holds the merged dictionary; accessors build the typed objects
    each module expects.
    """

    def __init__(self, data):
        if not isinstance(data, dict):
            raise ConfigError(f"config must be a mapping, got {type(data).__name__}")
        user_estimators = data.get("estimators")
        merged = _merge(DEFAULTS, {k: v for k, v in data.items() if k != "estimators"})
        if user_estimators is not None:
            _require(isinstance(user_estimators, dict) and user_estimators,
                     "estimators must be a non-empty mapping of IF/EV/BA blocks")
            merged["estimators"] = {
                name: _merge(DEFAULTS["estimators"].get(name, {}), block or {})
                for name, block in user_estimators.items()
            }
        self.data = merged
        self._validate()

    # -- construction -------------------------------------------------
    @classmethod
    def from_file(cls, path, overrides=()):
        return cls(load_config(path, overrides))

    def replace(self, **changes):
        """New config with top-level keys replaced (nested dicts are merged)."""
        return RunConfig(_merge(self.data, changes))

    # -- validation ---------------------------------------------------
    def _validate(self):
        d = self.data
        ds = d.get("dataset")
        _require(isinstance(ds, dict), "config needs a dataset block")
        sources = [k for k in ("synthetic", "csv") if ds.get(k) is not None]
        _require(len(sources) == 1, f"dataset needs exactly one of synthetic/csv, got {sources or 'none'}")
        _require(set(ds) <= {"synthetic", "csv"}, f"unknown dataset keys {sorted(set(ds) - {'synthetic', 'csv'})}")
        if self.source == "synthetic":
            syn = ds["synthetic"]
            _require(syn.get("family", "sin-sum") in FAMILIES,
                     f"unknown family {syn.get('family')!r}; expected one of {FAMILIES}")
            for key in ("dim", "n"):
                _require(isinstance(syn.get(key), int) and syn[key] >= 1,
                         f"dataset.synthetic.{key} must be a positive integer")
        else:
            _require(isinstance(ds["csv"].get("path"), str), "dataset.csv.path must be a string")
        _require(isinstance(d["seed"], int) and not isinstance(d["seed"], bool) and d["seed"] >= 0,
                 f"seed must be a non-negative integer, got {d['seed']!r}")
        for name in d["estimators"]:
            _require(name in ("IF", "EV", "BA"), f"unknown estimator {name!r}; expected IF, EV or BA")
        est = d["estimators"]
        if "EV" in est:
            _require(isinstance(est["EV"].get("m"), int) and est["EV"]["m"] >= 2, "estimators.EV.m must be an integer >= 2")
        if "BA" in est:
            _require(isinstance(est["BA"].get("k"), int) and est["BA"]["k"] >= 2, "estimators.BA.k must be an integer >= 2")
        for name in ("EV", "BA"):
            if name in est:
                lvl = est[name].get("ci_level")
                _require(isinstance(lvl, (int, float)) and 0 < lvl < 1, f"estimators.{name}.ci_level must lie in (0, 1)")
        lr = d["net"]["learning_rate"]
        _require(lr == "auto" or (isinstance(lr, (int, float)) and lr > 0),
                 f"net.learning_rate must be 'auto' or a positive number, got {lr!r}")
        _require(d["kernel"]["h0_mode"] in H0_MODES, f"kernel.h0_mode must be one of {H0_MODES}")
        orc = d["oracle"]
        _require(isinstance(orc.get("j"), int) and orc["j"] >= 2, "oracle.j must be an integer >= 2")
        _require(isinstance(orc.get("m_prime"), int) and orc["m_prime"] >= 2, "oracle.m_prime must be an integer >= 2")
        _require(orc.get("single_model") in SINGLE_MODEL_MODES, f"oracle.single_model must be one of {SINGLE_MODEL_MODES}")
        _require(d["output"].get("format") in ("csv", "json"), "output.format must be csv or json")
        w = d["workers"]
        _require(w is None or (isinstance(w, int) and w >= 1), "workers must be a positive integer")
        grid = d.get("grid")
        if grid is not None:
            _require(isinstance(grid, dict), "grid must map dim/n to lists")
            for key in ("dim", "n"):
                vals = grid.get(key)
                _require(isinstance(vals, list) and all(isinstance(v, int) and v >= 1 for v in vals),
                         f"grid.{key} must be a list of positive integers")
        try:
            self.net_config(self.dim if self.source == "synthetic" else 1)
        except InputError as exc:
            raise ConfigError(f"invalid net block: {exc}") from None

    # -- accessors ----------------------------------------------------
    @property
    def source(self):
        return "synthetic" if self.data["dataset"].get("synthetic") is not None else "csv"

    @property
    def seed(self):
        return self.data["seed"]

    @property
    def spec(self):
        syn = self.data["dataset"]["synthetic"]
        return SyntheticSpec(syn.get("family", "sin-sum"), syn["dim"])

    @property
    def dim(self):
        return self.data["dataset"]["synthetic"]["dim"]

    @property
    def n(self):
        return self.data["dataset"]["synthetic"]["n"]

    @property
    def estimators(self):
        return self.data["estimators"]

    @property
    def oracle(self):
        return self.data["oracle"]

    @property
    def workers(self):
        """Configured worker count, else the ``EPIVAR_WORKERS`` environment default."""
        return self.data["workers"] or default_workers()

    @property
    def out_dir(self):
        return Path(self.data["output"]["out_dir"])

    @property
    def auto_lr(self):
        return self.data["net"]["learning_rate"] == "auto"

    def net_config(self, input_dim):
        net = dict(self.data["net"])
        if net["learning_rate"] == "auto":
            net["learning_rate"] = 1.0  # placeholder, replaced per training set
        net["hidden_widths"] = tuple(net["hidden_widths"])
        return NetConfig(input_dim=input_dim, **net)

    def grid_cells(self):
        grid = self.data.get("grid")
        if grid is None:
            return [(self.dim, self.n)]
        cells = [(d, n) for d in grid["dim"] for n in grid["n"]]
        _require(cells, "grid is empty")
        return cells

    def for_cell(self, dim, n):
        syn = dict(self.data["dataset"]["synthetic"], dim=dim, n=n)
        data = copy.deepcopy(self.data)
        data["dataset"] = {"synthetic": syn}
        data["grid"] = None
        return RunConfig(data)

    # -- identity -----------------------------------------------------
    def semantic(self):
        return {k: v for k, v in self.data.items() if k not in NON_SEMANTIC}

    def canonical_json(self):
        return json.dumps(self.semantic(), sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        """SHA-256 of the canonical JSON of all result-affecting fields."""
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def __repr__(self):
        return f"RunConfig({self.canonical_json()})"


def apply_override(data, assignment):
    """Apply ``a.b.c=value`` (value parsed as YAML) to a nested dict in place."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from None
    parts = key.strip().split(".")
    node = data
    for part in parts[:-1]:
        nxt = node.get(part)
        if not isinstance(nxt, dict):
            nxt = node[part] = {}
        node = nxt
    node[parts[-1]] = value
    return data


def load_config(path, overrides=()):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data is None:
        raise ConfigError(f"{path}: empty config")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    for item in overrides:
        apply_override(data, item)
    return data
