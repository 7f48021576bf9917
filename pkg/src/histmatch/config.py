"""Experiment configuration: JSON schema, defaults and validation.

Every validation failure raises :class:`ConfigError` whose message starts
with the offending field path (``criteria[1]``, ``annealing.ess_fraction``).
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np

from .criteria import CRITERIA
from .emulator import KERNEL_FAMILIES, HyperPrior
from .errors import ConfigError
from .implausibility import TargetDatum, UncertaintyBudget
from .nroy import AnnealingConfig
from .testbed import TORUS_BOX

PROBLEMS = ("franke", "random", "tabulated", "torus")
SCHEMA_VERSION = 1

DEFAULTS: Dict[str, Any] = {
    "name": "experiment",
    "box": None,
    "initial_design_size": None,
    "batch_size": None,
    "n_waves": 3,
    "stop_on_error": True,
    "criteria": ["entropy"],
    "replications": 1,
    "seed": 0,
    "annealing": {
        "n_per_level": 1000,
        "max_levels": 20,
        "ess_fraction": 0.5,
        "move_steps": 5,
        "beta_max": 64.0,
    },
    "emulator": {
        "ensemble_size": 20,
        "family": "squared-exponential",
        "burn_in": 1000,
        "thin": 10,
        "nugget": 1e-8,
        "lengthscale_median": 0.5,
        "lengthscale_logsd": 1.0,
        "signal_variance_logsd": 1.0,
    },
    "selection": {
        "cutoff_alpha": 0.5,
        "include_penultimate": False,
        "score_mode": "moments",
        "eps_mode": "full",
    },
    "second_max": {"method": "mc", "n_draws": 2048},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _require(cond, field, message):
    if not cond:
        raise ConfigError(field, message)


def _int(raw, field, minimum):
    _require(isinstance(raw, int) and not isinstance(raw, bool), field, "must be an integer")
    _require(raw >= minimum, field, f"must be >= {minimum}")
    return raw


def _number(raw, field):
    _require(isinstance(raw, (int, float)) and not isinstance(raw, bool), field, "must be a number")
    return float(raw)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment; ``raw`` keeps the fully defaulted JSON document."""

    raw: Dict[str, Any]
    name: str
    simulator: Dict[str, Any]
    box: np.ndarray
    targets: List[Optional[TargetDatum]]
    output_ids: List[str]
    budgets: List[UncertaintyBudget]
    initial_design_size: int
    batch_size: int
    n_waves: int
    stop_on_error: bool
    criteria: List[str]
    replications: int
    seed: int
    annealing: Dict[str, Any]
    emulator: Dict[str, Any]
    selection: Dict[str, Any]
    second_max: Dict[str, Any]

    @property
    def dim(self) -> int:
        return self.box.shape[1]

    @property
    def n_outputs(self) -> int:
        return len(self.budgets)

    @property
    def sampler_only(self) -> bool:
        return self.simulator["problem"] == "torus"

    def hyperprior(self) -> HyperPrior:
        e = self.emulator
        return HyperPrior(
            family=e["family"],
            lengthscale_median=e["lengthscale_median"],
            lengthscale_logsd=e["lengthscale_logsd"],
            signal_variance_logsd=e["signal_variance_logsd"],
            nugget=e["nugget"],
            burn_in=e["burn_in"],
            thin=e["thin"],
        )

    def annealing_config(self, seed=None) -> AnnealingConfig:
        return AnnealingConfig(seed=seed, **self.annealing)

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.raw).encode("utf-8")).hexdigest()


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _default_box(sim, field):
    problem = sim["problem"]
    if problem == "franke":
        return [[0.0, 0.0], [1.0, 1.0]]
    if problem == "torus":
        return TORUS_BOX.tolist()
    if problem == "random":
        d = sim["dim"]
        return [[0.0] * d, [1.0] * d]
    raise ConfigError(field, "box is required for tabulated simulators")


def parse_config(doc: Dict[str, Any]) -> ExperimentConfig:
    """Validate a config document (already parsed from JSON)."""
    _require(isinstance(doc, dict), "<root>", "config must be a JSON object")
    unknown = set(doc) - set(DEFAULTS) - {"simulator", "targets", "budgets", "version"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    if "version" in doc:
        _require(doc["version"] == SCHEMA_VERSION, "version", f"unsupported (want {SCHEMA_VERSION})")
    raw = _merge(DEFAULTS, doc)
    raw["version"] = SCHEMA_VERSION

    sim = raw.get("simulator")
    _require(isinstance(sim, dict), "simulator", "required object")
    problem = sim.get("problem")
    _require(problem in PROBLEMS, "simulator.problem", f"must be one of {PROBLEMS}, got {problem!r}")
    if problem == "random":
        _int(sim.get("dim"), "simulator.dim", 1)
        if sim.get("seed") is not None:
            _int(sim["seed"], "simulator.seed", 0)
    if problem == "tabulated":
        _require(isinstance(sim.get("path"), str), "simulator.path", "archive path required")
        _require(sim.get("interpolation", "nearest") in ("nearest", "exact"),
                 "simulator.interpolation", "must be 'nearest' or 'exact'")

    if raw["box"] is None:
        raw["box"] = _default_box(sim, "box")
    try:
        box = np.asarray(raw["box"], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("box", "must be [[lower...], [upper...]]") from None
    _require(box.ndim == 2 and box.shape[0] == 2 and np.all(box[1] > box[0]),
             "box", "must be [[lower...], [upper...]] with upper > lower")
    d = box.shape[1]
    if problem == "franke":
        _require(d == 2, "box", "franke is 2-dimensional")
    if problem == "torus":
        _require(d == 3, "box", "torus is 3-dimensional")
    if problem == "random":
        _require(d == sim["dim"], "box", "dimension must match simulator.dim")

    name = raw["name"]
    _require(isinstance(name, str) and name, "name", "must be a nonempty string")

    targets_raw = raw.get("targets")
    _require(isinstance(targets_raw, list) and targets_raw, "targets", "nonempty list required")
    targets, output_ids = [], []
    for i, t in enumerate(targets_raw):
        f = f"targets[{i}]"
        _require(isinstance(t, dict), f, "must be an object")
        oid = t.get("output_id", f"y{i + 1}" if len(targets_raw) > 1 else "y")
        _require(isinstance(oid, str) and oid not in output_ids, f"{f}.output_id",
                 "must be a unique string")
        output_ids.append(oid)
        z = t.get("z")
        if z == "auto":
            _require(problem == "random", f"{f}.z", "'auto' only applies to random functions")
            targets.append(None)
            continue
        z = _number(z, f"{f}.z")
        _require(np.isfinite(z), f"{f}.z", "must be finite")
        targets.append(TargetDatum(z, oid))

    budgets_raw = raw.get("budgets")
    _require(isinstance(budgets_raw, list) and len(budgets_raw) == len(targets_raw),
             "budgets", "one budget per target required")
    budgets = []
    for i, b in enumerate(budgets_raw):
        f = f"budgets[{i}]"
        _require(isinstance(b, dict), f, "must be an object")
        md = _number(b.get("var_md", 0.0), f"{f}.var_md")
        me = _number(b.get("var_me", 0.0), f"{f}.var_me")
        k = _number(b.get("k", 3.0), f"{f}.k")
        _require(md >= 0, f"{f}.var_md", "must be >= 0")
        _require(me >= 0, f"{f}.var_me", "must be >= 0")
        _require(k > 0, f"{f}.k", "must be > 0")
        budgets.append(UncertaintyBudget(md, me, k))

    if raw["initial_design_size"] is None:
        raw["initial_design_size"] = 10 * d
    if raw["batch_size"] is None:
        raw["batch_size"] = 5 * d
    init = _int(raw["initial_design_size"], "initial_design_size", d + 1)
    batch = _int(raw["batch_size"], "batch_size", 1)
    n_waves = _int(raw["n_waves"], "n_waves", 1)
    _require(isinstance(raw["stop_on_error"], bool), "stop_on_error", "must be boolean")
    reps = _int(raw["replications"], "replications", 1)
    seed = _int(raw["seed"], "seed", 0)

    crit = raw["criteria"]
    _require(isinstance(crit, list) and crit, "criteria", "nonempty list required")
    for i, c in enumerate(crit):
        _require(c in CRITERIA, f"criteria[{i}]", f"unknown criterion {c!r}; expected one of {CRITERIA}")
    _require(len(set(crit)) == len(crit), "criteria", "duplicate criterion")

    ann = raw["annealing"]
    for key, minimum in (("n_per_level", 10), ("max_levels", 1), ("move_steps", 0)):
        _int(ann.get(key), f"annealing.{key}", minimum)
    ess = _number(ann.get("ess_fraction"), "annealing.ess_fraction")
    _require(0 < ess < 1, "annealing.ess_fraction", "must lie in (0, 1)")
    _require(_number(ann.get("beta_max"), "annealing.beta_max") > 0, "annealing.beta_max", "must be > 0")
    extra = sorted(set(ann) - set(DEFAULTS["annealing"]) - {"spread_tol", "proposal_scale", "target_acceptance"})
    if extra:
        raise ConfigError(f"annealing.{extra[0]}", "unknown field")

    emu = raw["emulator"]
    _int(emu.get("ensemble_size"), "emulator.ensemble_size", 1)
    _int(emu.get("burn_in"), "emulator.burn_in", 0)
    _int(emu.get("thin"), "emulator.thin", 1)
    _require(emu.get("family") in KERNEL_FAMILIES, "emulator.family", f"must be one of {KERNEL_FAMILIES}")
    _require(_number(emu.get("nugget"), "emulator.nugget") >= 0, "emulator.nugget", "must be >= 0")
    _require(_number(emu.get("lengthscale_median"), "emulator.lengthscale_median") > 0,
             "emulator.lengthscale_median", "must be > 0")
    for key in ("lengthscale_logsd", "signal_variance_logsd"):
        _require(_number(emu.get(key), f"emulator.{key}") > 0, f"emulator.{key}", "must be > 0")

    sel = raw["selection"]
    alpha = _number(sel.get("cutoff_alpha"), "selection.cutoff_alpha")
    _require(0 < alpha <= 1, "selection.cutoff_alpha", "must lie in (0, 1]")
    _require(isinstance(sel.get("include_penultimate"), bool), "selection.include_penultimate", "must be boolean")
    _require(sel.get("score_mode") in ("moments", "components"), "selection.score_mode",
             "must be 'moments' or 'components'")
    _require(sel.get("eps_mode") in ("full", "gp"), "selection.eps_mode", "must be 'full' or 'gp'")

    sm = raw["second_max"]
    _require(sm.get("method") in ("mc", "exact"), "second_max.method", "must be 'mc' or 'exact'")
    _int(sm.get("n_draws"), "second_max.n_draws", 1)

    return ExperimentConfig(
        raw=raw, name=name, simulator=sim, box=box, targets=targets, output_ids=output_ids,
        budgets=budgets,
        initial_design_size=init, batch_size=batch, n_waves=n_waves,
        stop_on_error=raw["stop_on_error"], criteria=list(crit),
        replications=reps, seed=seed, annealing=dict(ann), emulator=dict(emu),
        selection=dict(sel), second_max=dict(sm),
    )


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    return parse_config(doc)
