"""History-matching waves end to end, and the replication harness.

A run is identified by ``(replication, criterion)``.  All randomness is
derived from the master seed through :func:`derive_seed`, keyed by the
replication, a stream tag and the wave index, so a run is a pure function
of the configuration and seed regardless of how runs are scheduled.
Replications share their simulator, initial design and wave-1 fits across
criteria, which keeps criterion comparisons paired.
"""

from __future__ import annotations

import functools
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .config import ExperimentConfig, canonical_json, parse_config
from .criteria import score_mixture
from .design import SelectionConfig, latin_hypercube, select_batch
from .emulator import TrainingSet, sample_hyperposterior
from .errors import FlatObjectiveError, HistMatchError, SimulatorError
from .implausibility import (
    SecondMaxSampler,
    TargetDatum,
    _log_interval_mass,
    log_prob_nonimplausible,
    prob_second_max_exact,
)
from .nroy import NROYLevels, sample_nroy
from .scoring import WaveMetrics, wave_metrics
from .testbed import (
    RandomFunctionSpec,
    franke,
    load_tabulated,
    make_random_function,
    torus_implausibility,
)

log = logging.getLogger(__name__)

METRIC_FIELDS = ("replication", "wave", "criterion", "output", "max_error", "median_crps")

# seed stream tags
PROBLEM, DESIGN, FIT, SAMPLER, SECOND_MAX = range(5)


def derive_seed(master: int, *key: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=tuple(key)).generate_state(1)[0])


def to_unit(X, box):
    box = np.asarray(box, dtype=float)
    return np.clip((np.asarray(X, dtype=float) - box[0]) / (box[1] - box[0]), 0.0, 1.0)


def to_native(U, box):
    box = np.asarray(box, dtype=float)
    return box[0] + np.asarray(U, dtype=float) * (box[1] - box[0])


@dataclass
class Problem:
    """Simulator bound to the native box and its resolved targets."""

    simulator: Callable
    targets: List[TargetDatum]
    box: np.ndarray

    @property
    def n_outputs(self) -> int:
        return len(self.targets)

    def evaluate(self, U) -> np.ndarray:
        """Simulator outputs ``(M, q)`` at unit-cube points ``U``."""
        Y = np.asarray(self.simulator(to_native(U, self.box)), dtype=float)
        Y = Y.reshape(np.atleast_2d(U).shape[0], -1)
        if Y.shape[1] != self.n_outputs:
            raise ValueError(f"simulator returned {Y.shape[1]} outputs, expected {self.n_outputs}")
        if np.any(~np.isfinite(Y)):
            raise ValueError("simulator returned non-finite outputs")
        return Y


@functools.lru_cache(maxsize=8)
def _archive(path, interpolation):
    return load_tabulated(path, interpolation)


def build_problem(config: ExperimentConfig, replication: int, base_dir=None) -> Problem:
    sim = config.simulator
    kind = sim["problem"]
    targets = list(config.targets)
    if kind == "franke":
        return Problem(lambda X: franke(X)[:, None], targets, config.box)
    if kind == "random":
        spec = RandomFunctionSpec(
            dim=sim["dim"],
            # a pinned function seed fixes the function across replications
            seed=(sim["seed"] if sim.get("seed") is not None
                  else derive_seed(config.seed, replication, PROBLEM)),
            n_seeds=sim.get("n_seeds"),
            lengthscale_box=tuple(sim.get("lengthscale_box", (0.0, 2.0))),
            signal_sd=sim.get("signal_sd", 10.0),
            target_quantile=sim.get("target_quantile", 0.95),
        )
        fn, z = make_random_function(spec)
        targets = [
            TargetDatum(z, oid) if t is None else t for t, oid in zip(targets, config.output_ids)
        ]
        return Problem(lambda X: fn(X)[:, None], targets, config.box)
    if kind == "tabulated":
        path = sim["path"]
        if base_dir is not None and not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        arch = _archive(os.path.abspath(path), sim.get("interpolation", "nearest"))
        if arch.n_outputs != len(targets):
            raise HistMatchError(f"archive has {arch.n_outputs} outputs but {len(targets)} targets")
        return Problem(arch, targets, config.box)
    raise HistMatchError(f"problem {kind!r} has no simulator for wave runs")


@dataclass
class WaveState:
    """One run after ``wave_index`` completed waves.

    ``inputs`` live on the unit cube; ``outputs`` has one column per
    output.  ``history`` holds the metric rows of every completed wave.
    The fitted ensembles, annealing levels and ranked candidates of the
    latest wave are kept in memory only.
    """

    replication: int
    criterion: str
    wave_index: int
    inputs: np.ndarray
    outputs: np.ndarray
    status: str = "active"
    message: str = ""
    metrics: List[WaveMetrics] = field(default_factory=list)
    history: List[dict] = field(default_factory=list)
    selected: Optional[np.ndarray] = None
    candidates: Optional[np.ndarray] = None
    relaxed: bool = False
    timing: Dict[str, float] = field(default_factory=dict)
    ensembles: Optional[list] = field(default=None, repr=False)
    levels: Optional[NROYLevels] = field(default=None, repr=False)
    scores: Optional[np.ndarray] = field(default=None, repr=False)

    def training(self, j: int = 0) -> TrainingSet:
        return TrainingSet(self.inputs, self.outputs[:, j])

    def stripped(self) -> "WaveState":
        """Copy without the heavy per-wave intermediates."""
        return WaveState(
            self.replication, self.criterion, self.wave_index, self.inputs, self.outputs,
            self.status, self.message, list(self.metrics), list(self.history), self.selected,
            None, self.relaxed, dict(self.timing),
        )

    def to_dict(self) -> dict:
        return {
            "replication": self.replication,
            "criterion": self.criterion,
            "wave_index": self.wave_index,
            "inputs": self.inputs.tolist(),
            "outputs": self.outputs.tolist(),
            "status": self.status,
            "message": self.message,
            "metrics": [m.__dict__ for m in self.metrics],
            "history": self.history,
            "selected": None if self.selected is None else self.selected.tolist(),
            "relaxed": self.relaxed,
            "timing": self.timing,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WaveState":
        return cls(
            replication=d["replication"],
            criterion=d["criterion"],
            wave_index=d["wave_index"],
            inputs=np.asarray(d["inputs"], dtype=float),
            outputs=np.asarray(d["outputs"], dtype=float),
            status=d["status"],
            message=d.get("message", ""),
            metrics=[WaveMetrics(**m) for m in d["metrics"]],
            history=list(d["history"]),
            selected=None if d["selected"] is None else np.asarray(d["selected"], dtype=float),
            relaxed=d.get("relaxed", False),
            timing=dict(d.get("timing", {})),
        )


def initial_design(box, n: int, seed=None) -> np.ndarray:
    """Latin hypercube of ``n`` points in the native ``box``."""
    box = np.asarray(box, dtype=float)
    return latin_hypercube(n, box.shape[1], seed=seed, box=box)


def initial_state(config: ExperimentConfig, problem: Problem, replication: int,
                  criterion: str) -> WaveState:
    U = latin_hypercube(config.initial_design_size, config.dim,
                        seed=derive_seed(config.seed, replication, DESIGN))
    Y = problem.evaluate(U)
    return WaveState(replication, criterion, 0, U, Y)


def _objective(config, problem, ensembles, replication, wave):
    budgets, targets = config.budgets, problem.targets
    if problem.n_outputs == 1:
        ens, budget, target = ensembles[0], budgets[0], targets[0]
        return lambda U: log_prob_nonimplausible(ens.predict_many(U), budget, target)
    if config.second_max["method"] == "exact":
        def exact(U):
            mixes = [e.predict_many(U) for e in ensembles]
            with np.errstate(divide="ignore"):
                return np.log(prob_second_max_exact(mixes, budgets, targets))
        return exact
    mc = SecondMaxSampler(problem.n_outputs, config.second_max["n_draws"],
                          seed=derive_seed(config.seed, replication, SECOND_MAX, wave))

    def monte_carlo(U):
        mixes = [e.predict_many(U) for e in ensembles]
        with np.errstate(divide="ignore"):
            return np.log(mc(mixes, budgets, targets))
    return monte_carlo


def _scores(config, problem, criterion, ensembles, X):
    sel = config.selection
    per_output = []
    for ens, budget, target in zip(ensembles, config.budgets, problem.targets):
        s = score_mixture(criterion, ens.predict_many(X), budget, target.z,
                          sel["score_mode"], sel["eps_mode"])
        per_output.append(np.atleast_1d(s))
    if len(per_output) == 1:
        return per_output[0]
    # multi-output: sum of per-output scores, each normalized by its best value
    total = np.zeros(X.shape[0])
    for s in per_output:
        top = np.max(s)
        total += s / top if top > 0 else 0.0
    return total


def run_wave(state: WaveState, config: ExperimentConfig, problem: Problem) -> WaveState:
    """Fit, sample NROY, score, rank, select, evaluate and augment."""
    t = state.wave_index + 1
    r = state.replication
    timing = {}
    tic = time.perf_counter()
    prior = config.hyperprior()
    ensembles = [
        sample_hyperposterior(state.training(j), prior, config.emulator["ensemble_size"],
                              seed=derive_seed(config.seed, r, FIT, t, j))
        for j in range(problem.n_outputs)
    ]
    timing["fit"] = time.perf_counter() - tic

    tic = time.perf_counter()
    unit_box = np.vstack([np.zeros(config.dim), np.ones(config.dim)])
    try:
        levels = sample_nroy(_objective(config, problem, ensembles, r, t), unit_box,
                             config.annealing_config(seed=derive_seed(config.seed, r, SAMPLER, t)),
                             log_objective=True)
    except FlatObjectiveError as exc:
        out = state.stripped()
        out.status = "empty_nroy"
        out.message = f"wave {t}: {exc}"
        return out
    timing["sample"] = time.perf_counter() - tic

    nroy = levels.final
    if config.selection["include_penultimate"] and len(levels) > 2:
        q1, q3 = np.percentile(levels.final_values, [25, 75])
        if q3 - q1 < 1e-3:
            nroy = np.vstack([levels.samples[-2], nroy])

    tic = time.perf_counter()
    metrics = wave_metrics(ensembles, nroy, problem.targets)
    scores = _scores(config, problem, state.criterion, ensembles, nroy)
    batch = select_batch(nroy, scores, state.inputs,
                         SelectionConfig(config.batch_size, config.selection["cutoff_alpha"]))
    timing["select"] = time.perf_counter() - tic

    try:
        Y = problem.evaluate(batch.points)
    except Exception as exc:  # noqa: BLE001 - any simulator failure aborts the wave
        raise SimulatorError(f"wave {t}: simulator failed: {exc}", state) from exc

    rows = [
        {
            "replication": r,
            "wave": t,
            "criterion": state.criterion,
            "output": m.output_id,
            "max_error": m.max_predicted_error,
            "median_crps": m.median_crps,
        }
        for m in metrics
    ]
    return WaveState(
        replication=r,
        criterion=state.criterion,
        wave_index=t,
        inputs=np.vstack([state.inputs, batch.points]),
        outputs=np.vstack([state.outputs, Y]),
        metrics=metrics,
        history=state.history + rows,
        selected=batch.points,
        candidates=nroy,
        relaxed=batch.relaxed,
        timing=timing,
        ensembles=ensembles,
        levels=levels,
        scores=scores,
    )


def stopping_rule(state: WaveState, config: ExperimentConfig) -> bool:
    """Stop when every output's max predicted sd is within its elicited sd,
    or the wave cap is reached."""
    if state.wave_index >= config.n_waves:
        return True
    if not state.metrics:
        return False
    for m, b in zip(state.metrics, config.budgets):
        threshold = np.sqrt(b.extra_variance)
        if threshold <= 0 or m.max_predicted_error > threshold:
            return False
    return True


# -- replication harness ---------------------------------------------------

@dataclass
class ReplicationReport:
    rows: List[dict]
    states: Dict[Tuple[int, str], WaveState]
    failures: List[dict]

    def summary(self) -> List[dict]:
        return summarize(self.rows)


def summarize(rows) -> List[dict]:
    """Quartiles of both metrics per (criterion, output, wave)."""
    groups: Dict[tuple, List[dict]] = {}
    for row in rows:
        groups.setdefault((row["criterion"], row["output"], int(row["wave"])), []).append(row)
    out = []
    for key in sorted(groups):
        g = groups[key]
        entry = {"criterion": key[0], "output": key[1], "wave": key[2], "n": len(g)}
        for metric in ("max_error", "median_crps"):
            vals = np.array([float(r[metric]) for r in g])
            q = np.percentile(vals, [0, 25, 50, 75, 100])
            for name, v in zip(("min", "q1", "median", "q3", "max"), q):
                entry[f"{metric}_{name}"] = float(v)
        out.append(entry)
    return out


@functools.lru_cache(maxsize=4)
def _cached_problem(config_json, replication, base_dir):
    import json

    return build_problem(parse_config(json.loads(config_json)), replication, base_dir)


def _wave_task(args):
    config_json, base_dir, state = args
    import json

    config = parse_config(json.loads(config_json))
    problem = _cached_problem(config_json, state.replication, base_dir)
    try:
        return run_wave(state, config, problem).stripped(), None
    except Exception as exc:  # noqa: BLE001 - recorded and reported by the harness
        return state, f"{type(exc).__name__}: {exc}"


def _init_task(args):
    config_json, base_dir, replication, criterion = args
    import json

    config = parse_config(json.loads(config_json))
    try:
        problem = _cached_problem(config_json, replication, base_dir)
        return initial_state(config, problem, replication, criterion), None
    except Exception as exc:  # noqa: BLE001
        return None, f"{type(exc).__name__}: {exc}"


def _map(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def run_replications(config: ExperimentConfig, jobs: int = 1, base_dir=None,
                     resume: Optional[Dict[Tuple[int, str], WaveState]] = None,
                     on_wave: Optional[Callable] = None) -> ReplicationReport:
    """Run every (replication, criterion) pair wave by wave.

    ``resume`` maps run keys to states restored from a checkpoint; their
    earlier metric rows are carried over in ``history`` and are not
    returned again in ``rows``.  ``on_wave(wave, states)`` is called after
    each wave completes for all runs (checkpointing hook).
    """
    config_json = canonical_json(config.raw)
    failures: List[dict] = []
    keys = [(r, c) for r in range(config.replications) for c in config.criteria]

    if resume is None:
        results = _map(_init_task, [(config_json, base_dir, r, c) for r, c in keys], jobs)
        states = {}
        for key, (state, err) in zip(keys, results):
            if err is not None:
                failures.append({"replication": key[0], "criterion": key[1], "wave": 0,
                                 "error": err})
            else:
                states[key] = state
        start = 0
    else:
        states = dict(resume)
        start = min(s.wave_index for s in states.values())

    rows: List[dict] = []
    for wave in range(start + 1, config.n_waves + 1):
        active = [k for k in keys if k in states and states[k].status == "active"
                  and states[k].wave_index == wave - 1]
        if not active:
            break
        results = _map(_wave_task, [(config_json, base_dir, states[k]) for k in active], jobs)
        for key, (state, err) in zip(active, results):
            if err is not None:
                state = state.stripped()
                state.status = "failed"
                state.message = f"wave {wave}: {err}"
                failures.append({"replication": key[0], "criterion": key[1], "wave": wave,
                                 "error": err})
                log.warning("run %s failed at wave %d: %s", key, wave, err)
            elif state.status == "active":
                rows.extend(r for r in state.history if r["wave"] == wave)
                if (config.stop_on_error and stopping_rule(state, config)
                        and state.wave_index < config.n_waves):
                    state.status = "stopped"
            else:
                failures.append({"replication": key[0], "criterion": key[1], "wave": wave,
                                 "error": state.message})
            states[key] = state
        if on_wave is not None:
            on_wave(wave, states)

    rows.sort(key=lambda r: (r["replication"], r["wave"], config.criteria.index(r["criterion"]),
                             config.output_ids.index(r["output"])))
    return ReplicationReport(rows, states, failures)


# -- sampler-only problems ---------------------------------------------------

def torus_objective(k: float = 3.0):
    """``log P{|I(x) + e| <= k}`` with unit-variance noise on the torus implausibility."""
    def objective(X):
        i = torus_implausibility(X)
        return _log_interval_mass(-i - k, -i + k)
    return objective


def count_clusters(points, radius: float) -> int:
    """Number of single-linkage clusters at merge distance ``radius``."""
    X = np.atleast_2d(points)
    if X.shape[0] < 2:
        return X.shape[0]
    return int(np.max(fcluster(linkage(X, "single"), radius, "distance")))


def run_sampler_only(config: ExperimentConfig) -> List[NROYLevels]:
    """Annealed sampling directly on the torus implausibility, one run per replication."""
    if not config.sampler_only:
        raise HistMatchError("sampler-only runs need a torus problem")
    k = config.budgets[0].k
    return [
        sample_nroy(torus_objective(k), config.box,
                    config.annealing_config(seed=derive_seed(config.seed, r, SAMPLER)),
                    log_objective=True)
        for r in range(config.replications)
    ]
