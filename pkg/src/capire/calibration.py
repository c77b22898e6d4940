"""Parameter search against baseline reference targets.

Each evaluation simulates a reduced baseline cohort set in memory, summarises
it, and scores the summary as a weighted sum of squared normalised
deviations.  The optimiser is a seeded Latin-hypercube sweep followed by
coordinate descent, so results are deterministic given the seed and never
leave the declared bounds.

Target quantities whose name ends in `_min` are one-sided: only shortfalls
below the target are penalised.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from capire import policy
from capire.config import apply_param_overrides, _GROUP_PARAMS
from capire.engine import EngineParams
from capire.kernels import (COL_BACKBONE, COL_BELONGING, COL_BLOCKED,
                            COL_DISTANCE, COL_SEM, COL_STRESS, COL_TERMINAL,
                            COL_TOTAL, TERM_DROPOUT, TERM_GRADUATION,
                            simulate_cohort)
from capire.population import apportion, archetype_arrays


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class Target:
    quantity: str
    target: float
    tolerance: float
    weight: float

    def __post_init__(self):
        if self.tolerance <= 0:
            raise CalibrationError(f"{self.quantity}: tolerance must be > 0")
        if self.weight < 0:
            raise CalibrationError(f"{self.quantity}: weight must be >= 0")


@dataclass(frozen=True)
class Bound:
    parameter: str
    low: float
    high: float

    def __post_init__(self):
        if not self.low <= self.high:
            raise CalibrationError(f"{self.parameter}: low > high")


@dataclass(frozen=True)
class CalibrationResult:
    params: dict
    score: float
    trace: list   # (eval_index, score, params dict), best score non-increasing


def load_targets(path) -> list:
    targets = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if [f.strip() for f in reader.fieldnames or []] != \
                ["quantity", "target", "tolerance", "weight"]:
            raise CalibrationError(f"bad targets header in {path}")
        for row in reader:
            targets.append(Target(row["quantity"].strip(), float(row["target"]),
                                  float(row["tolerance"]), float(row["weight"])))
    if not targets:
        raise CalibrationError(f"no targets in {path}")
    return targets


def load_bounds(path) -> list:
    bounds = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if [f.strip() for f in reader.fieldnames or []] != \
                ["parameter", "low", "high"]:
            raise CalibrationError(f"bad bounds header in {path}")
        for row in reader:
            bounds.append(Bound(row["parameter"].strip(), float(row["low"]),
                                float(row["high"])))
    if not bounds:
        raise CalibrationError(f"no bounds in {path}")
    return bounds


def score(targets, summary: dict) -> float:
    total = 0.0
    for t in targets:
        if t.quantity not in summary:
            raise CalibrationError(f"summary missing quantity: {t.quantity}")
        observed = float(summary[t.quantity])
        deviation = observed - t.target
        if t.quantity.endswith("_min") and deviation >= 0:
            continue
        total += t.weight * (deviation / t.tolerance) ** 2
    return total


# ---------------------------------------------------------------------------
# reduced baseline evaluation


def _lower_median(values: np.ndarray) -> float:
    if values.size == 0:
        return float("nan")
    return float(np.sort(values)[(values.size - 1) // 2])


def baseline_summary(settings, inputs, engine_params=None, archetypes=None,
                     n_students=None, n_replications=None,
                     snapshot_semester=8) -> dict:
    """Simulate the baseline scenario and extract every targetable quantity."""
    ep_obj = (engine_params or inputs.engine_params).replace(horizon=settings.horizon)
    table = list(archetypes or inputs.archetypes)
    n_students = n_students or settings.calibration_n_students
    n_reps = n_replications or settings.calibration_replications

    graph = inputs.base_graph
    scen = policy.parse_scenario_id("A0B0C0")
    eff = policy.effects(scen, inputs.policy_params, graph, inputs.a1_graph)
    g = graph.as_arrays()
    ep = ep_obj.as_arrays(graph)
    ef = policy.effect_arrays(eff, graph)
    arch = archetype_arrays(table)
    archetype_of = apportion(table, n_students)

    term_rows = []
    snap_rows = []
    for rep in range(n_reps):
        recs = simulate_cohort(settings.master_seed, scen.index, rep,
                               archetype_of, arch, g, ep, ef)
        sem = recs[:, COL_SEM]
        term = recs[:, COL_TERMINAL]
        # terminal row = each agent's last row; agents are stored in order and
        # a new agent always restarts at semester 1
        is_last = np.ones(len(recs), dtype=bool)
        is_last[:-1] = sem[1:] <= sem[:-1]
        term_rows.append(recs[is_last])
        snap_rows.append(recs[sem == snapshot_semester])

    last = np.concatenate(term_rows)
    snap = np.concatenate(snap_rows) if snap_rows else np.empty((0, last.shape[1]))
    n = len(last)
    term = last[:, COL_TERMINAL]
    graduated = term == TERM_GRADUATION
    dropped = term == TERM_DROPOUT
    n_drop = int(dropped.sum())
    courses = last[:, COL_TOTAL]

    summary = {
        "baseline_noncompletion": 1.0 - graduated.sum() / n,
        "baseline_mean_courses": float(courses.mean()),
        "baseline_median_courses": _lower_median(courses),
        "mean_stress_final": float(last[:, COL_STRESS].mean()),
        "mean_belonging_final": float(last[:, COL_BELONGING].mean()),
        "n_agents": n,
    }
    if n_drop > 0:
        early = dropped & (last[:, COL_SEM] <= 2)
        zero = dropped & (courses == 0)
        summary["first_year_dropout_share_min"] = early.sum() / n_drop
        summary["zero_course_leaver_share"] = zero.sum() / n_drop
    else:
        summary["first_year_dropout_share_min"] = 0.0
        summary["zero_course_leaver_share"] = 0.0
    if len(snap):
        summary["backbone_sem8"] = float(snap[:, COL_BACKBONE].mean())
        summary["blocked_median_sem8"] = _lower_median(snap[:, COL_BLOCKED])
        summary["distance_sem8"] = float(snap[:, COL_DISTANCE].mean())
        summary["n_survivors_sem8"] = len(snap)
    else:
        # nobody alive mid-programme: worst-case placeholders keep the score finite
        summary["backbone_sem8"] = 0.0
        summary["blocked_median_sem8"] = float(g.total_credits)
        summary["distance_sem8"] = 1.0
        summary["n_survivors_sem8"] = 0
    return summary


def _current_value(name, engine_params: EngineParams, archetypes):
    if name in _GROUP_PARAMS:
        group, attr = _GROUP_PARAMS[name]
        for a in archetypes:
            if a.group == group:
                return float(getattr(a, attr))
        raise CalibrationError(f"no archetype in group {group}")
    if name in EngineParams.__dataclass_fields__ and name not in (
            "base_pass_prob", "friction"):
        return float(getattr(engine_params, name))
    raise CalibrationError(f"unknown calibration parameter: {name}")


def calibrate(settings, inputs, bounds=None, targets=None, budget=None,
              seed=None) -> CalibrationResult:
    """Latin-hypercube seeding plus coordinate descent within the bounds."""
    bounds = bounds if bounds is not None else load_bounds(settings.paths["bounds"])
    targets = targets if targets is not None else load_targets(settings.paths["targets"])
    budget = settings.calibration_budget if budget is None else budget
    if budget < 1:
        raise CalibrationError("budget must be >= 1")
    seed = settings.master_seed if seed is None else seed

    names = [b.parameter for b in bounds]
    lows = np.array([b.low for b in bounds])
    highs = np.array([b.high for b in bounds])
    d = len(bounds)

    trace = []
    cache = {}

    def evaluate(vec):
        key = tuple(np.round(vec, 12))
        if key in cache:
            return cache[key]
        if len(trace) >= budget:
            return None
        point = dict(zip(names, vec))
        ep, table = apply_param_overrides(inputs.engine_params,
                                          inputs.archetypes, point)
        try:
            summary = baseline_summary(settings, inputs, engine_params=ep,
                                       archetypes=table)
        except Exception as exc:
            raise CalibrationError(f"evaluation failed at {point}: {exc}") from exc
        value = score(targets, summary)
        cache[key] = value
        trace.append((len(trace), value, point))
        return value

    # the shipped defaults go first so the result is never worse than them
    start = np.clip(np.array([_current_value(n, inputs.engine_params,
                                             inputs.archetypes) for n in names]),
                    lows, highs)
    best_vec = start.copy()
    best = evaluate(start)

    rng = np.random.default_rng(seed)
    n_lhs = min(max(2 * d, 8), max(budget - 1, 0))
    if n_lhs > 0:
        grid = (np.stack([rng.permutation(n_lhs) for _ in range(d)], axis=1)
                + rng.random((n_lhs, d))) / n_lhs
        for row in grid:
            vec = lows + row * (highs - lows)
            value = evaluate(vec)
            if value is None:
                break
            if value < best:
                best, best_vec = value, vec.copy()

    step = 0.25 * (highs - lows)
    while len(trace) < budget and step.max() > 1e-9:
        improved = False
        for j in range(d):
            for sign in (1.0, -1.0):
                cand = best_vec.copy()
                cand[j] = float(np.clip(cand[j] + sign * step[j], lows[j], highs[j]))
                if cand[j] == best_vec[j]:
                    continue
                value = evaluate(cand)
                if value is None:
                    break
                if value < best:
                    best, best_vec = value, cand
                    improved = True
            if len(trace) >= budget:
                break
        if not improved:
            step *= 0.5

    return CalibrationResult(params=dict(zip(names, best_vec.tolist())),
                             score=float(best), trace=trace)


def write_trace(result: CalibrationResult, path):
    names = sorted(result.params)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["eval", "score"] + names)
        for idx, value, point in result.trace:
            writer.writerow([idx, repr(value)] + [repr(point[n]) for n in names])


def write_params(result: CalibrationResult, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["parameter", "value"])
        for name in sorted(result.params):
            writer.writerow([name, repr(result.params[name])])


def write_outputs(result: CalibrationResult, out_dir) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    trace_path = os.path.join(out_dir, "calibration_trace.csv")
    params_path = os.path.join(out_dir, "calibrated_params.csv")
    write_trace(result, trace_path)
    write_params(result, params_path)
    return {"calibration_trace.csv": trace_path,
            "calibrated_params.csv": params_path}
