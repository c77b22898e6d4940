"""Factorial experiment driver and record aggregation.

run_experiment simulates every (scenario, replication) cohort, writes one
long-format CSV per cohort plus a manifest, and is byte-deterministic for a
fixed configuration regardless of worker count.  Aggregations are pure,
associative reductions over the record files, so re-aggregation of the same
records reproduces identical outputs.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import math
import os
from collections import Counter, namedtuple
from dataclasses import dataclass

import numpy as np
import pandas as pd

from capire import policy
from capire.kernels import (COL_AGENT, COL_ARCH, COL_BACKBONE, COL_BELONGING,
                            COL_BLOCKED, COL_BOTTLENECK, COL_DISTANCE,
                            COL_ENROLLED, COL_FAILED, COL_MEAN_IN,
                            COL_MEAN_OUT, COL_NEW, COL_PASSED, COL_PREREQ_MET,
                            COL_SEM, COL_STRESS, COL_TERMINAL, COL_TOTAL,
                            simulate_cohort)
from capire.policy import parse_scenario_id
from capire.population import apportion, archetype_arrays

RECORD_HEADER = [
    "scenario_id", "replication", "agent_id", "semester", "archetype", "group",
    "n_enrolled", "n_passed_cw", "n_approved_new", "n_failed",
    "n_approved_total", "stress", "belonging",
    "backbone_completion", "blocked_credits", "distance_to_graduation",
    "bottleneck_approval_ratio", "prerequisites_met_ratio",
    "mean_in_degree_approved", "mean_out_degree_approved", "terminal_event",
]

_TERMINAL_NAMES = np.array(["", "dropout", "graduation"])

INDICATORS = [
    ("backbone_completion", COL_BACKBONE),
    ("blocked_credits", COL_BLOCKED),
    ("distance_to_graduation", COL_DISTANCE),
    ("bottleneck_approval_ratio", COL_BOTTLENECK),
    ("prerequisites_met_ratio", COL_PREREQ_MET),
    ("mean_in_degree_approved", COL_MEAN_IN),
    ("mean_out_degree_approved", COL_MEAN_OUT),
]

INDICATOR_NAMES = [name for name, _ in INDICATORS]


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioStats:
    scenario_id: str
    n_agents: int
    dropout_rate: float            # functional non-completion
    hard_dropout_rate: float       # terminal dropout events only
    mean_courses: float
    std_courses: float
    median_courses: int
    mean_courses_by_rep: float
    mean_stress: float
    mean_belonging: float


SimContext = namedtuple(
    "SimContext",
    ["scenario_id", "scen_index", "g", "ep", "ef", "arch", "archetype_of",
     "arch_ids", "arch_groups"],
)


def build_contexts(settings, inputs) -> list:
    """One picklable simulation context per requested scenario."""
    table = list(inputs.archetypes)
    ep = inputs.engine_params.replace(horizon=settings.horizon)
    archetype_of = apportion(table, settings.n_students)
    arch = archetype_arrays(table)
    arch_ids = np.array([a.archetype_id for a in table])
    arch_groups = np.array([a.group for a in table])
    contexts = []
    for sid in settings.scenarios:
        scen = parse_scenario_id(sid)
        eff = policy.effects(scen, inputs.policy_params, inputs.base_graph,
                             inputs.a1_graph)
        graph = inputs.a1_graph if scen.a == 1 else inputs.base_graph
        contexts.append(SimContext(
            scenario_id=sid, scen_index=scen.index,
            g=graph.as_arrays(), ep=ep.as_arrays(graph),
            ef=policy.effect_arrays(eff, graph),
            arch=arch, archetype_of=archetype_of,
            arch_ids=arch_ids, arch_groups=arch_groups))
    return contexts


def cohort_frame(ctx: SimContext, master_seed: int, rep: int) -> pd.DataFrame:
    """Simulate one cohort and shape the records into the long CSV layout."""
    recs = simulate_cohort(master_seed, ctx.scen_index, rep, ctx.archetype_of,
                           ctx.arch, ctx.g, ctx.ep, ctx.ef)
    ai = recs[:, COL_ARCH].astype(np.int64)
    term = recs[:, COL_TERMINAL].astype(np.int64)
    return pd.DataFrame({
        "scenario_id": np.repeat(ctx.scenario_id, len(recs)),
        "replication": np.full(len(recs), rep, dtype=np.int64),
        "agent_id": recs[:, COL_AGENT].astype(np.int64),
        "semester": recs[:, COL_SEM].astype(np.int64),
        "archetype": ctx.arch_ids[ai],
        "group": ctx.arch_groups[ai],
        "n_enrolled": recs[:, COL_ENROLLED].astype(np.int64),
        "n_passed_cw": recs[:, COL_PASSED].astype(np.int64),
        "n_approved_new": recs[:, COL_NEW].astype(np.int64),
        "n_failed": recs[:, COL_FAILED].astype(np.int64),
        "n_approved_total": recs[:, COL_TOTAL].astype(np.int64),
        "stress": recs[:, COL_STRESS],
        "belonging": recs[:, COL_BELONGING],
        "backbone_completion": recs[:, COL_BACKBONE],
        "blocked_credits": recs[:, COL_BLOCKED].astype(np.int64),
        "distance_to_graduation": recs[:, COL_DISTANCE],
        "bottleneck_approval_ratio": recs[:, COL_BOTTLENECK],
        "prerequisites_met_ratio": recs[:, COL_PREREQ_MET],
        "mean_in_degree_approved": recs[:, COL_MEAN_IN],
        "mean_out_degree_approved": recs[:, COL_MEAN_OUT],
        "terminal_event": _TERMINAL_NAMES[term],
    })


def encode_records(df: pd.DataFrame, compress: bool) -> bytes:
    data = df.to_csv(index=False).encode("utf-8")
    if compress:
        buf = io.BytesIO()
        # fixed header fields keep identical content byte-identical on disk
        with gzip.GzipFile(fileobj=buf, mode="wb", filename="", mtime=0) as gz:
            gz.write(data)
        data = buf.getvalue()
    return data


def record_filename(scenario_id: str, rep: int, compress: bool) -> str:
    suffix = ".csv.gz" if compress else ".csv"
    return f"{scenario_id}_{rep}{suffix}"


# worker-process state, installed once per process by the pool initializer
_WORKER = {}


def _init_worker(contexts, master_seed, compress, records_dir):
    _WORKER["ctx"] = {c.scenario_id: c for c in contexts}
    _WORKER["master_seed"] = master_seed
    _WORKER["compress"] = compress
    _WORKER["records_dir"] = records_dir


def _run_task(task):
    scenario_id, rep = task
    ctx = _WORKER["ctx"][scenario_id]
    df = cohort_frame(ctx, _WORKER["master_seed"], rep)
    data = encode_records(df, _WORKER["compress"])
    name = record_filename(scenario_id, rep, _WORKER["compress"])
    with open(os.path.join(_WORKER["records_dir"], name), "wb") as fh:
        fh.write(data)
    return name, len(df), hashlib.sha256(data).hexdigest()


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_experiment(settings, inputs) -> str:
    """Simulate all configured cohorts; returns the manifest path."""
    contexts = build_contexts(settings, inputs)
    out_dir = settings.out_dir
    records_dir = os.path.join(out_dir, "records")
    os.makedirs(records_dir, exist_ok=True)

    tasks = [(c.scenario_id, rep)
             for c in contexts for rep in range(settings.n_replications)]
    if settings.workers > 1 and len(tasks) > 1:
        import multiprocessing as mp
        mp_ctx = mp.get_context("fork")
        with mp_ctx.Pool(
                settings.workers, initializer=_init_worker,
                initargs=(contexts, settings.master_seed, settings.compress,
                          records_dir)) as pool:
            results = pool.map(_run_task, tasks, chunksize=4)
    else:
        _init_worker(contexts, settings.master_seed, settings.compress, records_dir)
        results = [_run_task(t) for t in tasks]

    manifest_path = os.path.join(out_dir, "manifest.txt")
    lines = []
    for key, val in sorted(settings.as_dict().items()):
        lines.append(f"setting {key}={val}")
    for key in sorted(settings.paths):
        lines.append(f"input {key} sha256={_file_digest(settings.paths[key])}")
    total = 0
    for name, n_rows, digest in sorted(results):
        lines.append(f"record records/{name} rows={n_rows} sha256={digest}")
        total += n_rows
    lines.append(f"total_records={total}")
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest_path


# ---------------------------------------------------------------------------
# aggregation


class _Welford:
    """Streaming sum / sum-of-squares over the seven indicator columns."""

    def __init__(self, k):
        self.n = 0
        self.s = np.zeros(k)
        self.s2 = np.zeros(k)

    def add(self, values: np.ndarray):
        self.n += values.shape[0]
        self.s += values.sum(axis=0)
        self.s2 += (values * values).sum(axis=0)

    def mean(self):
        return self.s / self.n if self.n else np.zeros_like(self.s)

    def sd(self):
        if self.n == 0:
            return np.zeros_like(self.s)
        var = self.s2 / self.n - (self.s / self.n) ** 2
        return np.sqrt(np.maximum(var, 0.0))


def _lower_median(counter: Counter) -> float:
    n = sum(counter.values())
    if n == 0:
        return float("nan")
    k = (n - 1) // 2
    seen = 0
    for value in sorted(counter):
        seen += counter[value]
        if seen >= k + 1:
            return float(value)
    raise AssertionError("histogram exhausted")


class _ScenarioAccum:
    def __init__(self, snapshot_semester):
        self.snapshot_semester = snapshot_semester
        self.n_agents = 0
        self.n_graduated = 0
        self.n_dropped = 0
        self.n_dropped_first_year = 0
        self.n_dropped_zero_courses = 0
        self.courses = Counter()
        self.sum_stress = 0.0
        self.sum_belonging = 0.0
        self.rep_courses = {}
        self.snap = _Welford(len(INDICATORS))
        self.snap_blocked = Counter()
        self.frozen = _Welford(len(INDICATORS))
        self.frozen_blocked = Counter()
        self.figure1 = {}
        self.groups = {}

    def _group(self, name):
        if name not in self.groups:
            self.groups[name] = {"n": 0, "grad": 0, "drop": 0,
                                 "courses": Counter(), "sum": 0.0}
        return self.groups[name]

    def consume(self, df: pd.DataFrame):
        t = self.snapshot_semester
        last = df.drop_duplicates("agent_id", keep="last")
        n = len(last)
        self.n_agents += n
        events = last["terminal_event"].to_numpy()
        grad = events == "graduation"
        drop = events == "dropout"
        self.n_graduated += int(grad.sum())
        self.n_dropped += int(drop.sum())
        sem = last["semester"].to_numpy()
        courses = last["n_approved_total"].to_numpy()
        self.n_dropped_first_year += int((drop & (sem <= 2)).sum())
        self.n_dropped_zero_courses += int((drop & (courses == 0)).sum())
        self.courses.update(Counter(courses.tolist()))
        self.sum_stress += float(last["stress"].sum())
        self.sum_belonging += float(last["belonging"].sum())
        for rep, sub in last.groupby("replication"):
            s, c = self.rep_courses.get(rep, (0.0, 0))
            self.rep_courses[rep] = (s + float(sub["n_approved_total"].sum()),
                                     c + len(sub))

        snap = df[df["semester"] == t]
        if len(snap):
            self.snap.add(snap[INDICATOR_NAMES].to_numpy(dtype=np.float64))
            self.snap_blocked.update(Counter(snap["blocked_credits"].tolist()))
        frozen = df[df["semester"] <= t].drop_duplicates("agent_id", keep="last")
        self.frozen.add(frozen[INDICATOR_NAMES].to_numpy(dtype=np.float64))
        self.frozen_blocked.update(Counter(frozen["blocked_credits"].tolist()))

        for semester, sub in df.groupby("semester"):
            s, c = self.figure1.get(semester, (0.0, 0))
            self.figure1[semester] = (s + float(sub["backbone_completion"].sum()),
                                      c + len(sub))

        for name, sub in last.groupby("group"):
            g = self._group(name)
            ev = sub["terminal_event"].to_numpy()
            g["n"] += len(sub)
            g["grad"] += int((ev == "graduation").sum())
            g["drop"] += int((ev == "dropout").sum())
            g["courses"].update(Counter(sub["n_approved_total"].tolist()))
            g["sum"] += float(sub["n_approved_total"].sum())

    def stats(self, scenario_id) -> ScenarioStats:
        n = self.n_agents
        if n == 0:
            raise ExperimentError(f"no records for scenario {scenario_id}")
        total = sum(v * c for v, c in self.courses.items())
        sq = sum(v * v * c for v, c in self.courses.items())
        mean = total / n
        var = max(sq / n - mean * mean, 0.0)
        rep_means = [s / c for s, c in self.rep_courses.values()]
        return ScenarioStats(
            scenario_id=scenario_id,
            n_agents=n,
            dropout_rate=1.0 - self.n_graduated / n,
            hard_dropout_rate=self.n_dropped / n,
            mean_courses=mean,
            std_courses=math.sqrt(var),
            median_courses=int(_lower_median(self.courses)),
            mean_courses_by_rep=sum(rep_means) / len(rep_means),
            mean_stress=self.sum_stress / n,
            mean_belonging=self.sum_belonging / n,
        )


class Aggregator:
    """Associative reduction over record files; order-independent results."""

    def __init__(self, snapshot_semester=8):
        if not (1 <= snapshot_semester <= 12):
            raise ExperimentError(
                f"snapshot semester {snapshot_semester} outside 1..12")
        self.snapshot_semester = snapshot_semester
        self.scenarios = {}

    def consume(self, df: pd.DataFrame):
        for scenario_id, sub in df.groupby("scenario_id"):
            if scenario_id not in self.scenarios:
                self.scenarios[scenario_id] = _ScenarioAccum(self.snapshot_semester)
            self.scenarios[scenario_id].consume(sub)

    def ordered_ids(self):
        return sorted(self.scenarios, key=lambda sid: parse_scenario_id(sid).index)

    def scenario_stats(self) -> list:
        return [self.scenarios[sid].stats(sid) for sid in self.ordered_ids()]


def iter_record_files(records_dir):
    if not os.path.isdir(records_dir):
        raise ExperimentError(f"no record files under {records_dir}")
    names = sorted(n for n in os.listdir(records_dir)
                   if n.endswith(".csv") or n.endswith(".csv.gz"))
    if not names:
        raise ExperimentError(f"no record files under {records_dir}")
    for name in names:
        yield os.path.join(records_dir, name)


def aggregate_records(records_dir, snapshot_semester=8) -> Aggregator:
    agg = Aggregator(snapshot_semester)
    for path in iter_record_files(records_dir):
        agg.consume(pd.read_csv(path))
    return agg


def aggregate_scenario_stats(records_dir) -> list:
    return aggregate_records(records_dir).scenario_stats()


def structural_at_semester(agg: Aggregator) -> pd.DataFrame:
    rows = []
    for sid in agg.ordered_ids():
        acc = agg.scenarios[sid]
        row = {"scenario_id": sid, "n_survivors": acc.snap.n}
        means, sds = acc.snap.mean(), acc.snap.sd()
        for k, name in enumerate(INDICATOR_NAMES):
            row[f"{name}_mean"] = means[k]
            row[f"{name}_sd"] = sds[k]
        row["blocked_credits_median"] = _lower_median(acc.snap_blocked)
        fmeans = acc.frozen.mean()
        for k, name in enumerate(INDICATOR_NAMES):
            row[f"frozen_{name}_mean"] = fmeans[k]
        row["frozen_blocked_credits_median"] = _lower_median(acc.frozen_blocked)
        rows.append(row)
    return pd.DataFrame(rows)


def factorial_main_effects(stats) -> dict:
    """Mean outcome over the four X=1 cells minus the four X=0 cells."""
    by_id = {}
    for s in stats:
        sid = s["scenario_id"] if isinstance(s, dict) else s.scenario_id
        dropout = s["dropout_rate"] if isinstance(s, dict) else s.dropout_rate
        courses = s["mean_courses"] if isinstance(s, dict) else s.mean_courses
        by_id[sid] = (float(dropout), float(courses))
    missing = [s.scenario_id for s in
               (parse_scenario_id(f"A{a}B{b}C{c}")
                for a in (0, 1) for b in (0, 1) for c in (0, 1))
               if s.scenario_id not in by_id]
    if missing:
        raise ExperimentError(f"incomplete factorial design, missing {missing}")
    effects = {}
    for pos, factor in ((0, "A"), (1, "B"), (2, "C")):
        for out_idx, outcome in ((0, "dropout"), (1, "courses")):
            hi = lo = 0.0
            for sid, vals in by_id.items():
                scen = parse_scenario_id(sid)
                level = (scen.a, scen.b, scen.c)[pos]
                if level == 1:
                    hi += vals[out_idx]
                else:
                    lo += vals[out_idx]
            effects[f"{factor}_{outcome}"] = (hi - lo) / 4.0
    return effects


def archetype_breakdown(agg: Aggregator) -> pd.DataFrame:
    rows = []
    for sid in agg.ordered_ids():
        acc = agg.scenarios[sid]
        for name in sorted(acc.groups):
            g = acc.groups[name]
            rows.append({
                "scenario_id": sid,
                "group": name,
                "n_agents": g["n"],
                "dropout_rate": 1.0 - g["grad"] / g["n"],
                "hard_dropout_rate": g["drop"] / g["n"],
                "mean_courses": g["sum"] / g["n"],
                "median_courses": int(_lower_median(g["courses"])),
            })
    return pd.DataFrame(rows)


def figure1_series(agg: Aggregator) -> pd.DataFrame:
    rows = []
    for sid in agg.ordered_ids():
        acc = agg.scenarios[sid]
        for semester in sorted(acc.figure1):
            s, c = acc.figure1[semester]
            rows.append({"scenario_id": sid, "semester": int(semester),
                         "backbone_mean": s / c})
    return pd.DataFrame(rows)


def _write_csv(df: pd.DataFrame, path):
    df.to_csv(path, index=False, lineterminator="\n")


def write_tables(agg: Aggregator, out_dir) -> dict:
    """Emit every aggregate artifact; returns {name: path}."""
    os.makedirs(out_dir, exist_ok=True)
    stats = agg.scenario_stats()
    summary = pd.DataFrame([{
        "scenario_id": s.scenario_id,
        "n_agents": s.n_agents,
        "dropout_rate": s.dropout_rate,
        "hard_dropout_rate": s.hard_dropout_rate,
        "mean_courses": s.mean_courses,
        "std_courses": s.std_courses,
        "median_courses": s.median_courses,
        "mean_courses_by_rep": s.mean_courses_by_rep,
        "mean_stress": s.mean_stress,
        "mean_belonging": s.mean_belonging,
    } for s in stats])
    table2 = summary[["scenario_id", "dropout_rate", "mean_courses",
                      "std_courses", "median_courses"]]
    out = {}

    def emit(name, df):
        path = os.path.join(out_dir, name)
        _write_csv(df, path)
        out[name] = path

    emit("scenario_summary.csv", summary)
    emit("table2.csv", table2)
    emit("table3_semester8.csv", structural_at_semester(agg))
    emit("archetype_breakdown.csv", archetype_breakdown(agg))
    if len(stats) == 8:
        effects = factorial_main_effects(stats)
        emit("factorial_effects.csv", pd.DataFrame(
            [{"key": k, "value": v} for k, v in sorted(effects.items())]))
    return out


def write_report_data(agg: Aggregator, out_dir) -> dict:
    """Tidy CSVs for the downstream report renderer."""
    os.makedirs(out_dir, exist_ok=True)
    out = {}

    def emit(name, df):
        path = os.path.join(out_dir, name)
        _write_csv(df, path)
        out[name] = path

    emit("figure1.csv", figure1_series(agg))
    stats = agg.scenario_stats()
    if len(stats) == 8:
        effects = factorial_main_effects(stats)
        emit("figure2_effects.csv", pd.DataFrame(
            [{"key": k, "value": v} for k, v in sorted(effects.items())]))
    emit("table2.csv", pd.DataFrame([{
        "scenario_id": s.scenario_id,
        "dropout_rate": s.dropout_rate,
        "mean_courses": s.mean_courses,
        "std_courses": s.std_courses,
        "median_courses": s.median_courses,
    } for s in stats]))
    emit("table3_semester8.csv", structural_at_semester(agg))
    return out
