"""Object-level semester loop for a single agent.

Thin drivers over the array kernels in capire.kernels; the fused cohort
simulator and this API therefore produce identical trajectories for the same
(master_seed, scenario, replication, agent) identity.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from capire import kernels
from capire.features import StructuralSnapshot
from capire.kernels import (EngineArrays, TERM_DROPOUT, TERM_GRADUATION,
                            TERM_NONE, NCOLS)
from capire.population import AgentState, Archetype
from capire.rng import AgentStream


class EngineError(ValueError):
    pass


@dataclass(frozen=True)
class EngineParams:
    base_pass_prob: dict            # course_id -> probability
    friction: dict                  # course_id -> logit penalty >= 0
    exam_conversion_prob: float = 0.24
    eta0: float = -5.3
    eta1: float = 0.3
    eta2: float = 1.0
    eta3: float = 1.0
    eta4: float = 0.8
    eta5: float = 0.5
    eta6: float = 0.4
    alpha_fail: float = 0.08
    alpha_pending: float = 0.06
    alpha_block: float = 0.04
    alpha_recover: float = 0.10
    beta_pass: float = 0.10
    beta_fail: float = 0.08
    beta_delay: float = 0.06
    nominal_per_semester: float = 34.0 / 12.0
    horizon: int = 12

    def replace(self, **kwargs) -> "EngineParams":
        current = {k: getattr(self, k) for k in self.__dataclass_fields__}
        current.update(kwargs)
        return EngineParams(**current)

    def as_arrays(self, graph) -> EngineArrays:
        missing = [cid for cid in graph.course_ids if cid not in self.base_pass_prob]
        if missing:
            raise EngineError(f"base_pass_prob missing courses: {missing}")
        base_logit = np.empty(graph.n_courses, dtype=np.float64)
        friction = np.empty(graph.n_courses, dtype=np.float64)
        for i, cid in enumerate(graph.course_ids):
            p = self.base_pass_prob[cid]
            if not (0.0 < p < 1.0):
                raise EngineError(f"{cid}: base_pass_prob must be in (0,1), got {p}")
            base_logit[i] = math.log(p / (1.0 - p))
            friction[i] = self.friction.get(cid, 0.0)
        return EngineArrays(
            base_logit=base_logit, friction=friction,
            conv_prob=float(self.exam_conversion_prob),
            eta0=self.eta0, eta1=self.eta1, eta2=self.eta2, eta3=self.eta3,
            eta4=self.eta4, eta5=self.eta5, eta6=self.eta6,
            alpha_fail=self.alpha_fail, alpha_pending=self.alpha_pending,
            alpha_block=self.alpha_block, alpha_recover=self.alpha_recover,
            beta_pass=self.beta_pass, beta_fail=self.beta_fail,
            beta_delay=self.beta_delay,
            nominal=float(self.nominal_per_semester), horizon=int(self.horizon),
        )


def load_engine_params(params_source, course_pass_source) -> EngineParams:
    values = {}
    for row in _read_kv(params_source):
        values[row[0]] = float(row[1])
    base, friction = {}, {}
    rows, fields = _read_table(course_pass_source)
    if fields != ["course_id", "base_pass_prob", "friction"]:
        raise EngineError(f"bad course_pass header: {fields}")
    for r in rows:
        cid = r["course_id"].strip()
        base[cid] = float(r["base_pass_prob"])
        friction[cid] = float(r["friction"])
    known = {f for f in EngineParams.__dataclass_fields__
             if f not in ("base_pass_prob", "friction")}
    kwargs = {}
    for key, val in values.items():
        if key not in known:
            raise EngineError(f"unknown engine parameter: {key}")
        kwargs[key] = int(val) if key == "horizon" else val
    return EngineParams(base_pass_prob=base, friction=friction, **kwargs)


def _read_kv(source):
    if hasattr(source, "read"):
        rows = list(csv.reader(source))
    else:
        with open(source, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    out = []
    for row in rows:
        if not row or row[0].startswith("#") or row[0].strip() == "key":
            continue
        if len(row) != 2:
            raise EngineError(f"bad key-value row: {row}")
        out.append((row[0].strip(), row[1].strip()))
    return out


def _read_table(source):
    if hasattr(source, "read"):
        reader = csv.DictReader(source)
        return list(reader), [f.strip() for f in (reader.fieldnames or [])]
    with open(source, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return list(reader), [f.strip() for f in (reader.fieldnames or [])]


@dataclass
class SemesterRecord:
    scenario_id: str
    replication: int
    agent_id: int
    semester: int
    enrolled: list
    passed_coursework: list
    approved_by_exam: list
    failed: list
    n_approved_total: int
    stress: float
    belonging: float
    snapshot: StructuralSnapshot
    terminal_event: str | None  # None | "dropout" | "graduation"


@dataclass
class _Buffers:
    sel: np.ndarray
    outcome: np.ndarray
    conv: np.ndarray
    f: np.ndarray
    row: np.ndarray

    @classmethod
    def for_graph(cls, graph):
        n = graph.n_courses
        return cls(sel=np.empty(n, dtype=np.int64),
                   outcome=np.empty(n, dtype=np.int64),
                   conv=np.empty(n, dtype=np.int64),
                   f=np.empty(n, dtype=np.float64),
                   row=np.empty(NCOLS, dtype=np.float64))


def select_enrolment(agent: AgentState, graph, effects, params, archetype: Archetype):
    """Eligible untaken/failed courses, ranked, truncated to the behavioural load."""
    del effects, params  # selection is deterministic and policy-independent
    g = graph.as_arrays()
    sel_buf = np.empty(graph.n_courses, dtype=np.int64)
    n_sel = kernels.select_enrolment_arrays(
        g, agent.approved, agent.pending, agent.stress, agent.belonging,
        archetype.max_load, sel_buf)
    return [graph.course_ids[sel_buf[k]] for k in range(n_sel)]


def sample_course_outcome(agent: AgentState, course_id, graph, effects,
                          params: EngineParams, archetype: Archetype,
                          stream: AgentStream, t: int) -> str:
    """Pass/fail draw for one enrolled course; mutates the agent."""
    i = graph.course_index()[course_id]
    base = params.base_pass_prob[course_id]
    p = kernels.pass_probability(
        math.log(base / (1.0 - base)), archetype.pass_logit_shift,
        effects.pass_logit_boost.get(course_id, 0.0),
        params.friction.get(course_id, 0.0))
    if stream.uniform(t, kernels.PH_OUTCOME, i) < p:
        agent.pending[i] = True
        return "pass_coursework"
    agent.fail_count[i] += 1
    return "fail"


def convert_pending_exams(agent: AgentState, effects, params: EngineParams,
                          stream: AgentStream, t: int, graph) -> list:
    approved = []
    for i, cid in enumerate(graph.course_ids):
        mult = effects.exam_conversion_multiplier
        if cid in graph.modular_flags:
            mult *= effects.modular_conversion_multiplier
        q = min(1.0, params.exam_conversion_prob * mult)
        if agent.pending[i] and stream.uniform(t, kernels.PH_CONVERT, i) < q:
            agent.pending[i] = False
            agent.approved[i] = True
            approved.append(cid)
    return approved


def update_latent_states(agent: AgentState, events: dict, effects, params: EngineParams,
                         vulnerable: bool = False):
    ep = _scalar_params(params)
    relief = effects.stress_relief_b
    gain = effects.belonging_gain_b
    mult = effects.vulnerable_relief_multiplier if vulnerable else 1.0
    relief += effects.stress_relief_c * mult
    gain += effects.belonging_gain_c * mult
    return kernels.latent_update(
        agent.stress, agent.belonging,
        events.get("n_enrolled", 0), events["n_pass"], events["n_fail"],
        events["n_pending"], events["blocked_fraction"], events["delay_fraction"],
        ep, relief, gain)


def dropout_hazard(archetype: Archetype, snapshot: StructuralSnapshot,
                   delay_fraction: float, params: EngineParams,
                   stress: float, belonging: float, total_credits: int) -> float:
    ep = _scalar_params(params)
    return kernels.hazard_value(
        archetype.hazard_sensitivity, ep, delay_fraction,
        snapshot.blocked_credits / total_credits,
        snapshot.distance_to_graduation, stress, belonging,
        snapshot.backbone_completion)


def _scalar_params(params: EngineParams) -> EngineArrays:
    # scalar-only view; per-course arrays are not consulted by latent/hazard math
    empty = np.zeros(0, dtype=np.float64)
    return EngineArrays(
        base_logit=empty, friction=empty,
        conv_prob=float(params.exam_conversion_prob),
        eta0=params.eta0, eta1=params.eta1, eta2=params.eta2, eta3=params.eta3,
        eta4=params.eta4, eta5=params.eta5, eta6=params.eta6,
        alpha_fail=params.alpha_fail, alpha_pending=params.alpha_pending,
        alpha_block=params.alpha_block, alpha_recover=params.alpha_recover,
        beta_pass=params.beta_pass, beta_fail=params.beta_fail,
        beta_delay=params.beta_delay,
        nominal=float(params.nominal_per_semester), horizon=int(params.horizon))


def step_semester(agent: AgentState, graph, effects, params, stream: AgentStream,
                  t: int, archetype: Archetype, effect_arrays=None,
                  engine_arrays=None, buffers=None) -> SemesterRecord:
    """Run one semester; raises on terminal agents."""
    from capire.policy import effect_arrays as build_effect_arrays

    if not agent.is_active():
        raise EngineError(f"step_semester called on terminal agent {agent.agent_id}")
    if not (1 <= t <= params.horizon):
        raise EngineError(f"semester {t} outside 1..{params.horizon}")

    g = graph.as_arrays()
    ep = engine_arrays if engine_arrays is not None else params.as_arrays(graph)
    ef = effect_arrays if effect_arrays is not None else build_effect_arrays(effects, graph)
    buf = buffers if buffers is not None else _Buffers.for_graph(graph)
    ids = graph.course_ids

    if agent.n_approved == graph.n_courses:
        # fully approved before the step: immediate graduation, no enrolment
        from capire.features import compute_snapshot
        agent.terminal = "graduated"
        agent.terminal_semester = t
        agent.semester = t
        snap = compute_snapshot(graph, [cid for i, cid in enumerate(ids) if agent.approved[i]])
        return SemesterRecord(
            scenario_id=effects.scenario.scenario_id, replication=stream.replication,
            agent_id=agent.agent_id, semester=t, enrolled=[], passed_coursework=[],
            approved_by_exam=[], failed=[], n_approved_total=agent.n_approved,
            stress=agent.stress, belonging=agent.belonging, snapshot=snap,
            terminal_event="graduation")

    stress, belonging, terminal = kernels.step_semester_arrays(
        g, ep, ef, archetype.pass_logit_shift, archetype.hazard_sensitivity,
        archetype.max_load, archetype.group == "vulnerable",
        stream.master_seed, stream.scenario_index, stream.replication,
        agent.agent_id, t,
        agent.approved, agent.pending, agent.fail_count,
        agent.stress, agent.belonging,
        buf.sel, buf.outcome, buf.conv, buf.f, buf.row)

    agent.stress = stress
    agent.belonging = belonging
    agent.semester = t
    row = buf.row
    n_sel = int(row[kernels.COL_ENROLLED])
    n_conv = int(row[kernels.COL_NEW])
    enrolled = [ids[buf.sel[k]] for k in range(n_sel)]
    passed = [ids[buf.sel[k]] for k in range(n_sel) if buf.outcome[k] == 1]
    failed = [ids[buf.sel[k]] for k in range(n_sel) if buf.outcome[k] == 0]
    converted = [ids[buf.conv[k]] for k in range(n_conv)]

    terminal_event = None
    if terminal == TERM_DROPOUT:
        agent.terminal = "dropped"
        agent.terminal_semester = t
        terminal_event = "dropout"
    elif terminal == TERM_GRADUATION:
        agent.terminal = "graduated"
        agent.terminal_semester = t
        terminal_event = "graduation"

    snap = StructuralSnapshot(
        backbone_completion=row[kernels.COL_BACKBONE],
        blocked_credits=int(row[kernels.COL_BLOCKED]),
        distance_to_graduation=row[kernels.COL_DISTANCE],
        bottleneck_approval_ratio=row[kernels.COL_BOTTLENECK],
        prerequisites_met_ratio=row[kernels.COL_PREREQ_MET],
        mean_in_degree_approved=row[kernels.COL_MEAN_IN],
        mean_out_degree_approved=row[kernels.COL_MEAN_OUT])

    return SemesterRecord(
        scenario_id=effects.scenario.scenario_id, replication=stream.replication,
        agent_id=agent.agent_id, semester=t, enrolled=enrolled,
        passed_coursework=passed, approved_by_exam=converted, failed=failed,
        n_approved_total=int(row[kernels.COL_TOTAL]),
        stress=stress, belonging=belonging, snapshot=snap,
        terminal_event=terminal_event)


def run_trajectory(agent: AgentState, graph, effects, params, stream: AgentStream,
                   archetype: Archetype) -> list:
    """Semesters until dropout, graduation, or the horizon."""
    from capire.policy import effect_arrays as build_effect_arrays

    ep = params.as_arrays(graph)
    ef = build_effect_arrays(effects, graph)
    buf = _Buffers.for_graph(graph)
    records = []
    for t in range(1, params.horizon + 1):
        rec = step_semester(agent, graph, effects, params, stream, t, archetype,
                            effect_arrays=ef, engine_arrays=ep, buffers=buf)
        records.append(rec)
        if rec.terminal_event is not None:
            break
    return records
