"""Archetype table and cohort initialisation.

Archetype composition of a cohort is deterministic (largest-remainder
apportionment); only the initial latent draws consume randomness.
"""

from __future__ import annotations

import csv
import math
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from capire.rng import AgentStream, PH_INIT_STRESS, PH_INIT_BELONGING

GROUP_VULNERABLE = "vulnerable"
GROUP_STABLE = "stable"


class PopulationError(ValueError):
    pass


@dataclass(frozen=True)
class Archetype:
    archetype_id: str
    group: str
    proportion: float
    pass_logit_shift: float
    hazard_sensitivity: float
    stress0_mean: float
    stress0_sd: float
    belonging0_mean: float
    belonging0_sd: float
    max_load: int

    def __post_init__(self):
        if self.group not in (GROUP_VULNERABLE, GROUP_STABLE):
            raise PopulationError(f"unknown group: {self.group}")
        if self.hazard_sensitivity <= 0:
            raise PopulationError("hazard_sensitivity must be > 0")
        if self.max_load < 1:
            raise PopulationError("max_load must be >= 1")


ArchetypeArrays = namedtuple(
    "ArchetypeArrays",
    ["pass_shift", "hazard_sens", "stress0_mean", "stress0_sd",
     "belonging0_mean", "belonging0_sd", "max_load", "vulnerable"],
)


@dataclass
class AgentState:
    agent_id: int
    archetype_id: str
    archetype_index: int
    approved: np.ndarray      # bool per course
    pending: np.ndarray       # bool per course, coursework passed / exam pending
    fail_count: np.ndarray    # int per course
    stress: float
    belonging: float
    semester: int = 0
    terminal: str = "active"  # active | dropped | graduated
    terminal_semester: int = -1
    extra: dict = field(default_factory=dict)

    @property
    def n_approved(self) -> int:
        return int(self.approved.sum())

    def is_active(self) -> bool:
        return self.terminal == "active"


def load_archetypes(source) -> list:
    header = ["archetype_id", "group", "proportion", "pass_logit_shift",
              "hazard_sensitivity", "stress0_mean", "stress0_sd",
              "belonging0_mean", "belonging0_sd", "max_load"]
    if hasattr(source, "read"):
        reader = csv.DictReader(source)
        rows = list(reader)
        fields = reader.fieldnames
    else:
        with open(source, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            fields = reader.fieldnames
    if fields is None or [f.strip() for f in fields] != header:
        raise PopulationError(f"bad archetype header: {fields}")
    table = [Archetype(
        archetype_id=r["archetype_id"].strip(),
        group=r["group"].strip(),
        proportion=float(r["proportion"]),
        pass_logit_shift=float(r["pass_logit_shift"]),
        hazard_sensitivity=float(r["hazard_sensitivity"]),
        stress0_mean=float(r["stress0_mean"]),
        stress0_sd=float(r["stress0_sd"]),
        belonging0_mean=float(r["belonging0_mean"]),
        belonging0_sd=float(r["belonging0_sd"]),
        max_load=int(r["max_load"]),
    ) for r in rows]
    validate_archetypes(table)
    return table


def validate_archetypes(table):
    if not table:
        raise PopulationError("empty archetype table")
    total = sum(a.proportion for a in table)
    if abs(total - 1.0) > 1e-9:
        raise PopulationError(f"archetype proportions sum to {total}, not 1")


def archetype_arrays(table) -> ArchetypeArrays:
    return ArchetypeArrays(
        pass_shift=np.array([a.pass_logit_shift for a in table], dtype=np.float64),
        hazard_sens=np.array([a.hazard_sensitivity for a in table], dtype=np.float64),
        stress0_mean=np.array([a.stress0_mean for a in table], dtype=np.float64),
        stress0_sd=np.array([a.stress0_sd for a in table], dtype=np.float64),
        belonging0_mean=np.array([a.belonging0_mean for a in table], dtype=np.float64),
        belonging0_sd=np.array([a.belonging0_sd for a in table], dtype=np.float64),
        max_load=np.array([a.max_load for a in table], dtype=np.int64),
        vulnerable=np.array([a.group == GROUP_VULNERABLE for a in table], dtype=np.bool_),
    )


def apportion(table, n_students: int) -> np.ndarray:
    """Archetype index per agent, by largest-remainder rounding of proportions.

    Agents are assigned in contiguous blocks following table order, so the
    mapping is a pure function of (table, n)."""
    validate_archetypes(table)
    if n_students < 1:
        raise PopulationError("n_students must be >= 1")
    quotas = [a.proportion * n_students for a in table]
    counts = [math.floor(q) for q in quotas]
    remainder = n_students - sum(counts)
    by_frac = sorted(range(len(table)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in by_frac[:remainder]:
        counts[i] += 1
    out = np.empty(n_students, dtype=np.int64)
    pos = 0
    for i, c in enumerate(counts):
        out[pos:pos + c] = i
        pos += c
    return out


def clamp01(x: float) -> float:
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


def init_agent(archetype: Archetype, stream: AgentStream, n_courses: int,
               archetype_index: int = 0) -> AgentState:
    stress = clamp01(archetype.stress0_mean
                     + archetype.stress0_sd * stream.normal(0, PH_INIT_STRESS, 0))
    belonging = clamp01(archetype.belonging0_mean
                        + archetype.belonging0_sd * stream.normal(0, PH_INIT_BELONGING, 0))
    return AgentState(
        agent_id=stream.agent_id,
        archetype_id=archetype.archetype_id,
        archetype_index=archetype_index,
        approved=np.zeros(n_courses, dtype=np.bool_),
        pending=np.zeros(n_courses, dtype=np.bool_),
        fail_count=np.zeros(n_courses, dtype=np.int64),
        stress=stress,
        belonging=belonging,
    )


def sample_cohort(table, n_students: int, stream: AgentStream, n_courses: int) -> list:
    """n_students agents with ids 0..n-1; composition deterministic, latent
    states drawn from each agent's own counter stream."""
    assignment = apportion(table, n_students)
    agents = []
    for agent_id in range(n_students):
        idx = int(assignment[agent_id])
        agents.append(init_agent(table[idx], stream.for_agent(agent_id), n_courses,
                                 archetype_index=idx))
    return agents
