"""Factorial policy scenarios and their numeric modifiers.

Three binary levers: A rewires the curriculum graph, B boosts pass odds on
target courses and speeds exam conversion, C relieves stress and builds
belonging each semester (stronger for the vulnerable group).  B also carries
a smaller relief channel of its own.
"""

from __future__ import annotations

import csv
import re
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np


class PolicyError(ValueError):
    pass


_SCENARIO_RE = re.compile(r"^A([01])B([01])C([01])$")


@dataclass(frozen=True)
class PolicyScenario:
    a: int
    b: int
    c: int

    @property
    def scenario_id(self) -> str:
        return f"A{self.a}B{self.b}C{self.c}"

    @property
    def index(self) -> int:
        """Canonical position in the factorial table (C fastest, then B, then A)."""
        return self.a * 4 + self.b * 2 + self.c


def parse_scenario_id(text: str) -> PolicyScenario:
    m = _SCENARIO_RE.match(text)
    if not m:
        raise PolicyError(f"malformed scenario id: {text!r}")
    return PolicyScenario(int(m.group(1)), int(m.group(2)), int(m.group(3)))


def enumerate_factorial() -> list:
    return [PolicyScenario(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)]


@dataclass(frozen=True)
class PolicyParams:
    a1_modular_conversion_multiplier: float = 1.8
    b1_pass_logit_boost: float = 1.3
    b1_conversion_multiplier: float = 2.0
    b1_stress_relief: float = 0.04
    b1_belonging_gain: float = 0.03
    c1_stress_relief: float = 0.08
    c1_belonging_gain: float = 0.06
    c1_vulnerable_multiplier: float = 2.0
    b1_target: str = "backbone"  # "backbone" or "list:ID1;ID2;..."


@dataclass(frozen=True)
class PolicyEffects:
    scenario: PolicyScenario
    graph_variant: str                      # "base" | "redesigned"
    pass_logit_boost: dict                  # course_id -> logit shift
    exam_conversion_multiplier: float
    modular_conversion_multiplier: float    # applies to modular-flagged courses
    stress_relief_b: float
    belonging_gain_b: float
    stress_relief_c: float
    belonging_gain_c: float
    vulnerable_relief_multiplier: float     # applied to the C component only

    @property
    def stress_relief(self) -> float:
        return self.stress_relief_b + self.stress_relief_c

    @property
    def belonging_gain(self) -> float:
        return self.belonging_gain_b + self.belonging_gain_c


EffectArrays = namedtuple(
    "EffectArrays",
    ["boost", "conv_mult", "stress_relief_b", "belonging_gain_b",
     "stress_relief_c", "belonging_gain_c", "c_vuln_mult"],
)
# conv_mult is per course: the scenario-wide exam multiplier times the
# modular-assessment multiplier on flagged courses of the active graph


def load_policy_params(source) -> PolicyParams:
    values = {}
    if hasattr(source, "read"):
        rows = list(csv.reader(source))
    else:
        with open(source, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    for row in rows:
        if not row or row[0].startswith("#"):
            continue
        if row[0].strip() == "key":
            continue
        if len(row) != 2:
            raise PolicyError(f"bad policy_params row: {row}")
        values[row[0].strip()] = row[1].strip()
    kwargs = {}
    for f in ("a1_modular_conversion_multiplier",
              "b1_pass_logit_boost", "b1_conversion_multiplier", "b1_stress_relief",
              "b1_belonging_gain", "c1_stress_relief", "c1_belonging_gain",
              "c1_vulnerable_multiplier"):
        if f in values:
            kwargs[f] = float(values[f])
    if "b1_target" in values:
        kwargs["b1_target"] = values["b1_target"]
    return PolicyParams(**kwargs)


def _target_courses(params: PolicyParams, graph) -> list:
    if params.b1_target == "backbone":
        return sorted(graph.backbone_set)
    if params.b1_target.startswith("list:"):
        ids = [t for t in params.b1_target[5:].split(";") if t]
        for cid in ids:
            graph._check(cid)
        return ids
    raise PolicyError(f"bad b1_target: {params.b1_target!r}")


def effects(scenario: PolicyScenario, params: PolicyParams, base_graph,
            a1_graph=None) -> PolicyEffects:
    """Resolve factor levels into concrete modifiers.

    Monotone by construction: raising any bit never lowers a pass
    probability, conversion probability, or relief."""
    if scenario.a == 1 and a1_graph is None:
        raise PolicyError("scenario requires the redesigned graph but none was given")
    graph = a1_graph if scenario.a == 1 else base_graph
    boost = {}
    conv_mult = 1.0
    relief_s_b = gain_b_b = 0.0
    if scenario.b == 1:
        boost = {cid: params.b1_pass_logit_boost for cid in _target_courses(params, graph)}
        conv_mult = params.b1_conversion_multiplier
        relief_s_b = params.b1_stress_relief
        gain_b_b = params.b1_belonging_gain
    relief_s_c = gain_b_c = 0.0
    if scenario.c == 1:
        relief_s_c = params.c1_stress_relief
        gain_b_c = params.c1_belonging_gain
    return PolicyEffects(
        scenario=scenario,
        graph_variant="redesigned" if scenario.a == 1 else "base",
        pass_logit_boost=boost,
        exam_conversion_multiplier=conv_mult,
        modular_conversion_multiplier=(
            params.a1_modular_conversion_multiplier if scenario.a == 1 else 1.0),
        stress_relief_b=relief_s_b,
        belonging_gain_b=gain_b_b,
        stress_relief_c=relief_s_c,
        belonging_gain_c=gain_b_c,
        vulnerable_relief_multiplier=params.c1_vulnerable_multiplier,
    )


def effect_arrays(eff: PolicyEffects, graph) -> EffectArrays:
    index = graph.course_index()
    boost = np.zeros(graph.n_courses, dtype=np.float64)
    for cid, val in eff.pass_logit_boost.items():
        boost[index[cid]] = val
    conv = np.full(graph.n_courses, float(eff.exam_conversion_multiplier))
    for cid in graph.modular_flags:
        conv[index[cid]] *= eff.modular_conversion_multiplier
    return EffectArrays(
        boost=boost,
        conv_mult=conv,
        stress_relief_b=float(eff.stress_relief_b),
        belonging_gain_b=float(eff.belonging_gain_b),
        stress_relief_c=float(eff.stress_relief_c),
        belonging_gain_c=float(eff.belonging_gain_c),
        c_vuln_mult=float(eff.vulnerable_relief_multiplier),
    )
