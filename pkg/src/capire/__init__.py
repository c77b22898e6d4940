"""Deterministic agent-based policy lab for a prerequisite-constrained curriculum."""

__version__ = "0.1.0"

from capire.curriculum import CurriculumGraph, Course, RedesignSpec, load_curriculum
from capire.features import StructuralSnapshot, compute_snapshot
from capire.policy import PolicyScenario, PolicyEffects, parse_scenario_id, enumerate_factorial

__all__ = [
    "CurriculumGraph",
    "Course",
    "RedesignSpec",
    "load_curriculum",
    "StructuralSnapshot",
    "compute_snapshot",
    "PolicyScenario",
    "PolicyEffects",
    "parse_scenario_id",
    "enumerate_factorial",
]
