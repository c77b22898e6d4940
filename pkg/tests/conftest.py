"""Shared fixtures: the small diamond curriculum and the shipped inputs."""

import itertools

import numpy as np
import pytest

from capire.config import load_inputs, load_settings
from capire.curriculum import Course, CurriculumGraph


def make_diamond(plan_length=12, modular=()):
    """Four courses A,B,C,D with edges A->B, A->C, B->D, C->D."""
    courses = [
        Course("A", "Intro", 1, 3, True),
        Course("B", "Left", 2, 4, True),
        Course("C", "Right", 2, 4, False),
        Course("D", "Capstone", 3, 5, True),
    ]
    edges = [("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")]
    return CurriculumGraph(courses, edges, plan_length=plan_length,
                           modular_flags=modular)


@pytest.fixture
def diamond():
    return make_diamond()


@pytest.fixture(scope="session")
def shipped_settings():
    return load_settings()


@pytest.fixture(scope="session")
def shipped_inputs(shipped_settings):
    return load_inputs(shipped_settings)


# ---------------------------------------------------------------------------
# brute-force structural oracles, used by the unit and acceptance suites


def oracle_blocked_credits(graph, approved):
    approved = set(approved)
    total = 0
    for cid in graph.course_ids:
        if cid in approved:
            continue
        if any(p not in approved for p in graph.prerequisites(cid)):
            total += graph.courses[cid].credits
    return total


def _all_chains(graph, start):
    """Every successor chain from start down to some sink course."""
    succ = graph.successors(start)
    if not succ:
        yield [start]
        return
    for nxt in succ:
        for chain in _all_chains(graph, nxt):
            yield [start] + chain


def oracle_min_chain(graph, approved):
    """Path-enumeration oracle for the unnormalised distance."""
    approved = set(approved)
    if approved == set(graph.course_ids):
        return 0
    best = None
    for start in graph.course_ids:
        if any(p not in approved for p in graph.prerequisites(start)):
            continue
        for chain in _all_chains(graph, start):
            cost = sum(1 for cid in chain if cid not in approved)
            if best is None or cost < best:
                best = cost
    assert best is not None, "some zero-prereq course always exists in a DAG"
    return best


def oracle_distance(graph, approved):
    base = oracle_min_chain(graph, [])
    return oracle_min_chain(graph, approved) / base


def random_dag(rng, n_nodes):
    """Random DAG over n_nodes courses with random credits 1..6."""
    ids = [f"N{i}" for i in range(n_nodes)]
    courses = [Course(cid, cid, 1 + i % 12, int(rng.integers(1, 7)),
                      bool(rng.integers(0, 2)))
               for i, cid in enumerate(ids)]
    edges = []
    for i, j in itertools.combinations(range(n_nodes), 2):
        if rng.random() < 0.3:
            edges.append((ids[i], ids[j]))  # i < j keeps it acyclic
    return CurriculumGraph(courses, edges)


def all_subsets(ids):
    for r in range(len(ids) + 1):
        yield from itertools.combinations(ids, r)
