"""Structural indicators against brute-force oracles and worked examples."""

import numpy as np
import pytest

from capire.curriculum import CurriculumError
from capire.features import (blocked_credits, compute_snapshot,
                             distance_to_graduation)

from conftest import (all_subsets, make_diamond, oracle_blocked_credits,
                      oracle_distance, random_dag)


def test_diamond_distance_examples(diamond):
    assert distance_to_graduation(diamond, []) == pytest.approx(1.0)
    assert distance_to_graduation(diamond, ["A"]) == pytest.approx(2 / 3)
    assert distance_to_graduation(diamond, ["A", "B", "C"]) == pytest.approx(1 / 3)
    assert distance_to_graduation(diamond, ["A", "B", "C", "D"]) == 0.0
    # non-closed approved set: start nodes need satisfied prereqs, not chains
    assert distance_to_graduation(diamond, ["B"]) == pytest.approx(2 / 3)


def test_diamond_blocked_examples(diamond):
    assert blocked_credits(diamond, []) == 4 + 4 + 5
    assert blocked_credits(diamond, ["A"]) == 5
    assert blocked_credits(diamond, ["A", "B"]) == 5
    assert blocked_credits(diamond, ["A", "B", "C"]) == 0
    assert blocked_credits(diamond, ["A", "B", "C", "D"]) == 0


def test_snapshot_empty_set_conventions(diamond):
    snap = compute_snapshot(diamond, [])
    assert snap.backbone_completion == 0.0
    assert snap.distance_to_graduation == 1.0
    assert snap.bottleneck_approval_ratio == 0.0
    assert snap.prerequisites_met_ratio == 0.0
    assert snap.mean_in_degree_approved == 0.0
    assert snap.mean_out_degree_approved == 0.0


def test_snapshot_full_set(diamond):
    snap = compute_snapshot(diamond, ["A", "B", "C", "D"])
    assert snap.backbone_completion == 1.0
    assert snap.blocked_credits == 0
    assert snap.distance_to_graduation == 0.0
    assert snap.bottleneck_approval_ratio == 1.0
    assert snap.prerequisites_met_ratio == 1.0
    assert snap.mean_in_degree_approved == 1.0
    assert snap.mean_out_degree_approved == 1.0


def test_snapshot_partial_ratios(diamond):
    snap = compute_snapshot(diamond, ["A", "B"])
    assert snap.backbone_completion == pytest.approx(2 / 3)
    # satisfied edges: A->B, A->C, B->D
    assert snap.prerequisites_met_ratio == pytest.approx(3 / 4)
    assert snap.mean_in_degree_approved == pytest.approx(0.5)
    assert snap.mean_out_degree_approved == pytest.approx(1.5)


def test_unknown_course_rejected(diamond):
    with pytest.raises(CurriculumError, match="unknown course"):
        compute_snapshot(diamond, ["Z"])


def test_oracle_equivalence_small_dags():
    rng = np.random.default_rng(20)
    for _ in range(25):
        graph = random_dag(rng, int(rng.integers(3, 8)))
        for subset in all_subsets(graph.course_ids):
            approved = list(subset)
            assert blocked_credits(graph, approved) == \
                oracle_blocked_credits(graph, approved)
            assert distance_to_graduation(graph, approved) == \
                pytest.approx(oracle_distance(graph, approved))


def test_monotonicity_under_growth():
    rng = np.random.default_rng(21)
    for _ in range(10):
        graph = random_dag(rng, 7)
        ids = list(graph.course_ids)
        for _ in range(20):
            k = int(rng.integers(0, len(ids)))
            small = list(rng.choice(ids, size=k, replace=False))
            extra = [c for c in ids if c not in small]
            if not extra:
                continue
            big = small + [extra[int(rng.integers(0, len(extra)))]]
            assert blocked_credits(graph, big) <= blocked_credits(graph, small)
            assert distance_to_graduation(graph, big) <= \
                distance_to_graduation(graph, small) + 1e-12
            s_small = compute_snapshot(graph, small)
            s_big = compute_snapshot(graph, big)
            assert s_big.backbone_completion >= s_small.backbone_completion
            assert s_big.prerequisites_met_ratio >= s_small.prerequisites_met_ratio
