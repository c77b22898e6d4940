"""Structural indicators of an approved-course set.

Seven descriptors per agent-semester: backbone completion, blocked credits,
normalised distance to graduation, bottleneck approval ratio, prerequisites
met ratio, and mean in-/out-degree of approved courses.  Only finally
approved courses count here; regular-pending does not.

The array kernels below are shared with the simulation engine so that logged
snapshots and recomputed snapshots are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from capire._jit import maybe_njit

_INF = 1e18


@dataclass(frozen=True)
class StructuralSnapshot:
    backbone_completion: float
    blocked_credits: int
    distance_to_graduation: float
    bottleneck_approval_ratio: float
    prerequisites_met_ratio: float
    mean_in_degree_approved: float
    mean_out_degree_approved: float

    def as_tuple(self):
        return (self.backbone_completion, self.blocked_credits,
                self.distance_to_graduation, self.bottleneck_approval_ratio,
                self.prerequisites_met_ratio, self.mean_in_degree_approved,
                self.mean_out_degree_approved)


@maybe_njit
def min_chain_into(g, approved, f):
    """Minimum count of unapproved courses on any prerequisite chain that ends
    at the graduation sink and starts at a course whose prerequisites are all
    approved.  `f` is an n-sized float64 scratch array."""
    n = approved.shape[0]
    for k in range(n - 1, -1, -1):
        v = g.topo_order[k]
        best = _INF
        if g.out_deg[v] == 0:
            best = 0.0
        else:
            for j in range(g.suc_indptr[v], g.suc_indptr[v + 1]):
                w = g.suc_idx[j]
                if f[w] < best:
                    best = f[w]
        cost = 0.0 if approved[v] else 1.0
        f[v] = cost + best
    d = _INF
    for v in range(n):
        ok = True
        for j in range(g.pre_indptr[v], g.pre_indptr[v + 1]):
            if not approved[g.pre_idx[j]]:
                ok = False
                break
        if ok and f[v] < d:
            d = f[v]
    return d


@maybe_njit
def blocked_credits_arrays(g, approved):
    total = 0
    n = approved.shape[0]
    for v in range(n):
        if approved[v]:
            continue
        for j in range(g.pre_indptr[v], g.pre_indptr[v + 1]):
            if not approved[g.pre_idx[j]]:
                total += g.credits[v]
                break
    return total


@maybe_njit
def snapshot_into(g, approved, f):
    """All seven indicators for one approved mask; `f` is scratch for the
    distance recursion.  Returns (backbone, blocked, distance, bottleneck,
    prereq_met, mean_in, mean_out)."""
    n = approved.shape[0]
    n_approved = 0
    n_backbone = 0
    n_backbone_done = 0
    n_bottleneck = 0
    n_bottleneck_done = 0
    sum_in = 0
    sum_out = 0
    for v in range(n):
        if g.backbone[v]:
            n_backbone += 1
            if approved[v]:
                n_backbone_done += 1
        if g.bottleneck[v]:
            n_bottleneck += 1
            if approved[v]:
                n_bottleneck_done += 1
        if approved[v]:
            n_approved += 1
            sum_in += g.in_deg[v]
            sum_out += g.out_deg[v]

    backbone = n_backbone_done / n_backbone if n_backbone > 0 else 0.0
    bottleneck = n_bottleneck_done / n_bottleneck if n_bottleneck > 0 else 0.0
    mean_in = sum_in / n_approved if n_approved > 0 else 0.0
    mean_out = sum_out / n_approved if n_approved > 0 else 0.0

    blocked = blocked_credits_arrays(g, approved)

    met = 0
    for v in range(n):
        if approved[v]:
            met += g.out_deg[v]
    prereq_met = met / g.n_edges if g.n_edges > 0 else 0.0

    distance = min_chain_into(g, approved, f) / g.base_distance if n_approved < n else 0.0

    return backbone, float(blocked), distance, bottleneck, prereq_met, mean_in, mean_out


# ---------------------------------------------------------------------------
# object-level wrappers


def _approved_mask(graph, approved):
    index = graph.course_index()
    mask = np.zeros(graph.n_courses, dtype=np.bool_)
    for cid in approved:
        if cid not in index:
            from capire.curriculum import CurriculumError
            raise CurriculumError(f"unknown course in approved set: {cid}")
        mask[index[cid]] = True
    return mask


def compute_snapshot(graph, approved) -> StructuralSnapshot:
    g = graph.as_arrays()
    mask = _approved_mask(graph, approved)
    f = np.empty(graph.n_courses, dtype=np.float64)
    vals = snapshot_into(g, mask, f)
    return StructuralSnapshot(
        backbone_completion=vals[0],
        blocked_credits=int(vals[1]),
        distance_to_graduation=vals[2],
        bottleneck_approval_ratio=vals[3],
        prerequisites_met_ratio=vals[4],
        mean_in_degree_approved=vals[5],
        mean_out_degree_approved=vals[6],
    )


def blocked_credits(graph, approved) -> int:
    return int(blocked_credits_arrays(graph.as_arrays(), _approved_mask(graph, approved)))


def distance_to_graduation(graph, approved) -> float:
    g = graph.as_arrays()
    mask = _approved_mask(graph, approved)
    if mask.all():
        return 0.0
    f = np.empty(graph.n_courses, dtype=np.float64)
    return min_chain_into(g, mask, f) / g.base_distance


def min_unapproved_chain(g, approved_mask) -> float:
    """Unnormalised minimal chain length on a GraphArrays view."""
    f = np.empty(approved_mask.shape[0], dtype=np.float64)
    return min_chain_into(g, approved_mask, f)
