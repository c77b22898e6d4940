"""Curriculum as a directed acyclic prerequisite graph.

Courses come from two CSV files (courses.csv, edges.csv).  A virtual
graduation sink is appended behind every out-degree-0 course; it is excluded
from every structural indicator.  Graphs are immutable after construction and
safe to share across workers.
"""

from __future__ import annotations

import csv
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

GRAD_NODE = "__GRAD__"

STATUS_UNTAKEN = "untaken"
STATUS_REGULAR_PENDING = "regular_pending"
STATUS_APPROVED = "approved"
STATUS_FAILED_LAST = "failed_last"

VALID_STATUSES = {STATUS_UNTAKEN, STATUS_REGULAR_PENDING, STATUS_APPROVED, STATUS_FAILED_LAST}

# statuses that satisfy a prerequisite for *enrolment* (regularity regime:
# coursework passed with exam pending already unlocks dependent courses)
ENROLMENT_SATISFYING = {STATUS_REGULAR_PENDING, STATUS_APPROVED}


class CurriculumError(ValueError):
    pass


class CycleError(CurriculumError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("cycle detected: " + " -> ".join(self.cycle))


@dataclass(frozen=True)
class Course:
    course_id: str
    name: str
    nominal_semester: int
    credits: int
    backbone: bool


@dataclass(frozen=True)
class RedesignSpec:
    edges_removed: tuple = ()
    edges_added: tuple = ()
    semester_reassignments: dict = field(default_factory=dict)
    modular_assessment_flags: frozenset = frozenset()


# Flat array view of a graph, consumed by the simulation kernels.
GraphArrays = namedtuple(
    "GraphArrays",
    [
        "credits",        # int64[n]
        "nominal_sem",    # int64[n]
        "backbone",       # bool[n]
        "bottleneck",     # bool[n]
        "lex_rank",       # int64[n], rank of course_id in lexicographic order
        "pre_indptr",     # int64[n+1]
        "pre_idx",        # int64[m]
        "suc_indptr",     # int64[n+1]
        "suc_idx",        # int64[m]
        "in_deg",         # int64[n]
        "out_deg",        # int64[n]
        "n_edges",        # int
        "total_credits",  # int
        "topo_order",     # int64[n]
        "base_distance",  # float: minimal unapproved chain length from empty set
    ],
)


class CurriculumGraph:
    """Validated prerequisite DAG plus the virtual graduation sink."""

    def __init__(self, courses, edges, plan_length=12, modular_flags=(),
                 bottleneck_min_in_degree=2, bottleneck_quantile=0.1):
        if not courses:
            raise CurriculumError("empty course set")
        self.course_ids = [c.course_id for c in courses]
        self.courses = {}
        for c in courses:
            if c.course_id in self.courses:
                raise CurriculumError(f"duplicate course_id: {c.course_id}")
            if not (1 <= c.nominal_semester <= plan_length):
                raise CurriculumError(
                    f"{c.course_id}: nominal_semester {c.nominal_semester} outside 1..{plan_length}")
            if c.credits < 1:
                raise CurriculumError(f"{c.course_id}: credits must be >= 1")
            self.courses[c.course_id] = c
        edges = list(edges)
        seen = set()
        for u, v in edges:
            if u not in self.courses:
                raise CurriculumError(f"edge ({u},{v}): unknown prerequisite {u}")
            if v not in self.courses:
                raise CurriculumError(f"edge ({u},{v}): unknown course {v}")
            if (u, v) in seen:
                raise CurriculumError(f"duplicate edge ({u},{v})")
            seen.add((u, v))
        self.prereq_edges = frozenset(seen)
        self.plan_length = plan_length
        self.modular_flags = frozenset(modular_flags)
        self.grad_node = GRAD_NODE
        self.bottleneck_min_in_degree = bottleneck_min_in_degree
        self.bottleneck_quantile = bottleneck_quantile

        self._prereqs = {cid: [] for cid in self.course_ids}
        self._successors = {cid: [] for cid in self.course_ids}
        for u, v in edges:
            self._prereqs[v].append(u)
            self._successors[u].append(v)
        for cid in self.course_ids:
            self._prereqs[cid].sort()
            self._successors[cid].sort()

        self.topo_order = self._toposort()
        self.total_credits = sum(c.credits for c in self.courses.values())
        self.sink_courses = sorted(cid for cid in self.course_ids if not self._successors[cid])
        self._arrays = None
        self._bottleneck = None

    # -- queries -----------------------------------------------------------

    def prerequisites(self, course_id):
        return tuple(self._prereqs[self._check(course_id)])

    def successors(self, course_id):
        return tuple(self._successors[self._check(course_id)])

    def in_degree(self, course_id):
        return len(self._prereqs[self._check(course_id)])

    def out_degree(self, course_id):
        return len(self._successors[self._check(course_id)])

    @property
    def n_courses(self):
        return len(self.course_ids)

    @property
    def n_edges(self):
        return len(self.prereq_edges)

    @property
    def backbone_set(self):
        return frozenset(cid for cid, c in self.courses.items() if c.backbone)

    @property
    def bottleneck(self):
        if self._bottleneck is None:
            self._bottleneck = bottleneck_set(
                self, self.bottleneck_min_in_degree, self.bottleneck_quantile)
        return self._bottleneck

    def _check(self, course_id):
        if course_id not in self.courses:
            raise CurriculumError(f"unknown course_id: {course_id}")
        return course_id

    def __eq__(self, other):
        if not isinstance(other, CurriculumGraph):
            return NotImplemented
        return (self.courses == other.courses
                and self.prereq_edges == other.prereq_edges
                and self.plan_length == other.plan_length
                and self.modular_flags == other.modular_flags)

    def __hash__(self):
        return hash((frozenset(self.courses.items()), self.prereq_edges))

    # -- construction helpers ---------------------------------------------

    def _toposort(self):
        indeg = {cid: len(self._prereqs[cid]) for cid in self.course_ids}
        ready = sorted(cid for cid, d in indeg.items() if d == 0)
        order = []
        while ready:
            cid = ready.pop(0)
            order.append(cid)
            changed = False
            for nxt in self._successors[cid]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    ready.append(nxt)
                    changed = True
            if changed:
                ready.sort()
        if len(order) != len(self.course_ids):
            raise CycleError(self._find_cycle({cid for cid, d in indeg.items() if d > 0}))
        return order

    def _find_cycle(self, remaining):
        # walk predecessors inside the leftover set until a node repeats
        start = sorted(remaining)[0]
        seen = []
        node = start
        while node not in seen:
            seen.append(node)
            node = next(p for p in self._prereqs[node] if p in remaining)
        cycle = seen[seen.index(node):] + [node]
        return list(reversed(cycle))

    def as_arrays(self) -> GraphArrays:
        """Flat array view for the kernels; built once and cached."""
        if self._arrays is not None:
            return self._arrays
        n = self.n_courses
        index = {cid: i for i, cid in enumerate(self.course_ids)}
        credits = np.array([self.courses[cid].credits for cid in self.course_ids], dtype=np.int64)
        nominal = np.array([self.courses[cid].nominal_semester for cid in self.course_ids], dtype=np.int64)
        backbone = np.array([self.courses[cid].backbone for cid in self.course_ids], dtype=np.bool_)
        bottleneck = np.array([cid in self.bottleneck for cid in self.course_ids], dtype=np.bool_)
        lex_rank = np.empty(n, dtype=np.int64)
        for rank, cid in enumerate(sorted(self.course_ids)):
            lex_rank[index[cid]] = rank

        pre_indptr = np.zeros(n + 1, dtype=np.int64)
        suc_indptr = np.zeros(n + 1, dtype=np.int64)
        pre_lists = [[index[p] for p in self._prereqs[cid]] for cid in self.course_ids]
        suc_lists = [[index[s] for s in self._successors[cid]] for cid in self.course_ids]
        for i in range(n):
            pre_indptr[i + 1] = pre_indptr[i] + len(pre_lists[i])
            suc_indptr[i + 1] = suc_indptr[i] + len(suc_lists[i])
        pre_idx = np.array([j for lst in pre_lists for j in lst], dtype=np.int64)
        suc_idx = np.array([j for lst in suc_lists for j in lst], dtype=np.int64)
        in_deg = np.array([len(lst) for lst in pre_lists], dtype=np.int64)
        out_deg = np.array([len(lst) for lst in suc_lists], dtype=np.int64)
        topo = np.array([index[cid] for cid in self.topo_order], dtype=np.int64)

        arrays = GraphArrays(
            credits=credits, nominal_sem=nominal, backbone=backbone,
            bottleneck=bottleneck, lex_rank=lex_rank,
            pre_indptr=pre_indptr, pre_idx=pre_idx,
            suc_indptr=suc_indptr, suc_idx=suc_idx,
            in_deg=in_deg, out_deg=out_deg,
            n_edges=int(self.n_edges), total_credits=int(self.total_credits),
            topo_order=topo, base_distance=0.0,
        )
        from capire.features import min_unapproved_chain
        base = float(min_unapproved_chain(arrays, np.zeros(n, dtype=np.bool_)))
        arrays = arrays._replace(base_distance=base)
        self._arrays = arrays
        return arrays

    def course_index(self):
        return {cid: i for i, cid in enumerate(self.course_ids)}


# ---------------------------------------------------------------------------


def load_curriculum(courses_source, edges_source, plan_length=12,
                    bottleneck_min_in_degree=2, bottleneck_quantile=0.1) -> CurriculumGraph:
    """Build a validated graph from courses.csv / edges.csv paths or file objects."""
    courses = []
    for row in _read_csv(courses_source, ["course_id", "name", "semester", "credits", "backbone"]):
        courses.append(Course(
            course_id=row["course_id"].strip(),
            name=row["name"].strip(),
            nominal_semester=int(row["semester"]),
            credits=int(row["credits"]),
            backbone=_parse_bool(row["backbone"]),
        ))
    edges = []
    for row in _read_csv(edges_source, ["prereq_id", "course_id"]):
        edges.append((row["prereq_id"].strip(), row["course_id"].strip()))
    return CurriculumGraph(courses, edges, plan_length=plan_length,
                           bottleneck_min_in_degree=bottleneck_min_in_degree,
                           bottleneck_quantile=bottleneck_quantile)


def _read_csv(source, expected_fields):
    if hasattr(source, "read"):
        reader = csv.DictReader(source)
        rows = list(reader)
        fields = reader.fieldnames
    else:
        with open(source, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            fields = reader.fieldnames
    if fields is None or [f.strip() for f in fields] != expected_fields:
        raise CurriculumError(f"bad header {fields}; expected {expected_fields}")
    return rows


def _parse_bool(text):
    t = text.strip().lower()
    if t in {"1", "true", "yes"}:
        return True
    if t in {"0", "false", "no"}:
        return False
    raise CurriculumError(f"not a boolean flag: {text!r}")


def satisfied_for_enrolment(graph: CurriculumGraph, status, course_id) -> bool:
    """True iff every prerequisite is approved or regular (exam pending)."""
    graph._check(course_id)
    for prereq in graph.prerequisites(course_id):
        if status.get(prereq, STATUS_UNTAKEN) not in ENROLMENT_SATISFYING:
            return False
    return True


def apply_redesign(graph: CurriculumGraph, spec: RedesignSpec) -> CurriculumGraph:
    """Return a new graph with the redesign applied; the base graph is untouched."""
    edges = set(graph.prereq_edges)
    for e in spec.edges_removed:
        e = tuple(e)
        if e not in edges:
            raise CurriculumError(f"cannot remove nonexistent edge {e}")
        edges.remove(e)
    for e in spec.edges_added:
        e = tuple(e)
        if e in edges:
            raise CurriculumError(f"edge {e} already present")
        edges.add(e)
    courses = []
    for cid in graph.course_ids:
        c = graph.courses[cid]
        if cid in spec.semester_reassignments:
            c = Course(c.course_id, c.name, int(spec.semester_reassignments[cid]),
                       c.credits, c.backbone)
        courses.append(c)
    for cid in spec.semester_reassignments:
        graph._check(cid)
    for cid in spec.modular_assessment_flags:
        graph._check(cid)
    return CurriculumGraph(
        courses, sorted(edges), plan_length=graph.plan_length,
        modular_flags=graph.modular_flags | spec.modular_assessment_flags,
        bottleneck_min_in_degree=graph.bottleneck_min_in_degree,
        bottleneck_quantile=graph.bottleneck_quantile)


def load_redesign(redesign_source, reassign_source=None) -> RedesignSpec:
    """Read redesign_a1.csv (op,prereq_id,course_id) and optional reassign.csv.

    Ops: `remove`/`add` act on the edge (prereq_id, course_id); `modular`
    flags course_id for modular assessment and leaves prereq_id empty.
    """
    removed, added, modular = [], [], []
    for row in _read_csv(redesign_source, ["op", "prereq_id", "course_id"]):
        op = row["op"].strip().lower()
        edge = (row["prereq_id"].strip(), row["course_id"].strip())
        if op == "remove":
            removed.append(edge)
        elif op == "add":
            added.append(edge)
        elif op == "modular":
            modular.append(edge[1])
        else:
            raise CurriculumError(f"unknown redesign op: {op!r}")
    reassign = {}
    if reassign_source is not None:
        for row in _read_csv(reassign_source, ["course_id", "new_semester"]):
            reassign[row["course_id"].strip()] = int(row["new_semester"])
    return RedesignSpec(edges_removed=tuple(removed), edges_added=tuple(added),
                        semester_reassignments=reassign,
                        modular_assessment_flags=frozenset(modular))


def betweenness_centrality(graph: CurriculumGraph) -> dict:
    """Directed node betweenness over course nodes (grad sink excluded).

    Brandes' accumulation over BFS shortest paths; graphs here have at most a
    few dozen nodes.
    """
    bc = {cid: 0.0 for cid in graph.course_ids}
    for s in graph.course_ids:
        stack = []
        preds = {cid: [] for cid in graph.course_ids}
        sigma = {cid: 0.0 for cid in graph.course_ids}
        dist = {cid: -1 for cid in graph.course_ids}
        sigma[s] = 1.0
        dist[s] = 0
        queue = [s]
        while queue:
            v = queue.pop(0)
            stack.append(v)
            for w in graph.successors(v):
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = {cid: 0.0 for cid in graph.course_ids}
        while stack:
            w = stack.pop()
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return bc


def bottleneck_set(graph: CurriculumGraph, min_in_degree: int, betweenness_quantile: float) -> frozenset:
    """Courses that are structurally central: high in-degree or top-quantile betweenness."""
    result = {cid for cid in graph.course_ids if graph.in_degree(cid) >= min_in_degree}
    k = int(betweenness_quantile * graph.n_courses)
    if k > 0:
        bc = betweenness_centrality(graph)
        ranked = sorted(graph.course_ids, key=lambda cid: (-bc[cid], cid))
        result.update(ranked[:k])
    return frozenset(result)
