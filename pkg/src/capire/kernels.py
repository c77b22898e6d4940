"""Hot simulation kernels.

Everything here is a plain function over flat arrays, compiled with numba
unless CAPIRE_NO_NUMBA is set.  The object-level engine API drives the same
functions one agent at a time, so fused cohort runs and per-agent runs are
bit-identical within a mode.

One semester executes five phases in fixed order: enrolment, coursework
outcomes, exam conversion, snapshot + latent update, dropout draw.  The
dropout draw sees the current semester's failures.
"""

from __future__ import annotations

import math
from collections import namedtuple

import numpy as np

from capire._jit import maybe_njit
from capire.features import snapshot_into
from capire.rng import u01, normal, PH_INIT_STRESS, PH_INIT_BELONGING, \
    PH_OUTCOME, PH_CONVERT, PH_DROPOUT

EngineArrays = namedtuple(
    "EngineArrays",
    ["base_logit", "friction", "conv_prob",
     "eta0", "eta1", "eta2", "eta3", "eta4", "eta5", "eta6",
     "alpha_fail", "alpha_pending", "alpha_block", "alpha_recover",
     "beta_pass", "beta_fail", "beta_delay",
     "nominal", "horizon"],
)

# record-row column layout (shared with experiment CSV writer)
COL_AGENT = 0
COL_SEM = 1
COL_ARCH = 2
COL_ENROLLED = 3
COL_PASSED = 4
COL_NEW = 5
COL_FAILED = 6
COL_TOTAL = 7
COL_STRESS = 8
COL_BELONGING = 9
COL_BACKBONE = 10
COL_BLOCKED = 11
COL_DISTANCE = 12
COL_BOTTLENECK = 13
COL_PREREQ_MET = 14
COL_MEAN_IN = 15
COL_MEAN_OUT = 16
COL_TERMINAL = 17
NCOLS = 18

TERM_NONE = 0
TERM_DROPOUT = 1
TERM_GRADUATION = 2


@maybe_njit
def logistic(x):
    return 1.0 / (1.0 + math.exp(-x))


@maybe_njit
def clamp01(x):
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


@maybe_njit
def pass_probability(base_logit, shift, boost, friction):
    return logistic(base_logit + shift + boost - friction)


@maybe_njit
def target_load(max_load, stress, belonging):
    raw = max_load * (1.0 - 0.5 * stress) * (0.5 + 0.5 * belonging)
    load = int(math.floor(raw + 0.5))
    if load < 1:
        load = 1
    if load > max_load:
        load = max_load
    return load


@maybe_njit
def _ranks_before(g, v, w):
    # backbone first, then earlier nominal semester, then higher out-degree,
    # then course_id lexicographic
    if g.backbone[v] != g.backbone[w]:
        return g.backbone[v]
    if g.nominal_sem[v] != g.nominal_sem[w]:
        return g.nominal_sem[v] < g.nominal_sem[w]
    if g.out_deg[v] != g.out_deg[w]:
        return g.out_deg[v] > g.out_deg[w]
    return g.lex_rank[v] < g.lex_rank[w]


@maybe_njit
def select_enrolment_arrays(g, approved, pending, stress, belonging, max_load, sel_buf):
    """Fill sel_buf with enrolled course indices in rank order; return count."""
    n = approved.shape[0]
    load = target_load(max_load, stress, belonging)
    n_sel = 0
    for _ in range(load):
        best = -1
        for v in range(n):
            if approved[v] or pending[v]:
                continue
            taken = False
            for k in range(n_sel):
                if sel_buf[k] == v:
                    taken = True
                    break
            if taken:
                continue
            ok = True
            for j in range(g.pre_indptr[v], g.pre_indptr[v + 1]):
                p = g.pre_idx[j]
                if not (approved[p] or pending[p]):
                    ok = False
                    break
            if not ok:
                continue
            if best < 0 or _ranks_before(g, v, best):
                best = v
        if best < 0:
            break
        sel_buf[n_sel] = best
        n_sel += 1
    return n_sel


@maybe_njit
def latent_update(stress, belonging, n_enrolled, n_pass, n_fail, n_pending,
                  blocked_fraction, delay_fraction, ep, stress_relief, belonging_gain):
    denom = n_enrolled if n_enrolled > 1 else 1
    pend = n_pending / 4.0
    if pend > 1.0:
        pend = 1.0
    s = (stress
         + ep.alpha_fail * n_fail / denom
         + ep.alpha_pending * pend
         + ep.alpha_block * blocked_fraction
         - ep.alpha_recover * n_pass / denom
         - stress_relief)
    b = (belonging
         + ep.beta_pass * n_pass / denom
         - ep.beta_fail * n_fail / denom
         - ep.beta_delay * delay_fraction
         + belonging_gain)
    return clamp01(s), clamp01(b)


@maybe_njit
def hazard_value(sens, ep, delay_fraction, blocked_fraction, distance, stress,
                 belonging, backbone_completion):
    x = (ep.eta0
         + ep.eta1 * delay_fraction
         + ep.eta2 * blocked_fraction
         + ep.eta3 * distance
         + ep.eta4 * stress
         - ep.eta5 * belonging
         - ep.eta6 * backbone_completion)
    return clamp01(sens * logistic(x))


@maybe_njit
def step_semester_arrays(g, ep, ef, pass_shift, hazard_sens, max_load, vulnerable,
                         seed, scen, rep, agent, t,
                         approved, pending, fail_count, stress, belonging,
                         sel_buf, outcome_buf, conv_buf, f_scratch, out_row):
    """One semester for one agent.  Mutates the status arrays, fills out_row
    (see COL_*), and returns (stress', belonging', terminal)."""
    n = approved.shape[0]

    # phase 1: enrolment
    n_sel = select_enrolment_arrays(g, approved, pending, stress, belonging,
                                    max_load, sel_buf)

    # phase 2: coursework outcomes
    n_pass = 0
    n_fail = 0
    for k in range(n_sel):
        c = sel_buf[k]
        p = pass_probability(ep.base_logit[c], pass_shift, ef.boost[c], ep.friction[c])
        if u01(seed, scen, rep, agent, t, PH_OUTCOME, c) < p:
            pending[c] = True
            outcome_buf[k] = 1
            n_pass += 1
        else:
            fail_count[c] += 1
            outcome_buf[k] = 0
            n_fail += 1

    # phase 3: exam conversion (includes this semester's regulars)
    n_conv = 0
    for c in range(n):
        if pending[c]:
            q = ep.conv_prob * ef.conv_mult[c]
            if q > 1.0:
                q = 1.0
            if u01(seed, scen, rep, agent, t, PH_CONVERT, c) < q:
                pending[c] = False
                approved[c] = True
                conv_buf[n_conv] = c
                n_conv += 1
    n_approved = 0
    n_pending = 0
    for c in range(n):
        if approved[c]:
            n_approved += 1
        elif pending[c]:
            n_pending += 1

    # phase 4: structural snapshot and latent update
    backbone, blocked, distance, bottleneck, prereq_met, mean_in, mean_out = \
        snapshot_into(g, approved, f_scratch)
    blocked_fraction = blocked / g.total_credits
    delay = ep.nominal * t - n_approved
    if delay < 0.0:
        delay = 0.0
    delay_fraction = delay / n

    relief = ef.stress_relief_b
    gain = ef.belonging_gain_b
    if vulnerable:
        relief += ef.stress_relief_c * ef.c_vuln_mult
        gain += ef.belonging_gain_c * ef.c_vuln_mult
    else:
        relief += ef.stress_relief_c
        gain += ef.belonging_gain_c

    stress, belonging = latent_update(
        stress, belonging, n_sel, n_pass, n_fail, n_pending,
        blocked_fraction, delay_fraction, ep, relief, gain)

    # phase 5: graduation or dropout draw
    terminal = TERM_NONE
    if n_approved == n:
        terminal = TERM_GRADUATION
    else:
        h = hazard_value(hazard_sens, ep, delay_fraction, blocked_fraction,
                         distance, stress, belonging, backbone)
        if u01(seed, scen, rep, agent, t, PH_DROPOUT, 0) < h:
            terminal = TERM_DROPOUT

    out_row[COL_SEM] = t
    out_row[COL_ENROLLED] = n_sel
    out_row[COL_PASSED] = n_pass
    out_row[COL_NEW] = n_conv
    out_row[COL_FAILED] = n_fail
    out_row[COL_TOTAL] = n_approved
    out_row[COL_STRESS] = stress
    out_row[COL_BELONGING] = belonging
    out_row[COL_BACKBONE] = backbone
    out_row[COL_BLOCKED] = blocked
    out_row[COL_DISTANCE] = distance
    out_row[COL_BOTTLENECK] = bottleneck
    out_row[COL_PREREQ_MET] = prereq_met
    out_row[COL_MEAN_IN] = mean_in
    out_row[COL_MEAN_OUT] = mean_out
    out_row[COL_TERMINAL] = terminal
    return stress, belonging, terminal


@maybe_njit
def init_latent(arch, ai, seed, scen, rep, agent):
    stress = clamp01(arch.stress0_mean[ai]
                     + arch.stress0_sd[ai] * normal(seed, scen, rep, agent, 0, PH_INIT_STRESS, 0))
    belonging = clamp01(arch.belonging0_mean[ai]
                        + arch.belonging0_sd[ai] * normal(seed, scen, rep, agent, 0, PH_INIT_BELONGING, 0))
    return stress, belonging


@maybe_njit
def simulate_cohort_arrays(seed, scen, rep, archetype_of, arch, g, ep, ef, records):
    """Simulate every agent of one (scenario, replication) cohort.

    records must have room for n_students * horizon rows; returns the number
    of rows written.  Rows are agent-major and semester-ordered."""
    n_students = archetype_of.shape[0]
    n = g.credits.shape[0]
    approved = np.zeros(n, dtype=np.bool_)
    pending = np.zeros(n, dtype=np.bool_)
    fail_count = np.zeros(n, dtype=np.int64)
    sel_buf = np.empty(n, dtype=np.int64)
    outcome_buf = np.empty(n, dtype=np.int64)
    conv_buf = np.empty(n, dtype=np.int64)
    f_scratch = np.empty(n, dtype=np.float64)

    row = 0
    for agent in range(n_students):
        ai = archetype_of[agent]
        for c in range(n):
            approved[c] = False
            pending[c] = False
            fail_count[c] = 0
        stress, belonging = init_latent(arch, ai, seed, scen, rep, agent)
        for t in range(1, ep.horizon + 1):
            out_row = records[row]
            stress, belonging, terminal = step_semester_arrays(
                g, ep, ef, arch.pass_shift[ai], arch.hazard_sens[ai],
                arch.max_load[ai], arch.vulnerable[ai],
                seed, scen, rep, agent, t,
                approved, pending, fail_count, stress, belonging,
                sel_buf, outcome_buf, conv_buf, f_scratch, out_row)
            out_row[COL_AGENT] = agent
            out_row[COL_ARCH] = ai
            row += 1
            if terminal != TERM_NONE:
                break
    return row


def simulate_cohort(seed, scen_index, rep, archetype_of, arch, g, ep, ef):
    """Allocate the record buffer, run the kernel, return the trimmed array."""
    max_rows = archetype_of.shape[0] * int(ep.horizon)
    records = np.empty((max_rows, NCOLS), dtype=np.float64)
    n_rows = simulate_cohort_arrays(seed, scen_index, rep, archetype_of, arch,
                                    g, ep, ef, records)
    return records[:n_rows]
