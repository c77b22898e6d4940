"""Archetype table, apportionment, and cohort initialisation."""

import io

import numpy as np
import pytest

from capire.population import (Archetype, PopulationError, apportion,
                               archetype_arrays, init_agent, load_archetypes,
                               sample_cohort)
from capire.rng import AgentStream


def _arch(aid="V1", group="vulnerable", prop=1.0, **kw):
    defaults = dict(pass_logit_shift=-0.5, hazard_sensitivity=1.0,
                    stress0_mean=0.5, stress0_sd=0.1,
                    belonging0_mean=0.5, belonging0_sd=0.1, max_load=3)
    defaults.update(kw)
    return Archetype(aid, group, prop, **defaults)


def test_validation():
    with pytest.raises(PopulationError, match="unknown group"):
        _arch(group="other")
    with pytest.raises(PopulationError, match="hazard_sensitivity"):
        _arch(hazard_sensitivity=0.0)
    with pytest.raises(PopulationError, match="max_load"):
        _arch(max_load=0)
    with pytest.raises(PopulationError, match="sum"):
        apportion([_arch(prop=0.4), _arch("S1", "stable", 0.4)], 10)


def test_apportion_largest_remainder():
    table = [_arch("V1", "vulnerable", 0.6), _arch("S1", "stable", 0.4)]
    out = apportion(table, 10)
    assert (out[:6] == 0).all() and (out[6:] == 1).all()
    # remainder seats go to the largest fractional parts
    table = [_arch("A1", "vulnerable", 1 / 3), _arch("B1", "vulnerable", 1 / 3),
             _arch("C1", "stable", 1 / 3)]
    out = apportion(table, 10)
    counts = np.bincount(out, minlength=3)
    assert sorted(counts.tolist()) == [3, 3, 4]
    assert counts.sum() == 10


def test_apportion_deterministic_and_total():
    table = [_arch("V1", "vulnerable", 0.57), _arch("S1", "stable", 0.43)]
    a = apportion(table, 1343)
    b = apportion(table, 1343)
    assert (a == b).all()
    assert len(a) == 1343


def test_init_agent_clamped_and_deterministic():
    arch = _arch(stress0_mean=0.95, stress0_sd=0.5, belonging0_mean=0.05,
                 belonging0_sd=0.5)
    stream = AgentStream(7)
    agents = [init_agent(arch, stream.for_agent(i), 4) for i in range(200)]
    stresses = np.array([a.stress for a in agents])
    belongings = np.array([a.belonging for a in agents])
    assert ((stresses >= 0) & (stresses <= 1)).all()
    assert ((belongings >= 0) & (belongings <= 1)).all()
    assert (stresses == np.array(
        [init_agent(arch, stream.for_agent(i), 4).stress for i in range(200)])).all()
    # clamping engaged at both ends for these extreme parameters
    assert (stresses == 1.0).any()
    assert (belongings == 0.0).any()


def test_sample_cohort_shapes():
    table = [_arch("V1", "vulnerable", 0.6, max_load=3),
             _arch("S1", "stable", 0.4, max_load=4)]
    agents = sample_cohort(table, 10, AgentStream(1), 5)
    assert [a.agent_id for a in agents] == list(range(10))
    assert sum(a.archetype_id == "V1" for a in agents) == 6
    assert all(a.approved.shape == (5,) and not a.approved.any() for a in agents)
    assert all(a.is_active() for a in agents)


def test_archetype_arrays_alignment():
    table = [_arch("V1", "vulnerable", 0.6, max_load=3),
             _arch("S1", "stable", 0.4, max_load=4, pass_logit_shift=0.4)]
    arr = archetype_arrays(table)
    assert arr.max_load.tolist() == [3, 4]
    assert arr.vulnerable.tolist() == [True, False]
    assert arr.pass_shift[1] == 0.4


def test_load_archetypes_file_checks():
    good = io.StringIO(
        "archetype_id,group,proportion,pass_logit_shift,hazard_sensitivity,"
        "stress0_mean,stress0_sd,belonging0_mean,belonging0_sd,max_load\n"
        "V1,vulnerable,0.6,-0.9,1.5,0.6,0.1,0.42,0.1,3\n"
        "S1,stable,0.4,0.4,0.35,0.35,0.1,0.6,0.1,4\n")
    table = load_archetypes(good)
    assert len(table) == 2 and table[0].group == "vulnerable"
    bad = io.StringIO("archetype_id,group\nV1,vulnerable\n")
    with pytest.raises(PopulationError, match="header"):
        load_archetypes(bad)


def test_shipped_archetypes(shipped_inputs):
    table = shipped_inputs.archetypes
    assert abs(sum(a.proportion for a in table) - 1.0) < 1e-9
    groups = {a.group for a in table}
    assert groups == {"vulnerable", "stable"}
