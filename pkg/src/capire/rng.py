"""Counter-based random streams.

Every draw is a pure function of
(master_seed, scenario_index, replication, agent_id, semester, phase, draw_index),
hashed through chained splitmix64 finalizers.  There is no shared generator
state, so parallel and serial execution orders produce identical draws.

Two bit-identical implementations exist: a uint64 one compiled by numba and a
masked Python-int one used when CAPIRE_NO_NUMBA is set (numpy scalar uint64
arithmetic warns on overflow, so the fallback avoids it).  Their exact parity
is covered by tests.
"""

import math

import numpy as np

from capire._jit import NUMBA_DISABLED

# phase tags for the per-semester draw streams
PH_INIT_STRESS = 0
PH_INIT_BELONGING = 1
PH_OUTCOME = 2
PH_CONVERT = 3
PH_DROPOUT = 4

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


def _mix_py(h: int, v: int) -> int:
    # int() lifts numpy scalars to Python ints before the 64-bit mask
    h = (h ^ (int(v) & _MASK)) & _MASK
    h = (h + _GAMMA) & _MASK
    z = h
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return (z ^ (z >> 31)) & _MASK


def _u01_py(seed, scen, rep, agent, sem, phase, draw):
    z = _mix_py(int(seed) & _MASK, scen)
    z = _mix_py(z, rep)
    z = _mix_py(z, agent)
    z = _mix_py(z, sem)
    z = _mix_py(z, phase)
    z = _mix_py(z, draw)
    return float(z >> 11) * _INV53


if NUMBA_DISABLED:
    u01 = _u01_py
else:
    from numba import njit

    _U = np.uint64
    _C_GAMMA = _U(_GAMMA)
    _C_MIX1 = _U(_MIX1)
    _C_MIX2 = _U(_MIX2)
    _S30, _S27, _S31, _S11 = _U(30), _U(27), _U(31), _U(11)

    @njit(cache=True)
    def _mix_u64(h, v):
        h = h ^ _U(v)
        h = h + _C_GAMMA
        z = h
        z = (z ^ (z >> _S30)) * _C_MIX1
        z = (z ^ (z >> _S27)) * _C_MIX2
        return z ^ (z >> _S31)

    @njit(cache=True)
    def u01(seed, scen, rep, agent, sem, phase, draw):
        z = _mix_u64(_U(seed), scen)
        z = _mix_u64(z, rep)
        z = _mix_u64(z, agent)
        z = _mix_u64(z, sem)
        z = _mix_u64(z, phase)
        z = _mix_u64(z, draw)
        return float(z >> _S11) * _INV53


def _normal_impl(seed, scen, rep, agent, sem, phase, draw):
    # Box-Muller; two uniforms per normal draw
    u1 = 1.0 - u01(seed, scen, rep, agent, sem, phase, 2 * draw)
    u2 = u01(seed, scen, rep, agent, sem, phase, 2 * draw + 1)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


if NUMBA_DISABLED:
    normal = _normal_impl
else:
    normal = njit(cache=True)(_normal_impl)


class AgentStream:
    """Draw stream bound to one (seed, scenario, replication, agent) identity."""

    def __init__(self, master_seed: int, scenario_index: int = 0, replication: int = 0, agent_id: int = 0):
        self.master_seed = master_seed & _MASK
        self.scenario_index = scenario_index
        self.replication = replication
        self.agent_id = agent_id

    def uniform(self, semester: int, phase: int, draw: int) -> float:
        return u01(self.master_seed, self.scenario_index, self.replication,
                   self.agent_id, semester, phase, draw)

    def normal(self, semester: int, phase: int, draw: int) -> float:
        return normal(self.master_seed, self.scenario_index, self.replication,
                      self.agent_id, semester, phase, draw)

    def for_agent(self, agent_id: int) -> "AgentStream":
        return AgentStream(self.master_seed, self.scenario_index, self.replication, agent_id)
