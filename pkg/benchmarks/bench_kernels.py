#!/usr/bin/env python3
"""Compare the numba kernels against the pure-numpy fallback.

The backend is chosen at import time from CAPIRE_NO_NUMBA, so each
measurement runs in a fresh subprocess.  Usage:

    python benchmarks/bench_kernels.py [--students N] [--replications R]
"""

import argparse
import json
import os
import subprocess
import sys

_CHILD = r"""
import json, sys, time
from capire.config import load_settings, load_inputs
from capire import policy
from capire.population import apportion, archetype_arrays
from capire.kernels import simulate_cohort
from capire._jit import NUMBA_DISABLED

n_students, n_reps = int(sys.argv[1]), int(sys.argv[2])
settings = load_settings()
inputs = load_inputs(settings)
graph = inputs.base_graph
scen = policy.parse_scenario_id("A0B0C0")
eff = policy.effects(scen, inputs.policy_params, graph, inputs.a1_graph)
g = graph.as_arrays()
ep = inputs.engine_params.as_arrays(graph)
ef = policy.effect_arrays(eff, graph)
arch = archetype_arrays(list(inputs.archetypes))
archetype_of = apportion(list(inputs.archetypes), n_students)

# warm-up replication: includes jit compilation on the numba path
simulate_cohort(settings.master_seed, 0, 0, archetype_of, arch, g, ep, ef)
t0 = time.perf_counter()
rows = 0
for rep in range(n_reps):
    rows += len(simulate_cohort(settings.master_seed, 0, rep,
                                archetype_of, arch, g, ep, ef))
wall = time.perf_counter() - t0
print(json.dumps({"numba": not NUMBA_DISABLED, "wall": wall, "rows": rows,
                  "trajectories": n_students * n_reps}))
"""


def run(no_numba, students, replications):
    env = dict(os.environ, CAPIRE_NO_NUMBA="1" if no_numba else "")
    out = subprocess.run(
        [sys.executable, "-c", _CHILD, str(students), str(replications)],
        env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--students", type=int, default=1343)
    parser.add_argument("--replications", type=int, default=10)
    args = parser.parse_args()

    results = [run(False, args.students, args.replications),
               run(True, args.students, args.replications)]
    print(f"workload: {args.students} students x {args.replications} "
          f"replications, baseline scenario")
    for r in results:
        rate = r["trajectories"] / r["wall"]
        label = "numba kernels " if r["numba"] else "numpy fallback"
        print(f"  {label}: {r['wall']:8.3f}s  "
              f"({rate:10.0f} trajectories/s, {r['rows']} records)")
    speedup = results[1]["wall"] / results[0]["wall"]
    print(f"  speedup: {speedup:.1f}x")


if __name__ == "__main__":
    main()
