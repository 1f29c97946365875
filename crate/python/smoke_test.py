#!/usr/bin/env python3
"""Smoke test for the multicut_py extension module.

Builds the cdylib with cargo if needed, loads it, and exercises the main
types and operations end to end. Run from anywhere:

    python3 python/smoke_test.py
"""

import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    built = REPO / "target" / "release" / "libmulticut_py.so"
    if not built.exists():
        subprocess.run(
            ["cargo", "build", "-p", "multicut-py", "--release"],
            cwd=REPO,
            check=True,
        )
    staging = Path(tempfile.mkdtemp(prefix="multicut_py_"))
    shutil.copy(built, staging / "multicut_py.so")
    sys.path.insert(0, str(staging))
    import multicut_py

    return multicut_py


def main():
    mc = load_module()

    # instance construction and the triangle fixture
    triangle = mc.Graph(3, [(0, 1, -5.0), (1, 2, -5.0), (0, 2, 4.0)])
    assert triangle.node_count == 3 and triangle.edge_count == 3
    assert triangle.cost([True, True, False]) == -10.0
    assert not triangle.is_feasible([True, False, False])
    assert triangle.is_feasible([True, True, False])
    assert triangle.connected_components([True, True, False]) == [0, 1, 0]

    # text format round trip
    again = mc.Graph.from_mcg(triangle.to_mcg())
    assert again.edges() == triangle.edges()

    # solvers agree on the optimum
    exact = mc.solve_exact(triangle)
    assert exact.status == "optimal" and abs(exact.objective + 10.0) < 1e-9
    heuristic = mc.solve_gaec(triangle)
    assert heuristic.labels == exact.labels
    assert mc.optimal_objective_ratio(heuristic.objective, exact.objective) == 1.0

    # cycle machinery: K4 has exactly its four triangles, chord checks kill
    # the 4-cycles
    k4 = mc.Graph(4, [(u, v, 1.0) for u in range(4) for v in range(u + 1, 4)])
    assert len(k4.chordless_cycles(3)) == 4
    assert len(k4.chordless_cycles(4)) == 4

    # rounding repairs an infeasible thresholding
    rounded = triangle.round_to_feasible([0.9, 0.3, 0.2])
    assert rounded == [False, False, False]
    assert triangle.is_feasible(rounded)

    # dataset generation with exact ground truth
    instances = mc.generate_dataset("irismp-s", 5, seed=7, label="exact")
    assert len(instances) == 5
    for inst in instances:
        assert inst.graph.is_feasible(inst.optimal_labels)
        assert abs(inst.graph.cost(inst.optimal_labels) - inst.optimal_cost) < 1e-9
        gaec = mc.solve_gaec(inst.graph)
        assert gaec.objective >= inst.optimal_cost - 1e-9

    ratios = [
        mc.optimal_objective_ratio(mc.solve_gaec(i.graph).objective, i.optimal_cost)
        for i in instances
    ]
    assert 0.0 <= mc.harmonic_mean(ratios) <= 1.0

    # untrained model inference is deterministic and always feasible
    model = mc.Model.new_random(depth=2, width=8, seed=3)
    graph = mc.scaling_graph(40, seed=1)
    a = model.predict(graph)
    b = model.predict(graph)
    assert a.probs == b.probs and a.labels == b.labels
    assert graph.is_feasible(a.labels)
    assert len(a.node_embeddings) == graph.node_count
    assert all(0.0 <= p <= 1.0 for p in a.probs)

    # checkpoint text round trip
    clone = mc.Model.loads(model.dumps())
    assert clone.predict(graph).probs == a.probs

    # errors surface as ValueError
    try:
        mc.Graph(2, [(0, 0, 1.0)])
    except ValueError as err:
        assert "self-loop" in str(err)
    else:
        raise AssertionError("self-loop must be rejected")

    print(json.dumps({"smoke_test": "ok", "gaec_hmean": mc.harmonic_mean(ratios)}))


if __name__ == "__main__":
    main()
