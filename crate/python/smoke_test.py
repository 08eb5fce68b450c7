"""Smoke test for the prefemo_py extension module.

Build and install first:
    pip install -e crates/python --no-build-isolation
then run:
    python python/smoke_test.py
"""

import json
import math
import tempfile

import prefemo_py as pf


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    f = pf.evaluate("zdt1", [0.25] + [0.0] * 29)
    assert close(f[0], 0.25) and close(f[1], 0.5), f

    assert pf.dominates([0.1, 0.2], [0.2, 0.2])
    assert pf.nondominated_sort([[0.1, 0.9], [0.9, 0.1], [1.0, 1.0]]) == [[0, 1], [2]]
    assert len(pf.das_dennis(3, 12)) == 91
    assert pf.g_flag([0.3, 0.7], [0.5, 0.5]) == 0

    assert close(pf.ep_accuracy([[0.4, 0.6]], [0.3, 0.5]), 0.2)
    assert close(pf.hypervolume([[0.5, 0.5]], [1.0, 1.0]), 0.25)
    assert close(pf.igd([[0.0, 1.0], [1.0, 0.0]], [[0.0, 1.0], [1.0, 0.0]]), 0.0)

    zr = [0.5, 1.0 - math.sqrt(0.5)]
    result = pf.run("rnsga2", "zdt1", 40, 2000, seed=7, reference_points=[zr])
    assert result["evaluations"] <= 2000
    front = [m["f"] for m in result["final_population"]]
    ep = pf.ep_accuracy(front, zr)
    assert ep < result["records"][0]["ep"], (ep, result["records"][0]["ep"])
    again = pf.run("rnsga2", "zdt1", 40, 2000, seed=7, reference_points=[zr])
    assert again == result, "runs are not reproducible"

    assert "zdt1-bad-refs" in pf.presets()
    config = {
        "problems": [{"family": "zdt1"}],
        "algorithms": [{"kind": "gnsga2", "population_size": 20}, {"kind": "pbea", "population_size": 20}],
        "scenarios": [{"id": "balanced", "points": [zr]}],
        "replications": 5,
        "budget": 400,
        "front_samples": 200,
    }
    with tempfile.TemporaryDirectory() as store:
        report = pf.run_experiment(json.dumps(config), store, jobs=2)
        assert report == {"executed": 10, "skipped": 0, "failed": 0}, report
        summary = pf.summarize(store, "EP")
        assert [a["n"] for a in summary["cells"][0]["algorithms"]] == [5, 5]

    session = pf.Session.portfolio(3, "moead-nums", seed=1, budget=91 * 7, interaction_period=2)
    assert session.phase == "Running"
    snap = session.advance()
    assert snap["phase"] == "AwaitingPreference" and snap["senses"] == ["max", "min", "max"]
    session.elicit([-0.07, 3.0, -1.15])
    assert session.state()["history"] == [{"generation": 0, "z": [-0.07, 3.0, -1.15]}]
    while session.phase != "Finished":
        if session.advance()["phase"] == "AwaitingPreference":
            session.elicit([-0.02, 0.001, 0.0])
    assert session.state()["generation"] == 6

    print("prefemo_py smoke test passed")


if __name__ == "__main__":
    main()
