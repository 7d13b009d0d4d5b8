"""Smoke tests for the shiftlab python module.

Dependency-free on purpose: run directly (python smoke_test.py) or under
pytest. Deep numeric coverage lives in the C++ suites; this only proves the
bindings round-trip and the headline behaviors survive the boundary.
"""

import json

import shiftlab


def test_version():
    assert shiftlab.__version__ == shiftlab.version()
    assert len(shiftlab.__version__.split(".")) == 3


def test_scenarios_run_and_are_deterministic():
    names = shiftlab.scenario_names()
    assert sorted(names) == [
        "adagraph",
        "bat",
        "cumix",
        "dg",
        "latent",
        "mib",
        "onda",
        "owr",
    ]
    report = shiftlab.run_scenario("mib", seed=2)
    assert report["scenario"] == "mib"
    assert report["seed"] == 2
    assert report["ok"] is True
    assert report["metrics"]["old_miou_gap"] >= 0.2

    config = json.dumps({"scenario": "owr", "seed": 5, "params": {}})
    assert shiftlab.run_scenario_json(config) == shiftlab.run_scenario_json(config)

    pretty = shiftlab.format_report_json(shiftlab.run_scenario_json(config))
    assert "owr" in pretty and "seed" in pretty


def test_scenario_validation():
    try:
        shiftlab.run_scenario("nope", seed=0)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown scenario must raise ValueError")
    try:
        shiftlab.run_scenario("mib", seed=0, params={"bogus_knob": 1})
    except ValueError:
        pass
    else:
        raise AssertionError("unknown param must raise ValueError")


def test_gradcheck():
    ops = shiftlab.gradcheck_ops()
    assert "mda_backward" in ops and "negative_control" in ops
    for op in ops:
        result = shiftlab.gradcheck(op, trials=20)
        expect = op != "negative_control"
        assert result["pass"] is expect, (op, result)
        if expect:
            assert result["max_rel_error"] <= 1e-6


def test_dataset_roundtrip():
    text = shiftlab.gen_synthetic({"classes": 3, "domains": 2, "dim": 4}, seed=9)
    assert text == shiftlab.gen_synthetic(
        {"classes": 3, "domains": 2, "dim": 4}, seed=9
    )
    assert text.startswith("SHIFTLAB-DS v1 dim=4 classes=3 domains=2")
    ds = shiftlab.parse_dataset(text)
    assert ds["dim"] == 4 and ds["classes"] == 3 and ds["domains"] == 2
    assert len(ds["features"]) == len(ds["labels"]) == len(ds["domain_of"])

    report = shiftlab.run_scenario("dg", seed=1)
    assert report["ok"] is True and "dataset" not in report


def test_primitives():
    probs = shiftlab.softmax([0.3, -1.2, 2.0])
    assert abs(sum(probs) - 1.0) < 1e-12
    assert max(probs) == probs[2]

    assert shiftlab.param_overhead(1, 1, 6) == 1.0 + 5.0 / 32.0

    warmup, beta_max = 100.0, 0.7
    assert shiftlab.schedule(0.0, warmup, beta_max) == (0.0, 0.0)
    assert shiftlab.schedule(warmup, warmup, beta_max) == (0.0, beta_max)
    assert shiftlab.schedule(2.0 * warmup, warmup, beta_max) == (1.0, beta_max)
    assert shiftlab.schedule(3.0 * warmup, warmup, beta_max) == (1.0, beta_max)

    a = [1.0, 2.0, 3.0]
    assert shiftlab.mix3(a, [9.0, 9.0, 9.0], [-4.0, 0.0, 4.0], 1.0, 1) == a

    normalized = shiftlab.mda_normalize(
        [[1.0, 5.0], [3.0, 9.0]], [[1.0], [1.0]], [1.0, 1.0], [0.0, 0.0]
    )
    for row in normalized:
        assert all(abs(v) < 10.0 for v in row)
    assert normalized[0][0] < 0.0 < normalized[1][0]

    rejected = [shiftlab.UNKNOWN] * 4
    metrics = shiftlab.owr_metrics([0, 1, 0, 1], rejected, [0, 1, 1, 0], rejected)
    assert metrics["owr"] == 0.5 and metrics["owr_h"] == 0.0


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for test in tests:
        test()
        print("ok", test.__name__)
    print(f"{len(tests)} python smoke tests passed")


if __name__ == "__main__":
    main()
