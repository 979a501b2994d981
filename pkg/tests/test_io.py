import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polyak_lsa import io
from polyak_lsa.builders import build, example_configs, load_setup
from polyak_lsa.errors import SchemaError
from polyak_lsa.lsa import Record, RunConfig, run
from polyak_lsa.oracles import GaussianOracle


def base_spec():
    return {
        "schema_version": 1,
        "name": "t",
        "seed": 1,
        "problem": {"matrix": [[1.0, 0.0], [0.0, 2.0]], "vector": [1.0, 1.0]},
        "oracle": {"kind": "gaussian", "params": {"a_std": 0.0, "b_std": 1.0}},
        "run": {"eta": 0.1, "T": 100},
    }


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_round_trip(x):
    assert json.loads(io.dumps({"x": x}))["x"] == x


def test_special_values_and_complex():
    text = io.dumps({"a": [math.nan, math.inf, -math.inf], "c": 1 - 2j})
    obj = json.loads(text)
    assert obj["a"] == ["NaN", "Infinity", "-Infinity"]
    arr = io.as_array(obj["a"])
    assert math.isnan(arr[0]) and arr[1] == math.inf and arr[2] == -math.inf
    assert io.as_array([obj["c"]])[0] == 1 - 2j


def test_numpy_values():
    obj = json.loads(io.dumps({"m": np.arange(4.0).reshape(2, 2), "i": np.int64(3),
                               "b": np.bool_(True)}))
    assert obj == {"m": [[0.0, 1.0], [2.0, 3.0]], "i": 3, "b": True}


def test_trajectory_csv(tmp_path):
    o = GaussianOracle.isotropic(np.eye(2), [1.0, 1.0], b_std=1.0)
    t = run(o.problem, o, RunConfig(eta=0.1, T=5, seed=0, record=Record.parse("full")))
    path = io.trajectory_csv(tmp_path / "traj.csv", t)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,theta_1,theta_2"
    assert len(lines) == 1 + 6
    assert [float(x) for x in lines[-1].split(",")[1:]] == list(t.final)


def test_valid_spec_builds():
    s = build(io.validate_spec(base_spec()))
    assert s.problem.dimension == 2 and s.run.T == 100


@pytest.mark.parametrize("mutate,path", [
    (lambda s: s.update(extra=1), "extra"),
    (lambda s: s["problem"].update(bogus=1), "problem.bogus"),
    (lambda s: s["run"].update(eta="fast"), "run.eta"),
    (lambda s: s["run"].pop("T"), "run"),
    (lambda s: s.update(schema_version=2), "schema_version"),
    (lambda s: s["oracle"].update(kind="magic"), "oracle"),
    (lambda s: s["oracle"]["params"].update(c_std=1.0), "oracle.params.c_std"),
    (lambda s: s.pop("problem"), "problem"),
])
def test_schema_errors_name_the_path(mutate, path):
    spec = base_spec()
    mutate(spec)
    with pytest.raises(SchemaError) as exc:
        build(io.validate_spec(spec))
    assert exc.value.path.startswith(path)
    assert path in str(exc.value)


def test_problem_forbidden_for_self_describing_oracles():
    spec = base_spec()
    spec["oracle"] = {"kind": "counterexample", "params": {"d": 2}}
    with pytest.raises(SchemaError) as exc:
        io.validate_spec(spec)
    assert "problem" in str(exc.value)


def test_overrides(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(base_spec()))
    spec = io.load_spec(p, ["run.eta=0.05", "run.record=\"full\"", "seed=7"])
    assert spec["run"]["eta"] == 0.05 and spec["run"]["record"] == "full" and spec["seed"] == 7
    with pytest.raises(SchemaError):
        io.load_spec(p, ["run.unknown=1"])
    with pytest.raises(SchemaError):
        io.load_spec(p, ["noequals"])


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(SchemaError):
        io.load_spec(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(SchemaError):
        io.load_spec(bad)


@pytest.mark.parametrize("name", sorted(example_configs()))
def test_shipped_configs_build(name):
    s = load_setup(f"example:{name}")
    assert s.problem.dimension >= 1


def test_shipped_config_names():
    assert {"example1_regression", "example2_momentum", "example3_td_exact",
            "example4_td_linear", "example5_minimax"} <= set(example_configs())
