import copy
import json

import pytest

from pnscan.errors import ScenarioError
from pnscan.scenario import BUILTIN, SCHEMA, Scenario, policy_label

BASE = {
    "schema_version": 1,
    "name": "t",
    "nodes": [{"id": "A", "position_m": 1.0}, {"id": "B", "position_m": 6.0}],
    "adversary": {"observer_position_m": 0.0},
    "experiment": {"seed": 3},
}


def _with(**patch):
    d = copy.deepcopy(BASE)
    d.update(patch)
    return d


@pytest.mark.parametrize("name", BUILTIN)
def test_builtins_load(name):
    s = Scenario.load(name)
    assert s.name == name
    assert len(s.node_ids) >= 2
    assert s.source == f"builtin:{name}"
    s.build_bus()


def test_defaults_filled():
    s = Scenario.from_dict(BASE)
    assert s.data["bus"]["bit_period_ns"] == 2000.0
    assert s.data["bus"]["sample_rate_hz"] == 125e6
    assert s.adversary["feature"] == "transition_offset"
    assert s.protocol["chunk_bits"] == 32
    assert s.pairs == [("A", "B")]
    assert s.trials == 200
    assert [p.mode for p in s.grid()] == ["none"]
    assert set(s.protocol["seeds"]) == {"A", "B"}


def test_input_is_not_mutated():
    d = copy.deepcopy(BASE)
    Scenario.from_dict(d)
    assert d == BASE


@pytest.mark.parametrize("patch, path", [
    ({"schema_version": 2}, "schema_version"),
    ({"nodes": [{"id": "A", "position_m": -1.0}, {"id": "B", "position_m": 1.0}]}, "nodes/0/position_m"),
    ({"adversary": {"observer_position_m": 0, "feature": "colour"}}, "adversary/feature"),
    ({"protocol": {"chunk_bits": 6}}, "protocol/chunk_bits"),
    ({"evaluation": {"grid": [{"mode": "jitter", "alpha": -0.5}]}}, "evaluation/grid/0/alpha"),
])
def test_schema_errors_carry_path(patch, path):
    with pytest.raises(ScenarioError) as info:
        Scenario.from_dict(_with(**patch))
    assert info.value.path == path
    assert str(info.value).startswith(path)


@pytest.mark.parametrize("patch, path", [
    ({"pairs": [["A", "Z"]]}, "pairs/0/1"),
    ({"pairs": [["A", "A"]]}, "pairs/0"),
    ({"group": {"members": ["A", "Q"]}}, "group/members/1"),
    ({"nodes": [{"id": "A", "position_m": 0}, {"id": "A", "position_m": 3}]}, "nodes"),
    ({"nodes": [{"id": "A", "position_m": 0, "profile": "fancy"}, {"id": "B", "position_m": 3}]},
     "nodes/0/profile"),
])
def test_reference_errors_carry_path(patch, path):
    with pytest.raises(ScenarioError) as info:
        Scenario.from_dict(_with(**patch))
    assert info.value.path == path


def test_unknown_key_rejected():
    with pytest.raises(ScenarioError) as info:
        Scenario.from_dict(_with(colour="red"))
    assert info.value.path == "(root)"


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        Scenario.load("/nonexistent/scenario.json")


def test_bad_json(tmp_path):
    p = tmp_path / "s.json"
    p.write_text("{ not json")
    with pytest.raises(ScenarioError):
        Scenario.load(p)


def test_load_from_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(BASE))
    assert Scenario.load(p).node_ids == ["A", "B"]


def test_overrides_revalidate():
    s = Scenario.from_dict(BASE)
    o = s.with_overrides(seed=9, trials=5, pairs=[("B", "A")], grid=[{"mode": "jitter", "alpha": 0.5}])
    assert (o.seed, o.trials, o.pairs) == (9, 5, [("B", "A")])
    assert policy_label(o.grid()[0]) == "jitter(alpha=0.5)"
    with pytest.raises(ScenarioError):
        s.with_overrides(pairs=[("A", "nobody")])


def test_seed_override_moves_derived_node_seeds():
    s = Scenario.from_dict(BASE)
    o = s.with_overrides(seed=s.seed + 1)
    assert o.node_seed("A") != s.node_seed("A")
    explicit = Scenario.from_dict(_with(protocol={"seeds": {"A": "fixed", "B": "other"}}))
    assert explicit.with_overrides(seed=99).node_seed("A") == b"fixed"


def test_to_json_round_trips():
    s = Scenario.load("minimal")
    again = Scenario.from_dict(json.loads(s.to_json()))
    assert again.to_json() == s.to_json()


def test_schema_is_serializable():
    assert json.loads(json.dumps(SCHEMA))["required"]
