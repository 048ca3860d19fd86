"""Declarative experiment scenarios (versioned JSON) and their validation."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .bus import TransceiverProfile
from .countermeasures import POLICY_MODES, CooperationPolicy
from .errors import PnSError, ScenarioError
from .network import CanBus, NodeConfig
from .seeding import derive_bytes

SCHEMA_VERSION = 1
BUILTIN = ("minimal", "equidistant", "reference16")

_number = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}
_positive = {"type": "number", "exclusiveMinimum": 0}
_probability = {"type": "number", "minimum": 0, "maximum": 1}

_profile = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "canh_dominant_v": _number,
        "canl_dominant_v": _number,
        "drive_conductance": _positive,
        "load_conductance": _nonneg,
        "rise_tau_ns": _positive,
        "fall_tau_ns": _positive,
        "supply_v": _number,
    },
}

_policy = {
    "type": "object",
    "required": ["mode"],
    "additionalProperties": False,
    "properties": {
        "mode": {"enum": list(POLICY_MODES)},
        "n_transceivers": {"type": "integer", "minimum": 1, "maximum": 6},
        "p_isolate": _probability,
        "p_assist": _probability,
        "alpha": {"type": ["number", "null"], "minimum": 0},
        "budget_fraction": _probability,
        "label": {"type": "string"},
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "name", "nodes", "adversary", "experiment"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "bus": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "bit_period_ns": _positive,
                "sample_rate_hz": _positive,
                "noise_sigma_v": _nonneg,
                "propagation_ns_per_m": _positive,
                "cable_resistance_ohm_per_m": _nonneg,
                "termination_ohms": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "bus_length_m": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "soft_resync": {"type": "boolean"},
            },
        },
        "profiles": {"type": "object", "additionalProperties": _profile},
        "nodes": {
            "type": "array",
            "minItems": 2,
            "items": {
                "type": "object",
                "required": ["id", "position_m"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                    "position_m": _nonneg,
                    "profile": {"oneOf": [{"type": "string"}, _profile]},
                    "processing_ns": _nonneg,
                    "sync_jitter_ns": _nonneg,
                    "transceivers": {"type": "integer", "minimum": 1, "maximum": 6},
                },
            },
        },
        "adversary": {
            "type": "object",
            "required": ["observer_position_m"],
            "additionalProperties": False,
            "properties": {
                "observer_position_m": _nonneg,
                "trigger_v": _positive,
                "epsilon_ns": _positive,
                "threshold_sigmas": _positive,
                "feature": {"enum": ["transition_offset", "steady_voltage", "transient_tau"]},
                "advantage_bits": {"type": "integer", "minimum": 10},
            },
        },
        "protocol": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "identifier": {"type": "integer", "minimum": 0, "maximum": 0x7FF},
                "chunk_bits": {"type": "integer", "minimum": 4, "maximum": 32, "multipleOf": 4},
                "target_key_bits": {"type": "integer", "minimum": 1},
                "frame_cap": {"type": "integer", "minimum": 1},
                "seeds": {"type": "object", "additionalProperties": {"type": "string", "minLength": 1}},
            },
        },
        "pairs": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2},
        },
        "countermeasures": {"type": "array", "items": _policy},
        "evaluation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"grid": {"type": "array", "items": _policy, "minItems": 1}},
        },
        "group": {
            "type": "object",
            "required": ["members"],
            "additionalProperties": False,
            "properties": {
                "members": {"type": "array", "items": {"type": "string"}, "minItems": 2},
                "nonce_hex": {"type": "string", "pattern": "^([0-9a-fA-F]{2})+$"},
                "weights": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "prefixItems": [{"type": "string"}, {"type": "string"}, _probability],
                        "minItems": 3,
                        "maxItems": 3,
                    },
                },
            },
        },
        "experiment": {
            "type": "object",
            "required": ["seed"],
            "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer", "minimum": 0},
                "trials": {"type": "integer", "minimum": 1},
            },
        },
    },
}


def _path(error) -> str:
    parts = [str(p) for p in error.absolute_path]
    return "/".join(parts) if parts else "(root)"


@dataclass
class Scenario:
    """A validated scenario with every default filled in."""

    data: dict
    source: str = ""
    defaults_applied: list = field(default_factory=list)

    # -- loading -----------------------------------------------------------
    @classmethod
    def from_dict(cls, data: dict, source: str = "") -> "Scenario":
        validator = jsonschema.Draft202012Validator(SCHEMA)
        errors = sorted(validator.iter_errors(data), key=lambda e: [str(p) for p in e.absolute_path])
        if errors:
            first = errors[0]
            raise ScenarioError(first.message, _path(first))
        scenario = cls(copy.deepcopy(data), source)
        scenario._fill_defaults()
        scenario._check_references()
        return scenario

    @classmethod
    def load(cls, path) -> "Scenario":
        """Load a scenario file, or a built-in scenario by name."""
        text, source = _read(path)
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"not valid JSON: {exc.msg} (line {exc.lineno})") from None
        return cls.from_dict(data, source)

    def _fill_defaults(self):
        d = self.data
        bus = d.setdefault("bus", {})
        for key, value in (
            ("bit_period_ns", 2000.0), ("sample_rate_hz", 125e6), ("noise_sigma_v", 0.010),
            ("propagation_ns_per_m", 5.0), ("cable_resistance_ohm_per_m", 0.05),
            ("termination_ohms", 120.0), ("bus_length_m", None), ("soft_resync", True),
        ):
            bus.setdefault(key, value)
        if bus["sample_rate_hz"] * bus["bit_period_ns"] * 1e-9 < 2:
            raise ScenarioError("fewer than 2 samples per bit", "bus/sample_rate_hz")
        adv = d["adversary"]
        for key, value in (
            ("trigger_v", 0.9), ("epsilon_ns", 1.0), ("threshold_sigmas", 3.0),
            ("feature", "transition_offset"), ("advantage_bits", 2000),
        ):
            adv.setdefault(key, value)
        proto = d.setdefault("protocol", {})
        for key, value in (("identifier", 0x7AA), ("chunk_bits", 32), ("target_key_bits", 128), ("frame_cap", 64)):
            proto.setdefault(key, value)
        seeds = proto.setdefault("seeds", {})
        for node in d["nodes"]:
            if node["id"] not in seeds:
                seeds[node["id"]] = derive_bytes(d["experiment"]["seed"], "node-seed", node["id"])[:16].hex()
                self.defaults_applied.append(f"protocol/seeds/{node['id']}")
            node.setdefault("processing_ns", 40.0)
            node.setdefault("sync_jitter_ns", 0.0)
            node.setdefault("transceivers", 1)
            node.setdefault("profile", "default")
        d.setdefault("profiles", {})
        d.setdefault("countermeasures", [])
        d["experiment"].setdefault("trials", 200)
        ids = [n["id"] for n in d["nodes"]]
        d.setdefault("pairs", [[ids[0], ids[1]]])
        d.setdefault("evaluation", {"grid": [{"mode": "none"}]})

    def _check_references(self):
        d = self.data
        ids = [n["id"] for n in d["nodes"]]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate node id", "nodes")
        known = set(ids)
        for i, node in enumerate(d["nodes"]):
            prof = node["profile"]
            if isinstance(prof, str) and prof != "default" and prof not in d["profiles"]:
                raise ScenarioError(f"unknown profile {prof!r}", f"nodes/{i}/profile")
            if d["bus"]["bus_length_m"] is not None and node["position_m"] > d["bus"]["bus_length_m"]:
                raise ScenarioError("node lies beyond the end of the bus", f"nodes/{i}/position_m")
        for i, (a, b) in enumerate(d["pairs"]):
            for j, n in enumerate((a, b)):
                if n not in known:
                    raise ScenarioError(f"unknown node {n!r}", f"pairs/{i}/{j}")
            if a == b:
                raise ScenarioError("a pair needs two distinct nodes", f"pairs/{i}")
        for name in d["protocol"]["seeds"]:
            if name not in known:
                raise ScenarioError(f"seed for unknown node {name!r}", f"protocol/seeds/{name}")
        group = d.get("group")
        if group:
            for i, n in enumerate(group["members"]):
                if n not in known:
                    raise ScenarioError(f"unknown node {n!r}", f"group/members/{i}")
            for i, (a, b, _) in enumerate(group.get("weights", [])):
                for j, n in enumerate((a, b)):
                    if n not in known:
                        raise ScenarioError(f"unknown node {n!r}", f"group/weights/{i}/{j}")
        for section in ("countermeasures",):
            for i, spec in enumerate(d[section]):
                _policy_from(spec, f"{section}/{i}")
        for i, spec in enumerate(d["evaluation"]["grid"]):
            _policy_from(spec, f"evaluation/grid/{i}")

    # -- accessors ---------------------------------------------------------
    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def seed(self) -> int:
        return int(self.data["experiment"]["seed"])

    @property
    def trials(self) -> int:
        return int(self.data["experiment"]["trials"])

    @property
    def node_ids(self) -> list[str]:
        return [n["id"] for n in self.data["nodes"]]

    @property
    def pairs(self) -> list[tuple[str, str]]:
        return [tuple(p) for p in self.data["pairs"]]

    @property
    def adversary(self) -> dict:
        return self.data["adversary"]

    @property
    def protocol(self) -> dict:
        return self.data["protocol"]

    def node_seed(self, node: str) -> bytes:
        return self.protocol["seeds"][node].encode()

    def policies(self) -> list[CooperationPolicy]:
        return [_policy_from(s, "countermeasures") for s in self.data["countermeasures"]]

    def grid(self) -> list[CooperationPolicy]:
        return [_policy_from(s, "evaluation/grid") for s in self.data["evaluation"]["grid"]]

    def with_overrides(self, *, seed=None, trials=None, pairs=None, grid=None) -> "Scenario":
        """Copy with command-line overrides applied and re-validated."""
        data = copy.deepcopy(self.data)
        if seed is not None:
            data["experiment"]["seed"] = int(seed)
            # seeds derived from the experiment seed follow the override
            for key in self.defaults_applied:
                data["protocol"]["seeds"].pop(key.rsplit("/", 1)[1], None)
        if trials is not None:
            data["experiment"]["trials"] = int(trials)
        if pairs is not None:
            data["pairs"] = [list(p) for p in pairs]
        if grid is not None:
            data["evaluation"] = {"grid": grid}
        return Scenario.from_dict(data, self.source)

    def profile(self, spec) -> TransceiverProfile:
        if isinstance(spec, dict):
            return TransceiverProfile.from_dict(spec)
        if spec == "default" and "default" not in self.data["profiles"]:
            return TransceiverProfile()
        return TransceiverProfile.from_dict(self.data["profiles"][spec])

    def build_bus(self, policies=(), *, transceivers: int | None = None,
                  processing_ns: float | None = None, participants=None, seed: int | None = None) -> CanBus:
        """The bus described by the scenario.

        ``transceivers`` and ``processing_ns`` override the node settings of
        ``participants`` (all nodes when None), which is how evaluation grid
        entries vary the hardware without editing the scenario.
        """
        nodes = []
        for n in self.data["nodes"]:
            touched = participants is None or n["id"] in participants
            nodes.append(NodeConfig(
                id=n["id"],
                position_m=float(n["position_m"]),
                profile=self.profile(n["profile"]),
                transceivers=transceivers if (touched and transceivers) else int(n["transceivers"]),
                processing_ns=processing_ns if (touched and processing_ns is not None) else float(n["processing_ns"]),
                sync_jitter_ns=float(n["sync_jitter_ns"]),
            ))
        b = self.data["bus"]
        try:
            return CanBus(
                nodes, float(self.adversary["observer_position_m"]),
                bit_period_ns=b["bit_period_ns"], sample_rate_hz=b["sample_rate_hz"],
                noise_sigma_v=b["noise_sigma_v"], propagation_ns_per_m=b["propagation_ns_per_m"],
                cable_resistance_ohm_per_m=b["cable_resistance_ohm_per_m"],
                termination_ohms=b["termination_ohms"], bus_length_m=b["bus_length_m"],
                soft_resync=b["soft_resync"], policies=policies,
                seed=self.seed if seed is None else seed,
            )
        except PnSError as exc:
            raise ScenarioError(str(exc), "nodes") from None

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)


def _policy_from(spec: dict, path: str) -> CooperationPolicy:
    args = {k: v for k, v in spec.items() if k != "label"}
    try:
        return CooperationPolicy(**args)
    except PnSError as exc:
        raise ScenarioError(str(exc), path) from None


def policy_label(spec: CooperationPolicy) -> str:
    """Short stable name of a grid entry, e.g. ``jitter(alpha=0.5)``."""
    if spec.mode == "none":
        return "none"
    if spec.mode == "multi_transceiver":
        return f"multi_transceiver(n={spec.n_transceivers})"
    if spec.mode == "passive":
        return f"passive(p_isolate={spec.p_isolate:g})"
    if spec.mode in ("active_controller", "active_system"):
        return f"{spec.mode}(p_assist={spec.p_assist:g})"
    alpha = "auto" if spec.alpha is None else f"{spec.alpha:g}"
    return f"jitter(alpha={alpha})"


def _read(path) -> tuple[str, str]:
    p = Path(path)
    if p.exists():
        return p.read_text(encoding="utf-8"), str(p)
    name = str(path)
    if name in BUILTIN:
        res = resources.files("pnscan").joinpath("data", f"{name}.json")
        return res.read_text(encoding="utf-8"), f"builtin:{name}"
    raise FileNotFoundError(f"no scenario file {path!s} (built-ins: {', '.join(BUILTIN)})")
