"""Scenario-driven experiments: simulate, attack, evaluate, order a group, export.

Every command writes a deterministic ``report.json`` and ``report.txt``
into its output directory; wall-clock timing goes to a separate
``runtime.json`` so reports regenerate byte-for-byte from the scenario and
seeds alone.
"""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np
from scipy.stats import ConstantInputWarning, spearmanr

from . import __version__
from .adversary import (
    FEATURES,
    AdvantageGraph,
    AttackResult,
    collect_pns_observations,
    collect_training_data,
    measure_advantage,
    measure_pair_advantage,
    oriented_advantage,
    timing_attack,
    train_pair_classifier,
    true_secret_bits,
)
from .bus import TraceWindow
from .countermeasures import (
    CooperationPolicy,
    JitterPolicy,
    distinct_levels,
)
from .errors import DependencyError, InvalidInputError
from .ordering import (
    build_advantage_graph,
    chain_tree,
    mask_order,
    min_max_spanning_tree,
    run_group_key_tree,
    unmask_rank,
)
from .protocol import PnSSession, run_pns_two_party
from .scenario import Scenario, policy_label
from .seeding import derive_bytes

FIDELITY_CAVEATS = [
    "probe modelled as an ideal sampler: no oscilloscope analog bandwidth limit",
    "no transmission-line reflections or termination-mismatch ringing",
]


# ---------------------------------------------------------------------------
# small output helpers


def _r(x, digits: int = 6):
    """Round for reports; NaN becomes None so the JSON stays valid."""
    if x is None:
        return None
    x = float(x)
    if not math.isfinite(x):
        return None
    return round(x, digits)


def _stderr(p: float, n: int):
    if n <= 0 or not math.isfinite(p):
        return None
    return _r(math.sqrt(max(p * (1.0 - p), 0.0) / n))


def _spearman(x, y):
    if len(x) < 3:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConstantInputWarning)
        rho = spearmanr(x, y)[0]
    return _r(rho)


def _write(out: Path, name: str, text: str):
    path = out / name
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def _finish(out: Path, command: str, report: dict, text_lines: list[str], started: float) -> dict:
    _write(out, "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    _write(out, "report.txt", "\n".join(text_lines) + "\n")
    _write(out, "runtime.json", json.dumps(
        {"command": command, "wall_seconds": round(time.perf_counter() - started, 3)}, indent=2) + "\n")
    return report


def _header(scenario: Scenario, command: str, overrides: dict) -> dict:
    return {
        "command": command,
        "software": {"package": "pnscan", "version": __version__},
        "scenario_source": scenario.source,
        "scenario": scenario.data,
        "overrides": {k: v for k, v in overrides.items() if v is not None},
        "fidelity_caveats": FIDELITY_CAVEATS,
    }


def _header_text(scenario: Scenario, command: str, overrides: dict) -> list[str]:
    lines = [f"# pnscan {command}: scenario {scenario.name} ({scenario.source or 'inline'})"]
    lines.append(f"# experiment seed {scenario.seed}, trials {scenario.trials}")
    for key, value in sorted(overrides.items()):
        if value is not None:
            lines.append(f"# override {key} = {value}")
    lines.append("# parameters:")
    for line in json.dumps(scenario.data, indent=1, sort_keys=True).splitlines():
        lines.append("#   " + line)
    for c in FIDELITY_CAVEATS:
        lines.append(f"# caveat: {c}")
    return lines


def _pair_name(a: str, b: str) -> str:
    return f"{a}-{b}"


def _threshold(scenario: Scenario):
    k = float(scenario.adversary["threshold_sigmas"])
    eps = float(scenario.adversary["epsilon_ns"])
    return lambda mu, sigma: mu + k * max(sigma, eps)


def _session(scenario: Scenario, a: str, b: str) -> PnSSession:
    proto = scenario.protocol
    return PnSSession(a, b, scenario.node_seed(a), scenario.node_seed(b), proto["chunk_bits"],
                      proto["target_key_bits"], proto["identifier"], proto["frame_cap"])


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(scenario: Scenario, out, overrides: dict | None = None) -> dict:
    """Run one key-agreement session per pair; write traces and transcripts."""
    started = time.perf_counter()
    out = Path(out)
    overrides = overrides or {}
    bus = scenario.build_bus([p.build() for p in scenario.policies() if p.build()])
    pairs = []
    for a, b in scenario.pairs:
        result = run_pns_two_party(_session(scenario, a, b), bus)
        name = _pair_name(a, b)
        files = []
        for f, trace in enumerate(result.traces):
            rel = f"traces/{name}/frame_{f:03d}.csv"
            _write(out, rel, trace.to_csv())
            files.append(rel)
        _write(out, f"transcripts/{name}.jsonl", result.transcript_jsonl())
        agree = bool(np.array_equal(result.key_primary, result.key_secondary))
        harvested = sum(int(r.secret_mask.sum()) for r in result.frames)
        chunk_bits = len(result.frames) * scenario.protocol["chunk_bits"]
        pairs.append({
            "pair": [a, b],
            "frames": len(result.frames),
            "key_bits": int(result.key_primary.size),
            "keys_agree": agree,
            "key_hex": _bits_hex(result.key_primary),
            "harvest_fraction": _r(harvested / chunk_bits),
            "traces": files,
            "transcript": f"transcripts/{name}.jsonl",
        })
    report = _header(scenario, "simulate", overrides)
    report["pairs"] = pairs
    lines = _header_text(scenario, "simulate", overrides)
    lines.append("pair\tframes\tkey_bits\tagree\tharvest\tkey")
    for p in pairs:
        lines.append(f"{_pair_name(*p['pair'])}\t{p['frames']}\t{p['key_bits']}\t{p['keys_agree']}\t"
                     f"{p['harvest_fraction']:.4f}\t{p['key_hex']}")
    return _finish(out, "simulate", report, lines, started)


def _bits_hex(bits) -> str:
    bits = np.asarray(bits, dtype=np.uint8)
    pad = (-bits.size) % 8
    return np.packbits(np.concatenate([bits, np.zeros(pad, dtype=np.uint8)])).tobytes().hex()


# ---------------------------------------------------------------------------
# attack


def _insitu_advantage(obs: dict, a: str, b: str, feature: str):
    train_a, test_a = obs[a].split(0.5)
    train_b, test_b = obs[b].split(0.5)
    if min(len(train_a.feature(feature)), len(train_b.feature(feature)),
           len(test_a.feature(feature)), len(test_b.feature(feature))) == 0:
        return None
    clf = train_pair_classifier(train_a, train_b, feature)
    return oriented_advantage(measure_advantage(clf, test_a, test_b))


def _resync_on(bus) -> bool:
    """Whether the nodes soft-resynchronise during PnS frames (public protocol knowledge)."""
    return bool(bus.soft_resync) and not any(isinstance(p, JitterPolicy) for p in bus.policies)


def _attack_pair(scenario: Scenario, bus, a: str, b: str, *, offline_bus=None) -> dict:
    """Attack ``trials`` random PnS frames of pair (a, b) on ``bus``."""
    adv = scenario.adversary
    rendered = []
    obs = collect_pns_observations(bus, a, b, scenario.trials, [scenario.seed, "attack", a, b],
                                   chunk_bits=scenario.protocol["chunk_bits"],
                                   trigger_v=adv["trigger_v"], rendered=rendered)
    results, truth = [], []
    for rec, rf in rendered:
        results.append(timing_attack(rf.trace, trigger_v=adv["trigger_v"], epsilon_ns=adv["epsilon_ns"],
                                     threshold=_threshold(scenario), resync=_resync_on(bus)))
        truth.append(true_secret_bits(rec))
    res = AttackResult.concat(results)
    truth = np.concatenate(truth) if truth else np.zeros(0, dtype=int)
    attempted = res.attempted
    recovered = res.recovered(truth)
    recovery = recovered / attempted if attempted else float("nan")
    entry = {
        "pair": [a, b],
        "frames": len(rendered),
        "bits_attempted": attempted,
        "bits_recovered": recovered,
        "erasures": res.erasures,
        "erasure_rate": _r(res.erasures / attempted if attempted else float("nan")),
        "recovery": _r(recovery),
        "recovery_stderr": _stderr(recovery, attempted),
        "accuracy": _r(res.accuracy(truth)),
        "delay_gap_ns": _r(abs(bus.observer_delay_ns(a) - bus.observer_delay_ns(b))),
        "d_insitu": {f: _r(_insitu_advantage(obs, a, b, f)) for f in FEATURES},
    }
    if offline_bus is not None:
        d = measure_pair_advantage(offline_bus, a, b, adv["feature"], adv["advantage_bits"],
                                   [scenario.seed, "profile", a, b])
        entry["d"] = _r(oriented_advantage(d))
        entry["d_stderr"] = _stderr(entry["d"], 2 * adv["advantage_bits"])
    return entry


def _trend(pairs: list[dict]) -> dict:
    gaps = [p["delay_gap_ns"] for p in pairs]
    trend = {"pairs": len(pairs)}
    trend["spearman_gap_recovery"] = _spearman(gaps, [p["recovery"] for p in pairs])
    if all("d" in p for p in pairs):
        trend["spearman_gap_d"] = _spearman(gaps, [p["d"] for p in pairs])
    return trend


def _pair_lines(pairs: list[dict]) -> list[str]:
    lines = ["pair\tframes\tattempted\trecovered\terasures\taccuracy\trecovery\td\td_insitu\tgap_ns"]
    for p in pairs:
        d = p.get("d")
        lines.append(
            f"{_pair_name(*p['pair'])}\t{p['frames']}\t{p['bits_attempted']}\t{p['bits_recovered']}\t"
            f"{p['erasures']}\t{_fmt(p['accuracy'])}\t{_fmt(p['recovery'])}\t{_fmt(d)}\t"
            f"{_fmt(p['d_insitu']['transition_offset'])}\t{_fmt(p['delay_gap_ns'], 2)}"
        )
    return lines


def _fmt(x, digits: int = 4) -> str:
    return "n/a" if x is None else f"{x:.{digits}f}"


def _attack_from_traces(scenario: Scenario, traces_dir: Path) -> list[dict]:
    """Attack the frames a previous ``simulate`` run wrote to disk."""
    entries = []
    resync = _resync_on(scenario.build_bus([p.build() for p in scenario.policies() if p.build()]))
    for a, b in scenario.pairs:
        name = _pair_name(a, b)
        transcript = traces_dir / "transcripts" / f"{name}.jsonl"
        frame_dir = traces_dir / "traces" / name
        if not transcript.exists() or not frame_dir.is_dir():
            raise DependencyError(f"no simulated traces for pair {name} under {traces_dir}")
        truth_by_frame = _truth_from_transcript(transcript)
        results, truth = [], []
        for f, bits in sorted(truth_by_frame.items()):
            path = frame_dir / f"frame_{f:03d}.csv"
            if not path.exists():
                raise DependencyError(f"missing trace {path}")
            trace = TraceWindow.from_csv(path, bit_period_ns=scenario.data["bus"]["bit_period_ns"])
            results.append(timing_attack(trace, trigger_v=scenario.adversary["trigger_v"],
                                         epsilon_ns=scenario.adversary["epsilon_ns"],
                                         threshold=_threshold(scenario), resync=resync))
            truth.append(bits)
        res = AttackResult.concat(results)
        truth = np.concatenate(truth) if truth else np.zeros(0, dtype=int)
        recovery = res.recovered(truth) / res.attempted if res.attempted else float("nan")
        entries.append({
            "pair": [a, b], "frames": len(results), "bits_attempted": res.attempted,
            "bits_recovered": res.recovered(truth), "erasures": res.erasures,
            "erasure_rate": _r(res.erasures / res.attempted if res.attempted else float("nan")),
            "recovery": _r(recovery), "recovery_stderr": _stderr(recovery, res.attempted),
            "accuracy": _r(res.accuracy(truth)), "delay_gap_ns": None,
            "d_insitu": {f: None for f in FEATURES},
        })
    return entries


def _truth_from_transcript(path: Path) -> dict:
    """Secret key bits per frame: the primary's chunk bit of every (0,0) payload pair."""
    frames: dict[int, dict[int, tuple[int, int]]] = {}
    with open(path) as fh:
        for line in fh:
            r = json.loads(line)
            if r["payload_index"] >= 0:
                frames.setdefault(r["frame"], {})[r["payload_index"]] = (r["intent_primary"], r["bus"])
    out = {}
    for f, bits in frames.items():
        keys = []
        for p in range(0, max(bits) + 1, 2):
            (pa, ba), (_, bb) = bits[p], bits[p + 1]
            if ba == 0 and bb == 0:
                keys.append(pa)
        out[f] = np.array(keys, dtype=int)
    return out


def cmd_attack(scenario: Scenario, out, overrides: dict | None = None, traces=None) -> dict:
    """Timing attack over the pair matrix, with per-pair recovery and advantage."""
    started = time.perf_counter()
    out = Path(out)
    overrides = dict(overrides or {})
    if traces is not None:
        overrides["traces"] = str(traces)
        pairs = _attack_from_traces(scenario, Path(traces))
    else:
        policies = [p.build() for p in scenario.policies() if p.build()]
        bus = scenario.build_bus(policies)
        offline = scenario.build_bus()
        pairs = [_attack_pair(scenario, bus, a, b, offline_bus=offline) for a, b in scenario.pairs]
    report = _header(scenario, "attack", overrides)
    report["pairs"] = pairs
    report["trend"] = _trend(pairs)
    lines = _header_text(scenario, "attack", overrides)
    lines += _pair_lines(pairs)
    lines.append(f"spearman(gap, recovery) = {_fmt(report['trend']['spearman_gap_recovery'])}")
    if "spearman_gap_d" in report["trend"]:
        lines.append(f"spearman(gap, d) = {_fmt(report['trend']['spearman_gap_d'])}")
    return _finish(out, "attack", report, lines, started)


# ---------------------------------------------------------------------------
# evaluate


def _entry_buses(scenario: Scenario, spec: CooperationPolicy, a: str, b: str):
    """(case name, bus) pairs for one grid entry and pair."""
    policy = spec.build()
    policies = [policy] if policy else []
    if spec.mode == "multi_transceiver":
        return [("configured", scenario.build_bus(policies, transceivers=spec.n_transceivers,
                                                  participants={a, b}))]
    if spec.mode == "jitter":
        return [
            ("idealized", scenario.build_bus(policies, processing_ns=0.0, participants={a, b})),
            ("offset", scenario.build_bus(policies)),
        ]
    return [("configured", scenario.build_bus(policies))]


def _keys_for(scenario: Scenario, bus, a: str, b: str):
    result = run_pns_two_party(_session(scenario, a, b), bus.replace(synthesize=False))
    return result.key_primary


def _entry_extras(spec: CooperationPolicy, bus, a: str, b: str) -> dict:
    extras = {}
    if spec.mode == "multi_transceiver":
        ea, eb = bus.elements[a], bus.elements[b]
        extras["levels"] = {
            "dominant": distinct_levels(bus.solver, ea, eb, "dominant"),
            "recessive": distinct_levels(bus.solver, ea, eb, "recessive"),
            "combined": distinct_levels(bus.solver, ea, eb, "combined"),
        }
    if spec.mode == "jitter":
        pol = next(p for p in bus.policies if isinstance(p, JitterPolicy))
        t12 = pol.link_delay(bus, a, b)
        i1, i2 = pol.intervals(bus, a, b)
        budget = pol.budget_fraction * bus.bit_period_ns
        alpha = (i1.hi_ns / t12) if t12 > 0 else 0.0
        extras["jitter"] = {
            "t12_measured_ns": _r(t12),
            "alpha_used": _r(alpha),
            "budget_ns": _r(budget),
            "interval_primary_ns": [_r(i1.lo_ns), _r(i1.hi_ns)],
            "interval_secondary_ns": [_r(i2.lo_ns), _r(i2.hi_ns)],
            "processing_ns": {n: _r(bus.nodes[n].processing_ns) for n in (a, b)},
        }
    return extras


def cmd_evaluate(scenario: Scenario, out, overrides: dict | None = None) -> dict:
    """Compare countermeasures: recovery and in-situ advantage per grid entry."""
    started = time.perf_counter()
    out = Path(out)
    overrides = overrides or {}
    baseline_bus = scenario.build_bus()
    offline = scenario.build_bus()
    baseline = {}
    baseline_keys = {}
    for a, b in scenario.pairs:
        baseline[(a, b)] = _attack_pair(scenario, baseline_bus, a, b, offline_bus=offline)
        baseline_keys[(a, b)] = _keys_for(scenario, baseline_bus, a, b)
    entries = []
    for spec in scenario.grid():
        label = policy_label(spec)
        policy_cases = {}
        for a, b in scenario.pairs:
            for case, bus in _entry_buses(scenario, spec, a, b):
                if spec.mode == "none":
                    pair = baseline[(a, b)]
                else:
                    pair = _attack_pair(scenario, bus, a, b, offline_bus=offline)
                pair = dict(pair)
                pair.update(_entry_extras(spec, bus, a, b))
                keys = _keys_for(scenario, bus, a, b)
                pair["keys_equal_baseline"] = bool(np.array_equal(keys, baseline_keys[(a, b)]))
                base = baseline[(a, b)]
                pair["delta"] = {
                    "recovery": _delta(pair["recovery"], base["recovery"]),
                    "d_insitu": {f: _delta(pair["d_insitu"][f], base["d_insitu"][f]) for f in FEATURES},
                }
                policy_cases.setdefault(case, []).append(pair)
        entries.append({"label": label, "policy": asdict(spec), "cases": policy_cases})
    report = _header(scenario, "evaluate", overrides)
    report["grid"] = entries
    lines = _header_text(scenario, "evaluate", overrides)
    lines.append("entry\tcase\tpair\trecovery\td_insitu\tdelta_d\tkeys_equal\textra")
    for e in entries:
        for case, pairs in e["cases"].items():
            for p in pairs:
                extra = ""
                if "levels" in p:
                    lv = p["levels"]
                    extra = f"levels d={lv['dominant']} r={lv['recessive']} c={lv['combined']}"
                if "jitter" in p:
                    j = p["jitter"]
                    extra = f"t12={_fmt(j['t12_measured_ns'], 2)} alpha={_fmt(j['alpha_used'], 3)}"
                lines.append(
                    f"{e['label']}\t{case}\t{_pair_name(*p['pair'])}\t{_fmt(p['recovery'])}\t"
                    f"{_fmt(p['d_insitu']['transition_offset'])}\t"
                    f"{_fmt(p['delta']['d_insitu']['transition_offset'])}\t{p['keys_equal_baseline']}\t{extra}"
                )
    return _finish(out, "evaluate", report, lines, started)


def _delta(x, base):
    if x is None or base is None:
        return None
    return _r(x - base)


# ---------------------------------------------------------------------------
# order-group


def gateway_keys(members, seed: int) -> dict:
    """Per-member keys shared with the gateway (derived from the experiment seed)."""
    return {m: derive_bytes(seed, "gateway", m)[:16] for m in members}


def measured_advantage_graph(scenario: Scenario, members) -> AdvantageGraph:
    """Offline pairwise advantage between every two members."""
    bus = scenario.build_bus()
    adv = scenario.adversary
    weights = {}
    members = list(members)
    for i, a in enumerate(members):
        for b in members[i + 1:]:
            d = measure_pair_advantage(bus, a, b, adv["feature"], adv["advantage_bits"],
                                       [scenario.seed, "profile", a, b])
            weights[frozenset((a, b))] = _r(oriented_advantage(d))
    return AdvantageGraph(members, weights)


def cmd_order_group(out, *, advantage=None, group=None, scenario: Scenario | None = None,
                    seed: int | None = None, nonce: bytes | None = None, run_keys: bool = False,
                    overrides: dict | None = None) -> dict:
    """Min-max spanning tree over the group and the masked rank broadcast."""
    started = time.perf_counter()
    out = Path(out)
    overrides = dict(overrides or {})
    if seed is None:
        seed = scenario.seed if scenario is not None else 0
    if advantage is not None:
        path = Path(advantage)
        if not path.exists():
            raise DependencyError(f"advantage matrix {path} not found")
        graph = read_advantage_csv(path)
        source = str(path)
    elif scenario is not None and scenario.data.get("group", {}).get("weights"):
        g = scenario.data["group"]
        graph = AdvantageGraph(
            sorted({n for w in g["weights"] for n in w[:2]}),
            {frozenset((a, b)): float(w) for a, b, w in g["weights"]},
        )
        source = "scenario:group/weights"
    elif scenario is not None:
        members = group or scenario.data.get("group", {}).get("members") or scenario.node_ids
        graph = measured_advantage_graph(scenario, members)
        source = "measured"
    else:
        raise DependencyError("order-group needs an advantage matrix or a scenario")
    if group is None:
        group = (scenario.data.get("group", {}).get("members") if scenario is not None else None) or graph.nodes
    group = list(group)
    sub = build_advantage_graph(group, graph)
    tree = min_max_spanning_tree(sub)
    order = tree.order()
    chain_max = chain_tree(group).max_edge(sub)
    if nonce is None:
        hexed = scenario.data.get("group", {}).get("nonce_hex") if scenario is not None else None
        nonce = bytes.fromhex(hexed) if hexed else derive_bytes(seed, "nonce")[:16]
    keys = gateway_keys(group, seed)
    masked = mask_order(order, keys, nonce)
    ranks = {m: unmask_rank(masked, keys[m]) for m in group}
    report = {
        "command": "order-group",
        "software": {"package": "pnscan", "version": __version__},
        "advantage_source": source,
        "group": group,
        "seed": seed,
        "overrides": {k: v for k, v in overrides.items() if v is not None},
        "weights": [[a, b, _r(w)] for a, b, w in sub.edges()],
        "tree": {
            "root": tree.root,
            "edges": [[p, c] for p, c in tree.sessions()],
            "order": order,
            "max_edge_d": _r(tree.max_edge(sub)),
        },
        "identity_chain_max_edge_d": _r(chain_max),
        "broadcast": {"nonce_hex": nonce.hex(), "tokens_hex": [t.hex() for t in masked.tokens],
                      "wire_hex": masked.to_hex()},
        "ranks": ranks,
    }
    if run_keys and scenario is not None:
        bus = scenario.build_bus().replace(synthesize=False)
        seeds = {n: scenario.node_seed(n) for n in group}
        proto = scenario.protocol
        group_keys = run_group_key_tree(tree, seeds, bus, chunk_bits=proto["chunk_bits"],
                                        target_key_bits=proto["target_key_bits"],
                                        frame_cap=proto["frame_cap"], identifier=proto["identifier"])
        report["group_key"] = {
            "sessions": len(tree.sessions()),
            "all_equal": len({_bits_hex(k) for k in group_keys.values()}) == 1,
            "key_hex": _bits_hex(group_keys[tree.root]),
        }
    _write(out, "advantage.csv", sub.to_csv())
    lines = [f"# pnscan order-group: group {','.join(group)} (advantage from {source})",
             f"# seed {seed}, nonce {nonce.hex()}"]
    lines.append(f"root {tree.root}")
    lines.append("order " + " ".join(order))
    for p, c in tree.sessions():
        lines.append(f"edge {p} {c} d={_fmt(sub.weight(p, c))}")
    lines.append(f"tree max-edge d = {_fmt(report['tree']['max_edge_d'])}")
    lines.append(f"identity-chain max-edge d = {_fmt(chain_max)}")
    lines.append(f"broadcast {masked.to_hex()}")
    for m in group:
        lines.append(f"rank {m} {ranks[m]}")
    if "group_key" in report:
        lines.append(f"group key {report['group_key']['key_hex']} all_equal={report['group_key']['all_equal']}")
    return _finish(out, "order-group", report, lines, started)


# ---------------------------------------------------------------------------
# export


def cmd_export(scenario: Scenario, out, overrides: dict | None = None) -> dict:
    """Plot-ready CSVs: offline sample sets, the advantage matrix and level counts."""
    started = time.perf_counter()
    out = Path(out)
    overrides = overrides or {}
    from .scenario import SCHEMA

    _write(out, "scenario.resolved.json", scenario.to_json() + "\n")
    _write(out, "scenario.schema.json", json.dumps(SCHEMA, indent=2, sort_keys=True) + "\n")
    bus = scenario.build_bus()
    adv = scenario.adversary
    nodes = sorted({n for p in scenario.pairs for n in p}, key=scenario.node_ids.index)
    files = []
    for n in nodes:
        s = collect_training_data(bus, n, adv["advantage_bits"], [scenario.seed, "export", n],
                                  trigger_v=adv["trigger_v"])
        rel = f"samples/{n}.csv"
        _write(out, rel, s.to_csv())
        files.append(rel)
    members = scenario.data.get("group", {}).get("members") or nodes
    graph = measured_advantage_graph(scenario, members)
    _write(out, "advantage.csv", graph.to_csv())
    files.append("advantage.csv")
    rows = [["n_transceivers", "dominant", "recessive", "combined"]]
    a, b = scenario.pairs[0]
    for n in (1, 2, 3):
        nb = scenario.build_bus(transceivers=n, participants={a, b})
        ea, eb = nb.elements[a], nb.elements[b]
        rows.append([n] + [distinct_levels(nb.solver, ea, eb, m) for m in ("dominant", "recessive", "combined")])
    _write(out, "levels.csv", "".join(",".join(map(str, r)) + "\n" for r in rows))
    files.append("levels.csv")
    report = _header(scenario, "export", overrides)
    report["files"] = ["scenario.resolved.json", "scenario.schema.json"] + files
    lines = _header_text(scenario, "export", overrides) + [f"wrote {f}" for f in report["files"]]
    return _finish(out, "export", report, lines, started)


def read_advantage_csv(path) -> AdvantageGraph:
    try:
        return AdvantageGraph.from_csv(path)
    except (OSError, csv.Error) as exc:
        raise DependencyError(str(exc)) from None
    except ValueError as exc:
        raise InvalidInputError(str(exc)) from None
