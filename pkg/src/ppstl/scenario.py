"""Scenario files: strict JSON schema, dataclasses, and (de)serialization.

A scenario fully determines a simulation: agents with dynamics and
initial states, the communication topology, per-agent STL tasks with
funnel settings, the observer configuration, and simulation parameters.
Parsing is strict (unknown keys are errors) and performs the semantic
checks that do not require running anything: referenced agent ids exist,
intervals are ordered, and an explicit k is not below the smallest depth
that covers every task/communication mismatch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .errors import ScenarioError
from .graphs import CommGraph, TaskGraph, min_required_k

_PPF_SCHEMA = {
    "type": "object",
    "properties": {
        "rho0": {"type": "number", "exclusiveMinimum": 0},
        "rho_inf": {"type": "number", "exclusiveMinimum": 0},
        "rate": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["rho0", "rho_inf", "rate"],
    "additionalProperties": False,
}

_CONJUNCT_SCHEMA = {
    "type": "object",
    "oneOf": [
        {
            "properties": {
                "kind": {"const": "norm_ball_absolute"},
                "agent": {"type": "integer"},
                "center": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "radius_sq": {"type": "number", "exclusiveMinimum": 0},
                "negated": {"type": "boolean"},
            },
            "required": ["kind", "agent", "center", "radius_sq"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "norm_ball_relative"},
                "i": {"type": "integer"},
                "j": {"type": "integer"},
                "offset": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "radius_sq": {"type": "number", "exclusiveMinimum": 0},
                "negated": {"type": "boolean"},
            },
            "required": ["kind", "i", "j", "radius_sq"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "bound"},
                "agents": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
                "cbar_sq": {"type": "number", "exclusiveMinimum": 0},
                "negated": {"type": "boolean"},
            },
            "required": ["kind", "agents", "cbar_sq"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "affine"},
                "coeffs": {
                    "type": "object",
                    "patternProperties": {
                        "^[0-9]+$": {"type": "array", "items": {"type": "number"}}
                    },
                    "additionalProperties": False,
                },
                "const": {"type": "number"},
                "negated": {"type": "boolean"},
            },
            "required": ["kind", "coeffs"],
            "additionalProperties": False,
        },
    ],
}

_OPERATOR_SCHEMA = {
    "type": "object",
    "properties": {
        "type": {"enum": ["G", "F", "FG"]},
        "interval": {
            "type": "array", "items": {"type": "number", "minimum": 0},
            "minItems": 2, "maxItems": 2,
        },
        "inner_interval": {
            "type": "array", "items": {"type": "number", "minimum": 0},
            "minItems": 2, "maxItems": 2,
        },
        "t_star": {"type": "number", "minimum": 0},
    },
    "required": ["type", "interval"],
    "additionalProperties": False,
}

_TASK_SCHEMA = {
    "type": "object",
    "properties": {
        "agent": {"type": "integer"},
        "name": {"type": "string"},
        "operator": _OPERATOR_SCHEMA,
        "rho_max": {"type": "number", "exclusiveMinimum": 0},
        "eta": {"type": "number", "exclusiveMinimum": 0},
        "margins": {
            "type": "object",
            "properties": {
                "ss": {"type": "number", "exclusiveMinimum": 0},
                "win": {"type": "number", "exclusiveMinimum": 0},
                "init": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "funnel": {
            "type": "object",
            "properties": {
                "gamma0": {"type": "number", "exclusiveMinimum": 0},
                "gamma_inf": {"type": "number", "exclusiveMinimum": 0},
                "rate": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["gamma0", "gamma_inf", "rate"],
            "additionalProperties": False,
        },
        "conjuncts": {"type": "array", "items": _CONJUNCT_SCHEMA, "minItems": 1},
    },
    "required": ["agent", "operator", "conjuncts"],
    "additionalProperties": False,
}

SCENARIO_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "agents": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "id": {"type": "integer", "minimum": 0},
                    "dynamics": {
                        "type": "object",
                        "properties": {
                            "kind": {"enum": ["omnirobot", "single-integrator", "custom-affine"]},
                            "wheel_radius": {"type": "number", "exclusiveMinimum": 0},
                            "body_radius": {"type": "number", "exclusiveMinimum": 0},
                            "coupling_gain": {"type": "number", "minimum": 0},
                            "coupling_eps": {"type": "number", "exclusiveMinimum": 0},
                            "A": {"type": "array"},
                            "b": {"type": "array"},
                            "G": {"type": "array"},
                            "pos_idx": {"type": "array", "items": {"type": "integer"}},
                        },
                        "required": ["kind"],
                        "additionalProperties": False,
                    },
                    "initial_state": {
                        "type": "array", "items": {"type": "number"}, "minItems": 1,
                    },
                },
                "required": ["id", "dynamics", "initial_state"],
                "additionalProperties": False,
            },
        },
        "comm_edges": {
            "type": "array",
            "items": {
                "type": "array", "items": {"type": "integer"},
                "minItems": 2, "maxItems": 2,
            },
        },
        "tasks": {"type": "array", "items": _TASK_SCHEMA},
        "observer": {
            "type": "object",
            "properties": {
                "k": {"oneOf": [{"type": "integer", "minimum": 2}, {"const": "auto"}]},
                "delta_default": _PPF_SCHEMA,
                "delta_overrides": {
                    "type": "object",
                    "patternProperties": {"^[0-9]+$": _PPF_SCHEMA},
                    "additionalProperties": False,
                },
                "shares": {
                    "type": "object",
                    "patternProperties": {
                        "^[0-9]+$": {
                            "type": "array",
                            "items": {"type": "number", "exclusiveMinimum": 0},
                        }
                    },
                    "additionalProperties": False,
                },
                "init_fill": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.95},
            },
            "required": ["k", "delta_default"],
            "additionalProperties": False,
        },
        "sim": {
            "type": "object",
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "t_end": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "eta": {"type": "number", "exclusiveMinimum": 0},
                "w_max": {"type": "number", "minimum": 0},
                "log_every": {"type": "integer", "minimum": 1},
            },
            "required": ["dt", "t_end", "seed"],
            "additionalProperties": False,
        },
        "witness_states": {
            "type": "object",
            "patternProperties": {
                "^[0-9]+$": {"type": "array", "items": {"type": "number"}}
            },
            "additionalProperties": False,
        },
    },
    "required": ["name", "agents", "comm_edges", "tasks", "observer", "sim"],
    "additionalProperties": False,
}


@dataclass
class AgentSpec:
    id: int
    dynamics_kind: str
    dynamics_params: dict
    initial_state: list


@dataclass
class ConjunctSpec:
    kind: str
    params: dict
    negated: bool = False


@dataclass
class TaskSpec:
    agent: int
    name: str
    operator: str
    interval: tuple
    inner_interval: tuple | None
    t_star: float | None
    rho_max: float | None
    eta: float | None
    margins: dict | None
    funnel: dict | None
    conjuncts: list


@dataclass
class ObserverConfig:
    k: int | str
    delta_default: dict
    delta_overrides: dict = field(default_factory=dict)
    shares: dict = field(default_factory=dict)
    init_fill: float = 0.45


@dataclass
class SimConfig:
    dt: float
    t_end: float
    seed: int
    eta: float = 20.0
    w_max: float = 0.0
    log_every: int = 1


@dataclass
class Scenario:
    name: str
    agents: list
    comm_edges: list
    tasks: list
    observer: ObserverConfig
    sim: SimConfig
    witness_states: dict = field(default_factory=dict)

    @property
    def agent_ids(self) -> tuple:
        return tuple(sorted(a.id for a in self.agents))

    def comm_graph(self) -> CommGraph:
        return CommGraph(self.agent_ids, self.comm_edges)

    def task_graph(self) -> TaskGraph:
        edges = set()
        for task in self.tasks:
            for c in task.conjuncts:
                for p in _conjunct_participants(c):
                    edges.add((task.agent, p))
        return TaskGraph(self.agent_ids, edges)

    def to_dict(self) -> dict:
        doc = {
            "name": self.name,
            "agents": [
                {
                    "id": a.id,
                    "dynamics": {"kind": a.dynamics_kind, **a.dynamics_params},
                    "initial_state": list(a.initial_state),
                }
                for a in self.agents
            ],
            "comm_edges": [list(e) for e in self.comm_edges],
            "tasks": [_task_to_dict(t) for t in self.tasks],
            "observer": _observer_to_dict(self.observer),
            "sim": _sim_to_dict(self.sim),
        }
        if self.witness_states:
            doc["witness_states"] = {
                str(a): list(v) for a, v in sorted(self.witness_states.items())
            }
        return doc


def _conjunct_participants(c: ConjunctSpec) -> tuple:
    if c.kind == "norm_ball_absolute":
        return (c.params["agent"],)
    if c.kind == "norm_ball_relative":
        return (c.params["i"], c.params["j"])
    if c.kind == "bound":
        return tuple(c.params["agents"])
    return tuple(sorted(c.params["coeffs"]))


def _task_to_dict(t: TaskSpec) -> dict:
    op = {"type": t.operator, "interval": list(t.interval)}
    if t.inner_interval is not None:
        op["inner_interval"] = list(t.inner_interval)
    if t.t_star is not None:
        op["t_star"] = t.t_star
    doc = {"agent": t.agent, "name": t.name, "operator": op, "conjuncts": []}
    if t.rho_max is not None:
        doc["rho_max"] = t.rho_max
    if t.eta is not None:
        doc["eta"] = t.eta
    if t.margins is not None:
        doc["margins"] = dict(t.margins)
    if t.funnel is not None:
        doc["funnel"] = dict(t.funnel)
    for c in t.conjuncts:
        entry = {"kind": c.kind, **_jsonable(c.params)}
        if c.negated:
            entry["negated"] = True
        doc["conjuncts"].append(entry)
    return doc


def _observer_to_dict(o: ObserverConfig) -> dict:
    doc = {"k": o.k, "delta_default": dict(o.delta_default)}
    if o.delta_overrides:
        doc["delta_overrides"] = {str(a): dict(v) for a, v in sorted(o.delta_overrides.items())}
    if o.shares:
        doc["shares"] = {str(a): list(v) for a, v in sorted(o.shares.items())}
    if o.init_fill != 0.45:
        doc["init_fill"] = o.init_fill
    return doc


def _sim_to_dict(s: SimConfig) -> dict:
    return {
        "dt": s.dt, "t_end": s.t_end, "seed": s.seed,
        "eta": s.eta, "w_max": s.w_max, "log_every": s.log_every,
    }


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if k == "coeffs":
            out[k] = {str(a): list(c) for a, c in sorted(v.items())}
        elif isinstance(v, (list, tuple)):
            out[k] = list(v)
        else:
            out[k] = v
    return out


def _schema_errors(doc) -> list:
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path)):
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        errors.append(f"{path}: {err.message}")
    return errors


def parse_scenario_dict(doc: dict) -> Scenario:
    """Validate a scenario document and build the typed Scenario."""
    errors = _schema_errors(doc)
    if errors:
        raise ScenarioError(errors)

    agents = []
    for a in doc["agents"]:
        dyn = dict(a["dynamics"])
        kind = dyn.pop("kind")
        agents.append(AgentSpec(
            id=a["id"], dynamics_kind=kind, dynamics_params=dyn,
            initial_state=list(a["initial_state"]),
        ))
    ids = [a.id for a in agents]
    if len(set(ids)) != len(ids):
        raise ScenarioError(["agents: duplicate agent ids"])
    known = set(ids)

    problems = []
    for e in doc["comm_edges"]:
        if e[0] not in known or e[1] not in known:
            problems.append(f"comm_edges: edge {e} references unknown agent")
        if e[0] == e[1]:
            problems.append(f"comm_edges: self-loop {e} not allowed")

    tasks = []
    seen_task_agents = set()
    for idx, t in enumerate(doc["tasks"]):
        op = t["operator"]
        if t["agent"] not in known:
            problems.append(f"tasks/{idx}: unknown agent {t['agent']}")
        if t["agent"] in seen_task_agents:
            problems.append(f"tasks/{idx}: agent {t['agent']} already has a task")
        seen_task_agents.add(t["agent"])
        a, b = op["interval"]
        if a > b:
            problems.append(f"tasks/{idx}: interval [{a}, {b}] is reversed")
        inner = op.get("inner_interval")
        if op["type"] == "FG" and inner is None:
            problems.append(f"tasks/{idx}: FG operator needs inner_interval")
        if inner is not None and inner[0] > inner[1]:
            problems.append(f"tasks/{idx}: inner interval {inner} is reversed")
        t_star = op.get("t_star")
        if t_star is not None and not (a <= t_star <= b):
            problems.append(f"tasks/{idx}: t_star {t_star} outside [{a}, {b}]")
        conjuncts = []
        for c in t["conjuncts"]:
            c = dict(c)
            kind = c.pop("kind")
            negated = c.pop("negated", False)
            if kind == "affine":
                c["coeffs"] = {int(k): v for k, v in c["coeffs"].items()}
            for p in _conjunct_participants(ConjunctSpec(kind, c)):
                if p not in known:
                    problems.append(f"tasks/{idx}: conjunct references unknown agent {p}")
            conjuncts.append(ConjunctSpec(kind=kind, params=c, negated=negated))
        tasks.append(TaskSpec(
            agent=t["agent"],
            name=t.get("name", f"phi{t['agent']}"),
            operator=op["type"],
            interval=tuple(op["interval"]),
            inner_interval=tuple(inner) if inner is not None else None,
            t_star=t_star,
            rho_max=t.get("rho_max"),
            eta=t.get("eta"),
            margins=t.get("margins"),
            funnel=t.get("funnel"),
            conjuncts=conjuncts,
        ))

    obs_doc = doc["observer"]
    observer = ObserverConfig(
        k=obs_doc["k"],
        delta_default=dict(obs_doc["delta_default"]),
        delta_overrides={int(k): dict(v) for k, v in obs_doc.get("delta_overrides", {}).items()},
        shares={int(k): list(v) for k, v in obs_doc.get("shares", {}).items()},
        init_fill=obs_doc.get("init_fill", 0.45),
    )
    for a in observer.delta_overrides:
        if a not in known:
            problems.append(f"observer/delta_overrides: unknown agent {a}")

    sim_doc = doc["sim"]
    sim = SimConfig(
        dt=sim_doc["dt"], t_end=sim_doc["t_end"], seed=sim_doc["seed"],
        eta=sim_doc.get("eta", 20.0), w_max=sim_doc.get("w_max", 0.0),
        log_every=sim_doc.get("log_every", 1),
    )

    witness = {int(k): list(v) for k, v in doc.get("witness_states", {}).items()}
    for a in witness:
        if a not in known:
            problems.append(f"witness_states: unknown agent {a}")

    if problems:
        raise ScenarioError(problems)

    scenario = Scenario(
        name=doc["name"], agents=agents,
        comm_edges=[tuple(e) for e in doc["comm_edges"]],
        tasks=tasks, observer=observer, sim=sim, witness_states=witness,
    )

    # Semantic checks that need the graphs.
    gc = scenario.comm_graph()
    gt = scenario.task_graph()
    if not gc.is_connected():
        raise ScenarioError(["comm_edges: communication graph is not connected"])
    required = min_required_k(gc, gt)
    if isinstance(observer.k, int) and required > 0 and observer.k < required:
        raise ScenarioError(
            [f"observer/k: k={observer.k} below the required depth {required}"]
        )
    return scenario


def parse_scenario(path) -> Scenario:
    """Load and validate a scenario JSON file."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError([f"{path}: no such file"])
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"{path}: invalid JSON ({exc})"])
    if not isinstance(doc, dict):
        raise ScenarioError([f"{path}: top level must be an object"])
    return parse_scenario_dict(doc)


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2, sort_keys=False) + "\n")


def builtin_scenario_path(name: str) -> Path:
    """Path of a scenario bundled with the package (fig2, case_study)."""
    return Path(__file__).parent / "scenarios" / f"{name}.json"
