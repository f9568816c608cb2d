"""Problem instance construction, JSON (de)serialization, and random families.

The canonical instance JSON schema (all keys required unless noted)::

    {
      "n_robots": 2,
      "tasks": [{"id": 0, "name": "a", "kind": "generic"},
                {"id": 1, "name": "b", "kind": "generic"},
                {"id": 2, "name": "idle", "kind": "idle"}],
      "capabilities": [[0, 1, 2], [0, 1, 2]],
      "k_indices": [2, 2],
      "edges": [[0, 1]],
      "utility": {"type": "table",
                  "entries": [{"task": 0, "coalition": [0, 1], "value": 2.2},
                              ...]}
    }

Only table utilities are serializable; world-derived utilities are rebuilt
from scenario state instead.  Assignments serialize as
``{"task_of": [...], "task_names": [...]}``.
"""
from __future__ import annotations

import itertools
import json
import math
from typing import Iterable

import numpy as np

from .core import (
    Assignment,
    CoalitionStructure,
    TableUtility,
    TaskDescriptor,
    TaskKind,
    UtilityFunction,
)

SCHEMA_VERSION = 1


class InstanceParseError(ValueError):
    pass


def make_table_structure(
    n_robots: int,
    task_names: list[str],
    table: dict[tuple[str, tuple[int, ...]], float],
    k_indices: Iterable[int],
    edges: Iterable[tuple[int, int]],
    capabilities: list[set[str]] | None = None,
) -> CoalitionStructure:
    """Build a structure from a name-keyed utility table (test convenience)."""
    tasks = tuple(
        TaskDescriptor(id=i, kind=TaskKind.GENERIC, name=name)
        for i, name in enumerate(task_names)
    ) + (TaskDescriptor(id=len(task_names), kind=TaskKind.IDLE, name="idle"),)
    name_to_id = {t.name: t.id for t in tasks}
    idle = tasks[-1].id
    if capabilities is None:
        caps = tuple(frozenset(range(len(tasks))) for _ in range(n_robots))
    else:
        caps = tuple(
            frozenset(name_to_id[n] for n in c) | {idle} for c in capabilities
        )
    entries = {
        (name_to_id[name], frozenset(coal)): v for (name, coal), v in table.items()
    }
    return CoalitionStructure(
        n_robots=n_robots,
        tasks=tasks,
        capabilities=caps,
        utility=TableUtility(entries),
        k_indices=tuple(k_indices),
        comm_edges=frozenset(edges),
    )


def demo_instance(k: tuple[int, int] = (1, 1)) -> CoalitionStructure:
    """Two robots, two tasks; joint work on task a dominates everything."""
    return make_table_structure(
        n_robots=2,
        task_names=["a", "b"],
        table={
            ("a", (0,)): 2.0,
            ("a", (1,)): 3.0,
            ("a", (0, 1)): 5.0,
            ("b", (0,)): 1.0,
            ("b", (1,)): 2.0,
            ("b", (0, 1)): 2.0,
        },
        k_indices=k,
        edges=[(0, 1)],
    )


def nash_trap_instance(k: tuple[int, int] = (2, 2)) -> CoalitionStructure:
    """Two robots where the single-switch optimum is a trap.

    Both robots on task a is stable under single switches (any unilateral
    move loses), but moving both to task b doubles the mean utility.  Only
    a chain of two coordinated switches escapes.
    """
    return make_table_structure(
        n_robots=2,
        task_names=["a", "b"],
        table={
            ("a", (0,)): 2.0,
            ("a", (1,)): 2.0,
            ("a", (0, 1)): 2.2,
            ("b", (0,)): 0.1,
            ("b", (1,)): 0.1,
            ("b", (0, 1)): 4.0,
        },
        k_indices=k,
        edges=[(0, 1)],
    )


# -- JSON ------------------------------------------------------------------


def structure_to_dict(s: CoalitionStructure) -> dict:
    if not isinstance(s.utility, TableUtility):
        raise InstanceParseError("only table utilities are serializable")
    entries = [
        {"task": task, "coalition": sorted(coal), "value": value}
        for (task, coal), value in s.utility.entries.items()
    ]
    entries.sort(key=lambda e: (e["task"], e["coalition"]))
    return {
        "schema_version": SCHEMA_VERSION,
        "n_robots": s.n_robots,
        "tasks": [{"id": t.id, "name": t.name, "kind": t.kind.value} for t in s.tasks],
        "capabilities": [sorted(c) for c in s.capabilities],
        "k_indices": list(s.k_indices),
        "edges": sorted([list(e) for e in s.comm_edges]),
        "utility": {"type": "table", "entries": entries},
    }


def structure_from_dict(d: dict) -> CoalitionStructure:
    try:
        tasks = tuple(
            TaskDescriptor(id=t["id"], kind=TaskKind(t["kind"]), name=t.get("name", ""))
            for t in d["tasks"]
        )
        caps = tuple(frozenset(c) for c in d["capabilities"])
        util = d["utility"]
        if util["type"] != "table":
            raise InstanceParseError(f"unsupported utility type {util['type']!r}")
        entries = {
            (e["task"], frozenset(e["coalition"])): float(e["value"])
            for e in util["entries"]
        }
        return CoalitionStructure(
            n_robots=int(d["n_robots"]),
            tasks=tasks,
            capabilities=caps,
            utility=TableUtility(entries),
            k_indices=tuple(int(k) for k in d["k_indices"]),
            comm_edges=frozenset(tuple(e) for e in d["edges"]),
        )
    except InstanceParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceParseError(f"bad instance file: {exc}") from exc


def save_structure(s: CoalitionStructure, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(structure_to_dict(s), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_structure(path: str) -> CoalitionStructure:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InstanceParseError(f"cannot read instance {path}: {exc}") from exc
    return structure_from_dict(d)


def assignment_to_dict(a: Assignment, s: CoalitionStructure) -> dict:
    return {
        "task_of": list(a.task_of),
        "task_names": [s.tasks[t].name for t in a.task_of],
    }


def assignment_from_dict(d: dict, s: CoalitionStructure) -> Assignment:
    return Assignment(task_of=tuple(int(t) for t in d["task_of"]))


def parse_assignment_spec(spec: str, s: CoalitionStructure) -> Assignment:
    """Parse 'a,b,idle' or compact 'ab' (one char per robot) into an assignment."""
    tokens = spec.split(",") if "," in spec else list(spec)
    if len(tokens) != s.n_robots:
        raise InstanceParseError(
            f"assignment spec {spec!r} has {len(tokens)} entries, need {s.n_robots}"
        )
    by_name = {t.name: t.id for t in s.tasks}
    task_of = []
    for tok in tokens:
        if tok in by_name:
            task_of.append(by_name[tok])
        elif tok.isdigit() and int(tok) < len(s.tasks):
            task_of.append(int(tok))
        else:
            raise InstanceParseError(f"unknown task {tok!r} in assignment spec")
    return Assignment(task_of=tuple(task_of))


# -- random families ---------------------------------------------------------


def _random_connected_edges(n: int, rng: np.random.Generator, p: float = 0.4) -> set:
    """Random spanning tree plus Bernoulli(p) extra edges: always connected."""
    edges: set[tuple[int, int]] = set()
    order = rng.permutation(n)
    for idx in range(1, n):
        a = int(order[idx])
        b = int(order[int(rng.integers(0, idx))])
        edges.add((min(a, b), max(a, b)))
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < p:
                edges.add((a, b))
    return edges


def random_table_instance(
    n_robots: int,
    m_tasks: int,
    seed: int,
    k_choices: tuple[int, ...] = (1, 2, 3),
    complete_graph: bool = False,
    k_override: int | None = None,
) -> CoalitionStructure:
    """Fully tabulated random instance; sizes must stay enumerable (n <= ~10)."""
    rng = np.random.default_rng(seed)
    robots = list(range(n_robots))
    idle = m_tasks
    tasks = tuple(
        TaskDescriptor(id=m, kind=TaskKind.GENERIC, name=f"t{m}") for m in range(m_tasks)
    ) + (TaskDescriptor(id=idle, kind=TaskKind.IDLE, name="idle"),)
    caps = []
    for _ in robots:
        capable = {m for m in range(m_tasks) if rng.random() < 0.75}
        if not capable:
            capable = {int(rng.integers(0, m_tasks))}
        caps.append(frozenset(capable | {idle}))
    entries: dict[tuple[int, frozenset[int]], float] = {}
    for m in range(m_tasks):
        for size in range(1, n_robots + 1):
            for coal in itertools.combinations(robots, size):
                entries[(m, frozenset(coal))] = float(rng.random())
    if complete_graph:
        edges = {(a, b) for a in robots for b in robots if a < b}
    else:
        edges = _random_connected_edges(n_robots, rng)
    if k_override is not None:
        k = (k_override,) * n_robots
    else:
        k = tuple(int(rng.choice(k_choices)) for _ in robots)
    return CoalitionStructure(
        n_robots=n_robots,
        tasks=tasks,
        capabilities=tuple(caps),
        utility=TableUtility(entries),
        k_indices=k,
        comm_edges=frozenset(edges),
    )


class SynergyUtility(UtilityFunction):
    """Compact random utility for large benchmark instances.

    Concave base value in the summed member weights plus a threshold bonus
    once a task-specific crew size is reached.  The threshold makes
    single-switch search insufficient, so deeper chain budgets pay off.
    """

    def __init__(self, weights: np.ndarray, scale: np.ndarray, bonus: np.ndarray, crew: np.ndarray):
        self.weights = weights
        self.scale = scale
        self.bonus = bonus
        self.crew = crew

    def value(self, coalition: frozenset[int], task: int) -> float:
        w = sum(float(self.weights[i, task]) for i in coalition)
        v = float(self.scale[task]) * math.sqrt(w)
        if len(coalition) >= int(self.crew[task]):
            v += float(self.bonus[task])
        return v


def random_synergy_instance(
    n_robots: int,
    m_tasks: int,
    seed: int,
    k_uniform: int = 1,
    comm_radius: float = 0.25,
    max_capable: int = 2,
) -> CoalitionStructure:
    """Disk-graph benchmark family with synergy-threshold utilities.

    Crew thresholds of 2-3 robots make single-switch search insufficient:
    nobody joins an empty crew task for its tiny base value, so reaching the
    bonus requires a coordinated chain.  Deeper budgets therefore raise both
    solution quality and traffic, which is what the k-sweep benchmark
    measures.
    """
    rng = np.random.default_rng(seed)
    idle = m_tasks
    tasks = tuple(
        TaskDescriptor(id=m, kind=TaskKind.GENERIC, name=f"t{m}") for m in range(m_tasks)
    ) + (TaskDescriptor(id=idle, kind=TaskKind.IDLE, name="idle"),)
    caps = []
    for _ in range(n_robots):
        n_cap = int(rng.integers(2, max_capable + 1)) if max_capable > 2 else 2
        capable = rng.choice(m_tasks, size=min(n_cap, m_tasks), replace=False)
        caps.append(frozenset(int(m) for m in capable) | frozenset({idle}))
    weights = rng.uniform(0.1, 0.4, size=(n_robots, m_tasks))
    scale = rng.uniform(0.3, 0.8, size=m_tasks)
    bonus = rng.uniform(1.5, 3.0, size=m_tasks)
    crew = rng.choice([2, 3], size=m_tasks)
    # grow the radius until the disk graph connects; keeps the family total
    positions = rng.uniform(0.0, 1.0, size=(n_robots, 2))
    radius = comm_radius
    while True:
        edges = {
            (a, b)
            for a in range(n_robots)
            for b in range(a + 1, n_robots)
            if float(np.hypot(*(positions[a] - positions[b]))) <= radius
        }
        s = CoalitionStructure(
            n_robots=n_robots,
            tasks=tasks,
            capabilities=tuple(caps),
            utility=SynergyUtility(weights, scale, bonus, crew),
            k_indices=(k_uniform,) * n_robots,
            comm_edges=frozenset(edges),
        )
        if s.is_connected():
            return s
        radius *= 1.25
