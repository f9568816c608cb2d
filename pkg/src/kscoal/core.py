"""Value types and pure algebra for coalition assignments.

Robots and tasks are dense integer ids.  An assignment is a total map
robot -> task; coalitions are the induced preimages, so they partition the
team by construction.  Every type here is an immutable value, safe to copy
between agents, and every operation is a pure function.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable

RobotId = int
TaskId = int


class InvalidAssignmentError(ValueError):
    pass


class InvalidSwitchError(ValueError):
    pass


class InvalidChainError(ValueError):
    pass


class TaskKind(str, Enum):
    EXPLORATION = "exploration"
    CAPTURE = "capture"
    DEFENSE = "defense"
    IDLE = "idle"
    #: abstract task defined only by a utility table (fixtures, benchmarks)
    GENERIC = "generic"


@dataclass(frozen=True)
class TaskDescriptor:
    id: TaskId
    kind: TaskKind
    name: str = ""
    payload: object = None

    def __post_init__(self) -> None:
        if not self.name:
            object.__setattr__(self, "name", f"t{self.id}")


class UtilityFunction:
    """Coalition value f(coalition, task) -> nonnegative float.

    Implementations are only consulted for non-empty coalitions on non-idle
    tasks; the conventions f(empty, .) = 0 and f(., idle) = 0 are applied by
    :meth:`CoalitionStructure.value`.
    """

    def value(self, coalition: frozenset[RobotId], task: TaskId) -> float:
        raise NotImplementedError


class TableUtility(UtilityFunction):
    """Utility given by an explicit (task, coalition) -> value table.

    Missing entries are worth 0, which keeps partial tables usable.
    """

    def __init__(self, entries: dict[tuple[TaskId, frozenset[RobotId]], float]):
        self.entries = dict(entries)

    def value(self, coalition: frozenset[RobotId], task: TaskId) -> float:
        return self.entries.get((task, coalition), 0.0)


@dataclass(frozen=True)
class Switch:
    """Reassign one robot to one task."""

    robot: RobotId
    task: TaskId


#: A chain of switches where consecutive robots must be comm neighbors.
Chain = tuple[Switch, ...]


@dataclass(frozen=True)
class CoalitionStructure:
    """The static problem: robots, tasks, capabilities, utility, budgets, graph.

    Invariants checked at construction: exactly one idle task, idle capable
    for every robot, capabilities reference existing tasks, every search
    budget k_i >= 1, and the comm graph is symmetric with no self loops.
    """

    n_robots: int
    tasks: tuple[TaskDescriptor, ...]
    capabilities: tuple[frozenset[TaskId], ...]
    utility: UtilityFunction
    k_indices: tuple[int, ...]
    comm_edges: frozenset[tuple[RobotId, RobotId]]

    def __post_init__(self) -> None:
        if self.n_robots < 1:
            raise ValueError("need at least one robot")
        ids = [t.id for t in self.tasks]
        if ids != list(range(len(self.tasks))):
            raise ValueError("task ids must be dense and ordered")
        idle = [t.id for t in self.tasks if t.kind is TaskKind.IDLE]
        if len(idle) != 1:
            raise ValueError("exactly one idle task is required")
        if len(self.capabilities) != self.n_robots:
            raise ValueError("one capability set per robot")
        for i, caps in enumerate(self.capabilities):
            if not caps <= set(ids):
                raise ValueError(f"robot {i} capability references unknown task")
            if idle[0] not in caps:
                raise ValueError(f"robot {i} must be capable of the idle task")
        if len(self.k_indices) != self.n_robots:
            raise ValueError("one k index per robot")
        if any(k < 1 for k in self.k_indices):
            raise ValueError("k indices must be >= 1")
        edges = set()
        for a, b in self.comm_edges:
            if a == b:
                raise ValueError("comm graph must not contain self loops")
            if not (0 <= a < self.n_robots and 0 <= b < self.n_robots):
                raise ValueError("comm edge endpoint out of range")
            edges.add((min(a, b), max(a, b)))
        object.__setattr__(self, "comm_edges", frozenset(edges))
        nbrs: list[list[RobotId]] = [[] for _ in range(self.n_robots)]
        for a, b in sorted(edges):
            nbrs[a].append(b)
            nbrs[b].append(a)
        object.__setattr__(self, "_neighbors", tuple(tuple(sorted(n)) for n in nbrs))
        object.__setattr__(self, "_idle_task", idle[0])

    @property
    def idle_task(self) -> TaskId:
        return self._idle_task  # type: ignore[attr-defined]

    @property
    def m_tasks(self) -> int:
        """Number of non-idle tasks; the fixed denominator of the mean utility."""
        return len(self.tasks) - 1

    def neighbors(self, i: RobotId) -> tuple[RobotId, ...]:
        return self._neighbors[i]  # type: ignore[attr-defined]

    def value(self, coalition: frozenset[RobotId], task: TaskId) -> float:
        """f with the empty-coalition and idle conventions applied."""
        if task == self.idle_task or not coalition:
            return 0.0
        return self.utility.value(coalition, task)

    def is_connected(self) -> bool:
        seen = {0}
        stack = [0]
        while stack:
            for j in self.neighbors(stack.pop()):
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.n_robots

    def components(self) -> list[tuple[RobotId, ...]]:
        left = set(range(self.n_robots))
        comps = []
        while left:
            root = min(left)
            seen = {root}
            stack = [root]
            while stack:
                for j in self.neighbors(stack.pop()):
                    if j not in seen:
                        seen.add(j)
                        stack.append(j)
            comps.append(tuple(sorted(seen)))
            left -= seen
        return comps


@dataclass(frozen=True)
class Assignment:
    """Total robot -> task map.  The version counts switch applications."""

    task_of: tuple[TaskId, ...]
    version: int = 0

    def task(self, i: RobotId) -> TaskId:
        return self.task_of[i]

    def coalition(self, task: TaskId) -> frozenset[RobotId]:
        return frozenset(i for i, t in enumerate(self.task_of) if t == task)

    def coalitions(self) -> dict[TaskId, frozenset[RobotId]]:
        groups: dict[TaskId, set[RobotId]] = {}
        for i, t in enumerate(self.task_of):
            groups.setdefault(t, set()).add(i)
        return {t: frozenset(g) for t, g in groups.items()}


def all_idle_assignment(s: CoalitionStructure) -> Assignment:
    return Assignment(task_of=(s.idle_task,) * s.n_robots, version=0)


def validate_assignment(a: Assignment, s: CoalitionStructure) -> None:
    if len(a.task_of) != s.n_robots:
        raise InvalidAssignmentError("assignment length != robot count")
    for i, t in enumerate(a.task_of):
        if t not in s.capabilities[i]:
            raise InvalidAssignmentError(f"robot {i} not capable of task {t}")


def is_valid_assignment(a: Assignment, s: CoalitionStructure) -> bool:
    try:
        validate_assignment(a, s)
    except InvalidAssignmentError:
        return False
    return True


def mean_utility(a: Assignment, s: CoalitionStructure) -> float:
    """Sum of coalition values over non-idle tasks, divided by their count.

    The summation order is fixed (ascending task id) so that equal
    assignments always produce bit-identical floats; consensus tie-breaking
    relies on this.
    """
    validate_assignment(a, s)
    if s.m_tasks == 0:
        return 0.0
    groups = a.coalitions()
    total = 0.0
    for task in sorted(groups):
        if task != s.idle_task:
            total += s.value(groups[task], task)
    return total / s.m_tasks


def validate_switch(x: Switch, s: CoalitionStructure) -> None:
    if not (0 <= x.robot < s.n_robots):
        raise InvalidSwitchError(f"unknown robot {x.robot}")
    if x.task not in s.capabilities[x.robot]:
        raise InvalidSwitchError(f"robot {x.robot} not capable of task {x.task}")


def apply_switch(a: Assignment, x: Switch, s: CoalitionStructure) -> Assignment:
    validate_switch(x, s)
    task_of = list(a.task_of)
    task_of[x.robot] = x.task
    return Assignment(task_of=tuple(task_of), version=a.version + 1)


def apply_chain(a: Assignment, chain: Chain, s: CoalitionStructure) -> Assignment:
    """Left-to-right fold of apply_switch; raises on a structurally bad chain."""
    if not chain_is_wellformed(chain, s):
        raise InvalidChainError(f"chain {chain} violates capability/adjacency rules")
    out = a
    for x in chain:
        out = apply_switch(out, x, s)
    return out


def chain_is_wellformed(chain: Chain, s: CoalitionStructure) -> bool:
    """Capability-valid switches, neighbor-adjacent, no robot twice."""
    seen: set[RobotId] = set()
    prev: RobotId | None = None
    for x in chain:
        if not (0 <= x.robot < s.n_robots) or x.task not in s.capabilities[x.robot]:
            return False
        if x.robot in seen:
            return False
        if prev is not None and x.robot not in s.neighbors(prev):
            return False
        seen.add(x.robot)
        prev = x.robot
    return True


def validate_chain(chain: Chain, s: CoalitionStructure, root: RobotId, budget: int) -> bool:
    """True iff the chain starts at `root`, fits `budget`, and is well formed.

    Total predicate: never raises.  The empty chain is vacuously valid.
    """
    if len(chain) > budget:
        return False
    if chain and chain[0].robot != root:
        return False
    return chain_is_wellformed(chain, s)


def delta_utility(a: Assignment, x: Switch, s: CoalitionStructure) -> float:
    """Mean-utility change of one switch, computed from four coalition values.

    Satisfies mean_utility(apply_switch(a, x)) == mean_utility(a) + delta
    up to float roundoff; switching a robot to its current task is 0.
    """
    validate_switch(x, s)
    old = a.task_of[x.robot]
    if old == x.task or s.m_tasks == 0:
        return 0.0
    new_co = a.coalition(x.task)
    old_co = a.coalition(old)
    gained = s.value(new_co | {x.robot}, x.task) - s.value(new_co, x.task)
    freed = s.value(old_co - {x.robot}, old) - s.value(old_co, old)
    return (gained + freed) / s.m_tasks


def marginal_utility(
    coalition: frozenset[RobotId] | Iterable[RobotId],
    i: RobotId,
    task: TaskId,
    s: CoalitionStructure,
) -> float:
    """Value robot i adds to its coalition on `task`: f(C) - f(C without i)."""
    co = frozenset(coalition)
    if i not in co:
        raise ValueError(f"robot {i} not in coalition {sorted(co)}")
    return s.value(co, task) - s.value(co - {i}, task)


def lex_less(a: Assignment, b: Assignment) -> bool:
    """Deterministic tie-break order: lexicographic on the task_of vector."""
    return a.task_of < b.task_of
