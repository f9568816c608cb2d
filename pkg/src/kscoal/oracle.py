"""Brute-force solvers and stability verifiers for small instances.

Everything here enumerates exhaustively, so results are ground truth for
desk-scale problems and serve as the arbiter for the distributed engine.

Chain semantics (load-bearing, keep in sync with the engine): a rooted
chain starts with a switch by the root robot, consecutive switching robots
must be comm neighbors, no robot switches twice, and every switch must
actually change the running assignment (no-op switches are excluded).
The engine searches exactly this space, so "stable" means the same thing
on both sides.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Iterator

from .core import (
    Assignment,
    Chain,
    CoalitionStructure,
    RobotId,
    Switch,
    apply_chain,
    apply_switch,
    delta_utility,
    mean_utility,
    validate_assignment,
)

#: Strictness of the stability check; tighter than the engine's improvement
#: threshold so the oracle never certifies a point the engine could improve.
EPSILON_ORACLE = 1e-12

#: Refuse to enumerate assignment spaces larger than this.
MAX_ENUMERATION = 10_000_000


class InstanceTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class OracleReport:
    optimal_assignment: Assignment
    optimal_utility: float
    is_kss: bool
    witness: Chain | None


def _guard_size(s: CoalitionStructure) -> None:
    size = 1
    for caps in s.capabilities:
        size *= len(caps)
        if size > MAX_ENUMERATION:
            raise InstanceTooLargeError(
                f"assignment space exceeds {MAX_ENUMERATION}; refusing to enumerate"
            )


def iter_assignments(s: CoalitionStructure) -> Iterator[Assignment]:
    """All valid total maps, in lexicographic task_of order."""
    _guard_size(s)
    domains = [sorted(caps) for caps in s.capabilities]
    for combo in itertools.product(*domains):
        yield Assignment(task_of=tuple(combo))


def brute_force_optimal(s: CoalitionStructure) -> tuple[Assignment, float]:
    """Exhaustive max of the mean utility; ties go to the lex-smallest map."""
    best: Assignment | None = None
    best_u = float("-inf")
    for a in iter_assignments(s):
        u = mean_utility(a, s)
        if u > best_u:
            best, best_u = a, u
    assert best is not None
    return best, best_u


def iter_rooted_chains(
    s: CoalitionStructure,
    base: Assignment,
    root: RobotId,
    budget: int,
) -> Iterator[tuple[Chain, Assignment]]:
    """All valid rooted chains of length <= budget, with their results.

    Depth-first, robots and tasks ascending, shorter prefixes first, so the
    first improving chain found is deterministic.
    """

    def extend(chain: list[Switch], current: Assignment, used: set[RobotId]) -> Iterator:
        last = chain[-1].robot
        yield tuple(chain), current
        if len(chain) >= budget:
            return
        for nxt in s.neighbors(last):
            if nxt in used:
                continue
            for task in sorted(s.capabilities[nxt]):
                if task == current.task_of[nxt]:
                    continue
                sw = Switch(nxt, task)
                chain.append(sw)
                used.add(nxt)
                yield from extend(chain, apply_switch(current, sw, s), used)
                used.remove(nxt)
                chain.pop()

    if budget < 1:
        return
    for task in sorted(s.capabilities[root]):
        if task == base.task_of[root]:
            continue
        sw = Switch(root, task)
        yield from extend([sw], apply_switch(base, sw, s), {root})


def is_kss(a: Assignment, s: CoalitionStructure, epsilon: float = EPSILON_ORACLE) -> OracleReport:
    """Check K-serial stability by enumerating every rooted chain.

    Stable iff no robot admits a valid rooted chain within its budget that
    improves the mean utility by more than `epsilon`.  The report carries
    the brute-force optimum and, when unstable, the first improving chain
    found as a witness.
    """
    validate_assignment(a, s)
    _guard_size(s)
    base_u = mean_utility(a, s)
    witness: Chain | None = None
    for root in range(s.n_robots):
        for chain, result in iter_rooted_chains(s, a, root, s.k_indices[root]):
            if mean_utility(result, s) > base_u + epsilon:
                witness = chain
                break
        if witness is not None:
            break
    opt, opt_u = brute_force_optimal(s)
    return OracleReport(
        optimal_assignment=opt,
        optimal_utility=opt_u,
        is_kss=witness is None,
        witness=witness,
    )


def is_nash_stable(a: Assignment, s: CoalitionStructure) -> bool:
    """Stability against single switches: K-serial stability with all k=1."""
    return is_kss(a, replace(s, k_indices=(1,) * s.n_robots)).is_kss


def greedy_nash_baseline(
    s: CoalitionStructure, warm: Assignment | None = None
) -> Assignment:
    """Hill-climb on the globally best single switch until none improves.

    Deterministic: ties resolved by lowest robot id, then lowest task id.
    The result is Nash stable by construction.
    """
    a = warm if warm is not None else Assignment(task_of=(s.idle_task,) * s.n_robots)
    validate_assignment(a, s)
    while True:
        best_sw: Switch | None = None
        best_gain = EPSILON_ORACLE
        for i in range(s.n_robots):
            for task in sorted(s.capabilities[i]):
                if task == a.task_of[i]:
                    continue
                gain = delta_utility(a, Switch(i, task), s)
                if gain > best_gain:
                    best_sw, best_gain = Switch(i, task), gain
        if best_sw is None:
            return a
        a = apply_switch(a, best_sw, s)


def report_to_dict(r: OracleReport) -> dict:
    return {
        "optimal_task_of": list(r.optimal_assignment.task_of),
        "optimal_utility": r.optimal_utility,
        "is_kss": r.is_kss,
        "witness": [[sw.robot, sw.task] for sw in r.witness] if r.witness else None,
    }
