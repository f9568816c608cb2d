"""Per-agent state machines for distributed K-serial stable coalition search.

Each agent keeps its best-known assignment and a buffer of in-progress chain
proposals.  A chain message carries a base assignment plus an explicit rooted
chain of switches (the root's own switch is the first link), the root's
search budget, and the base's utility so that receivers can evaluate the
chain incrementally without global knowledge.

One round per agent, in order:

1. receive chain messages and best-solution adverts;
2. consensus: adopt a strictly better advertised best (or an equal-value,
   lexicographically smaller one, for deterministic agreement) and rebase
   buffered chains onto it, dropping chains that degenerate;
3. local optimization: evaluate every buffered chain, extend each one that
   still has budget with one additional switch per capable task, and adopt
   any result that improves the best by more than epsilon;
4. send: relay still-growing chains, send fresh extensions, re-seed own
   rooted proposals whenever the best changed, and advertise the best;
5. quiescence bookkeeping.

Chains never contain a robot twice and never contain a switch that leaves
the running assignment unchanged; the brute-force oracle enumerates exactly
the same space, which is what makes its stability verdicts binding here.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Protocol, Sequence

from .core import (
    Assignment,
    Chain,
    CoalitionStructure,
    RobotId,
    Switch,
    TaskId,
    all_idle_assignment,
    apply_switch,
    chain_is_wellformed,
    delta_utility,
    is_valid_assignment,
    marginal_utility,
    mean_utility,
    validate_assignment,
)
from .netsim import NetworkSim, Topology

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Message:
    """A rooted chain proposal in flight."""

    base: Assignment
    chain: Chain
    budget: int
    root: RobotId
    base_utility: float

    def digest(self) -> tuple:
        return (self.root, self.chain, self.base.task_of)


@dataclass(frozen=True)
class Advert:
    """Best-solution share used by the consensus protocol."""

    assignment: Assignment
    utility: float


@dataclass
class EngineConfig:
    epsilon: float = 1e-9
    quiescence_rounds: int = 3
    max_rounds: int = 500
    buffer_cap: int | None = None  # None: sized from the structure at run start
    rng_seed: int = 0  # reserved for asynchronous schedules; unused here

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.quiescence_rounds < 1:
            raise ValueError("quiescence_rounds must be >= 1")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


def default_buffer_cap(s: CoalitionStructure) -> int:
    n_tasks = max(len(c) for c in s.capabilities)
    n_nbrs = max((len(s.neighbors(i)) for i in range(s.n_robots)), default=0)
    k_max = max(s.k_indices)
    return max(100, min(10 * (n_tasks * max(1, n_nbrs)) ** k_max, 1_000_000))


@dataclass
class AgentState:
    id: RobotId
    best: Assignment
    best_utility: float
    buffer: list[Message] = field(default_factory=list)
    quiet_rounds: int = 0
    improvements: int = 0
    sent_digests: set = field(default_factory=set)
    seen_digests: set = field(default_factory=set)
    evictions: int = 0
    invalid_dropped: int = 0


@dataclass
class RunStats:
    rounds_to_converge: int = 0
    total_messages: int = 0
    converged: bool = False
    final_utility: float = 0.0
    utility_trace: list[tuple[float, float]] = field(default_factory=list)
    agent_trace: list[tuple[float, ...]] = field(default_factory=list)
    improvements_per_agent: list[int] = field(default_factory=list)
    initial_utility: float = 0.0
    evictions: int = 0

    def to_dict(self) -> dict:
        return {
            "rounds_to_converge": self.rounds_to_converge,
            "total_messages": self.total_messages,
            "converged": self.converged,
            "final_utility": self.final_utility,
            "initial_utility": self.initial_utility,
            "improvements_per_agent": list(self.improvements_per_agent),
            "evictions": self.evictions,
        }


# -- warm starts -------------------------------------------------------------


class WarmStart(Protocol):
    def propose(
        self, s: CoalitionStructure, previous: Assignment | None
    ) -> tuple[tuple[int, ...], Assignment]: ...


class PreviousSolution:
    """Reuse the previous assignment when one exists, else start all idle."""

    def propose(self, s, previous):
        a = previous if previous is not None else all_idle_assignment(s)
        return s.k_indices, a


class UniformK:
    """Override every robot's budget with a constant."""

    def __init__(self, k: int, inner: WarmStart | None = None):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self.inner = inner if inner is not None else PreviousSolution()

    def propose(self, s, previous):
        _, a = self.inner.propose(s, previous)
        return (self.k,) * s.n_robots, a


class FixedAssignment:
    """Start from an explicit assignment (fixtures, CLI --warm fixed:...)."""

    def __init__(self, assignment: Assignment):
        self.assignment = assignment

    def propose(self, s, previous):
        return s.k_indices, self.assignment


class GreedyMarginal:
    """Assign robots one at a time to their highest-marginal-value task.

    Idle counts as marginal 0, so a robot only idles when every capable
    task would lose value by adding it.
    """

    def propose(self, s, previous):
        coalitions: dict[TaskId, set[RobotId]] = {}
        task_of = []
        for i in range(s.n_robots):
            best_task, best_gain = s.idle_task, 0.0
            for task in sorted(s.capabilities[i]):
                if task == s.idle_task:
                    continue
                co = frozenset(coalitions.get(task, set()) | {i})
                gain = marginal_utility(co, i, task, s)
                if gain > best_gain:
                    best_task, best_gain = task, gain
            task_of.append(best_task)
            coalitions.setdefault(best_task, set()).add(i)
        return s.k_indices, Assignment(task_of=tuple(task_of))


def resolve_warm_start(
    s: CoalitionStructure, warm: WarmStart | None, previous: Assignment | None
) -> tuple[tuple[int, ...], Assignment]:
    """Apply the policy and fall back to all-idle on an invalid proposal."""
    policy = warm if warm is not None else PreviousSolution()
    k_vec, a0 = policy.propose(s, previous)
    if len(k_vec) != s.n_robots or any(k < 1 for k in k_vec):
        log.warning("warm start proposed bad k vector %s; using structure's", k_vec)
        k_vec = s.k_indices
    if not is_valid_assignment(a0, s):
        log.warning("warm start proposed invalid assignment %s; using all-idle", a0)
        a0 = all_idle_assignment(s)
    return tuple(k_vec), a0


# -- the state machine -------------------------------------------------------


def _seed_messages(s: CoalitionStructure, i: RobotId, base: Assignment, base_u: float) -> list[Message]:
    """One rooted length-1 chain per capable task that actually moves robot i."""
    seeds = []
    for task in sorted(s.capabilities[i]):
        if task == base.task_of[i]:
            continue
        seeds.append(
            Message(
                base=base,
                chain=(Switch(i, task),),
                budget=s.k_indices[i],
                root=i,
                base_utility=base_u,
            )
        )
    return seeds


def init_agent(
    s: CoalitionStructure,
    i: RobotId,
    warm_assignment: Assignment,
    warm_utility: float | None = None,
) -> tuple[AgentState, list[Message]]:
    """Start an agent at the warm assignment with its initial rooted proposals.

    The returned messages go to every neighbor; they also sit in the agent's
    own buffer so isolated robots still evaluate their own switches.
    """
    validate_assignment(warm_assignment, s)
    u0 = mean_utility(warm_assignment, s) if warm_utility is None else warm_utility
    st = AgentState(id=i, best=warm_assignment, best_utility=u0)
    seeds = _seed_messages(s, i, warm_assignment, u0)
    st.buffer.extend(seeds)
    for m in seeds:
        st.sent_digests.add(m.digest())
        st.seen_digests.add(m.digest())
    return st, seeds


def _evaluate_chain(
    msg: Message, s: CoalitionStructure
) -> tuple[Assignment, float] | None:
    """Fold the chain over its base, accumulating incremental utility deltas.

    Returns None for structurally invalid or degenerate (no-op) chains;
    those indicate stale messages and are dropped by the caller.
    """
    if not chain_is_wellformed(msg.chain, s):
        return None
    current = msg.base
    u = msg.base_utility
    for sw in msg.chain:
        if current.task_of[sw.robot] == sw.task:
            return None
        u += delta_utility(current, sw, s)
        current = apply_switch(current, sw, s)
    return current, u


def _rebase(msg: Message, best: Assignment, best_u: float, s: CoalitionStructure) -> Message | None:
    """Re-anchor a buffered chain onto a newly adopted best assignment.

    Only upgrades: if the message's own base is at least as good, keep it.
    Returns None when the chain degenerates against the new base (a switch
    becomes a no-op or invalid), which discards the message.
    """
    if msg.base.task_of == best.task_of:
        return msg
    if msg.base_utility > best_u or (
        msg.base_utility == best_u and msg.base.task_of <= best.task_of
    ):
        return msg
    candidate = Message(
        base=best,
        chain=msg.chain,
        budget=msg.budget,
        root=msg.root,
        base_utility=best_u,
    )
    if _evaluate_chain(candidate, s) is None:
        return None
    return candidate


def agent_round(
    st: AgentState,
    inbox: Sequence[Message | Advert],
    s: CoalitionStructure,
    cfg: EngineConfig,
    buffer_cap: int | None = None,
) -> tuple[AgentState, list[tuple[RobotId, Message | Advert]]]:
    """Run one receive/consensus/optimize/send round for a single agent.

    Mutates and returns `st`.  The outbox is a list of (destination, payload)
    pairs; an advert for the current best is always included, so neighbors
    keep converging even on otherwise quiet rounds.
    """
    eps = cfg.epsilon
    cap = buffer_cap if buffer_cap is not None else default_buffer_cap(s)
    changed = False

    # 1. receive
    adverts: list[Advert] = []
    for payload in inbox:
        if isinstance(payload, Advert):
            adverts.append(payload)
        else:
            d = payload.digest()
            if d in st.seen_digests:
                continue
            st.seen_digests.add(d)
            st.buffer.append(payload)
    if len(st.buffer) > cap:
        keep = sorted(range(len(st.buffer)), key=lambda ix: (st.buffer[ix].base_utility, ix))
        drop = set(keep[: len(st.buffer) - cap])
        st.evictions += len(drop)
        st.buffer = [m for ix, m in enumerate(st.buffer) if ix not in drop]

    def adopt(a: Assignment, u: float, strict: bool) -> None:
        nonlocal changed
        st.best, st.best_utility = a, u
        changed = True
        if strict:
            st.improvements += 1

    # 2. consensus on advertised bests
    if adverts:
        top = min(adverts, key=lambda ad: (-ad.utility, ad.assignment.task_of))
        if top.utility > st.best_utility + eps:
            adopt(top.assignment, top.utility, strict=True)
        elif top.utility == st.best_utility and top.assignment.task_of < st.best.task_of:
            adopt(top.assignment, top.utility, strict=False)
        if changed:
            rebased = []
            for m in st.buffer:
                r = _rebase(m, st.best, st.best_utility, s)
                if r is not None:
                    rebased.append(r)
            st.buffer = rebased

    # 3. local optimization
    my_caps = sorted(s.capabilities[st.id])
    outgoing: list[Message] = []
    for msg in st.buffer:
        evaluated = _evaluate_chain(msg, s)
        if evaluated is None:
            st.invalid_dropped += 1
            continue
        applied, applied_u = evaluated
        if applied_u > st.best_utility + eps:
            exact = mean_utility(applied, s)
            if exact > st.best_utility + eps:
                adopt(applied, exact, strict=True)
        if len(msg.chain) < msg.budget:
            outgoing.append(msg)  # relay: someone else may still extend it
            chain_robots = {sw.robot for sw in msg.chain}
            last = msg.chain[-1].robot
            if st.id not in chain_robots and st.id in s.neighbors(last):
                current_task = applied.task_of[st.id]
                for task in my_caps:
                    if task == current_task:
                        continue
                    sw = Switch(st.id, task)
                    ext_u = applied_u + delta_utility(applied, sw, s)
                    if ext_u > st.best_utility + eps:
                        ext_a = apply_switch(applied, sw, s)
                        exact = mean_utility(ext_a, s)
                        if exact > st.best_utility + eps:
                            adopt(ext_a, exact, strict=True)
                    ext = Message(
                        base=msg.base,
                        chain=msg.chain + (sw,),
                        budget=msg.budget,
                        root=msg.root,
                        base_utility=msg.base_utility,
                    )
                    if len(ext.chain) < ext.budget:
                        outgoing.append(ext)
    st.buffer = []

    # 4. send: chains, fresh seeds on any best change, and the advert
    if changed:
        seeds = _seed_messages(s, st.id, st.best, st.best_utility)
        outgoing.extend(seeds)
        st.buffer.extend(seeds)  # self-evaluated next round
        for m in seeds:
            st.seen_digests.add(m.digest())
    outbox: list[tuple[RobotId, Message | Advert]] = []
    nbrs = s.neighbors(st.id)
    for m in outgoing:
        d = m.digest()
        if d in st.sent_digests:
            continue
        st.sent_digests.add(d)
        for j in nbrs:
            outbox.append((j, m))
    advert = Advert(assignment=st.best, utility=st.best_utility)
    for j in nbrs:
        outbox.append((j, advert))

    # 5. quiescence bookkeeping
    st.quiet_rounds = 0 if changed else st.quiet_rounds + 1
    return st, outbox


def check_terminated(states: Sequence[AgentState], cfg: EngineConfig) -> bool:
    """All agents quiet long enough and unanimous on the best assignment."""
    if any(st.quiet_rounds < cfg.quiescence_rounds for st in states):
        return False
    first = states[0].best.task_of
    return all(st.best.task_of == first for st in states)


def _chains_in_flight(outboxes, net: NetworkSim) -> bool:
    for outbox in outboxes:
        for _, payload in outbox:
            if isinstance(payload, Message):
                return True
    return any(isinstance(p, Message) for p in net.pending_payloads())


def run_to_convergence(
    s: CoalitionStructure,
    net: NetworkSim | None = None,
    cfg: EngineConfig | None = None,
    warm: WarmStart | None = None,
    previous: Assignment | None = None,
) -> tuple[Assignment, RunStats]:
    """Drive all agents round-synchronously until consensus or the round cap.

    Anytime contract: hitting max_rounds returns the best assignment known
    to any agent, with stats.converged False.  On a disconnected comm graph
    each component converges independently (a warning is logged) and the
    merged per-component result is returned.
    """
    cfg = cfg if cfg is not None else EngineConfig()
    k_vec, a0 = resolve_warm_start(s, warm, previous)
    s_run = replace(s, k_indices=k_vec) if k_vec != s.k_indices else s
    if not s_run.is_connected():
        log.warning("comm graph disconnected; solving per component")
        return _run_per_component(s_run, cfg, a0)
    if net is None:
        net = NetworkSim(Topology.explicit(s.n_robots, s.comm_edges))

    u0 = mean_utility(a0, s_run)
    stats = RunStats(initial_utility=u0)
    states: list[AgentState] = []
    outboxes: list[list[tuple[RobotId, Message | Advert]]] = []
    for i in range(s_run.n_robots):
        st, seeds = init_agent(s_run, i, a0, u0)
        states.append(st)
        outboxes.append([(j, m) for m in seeds for j in s_run.neighbors(i)])

    cap = cfg.buffer_cap if cfg.buffer_cap is not None else default_buffer_cap(s_run)
    stats.utility_trace.append((u0, u0))
    stats.agent_trace.append(tuple(st.best_utility for st in states))
    converged = False
    rounds = 0
    for rounds in range(1, cfg.max_rounds + 1):
        inboxes = net.deliver_round(outboxes)
        outboxes = []
        for i in range(s_run.n_robots):
            _, outbox = agent_round(states[i], inboxes[i], s_run, cfg, buffer_cap=cap)
            outboxes.append(outbox)
        per_agent = tuple(st.best_utility for st in states)
        stats.agent_trace.append(per_agent)
        stats.utility_trace.append((max(per_agent), sum(per_agent) / len(per_agent)))
        if check_terminated(states, cfg) and not _chains_in_flight(outboxes, net):
            converged = True
            break

    winner = min(states, key=lambda st: (-st.best_utility, st.best.task_of))
    stats.rounds_to_converge = rounds
    stats.converged = converged
    stats.total_messages = net.messages_sent
    stats.final_utility = winner.best_utility
    stats.improvements_per_agent = [st.improvements for st in states]
    stats.evictions = sum(st.evictions for st in states)
    return winner.best, stats


class _FrozenContextUtility:
    """Utility of a sub-team evaluated jointly with frozen outside robots."""

    def __init__(self, s: CoalitionStructure, members: tuple[RobotId, ...], frozen: Assignment):
        self.s = s
        self.members = members
        outside = [i for i in range(s.n_robots) if i not in set(members)]
        self.fixed_on: dict[TaskId, frozenset[RobotId]] = {}
        for i in outside:
            t = frozen.task_of[i]
            self.fixed_on[t] = self.fixed_on.get(t, frozenset()) | {i}

    def value(self, coalition: frozenset[int], task: TaskId) -> float:
        joint = frozenset(self.members[i] for i in coalition) | self.fixed_on.get(
            task, frozenset()
        )
        return self.s.value(joint, task)


def _run_per_component(
    s: CoalitionStructure, cfg: EngineConfig, a0: Assignment
) -> tuple[Assignment, RunStats]:
    """Solve each comm component separately, others frozen at the warm start."""
    task_of = list(a0.task_of)
    merged = RunStats(initial_utility=mean_utility(a0, s))
    merged.converged = True
    for comp in s.components():
        local = {g: l for l, g in enumerate(comp)}
        edges = frozenset(
            (local[a], local[b]) for a, b in s.comm_edges if a in local and b in local
        )
        sub = CoalitionStructure(
            n_robots=len(comp),
            tasks=s.tasks,
            capabilities=tuple(s.capabilities[g] for g in comp),
            utility=_FrozenContextUtility(s, comp, a0),
            k_indices=tuple(s.k_indices[g] for g in comp),
            comm_edges=edges,
        )
        sub_warm = Assignment(task_of=tuple(a0.task_of[g] for g in comp))
        result, st = run_to_convergence(sub, None, cfg, FixedAssignment(sub_warm))
        for l, g in enumerate(comp):
            task_of[g] = result.task_of[l]
        merged.total_messages += st.total_messages
        merged.rounds_to_converge = max(merged.rounds_to_converge, st.rounds_to_converge)
        merged.converged = merged.converged and st.converged
        merged.evictions += st.evictions
    final = Assignment(task_of=tuple(task_of))
    merged.final_utility = mean_utility(final, s)
    return final, merged
