"""Deterministic round-based message delivery over a fixed topology.

One driver owns a NetworkSim; each round it hands in per-robot outboxes and
receives per-robot inboxes.  Delivery order is fixed (sender id, then send
order), so identical seeds give identical schedules.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .core import RobotId


class RoutingError(RuntimeError):
    """A message was addressed to a non-neighbor; that is a programming bug."""


class TopologyKind(str, Enum):
    COMPLETE = "complete"
    DISK = "disk"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class Topology:
    n: int
    edges: frozenset[tuple[RobotId, RobotId]]
    kind: TopologyKind = TopologyKind.EXPLICIT

    def __post_init__(self) -> None:
        canon = set()
        for a, b in self.edges:
            if a == b:
                raise ValueError("no self loops")
            if not (0 <= a < self.n and 0 <= b < self.n):
                raise ValueError("edge endpoint out of range")
            canon.add((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", frozenset(canon))
        nbrs: list[list[int]] = [[] for _ in range(self.n)]
        for a, b in sorted(canon):
            nbrs[a].append(b)
            nbrs[b].append(a)
        object.__setattr__(self, "_neighbors", tuple(tuple(sorted(x)) for x in nbrs))

    def neighbors(self, i: RobotId) -> tuple[RobotId, ...]:
        return self._neighbors[i]  # type: ignore[attr-defined]

    @staticmethod
    def complete(n: int) -> "Topology":
        edges = frozenset((a, b) for a in range(n) for b in range(a + 1, n))
        return Topology(n=n, edges=edges, kind=TopologyKind.COMPLETE)

    @staticmethod
    def explicit(n: int, edges) -> "Topology":
        return Topology(n=n, edges=frozenset(tuple(e) for e in edges))


def disk_topology(positions: Sequence[tuple[float, float]], radius: float) -> Topology:
    """Edge (i, j) iff the Euclidean distance is within `radius`."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    n = len(positions)
    edges = set()
    for a in range(n):
        xa, ya = positions[a]
        for b in range(a + 1, n):
            xb, yb = positions[b]
            if math.hypot(xa - xb, ya - yb) <= radius:
                edges.add((a, b))
    return Topology(n=n, edges=frozenset(edges), kind=TopologyKind.DISK)


@dataclass
class NetConfig:
    delay_rounds: int = 0
    drop_prob: float = 0.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.delay_rounds < 0:
            raise ValueError("delay_rounds must be >= 0")
        if not (0.0 <= self.drop_prob < 1.0):
            raise ValueError("drop_prob must be in [0, 1)")


@dataclass
class NetworkSim:
    """Round arbiter: validates destinations, applies delay/drop, counts traffic."""

    topology: Topology
    config: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self) -> None:
        self._rng = np.random.default_rng(self.config.rng_seed)
        self._round = 0
        self._pending: list[tuple[int, RobotId, object]] = []
        self.messages_sent = 0
        self.messages_dropped = 0

    def deliver_round(
        self, outboxes: Sequence[Sequence[tuple[RobotId, object]]]
    ) -> list[list[object]]:
        """Accept one outbox per robot; return the inboxes due this round.

        A message sent with delay d becomes visible in the inboxes returned
        d calls later (delay 0 means the same call).
        """
        if len(outboxes) != self.topology.n:
            raise ValueError("need exactly one outbox per robot")
        for src, outbox in enumerate(outboxes):
            for dst, payload in outbox:
                if dst not in self.topology.neighbors(src):
                    raise RoutingError(f"robot {src} cannot reach {dst}")
                self.messages_sent += 1
                if self.config.drop_prob > 0.0 and self._rng.random() < self.config.drop_prob:
                    self.messages_dropped += 1
                    continue
                self._pending.append((self._round + self.config.delay_rounds, dst, payload))
        inboxes: list[list[object]] = [[] for _ in range(self.topology.n)]
        remaining = []
        for due, dst, payload in self._pending:
            if due <= self._round:
                inboxes[dst].append(payload)
            else:
                remaining.append((due, dst, payload))
        self._pending = remaining
        self._round += 1
        return inboxes

    def in_flight(self) -> int:
        """Messages accepted but not yet delivered (only nonzero with delay)."""
        return len(self._pending)

    def pending_payloads(self):
        return [payload for _, _, payload in self._pending]
