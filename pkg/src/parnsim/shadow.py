"""Shadow-queue counters and shadow back-pressure scheduling.

Shadow queues are plain per-(node, destination) counters driven by inflated
copies of the real arrivals. Back-pressure with parameter M runs on these
counters to pick link activations; the resulting transfer counts feed the
routing tables, and the activations (optionally augmented to a maximal
schedule) are handed to the real network.
"""

from __future__ import annotations

import numpy as np

from .backpressure import differential_weights
from .topology import (Schedule, Topology, InterferenceModel, WIRELINE,
                       extra_activation, greedy_maximal_schedule)
from .util import AuditError


class ShadowQueues:
    """Nonnegative shadow-packet counters p[n, d]; p[n, n] stays 0."""

    def __init__(self, num_nodes: int):
        self.p = np.zeros((num_nodes, num_nodes), dtype=np.int64)
        self.injected = 0
        self.absorbed = 0

    def total(self) -> int:
        return int(self.p.sum())

    def check(self):
        if self.p.min() < 0:
            raise AuditError("negative shadow counter")
        if np.any(np.diagonal(self.p) != 0):
            raise AuditError("shadow packets parked at their destination")
        if self.injected != self.absorbed + self.total():
            raise AuditError("shadow conservation violated")


def shadow_weights(shadow: ShadowQueues, topology: Topology, M: float):
    """Per-link (weight, commodity) from shadow differential backlog."""
    if M < 0:
        raise ValueError("M must be nonnegative")
    return differential_weights(shadow.p, topology, M)


def shadow_step(shadow: ShadowQueues, topology: Topology, active_links,
                dstar: np.ndarray, shadow_entries) -> list[tuple[int, int, int]]:
    """Move shadow packets over the activated links, then add arrivals.

    Per active link the winning commodity moves min(capacity, available)
    counts; transfers into a commodity's own destination are absorbed.
    Departures are applied before arrivals, and transferred counts only
    become visible downstream next slot (increments are buffered).
    Returns (link, destination, count) transfer records.
    """
    p = shadow.p
    transfers: list[tuple[int, int, int]] = []
    inc: dict[tuple[int, int], int] = {}
    for link in sorted(active_links):
        n = topology.src[link]
        j = topology.dst[link]
        d = int(dstar[link])
        take = min(int(topology.capacity[link]), int(p[n, d]))
        if take <= 0:
            continue
        p[n, d] -= take
        if j == d:
            shadow.absorbed += take
        else:
            key = (int(j), d)
            inc[key] = inc.get(key, 0) + take
        transfers.append((int(link), d, take))
    for (j, d), v in inc.items():
        p[j, d] += v
    for src, dst, _count, shadow_count in shadow_entries:
        p[src, dst] += shadow_count
        shadow.injected += shadow_count
    return transfers


def schedule_for_slot(shadow: ShadowQueues, real_backlogs, topology: Topology,
                      model: InterferenceModel, M: float,
                      extra: bool = False) -> Schedule:
    """Schedule handed to the real network for one slot.

    Greedy-maximal over the shadow weights; with extra activation the
    schedule is augmented to a maximal one, prioritizing links with large
    real backlogs. On wireline with extra activation every link is active.
    """
    w, _dstar = shadow_weights(shadow, topology, M)
    base = greedy_maximal_schedule(w, model)
    if not extra:
        return base
    if model.kind == WIRELINE:
        return Schedule(links=frozenset(range(topology.num_links)))
    return extra_activation(base, real_backlogs, model)
