"""Traditional and M-weighted back-pressure over per-destination queues.

The per-link weight is the maximum differential backlog across destinations
minus M; with M=0 this is the classic algorithm. Links move up to their
capacity from the winning destination's queue each slot, departures before
arrivals, and packets transmitted in slot t become available at t+1.
"""

from __future__ import annotations

import numpy as np

from .topology import (Schedule, Topology, InterferenceModel,
                       greedy_maximal_schedule, max_weight_schedule_oracle)
from .traffic import ArrivalBatch, Packet, TrafficSource
from .util import AuditError, FifoQueue


class PerDestQueues:
    """FIFO packet queues indexed by (node, destination).

    Queue lengths are mirrored in a dense integer matrix so weight
    computation stays vectorized; Q[n][n] is structurally empty.
    """

    def __init__(self, num_nodes: int):
        self.num_nodes = num_nodes
        self.qlen = np.zeros((num_nodes, num_nodes), dtype=np.int64)
        self._queues: dict[tuple[int, int], FifoQueue] = {}
        self.injected = 0
        self.delivered = 0
        self._seq = 0

    def queue(self, n: int, d: int) -> FifoQueue:
        q = self._queues.get((n, d))
        if q is None:
            q = self._queues[(n, d)] = FifoQueue()
        return q

    def push_new(self, n: int, d: int, birth: int) -> Packet:
        pkt = Packet(d, birth, self._seq)
        self._seq += 1
        self.queue(n, d).append(pkt)
        self.qlen[n, d] += 1
        self.injected += 1
        return pkt

    def total(self) -> int:
        return int(self.qlen.sum())


def differential_weights(counts: np.ndarray, topology: Topology, M: float):
    """Per-link (weight, commodity): max_d of counts[n,d]-counts[j,d]-M.

    Ties between destinations go to the smallest destination id.
    """
    W = counts[topology.src] - counts[topology.dst] - M  # (L, N)
    dstar = np.argmax(W, axis=1)
    w = W[np.arange(len(dstar)), dstar]
    return w.astype(float), dstar


def bp_weights(queues: PerDestQueues, topology: Topology, M: float = 0.0):
    if M < 0:
        raise ValueError("M must be nonnegative")
    return differential_weights(queues.qlen, topology, M)


def bp_step(queues: PerDestQueues, topology: Topology, schedule: Schedule,
            dstar: np.ndarray, batch: ArrivalBatch,
            delays: list[int] | None = None) -> np.ndarray:
    """Advance the real queues one slot: serve active links, then inject.

    Each active link moves min(capacity, backlog) packets of its winning
    commodity; packets landing on their destination leave immediately and
    their delay (in slots, from birth) is appended to `delays`. Returns the
    per-link moved counts.
    """
    moved = np.zeros(topology.num_links, dtype=np.int64)
    inflight: list[tuple[int, int, list[Packet]]] = []
    for link in sorted(schedule.links):
        n = topology.src[link]
        j = topology.dst[link]
        d = int(dstar[link])
        take = min(int(topology.capacity[link]), int(queues.qlen[n, d]))
        if take <= 0:
            continue
        q = queues.queue(n, d)
        pkts = [q.popleft() for _ in range(take)]
        queues.qlen[n, d] -= take
        moved[link] = take
        if j == d:
            queues.delivered += take
            if delays is not None:
                delays.extend(batch.slot - p.birth for p in pkts)
        else:
            inflight.append((int(j), d, pkts))
    for j, d, pkts in inflight:
        q = queues.queue(j, d)
        for p in pkts:
            q.append(p)
        queues.qlen[j, d] += len(pkts)
    for src, dst, count, _shadow in batch.entries:
        for _ in range(count):
            queues.push_new(src, dst, batch.slot)
    return moved


class BackpressureEngine:
    """Slot loop for the per-destination-queue baselines."""

    def __init__(self, topology: Topology, model: InterferenceModel,
                 traffic: TrafficSource, M: float = 0.0, scheduler: str = "lwf",
                 audit: bool = False):
        if scheduler not in ("lwf", "oracle"):
            raise ValueError(f"unknown scheduler {scheduler!r}")
        if scheduler == "oracle" and topology.num_links > 20:
            raise ValueError("oracle scheduler limited to <= 20 links")
        self.topology = topology
        self.model = model
        self.traffic = traffic
        self.M = M
        self.scheduler = scheduler
        self.audit = audit
        self.queues = PerDestQueues(topology.num_nodes)
        self.delays: list[int] = []
        self.moved_sum = np.zeros((topology.num_links,), dtype=np.int64)
        self.active_slots = np.zeros((topology.num_links,), dtype=np.int64)
        self.transmissions = 0
        self.measured_arrivals = 0
        self.measured_delivered = 0

    def begin_measurement(self):
        self.delays = []
        self.moved_sum[:] = 0
        self.active_slots[:] = 0
        self.transmissions = 0
        self.measured_arrivals = 0
        self.measured_delivered = 0

    def step(self, slot: int):
        w, dstar = bp_weights(self.queues, self.topology, self.M)
        if self.scheduler == "oracle":
            schedule = max_weight_schedule_oracle(w, self.model, self.topology.capacity)
        else:
            schedule = greedy_maximal_schedule(w, self.model)
        batch = self.traffic.sample(slot)
        before_delivered = self.queues.delivered
        moved = bp_step(self.queues, self.topology, schedule, dstar, batch, self.delays)
        deliveries = self.queues.delivered - before_delivered
        active = sorted(schedule.links)
        self.active_slots[active] += 1
        self.moved_sum += moved
        self.transmissions += int(np.count_nonzero(moved))
        self.measured_arrivals += batch.total_real
        self.measured_delivered += deliveries
        if self.audit:
            self._check_invariants(schedule)
        return (batch.total_real, deliveries, self.queues.total(), 0, schedule.size())

    def _check_invariants(self, schedule: Schedule):
        q = self.queues
        if q.qlen.min() < 0:
            raise AuditError("negative queue length")
        if np.any(np.diagonal(q.qlen) != 0):
            raise AuditError("packets queued at their own destination")
        if q.injected != q.delivered + q.total():
            raise AuditError("packet conservation violated")
        active = sorted(schedule.links)
        sub = self.model.conflict_matrix[np.ix_(active, active)]
        if int(sub.sum()) != len(active):
            raise AuditError("schedule has conflicting links")


def run_bp_slot(engine: BackpressureEngine, slot: int):
    """One slot of the baseline: weights, schedule, queue update."""
    return engine.step(slot)
