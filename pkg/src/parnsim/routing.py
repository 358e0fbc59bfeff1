"""Per-next-hop real queues and the two adaptive routing mechanisms.

A packet arriving at a node is assigned a next-hop FIFO queue either by
probabilistic splitting (proportional to smoothed shadow transfer rates) or
by a join-the-smallest token bucket rule, where buckets fill on packet
assignments and drain as shadow traffic crosses the link.
"""

from __future__ import annotations

import numpy as np

from .shadow import ShadowQueues, shadow_step, shadow_weights
from .topology import (Schedule, Topology, InterferenceModel, WIRELINE,
                       extra_activation, greedy_maximal_schedule)
from .traffic import Packet, TrafficSource
from .util import AuditError, FifoQueue

PROBABILISTIC = "probabilistic"
TOKEN = "token"


class RealQueues:
    """One FIFO of packets per directed link, plus a dense length mirror."""

    def __init__(self, topology: Topology):
        self.topology = topology
        self.queues = [FifoQueue() for _ in range(topology.num_links)]
        self.qlen = np.zeros(topology.num_links, dtype=np.int64)
        self.injected = 0
        self.delivered = 0
        self._seq = 0

    def new_packet(self, dst: int, birth: int) -> Packet:
        pkt = Packet(dst, birth, self._seq)
        self._seq += 1
        self.injected += 1
        return pkt

    def enqueue(self, link: int, pkt: Packet):
        self.queues[link].append(pkt)
        self.qlen[link] += 1

    def total(self) -> int:
        return int(self.qlen.sum())


def update_sigma_hat(sigma_hat: np.ndarray, sigma: np.ndarray, beta: float) -> np.ndarray:
    """One exponential-averaging step: (1-beta)*old + beta*current."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must be in (0, 1)")
    return (1.0 - beta) * np.asarray(sigma_hat, dtype=float) + beta * np.asarray(sigma, dtype=float)


class SigmaEstimate:
    """Smoothed per-(link, destination) shadow transfer rates."""

    def __init__(self, num_links: int, num_nodes: int, beta: float):
        if not 0.0 < beta < 1.0:
            raise ValueError("beta must be in (0, 1)")
        self.value = np.zeros((num_links, num_nodes), dtype=float)
        self.beta = beta

    def update(self, transfers):
        """Apply one averaging step given this slot's sparse transfers."""
        self.value *= 1.0 - self.beta
        for link, d, count in transfers:
            self.value[link, d] += self.beta * count


class TokenBuckets:
    """Per-(link, destination) token counts clamped to [0, cap]."""

    def __init__(self, num_links: int, num_nodes: int, cap: int):
        if cap < 1:
            raise ValueError("bucket cap must be positive")
        self.r = np.zeros((num_links, num_nodes), dtype=np.int64)
        self.cap = int(cap)
        self.saturation_events = 0
        self.wasted_tokens = 0

    def check(self):
        if self.r.min() < 0 or self.r.max() > self.cap:
            raise AuditError("token bucket out of [0, B]")


def splitting_probabilities(sigma_hat: np.ndarray, topology: Topology,
                            n: int, d: int) -> np.ndarray:
    """Next-hop distribution at node n for destination d.

    Proportional to the smoothed shadow rates on n's outgoing links; before
    any shadow traffic has been observed (all-zero row) falls back to the
    uniform distribution over out-neighbors.
    """
    if d == n:
        raise ValueError("no routing needed at the destination")
    out = topology.out_links[n]
    row = np.asarray(sigma_hat, dtype=float)[out, d]
    total = row.sum()
    if total <= 0.0:
        return np.full(len(out), 1.0 / len(out))
    return row / total


def route_probabilistic(pkt: Packet, probs: np.ndarray, out_link_ids,
                        rng: np.random.Generator) -> int:
    """Sample a next-hop link id from the splitting distribution."""
    k = len(out_link_ids)
    if k == 1:
        return out_link_ids[0]
    u = rng.random()
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, u * cum[-1], side="right"))
    return out_link_ids[min(idx, k - 1)]


def route_token(buckets: TokenBuckets, out_link_ids, d: int) -> int:
    """Pick the out-link whose (link, d) bucket is smallest and add a token.

    Ties go to the smallest link id; the increment clamps at the cap and the
    clamp is counted as a saturation event.
    """
    best = out_link_ids[0]
    best_r = buckets.r[best, d]
    for link in out_link_ids[1:]:
        r = buckets.r[link, d]
        if r < best_r:
            best, best_r = link, r
    if best_r >= buckets.cap:
        buckets.saturation_events += 1
    else:
        buckets.r[best, d] = best_r + 1
    return best


def drain_tokens(buckets: TokenBuckets, transfers):
    """Remove this slot's shadow transfers from the buckets, floor at 0.

    Tokens a transfer could not remove are counted as wasted.
    """
    for link, d, count in transfers:
        have = int(buckets.r[link, d])
        if count >= have:
            buckets.wasted_tokens += count - have
            buckets.r[link, d] = 0
        else:
            buckets.r[link, d] = have - count


class ParnEngine:
    """Shadow-driven scheduling plus per-next-hop FIFO routing of real packets.

    Slot phases: shadow weights, schedule (+ extra activation), shadow step,
    real service with immediate re-routing at the receiver, token drain or
    sigma-hat update, external arrival routing, metrics.
    """

    def __init__(self, topology: Topology, model: InterferenceModel,
                 traffic: TrafficSource, M: float, beta: float = 0.02,
                 router: str = TOKEN, bucket_cap: int = 100,
                 extra: bool = True, rng: np.random.Generator | None = None,
                 sigma_update_stride: int = 1, audit: bool = False):
        if router not in (PROBABILISTIC, TOKEN):
            raise ValueError(f"unknown router {router!r}")
        self.topology = topology
        self.model = model
        self.traffic = traffic
        self.M = M
        self.router = router
        self.extra = extra
        self.rng = rng if rng is not None else traffic.rng
        self.sigma_update_stride = max(1, int(sigma_update_stride))
        self.audit = audit

        self.shadow = ShadowQueues(topology.num_nodes)
        self.real = RealQueues(topology)
        self.sigma_hat = SigmaEstimate(topology.num_links, topology.num_nodes, beta)
        self.buckets = TokenBuckets(topology.num_links, topology.num_nodes, bucket_cap)
        self._all_links = Schedule(links=frozenset(range(topology.num_links)))
        self._wireline_extra = extra and model.kind == WIRELINE

        self.delays: list[int] = []
        self.sigma_sum = np.zeros((topology.num_links, topology.num_nodes), dtype=np.int64)
        self.eta_sum = np.zeros((topology.num_links, topology.num_nodes), dtype=np.int64)
        self.mu_sum = np.zeros(topology.num_links, dtype=np.int64)
        self.transmissions = 0
        self.measured_arrivals = 0
        self.measured_shadow_arrivals = 0
        self.measured_delivered = 0
        self.measured_slots = 0
        self._sat0 = 0
        self._waste0 = 0
        self.measuring = False

    def begin_measurement(self):
        self.delays = []
        self.sigma_sum[:] = 0
        self.eta_sum[:] = 0
        self.mu_sum[:] = 0
        self.transmissions = 0
        self.measured_arrivals = 0
        self.measured_shadow_arrivals = 0
        self.measured_delivered = 0
        self.measured_slots = 0
        self._sat0 = self.buckets.saturation_events
        self._waste0 = self.buckets.wasted_tokens
        self.measuring = True

    @property
    def measured_saturation(self) -> int:
        return self.buckets.saturation_events - self._sat0

    @property
    def measured_wasted(self) -> int:
        return self.buckets.wasted_tokens - self._waste0

    def _route(self, node: int, pkt: Packet) -> int:
        out = self.topology.out_links[node]
        if self.router == TOKEN:
            link = route_token(self.buckets, out, pkt.dst)
        else:
            probs = splitting_probabilities(self.sigma_hat.value, self.topology,
                                            node, pkt.dst)
            link = route_probabilistic(pkt, probs, out, self.rng)
        self.real.enqueue(link, pkt)
        if self.measuring:
            self.eta_sum[link, pkt.dst] += 1
        return link

    def step(self, slot: int):
        topo = self.topology
        # 1-2: shadow weights and schedules
        w, dstar = shadow_weights(self.shadow, topo, self.M)
        shadow_sched = greedy_maximal_schedule(w, self.model)
        if not self.extra:
            real_sched = shadow_sched
        elif self._wireline_extra:
            real_sched = self._all_links
        else:
            real_sched = extra_activation(shadow_sched, self.real.qlen, self.model)
        # 3: shadow departures then shadow arrivals
        batch = self.traffic.sample(slot)
        transfers = shadow_step(self.shadow, topo, shadow_sched.links, dstar,
                                batch.entries)
        # 4: real service, then re-route relayed packets at their receiver
        deliveries = 0
        relayed: list[tuple[int, Packet]] = []
        qlen = self.real.qlen
        for link in sorted(real_sched.links):
            avail = int(qlen[link])
            if avail == 0:
                continue
            take = min(int(topo.capacity[link]), avail)
            j = int(topo.dst[link])
            q = self.real.queues[link]
            moved = 0
            for _ in range(take):
                pkt = q.popleft()
                moved += 1
                if pkt.dst == j:
                    deliveries += 1
                    if self.measuring:
                        self.delays.append(slot - pkt.birth)
                else:
                    relayed.append((j, pkt))
            qlen[link] -= moved
            if self.measuring and moved:
                self.transmissions += 1
        self.real.delivered += deliveries
        for node, pkt in relayed:
            self._route(node, pkt)
        # 5: token drain / sigma-hat update from this slot's shadow transfers
        if self.router == TOKEN:
            drain_tokens(self.buckets, transfers)
        elif slot % self.sigma_update_stride == 0:
            self.sigma_hat.update(transfers)
        # 6: inject and route this slot's external arrivals
        for src, dst, count, _shadow_count in batch.entries:
            for _ in range(count):
                self._route(src, self.real.new_packet(dst, slot))
        # 7: measurement and audit
        if self.measuring:
            self.measured_slots += 1
            self.measured_arrivals += batch.total_real
            self.measured_shadow_arrivals += batch.total_shadow
            self.measured_delivered += deliveries
            for link, d, count in transfers:
                self.sigma_sum[link, d] += count
            active = sorted(real_sched.links)
            self.mu_sum[active] += topo.capacity[active]
        if self.audit:
            self._check_invariants(real_sched)
        return (batch.total_real, deliveries, self.real.total(),
                self.shadow.total(), real_sched.size())

    def _check_invariants(self, real_sched: Schedule):
        if self.real.qlen.min() < 0:
            raise AuditError("negative real queue length")
        if self.real.injected != self.real.delivered + self.real.total():
            raise AuditError("real packet conservation violated")
        self.shadow.check()
        if self.router == TOKEN:
            self.buckets.check()
        active = sorted(real_sched.links)
        mat = self.model.conflict_matrix
        sub = mat[np.ix_(active, active)]
        if int(sub.sum()) != len(active):
            raise AuditError("schedule has conflicting links")
        if self.extra and active and not mat[active].any(axis=0).all():
            raise AuditError("extra activation left the schedule non-maximal")


def serve_real_queues(engine: ParnEngine, schedule: Schedule, slot: int) -> int:
    """Serve active links FIFO and re-route relays; returns deliveries.

    Standalone flavor of phase 4 for direct exercise in tests.
    """
    deliveries = 0
    relayed: list[tuple[int, Packet]] = []
    topo = engine.topology
    for link in sorted(schedule.links):
        take = min(int(topo.capacity[link]), int(engine.real.qlen[link]))
        j = int(topo.dst[link])
        q = engine.real.queues[link]
        for _ in range(take):
            pkt = q.popleft()
            engine.real.qlen[link] -= 1
            if pkt.dst == j:
                deliveries += 1
                engine.real.delivered += 1
            else:
                relayed.append((j, pkt))
    for node, pkt in relayed:
        engine._route(node, pkt)
    return deliveries
