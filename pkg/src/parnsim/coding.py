"""XOR network-coding extension: per-previous-hop queues and broadcasts.

A relay holding one packet for each of two mutually reachable neighbors can
XOR them and clear both in a single broadcast, since each receiver already
knows the packet it previously sent through the relay. Shadow counters, real
queues, routing tables and token buckets all gain a previous-hop dimension:
index 0 means "arrived externally", index l+1 means "arrived from node l".
"""

from __future__ import annotations

import numpy as np

from .routing import PROBABILISTIC, TOKEN
from .topology import (Schedule, Topology, InterferenceModel, WIRELINE,
                       BroadcastLink, _greedy_elements, _oracle_elements,
                       extra_activation)
from .traffic import Packet, TrafficSource
from .util import AuditError, FifoQueue

EXTERNAL = 0  # previous-hop index reserved for exogenous arrivals


def prev_index(node: int) -> int:
    return node + 1


class CodedConflicts:
    """Conflict matrix over point-to-point links plus broadcast elements.

    A broadcast occupies both of its component links, so it conflicts with
    everything either component conflicts with.
    """

    def __init__(self, topology: Topology, model: InterferenceModel,
                 bcasts: list[BroadcastLink]):
        L = topology.num_links
        B = len(bcasts)
        base = model.conflict_matrix
        mat = np.zeros((L + B, L + B), dtype=bool)
        mat[:L, :L] = base
        if B:
            comp = np.array([[topology.link_id[(b.center, b.a)],
                              topology.link_id[(b.center, b.b)]] for b in bcasts])
            pb = base[comp[:, 0]] | base[comp[:, 1]]  # (B, L)
            mat[L:, :L] = pb
            mat[:L, L:] = pb.T
            mat[L:, L:] = pb[:, comp[:, 0]] | pb[:, comp[:, 1]]
        self.matrix = mat
        self.num_links = L
        self.num_broadcasts = B


class CodedShadowQueues:
    """Counters p[prev, node, dest]; prev 0 is external."""

    def __init__(self, num_nodes: int):
        self.num_nodes = num_nodes
        self.p = np.zeros((num_nodes + 1, num_nodes, num_nodes), dtype=np.int64)
        self.injected = 0
        self.absorbed = 0

    def total(self) -> int:
        return int(self.p.sum())

    def check(self, valid_prev: np.ndarray | None = None):
        if self.p.min() < 0:
            raise AuditError("negative coded shadow counter")
        if np.any(self.p[:, np.arange(self.num_nodes), np.arange(self.num_nodes)] != 0):
            raise AuditError("coded shadow packets parked at their destination")
        if self.injected != self.absorbed + self.total():
            raise AuditError("coded shadow conservation violated")
        if valid_prev is not None and np.any(self.p[~valid_prev]):
            raise AuditError("shadow counts on undefined (prev, node) pairs")


def coded_weight_tables(p: np.ndarray, valid_prev: np.ndarray):
    """Best previous hop per (node, dest): A[n,d]=max_l p[l,n,d], argmax index.

    Invalid (prev, node) pairs are masked below zero so they can never win a
    tie; the external index 0 wins ties among valid entries.
    """
    masked = np.where(valid_prev[:, :, None], p, -1)
    lstar = masked.argmax(axis=0)
    A = np.take_along_axis(masked, lstar[None], axis=0)[0]
    return A, lstar


def coded_pp_weight(p: np.ndarray, valid_prev: np.ndarray, topology: Topology,
                    link: int, M: float):
    """(weight, prev-hop index, dest) for one point-to-point link."""
    A, lstar = coded_weight_tables(p, valid_prev)
    n = int(topology.src[link])
    j = int(topology.dst[link])
    w_d = A[n] - p[prev_index(n), j] - M
    d = int(np.argmax(w_d))
    return float(w_d[d]), int(lstar[n, d]), d


def coded_broadcast_weight(p: np.ndarray, bcast: BroadcastLink, M: float):
    """(weight, dest toward a, dest toward b) for one broadcast element.

    The packet headed to receiver a must have come through the relay from b
    and vice versa, so the two sides' previous hops are fixed.
    """
    n, a, b = bcast.center, bcast.a, bcast.b
    side_a = p[prev_index(b), n] - p[prev_index(n), a] - M
    side_b = p[prev_index(a), n] - p[prev_index(n), b] - M
    da = int(np.argmax(side_a))
    db = int(np.argmax(side_b))
    return float(side_a[da] + side_b[db]), da, db


class CodingDecisions:
    """Per-element service choices computed at weight time."""

    def __init__(self, pp_prev: np.ndarray, pp_dest: np.ndarray,
                 bc_dest_a: np.ndarray, bc_dest_b: np.ndarray):
        self.pp_prev = pp_prev    # (L,) prev index serving each pp link
        self.pp_dest = pp_dest    # (L,) commodity per pp link
        self.bc_dest_a = bc_dest_a  # (B,) commodity toward receiver a
        self.bc_dest_b = bc_dest_b  # (B,) commodity toward receiver b


def coding_schedule(shadow: CodedShadowQueues, valid_prev: np.ndarray,
                    topology: Topology, bcasts: list[BroadcastLink],
                    conflicts: CodedConflicts, M: float,
                    arrays=None) -> tuple[Schedule, CodingDecisions, np.ndarray]:
    """Greedy-maximal activation over pp and broadcast candidates.

    Elements are ordered pp links first, then broadcasts; ties in weight go
    to the smallest element id. Returns the schedule, the service decisions,
    and the raw element weights.
    """
    p = shadow.p
    L = topology.num_links
    A, lstar = coded_weight_tables(p, valid_prev)
    down = p[topology.src + 1, topology.dst]          # (L, N): p[n, j, d]
    W = A[topology.src] - down - M
    pp_dest = np.argmax(W, axis=1)
    w_pp = W[np.arange(L), pp_dest]
    pp_prev = lstar[topology.src, pp_dest]

    B = len(bcasts)
    if B:
        c = arrays if arrays is not None else _broadcast_arrays(topology, bcasts)
        side_a = p[c["prev_b"], c["center"]] - p[c["prev_n"], c["recv_a"]] - M
        side_b = p[c["prev_a"], c["center"]] - p[c["prev_n"], c["recv_b"]] - M
        bc_dest_a = np.argmax(side_a, axis=1)
        bc_dest_b = np.argmax(side_b, axis=1)
        idx = np.arange(B)
        w_bc = side_a[idx, bc_dest_a] + side_b[idx, bc_dest_b]
        weights = np.concatenate([w_pp, w_bc])
    else:
        bc_dest_a = bc_dest_b = np.zeros(0, dtype=np.int64)
        weights = w_pp

    chosen = _greedy_elements(weights.astype(float), conflicts.matrix)
    sched = Schedule(links=frozenset(e for e in chosen if e < L),
                     broadcasts=frozenset(e - L for e in chosen if e >= L))
    return sched, CodingDecisions(pp_prev, pp_dest, bc_dest_a, bc_dest_b), weights


def _broadcast_arrays(topology: Topology, bcasts: list[BroadcastLink]) -> dict:
    center = np.array([b.center for b in bcasts], dtype=np.int64)
    recv_a = np.array([b.a for b in bcasts], dtype=np.int64)
    recv_b = np.array([b.b for b in bcasts], dtype=np.int64)
    return {
        "center": center, "recv_a": recv_a, "recv_b": recv_b,
        "prev_n": center + 1, "prev_a": recv_a + 1, "prev_b": recv_b + 1,
        "link_a": np.array([topology.link_id[(b.center, b.a)] for b in bcasts],
                           dtype=np.int64),
        "link_b": np.array([topology.link_id[(b.center, b.b)] for b in bcasts],
                           dtype=np.int64),
        "cap": np.array([min(topology.capacity[topology.link_id[(b.center, b.a)]],
                             topology.capacity[topology.link_id[(b.center, b.b)]])
                         for b in bcasts], dtype=np.int64),
    }


def coded_shadow_step(shadow: CodedShadowQueues, topology: Topology,
                      bcasts: list[BroadcastLink], schedule: Schedule,
                      decisions: CodingDecisions, shadow_entries,
                      arrays=None) -> list[tuple[int, int, int, int]]:
    """Advance coded shadow counters one slot.

    Point-to-point service drains the decision's (prev, node, dest) counter;
    a broadcast drains both sides independently, each clamped by what that
    side holds. Increments land on the receivers' (prev=center) counters and
    are buffered until departures finish; counts reaching their destination
    are absorbed. Returns (prev-index, link, dest, count) transfer records,
    which include both pp and broadcast contributions.
    """
    p = shadow.p
    c = arrays if arrays is not None else _broadcast_arrays(topology, bcasts)
    transfers: list[tuple[int, int, int, int]] = []
    inc: dict[tuple[int, int, int], int] = {}

    def move(prev_from: int, node: int, dest: int, recv: int, link: int, cap: int):
        take = min(cap, int(p[prev_from, node, dest]))
        if take <= 0:
            return
        p[prev_from, node, dest] -= take
        if recv == dest:
            shadow.absorbed += take
        else:
            key = (prev_index(node), recv, dest)
            inc[key] = inc.get(key, 0) + take
        transfers.append((prev_from, link, dest, take))

    for link in sorted(schedule.links):
        n = int(topology.src[link])
        move(int(decisions.pp_prev[link]), n, int(decisions.pp_dest[link]),
             int(topology.dst[link]), link, int(topology.capacity[link]))
    for bi in sorted(schedule.broadcasts):
        n = int(c["center"][bi])
        cap = int(c["cap"][bi])
        move(int(c["prev_b"][bi]), n, int(decisions.bc_dest_a[bi]),
             int(c["recv_a"][bi]), int(c["link_a"][bi]), cap)
        move(int(c["prev_a"][bi]), n, int(decisions.bc_dest_b[bi]),
             int(c["recv_b"][bi]), int(c["link_b"][bi]), cap)
    for (pi, node, dest), v in inc.items():
        p[pi, node, dest] += v
    for src, dst, _count, shadow_count in shadow_entries:
        p[EXTERNAL, src, dst] += shadow_count
        shadow.injected += shadow_count
    return transfers


def coded_update_sigma(sigma_hat: np.ndarray, transfers, beta: float):
    """Exponential averaging of per-(prev, link, dest) shadow transfers."""
    sigma_hat *= 1.0 - beta
    for prev, link, d, count in transfers:
        sigma_hat[prev, link, d] += beta * count


def coded_split(sigma_hat: np.ndarray, topology: Topology, prev: int,
                n: int, d: int) -> np.ndarray:
    """Splitting distribution over out-links for a (prev, node, dest) class."""
    out = topology.out_links[n]
    row = sigma_hat[prev, out, d]
    total = row.sum()
    if total <= 0.0:
        return np.full(len(out), 1.0 / len(out))
    return row / total


class CodedRealQueues:
    """FIFO per (previous-hop index, link); lengths mirrored two ways."""

    def __init__(self, topology: Topology):
        self.topology = topology
        self.queues: dict[tuple[int, int], FifoQueue] = {}
        self.sub_len = np.zeros((topology.num_nodes + 1, topology.num_links),
                                dtype=np.int64)
        self.qlen = np.zeros(topology.num_links, dtype=np.int64)
        self.injected = 0
        self.delivered = 0
        self._seq = 0

    def new_packet(self, dst: int, birth: int) -> Packet:
        pkt = Packet(dst, birth, self._seq)
        self._seq += 1
        self.injected += 1
        return pkt

    def queue(self, prev: int, link: int) -> FifoQueue:
        q = self.queues.get((prev, link))
        if q is None:
            q = self.queues[(prev, link)] = FifoQueue()
        return q

    def enqueue(self, prev: int, link: int, pkt: Packet):
        self.queue(prev, link).append(pkt)
        self.sub_len[prev, link] += 1
        self.qlen[link] += 1

    def dequeue(self, prev: int, link: int) -> Packet:
        pkt = self.queues[(prev, link)].popleft()
        self.sub_len[prev, link] -= 1
        self.qlen[link] -= 1
        return pkt

    def total(self) -> int:
        return int(self.qlen.sum())


class CodedParnEngine:
    """PARN slot loop with previous-hop queueing and XOR broadcasts."""

    def __init__(self, topology: Topology, model: InterferenceModel,
                 traffic: TrafficSource, M: float, beta: float = 0.02,
                 router: str = TOKEN, bucket_cap: int = 100,
                 extra: bool = True, rng: np.random.Generator | None = None,
                 coding: bool = True, sigma_update_stride: int = 1,
                 audit: bool = False):
        if router not in (PROBABILISTIC, TOKEN):
            raise ValueError(f"unknown router {router!r}")
        self.topology = topology
        self.model = model
        self.traffic = traffic
        self.M = M
        self.beta = beta
        self.router = router
        self.extra = extra
        self.rng = rng if rng is not None else traffic.rng
        self.sigma_update_stride = max(1, int(sigma_update_stride))
        self.audit = audit

        self.bcasts = topology.broadcast_links() if coding else []
        self.arrays = _broadcast_arrays(topology, self.bcasts)
        self.conflicts = CodedConflicts(topology, model, self.bcasts)
        N, L = topology.num_nodes, topology.num_links
        self.valid_prev = np.zeros((N + 1, N), dtype=bool)
        self.valid_prev[EXTERNAL, :] = True
        for l in topology.links:
            self.valid_prev[prev_index(l.src), l.dst] = True

        self.shadow = CodedShadowQueues(N)
        self.real = CodedRealQueues(topology)
        self.sigma_hat = np.zeros((N + 1, L, N), dtype=float)
        self.bucket_cap = int(bucket_cap)
        self.tokens = np.zeros((N + 1, L, N), dtype=np.int64)
        self.saturation_events = 0
        self.wasted_tokens = 0
        # all-links shortcut is only safe when no broadcast can be scheduled
        self._wireline_extra = extra and model.kind == WIRELINE and not self.bcasts
        self._all_links = Schedule(links=frozenset(range(L)))

        self.delays: list[int] = []
        self.sigma_sum = np.zeros((L, N), dtype=np.int64)   # summed over prev
        self.eta_sum = np.zeros((L, N), dtype=np.int64)
        self.mu_sum = np.zeros(L, dtype=np.int64)
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
        self._sat0 = self.saturation_events
        self._waste0 = self.wasted_tokens
        self.measuring = True

    @property
    def measured_saturation(self) -> int:
        return self.saturation_events - self._sat0

    @property
    def measured_wasted(self) -> int:
        return self.wasted_tokens - self._waste0

    def _route(self, prev: int, node: int, pkt: Packet):
        out = self.topology.out_links[node]
        if self.router == TOKEN:
            best = out[0]
            best_r = self.tokens[prev, best, pkt.dst]
            for link in out[1:]:
                r = self.tokens[prev, link, pkt.dst]
                if r < best_r:
                    best, best_r = link, r
            if best_r >= self.bucket_cap:
                self.saturation_events += 1
            else:
                self.tokens[prev, best, pkt.dst] = best_r + 1
            link = best
        else:
            probs = coded_split(self.sigma_hat, self.topology, prev, node, pkt.dst)
            k = len(out)
            if k == 1:
                link = out[0]
            else:
                u = self.rng.random()
                cum = np.cumsum(probs)
                link = out[min(int(np.searchsorted(cum, u * cum[-1], side="right")), k - 1)]
        self.real.enqueue(prev, link, pkt)
        if self.measuring:
            self.eta_sum[link, pkt.dst] += 1

    def _serve_pp(self, link: int, prev: int, cap: int, slot: int,
                  relayed: list) -> int:
        j = int(self.topology.dst[link])
        moved = 0
        for _ in range(min(cap, int(self.real.sub_len[prev, link]))):
            pkt = self.real.dequeue(prev, link)
            moved += 1
            if pkt.dst == j:
                self.real.delivered += 1
                if self.measuring:
                    self.delays.append(slot - pkt.birth)
            else:
                relayed.append((prev_index(int(self.topology.src[link])), j, pkt))
        return moved

    def _serve_extra(self, link: int, cap: int, slot: int, relayed: list) -> int:
        # no shadow decision: drain the longest sub-queue first
        moved = 0
        while moved < cap:
            prev = int(np.argmax(self.real.sub_len[:, link]))
            if self.real.sub_len[prev, link] == 0:
                break
            moved += self._serve_pp(link, prev, 1, slot, relayed)
        return moved

    def step(self, slot: int):
        topo = self.topology
        # 1-2: weights, shadow schedule, extra activation for the real side
        shadow_sched, decisions, _w = coding_schedule(
            self.shadow, self.valid_prev, topo, self.bcasts, self.conflicts,
            self.M, self.arrays)
        if not self.extra:
            real_sched = shadow_sched
        elif self._wireline_extra:
            real_sched = self._all_links
        else:
            real_sched = extra_activation(
                shadow_sched, self.real.qlen, self.model,
                conflict_matrix=self.conflicts.matrix,
                num_elements=self.conflicts.matrix.shape[0])
        # 3: shadow step
        batch = self.traffic.sample(slot)
        transfers = coded_shadow_step(self.shadow, topo, self.bcasts,
                                      shadow_sched, decisions, batch.entries,
                                      self.arrays)
        # 4: real service; relays re-route at their receiver with prev=center
        deliveries0 = self.real.delivered
        relayed: list[tuple[int, int, Packet]] = []
        c = self.arrays
        for bi in sorted(real_sched.broadcasts):
            n = int(c["center"][bi])
            la, lb = int(c["link_a"][bi]), int(c["link_b"][bi])
            pa, pb = int(c["prev_b"][bi]), int(c["prev_a"][bi])
            cap = int(c["cap"][bi])
            pairs = min(int(self.real.sub_len[pa, la]),
                        int(self.real.sub_len[pb, lb]), cap)
            moved = 0
            for _ in range(pairs):
                moved += self._serve_pp(la, pa, 1, slot, relayed)
                moved += self._serve_pp(lb, pb, 1, slot, relayed)
            # leftover airtime degrades to point-to-point on the fuller side
            for _ in range(cap - pairs):
                if self.real.sub_len[pa, la] > 0:
                    moved += self._serve_pp(la, pa, 1, slot, relayed)
                elif self.real.sub_len[pb, lb] > 0:
                    moved += self._serve_pp(lb, pb, 1, slot, relayed)
            if self.measuring and moved:
                self.transmissions += 1
        for link in sorted(real_sched.links):
            if self.real.qlen[link] == 0:
                continue
            cap = int(topo.capacity[link])
            if link in shadow_sched.links:
                moved = self._serve_pp(link, int(decisions.pp_prev[link]), cap,
                                       slot, relayed)
            else:
                moved = self._serve_extra(link, cap, slot, relayed)
            if self.measuring and moved:
                self.transmissions += 1
        deliveries = self.real.delivered - deliveries0
        for prev, node, pkt in relayed:
            self._route(prev, node, pkt)
        # 5: token drain / sigma-hat update
        if self.router == TOKEN:
            for prev, link, d, count in transfers:
                have = int(self.tokens[prev, link, d])
                if count >= have:
                    self.wasted_tokens += count - have
                    self.tokens[prev, link, d] = 0
                else:
                    self.tokens[prev, link, d] = have - count
        elif slot % self.sigma_update_stride == 0:
            coded_update_sigma(self.sigma_hat, transfers, self.beta)
        # 6: external arrivals enter with prev = EXTERNAL
        for src, dst, count, _shadow_count in batch.entries:
            for _ in range(count):
                self._route(EXTERNAL, src, self.real.new_packet(dst, slot))
        # 7: measurement and audit
        if self.measuring:
            self.measured_slots += 1
            self.measured_arrivals += batch.total_real
            self.measured_shadow_arrivals += batch.total_shadow
            self.measured_delivered += deliveries
            for _prev, link, d, count in transfers:
                self.sigma_sum[link, d] += count
            active = sorted(real_sched.links)
            self.mu_sum[active] += topo.capacity[active]
            for bi in real_sched.broadcasts:
                self.mu_sum[c["link_a"][bi]] += c["cap"][bi]
                self.mu_sum[c["link_b"][bi]] += c["cap"][bi]
        if self.audit:
            self._check_invariants(real_sched)
        return (batch.total_real, deliveries, self.real.total(),
                self.shadow.total(), real_sched.size())

    def _check_invariants(self, real_sched: Schedule):
        if self.real.qlen.min() < 0 or self.real.sub_len.min() < 0:
            raise AuditError("negative coded real queue length")
        if self.real.injected != self.real.delivered + self.real.total():
            raise AuditError("coded real packet conservation violated")
        self.shadow.check(self.valid_prev)
        if self.router == TOKEN:
            if self.tokens.min() < 0 or self.tokens.max() > self.bucket_cap:
                raise AuditError("coded token bucket out of [0, B]")
        elems = sorted(real_sched.links) + [self.conflicts.num_links + b
                                            for b in sorted(real_sched.broadcasts)]
        sub = self.conflicts.matrix[np.ix_(elems, elems)]
        if int(sub.sum()) != len(elems):
            raise AuditError("coded schedule has conflicting elements")
        if self.extra and elems:
            blocked = self.conflicts.matrix[elems].any(axis=0)
            if not blocked[:self.conflicts.num_links].all():
                raise AuditError("extra activation left the coded schedule non-maximal")


def coded_schedule_oracle(weights, conflicts: CodedConflicts,
                          capacities=None) -> Schedule:
    """Brute-force max-weight activation over combined elements (tests)."""
    w = np.asarray(weights, dtype=float)
    if len(w) > 20:
        raise ValueError("oracle limited to <= 20 elements")
    caps = np.ones(len(w)) if capacities is None else np.asarray(capacities, dtype=float)
    best = _oracle_elements(w, conflicts.matrix, caps)
    L = conflicts.num_links
    return Schedule(links=frozenset(e for e in best if e < L),
                    broadcasts=frozenset(e - L for e in best if e >= L))
