"""Exogenous packet arrivals: Poisson flows, degree-based destinations,
and shadow-traffic inflation.

Every real arrival spawns one shadow packet, plus one more with probability
epsilon, so the shadow system carries (1+epsilon) times the real load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .topology import Topology


@dataclass(frozen=True)
class Flow:
    id: int
    src: int
    dst: int
    rate: float  # packets/slot

    def __post_init__(self):
        if self.src == self.dst:
            raise ValueError("flow source equals destination")
        if self.rate < 0:
            raise ValueError("flow rate must be nonnegative")


@dataclass
class Packet:
    __slots__ = ("dst", "birth", "seq")
    dst: int
    birth: int
    seq: int


@dataclass
class ArrivalBatch:
    """Arrivals of one slot: (src, dst, real count, shadow count) entries.

    Entries only exist for positive real counts; shadow >= real always.
    """

    slot: int
    entries: list[tuple[int, int, int, int]] = field(default_factory=list)

    @property
    def total_real(self) -> int:
        return sum(e[2] for e in self.entries)

    @property
    def total_shadow(self) -> int:
        return sum(e[3] for e in self.entries)


class DestinationPMF:
    """Row-stochastic destination probabilities with zero diagonal."""

    def __init__(self, probs: np.ndarray):
        p = np.asarray(probs, dtype=float)
        n = p.shape[0]
        if p.shape != (n, n):
            raise ValueError("pmf must be square")
        if np.any(p < 0) or np.any(np.abs(np.diagonal(p)) > 0):
            raise ValueError("pmf needs nonnegative entries and zero diagonal")
        if n > 1 and np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("pmf rows must sum to 1")
        self.probs = p
        self.num_nodes = n
        self._cum = np.cumsum(p, axis=1)

    def row(self, n: int) -> np.ndarray:
        return self.probs[n]

    def sample(self, n: int, u: float) -> int:
        return int(np.searchsorted(self._cum[n], u, side="right"))


def degree_pmf(topology: Topology) -> DestinationPMF:
    """Destination pmf proportional to J_d + J_n (out-degrees), d != n."""
    if topology.num_nodes < 2:
        raise ValueError("need at least two nodes")
    J = topology.out_degree.astype(float)
    n = topology.num_nodes
    weights = J[None, :] + J[:, None]  # weights[n, d] = J_d + J_n
    np.fill_diagonal(weights, 0.0)
    return DestinationPMF(weights / weights.sum(axis=1, keepdims=True))


def flows_from_pmf(topology: Topology, lam, pmf: DestinationPMF,
                   mode: str = "sampled") -> list[Flow]:
    """Split per-node aggregate rate lam into per-(src, dst) flows.

    `lam` may be a scalar (every node injects at the same rate) or a
    per-node array. The flow rates are lam * pmf either way; `mode` only
    selects how arrivals are drawn (see TrafficSource).
    """
    if mode not in ("sampled", "static"):
        raise ValueError(f"unknown destination mode {mode!r}")
    lam_per_node = np.broadcast_to(np.asarray(lam, dtype=float),
                                   (topology.num_nodes,))
    if np.any(lam_per_node < 0):
        raise ValueError("lambda must be nonnegative")
    flows = []
    for n in range(topology.num_nodes):
        for d in range(topology.num_nodes):
            if d != n:
                flows.append(Flow(len(flows), n, d, lam_per_node[n] * pmf.probs[n, d]))
    return flows


def poisson_counts(rng: np.random.Generator, rates: np.ndarray) -> np.ndarray:
    """Poisson draws by CDF inversion, one uniform per entry.

    Kept in-tree (rather than rng.poisson) so that sequences are pinned to
    the pcg64 stream layout and survive numpy upgrades.
    """
    rates = np.asarray(rates, dtype=float)
    u = rng.random(rates.shape)
    k = np.zeros(rates.shape, dtype=np.int64)
    pmf = np.exp(-rates)
    cdf = pmf.copy()
    active = u > cdf
    while np.any(active):
        k[active] += 1
        pmf = np.where(active, pmf * rates / np.maximum(k, 1), pmf)
        cdf = np.where(active, cdf + pmf, cdf)
        active = active & (u > cdf)
    return k


def _shadow_inflate(rng: np.random.Generator, count: int, epsilon: float) -> int:
    if epsilon <= 0.0 or count == 0:
        return count
    return count + int(np.count_nonzero(rng.random(count) < epsilon))


def generate_arrivals(flows: list[Flow], slot: int, rng: np.random.Generator,
                      epsilon: float = 0.0) -> ArrivalBatch:
    """Per-flow Poisson arrivals with shadow inflation (static-rate mode)."""
    rates = np.array([f.rate for f in flows], dtype=float)
    counts = poisson_counts(rng, rates)
    entries = []
    for f, a in zip(flows, counts):
        if a > 0:
            entries.append((f.src, f.dst, int(a), _shadow_inflate(rng, int(a), epsilon)))
    return ArrivalBatch(slot=slot, entries=entries)


class TrafficSource:
    """Per-slot arrival generator owning the run's traffic randomness.

    sampled mode: each node draws a Poisson(lambda_n) packet count and every
    packet picks its destination from the pmf on arrival. static mode: each
    (src, dst) flow is an independent Poisson stream at rate lambda*pmf.
    The two are equal in distribution; they differ only in how the random
    stream is consumed.
    """

    def __init__(self, topology: Topology, pmf: DestinationPMF, lam,
                 epsilon: float, rng: np.random.Generator, mode: str = "sampled"):
        if not 0.0 <= epsilon < 1.0:
            raise ValueError("epsilon must be in [0, 1)")
        if mode not in ("sampled", "static"):
            raise ValueError(f"unknown destination mode {mode!r}")
        self.topology = topology
        self.pmf = pmf
        self.epsilon = epsilon
        self.rng = rng
        self.mode = mode
        self.lam_per_node = np.ascontiguousarray(
            np.broadcast_to(np.asarray(lam, dtype=float), (topology.num_nodes,)))
        if mode == "static":
            self.flows = flows_from_pmf(topology, self.lam_per_node, pmf, mode)
            self._rates = np.array([f.rate for f in self.flows], dtype=float)

    def sample(self, slot: int) -> ArrivalBatch:
        if self.mode == "static":
            return generate_arrivals(self.flows, slot, self.rng, self.epsilon)
        counts = poisson_counts(self.rng, self.lam_per_node)
        entries = []
        for n in np.nonzero(counts)[0]:
            n = int(n)
            a = int(counts[n])
            per_dst: dict[int, int] = {}
            for u in self.rng.random(a):
                d = self.pmf.sample(n, u)
                per_dst[d] = per_dst.get(d, 0) + 1
            for d in sorted(per_dst):
                c = per_dst[d]
                entries.append((n, d, c, _shadow_inflate(self.rng, c, self.epsilon)))
        return ArrivalBatch(slot=slot, entries=entries)
