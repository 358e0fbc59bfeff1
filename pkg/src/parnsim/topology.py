"""Directed network topologies, interference models, and link schedules.

Nodes are dense integers 0..N-1. Links are directed (src, dst) pairs with an
integer per-slot capacity, kept in a canonical order sorted by (src, dst) so
that link ids are stable and every tie-break on "smallest link id" is
reproducible.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np


class TopologyError(ValueError):
    """Raised for malformed topology specs (self-loops, duplicates, ...)."""


@dataclass(frozen=True)
class Link:
    src: int
    dst: int
    capacity: int = 1


@dataclass(frozen=True)
class BroadcastLink:
    """One transmission from `center` decoded by both receivers.

    Requires all four directed links center<->a and center<->b to exist.
    Canonical form keeps a < b; (n|ab) and (n|ba) are the same physical
    broadcast.
    """

    center: int
    a: int
    b: int

    def __post_init__(self):
        if not (self.a < self.b):
            raise TopologyError("broadcast receivers must be in canonical order a < b")
        if self.center in (self.a, self.b):
            raise TopologyError("broadcast center cannot be a receiver")


class Topology:
    """Validated directed graph with per-link capacities and index tables."""

    def __init__(self, num_nodes: int, links: list[Link], name: str = "",
                 coords: np.ndarray | None = None):
        self.num_nodes = int(num_nodes)
        self.links = sorted(links, key=lambda l: (l.src, l.dst))
        self.name = name
        self.coords = coords
        self._validate()

        self.num_links = len(self.links)
        self.src = np.array([l.src for l in self.links], dtype=np.int64)
        self.dst = np.array([l.dst for l in self.links], dtype=np.int64)
        self.capacity = np.array([l.capacity for l in self.links], dtype=np.int64)
        self.link_id = {(l.src, l.dst): i for i, l in enumerate(self.links)}

        self.out_links: list[list[int]] = [[] for _ in range(self.num_nodes)]
        self.in_links: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for i, l in enumerate(self.links):
            self.out_links[l.src].append(i)
            self.in_links[l.dst].append(i)
        # canonical link order already sorts out_links[n] by neighbor id
        self.out_neighbors = [[self.links[i].dst for i in self.out_links[n]]
                              for n in range(self.num_nodes)]
        self.in_neighbors = [[self.links[i].src for i in self.in_links[n]]
                             for n in range(self.num_nodes)]
        self.out_degree = np.array([len(v) for v in self.out_links], dtype=np.int64)

    def _validate(self):
        seen = set()
        for l in self.links:
            if l.src == l.dst:
                raise TopologyError(f"self-loop at node {l.src}")
            if not (0 <= l.src < self.num_nodes and 0 <= l.dst < self.num_nodes):
                raise TopologyError(f"link ({l.src},{l.dst}) has endpoint out of range")
            if (l.src, l.dst) in seen:
                raise TopologyError(f"duplicate link ({l.src},{l.dst})")
            if l.capacity < 1 or int(l.capacity) != l.capacity:
                raise TopologyError(f"link ({l.src},{l.dst}) capacity must be a positive integer")
            seen.add((l.src, l.dst))

    def undirected_adjacency(self) -> list[set[int]]:
        adj: list[set[int]] = [set() for _ in range(self.num_nodes)]
        for l in self.links:
            adj[l.src].add(l.dst)
            adj[l.dst].add(l.src)
        return adj

    def is_connected(self) -> bool:
        if self.num_nodes == 0:
            return True
        adj = self.undirected_adjacency()
        return len(_bfs_reach(adj, 0)) == self.num_nodes

    def node_distances(self) -> np.ndarray:
        """All-pairs hop distances on the undirected support graph."""
        adj = self.undirected_adjacency()
        n = self.num_nodes
        dist = np.full((n, n), np.iinfo(np.int64).max // 2, dtype=np.int64)
        for s in range(n):
            dist[s, s] = 0
            q = deque([s])
            while q:
                u = q.popleft()
                for v in adj[u]:
                    if dist[s, v] > dist[s, u] + 1:
                        dist[s, v] = dist[s, u] + 1
                        q.append(v)
        return dist

    def broadcast_links(self) -> list[BroadcastLink]:
        """All feasible two-receiver broadcasts, sorted by (center, a, b).

        A broadcast at n toward {a, b} exists only when n<->a and n<->b are
        bidirectional, so each receiver already knows the packet addressed to
        the other and can decode the XOR.
        """
        out = []
        ids = self.link_id
        for n in range(self.num_nodes):
            nbrs = [j for j in self.out_neighbors[n] if (j, n) in ids]
            for x in range(len(nbrs)):
                for y in range(x + 1, len(nbrs)):
                    out.append(BroadcastLink(n, nbrs[x], nbrs[y]))
        return out


def _bfs_reach(adj: list[set[int]], start: int) -> set[int]:
    seen = {start}
    q = deque([start])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                q.append(v)
    return seen


def build_topology(spec: dict, require_connected: bool = False) -> Topology:
    """Build and validate a Topology from a parsed spec dict.

    Two spec shapes are accepted:
      {"nodes": N, "links": [{"from": n, "to": j, "capacity": c}, ...]}
      {"coords": [[x, y], ...], "range": r}          explicit radio range
      {"coords": [[x, y], ...], "auto_connect": true} smallest connecting range

    Coordinate specs produce bidirectional unit-capacity links between every
    pair within range.
    """
    name = spec.get("name", "")
    if "coords" in spec:
        coords = np.asarray(spec["coords"], dtype=float)
        n = len(coords)
        d = np.sqrt(((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2))
        rng_val = spec.get("range", "auto" if spec.get("auto_connect") else None)
        if rng_val is None:
            raise TopologyError("coordinate spec needs 'range' or 'auto_connect'")
        if rng_val == "auto":
            radius = _auto_connect_range(d)
        else:
            radius = float(rng_val)
        links = []
        for i in range(n):
            for j in range(n):
                if i != j and d[i, j] <= radius + 1e-12:
                    links.append(Link(i, j, 1))
        topo = Topology(n, links, name=name, coords=coords)
    else:
        nodes = spec["nodes"]
        n = int(nodes) if not isinstance(nodes, list) else len(nodes)
        links = [Link(int(e["from"]), int(e["to"]), int(e.get("capacity", 1)))
                 for e in spec["links"]]
        if spec.get("bidirectional"):
            fwd = {(l.src, l.dst) for l in links}
            links += [Link(l.dst, l.src, l.capacity) for l in links
                      if (l.dst, l.src) not in fwd]
        topo = Topology(n, links, name=name)
    if (require_connected or "coords" in spec) and not topo.is_connected():
        raise TopologyError("topology is not connected")
    return topo


def load_topology(path, require_connected: bool = False) -> Topology:
    with open(path) as fh:
        return build_topology(json.load(fh), require_connected=require_connected)


def _auto_connect_range(d: np.ndarray) -> float:
    """Smallest pairwise distance at which the disk graph is connected."""
    n = d.shape[0]
    cand = sorted(set(d[np.triu_indices(n, k=1)].tolist()))
    lo, hi = 0, len(cand) - 1
    if not _connected_at(d, cand[hi]):
        raise TopologyError("graph not connectable at maximum range")
    while lo < hi:
        mid = (lo + hi) // 2
        if _connected_at(d, cand[mid]):
            hi = mid
        else:
            lo = mid + 1
    return cand[lo]


def _connected_at(d: np.ndarray, radius: float) -> bool:
    n = d.shape[0]
    adj = [set(np.nonzero((d[i] <= radius + 1e-12) & (np.arange(n) != i))[0].tolist())
           for i in range(n)]
    return len(_bfs_reach(adj, 0)) == n


WIRELINE = "wireline"
K_HOP = "k-hop"


class InterferenceModel:
    """Per-link conflict sets; N_b(l) always contains l itself.

    Under the k-hop model two links conflict when the hop distance between
    their endpoint sets, on the undirected support graph, is at most k-1
    (k=1 means shared endpoint). Wireline links never conflict with anything
    but themselves.
    """

    def __init__(self, kind: str, k: int, conflict_matrix: np.ndarray):
        self.kind = kind
        self.k = k
        self.conflict_matrix = conflict_matrix  # bool (L, L), True on diagonal
        self.num_links = conflict_matrix.shape[0]
        self.conflict_sets = tuple(frozenset(np.nonzero(conflict_matrix[i])[0].tolist())
                                   for i in range(self.num_links))

    def conflicts(self, link: int) -> frozenset[int]:
        return self.conflict_sets[link]


def conflict_sets(topology: Topology, kind: str = WIRELINE, k: int = 1) -> InterferenceModel:
    L = topology.num_links
    if kind == WIRELINE:
        return InterferenceModel(WIRELINE, 0, np.eye(L, dtype=bool))
    if kind != K_HOP:
        raise ValueError(f"unknown interference kind {kind!r}")
    if k < 1:
        raise ValueError("k-hop interference needs k >= 1")
    dist = topology.node_distances()
    ends = np.stack([topology.src, topology.dst], axis=1)  # (L, 2)
    # min over the 4 endpoint pairings of each link pair
    pair = dist[ends[:, None, :, None], ends[None, :, None, :]]  # (L, L, 2, 2)
    min_dist = pair.min(axis=(2, 3))
    return InterferenceModel(K_HOP, k, min_dist <= k - 1)


@dataclass(frozen=True)
class Schedule:
    """Conflict-free set of simultaneously active links.

    `links` are point-to-point link ids; `broadcasts` are indices into the
    engine's broadcast-link list (empty unless network coding is on).
    """

    links: frozenset[int] = frozenset()
    broadcasts: frozenset[int] = frozenset()

    def size(self) -> int:
        return len(self.links) + len(self.broadcasts)


def greedy_maximal_schedule(weights, model: InterferenceModel) -> Schedule:
    """Largest-weight-first activation over strictly positive weights.

    Repeatedly activates the heaviest remaining candidate (ties to the
    smallest link id) and silences its conflict set. The result is
    conflict-free and maximal with respect to positive-weight candidates.
    """
    w = np.asarray(weights, dtype=float)
    chosen = _greedy_elements(w, model.conflict_matrix)
    return Schedule(links=frozenset(chosen))


def _greedy_elements(w: np.ndarray, conflict_matrix: np.ndarray) -> list[int]:
    cand = np.nonzero(w > 0)[0]
    if cand.size == 0:
        return []
    order = cand[np.lexsort((cand, -w[cand]))]
    blocked = np.zeros(len(w), dtype=bool)
    chosen = []
    for e in order:
        if not blocked[e]:
            chosen.append(int(e))
            blocked |= conflict_matrix[e]
    return chosen


def max_weight_schedule_oracle(weights, model: InterferenceModel,
                               capacities=None) -> Schedule:
    """Brute-force max-weight schedule; test oracle for tiny instances only."""
    w = np.asarray(weights, dtype=float)
    if len(w) > 20:
        raise ValueError("oracle limited to instances with <= 20 links")
    caps = np.ones(len(w)) if capacities is None else np.asarray(capacities, dtype=float)
    best = _oracle_elements(w, model.conflict_matrix, caps)
    return Schedule(links=frozenset(best))


def _oracle_elements(w: np.ndarray, conflict_matrix: np.ndarray,
                     caps: np.ndarray) -> tuple[int, ...]:
    """Exhaustive max of sum(c*w) over conflict-free subsets of positive-w
    elements; ties resolved to the lexicographically smallest id tuple."""
    cand = [int(i) for i in np.nonzero(w > 0)[0]]
    vals = caps * w
    best_val = 0.0
    best_set: tuple[int, ...] = ()

    def rec(idx: int, current: list[int], value: float, blocked: np.ndarray):
        nonlocal best_val, best_set
        if idx == len(cand):
            key = tuple(current)
            if value > best_val + 1e-12 or (abs(value - best_val) <= 1e-12 and key < best_set):
                best_val, best_set = value, key
            return
        e = cand[idx]
        if not blocked[e]:
            rec(idx + 1, current + [e], value + vals[e], blocked | conflict_matrix[e])
        rec(idx + 1, current, value, blocked)

    rec(0, [], 0.0, np.zeros(len(w), dtype=bool))
    return best_set


def extra_activation(base: Schedule, backlogs, model: InterferenceModel,
                     conflict_matrix: np.ndarray | None = None,
                     num_elements: int | None = None) -> Schedule:
    """Augment a schedule to a maximal one with point-to-point links.

    Candidates are added in decreasing real-queue backlog order (ties to the
    smallest link id), skipping anything that conflicts with the active set.
    Base links are never removed and broadcasts are never added. On wireline
    this activates every link.

    `conflict_matrix`/`num_elements` override the model's matrix when the
    active set lives in an extended element space (coding case).
    """
    mat = model.conflict_matrix if conflict_matrix is None else conflict_matrix
    n_elem = mat.shape[0] if num_elements is None else num_elements
    n_pp = model.num_links
    blocked = np.zeros(n_elem, dtype=bool)
    for e in base.links:
        blocked |= mat[e]
    offset = n_pp  # broadcast element ids start after pp links
    for b in base.broadcasts:
        blocked |= mat[offset + b]
    bk = np.asarray(backlogs, dtype=float)
    order = np.lexsort((np.arange(n_pp), -bk))
    added = []
    for e in order:
        e = int(e)
        if e not in base.links and not blocked[e]:
            added.append(e)
            blocked |= mat[e]
    return Schedule(links=base.links | frozenset(added), broadcasts=base.broadcasts)


def is_conflict_free(schedule: Schedule, conflict_matrix: np.ndarray,
                     num_pp: int | None = None) -> bool:
    elems = sorted(schedule.links) + [
        (num_pp if num_pp is not None else conflict_matrix.shape[0]) + b
        for b in sorted(schedule.broadcasts)]
    for i, a in enumerate(elems):
        for b in elems[i + 1:]:
            if conflict_matrix[a, b]:
                return False
    return True


def is_maximal_pp(schedule: Schedule, model: InterferenceModel,
                  conflict_matrix: np.ndarray | None = None) -> bool:
    """True when no inactive point-to-point link could still be activated."""
    mat = model.conflict_matrix if conflict_matrix is None else conflict_matrix
    blocked = np.zeros(mat.shape[0], dtype=bool)
    for e in schedule.links:
        blocked |= mat[e]
    for b in schedule.broadcasts:
        blocked |= mat[model.num_links + b]
    for e in range(model.num_links):
        if e not in schedule.links and not blocked[e]:
            return False
    return True
