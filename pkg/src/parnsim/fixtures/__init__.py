"""Bundled topology fixtures.

wireline31: 31-node continental-backbone-style mesh, unit capacities. The
    real carrier topology it is modeled after is not published as an edge
    list, so this is a representative approximation (see the file's note).
wireless30: 30 nodes placed uniformly at random in the unit square, linked
    bidirectionally at the smallest transmission range that connects them.
wireline5: small 5-node mesh with routing redundancy, handy for fast runs.
relay3: two endpoints exchanging traffic through one relay (coding demo).
line3: directed 3-node line.
"""

from __future__ import annotations

import json
from importlib import resources

from ..topology import Topology, build_topology

NAMES = ("wireline31", "wireless30", "wireline5", "relay3", "line3")


def is_fixture(name: str) -> bool:
    return name in NAMES


def load(name: str) -> Topology:
    if not is_fixture(name):
        raise KeyError(f"unknown fixture {name!r}")
    text = resources.files(__package__).joinpath(f"{name}.json").read_text()
    return build_topology(json.loads(text), require_connected=True)
