"""Small shared pieces: audited FIFO queues and seed derivation."""

from __future__ import annotations

import hashlib
from collections import deque


class AuditError(AssertionError):
    """An engine invariant failed during an audited run."""


class FifoQueue:
    """Deque wrapper that stamps every packet so FIFO order is checkable.

    Stamps are assigned at enqueue time; popleft verifies it hands back the
    lowest outstanding stamp, which catches any accidental reordering or
    mid-queue insertion.
    """

    __slots__ = ("_q", "_stamps", "_next_in", "_next_out")

    def __init__(self):
        self._q = deque()
        self._stamps = deque()
        self._next_in = 0
        self._next_out = 0

    def __len__(self):
        return len(self._q)

    def append(self, pkt):
        self._q.append(pkt)
        self._stamps.append(self._next_in)
        self._next_in += 1

    def popleft(self):
        stamp = self._stamps.popleft()
        if stamp != self._next_out:
            raise AuditError(f"FIFO order violated: stamp {stamp} != {self._next_out}")
        self._next_out += 1
        return self._q.popleft()

    def peek(self):
        return self._q[0]


def derive_seed(seed: int, lam: float, index: int) -> int:
    """Stable per-sweep-point seed: base seed xor a hash of (lambda, index).

    Uses sha256 rather than hash() so results do not depend on interpreter
    hash randomization.
    """
    digest = hashlib.sha256(f"{lam!r}:{index}".encode()).digest()
    return (int(seed) ^ int.from_bytes(digest[:8], "little")) & (2**63 - 1)
