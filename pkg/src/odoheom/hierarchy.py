"""Hierarchy index sets and their raising/lowering neighbour tables.

A single-side index is a vector n of K occupation numbers; a double-side index
is a pair (u, v), stored as one vector of 2K slots with u in slots [0, K) and v
in slots [K, 2K). Indices are kept in graded order (tier by tier, ordinal 0 is
the zero index); inside a tier they are in descending lexicographic order.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import CapacityExceeded

OUTSIDE = -1
DEFAULT_BUDGET_BYTES = 1024**3


def hierarchy_count(K, L, side="single"):
    slots = K if side == "single" else 2 * K
    return math.comb(slots + L, L)


@dataclass(frozen=True, eq=False)
class HierarchySpace:
    K: int
    L: int
    side: str
    indices: np.ndarray  # (count, slots) int
    raise_table: np.ndarray  # (slots, count), OUTSIDE past tier L
    lower_table: np.ndarray  # (slots, count), OUTSIDE where the slot is empty
    tier_starts: np.ndarray  # (L + 2,), ordinals of tier t are [tier_starts[t], tier_starts[t+1])
    _lookup: object = None

    @property
    def count(self):
        return self.indices.shape[0]

    @property
    def slots(self):
        return self.indices.shape[1]

    @property
    def tiers(self):
        return self.indices.sum(axis=1)

    def slot(self, k, which=None):
        """Slot of term k; ``which`` is 'u' or 'v' on a double-side space."""
        if not 0 <= k < self.K:
            raise IndexError(f"term {k} out of range for K={self.K}")
        if self.side == "single":
            if which not in (None, "n"):
                raise ValueError("single-side spaces have no u/v tag")
            return k
        if which == "u":
            return k
        if which == "v":
            return self.K + k
        raise ValueError("double-side neighbours need which='u' or 'v'")

    def index_of(self, n):
        n = np.asarray(n, dtype=np.int64).ravel()
        if n.size != self.slots or np.any(n < 0):
            raise ValueError("index vector has the wrong length or a negative entry")
        if n.sum() > self.L:
            return OUTSIDE
        return self._lookup(n[None, :])[0]

    def vector(self, ordinal):
        n = self.indices[ordinal]
        if self.side == "single":
            return tuple(int(x) for x in n)
        return tuple(int(x) for x in n[:self.K]), tuple(int(x) for x in n[self.K:])


def raise_index(space: HierarchySpace, ordinal: int, k: int, which=None) -> int:
    return int(space.raise_table[space.slot(k, which), ordinal])


def lower_index(space: HierarchySpace, ordinal: int, k: int, which=None) -> int:
    return int(space.lower_table[space.slot(k, which), ordinal])


def _graded_indices(slots, L):
    blocks = [np.zeros((1, slots), dtype=np.int64)]
    for t in range(1, L + 1):
        combos = np.fromiter(
            itertools.chain.from_iterable(itertools.combinations_with_replacement(range(slots), t)),
            dtype=np.int64)
        combos = combos.reshape(-1, t)
        n = np.zeros((combos.shape[0], slots), dtype=np.int64)
        rows = np.repeat(np.arange(combos.shape[0]), t)
        np.add.at(n, (rows, combos.ravel()), 1)
        blocks.append(n)
    return np.concatenate(blocks)


def _make_lookup(indices, L):
    count, slots = indices.shape
    if slots * math.log2(L + 1) < 62:
        radix = (L + 1) ** np.arange(slots, dtype=np.int64)
        keys = indices @ radix
        order = np.argsort(keys)
        sorted_keys = keys[order]

        def lookup(n):
            q = n @ radix
            pos = np.searchsorted(sorted_keys, q)
            pos = np.minimum(pos, count - 1)
            hit = sorted_keys[pos] == q
            return np.where(hit, order[pos], OUTSIDE)
        return lookup

    table = {tuple(row): i for i, row in enumerate(indices.tolist())}

    def lookup(n):
        return np.array([table.get(tuple(row), OUTSIDE) for row in n.tolist()], dtype=np.int64)
    return lookup


def enumerate_hierarchy(K: int, L: int, side: str = "single", d: int = 1,
                        budget_bytes: int = DEFAULT_BUDGET_BYTES) -> HierarchySpace:
    """All indices of total tier <= L with neighbour tables.

    ``CapacityExceeded`` is raised when count * d^2 complex entries would not fit
    in ``budget_bytes``.
    """
    if K < 1 or L < 0:
        raise ValueError("need K >= 1 and L >= 0")
    if side not in ("single", "double"):
        raise ValueError("side must be 'single' or 'double'")
    count = hierarchy_count(K, L, side)
    need = count * d * d * 16
    if need > budget_bytes:
        raise CapacityExceeded(
            f"{count} hierarchy blocks of size {d}x{d} need {need} bytes, budget is {budget_bytes}")
    slots = K if side == "single" else 2 * K
    indices = _graded_indices(slots, L)
    lookup = _make_lookup(indices, L)
    tiers = indices.sum(axis=1)
    raise_table = np.full((slots, count), OUTSIDE, dtype=np.int64)
    lower_table = np.full((slots, count), OUTSIDE, dtype=np.int64)
    inner = np.flatnonzero(tiers < L)
    for s in range(slots):
        up = indices[inner].copy()
        up[:, s] += 1
        raise_table[s, inner] = lookup(up)
        down_rows = np.flatnonzero(indices[:, s] > 0)
        down = indices[down_rows].copy()
        down[:, s] -= 1
        lower_table[s, down_rows] = lookup(down)
    tier_starts = np.searchsorted(tiers, np.arange(L + 2))
    for arr in (indices, raise_table, lower_table, tier_starts):
        arr.flags.writeable = False
    return HierarchySpace(K, L, side, indices, raise_table, lower_table, tier_starts, lookup)
