"""Static key placement and a dynamic cuckoo hash table.

A placement instance is a bipartite multigraph between keys and cells:
each key carries the candidate cells derived from its hash.  Static
construction is provided by greedy peeling and by BFS augmenting-path
matching; the dynamic table supports BFS and random-walk insertion,
lookup and deletion.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, hashcore
from .hashcore import ChoiceConfig, fingerprint, fingerprint_u64, mix64, mulhi64, positions_for, positions_for_batch


class RehashRequired(RuntimeError):
    """Insertion cannot complete; rebuild the table with a fresh seed."""


class NoAugmentingPath(RehashRequired):
    pass


class StepLimitExceeded(RehashRequired):
    pass


@dataclass(frozen=True)
class PlacementInstance:
    """n keys with candidate cells (with multiplicity) in a table of m cells."""

    n: int
    m: int
    indptr: np.ndarray
    cells: np.ndarray

    @classmethod
    def from_candidates(cls, candidates: list, m: int) -> "PlacementInstance":
        indptr = np.zeros(len(candidates) + 1, dtype=np.int64)
        for i, cand in enumerate(candidates):
            indptr[i + 1] = indptr[i] + len(cand)
        cells = np.empty(indptr[-1], dtype=np.int64)
        for i, cand in enumerate(candidates):
            cells[indptr[i]:indptr[i + 1]] = cand
        inst = cls(len(candidates), m, indptr, cells)
        if inst.n and (cells.min(initial=0) < 0 or cells.max(initial=0) >= m):
            raise ValueError("candidate cell out of range")
        return inst

    @classmethod
    def from_config(cls, n: int, cfg: ChoiceConfig, seed: int) -> "PlacementInstance":
        """Instance for keys 0..n-1 (8-byte little-endian) under cfg and seed."""
        fps = fingerprint_u64(np.arange(n, dtype=np.uint64), seed)
        cand = positions_for_batch(fps, cfg)
        indptr = np.arange(0, (n + 1) * cand.shape[1], cand.shape[1], dtype=np.int64)
        return cls(n, cfg.m, indptr, cand.reshape(-1))

    def candidates(self, x: int) -> tuple[int, ...]:
        return tuple(int(c) for c in self.cells[self.indptr[x]:self.indptr[x + 1]])


@dataclass
class Placement:
    """Injective assignment of keys to cells; None marks unassigned."""

    cell_of: list
    key_in: list

    @classmethod
    def empty(cls, n: int, m: int) -> "Placement":
        return cls([None] * n, [None] * m)

    def assign(self, key: int, cell: int) -> None:
        self.cell_of[key] = cell
        self.key_in[cell] = key

    @property
    def placed_count(self) -> int:
        return sum(c is not None for c in self.cell_of)


def placement_is_valid(inst: PlacementInstance, pl: Placement) -> bool:
    """Mutual consistency, candidacy and injectivity of a placement."""
    seen = set()
    for x, j in enumerate(pl.cell_of):
        if j is None:
            continue
        if j in seen or pl.key_in[j] != x or j not in inst.candidates(x):
            return False
        seen.add(j)
    for j, x in enumerate(pl.key_in):
        if x is not None and pl.cell_of[x] != j:
            return False
    return True


@dataclass
class PeelResult:
    placement: Placement
    core: set
    order: list = field(default_factory=list)

    @property
    def succeeded(self) -> bool:
        return not self.core


def peel(inst: PlacementInstance) -> PeelResult:
    """Greedy peeling: repeatedly place a key owning a degree-1 cell.

    Cell degrees count candidate incidences with multiplicity, so a key
    whose candidates all coincide never exposes a degree-1 cell and ends
    up in the core.  Ties break to the lowest cell index, then the
    lowest key index; the resulting core is order-independent.
    """
    n, m = inst.n, inst.m
    deg = np.zeros(m, dtype=np.int64)
    for j in inst.cells:
        deg[j] += 1
    by_cell: dict[int, list[int]] = {}
    for x in range(n):
        for j in inst.candidates(x):
            by_cell.setdefault(j, []).append(x)
    alive = [True] * n
    pl = Placement.empty(n, m)
    order: list[tuple[int, int]] = []
    heap = [j for j in range(m) if deg[j] == 1]
    heapq.heapify(heap)
    while heap:
        j = heapq.heappop(heap)
        if deg[j] != 1:
            continue
        x = min(y for y in by_cell[j] if alive[y])
        pl.assign(x, j)
        alive[x] = False
        order.append((x, j))
        for jj in inst.candidates(x):
            deg[jj] -= 1
            if deg[jj] == 1:
                heapq.heappush(heap, jj)
    core = {x for x in range(n) if alive[x]}
    return PeelResult(pl, core, order)


def max_matching(inst: PlacementInstance) -> Placement | None:
    """Complete placement via BFS augmenting paths, or None if none exists."""
    feasible, cell_of, key_in = _kernels.match_kernel(inst.indptr, inst.cells, inst.m)
    if not feasible:
        return None
    pl = Placement.empty(inst.n, inst.m)
    for x in range(inst.n):
        pl.assign(x, int(cell_of[x]))
    return pl


def default_max_steps(m: int) -> int:
    return 100 + 32 * math.ceil(math.log2(m + 1))


class CuckooTable:
    """Dynamic cuckoo hash table over byte-string keys.

    Candidate cells come from cfg and the table seed; every stored key
    occupies one of its own candidates.  Single writer; deterministic
    given (seed, operation sequence).
    """

    def __init__(self, cfg: ChoiceConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.slots: list[bytes | None] = [None] * cfg.m
        self.count = 0
        self._rw_base = mix64(seed ^ 0xD1CEB00C)
        self._rw_counter = 0

    def _cells(self, key: bytes) -> list[int]:
        return positions_for(fingerprint(key, self.seed), self.cfg)

    def lookup(self, key: bytes) -> bool:
        return any(self.slots[j] == key for j in self._cells(key))

    __contains__ = lookup

    def __len__(self) -> int:
        return self.count

    def delete(self, key: bytes) -> bool:
        for j in self._cells(key):
            if self.slots[j] == key:
                self.slots[j] = None
                self.count -= 1
                return True
        return False

    def insert_bfs(self, key: bytes) -> int:
        """Shortest eviction chain via BFS over slots; returns evictions.

        Raises NoAugmentingPath when no chain reaches an empty slot.
        """
        if self.lookup(key):
            raise ValueError("key already present")
        start_cells = sorted(set(self._cells(key)))
        parent: dict[int, int | None] = {}
        queue: list[int] = []
        for j in start_cells:
            if j not in parent:
                parent[j] = None
                queue.append(j)
        head = 0
        target = None
        while head < len(queue):
            j = queue[head]
            head += 1
            if self.slots[j] is None:
                target = j
                break
            for j2 in sorted(set(self._cells(self.slots[j]))):
                if j2 not in parent:
                    parent[j2] = j
                    queue.append(j2)
        if target is None:
            raise NoAugmentingPath(f"no augmenting path for key {key!r}")
        chain = [target]
        while parent[chain[-1]] is not None:
            chain.append(parent[chain[-1]])
        chain.reverse()  # first element is one of key's own cells
        evictions = 0
        for dst, src in zip(reversed(chain[1:]), reversed(chain[:-1])):
            self.slots[dst] = self.slots[src]
            evictions += 1
        self.slots[chain[0]] = key
        self.count += 1
        return evictions

    def insert_rw(self, key: bytes, max_steps: int | None = None) -> int:
        """Random-walk insertion; returns placement steps taken.

        Each step places the pending key into a uniformly random
        candidate cell and evicts the previous occupant, if any.  On
        exceeding max_steps the table is rolled back to its pre-insert
        state and StepLimitExceeded is raised (the draw stream is not
        rewound).
        """
        if self.lookup(key):
            raise ValueError("key already present")
        if max_steps is None:
            max_steps = default_max_steps(self.cfg.m)
        if max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        undo: list[tuple[int, bytes | None]] = []
        cur = key
        steps = 0
        while steps < max_steps:
            cells = self._cells(cur)
            j = cells[self._draw(len(cells))]
            displaced = self.slots[j]
            undo.append((j, displaced))
            self.slots[j] = cur
            steps += 1
            if displaced is None:
                self.count += 1
                return steps
            cur = displaced
        for j, displaced in reversed(undo):
            self.slots[j] = displaced
        raise StepLimitExceeded(f"gave up after {max_steps} steps for key {key!r}")

    def _draw(self, n: int) -> int:
        v = mulhi64(mix64(self._rw_base ^ mix64(self._rw_counter + 1)), n)
        self._rw_counter += 1
        return v

    def stored_keys(self) -> list[bytes]:
        return [k for k in self.slots if k is not None]

    def check_invariants(self) -> None:
        occupied = 0
        for j, k in enumerate(self.slots):
            if k is None:
                continue
            occupied += 1
            if j not in self._cells(k):
                raise AssertionError(f"key {k!r} stored outside its candidates")
        if occupied != self.count:
            raise AssertionError("count out of sync with occupied slots")
