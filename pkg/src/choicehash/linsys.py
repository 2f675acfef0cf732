"""Retrieval via linear systems over GF(2).

A retrieval structure answers f(x) for every construction key x and may
answer anything for other inputs.  Keys map to sparse rows of a matrix
over GF(2); solving A z = f gives a bit table z of m entries of r bits,
and a query xors the entries selected by the key's row.

Row variants: k distinct columns per key ("kset"), or a nonzero mask in
each of two length-ell blocks ("twoblock").  Large inputs are built in
hash-partitioned shards so cubic elimination stays affordable.  A
warm-up trit structure (cells over {0, 1, undecided}) is also provided.

Solution files use magic "F2RS": version u8, m u64, r u32, seed u64,
variant tag u8 (1 kset / 2 twoblock), variant param u32, fill mode u8,
fill seed u64, then the packed bit table (see _ser).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _ser, hashcore
from .hashcore import (
    MASK64,
    fingerprint,
    fingerprint_u64,
    kset_columns,
    kset_columns_batch,
    mix64,
    mix64_u64,
    mulhi64,
    mulhi64_u64,
    twoblock_columns,
    twoblock_pattern,
    twoblock_pattern_batch,
)

FILL_ZERO = "zero"
FILL_RANDOM = "random"


class BuildFailure(RuntimeError):
    """No solvable system found within the retry budget."""


@dataclass(frozen=True)
class ValueSpec:
    """Width of stored values in bits; 1 <= r <= 64."""

    r: int

    def __post_init__(self) -> None:
        if not 1 <= self.r <= 64:
            raise ValueError(f"value width must be in [1, 64], got {self.r}")

    @property
    def mask(self) -> int:
        return MASK64 if self.r == 64 else (1 << self.r) - 1


@dataclass(frozen=True)
class KSetVariant:
    k: int

    def tag(self) -> int:
        return 1

    def param(self) -> int:
        return self.k


@dataclass(frozen=True)
class TwoBlockVariant:
    ell: int

    def tag(self) -> int:
        return 2

    def param(self) -> int:
        return self.ell


def _variant_from_tag(tag: int, param: int):
    if tag == 1:
        return KSetVariant(param)
    if tag == 2:
        return TwoBlockVariant(param)
    raise ValueError(f"unknown variant tag {tag}")


class LinearSystem:
    """Rows of column-index sets with r-bit right-hand sides.

    Rows must be nonzero with distinct in-range columns.  Systems built
    from hashed keys carry (seed, variant) so a solution can re-derive
    rows at query time; explicitly constructed systems do not.
    """

    def __init__(self, m: int, r: int, rows=None, seed=None, variant=None):
        if m < 1:
            raise ValueError("m must be positive")
        ValueSpec(r)
        self.m = m
        self.r = r
        self.rows: list[tuple[tuple[int, ...], int]] = []
        self.seed = seed
        self.variant = variant
        for cols, rhs in rows or []:
            self.add_row(cols, rhs)

    def add_row(self, cols, rhs: int) -> None:
        cols = tuple(int(c) for c in cols)
        if not cols:
            raise ValueError("all-zero row")
        if len(set(cols)) != len(cols):
            raise ValueError(f"repeated column in row {cols}")
        if min(cols) < 0 or max(cols) >= self.m:
            raise ValueError(f"column out of range in row {cols}")
        self.rows.append((cols, rhs & ValueSpec(self.r).mask))

    def __len__(self) -> int:
        return len(self.rows)


def _as_fps(keys, seed: int) -> np.ndarray:
    """Fingerprints of keys given as a u64 ndarray or a sequence of bytes."""
    if isinstance(keys, np.ndarray):
        return fingerprint_u64(keys, seed)
    return np.array([fingerprint(k, seed) for k in keys], dtype=np.uint64)


def _row_columns(fp: int, variant, m: int) -> tuple[int, ...]:
    if isinstance(variant, KSetVariant):
        return kset_columns(fp, variant.k, m)
    return twoblock_columns(twoblock_pattern(fp, variant.ell, m))


def build_rows(keys, values, seed: int, variant, m: int, r: int) -> LinearSystem:
    """One row per key from its hashed pattern; rhs = the key's value."""
    fps = _as_fps(keys, seed)
    values = np.asarray(values, dtype=np.uint64)
    if values.size != fps.size:
        raise ValueError("keys and values must have equal length")
    sys = LinearSystem(m, r, seed=seed, variant=variant)
    for fp, v in zip(fps, values):
        sys.add_row(_row_columns(int(fp), variant, m), int(v))
    return sys


@dataclass
class Solution:
    """Solved bit table plus whatever is needed to re-derive rows."""

    m: int
    r: int
    z: np.ndarray  # uint64 per column, low r bits meaningful
    seed: int | None = None
    variant: object | None = None
    free_fill: str = FILL_ZERO
    fill_seed: int = 0

    def query(self, key) -> int:
        return query_dot(self, key)

    def total_bits(self) -> int:
        return self.m * self.r


def _lsb(x: int) -> int:
    return (x & -x).bit_length() - 1


def _fill_values(m: int, r: int, free_fill: str, fill_seed: int) -> np.ndarray:
    if free_fill == FILL_ZERO:
        return np.zeros(m, dtype=np.uint64)
    if free_fill != FILL_RANDOM:
        raise ValueError(f"unknown fill mode {free_fill!r}")
    base = np.uint64(mix64(fill_seed ^ 0xF1117EED))
    vals = mix64_u64(np.arange(1, m + 1, dtype=np.uint64) ^ base)
    return vals & np.uint64(ValueSpec(r).mask)


def gauss_solve(sys: LinearSystem, free_fill: str = FILL_ZERO, fill_seed: int = 0) -> Solution | None:
    """Bit-parallel elimination; None when the system is inconsistent.

    Rows are processed in order of smallest column; each row is reduced
    against stored pivot rows until it claims its leading column as a
    new pivot or vanishes.  A vanished row with nonzero rhs is the
    inconsistency witness.  Free columns take zeros or seeded random
    bits.
    """
    masks = []
    for cols, rhs in sys.rows:
        mask = 0
        for c in cols:
            mask |= 1 << c
        masks.append((mask, rhs))
    masks.sort(key=lambda mr: _lsb(mr[0]))
    pivot: dict[int, tuple[int, int]] = {}
    for mask, rhs in masks:
        while mask:
            j = _lsb(mask)
            if j not in pivot:
                pivot[j] = (mask, rhs)
                break
            pm, pr = pivot[j]
            mask ^= pm
            rhs ^= pr
        else:
            if rhs:
                return None
    z64 = _fill_values(sys.m, sys.r, free_fill, fill_seed if sys.seed is None else sys.seed)
    z = [int(v) for v in z64]
    for j in sorted(pivot, reverse=True):
        mask, rhs = pivot[j]
        acc = rhs
        mm = mask ^ (1 << j)
        while mm:
            c = _lsb(mm)
            mm &= mm - 1
            acc ^= z[c]
        z[j] = acc
    return Solution(
        m=sys.m,
        r=sys.r,
        z=np.array(z, dtype=np.uint64),
        seed=sys.seed,
        variant=sys.variant,
        free_fill=free_fill,
        fill_seed=fill_seed if sys.seed is None else sys.seed,
    )


def verify_system(sys: LinearSystem, sol: Solution) -> bool:
    """Re-check every construction equation against the solved table."""
    for cols, rhs in sys.rows:
        acc = 0
        for c in cols:
            acc ^= int(sol.z[c])
        if acc != rhs:
            return False
    return True


def query_dot(sol: Solution, key) -> int:
    """Re-derive the key's row and xor the selected table entries."""
    if sol.seed is None or sol.variant is None:
        raise ValueError("solution lacks hashing metadata; query by explicit rows instead")
    fp = fingerprint(key, sol.seed) if isinstance(key, bytes) else fingerprint(
        int(key).to_bytes(8, "little"), sol.seed)
    acc = 0
    for c in _row_columns(fp, sol.variant, sol.m):
        acc ^= int(sol.z[c])
    return acc


def query_dot_batch(sol: Solution, keys: np.ndarray) -> np.ndarray:
    """Vectorized query for u64 keys (8-byte little-endian strings)."""
    fps = fingerprint_u64(keys, sol.seed)
    if isinstance(sol.variant, KSetVariant):
        cols = kset_columns_batch(fps, sol.variant.k, sol.m)
        acc = np.zeros(fps.size, dtype=np.uint64)
        for i in range(sol.variant.k):
            acc ^= sol.z[cols[:, i]]
        return acc
    pats = twoblock_pattern_batch(fps, sol.variant.ell, sol.m)
    acc = np.zeros(fps.size, dtype=np.uint64)
    for (scol, mcol) in ((0, 1), (2, 3)):
        starts = pats[:, scol]
        masks = pats[:, mcol]
        for b in range(sol.variant.ell):
            sel = (masks >> b) & 1
            acc ^= np.where(sel.astype(bool), sol.z[starts + b], np.uint64(0))
    return acc


def _attempt_seed(seed: int, attempt: int) -> int:
    return seed if attempt == 0 else mix64(seed ^ mix64(0xBEE5EED + attempt))


def default_kset_m(n: int, load: float = 0.81) -> int:
    return max(1, math.ceil(n / load))


def default_twoblock_params(n: int) -> tuple[int, int]:
    """(ell, m) giving a near-square succinct system: ell and the extra
    columns both grow logarithmically."""
    lg = math.log2(max(n, 2))
    ell = min(64, max(1, math.ceil(2 * lg)))
    return ell, n + max(1, math.ceil(10 * lg))


def build_retrieval(keys, values, r: int, seed: int, variant, m: int | None = None,
                    load: float = 0.81, free_fill: str = FILL_ZERO, retries: int = 3) -> Solution:
    """Build rows and solve, re-seeding up to `retries` times on failure."""
    n = len(keys)
    if m is None:
        if isinstance(variant, KSetVariant):
            m = default_kset_m(n, load)
        else:
            m = default_twoblock_params(n)[1]
    for attempt in range(retries + 1):
        s = _attempt_seed(seed, attempt)
        sol = gauss_solve(build_rows(keys, values, s, variant, m, r), free_fill=free_fill)
        if sol is not None:
            return sol
    raise BuildFailure(f"no solvable system in {retries + 1} attempts (n={n}, m={m})")


# --- sharded construction -------------------------------------------------

@dataclass
class ShardPlan:
    """Hash partition of the key set into shards of expected size C."""

    seed: int
    C: int
    nshards: int
    shard_keys: list  # per shard: indices into the input key order
    offsets: np.ndarray  # per-shard column offsets (prefix sums of m)


def shard_id_u64(fps: np.ndarray, nshards: int) -> np.ndarray:
    return mulhi64_u64(fps, nshards)


def shard_split(keys, seed: int, C: int, variant=None, load: float = 0.81) -> ShardPlan:
    """Partition keys by range-reduced fingerprint into ceil(n / C) shards."""
    if C < 1:
        raise ValueError("C must be >= 1")
    n = len(keys)
    nshards = max(1, -(-n // C))
    fps = _as_fps(keys, seed)
    sids = shard_id_u64(fps, nshards).astype(np.int64)
    order = np.argsort(sids, kind="stable")
    bounds = np.searchsorted(sids[order], np.arange(nshards + 1))
    shard_keys = [order[bounds[s]:bounds[s + 1]] for s in range(nshards)]
    ms = np.empty(nshards, dtype=np.int64)
    for s in range(nshards):
        ns = len(shard_keys[s])
        if variant is None or isinstance(variant, KSetVariant):
            ms[s] = default_kset_m(ns, load) if ns else 0
        else:
            ms[s] = default_twoblock_params(ns)[1] if ns else 0
    offsets = np.concatenate(([0], np.cumsum(ms)))
    return ShardPlan(seed, C, nshards, shard_keys, offsets)


@dataclass
class ShardedRetrieval:
    """Independently solved shards behind a fingerprint router."""

    seed: int
    r: int
    plan: ShardPlan
    shards: list  # per shard: Solution or None for empty shards

    def query(self, key) -> int:
        kb = key if isinstance(key, bytes) else int(key).to_bytes(8, "little")
        fp = fingerprint(kb, self.seed)
        sid = mulhi64(fp, self.plan.nshards)
        sol = self.shards[sid]
        return 0 if sol is None else sol.query(kb)

    def query_batch(self, keys: np.ndarray) -> np.ndarray:
        fps = fingerprint_u64(keys, self.seed)
        sids = shard_id_u64(fps, self.plan.nshards).astype(np.int64)
        out = np.zeros(keys.size, dtype=np.uint64)
        for s in range(self.plan.nshards):
            mask = sids == s
            if mask.any() and self.shards[s] is not None:
                out[mask] = query_dot_batch(self.shards[s], keys[mask])
        return out

    def total_bits(self) -> int:
        return int(sum(sol.total_bits() for sol in self.shards if sol is not None))


def _take(keys, idx):
    if isinstance(keys, np.ndarray):
        return keys[idx]
    return [keys[int(i)] for i in idx]


def build_sharded(keys, values, r: int, seed: int, variant=None, C: int = 256,
                  load: float = 0.81, free_fill: str = FILL_ZERO, retries: int = 3) -> ShardedRetrieval:
    """Shard, then build each shard independently with per-shard re-seeding."""
    if variant is None:
        variant = KSetVariant(3)
    values = np.asarray(values, dtype=np.uint64)
    plan = shard_split(keys, seed, C, variant=variant, load=load)
    shards: list[Solution | None] = []
    for s in range(plan.nshards):
        idx = plan.shard_keys[s]
        if len(idx) == 0:
            shards.append(None)
            continue
        shard_seed = mix64(seed ^ mix64(s + 1))
        try:
            shards.append(build_retrieval(
                _take(keys, idx), values[idx], r, shard_seed, variant,
                load=load, free_fill=free_fill, retries=retries))
        except BuildFailure as exc:
            raise BuildFailure(f"shard {s}: {exc}") from exc
    return ShardedRetrieval(seed, r, plan, shards)


# --- serialization --------------------------------------------------------

MAGIC = b"F2RS"
_FILL_TAGS = {FILL_ZERO: 0, FILL_RANDOM: 1}
_FILL_NAMES = {v: k for k, v in _FILL_TAGS.items()}


def solution_to_bytes(sol: Solution) -> bytes:
    if sol.seed is None or sol.variant is None:
        raise ValueError("only hash-derived solutions serialize")
    head = (MAGIC + _ser.u8(1) + _ser.u64(sol.m) + _ser.u32(sol.r)
            + _ser.u64(sol.seed) + _ser.u8(sol.variant.tag()) + _ser.u32(sol.variant.param())
            + _ser.u8(_FILL_TAGS[sol.free_fill]) + _ser.u64(sol.fill_seed))
    return head + _ser.pack_table(sol.z, sol.r)


def solution_from_bytes(data: bytes) -> Solution:
    rd = _ser.Reader(data)
    rd.magic(MAGIC)
    if rd.u8() != 1:
        raise ValueError("unsupported version")
    m = rd.u64()
    r = rd.u32()
    seed = rd.u64()
    variant = _variant_from_tag(rd.u8(), rd.u32())
    fill = _FILL_NAMES[rd.u8()]
    fill_seed = rd.u64()
    z = _ser.unpack_table(rd.take(_ser.table_nbytes(m, r)), m, r)
    return Solution(m=m, r=r, z=z, seed=seed, variant=variant, free_fill=fill, fill_seed=fill_seed)


# --- trit warm-up ---------------------------------------------------------

TRIT_BOT = 2  # encoded as 01; 0 -> 00, 1 -> 11


@dataclass
class TritRetrieval:
    """Levels of {0, 1, undecided} cells; keys settle at the first level
    where their cell is decided."""

    seed: int
    n: int
    levels: list  # np.int8 arrays

    @property
    def total_cells(self) -> int:
        return int(sum(lvl.size for lvl in self.levels))

    @property
    def cells_per_key(self) -> float:
        return self.total_cells / max(self.n, 1)

    @property
    def bits_per_key(self) -> float:
        return 2.0 * self.cells_per_key

    def level_seed(self, i: int) -> int:
        return mix64(self.seed ^ mix64(i + 1))


def trit_build(keys, bits, seed: int, load: float = 2.0, max_levels: int = 200) -> TritRetrieval:
    """Single-bit retrieval by conflict-marking cells, one level at a time.

    Each unresolved key hashes to one cell per level (m = remaining/load
    cells); a cell holds the common bit of its keys or the undecided
    marker on disagreement, and disagreeing keys move to the next level
    under a fresh seed.
    """
    n = len(keys)
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size != n or (n and bits.max(initial=0) > 1):
        raise ValueError("bits must be one 0/1 value per key")
    tr = TritRetrieval(seed, n, [])
    rem_keys = keys if isinstance(keys, np.ndarray) else list(keys)
    rem_bits = bits
    level = 0
    while len(rem_keys) > 0:
        if level >= max_levels:
            raise BuildFailure("trit recursion failed to terminate")
        m = max(2, math.ceil(len(rem_keys) / load))
        fps = _as_fps(rem_keys, tr.level_seed(level))
        cells = mulhi64_u64(fps, m).astype(np.int64)
        has0 = np.bincount(cells[rem_bits == 0], minlength=m) > 0
        has1 = np.bincount(cells[rem_bits == 1], minlength=m) > 0
        conflict = has0 & has1
        lvl = np.where(conflict, TRIT_BOT, np.where(has1, 1, 0)).astype(np.int8)
        tr.levels.append(lvl)
        survive = conflict[cells]
        rem_keys = _take(rem_keys, np.flatnonzero(survive))
        rem_bits = rem_bits[survive]
        level += 1
    return tr


def trit_query(tr: TritRetrieval, key) -> int:
    kb = key if isinstance(key, bytes) else int(key).to_bytes(8, "little")
    for i, lvl in enumerate(tr.levels):
        c = mulhi64(fingerprint(kb, tr.level_seed(i)), lvl.size)
        if lvl[c] != TRIT_BOT:
            return int(lvl[c])
    return 0
