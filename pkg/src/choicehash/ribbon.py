"""Ribbon retrieval: one contiguous block of w coefficient bits per key.

Rows sorted by starting position are nearly in echelon form, so
elimination is incremental: each row reduces against stored rows until
it claims its leading column or vanishes.  Solving back-substitutes
from the highest column down; a query xors at most w consecutive table
entries.

Solution files use magic "RIB1": m u64, w u32, r u32, seed u64, fill
mode u8, then the packed bit table (r-bit column slices, see _ser).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, _ser
from .hashcore import MASK64, fingerprint, fingerprint_u64, mix64, mix64_u64, ribbon_block, ribbon_block_batch

PLACED = "placed"
REDUNDANT = "redundant"
INFEASIBLE = "infeasible"

FILL_ZERO = "zero"
FILL_RANDOM = "random"
_FILL_TAGS = {FILL_ZERO: 0, FILL_RANDOM: 1}
_FILL_NAMES = {v: k for k, v in _FILL_TAGS.items()}


class BuildFailure(RuntimeError):
    """No consistent system found within the retry budget."""


def choose_w(n: int, alpha: float, C: float = 0.25) -> int:
    """Block width for n keys at load alpha, capped at one machine word.

    w = min(64, ceil(C * log2(n + 1) / (1 - alpha))).  Note the cap: at
    high loads the uncapped value exceeds 64 and construction carries a
    real failure risk (callers should lower alpha or retry).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    return min(64, max(1, math.ceil(C * math.log2(n + 1) / (1.0 - alpha))))


@dataclass(frozen=True)
class RibbonConfig:
    """m columns, block width w, r-bit values; alpha = n / (m - w + 1)."""

    m: int
    w: int
    r: int

    def __post_init__(self) -> None:
        if not 1 <= self.w <= min(self.m, 64):
            raise ValueError(f"need 1 <= w <= min(m, 64), got {self}")
        if not 1 <= self.r <= 64:
            raise ValueError(f"value width must be in [1, 64], got {self}")

    @classmethod
    def for_n(cls, n: int, w: int, r: int, alpha: float) -> "RibbonConfig":
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        return cls(max(1, math.ceil(n / alpha)) + w - 1, w, r)

    @property
    def positions(self) -> int:
        return self.m - self.w + 1


class RibbonState:
    """Mutable elimination state: one optional (coefficients, rhs) per column.

    Stored coefficients are relative to their column with bit 0 set, so
    a zero coefficient word marks a free column.
    """

    def __init__(self, cfg: RibbonConfig):
        self.cfg = cfg
        self.slot_coeff = np.zeros(cfg.m, dtype=np.uint64)
        self.slot_rhs = np.zeros(cfg.m, dtype=np.uint64)
        self.xors = 0
        self.placed = 0
        self.redundant = 0

    def insert_row(self, s: int, c: int, v: int) -> str:
        """Insert one row; returns "placed", "redundant" or "infeasible"."""
        cfg = self.cfg
        if not 0 <= s <= cfg.m - cfg.w:
            raise ValueError(f"start {s} out of range")
        if c <= 0 or c != c & (MASK64 if cfg.w == 64 else (1 << cfg.w) - 1) or not c & 1:
            raise ValueError(f"coefficients must be nonzero with bit 0 set, got {c:#x}")
        v &= MASK64 if cfg.r == 64 else (1 << cfg.r) - 1
        while True:
            t = (c & -c).bit_length() - 1
            s += t
            c >>= t
            if self.slot_coeff[s] == 0:
                self.slot_coeff[s] = c
                self.slot_rhs[s] = v
                self.placed += 1
                return PLACED
            c ^= int(self.slot_coeff[s])
            v ^= int(self.slot_rhs[s])
            self.xors += 1
            if c == 0:
                if v == 0:
                    self.redundant += 1
                    return REDUNDANT
                return INFEASIBLE

    def insert_rows(self, starts: np.ndarray, coeffs: np.ndarray, rhs: np.ndarray) -> int:
        """Bulk insert; returns -1 or the index of the infeasible row."""
        fail, xors, placed, redundant = _kernels.ribbon_insert_kernel(
            starts.astype(np.int64), coeffs.astype(np.uint64), rhs.astype(np.uint64),
            self.slot_coeff, self.slot_rhs)
        self.xors += int(xors)
        self.placed += int(placed)
        self.redundant += int(redundant)
        return int(fail)

    def check_band(self) -> None:
        """Every stored coefficient word spans fewer than w columns."""
        occupied = self.slot_coeff != 0
        if occupied.any():
            spans = np.zeros(self.cfg.m, dtype=np.int64)
            for j in np.flatnonzero(occupied):
                spans[j] = int(self.slot_coeff[j]).bit_length()
            if spans.max() > self.cfg.w:
                raise AssertionError("band invariant violated")

    @property
    def free_columns(self) -> int:
        return int((self.slot_coeff == 0).sum())


@dataclass
class BuildStats:
    rows: int = 0
    xors: int = 0
    placed: int = 0
    redundant: int = 0
    attempts: int = 1

    @property
    def xors_per_row(self) -> float:
        return self.xors / max(self.rows, 1)


@dataclass
class RibbonSolution:
    """Solved table plus the hashing parameters queries re-derive rows from."""

    m: int
    w: int
    r: int
    seed: int
    z: np.ndarray
    free_fill: str = FILL_ZERO
    stats: BuildStats | None = field(default=None, compare=False)

    def query(self, key) -> int:
        return query(self, key)

    def total_bits(self) -> int:
        return self.m * self.r


def _fill_values(m: int, r: int, free_fill: str, seed: int) -> np.ndarray:
    if free_fill == FILL_ZERO:
        return np.zeros(m, dtype=np.uint64)
    if free_fill != FILL_RANDOM:
        raise ValueError(f"unknown fill mode {free_fill!r}")
    base = np.uint64(mix64(seed ^ 0x51BB0FF1))
    mask = np.uint64(MASK64 if r == 64 else (1 << r) - 1)
    return mix64_u64(np.arange(1, m + 1, dtype=np.uint64) ^ base) & mask


def back_substitute(state: RibbonState, seed: int = 0, free_fill: str = FILL_ZERO) -> RibbonSolution:
    """Resolve the eliminated state into a solution table."""
    fill = _fill_values(state.cfg.m, state.cfg.r, free_fill, seed)
    z = _kernels.back_substitute_kernel(state.slot_coeff, state.slot_rhs, fill)
    return RibbonSolution(state.cfg.m, state.cfg.w, state.cfg.r, seed, z, free_fill)


def _as_fps(keys, seed: int) -> np.ndarray:
    if isinstance(keys, np.ndarray):
        return fingerprint_u64(keys, seed)
    return np.array([fingerprint(k, seed) for k in keys], dtype=np.uint64)


def build_ribbon(keys, values, r: int, seed: int, w: int | None = None,
                 alpha: float = 0.85, m: int | None = None,
                 free_fill: str = FILL_ZERO, retries: int = 3) -> RibbonSolution:
    """Hash keys to rows, eliminate in start order, back-substitute.

    Re-seeds up to `retries` times if some row turns inconsistent.
    """
    n = len(keys)
    if w is None:
        w = choose_w(n, alpha)
    if m is None:
        m = max(w, math.ceil(n / alpha) + w - 1)
    cfg = RibbonConfig(m, w, r)
    values = np.asarray(values, dtype=np.uint64)
    if values.size != n:
        raise ValueError("keys and values must have equal length")
    attempt_stats = BuildStats()
    for attempt in range(retries + 1):
        s = seed if attempt == 0 else mix64(seed ^ mix64(0x51B0 + attempt))
        fps = _as_fps(keys, s)
        starts, coeffs = ribbon_block_batch(fps, w, m)
        order = np.argsort(starts, kind="stable")
        state = RibbonState(cfg)
        fail = state.insert_rows(starts[order], coeffs[order], values[order])
        attempt_stats.rows += n
        attempt_stats.xors += state.xors
        attempt_stats.placed += state.placed
        attempt_stats.redundant += state.redundant
        attempt_stats.attempts = attempt + 1
        if fail < 0:
            sol = back_substitute(state, seed=s, free_fill=free_fill)
            sol.stats = attempt_stats
            return sol
    raise BuildFailure(f"inconsistent rows in {retries + 1} attempts (n={n}, m={m}, w={w})")


def query(sol: RibbonSolution, key) -> int:
    kb = key if isinstance(key, bytes) else int(key).to_bytes(8, "little")
    s, c = ribbon_block(fingerprint(kb, sol.seed), sol.w, sol.m)
    acc = 0
    i = 0
    while c:
        if c & 1:
            acc ^= int(sol.z[s + i])
        c >>= 1
        i += 1
    return acc


def query_batch(sol: RibbonSolution, keys: np.ndarray) -> np.ndarray:
    """Vectorized query for u64 keys."""
    fps = fingerprint_u64(keys, sol.seed)
    starts, coeffs = ribbon_block_batch(fps, sol.w, sol.m)
    acc = np.zeros(keys.size, dtype=np.uint64)
    for i in range(sol.w):
        sel = ((coeffs >> np.uint64(i)) & np.uint64(1)).astype(bool)
        acc ^= np.where(sel, sol.z[starts + i], np.uint64(0))
    return acc


MAGIC = b"RIB1"


def solution_to_bytes(sol: RibbonSolution) -> bytes:
    head = (MAGIC + _ser.u64(sol.m) + _ser.u32(sol.w) + _ser.u32(sol.r)
            + _ser.u64(sol.seed) + _ser.u8(_FILL_TAGS[sol.free_fill]))
    return head + _ser.pack_table(sol.z, sol.r)


def solution_from_bytes(data: bytes) -> RibbonSolution:
    rd = _ser.Reader(data)
    rd.magic(MAGIC)
    m = rd.u64()
    w = rd.u32()
    r = rd.u32()
    seed = rd.u64()
    fill = _FILL_NAMES[rd.u8()]
    z = _ser.unpack_table(rd.take(_ser.table_nbytes(m, r)), m, r)
    return RibbonSolution(m, w, r, seed, z, fill)
