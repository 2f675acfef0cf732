"""Seeded pseudorandom hashing and candidate-position derivation.

All randomness in this package flows through a fixed 64-bit mixing chain,
so every structure is a pure function of (key bytes, seed, config).  The
normative definitions, which every other module relies on, are:

* ``mix64(x)``: the xor-shift-multiply chain
  ``z = x``; ``z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9``;
  ``z = (z ^ (z >> 27)) * 0x94D049BB133111EB``; ``z = z ^ (z >> 31)``,
  all modulo 2**64.

* ``fingerprint(key, seed)``: fold the key bytes into 64-bit lanes
  (little-endian, the final lane zero-padded) and chain
  ``h = mix64(seed ^ len(key))``;
  ``h = mix64(h ^ lane_j ^ mix64(seed ^ mix64(j + 1)))`` for lane index
  ``j = 0, 1, ...``.

* derived hash streams: the i-th hash value of a key is
  ``mix64(fp ^ mix64(i + 1))``.

* range reduction to ``[0, n)``: the multiply-high method
  ``(x * n) >> 64``.

Arrays of 64-bit keys are treated as 8-byte little-endian key strings;
the ``*_u64`` batch helpers produce bit-identical results to the scalar
byte-string path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF

_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB

MODE_INDEPENDENT = "independent"
MODE_DOUBLE = "double"
MODE_UNALIGNED = "unaligned"
MODE_COUPLED = "coupled"
MODES = (MODE_INDEPENDENT, MODE_DOUBLE, MODE_UNALIGNED, MODE_COUPLED)


class ConfigError(ValueError):
    """Raised when a hashing configuration violates its invariants."""


def mix64(x: int) -> int:
    """Avalanche a 64-bit value. Bijective on [0, 2**64)."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def mix64_u64(x: np.ndarray) -> np.ndarray:
    """Vectorized :func:`mix64` over a uint64 array."""
    z = x.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MUL1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MUL2)
    z ^= z >> np.uint64(31)
    return z


def fingerprint(key: bytes, seed: int) -> int:
    """Canonical 64-bit hash of a byte string under a seed."""
    h = mix64((seed & MASK64) ^ len(key))
    for j in range((len(key) + 7) // 8):
        lane = int.from_bytes(key[8 * j:8 * j + 8].ljust(8, b"\x00"), "little")
        h = mix64(h ^ lane ^ mix64((seed & MASK64) ^ mix64(j + 1)))
    return h


def fingerprint_u64(keys: np.ndarray, seed: int) -> np.ndarray:
    """Fingerprints of u64 keys, read as their 8-byte little-endian strings."""
    h0 = mix64((seed & MASK64) ^ 8)
    rc0 = mix64((seed & MASK64) ^ mix64(1))
    lanes = keys.astype(np.uint64, copy=False)
    return mix64_u64(lanes ^ np.uint64(h0 ^ rc0))


def stream_hash(fp: int, i: int) -> int:
    """The i-th derived hash value of a fingerprint."""
    return mix64(fp ^ mix64(i + 1))


def stream_hash_u64(fps: np.ndarray, i: int) -> np.ndarray:
    return mix64_u64(fps ^ np.uint64(mix64(i + 1)))


def mulhi64(x: int, n: int) -> int:
    """Reduce a 64-bit hash to [0, n) with bias at most n / 2**64."""
    return ((x & MASK64) * n) >> 64


def mulhi64_u64(x: np.ndarray, n: int) -> np.ndarray:
    """Vectorized multiply-high range reduction (n < 2**63)."""
    x = x.astype(np.uint64, copy=False)
    nn = np.uint64(n)
    xlo = x & np.uint64(0xFFFFFFFF)
    xhi = x >> np.uint64(32)
    nlo = nn & np.uint64(0xFFFFFFFF)
    nhi = nn >> np.uint64(32)
    lolo = xlo * nlo
    hilo = xhi * nlo
    lohi = xlo * nhi
    hihi = xhi * nhi
    cross = (lolo >> np.uint64(32)) + (hilo & np.uint64(0xFFFFFFFF)) + lohi
    return hihi + (hilo >> np.uint64(32)) + (cross >> np.uint64(32))


@dataclass(frozen=True)
class ChoiceConfig:
    """How a key maps to candidate cells in a table of m cells.

    k hash choices, each addressing a bucket of ell consecutive cells.
    Modes: "independent" (k independent buckets), "double" (arithmetic
    progression of buckets from one base and one offset), "unaligned"
    (k windows of ell cells at arbitrary offsets), "coupled" (k buckets
    confined to a random interval spanning a fraction eps of the table).
    """

    m: int
    k: int
    ell: int = 1
    mode: str = MODE_INDEPENDENT
    eps: float | None = None

    def __post_init__(self) -> None:
        if self.m < 1 or self.k < 1 or self.ell < 1:
            raise ConfigError(f"m, k, ell must be positive, got {self}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode in (MODE_INDEPENDENT, MODE_DOUBLE):
            if self.m < self.k * self.ell:
                raise ConfigError(f"need m >= k*ell, got {self}")
        if self.mode == MODE_DOUBLE and self.n_buckets < 2:
            raise ConfigError("double hashing needs at least two buckets")
        if self.mode == MODE_UNALIGNED and self.m < self.ell:
            raise ConfigError(f"need m >= ell, got {self}")
        if self.mode == MODE_COUPLED:
            if self.eps is None or not 0.0 < self.eps < 1.0:
                raise ConfigError("coupled mode needs eps in (0, 1)")
            if self.window_buckets < self.k or math.ceil(self.eps * self.m) < self.ell * self.k:
                raise ConfigError(f"coupling window too small, got {self}")
        elif self.eps is not None:
            raise ConfigError("eps is only meaningful in coupled mode")

    @property
    def n_buckets(self) -> int:
        return self.m // self.ell

    @property
    def window_buckets(self) -> int:
        """Interval width for coupled mode, in buckets."""
        return math.ceil(self.eps * self.n_buckets)


def positions_for(fp: int, cfg: ChoiceConfig) -> list[int]:
    """Candidate cell indices of a key (k * ell entries, with multiplicity).

    Buckets expand to their ell consecutive cells in slot order; choice
    order is preserved, so the output is deterministic.  Duplicate
    buckets among the k choices are allowed.
    """
    nb = cfg.n_buckets
    ell = cfg.ell
    if cfg.mode == MODE_INDEPENDENT:
        buckets = [mulhi64(stream_hash(fp, i), nb) for i in range(cfg.k)]
    elif cfg.mode == MODE_DOUBLE:
        b1 = mulhi64(stream_hash(fp, 0), nb)
        d = 1 + mulhi64(stream_hash(fp, 1), nb - 1)
        buckets = [(b1 + i * d) % nb for i in range(cfg.k)]
    elif cfg.mode == MODE_UNALIGNED:
        starts = [mulhi64(stream_hash(fp, i), cfg.m - ell + 1) for i in range(cfg.k)]
        return [s + t for s in starts for t in range(ell)]
    else:  # coupled
        win = cfg.window_buckets
        base = mulhi64(stream_hash(fp, 0), nb - win + 1)
        buckets = [base + mulhi64(stream_hash(fp, i + 1), win) for i in range(cfg.k)]
    return [b * ell + t for b in buckets for t in range(ell)]


def positions_for_batch(fps: np.ndarray, cfg: ChoiceConfig) -> np.ndarray:
    """Vectorized :func:`positions_for`; returns an (n, k*ell) int64 array."""
    n = fps.size
    nb = cfg.n_buckets
    ell = cfg.ell
    if cfg.mode == MODE_INDEPENDENT:
        buckets = np.empty((n, cfg.k), dtype=np.int64)
        for i in range(cfg.k):
            buckets[:, i] = mulhi64_u64(stream_hash_u64(fps, i), nb).astype(np.int64)
    elif cfg.mode == MODE_DOUBLE:
        b1 = mulhi64_u64(stream_hash_u64(fps, 0), nb).astype(np.int64)
        d = 1 + mulhi64_u64(stream_hash_u64(fps, 1), nb - 1).astype(np.int64)
        buckets = (b1[:, None] + np.arange(cfg.k, dtype=np.int64)[None, :] * d[:, None]) % nb
    elif cfg.mode == MODE_UNALIGNED:
        starts = np.empty((n, cfg.k), dtype=np.int64)
        for i in range(cfg.k):
            starts[:, i] = mulhi64_u64(stream_hash_u64(fps, i), cfg.m - ell + 1).astype(np.int64)
        cells = starts[:, :, None] + np.arange(ell, dtype=np.int64)[None, None, :]
        return cells.reshape(n, cfg.k * ell)
    else:  # coupled
        win = cfg.window_buckets
        base = mulhi64_u64(stream_hash_u64(fps, 0), nb - win + 1).astype(np.int64)
        buckets = np.empty((n, cfg.k), dtype=np.int64)
        for i in range(cfg.k):
            buckets[:, i] = base + mulhi64_u64(stream_hash_u64(fps, i + 1), win).astype(np.int64)
    cells = buckets[:, :, None] * ell + np.arange(ell, dtype=np.int64)[None, None, :]
    return cells.reshape(n, cfg.k * ell)


def kset_columns(fp: int, k: int, m: int) -> tuple[int, ...]:
    """k distinct column indices in [0, m), sorted.  Duplicates resampled."""
    if not 1 <= k <= m:
        raise ConfigError(f"need 1 <= k <= m, got k={k}, m={m}")
    cols: list[int] = []
    i = 0
    while len(cols) < k:
        c = mulhi64(stream_hash(fp, i), m)
        i += 1
        if c not in cols:
            cols.append(c)
    return tuple(sorted(cols))


def kset_columns_batch(fps: np.ndarray, k: int, m: int) -> np.ndarray:
    """Vectorized :func:`kset_columns`; (n, k) int64 array, rows sorted."""
    if not 1 <= k <= m:
        raise ConfigError(f"need 1 <= k <= m, got k={k}, m={m}")
    n = fps.size
    cols = np.empty((n, k), dtype=np.int64)
    for i in range(k):
        cols[:, i] = mulhi64_u64(stream_hash_u64(fps, i), m).astype(np.int64)
    cols.sort(axis=1)
    # resample the few rows containing duplicates via the scalar path
    dup = (np.diff(cols, axis=1) == 0).any(axis=1)
    for idx in np.flatnonzero(dup):
        cols[idx] = kset_columns(int(fps[idx]), k, m)
    return cols


def twoblock_pattern(fp: int, ell: int, m: int) -> tuple[int, int, int, int]:
    """Two block starts in [0, m-ell] with a nonzero ell-bit mask each.

    The key's row is the XOR of the two placed masks; the rare draws
    whose placed masks cancel completely are resampled so no row is
    all-zero.  Requires ell <= 64.
    """
    if not 1 <= ell <= min(m, 64):
        raise ConfigError(f"need 1 <= ell <= min(m, 64), got ell={ell}, m={m}")
    t = 0
    while True:
        s1 = mulhi64(stream_hash(fp, 4 * t), m - ell + 1)
        m1 = 1 + mulhi64(stream_hash(fp, 4 * t + 1), (1 << ell) - 1)
        s2 = mulhi64(stream_hash(fp, 4 * t + 2), m - ell + 1)
        m2 = 1 + mulhi64(stream_hash(fp, 4 * t + 3), (1 << ell) - 1)
        if (m1 << s1) ^ (m2 << s2):
            return s1, m1, s2, m2
        t += 1


def twoblock_columns(pattern: tuple[int, int, int, int]) -> tuple[int, ...]:
    """Expand a two-block pattern to its sorted set of column indices."""
    s1, m1, s2, m2 = pattern
    row = (m1 << s1) ^ (m2 << s2)
    cols = []
    while row:
        low = row & -row
        cols.append(low.bit_length() - 1)
        row ^= low
    return tuple(cols)


def twoblock_pattern_batch(fps: np.ndarray, ell: int, m: int) -> np.ndarray:
    """Vectorized :func:`twoblock_pattern`; (n, 4) array [s1, m1, s2, m2]."""
    if not 1 <= ell <= min(m, 64):
        raise ConfigError(f"need 1 <= ell <= min(m, 64), got ell={ell}, m={m}")
    n = fps.size
    out = np.empty((n, 4), dtype=np.int64)
    out[:, 0] = mulhi64_u64(stream_hash_u64(fps, 0), m - ell + 1).astype(np.int64)
    out[:, 1] = 1 + mulhi64_u64(stream_hash_u64(fps, 1), (1 << ell) - 1).astype(np.int64)
    out[:, 2] = mulhi64_u64(stream_hash_u64(fps, 2), m - ell + 1).astype(np.int64)
    out[:, 3] = 1 + mulhi64_u64(stream_hash_u64(fps, 3), (1 << ell) - 1).astype(np.int64)
    # the placed masks can only cancel when the starts are within ell of
    # each other; confirm those few rows on the exact scalar path
    maybe = np.abs(out[:, 0] - out[:, 2]) < ell
    for idx in np.flatnonzero(maybe):
        out[idx] = twoblock_pattern(int(fps[idx]), ell, m)
    return out


def ribbon_block(fp: int, w: int, m: int) -> tuple[int, int]:
    """Start position in [0, m-w] and w coefficient bits with bit 0 set."""
    if not 1 <= w <= min(m, 64):
        raise ConfigError(f"need 1 <= w <= min(m, 64), got w={w}, m={m}")
    s = mulhi64(stream_hash(fp, 0), m - w + 1)
    c = (stream_hash(fp, 1) & ((1 << w) - 1)) | 1
    return s, c


def ribbon_block_batch(fps: np.ndarray, w: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`ribbon_block`; (starts int64, coeffs uint64)."""
    if not 1 <= w <= min(m, 64):
        raise ConfigError(f"need 1 <= w <= min(m, 64), got w={w}, m={m}")
    starts = mulhi64_u64(stream_hash_u64(fps, 0), m - w + 1).astype(np.int64)
    mask = np.uint64(MASK64 if w == 64 else (1 << w) - 1)
    coeffs = (stream_hash_u64(fps, 1) & mask) | np.uint64(1)
    return starts, coeffs
