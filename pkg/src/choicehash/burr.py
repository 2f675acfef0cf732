"""Bumped ribbon retrieval: overloaded ribbon layers plus 2-bit group codes.

Each layer is a ribbon at a load slightly above 1.  Starting positions
are partitioned into groups; a 2-bit code per group marks whether none,
a fixed prefix, or all of its positions are bumped.  Bumped keys cascade
to the next layer under a fresh seed, and keys bumped past the last
layer land in an exact fingerprint-to-value map.  Query routing is fully
recomputable from (key, seeds, config): no per-key metadata exists.

Structure files use magic "BRR1": version u8, w u32, r u32, g u64,
n u64, layer count u32, master seed u64, fallback seed u64, then per
layer (seed u64, m u64, group codes packed 4 per byte, packed bit
table), then the fallback as count u64 plus sorted (fp u64, value u64)
pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, _ser, ribbon
from .hashcore import MASK64, fingerprint, fingerprint_u64, mix64, ribbon_block, ribbon_block_batch

BUMP_NONE = 0
BUMP_PREFIX = 1
BUMP_ALL = 2


class EscalationExhausted(RuntimeError):
    """A layer stayed inconsistent after the bounded escalation passes."""


@dataclass(frozen=True)
class BurrConfig:
    """Layer geometry: block width w, r-bit values, group size g starting
    positions, initial overload alpha0 > 1, and the bumped prefix length.

    Defaults follow the width: g ~ w^2 / (4 log2 w), alpha0 =
    1 + ln(w)/(2w), prefix = 3w/8 (at least 1).  The queue margins keep
    the planned pending-key queue below w - 1 by a slack of roughly w/4
    (before a prefix bump) and w/16 (before a whole-group bump); random
    coefficient bits need that headroom beyond plain placement
    feasibility.
    """

    w: int
    r: int
    g: int | None = None
    alpha0: float | None = None
    layers_max: int = 3
    bump_prefix: int | None = None
    queue_margin_prefix: int | None = None
    queue_margin_all: int | None = None

    def __post_init__(self) -> None:
        if not 1 <= self.w <= 64:
            raise ValueError(f"need 1 <= w <= 64, got w={self.w}")
        if not 1 <= self.r <= 64:
            raise ValueError(f"value width must be in [1, 64], got r={self.r}")
        w2 = max(self.w, 2)
        if self.g is None:
            object.__setattr__(self, "g", max(1, math.ceil(self.w * self.w / (4 * math.log2(w2)))))
        if self.alpha0 is None:
            object.__setattr__(self, "alpha0", 1.0 + 0.5 * math.log(w2) / w2)
        if self.bump_prefix is None:
            object.__setattr__(self, "bump_prefix", max(1, min(self.g, (3 * self.w) // 8)))
        if self.queue_margin_prefix is None:
            object.__setattr__(self, "queue_margin_prefix",
                               min(max(self.w // 4, min(8, self.w // 2)), self.w - 1))
        if self.queue_margin_all is None:
            object.__setattr__(self, "queue_margin_all",
                               min(max(0, self.w // 16), self.queue_margin_prefix))
        if self.g < 1 or self.layers_max < 1:
            raise ValueError(f"invalid config {self}")
        if not self.alpha0 > 1.0:
            raise ValueError(f"alpha0 must exceed 1, got {self.alpha0}")
        if not 1 <= self.bump_prefix <= self.g:
            raise ValueError(f"bump prefix must be in [1, g], got {self}")
        if not 0 <= self.queue_margin_all <= self.queue_margin_prefix <= self.w - 1:
            raise ValueError(f"queue margins out of range, got {self}")

    def layer_m(self, n: int) -> int:
        return math.ceil(n / self.alpha0) + self.w - 1

    def escalation_passes(self, n: int) -> int:
        # rank repairs are rare per group but scale with layer size
        return max(16, 8 + n // 2000)


def plan_bumps(starts: np.ndarray, positions: int, cfg: BurrConfig) -> np.ndarray:
    """Per-group bump codes from sorted starting positions.

    Sweeps the pending-key queue left to right; a group keeps code 0
    unless the queue would exceed w - 1 somewhere in the group or within
    w positions after it, in which case the prefix (code 1) and then the
    whole group (code 2) are dropped.
    """
    if starts.size and (starts[0] < 0 or starts[-1] >= positions):
        raise ValueError("start out of range")
    x = np.bincount(starts, minlength=positions).astype(np.int64)
    return _kernels.plan_bumps_kernel(x, cfg.g, cfg.w, cfg.bump_prefix,
                                      cfg.queue_margin_prefix, cfg.queue_margin_all)


def bumped_by_codes(starts: np.ndarray, codes: np.ndarray, cfg: BurrConfig) -> np.ndarray:
    """Boolean mask of keys bumped under the given group codes."""
    groups = starts // cfg.g
    offsets = starts - groups * cfg.g
    code = codes[groups]
    return (code == BUMP_ALL) | ((code == BUMP_PREFIX) & (offsets < cfg.bump_prefix))


@dataclass
class BurrLayer:
    seed: int
    m: int
    codes: np.ndarray  # int8 per group
    solution: ribbon.RibbonSolution
    n_input: int = 0
    n_stored: int = 0
    free_columns: int = 0

    @property
    def positions(self) -> int:
        return self.m - self.solution.w + 1


def build_layer(keys, values, cfg: BurrConfig, seed: int):
    """One overloaded ribbon layer; returns (layer, bumped_keys, bumped_values).

    Bump codes come from the queue sweep; if a surviving row still turns
    inconsistent (random coefficients are slightly weaker than the
    placement argument), its group's code escalates one step and the
    layer is rebuilt, at most four times.
    """
    n = len(keys)
    values = np.asarray(values, dtype=np.uint64)
    m = cfg.layer_m(n)
    positions = m - cfg.w + 1
    if n == 0:
        state = ribbon.RibbonState(ribbon.RibbonConfig(max(m, cfg.w), cfg.w, cfg.r))
        sol = ribbon.back_substitute(state, seed=seed)
        layer = BurrLayer(seed, sol.m, np.zeros(0, dtype=np.int8), sol)
        return layer, _take(keys, np.zeros(0, dtype=np.int64)), values[:0]
    fps = _as_fps(keys, seed)
    starts, coeffs = ribbon_block_batch(fps, cfg.w, m)
    order = np.argsort(starts, kind="stable")
    codes = plan_bumps(starts[order], positions, cfg)
    for _ in range(cfg.escalation_passes(n)):
        bump = bumped_by_codes(starts, codes, cfg)
        keep = order[~bump[order]]
        state = ribbon.RibbonState(ribbon.RibbonConfig(m, cfg.w, cfg.r))
        fail = state.insert_rows(starts[keep], coeffs[keep], values[keep])
        if fail < 0:
            sol = ribbon.back_substitute(state, seed=seed)
            layer = BurrLayer(seed, m, codes, sol,
                              n_input=n, n_stored=int((~bump).sum()),
                              free_columns=state.free_columns)
            bidx = np.flatnonzero(bump)
            return layer, _take(keys, bidx), values[bidx]
        group = int(starts[keep[fail]]) // cfg.g
        if codes[group] >= BUMP_ALL:
            raise EscalationExhausted(f"group {group} inconsistent even when fully bumped")
        codes[group] += 1
    raise EscalationExhausted(f"layer still inconsistent after escalation (n={n}, m={m})")


def _as_fps(keys, seed: int) -> np.ndarray:
    if isinstance(keys, np.ndarray):
        return fingerprint_u64(keys, seed)
    return np.array([fingerprint(k, seed) for k in keys], dtype=np.uint64)


def _take(keys, idx):
    if isinstance(keys, np.ndarray):
        return keys[idx]
    return [keys[int(i)] for i in idx]


@dataclass
class BumpedRibbon:
    cfg: BurrConfig
    seed: int
    layers: list
    fallback_seed: int
    fallback: dict  # fingerprint -> value
    n: int
    layer_inputs: list = field(default_factory=list)

    def query(self, key) -> int:
        return query(self, key)

    def query_batch(self, keys: np.ndarray) -> np.ndarray:
        return query_batch(self, keys)


def layer_seed(master: int, i: int) -> int:
    return mix64(master ^ mix64(i + 1))


def _fallback_seed(master: int, layers_max: int, attempt: int) -> int:
    return mix64(master ^ mix64(layers_max + 1 + attempt))


def build(keys, values, cfg: BurrConfig, seed: int) -> BumpedRibbon:
    """Layered construction; distinct keys required.

    Each layer consumes the previous layer's bumped keys under a derived
    seed; whatever is bumped past the last layer goes into the exact
    fallback map (re-seeded in the unlikely event of a fingerprint
    collision there).
    """
    n = len(keys)
    values = np.asarray(values, dtype=np.uint64)
    if values.size != n:
        raise ValueError("keys and values must have equal length")
    if isinstance(keys, np.ndarray):
        if np.unique(keys).size != n:
            raise ValueError("duplicate keys in input")
    elif len(set(keys)) != n:
        raise ValueError("duplicate keys in input")
    layers = []
    layer_inputs = []
    rem_keys, rem_values = keys, values
    for i in range(cfg.layers_max):
        if len(rem_keys) == 0:
            break
        layer_inputs.append(len(rem_keys))
        layer, rem_keys, rem_values = build_layer(rem_keys, rem_values, cfg, layer_seed(seed, i))
        layers.append(layer)
    for attempt in range(16):
        fb_seed = _fallback_seed(seed, cfg.layers_max, attempt)
        fps = _as_fps(rem_keys, fb_seed)
        fallback = {int(fp): int(v) for fp, v in zip(fps, rem_values)}
        if len(fallback) == len(rem_keys):
            return BumpedRibbon(cfg, seed, layers, fb_seed, fallback, n, layer_inputs)
    raise EscalationExhausted("persistent fingerprint collisions in the fallback map")


def query(bs: BumpedRibbon, key) -> int:
    kb = key if isinstance(key, bytes) else int(key).to_bytes(8, "little")
    cfg = bs.cfg
    for layer in bs.layers:
        if layer.codes.size == 0:  # degenerate empty layer stores nothing
            continue
        s, c = ribbon_block(fingerprint(kb, layer.seed), cfg.w, layer.m)
        group = s // cfg.g
        code = int(layer.codes[group])
        if code == BUMP_ALL or (code == BUMP_PREFIX and s - group * cfg.g < cfg.bump_prefix):
            continue
        acc = 0
        i = 0
        while c:
            if c & 1:
                acc ^= int(layer.solution.z[s + i])
            c >>= 1
            i += 1
        return acc
    return bs.fallback.get(fingerprint(kb, bs.fallback_seed), 0)


def query_batch(bs: BumpedRibbon, keys: np.ndarray) -> np.ndarray:
    """Vectorized query for u64 keys."""
    out = np.zeros(keys.size, dtype=np.uint64)
    active = np.ones(keys.size, dtype=bool)
    cfg = bs.cfg
    for layer in bs.layers:
        if not active.any():
            break
        idx = np.flatnonzero(active)
        fps = fingerprint_u64(keys[idx], layer.seed)
        starts, coeffs = ribbon_block_batch(fps, cfg.w, layer.m)
        bump = bumped_by_codes(starts, layer.codes, cfg) if layer.codes.size else np.ones(idx.size, dtype=bool)
        answer = idx[~bump]
        a_starts = starts[~bump]
        a_coeffs = coeffs[~bump]
        acc = np.zeros(answer.size, dtype=np.uint64)
        for i in range(cfg.w):
            sel = ((a_coeffs >> np.uint64(i)) & np.uint64(1)).astype(bool)
            acc ^= np.where(sel, layer.solution.z[a_starts + i], np.uint64(0))
        out[answer] = acc
        active[answer] = False
    if active.any():
        idx = np.flatnonzero(active)
        fps = fingerprint_u64(keys[idx], bs.fallback_seed)
        for pos, fp in zip(idx, fps):
            out[pos] = bs.fallback.get(int(fp), 0)
    return out


def answered_at_layer(bs: BumpedRibbon, keys: np.ndarray) -> np.ndarray:
    """For each key, the index of the answering layer (len(layers) = fallback)."""
    cfg = bs.cfg
    depth = np.full(keys.size, len(bs.layers), dtype=np.int64)
    active = np.ones(keys.size, dtype=bool)
    for li, layer in enumerate(bs.layers):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        fps = fingerprint_u64(keys[idx], layer.seed)
        starts, _ = ribbon_block_batch(fps, cfg.w, layer.m)
        bump = bumped_by_codes(starts, layer.codes, cfg) if layer.codes.size else np.ones(idx.size, dtype=bool)
        depth[idx[~bump]] = li
        active[idx[~bump]] = False
    return depth


def overhead_report(bs: BumpedRibbon) -> dict:
    """Bits-per-key accounting: table bits, 2-bit group metadata, fallback,
    empty-column fraction, and total overhead versus the n*r payload."""
    solution_bits = sum(layer.m * bs.cfg.r for layer in bs.layers)
    metadata_bits = sum(2 * layer.codes.size for layer in bs.layers)
    fallback_bits = len(bs.fallback) * (64 + bs.cfg.r)
    total_bits = solution_bits + metadata_bits + fallback_bits
    columns = sum(layer.m for layer in bs.layers)
    empty = sum(layer.free_columns for layer in bs.layers)
    payload = max(bs.n * bs.cfg.r, 1)
    return {
        "n": bs.n,
        "r": bs.cfg.r,
        "w": bs.cfg.w,
        "layers": len(bs.layers),
        "layer_inputs": list(bs.layer_inputs),
        "fallback_keys": len(bs.fallback),
        "solution_bits": int(solution_bits),
        "metadata_bits": int(metadata_bits),
        "fallback_bits": int(fallback_bits),
        "total_bits": int(total_bits),
        "bits_per_key": total_bits / max(bs.n, 1),
        "empty_column_fraction": empty / max(columns, 1),
        "overhead": total_bits / payload - 1.0,
    }


MAGIC = b"BRR1"


def to_bytes(bs: BumpedRibbon) -> bytes:
    out = [MAGIC, _ser.u8(1), _ser.u32(bs.cfg.w), _ser.u32(bs.cfg.r), _ser.u64(bs.cfg.g),
           _ser.u64(bs.n), _ser.u32(len(bs.layers)), _ser.u64(bs.seed), _ser.u64(bs.fallback_seed)]
    for layer in bs.layers:
        out.append(_ser.u64(layer.seed))
        out.append(_ser.u64(layer.m))
        ng = layer.codes.size
        out.append(_ser.u64(ng))
        packed = np.zeros((ng + 3) // 4, dtype=np.uint8)
        for t in range(4):
            part = layer.codes[t::4].astype(np.uint8)
            packed[:part.size] |= part << (2 * t)
        out.append(packed.tobytes())
        out.append(_ser.pack_table(layer.solution.z, bs.cfg.r))
    out.append(_ser.u64(len(bs.fallback)))
    for fp in sorted(bs.fallback):
        out.append(_ser.u64(fp))
        out.append(_ser.u64(bs.fallback[fp]))
    return b"".join(out)


def from_bytes(data: bytes) -> BumpedRibbon:
    rd = _ser.Reader(data)
    rd.magic(MAGIC)
    if rd.u8() != 1:
        raise ValueError("unsupported version")
    w = rd.u32()
    r = rd.u32()
    g = rd.u64()
    n = rd.u64()
    nlayers = rd.u32()
    seed = rd.u64()
    fb_seed = rd.u64()
    cfg = BurrConfig(w, r, g=g)
    layers = []
    for _ in range(nlayers):
        lseed = rd.u64()
        m = rd.u64()
        ng = rd.u64()
        packed = np.frombuffer(rd.take((ng + 3) // 4), dtype=np.uint8)
        codes = np.zeros(ng, dtype=np.int8)
        for t in range(4):
            codes[t::4] = (packed[:(ng - t + 3) // 4] >> (2 * t)) & 3
        z = _ser.unpack_table(rd.take(_ser.table_nbytes(m, r)), m, r)
        sol = ribbon.RibbonSolution(m, w, r, lseed, z)
        layers.append(BurrLayer(lseed, m, codes, sol))
    count = rd.u64()
    fallback = {}
    for _ in range(count):
        fp = rd.u64()
        fallback[fp] = rd.u64()
    return BumpedRibbon(cfg, seed, layers, fb_seed, fallback, n)
