"""Command-line front end: experiments to CSV, structure builds, queries.

Every run is reproducible from its arguments; the default seed is the
documented constant 0xC0FFEE.  Exit codes: 0 success, 1 verification
failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import burr, experiments, linsys, ribbon
from .hashcore import MASK64, mix64, mix64_u64

DEFAULT_SEED = 0xC0FFEE


def _corpus(n: int, r: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Generated keys are u64 counters (8-byte little-endian strings);
    values are the low r bits of mix64(key ^ seed)."""
    keys = np.arange(n, dtype=np.uint64)
    mask = np.uint64(MASK64 if r == 64 else (1 << r) - 1)
    values = mix64_u64(keys ^ np.uint64(seed & MASK64)) & mask
    return keys, values


def _load_keys(path: str) -> list[bytes]:
    with open(path, "rb") as f:
        data = f.read()
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    return [ln.rstrip(b"\r") for ln in lines]


def _load_values(path: str, r: int) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as f:
        vals = [int(ln.strip(), 16) for ln in f if ln.strip()]
    mask = MASK64 if r == 64 else (1 << r) - 1
    return np.array([v & mask for v in vals], dtype=np.uint64)


def _keys_values(args) -> tuple:
    if args.keys:
        keys = _load_keys(args.keys)
        if args.values:
            values = _load_values(args.values, args.r)
            if len(values) != len(keys):
                raise SystemExit2("values file not line-aligned with keys file")
        else:
            mask = np.uint64(MASK64 if args.r == 64 else (1 << args.r) - 1)
            fps = np.array([mix64(int.from_bytes(k[:8].ljust(8, b"\0"), "little") ^ args.seed)
                            for k in keys], dtype=np.uint64)
            values = fps & mask
        return keys, values
    return _corpus(args.n, args.r, args.seed)


class SystemExit2(SystemExit):
    def __init__(self, msg: str):
        print(f"error: {msg}", file=sys.stderr)
        super().__init__(2)


def _structure_for(args):
    name = getattr(args, "structure", "cuckoo")
    if name == "cuckoo":
        return experiments.Cuckoo(args.k, args.ell, args.mode, args.eps)
    if name == "peel":
        return experiments.Peel(args.k, args.ell, args.mode, args.eps)
    if name == "kset":
        return experiments.KSetSystem(args.k)
    raise SystemExit2(f"unknown structure {name!r}")


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_threshold(args) -> int:
    structure = _structure_for(args)
    plan = experiments.TrialPlan(args.seed, args.trials)
    est = experiments.estimate_threshold(structure, args.m, plan, tol=args.tol,
                                         iters=args.iters)
    print(f"threshold {structure.label} k={args.k} ell={getattr(args, 'ell', 1)} "
          f"mode={getattr(args, 'mode', 'independent')} m={args.m}: "
          f"estimate={est.estimate:.5f} +/- {est.half_width:.5f} "
          f"bracket=[{est.lo:.5f},{est.hi:.5f}]")
    if args.out:
        _emit(experiments.points_to_csv(est.points), args.out)
    return 0


def cmd_curve(args) -> int:
    structure = _structure_for(args)
    plan = experiments.TrialPlan(args.seed, args.trials)
    steps = round((args.c_max - args.c_min) / args.c_step)
    cs = [round(args.c_min + i * args.c_step, 10) for i in range(steps + 1)]
    points = experiments.success_curve(structure, args.m, cs, plan)
    _emit(experiments.points_to_csv(points), args.out)
    return 0


def cmd_balance(args) -> int:
    plan = experiments.TrialPlan(args.seed, args.trials)
    rep = experiments.balls_bins_maxload(args.n, args.m, args.d, plan)
    print(f"balance n={args.n} m={args.m} d={args.d} trials={args.trials}: "
          f"mean_max_load={rep.mean_max_load:.3f} worst={rep.worst_max_load} "
          f"loads={rep.max_loads}")
    return 0


def cmd_variants(args) -> int:
    plan = experiments.TrialPlan(args.seed, args.trials)
    rep = experiments.variant_comparisons(plan, m=args.m)
    print(f"independent k=3: {rep.independent.estimate:.5f}")
    print(f"double hashing k=3: {rep.double_hashing.estimate:.5f} "
          f"(|delta|={abs(rep.double_hashing.estimate - rep.independent.estimate):.5f}, "
          f"match={rep.double_matches})")
    print(f"unaligned k=2 ell=2: {rep.unaligned.estimate:.5f} "
          f"(> {rep.unaligned_floor}: {rep.unaligned_exceeds})")
    print(f"coupled peel k=3 c=0.85 eps=0.05: fraction={rep.coupled_peel.fraction:.3f} "
          f"(>= {rep.coupled_floor}: {rep.coupled_peels})")
    return 0 if rep.all_pass else 1


def cmd_queue(args) -> int:
    rep = experiments.md1_simulate(args.alpha, args.steps, args.seed)
    print(f"queue alpha={args.alpha} steps={args.steps}: mean={rep.mean_queue:.5f} "
          f"closed_form={rep.pk_mean:.5f}")
    r2, slope = experiments.tail_log_linearity(rep, args.w_lo, args.w_hi)
    print(f"tail log-linearity on [{args.w_lo},{args.w_hi}]: R2={r2:.4f} slope={slope:.4f}")
    top = min(args.w_hi, rep.tail.size - 1)
    for w in range(0, top + 1, max(1, top // 10)):
        print(f"  Pr[q >= {w}] = {rep.tail[w]:.3e}")
    return 0


def _build_structure(args, keys, values):
    if args.structure == "ribbon":
        return ribbon.build_ribbon(keys, values, args.r, args.seed, w=args.w, alpha=args.alpha)
    if args.structure == "burr":
        cfg = burr.BurrConfig(args.w, args.r)
        return burr.build(keys, values, cfg, args.seed)
    if args.structure == "kset":
        variant = linsys.KSetVariant(3)
    elif args.structure == "twoblock":
        scale = min(len(keys), args.shard_c) if len(keys) > args.shard_c else len(keys)
        variant = linsys.TwoBlockVariant(linsys.default_twoblock_params(max(scale, 1))[0])
    else:
        raise SystemExit2(f"unknown structure {args.structure!r}")
    if len(keys) > args.shard_c:
        return linsys.build_sharded(keys, values, args.r, args.seed, variant, C=args.shard_c)
    return linsys.build_retrieval(keys, values, args.r, args.seed, variant)


def _verify(structure, keys, values) -> int:
    if isinstance(keys, np.ndarray):
        if isinstance(structure, burr.BumpedRibbon):
            got = burr.query_batch(structure, keys)
        elif isinstance(structure, ribbon.RibbonSolution):
            got = ribbon.query_batch(structure, keys)
        elif isinstance(structure, linsys.ShardedRetrieval):
            got = structure.query_batch(keys)
        else:
            got = linsys.query_dot_batch(structure, keys)
        return int((got != values).sum())
    bad = 0
    for k, v in zip(keys, values):
        if structure.query(k) != int(v):
            bad += 1
    return bad


def cmd_retrieval_check(args) -> int:
    keys, values = _keys_values(args)
    if args.structure == "trit":
        if args.r != 1:
            raise SystemExit2("trit retrieval stores single bits (--r 1)")
        tr = linsys.trit_build(keys, values.astype(np.uint8), args.seed)
        bad = sum(linsys.trit_query(tr, k) != int(v) for k, v in zip(
            (keys if not isinstance(keys, np.ndarray) else keys.tolist()), values))
        print(f"trit n={len(keys)}: levels={len(tr.levels)} "
              f"cells_per_key={tr.cells_per_key:.4f} bits_per_key={tr.bits_per_key:.4f} "
              f"mismatches={bad}")
        return 0 if bad == 0 else 1
    structure = _build_structure(args, keys, values)
    bad = _verify(structure, keys, values)
    print(f"{args.structure} n={len(keys)} r={args.r}: mismatches={bad}")
    return 0 if bad == 0 else 1


def cmd_burr_overhead(args) -> int:
    keys, values = _corpus(args.n, args.r, args.seed)
    cfg = burr.BurrConfig(args.w, args.r)
    bs = burr.build(keys, values, cfg, args.seed)
    rep = burr.overhead_report(bs)
    depth = burr.answered_at_layer(bs, keys)
    rep["layer0_fraction"] = float((depth == 0).mean())
    for key in sorted(rep):
        print(f"{key}={rep[key]}")
    return 0


def cmd_serialize(args) -> int:
    keys, values = _keys_values(args)
    structure = _build_structure(args, keys, values)
    if isinstance(structure, burr.BumpedRibbon):
        blob = burr.to_bytes(structure)
    elif isinstance(structure, ribbon.RibbonSolution):
        blob = ribbon.solution_to_bytes(structure)
    elif isinstance(structure, linsys.Solution):
        blob = linsys.solution_to_bytes(structure)
    else:
        raise SystemExit2("sharded structures do not serialize; lower --n or raise --shard-c")
    bad = _verify(structure, keys, values)
    with open(args.out, "wb") as f:
        f.write(blob)
    print(f"wrote {args.out}: {len(blob)} bytes, mismatches={bad}")
    return 0 if bad == 0 else 1


def cmd_query(args) -> int:
    with open(args.structure_file, "rb") as f:
        blob = f.read()
    magic = blob[:4]
    if magic == burr.MAGIC:
        obj = burr.from_bytes(blob)
        r = obj.cfg.r
    elif magic == ribbon.MAGIC:
        obj = ribbon.solution_from_bytes(blob)
        r = obj.r
    elif magic == linsys.MAGIC:
        obj = linsys.solution_from_bytes(blob)
        r = obj.r
    else:
        raise SystemExit2(f"unrecognized structure magic {magic!r}")
    width = (r + 3) // 4
    data = sys.stdin.buffer.read()
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    for line in lines:
        key = line.rstrip(b"\r")
        print(f"{obj.query(key):0{width}x}")
    return 0


def _add_common(p, *, m=False, n=False, kell=False, wr=False, trials=None):
    p.add_argument("--seed", type=lambda s: int(s, 0), default=DEFAULT_SEED,
                   help="master seed (default 0xC0FFEE)")
    if m:
        p.add_argument("--m", type=int, required=False, default=100_000, help="cell count")
    if n:
        p.add_argument("--n", type=int, default=100_000, help="key count")
    if kell:
        p.add_argument("--k", type=int, default=3, help="hash choices per key")
        p.add_argument("--ell", type=int, default=1, help="bucket size")
        p.add_argument("--mode", default="independent",
                       choices=["independent", "double", "unaligned", "coupled"])
        p.add_argument("--eps", type=float, default=None, help="coupling window fraction")
    if wr:
        p.add_argument("--w", type=int, default=32, help="ribbon block width")
        p.add_argument("--r", type=int, default=8, help="value bits")
        p.add_argument("--alpha", type=float, default=0.85, help="ribbon load target")
    if trials is not None:
        p.add_argument("--trials", type=int, default=trials)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="choicehash",
                                 description="hashing data-structure experiments")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("threshold", help="bisect a load threshold")
    _add_common(p, m=True, kell=True, trials=200)
    p.add_argument("--structure", default="cuckoo", choices=["cuckoo", "peel", "kset"])
    p.add_argument("--iters", type=int, default=12)
    p.add_argument("--tol", type=float, default=0.01)
    p.add_argument("--out", default=None, help="write probe points as CSV")
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("peel-threshold", help="bisect a peeling threshold")
    _add_common(p, m=True, kell=True, trials=200)
    p.add_argument("--iters", type=int, default=12)
    p.add_argument("--tol", type=float, default=0.01)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_threshold, structure="peel")

    p = sub.add_parser("curve", help="success fractions over a load grid")
    _add_common(p, m=True, kell=True, trials=100)
    p.add_argument("--structure", default="cuckoo", choices=["cuckoo", "peel", "kset"])
    p.add_argument("--c-min", type=float, default=0.80)
    p.add_argument("--c-max", type=float, default=0.96)
    p.add_argument("--c-step", type=float, default=0.01)
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("balance", help="d-choice balls into bins max load")
    _add_common(p, m=True, n=True, trials=10)
    p.add_argument("--d", type=int, default=2)
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("variants", help="double hashing / unaligned / coupled checks")
    _add_common(p, m=True, trials=200)
    p.set_defaults(func=cmd_variants)

    p = sub.add_parser("queue", help="M/D/1 queue simulation")
    _add_common(p)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--steps", type=int, default=1_000_000)
    p.add_argument("--w-lo", type=int, default=5)
    p.add_argument("--w-hi", type=int, default=25)
    p.set_defaults(func=cmd_queue)

    p = sub.add_parser("retrieval-check", help="build a retrieval structure and verify all keys")
    _add_common(p, n=True, wr=True)
    p.add_argument("--structure", default="burr",
                   choices=["kset", "twoblock", "ribbon", "burr", "trit"])
    p.add_argument("--keys", default=None, help="file with one key per line (raw bytes)")
    p.add_argument("--values", default=None, help="hex values, line-aligned with --keys")
    p.add_argument("--shard-c", type=int, default=256)
    p.set_defaults(func=cmd_retrieval_check)

    p = sub.add_parser("burr-overhead", help="bumped-ribbon space accounting")
    _add_common(p, n=True, wr=True)
    p.set_defaults(func=cmd_burr_overhead)

    p = sub.add_parser("serialize", help="build a structure and write it to a file")
    _add_common(p, n=True, wr=True)
    p.add_argument("--structure", default="ribbon",
                   choices=["kset", "twoblock", "ribbon", "burr"])
    p.add_argument("--keys", default=None)
    p.add_argument("--values", default=None)
    p.add_argument("--shard-c", type=int, default=1 << 62)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_serialize)

    p = sub.add_parser("query", help="answer stdin keys from a structure file")
    p.add_argument("structure_file")
    p.set_defaults(func=cmd_query)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
