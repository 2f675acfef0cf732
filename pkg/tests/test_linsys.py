import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from choicehash import linsys
from choicehash import orientation as ori
from choicehash.hashcore import fingerprint_u64, kset_columns_batch, mix64_u64

NAME_ROWS = [((0, 1, 3), 0), ((1, 3, 5), 1), ((0, 5, 6), 0), ((3, 5, 6), 1)]


def name_system():
    # the four-name example: keys hash to {1,2,4},{2,4,6},{1,6,7},{4,6,7}
    # (1-indexed) with stored bits 0,1,0,1
    return linsys.LinearSystem(7, 1, rows=NAME_ROWS)


class TestLinearSystem:
    def test_name_system_shape(self):
        sys = name_system()
        assert sys.m == 7 and len(sys) == 4
        as_matrix = np.zeros((4, 7), dtype=int)
        for i, (cols, _) in enumerate(sys.rows):
            as_matrix[i, list(cols)] = 1
        expected = np.array([
            [1, 1, 0, 1, 0, 0, 0],
            [0, 1, 0, 1, 0, 1, 0],
            [1, 0, 0, 0, 0, 1, 1],
            [0, 0, 0, 1, 0, 1, 1],
        ])
        assert (as_matrix == expected).all()
        assert [rhs for _, rhs in sys.rows] == [0, 1, 0, 1]

    def test_rejects_bad_rows(self):
        with pytest.raises(ValueError):
            linsys.LinearSystem(4, 1, rows=[((), 0)])
        with pytest.raises(ValueError):
            linsys.LinearSystem(4, 1, rows=[((1, 1), 0)])
        with pytest.raises(ValueError):
            linsys.LinearSystem(4, 1, rows=[((4,), 0)])

    def test_value_spec_bounds(self):
        with pytest.raises(ValueError):
            linsys.ValueSpec(0)
        with pytest.raises(ValueError):
            linsys.ValueSpec(65)
        assert linsys.ValueSpec(64).mask == 2**64 - 1


class TestGaussSolve:
    def test_name_system_solves_and_verifies(self):
        sys = name_system()
        sol = linsys.gauss_solve(sys)
        assert sol is not None
        assert linsys.verify_system(sys, sol)
        # the first stored bit really is z1 ^ z2 ^ z4 (1-indexed)
        z = [int(v) for v in sol.z]
        assert z[0] ^ z[1] ^ z[3] == 0
        assert z[1] ^ z[3] ^ z[5] == 1

    def test_identical_rows_conflicting_rhs(self):
        sys = linsys.LinearSystem(5, 1, rows=[((0, 2), 0), ((0, 2), 1)])
        assert linsys.gauss_solve(sys) is None

    def test_identical_rows_same_rhs_is_fine(self):
        sys = linsys.LinearSystem(5, 1, rows=[((0, 2), 1), ((0, 2), 1)])
        sol = linsys.gauss_solve(sys)
        assert sol is not None and linsys.verify_system(sys, sol)

    def test_zero_fill_and_random_fill(self):
        sys = linsys.LinearSystem(9, 4, rows=[((1, 4), 7)])
        z0 = linsys.gauss_solve(sys, free_fill="zero")
        assert linsys.verify_system(sys, z0)
        zr = linsys.gauss_solve(sys, free_fill="random", fill_seed=5)
        assert linsys.verify_system(sys, zr)
        # free columns are actually randomized
        assert any(int(v) for j, v in enumerate(zr.z) if j not in (1, 4))

    @given(st.data())
    @settings(max_examples=120, deadline=None)
    def test_random_systems_verify(self, data):
        m = data.draw(st.integers(4, 16))
        r = data.draw(st.sampled_from([1, 8, 64]))
        nrows = data.draw(st.integers(0, 12))
        rows = []
        for _ in range(nrows):
            cols = data.draw(st.sets(st.integers(0, m - 1), min_size=1, max_size=4))
            rhs = data.draw(st.integers(0, 2**r - 1))
            rows.append((tuple(sorted(cols)), rhs))
        sys = linsys.LinearSystem(m, r, rows=rows)
        sol = linsys.gauss_solve(sys)
        if sol is not None:
            assert linsys.verify_system(sys, sol)
        else:
            # infeasibility witness: brute-force over all z when tiny
            if m <= 12 and r == 1:
                feasible = any(
                    all(bin(z & sum(1 << c for c in cols)).count("1") % 2 == rhs
                        for cols, rhs in rows)
                    for z in range(1 << m))
                assert not feasible

    def test_solvable_fraction_below_threshold(self):
        # k=3 columns at load 0.85, well under the rank threshold ~0.918
        m = 10_000
        n = 8_500
        solved = 0
        trials = 200
        for t in range(trials):
            keys = np.arange(n, dtype=np.uint64)
            sys = linsys.build_rows(keys, np.zeros(n, dtype=np.uint64), 1000 + t,
                                    linsys.KSetVariant(3), m, 1)
            # random rhs: reuse per-key stream bits
            fps = fingerprint_u64(keys, 1000 + t)
            rhs = (mix64_u64(fps) & np.uint64(1)).astype(np.uint64)
            sys.rows = [(cols, int(b)) for (cols, _), b in zip(sys.rows, rhs)]
            if linsys.gauss_solve(sys) is not None:
                solved += 1
        assert solved >= 0.95 * trials


class TestRetrieval:
    def test_kset_every_key_exact(self):
        keys = np.arange(3000, dtype=np.uint64)
        vals = mix64_u64(keys) & np.uint64(0xFF)
        sol = linsys.build_retrieval(keys, vals, 8, seed=2, variant=linsys.KSetVariant(3))
        assert (linsys.query_dot_batch(sol, keys) == vals).all()
        for k in (0, 17, 2999):
            assert linsys.query_dot(sol, int(k)) == int(vals[k])
            assert linsys.query_dot(sol, int(k).to_bytes(8, "little")) == int(vals[k])

    def test_kset_rows_have_exactly_k_columns(self):
        keys = np.arange(200, dtype=np.uint64)
        sys = linsys.build_rows(keys, np.zeros(200, dtype=np.uint64), 3,
                                linsys.KSetVariant(3), 500, 1)
        assert all(len(cols) == 3 and len(set(cols)) == 3 for cols, _ in sys.rows)

    def test_empty_build(self):
        sys = linsys.build_rows(np.zeros(0, dtype=np.uint64), [], 4,
                                linsys.KSetVariant(3), 10, 1)
        assert len(sys) == 0
        sol = linsys.gauss_solve(sys)
        assert sol is not None

    def test_twoblock_every_key_exact(self):
        keys = np.arange(2000, dtype=np.uint64)
        vals = mix64_u64(keys) & np.uint64(0x3F)
        ell, m = linsys.default_twoblock_params(2000)
        sol = linsys.build_retrieval(keys, vals, 6, seed=5,
                                     variant=linsys.TwoBlockVariant(ell), m=m)
        assert (linsys.query_dot_batch(sol, keys) == vals).all()
        assert linsys.query_dot(sol, 123) == int(vals[123])

    def test_nonkey_bits_near_half_with_random_fill(self):
        keys = np.arange(2000, dtype=np.uint64)
        vals = mix64_u64(keys) & np.uint64(1)
        sol = linsys.build_retrieval(keys, vals, 1, seed=6,
                                     variant=linsys.KSetVariant(3), free_fill="random")
        nonkeys = np.arange(10**6, 10**6 + 10_000, dtype=np.uint64)
        ones = int(linsys.query_dot_batch(sol, nonkeys).sum())
        sigma = (10_000 * 0.25) ** 0.5
        assert abs(ones - 5000) < 5 * sigma

    def test_rank_implies_matching_spot_check(self):
        # solvable for 16 random rhs vectors => the same column pattern
        # admits a key-perfect matching
        rng = np.random.default_rng(11)
        checked = 0
        for trial in range(1500):
            n = int(rng.integers(1, 11))
            m = int(rng.integers(3, 13))
            keys = np.arange(n, dtype=np.uint64)
            sys = linsys.build_rows(keys, np.zeros(n, dtype=np.uint64), 5000 + trial,
                                    linsys.KSetVariant(3), m, 1)
            full_rank_proxy = True
            for _ in range(16):
                rhs = rng.integers(0, 2, size=n)
                probe = linsys.LinearSystem(m, 1, rows=[
                    (cols, int(b)) for (cols, _), b in zip(sys.rows, rhs)])
                if linsys.gauss_solve(probe) is None:
                    full_rank_proxy = False
                    break
            if full_rank_proxy:
                cands = [list(cols) for cols, _ in sys.rows]
                assert ori.max_matching(
                    ori.PlacementInstance.from_candidates(cands, m)) is not None
                checked += 1
        assert checked > 400


class TestSharding:
    def test_single_shard_matches_unsharded(self):
        keys = np.arange(300, dtype=np.uint64)
        vals = mix64_u64(keys) & np.uint64(0xFF)
        sr = linsys.build_sharded(keys, vals, 8, seed=7, C=1000)
        assert sr.plan.nshards == 1
        assert (sr.query_batch(keys) == vals).all()
        # same column budget as a direct build
        direct = linsys.build_retrieval(keys, vals, 8,
                                        seed=linsys.mix64(7 ^ linsys.mix64(1)),
                                        variant=linsys.KSetVariant(3))
        assert sr.shards[0].m == direct.m

    def test_sharded_build_and_route_stability(self):
        keys = np.arange(20_000, dtype=np.uint64)
        vals = mix64_u64(keys) & np.uint64(0xFFFF)
        sr = linsys.build_sharded(keys, vals, 16, seed=8, C=256)
        assert sr.plan.nshards == -(-20_000 // 256)
        assert (sr.query_batch(keys) == vals).all()
        for k in (0, 999, 19_999):
            assert sr.query(int(k)) == int(vals[k])
        # routing is a pure function of (fingerprint, seed)
        plan2 = linsys.shard_split(keys, 8, 256)
        for s in range(sr.plan.nshards):
            assert (plan2.shard_keys[s] == sr.plan.shard_keys[s]).all()

    def test_offsets_are_prefix_sums(self):
        keys = np.arange(5000, dtype=np.uint64)
        plan = linsys.shard_split(keys, 3, 256)
        sizes = np.diff(plan.offsets)
        assert plan.offsets[0] == 0 and (sizes >= 0).all()
        assert len(plan.shard_keys) == plan.nshards


class TestSerialization:
    def test_round_trip_bit_exact(self):
        keys = np.arange(1000, dtype=np.uint64)
        vals = mix64_u64(keys) & np.uint64(0x1FF)
        for variant in (linsys.KSetVariant(3), linsys.TwoBlockVariant(12)):
            sol = linsys.build_retrieval(keys, vals, 9, seed=9, variant=variant,
                                         m=1400)
            blob = linsys.solution_to_bytes(sol)
            assert blob[:4] == b"F2RS"
            back = linsys.solution_from_bytes(blob)
            assert back.m == sol.m and back.r == sol.r and back.seed == sol.seed
            assert back.variant == sol.variant
            assert (back.z == sol.z).all()
            assert (linsys.query_dot_batch(back, keys) == vals).all()
            assert linsys.solution_to_bytes(back) == blob

    @given(st.integers(1, 64), st.integers(1, 40))
    @settings(max_examples=40, deadline=None)
    def test_pack_unpack_inverse(self, r, m):
        from choicehash import _ser
        rng = np.random.default_rng(r * 100 + m)
        mask = np.uint64(2**64 - 1 if r == 64 else (1 << r) - 1)
        z = rng.integers(0, 2**63, size=m, dtype=np.uint64) & mask
        packed = _ser.pack_table(z, r)
        assert len(packed) == (m * r + 7) // 8
        assert (_ser.unpack_table(packed, m, r) == z).all()


class TestTrit:
    def test_single_key(self):
        tr = linsys.trit_build([b"only"], [1], seed=1)
        assert len(tr.levels) == 1
        assert linsys.trit_query(tr, b"only") == 1

    def test_forced_conflict_recurses(self):
        # two keys, opposite bits: with a 2-cell level they collide about
        # half the time; either way both resolve eventually
        tr = linsys.trit_build([b"a", b"b"], [0, 1], seed=3)
        assert linsys.trit_query(tr, b"a") == 0
        assert linsys.trit_query(tr, b"b") == 1

    def test_every_key_resolves_at_exactly_one_level(self):
        keys = np.arange(5000, dtype=np.uint64)
        bits = (mix64_u64(keys) & np.uint64(1)).astype(np.uint8)
        tr = linsys.trit_build(keys, bits, seed=4)
        from choicehash.hashcore import fingerprint, mulhi64
        for k, b in list(zip(keys, bits))[:500]:
            kb = int(k).to_bytes(8, "little")
            hits = []
            for i, lvl in enumerate(tr.levels):
                c = mulhi64(fingerprint(kb, tr.level_seed(i)), lvl.size)
                if lvl[c] != linsys.TRIT_BOT:
                    hits.append((i, int(lvl[c])))
                    break
            assert hits and hits[0][1] == int(b)

    def test_cells_per_key_near_half_e(self):
        keys = np.arange(100_000, dtype=np.uint64)
        bits = (mix64_u64(keys) & np.uint64(1)).astype(np.uint8)
        tr = linsys.trit_build(keys, bits, seed=5)
        assert 1.25 <= tr.cells_per_key <= 1.50
        assert abs(tr.bits_per_key - 2 * tr.cells_per_key) < 1e-12
        got = [linsys.trit_query(tr, int(k)) for k in keys[:3000]]
        assert got == list(bits[:3000])
