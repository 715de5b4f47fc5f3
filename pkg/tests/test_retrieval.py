import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dsrh.retrieval import (
    CodeDatabase,
    CodeFormatError,
    codes_from_bytes,
    codes_to_bytes,
    hamming_distance,
    load_codes,
    pack,
    pack_many,
    rank_all,
    save_codes,
    search_topk,
    unpack,
    unpack_many,
)

from oracles import brute_force_ranking, hamming


def random_codes(rng, n, k):
    return rng.choice(np.array([-1, 1], dtype=np.int8), size=(n, k))


class TestPacking:
    def test_all_ones(self):
        p = pack(np.ones(8, dtype=int))
        assert p.words.tolist() == [0xFF]

    def test_all_minus_ones(self):
        assert not pack(-np.ones(70, dtype=int)).words.any()

    def test_bit_order(self):
        code = -np.ones(130, dtype=int)
        code[[0, 63, 64, 129]] = 1
        assert pack(code).words.tolist() == [1 | (1 << 63), 1, 2]

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        for k in (1, 7, 64, 65, 200):
            codes = random_codes(rng, 1000, k)
            np.testing.assert_array_equal(unpack_many(pack_many(codes), k), codes)
        c = random_codes(rng, 1, 33)[0]
        np.testing.assert_array_equal(unpack(pack(c)), c)

    def test_padding_zero(self):
        words = pack_many(np.ones((3, 70), dtype=int))
        assert words[:, 1].tolist() == [(1 << 6) - 1] * 3

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            pack(np.array([1, 0, -1]))


class TestHamming:
    def test_identity_and_antipodal(self):
        c = random_codes(np.random.default_rng(0), 1, 96)[0]
        assert hamming_distance(pack(c), pack(c)) == 0
        assert hamming_distance(pack(c), pack(-c)) == 96

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            hamming_distance(pack(np.ones(8)), pack(np.ones(9)))

    @given(st.integers(1, 150), st.integers(0, 2**32 - 1))
    def test_metric_axioms(self, k, seed):
        a, b, c = (pack(x) for x in random_codes(np.random.default_rng(seed), 3, k))
        ab, bc, ac = hamming_distance(a, b), hamming_distance(b, c), hamming_distance(a, c)
        assert ab == hamming_distance(b, a)
        assert (ab == 0) == np.array_equal(a.words, b.words)
        assert ac <= ab + bc
        assert 0 <= ab <= k

    @given(st.integers(1, 150), st.integers(0, 2**32 - 1))
    def test_matches_inner_product(self, k, seed):
        a, b = random_codes(np.random.default_rng(seed), 2, k)
        assert hamming_distance(pack(a), pack(b)) == (k - int(a.astype(int) @ b)) // 2 == hamming(a, b)


class TestSearch:
    def test_self_query(self):
        c = random_codes(np.random.default_rng(0), 1, 16)
        db = CodeDatabase.from_codes([42], c)
        assert search_topk(db, pack(c[0]), 3) == [(42, 0)]

    def test_equidistant_insertion_order(self):
        codes = np.array([[1, 1, -1], [1, -1, 1], [-1, 1, 1]])
        db = CodeDatabase.from_codes([9, 3, 5], codes)
        assert search_topk(db, pack(np.array([1, 1, 1])), 2) == [(9, 1), (3, 1)]

    def test_strict_sort(self):
        db = CodeDatabase.from_codes([1, 2, 3], np.array([[-1, -1], [1, 1], [1, -1]]))
        assert rank_all(db, pack(np.array([1, 1]))) == [(2, 0), (3, 1), (1, 2)]

    def test_against_brute_force(self):
        rng = np.random.default_rng(1)
        codes = random_codes(rng, 500, 24)  # small K: many ties
        db = CodeDatabase.from_codes(np.arange(500) * 7, codes)
        for q in random_codes(rng, 10, 24):
            expected = [(int(k) * 7, d) for k, d in brute_force_ranking(codes.tolist(), q.tolist())]
            full = rank_all(db, pack(q))
            assert full == expected
            assert search_topk(db, pack(q), 17) == full[:17]
            assert search_topk(db, pack(q), 10**6) == full

    def test_permuting_db_only_reorders_ties(self):
        rng = np.random.default_rng(2)
        codes = random_codes(rng, 50, 8)
        q = pack(random_codes(rng, 1, 8)[0])
        a = rank_all(CodeDatabase.from_codes(np.arange(50), codes), q)
        perm = rng.permutation(50)
        b = rank_all(CodeDatabase.from_codes(perm, codes[perm]), q)
        assert [d for _, d in a] == [d for _, d in b]
        for dist in set(d for _, d in a):
            assert {i for i, d in a if d == dist} == {i for i, d in b if d == dist}

    def test_k_mismatch(self):
        db = CodeDatabase.from_codes([1], np.ones((1, 8), dtype=int))
        with pytest.raises(ValueError):
            search_topk(db, pack(np.ones(16)), 1)


class TestCodeFile:
    def db(self, k=20):
        rng = np.random.default_rng(3)
        return CodeDatabase.from_codes(rng.permutation(30).astype(np.uint64) + 2**63, random_codes(rng, 30, k))

    @pytest.mark.parametrize("k", [1, 8, 20, 64, 100])
    def test_round_trip(self, tmp_path, k):
        db = self.db(k)
        save_codes(db, tmp_path / "c.bin")
        back = load_codes(tmp_path / "c.bin")
        assert back.bits == k
        np.testing.assert_array_equal(back.ids, db.ids)
        np.testing.assert_array_equal(back.codes, db.codes)

    def test_layout(self):
        db = CodeDatabase.from_codes([7], np.array([[1] * 9 + [-1] * 7]))
        data = codes_to_bytes(db)
        assert data[:8] == b"DSRHCODE"
        assert data[8:10] == (1).to_bytes(2, "little")
        assert data[10:14] == (16).to_bytes(4, "little")
        assert data[14:22] == (1).to_bytes(8, "little")
        assert data[22:30] == (7).to_bytes(8, "little")
        assert data[30:] == bytes([0xFF, 0x01])

    def test_truncated(self):
        data = codes_to_bytes(self.db())
        for cut in (4, 21, len(data) - 1):
            with pytest.raises(CodeFormatError):
                codes_from_bytes(data[:cut])

    def test_zero_bits_rejected(self):
        data = bytearray(codes_to_bytes(self.db()))
        data[10:14] = bytes(4)
        with pytest.raises(CodeFormatError):
            codes_from_bytes(bytes(data))
        with pytest.raises(ValueError):
            CodeDatabase(np.zeros(0, dtype=np.uint64), np.zeros((0, 0), dtype=np.uint64), 0)

    def test_bad_magic(self):
        with pytest.raises(CodeFormatError):
            codes_from_bytes(b"DSRHMODL" + codes_to_bytes(self.db())[8:])

    def test_nonzero_padding(self):
        data = bytearray(codes_to_bytes(CodeDatabase.from_codes([1], -np.ones((1, 4), dtype=int))))
        data[-1] = 0x10
        with pytest.raises(CodeFormatError, match="padding"):
            codes_from_bytes(bytes(data))
