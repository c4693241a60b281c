"""Flat index tests against independent brute-force oracles.

The oracles below recompute distances from unpacked bits with plain
float arithmetic and resolve ties with explicit (distance, index) sort
keys, sharing no code with the index internals.
"""

from __future__ import annotations

import numpy as np
import pytest

from neardup.errors import (
    CorruptIndex,
    DuplicateImageId,
    EmptyQuery,
    KindMismatch,
    MultiFeatureIndex,
)
from neardup.feature_io import BINARY_128, REAL_512, FeatureKind
from neardup.vector_index import (
    QueryParams,
    build,
    knn_features,
    load,
    query_distance,
    query_votes,
    save,
)


def unpack(packed: np.ndarray) -> np.ndarray:
    return np.unpackbits(packed, axis=-1, bitorder="little").astype(np.float64)


def brute_knn(feats: np.ndarray, q: np.ndarray, k: int, binary: bool) -> list[tuple[int, float]]:
    if binary:
        d = ((unpack(feats) - unpack(q)) ** 2).sum(axis=1)
    else:
        d = ((feats.astype(np.float64) - q.astype(np.float64)) ** 2).sum(axis=1)
    order = sorted(range(len(d)), key=lambda i: (d[i], i))
    return [(i, float(d[i])) for i in order[:k]]


def rand_binary(rng, n, width=16):
    return rng.integers(0, 256, size=(n, width), dtype=np.uint8)


class TestBuild:
    def test_empty_index_queries_empty(self, rng):
        ix = build([], BINARY_128)
        assert ix.n_images == 0 and ix.n_features == 0
        res = query_votes(ix, rand_binary(rng, 1))
        assert res.entries == ()

    def test_entry_and_owner_layout(self, rng):
        ix = build(
            [("a", rand_binary(rng, 2)), ("b", rand_binary(rng, 2)), ("c", rand_binary(rng, 2))],
            BINARY_128,
        )
        assert ix.n_features == 6
        assert ix.owner.tolist() == [0, 0, 1, 1, 2, 2]
        assert ix.image_ids == ("a", "b", "c")

    def test_duplicate_id(self, rng):
        with pytest.raises(DuplicateImageId):
            build([("a", rand_binary(rng, 1)), ("a", rand_binary(rng, 1))], BINARY_128)

    def test_kind_mismatch(self, rng):
        with pytest.raises(KindMismatch):
            build([("a", rng.normal(size=(2, 512)).astype(np.float32))], BINARY_128)


class TestKnnFeatures:
    def test_self_feature_first_with_zero_distance(self, rng):
        feats = rand_binary(rng, 20)
        ix = build([("a", feats)], BINARY_128)
        got = knn_features(ix, feats[7], k=3)
        assert got[0] == (7, 0.0)

    def test_four_bit_example(self):
        # 0b1100 vs 0b1010 differ in bits 1 and 2 -> Hamming 2
        a = np.zeros((1, 16), np.uint8)
        b = np.zeros(16, np.uint8)
        a[0, 0] = 0b1100
        b[0] = 0b1010
        ix = build([("a", a)], BINARY_128)
        assert knn_features(ix, b, k=1) == [(0, 2.0)]

    @pytest.mark.parametrize("k", [1, 5, 50, 200])
    def test_matches_brute_force_binary(self, rng, k):
        feats = rand_binary(rng, 50)
        ix = build([("a", feats)], BINARY_128)
        for _ in range(10):
            q = rand_binary(rng, 1)[0]
            assert knn_features(ix, q, k) == brute_knn(feats, q, k, binary=True)

    def test_matches_brute_force_with_heavy_ties(self, rng):
        # only 4 distinct vectors over 60 rows: the cut lands inside a tie
        # group almost surely, exercising the insertion-order tie-break
        alphabet = rand_binary(rng, 4)
        feats = alphabet[rng.integers(0, 4, size=60)]
        ix = build([("a", feats)], BINARY_128)
        for k in (1, 3, 17, 59):
            q = alphabet[0]
            assert knn_features(ix, q, k) == brute_knn(feats, q, k, binary=True)

    def test_matches_brute_force_real(self, rng):
        feats = rng.normal(size=(40, 512)).astype(np.float32)
        ix = build([("a", feats)], REAL_512)
        q = rng.normal(size=512).astype(np.float32)
        assert knn_features(ix, q, 7) == brute_knn(feats, q, 7, binary=False)

    def test_real_ties_broken_by_insertion(self, rng):
        v = rng.normal(size=512).astype(np.float32)
        feats = np.vstack([v, v, v, v])
        ix = build([("a", feats)], REAL_512)
        assert [i for i, _ in knn_features(ix, v, 2)] == [0, 1]

    def test_small_index_returns_fewer(self, rng):
        ix = build([("a", rand_binary(rng, 3))], BINARY_128)
        assert len(knn_features(ix, rand_binary(rng, 1)[0], k=10)) == 3

    def test_query_kind_mismatch(self, rng):
        ix = build([("a", rand_binary(rng, 3))], BINARY_128)
        with pytest.raises(KindMismatch):
            knn_features(ix, np.zeros(512, np.float32), 1)


class TestQueryVotes:
    def test_self_match_saturation(self, rng):
        sets = {name: rand_binary(rng, 5) for name in "abcd"}
        ix = build(sorted(sets.items()), BINARY_128)
        res = query_votes(ix, sets["b"], QueryParams(k=1, n=4))
        assert res.entries[0].image_id == "b"
        assert res.entries[0].score == 5.0
        assert res.mode == "votes"

    def test_hand_vote_oracle_two_images(self, rng):
        q = rand_binary(rng, 5)
        far = rand_binary(rng, 5) ^ 0xFF
        a_feats = np.vstack([q[0], q[1], q[2], far[0], far[1]])
        b_feats = np.vstack([q[3], far[2], far[3], far[4]])
        ix = build([("A", a_feats), ("B", b_feats)], BINARY_128)
        res = query_votes(ix, q, QueryParams(k=1, n=2))
        assert [e.image_id for e in res.entries] == ["A", "B"]

    def test_n_larger_than_index_returns_all_ranked(self, rng):
        ix = build([(f"i{j}", rand_binary(rng, 2)) for j in range(3)], BINARY_128)
        res = query_votes(ix, rand_binary(rng, 2), QueryParams(k=2, n=50))
        assert len(res.entries) == 3
        assert [e.rank for e in res.entries] == [1, 2, 3]

    def test_zero_feature_image_never_retrieved(self, rng):
        ix = build(
            [("a", rand_binary(rng, 2)), ("empty", rand_binary(rng, 0)), ("b", rand_binary(rng, 2))],
            BINARY_128,
        )
        res = query_votes(ix, rand_binary(rng, 3), QueryParams(k=4, n=10))
        assert "empty" not in [e.image_id for e in res.entries]

    def test_scores_non_increasing(self, rng):
        ix = build([(f"i{j}", rand_binary(rng, 4)) for j in range(6)], BINARY_128)
        res = query_votes(ix, rand_binary(rng, 8), QueryParams(k=5, n=6))
        scores = [e.score for e in res.entries]
        assert scores == sorted(scores, reverse=True)

    def test_empty_query(self, rng):
        ix = build([("a", rand_binary(rng, 2))], BINARY_128)
        with pytest.raises(EmptyQuery):
            query_votes(ix, rand_binary(rng, 0))

    def test_prefix_stable_as_n_grows(self, rng):
        ix = build([(f"i{j}", rand_binary(rng, 3)) for j in range(8)], BINARY_128)
        q = rand_binary(rng, 4)
        prev: list[str] = []
        for n in range(1, 9):
            ids = [e.image_id for e in query_votes(ix, q, QueryParams(k=3, n=n)).entries]
            assert ids[: len(prev)] == prev
            prev = ids

    def test_deterministic(self, rng):
        items = [(f"i{j}", rand_binary(rng, 3)) for j in range(5)]
        q = rand_binary(rng, 4)
        r1 = query_votes(build(items, BINARY_128), q, QueryParams(k=3, n=5))
        r2 = query_votes(build(items, BINARY_128), q, QueryParams(k=3, n=5))
        assert r1 == r2

    def test_vote_tie_broken_by_distance_sum(self, rng):
        # both images get 1 vote; the closer one must rank first even
        # though it was inserted second
        q = np.zeros((1, 16), np.uint8)
        near = np.zeros((1, 16), np.uint8)
        near[0, 0] = 0b1  # distance 1
        far = np.zeros((1, 16), np.uint8)
        far[0, 0] = 0b111  # distance 3
        ix = build([("far", far), ("near", near)], BINARY_128)
        res = query_votes(ix, q, QueryParams(k=2, n=2))
        assert [e.image_id for e in res.entries] == ["near", "far"]


class TestQueryDistance:
    def unit(self, i: int) -> np.ndarray:
        v = np.zeros(512, np.float32)
        v[i] = 1.0
        return v

    def test_exact_match_rank1(self):
        ix = build([("a", self.unit(0)[None]), ("b", self.unit(1)[None])], REAL_512)
        res = query_distance(ix, self.unit(1), QueryParams(n=2))
        assert res.entries[0].image_id == "b" and res.entries[0].score == 0.0
        assert res.mode == "distance"

    def test_hand_ordering(self):
        # distances from e0: b=0.02 (0.9 e0 +: (1-.9)^2+.1^2), c=2 (e1), a=0
        stored = [
            ("a", self.unit(0)[None]),
            ("c", self.unit(1)[None]),
            ("b", (0.9 * self.unit(0) + 0.1 * self.unit(1))[None]),
        ]
        res = query_distance(build(stored, REAL_512), self.unit(0), QueryParams(n=3))
        assert [e.image_id for e in res.entries] == ["a", "b", "c"]
        assert res.entries[1].score == pytest.approx(0.02)
        scores = [e.score for e in res.entries]
        assert scores == sorted(scores)

    def test_multi_feature_index_rejected(self, rng):
        ix = build([("a", rng.normal(size=(2, 512)).astype(np.float32))], REAL_512)
        with pytest.raises(MultiFeatureIndex):
            query_distance(ix, self.unit(0))

    def test_zero_feature_image_rejected(self, rng):
        ix = build(
            [("a", self.unit(0)[None]), ("none", np.zeros((0, 512), np.float32))],
            REAL_512,
        )
        with pytest.raises(MultiFeatureIndex):
            query_distance(ix, self.unit(0))

    def test_ties_by_insertion(self):
        ix = build([("y", self.unit(2)[None]), ("x", self.unit(3)[None])], REAL_512)
        res = query_distance(ix, self.unit(0), QueryParams(n=2))
        assert [e.image_id for e in res.entries] == ["y", "x"]


class TestSaveLoad:
    def make(self, rng):
        return build(
            [
                ("alpha", rand_binary(rng, 3)),
                ("empty", rand_binary(rng, 0)),
                ("beta", rand_binary(rng, 5)),
            ],
            BINARY_128,
        )

    def test_round_trip_queries_identical(self, rng):
        ix = self.make(rng)
        back = load(save(ix))
        q = rand_binary(rng, 4)
        assert query_votes(ix, q, QueryParams(k=3, n=3)) == query_votes(
            back, q, QueryParams(k=3, n=3)
        )
        assert back.image_ids == ix.image_ids
        assert (back.features == ix.features).all()

    def test_real_round_trip(self, rng):
        ix = build([("a", rng.normal(size=(1, 512)).astype(np.float32))], REAL_512)
        back = load(save(ix))
        assert (back.features == ix.features).all()

    def test_truncation(self, rng):
        data = save(self.make(rng))
        for cut in range(0, len(data), 7):
            with pytest.raises(CorruptIndex):
                load(data[:cut])

    def test_version_detail(self, rng):
        data = bytearray(save(self.make(rng)))
        data[4] = 9
        with pytest.raises(CorruptIndex, match="version 9"):
            load(bytes(data))

    def test_checksum(self, rng):
        data = bytearray(save(self.make(rng)))
        data[-10] ^= 0x20
        with pytest.raises(CorruptIndex, match="checksum"):
            load(bytes(data))

    def test_params_validation(self):
        with pytest.raises(ValueError):
            QueryParams(k=0)
        with pytest.raises(ValueError):
            QueryParams(n=0)
