import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from liforge.core import MASK_ID, QMARK_ID, EmbeddingMatrix, Vocab, make_rng
from liforge.scoring import (
    DynamicLength,
    FixedMaxLength,
    FixedTokens,
    NoAugmentation,
    augment_query,
    maxsim,
    maxsim_batch,
    padded_query_length,
)
from oracles import maxsim_triple_loop


def _unit_rows(rng, m, d):
    rows = rng.standard_normal((m, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


class TestMaxSim:
    def test_identity_match(self):
        q = EmbeddingMatrix(np.eye(2))
        assert maxsim(q, q) == pytest.approx(2.0)

    def test_orthogonal(self):
        q = EmbeddingMatrix(np.array([[1.0, 0.0]]))
        d = EmbeddingMatrix(np.array([[0.0, 1.0]]))
        assert maxsim(q, d) == pytest.approx(0.0)

    def test_hand_derived_value(self):
        # brute-force double loop: rows give maxima 0.8 and 0.96
        q = EmbeddingMatrix(np.array([[1.0, 0.0], [0.6, 0.8]]))
        d = EmbeddingMatrix(np.array([[0.0, 1.0], [0.8, 0.6]]))
        assert maxsim(q, d) == pytest.approx(1.76)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dim"):
            maxsim(EmbeddingMatrix(np.ones((1, 2))), EmbeddingMatrix(np.ones((1, 3))))

    def test_triple_loop_oracle_1000_pairs(self):
        rng = make_rng(11)
        for _ in range(1000):
            q = _unit_rows(rng, int(rng.integers(1, 8)), 4)
            d = _unit_rows(rng, int(rng.integers(1, 12)), 4)
            got = maxsim(EmbeddingMatrix(q), EmbeddingMatrix(d))
            assert got == pytest.approx(maxsim_triple_loop(q, d), abs=1e-6)

    def test_row_permutation_invariance(self):
        rng = make_rng(3)
        q = _unit_rows(rng, 5, 4)
        d = _unit_rows(rng, 7, 4)
        base = maxsim(EmbeddingMatrix(q), EmbeddingMatrix(d))
        for _ in range(5):
            pq, pd = rng.permutation(5), rng.permutation(7)
            assert maxsim(EmbeddingMatrix(q[pq]), EmbeddingMatrix(d[pd])) == pytest.approx(base)

    def test_duplicate_doc_row_no_change(self):
        rng = make_rng(4)
        q, d = _unit_rows(rng, 3, 4), _unit_rows(rng, 5, 4)
        dup = np.vstack([d, d[2]])
        assert maxsim(EmbeddingMatrix(q), EmbeddingMatrix(dup)) == pytest.approx(
            maxsim(EmbeddingMatrix(q), EmbeddingMatrix(d))
        )

    def test_adding_row_never_decreases(self):
        rng = make_rng(5)
        for _ in range(20):
            q, d = _unit_rows(rng, 3, 4), _unit_rows(rng, 5, 4)
            extra = np.vstack([d, _unit_rows(rng, 1, 4)])
            assert maxsim(EmbeddingMatrix(q), EmbeddingMatrix(extra)) >= maxsim(
                EmbeddingMatrix(q), EmbeddingMatrix(d)
            ) - 1e-12

    def test_upper_bound_and_exact_match_equality(self):
        rng = make_rng(6)
        q = _unit_rows(rng, 4, 8)
        d = _unit_rows(rng, 6, 8)
        assert maxsim(EmbeddingMatrix(q), EmbeddingMatrix(d)) <= 4.0 + 1e-9
        # every query row present in the doc -> equality
        full = np.vstack([d, q])
        assert maxsim(EmbeddingMatrix(q), EmbeddingMatrix(full)) == pytest.approx(4.0)


class TestMaxSimBatch:
    def test_singleton(self):
        rng = make_rng(8)
        q = EmbeddingMatrix(_unit_rows(rng, 3, 4))
        d = EmbeddingMatrix(_unit_rows(rng, 5, 4))
        assert maxsim_batch(q, [d]) == pytest.approx([maxsim(q, d)], abs=1e-6)

    def test_empty(self):
        q = EmbeddingMatrix(np.ones((1, 2)))
        assert maxsim_batch(q, []) == []

    def test_matches_loop_oracle_on_32_docs(self):
        rng = make_rng(9)
        q = EmbeddingMatrix(_unit_rows(rng, 6, 8))
        docs = [EmbeddingMatrix(_unit_rows(rng, int(rng.integers(2, 15)), 8)) for _ in range(32)]
        batch = maxsim_batch(q, docs)
        single = [maxsim(q, d) for d in docs]
        np.testing.assert_allclose(batch, single, atol=1e-6)


class TestPaddedQueryLength:
    @pytest.mark.parametrize("count,expected", [(10, 32), (30, 38), (32, 40), (57, 65)])
    def test_dynamic_table(self, count, expected):
        assert padded_query_length(count, DynamicLength()) == expected

    def test_fixed_additive(self):
        assert padded_query_length(10, FixedTokens(8)) == 18

    def test_none_identity(self):
        assert padded_query_length(17, NoAugmentation()) == 17

    def test_fixed_max(self):
        assert padded_query_length(10, FixedMaxLength(32)) == 32

    @given(st.integers(1, 500))
    @settings(max_examples=200)
    def test_dynamic_min_masks_and_multiple(self, count):
        mode = DynamicLength()
        padded = padded_query_length(count, mode)
        masks = padded - count
        assert masks >= mode.min_masks
        # length is a multiple of base whenever >= min_masks masks fit there
        if -count % mode.base >= mode.min_masks or count % mode.base == 0:
            if masks != mode.min_masks:
                assert padded % mode.base == 0


class TestAugmentQuery:
    @pytest.fixture
    def vocab(self):
        return Vocab.build(["a b c d e"])

    def test_dynamic_five_tokens(self, vocab):
        out = augment_query([5, 6, 7, 8, 9], DynamicLength(), vocab)
        assert len(out) == 32
        assert out[0] == QMARK_ID
        assert out[6:] == [MASK_ID] * 26

    def test_none_no_masks(self, vocab):
        out = augment_query([5, 6, 7, 8, 9], NoAugmentation(), vocab)
        assert out == [QMARK_ID, 5, 6, 7, 8, 9]

    def test_fixed_eight_masks(self, vocab):
        out = augment_query([5, 6, 7, 8, 9], FixedTokens(8), vocab)
        assert len(out) == 14
        assert out[-8:] == [MASK_ID] * 8

    def test_fixed_max_truncates(self, vocab):
        out = augment_query(list(range(5, 45)), FixedMaxLength(16), vocab)
        assert len(out) == 16
        assert out == [QMARK_ID] + list(range(5, 20))
