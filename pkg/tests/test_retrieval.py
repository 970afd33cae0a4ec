import math

import numpy as np
import pytest

from _helpers import make_codebook

from reasonedit.errors import ArgumentError
from reasonedit.retrieval import (
    RetrievalConfig,
    assemble_prompt,
    rejection_threshold,
    retrieve,
)


def fixture_codebook():
    # 1-D keys at 0, 1, 3: pairwise distances {1, 2, 3}
    return make_codebook([[0.0], [1.0], [3.0]])


class TestRejectionThreshold:
    def test_nearest_rank_hand_fixture(self):
        cb = fixture_codebook()
        assert rejection_threshold(cb, 50.0) == pytest.approx(2.0)
        assert rejection_threshold(cb, 100.0) == pytest.approx(3.0)
        assert rejection_threshold(cb, 33.4) == pytest.approx(2.0)
        assert rejection_threshold(cb, 33.0) == pytest.approx(1.0)
        assert rejection_threshold(cb, 1.0) == pytest.approx(1.0)

    def test_fewer_than_two_keys_never_reject(self):
        assert rejection_threshold(make_codebook([[0.0]]), 50.0) == math.inf
        empty = make_codebook([])
        assert rejection_threshold(empty, 50.0) == math.inf

    def test_percentile_validation(self):
        cb = fixture_codebook()
        with pytest.raises(ArgumentError):
            rejection_threshold(cb, 0.0)
        with pytest.raises(ArgumentError):
            rejection_threshold(cb, 101.0)

    def test_cache_invalidated_on_mutation(self):
        from reasonedit.codebook import CodebookEntry, Provenance

        cb = fixture_codebook()
        assert rejection_threshold(cb, 50.0) == pytest.approx(2.0)
        cb.entries.append(CodebookEntry(
            key=np.array([10.0], dtype=np.float32), radius=0.0, values=["far"],
            provenance=[Provenance(edit_id="new", kind="answer")]))
        cb._invalidate()
        assert rejection_threshold(cb, 100.0) == pytest.approx(10.0)


class TestRetrieve:
    def test_query_on_key_always_retrieves(self):
        cb = fixture_codebook()
        result = retrieve(cb, np.array([1.0]), RetrievalConfig(k=2, percentile=50.0))
        assert result.retrieved
        assert result.neighbor_ids[0] == 1
        assert result.distances[0] == 0.0
        assert list(result.distances) == sorted(result.distances)

    def test_far_query_rejected(self):
        cb = fixture_codebook()
        # nearest key is 3, query 6.5: min distance 3.5 > threshold 2.0
        result = retrieve(cb, np.array([6.5]), RetrievalConfig(k=2, percentile=50.0))
        assert not result.retrieved
        assert result.sentences == ()
        assert result.neighbor_ids == ()

    def test_boundary_distance_not_rejected(self):
        cb = fixture_codebook()
        # min distance exactly equals the threshold: rule fires only on >
        result = retrieve(cb, np.array([5.0]), RetrievalConfig(k=1, percentile=50.0))
        assert result.retrieved

    def test_k_clamped_to_entry_count(self):
        cb = fixture_codebook()
        result = retrieve(cb, np.array([1.0]), RetrievalConfig(k=5, percentile=100.0))
        assert len(result.neighbor_ids) == 3

    def test_empty_codebook_not_retrieved(self):
        result = retrieve(make_codebook([]), np.array([0.0]), RetrievalConfig())
        assert not result.retrieved

    def test_dim_mismatch_rejected(self):
        cb = fixture_codebook()
        with pytest.raises(ArgumentError):
            retrieve(cb, np.array([0.0, 1.0]), RetrievalConfig())

    def test_ties_break_by_insertion_order(self):
        cb = make_codebook([[1.0], [-1.0], [1.0]])
        result = retrieve(cb, np.array([0.0]), RetrievalConfig(k=3, percentile=100.0))
        assert result.neighbor_ids == (0, 1, 2)

    def test_sentence_dedup_keeps_first_occurrence(self):
        cb = make_codebook([[0.0], [0.1], [0.2]],
                           values=["alpha.", " alpha. ", "beta."])
        result = retrieve(cb, np.array([0.0]), RetrievalConfig(k=3, percentile=100.0))
        assert result.sentences == ("alpha.", "beta.")

    def test_knn_matches_brute_force(self):
        rng = np.random.default_rng(0)
        keys = rng.standard_normal((1000, 16))
        cb = make_codebook(list(keys))
        for trial in range(10):
            query = rng.standard_normal(16)
            result = retrieve(cb, query, RetrievalConfig(k=7, percentile=100.0))
            distances = np.linalg.norm(keys.astype(np.float32).astype(np.float64) - query,
                                       axis=1)
            expected = set(np.argsort(distances, kind="stable")[:7].tolist())
            assert set(result.neighbor_ids) == expected

    def test_scale_consistency(self):
        rng = np.random.default_rng(1)
        keys = rng.standard_normal((30, 4))
        queries = [rng.standard_normal(4) * 0.5, rng.standard_normal(4) * 3.0]
        for alpha in (0.031, 1.0, 87.5):
            cb = make_codebook(list(keys))
            cb_scaled = make_codebook(list(keys * alpha))
            for query in queries:
                base = retrieve(cb, query, RetrievalConfig(k=4, percentile=50.0))
                scaled = retrieve(cb_scaled, query * alpha, RetrievalConfig(k=4, percentile=50.0))
                assert base.retrieved == scaled.retrieved
                assert base.neighbor_ids == scaled.neighbor_ids

    def test_p100_never_rejects_within_diameter(self):
        rng = np.random.default_rng(2)
        keys = rng.standard_normal((20, 3))
        cb = make_codebook(list(keys))
        cfg = RetrievalConfig(k=3, percentile=100.0)
        for i in range(20):
            # queries sitting on keys are within the diameter of the key set
            assert retrieve(cb, keys[i], cfg).retrieved


class TestAssemblePrompt:
    def test_joins_with_spaces_then_newline(self):
        assert assemble_prompt(["A.", "B."], "Q?") == "A. B.\nQ?"

    def test_empty_context_is_identity(self):
        assert assemble_prompt([], "Q?") == "Q?"

    def test_single_sentence(self):
        assert assemble_prompt(["s"], "Q?") == "s\nQ?"

    def test_question_required(self):
        with pytest.raises(ArgumentError):
            assemble_prompt(["s"], "")

    def test_template_override(self):
        out = assemble_prompt(["A.", "B."], "Q?",
                              template="Context: {context} || {question}")
        assert out == "Context: A. B. || Q?"
        # empty context bypasses the template entirely
        assert assemble_prompt([], "Q?", template="X {context} {question}") == "Q?"


def test_config_validation():
    with pytest.raises(ArgumentError):
        RetrievalConfig(k=0)
    with pytest.raises(ArgumentError):
        RetrievalConfig(percentile=0.0)
    cfg = RetrievalConfig()
    assert cfg.k == 5 and cfg.percentile == 50.0
