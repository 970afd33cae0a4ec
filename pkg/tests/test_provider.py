import io
import math

import numpy as np
import pytest

from reasonedit.binio import read_embedding_dump, write_embedding_dump
from reasonedit.edits import BBox
from reasonedit.errors import (
    ArgumentError,
    ProviderNotFoundError,
    ProviderUnsupportedError,
    SnapshotFormatError,
)
from reasonedit.provider import (
    CachingProvider,
    EmbeddingVector,
    FileProvider,
    LayerSpec,
    MockLayerProfile,
    MockProvider,
    YesNoScore,
    pair_record_id,
    text_record_id,
)

VISION0 = LayerSpec("vision", 0, "mean")


def test_embed_pair_deterministic(mock_provider):
    a = mock_provider.embed_pair("img", None, "text", VISION0)
    b = mock_provider.embed_pair("img", None, "text", VISION0)
    assert np.array_equal(a.values, b.values)
    assert a.dim == mock_provider.manifest().layer_dims["vision"][0]


def test_embed_pair_dim_matches_manifest():
    mock = MockProvider(seed=1, layer_dim=48, sentence_dim=24)
    vec = mock.embed_pair("img", None, "text", VISION0)
    assert vec.dim == 48
    assert mock.embed_text("text").dim == 24


def test_unknown_layer_index_rejected(mock_provider):
    with pytest.raises(ArgumentError):
        mock_provider.embed_pair("img", None, "t", LayerSpec("vision", 99, "mean"))
    with pytest.raises(ArgumentError):
        mock_provider.embed_pair("img", None, "t", LayerSpec("zzz", 0, "mean"))


def test_pooling_and_layer_change_geometry(mock_provider):
    base = mock_provider.embed_pair("img", None, "t", VISION0)
    other_layer = mock_provider.embed_pair("img", None, "t", LayerSpec("vision", 1, "mean"))
    other_pool = mock_provider.embed_pair("img", None, "t", LayerSpec("vision", 0, "last_token"))
    assert not np.array_equal(base.values, other_layer.values)
    assert not np.array_equal(base.values, other_pool.values)


def test_embed_text_deterministic_and_rejects_empty(mock_provider):
    a = mock_provider.embed_text("hello world")
    b = mock_provider.embed_text("hello world")
    assert np.array_equal(a.values, b.values)
    with pytest.raises(ArgumentError):
        mock_provider.embed_text("")


def test_distinct_texts_distinct_vectors(mock_provider):
    # seeded hash map: 1000 random distinct pairs, zero collisions expected
    rng = np.random.default_rng(42)
    for _ in range(1000):
        i, j = rng.integers(0, 10**9, size=2)
        if i == j:
            continue
        a = mock_provider.embed_text(f"text-{i}")
        b = mock_provider.embed_text(f"text-{j}")
        assert not np.array_equal(a.values, b.values)


def test_embedding_vectors_finite():
    with pytest.raises(ArgumentError):
        EmbeddingVector.create(np.array([1.0, np.nan]), VISION0)
    with pytest.raises(ArgumentError):
        EmbeddingVector.create(np.array([np.inf, 0.0]), VISION0)


def test_bbox_changes_embedding(mock_provider):
    full = mock_provider.embed_pair("img", None, "t", VISION0)
    patch = mock_provider.embed_pair("img", BBox(0, 0, 10, 10), "t", VISION0)
    assert not np.array_equal(full.values, patch.values)
    with pytest.raises(Exception):
        mock_provider.embed_pair("img", BBox(0, 0, 0, 10), "t", VISION0)


def test_augment_count_and_determinism(mock_provider):
    variants = mock_provider.augment("img", "some text", 4)
    assert len(variants) == 4
    assert variants == mock_provider.augment("img", "some text", 4)
    assert len(set(variants)) == 4
    with pytest.raises(ArgumentError):
        mock_provider.augment("img", "some text", 0)


def test_augmented_embedding_within_noise_radius():
    scale_i, scale_t, frac = 2.0, 0.5, 0.1
    mock = MockProvider(seed=3, profile=MockLayerProfile(scale_i, scale_t, frac))
    anchor = mock.embed_pair("img", None, "txt", VISION0).values.astype(np.float64)
    expected = frac * math.sqrt(scale_i**2 + scale_t**2)
    for ref, text in mock.augment("img", "txt", 4):
        variant = mock.embed_pair(ref, None, text, VISION0).values.astype(np.float64)
        distance = float(np.linalg.norm(variant - anchor))
        assert distance == pytest.approx(expected, rel=1e-5)
        assert distance <= expected * 1.01


def test_scale_overrides_apply_by_prefix():
    mock = MockProvider(seed=0, scale_overrides={"far::": 5.0})
    near = mock.embed_pair("img-x", None, "t", VISION0).values
    far = mock.embed_pair("far::img-x", None, "t", VISION0).values
    # image half of the vector is 5x larger in magnitude
    half = near.size // 2
    assert np.linalg.norm(far[:half]) == pytest.approx(5 * np.linalg.norm(near[:half]), rel=1e-5)


def test_yesno_symmetric_and_planted(mock_provider):
    neutral = MockProvider(seed=0, yesno_default_p=0.5)
    score = neutral.yesno("img", None, "statement", "template {statement}")
    assert score.nll_yes == pytest.approx(score.nll_no)

    planted = MockProvider(seed=0)
    planted.plant_yesno(0.9, image_ref="img", statement="the sky is blue")
    score = planted.yesno("img", None, "the sky is blue", "t")
    assert score.nll_yes < score.nll_no
    planted.plant_yesno(0.1, statement="the sky is green")
    score = planted.yesno("other", None, "the sky is green", "t")
    assert score.nll_yes > score.nll_no


def test_yesno_score_rejects_double_infinity():
    with pytest.raises(ArgumentError):
        YesNoScore(nll_yes=math.inf, nll_no=math.inf)
    YesNoScore(nll_yes=math.inf, nll_no=0.5)


def test_loglik_deterministic_and_validates_bbox(mock_provider):
    box = BBox(0, 0, 10, 10)
    a = mock_provider.loglik("img", box, "sentence")
    assert a == mock_provider.loglik("img", box, "sentence")
    assert math.isfinite(a)
    with pytest.raises(Exception):
        mock_provider.loglik("img", BBox(0, 0, 0, 0), "sentence")


def test_embedding_dump_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    records = {f"id-{i}": rng.standard_normal(8).astype(np.float32) for i in range(5)}
    buf = io.BytesIO()
    write_embedding_dump(buf, 8, records.items())
    dim, loaded = read_embedding_dump(buf.getvalue())
    assert dim == 8
    assert set(loaded) == set(records)
    for key in records:
        assert np.array_equal(loaded[key], records[key])


def test_embedding_dump_truncation_detected():
    buf = io.BytesIO()
    write_embedding_dump(buf, 4, [("a", np.zeros(4, np.float32))])
    data = buf.getvalue()
    with pytest.raises(SnapshotFormatError):
        read_embedding_dump(data[:-3])
    with pytest.raises(SnapshotFormatError):
        read_embedding_dump(b"XXXX" + data[4:])


def test_file_provider_serves_dumped_embeddings(tmp_path, mock_provider):
    pair_vec = mock_provider.embed_pair("img", None, "question", VISION0)
    text_vec = mock_provider.embed_text("question")
    pair_path = tmp_path / "pairs.bin"
    text_path = tmp_path / "texts.bin"
    with open(pair_path, "wb") as fh:
        write_embedding_dump(fh, pair_vec.dim,
                             [(pair_record_id("img", None, "question", VISION0), pair_vec.values)])
    with open(text_path, "wb") as fh:
        write_embedding_dump(fh, text_vec.dim,
                             [(text_record_id("question"), text_vec.values)])
    provider = FileProvider([pair_path, text_path])
    assert np.array_equal(provider.embed_pair("img", None, "question", VISION0).values,
                          pair_vec.values)
    assert np.array_equal(provider.embed_text("question").values, text_vec.values)
    with pytest.raises(ProviderNotFoundError):
        provider.embed_pair("missing", None, "question", VISION0)
    with pytest.raises(ProviderUnsupportedError):
        provider.augment("img", "question", 2)


class CountingProvider(MockProvider):
    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        self.calls = 0

    def embed_pair(self, *args, **kwargs):
        self.calls += 1
        return super().embed_pair(*args, **kwargs)


def test_cache_hits_skip_inner_provider(tmp_path):
    inner = CountingProvider(seed=0)
    cached = CachingProvider(inner, tmp_path / "cache")
    first = cached.embed_pair("img", None, "t", VISION0)
    second = cached.embed_pair("img", None, "t", VISION0)
    assert inner.calls == 1
    assert np.array_equal(first.values, second.values)

    # a fresh wrapper reuses the on-disk entries
    inner2 = CountingProvider(seed=0)
    cached2 = CachingProvider(inner2, tmp_path / "cache")
    third = cached2.embed_pair("img", None, "t", VISION0)
    assert inner2.calls == 0
    assert np.array_equal(first.values, third.values)


def test_cache_preserves_yesno_loglik_augment(tmp_path, mock_provider):
    cached = CachingProvider(MockProvider(seed=0), tmp_path / "cache")
    raw = MockProvider(seed=0)
    box = BBox(0, 0, 4, 4)
    assert cached.yesno("i", box, "s", "t") == raw.yesno("i", box, "s", "t")
    assert cached.yesno("i", box, "s", "t") == raw.yesno("i", box, "s", "t")
    assert cached.loglik("i", box, "s") == raw.loglik("i", box, "s")
    assert cached.augment("i", "s", 3) == raw.augment("i", "s", 3)


def test_mock_bit_identical_across_instances():
    a = MockProvider(seed=123)
    b = MockProvider(seed=123)
    for _ in range(3):
        assert np.array_equal(a.embed_pair("x", None, "y", VISION0).values,
                              b.embed_pair("x", None, "y", VISION0).values)
    assert a.manifest().hash() == b.manifest().hash()
    assert MockProvider(seed=124).manifest().hash() != a.manifest().hash()
