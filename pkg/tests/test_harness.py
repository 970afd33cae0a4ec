import numpy as np
import pytest

from _helpers import planted_mock

from reasonedit.codebook import Codebook
from reasonedit.dual import DualConfig, DualEmbedder
from reasonedit.edits import Edit, EvalSample
from reasonedit.errors import ArgumentError, ProviderTransportError, ValidationError
from reasonedit.harness import (
    CHAIN_VERIFY_TEMPLATE,
    PredictionRecord,
    SequentialConfig,
    Trajectory,
    build_report,
    error_chain,
    jaccard,
    metric,
    prepare_locality_set,
    sequential_run,
)
from reasonedit.provider import LayerSpec, MockProvider
from reasonedit.retrieval import RetrievalConfig


def rec(sample_id, kind, predicted, reference, pre_edit=None):
    return PredictionRecord(sample_id=sample_id, kind=kind, predicted=predicted,
                            reference=reference, pre_edit_predicted=pre_edit)


class TestMetric:
    def test_reliability_fraction(self):
        records = [rec("a", "edit", "x", "x"), rec("b", "edit", "x", "x"),
                   rec("c", "edit", "y", "x")]
        assert metric(records, "edit") == pytest.approx(2 / 3)

    def test_locality_compares_pre_edit(self):
        records = [rec("a", "unrelated", "p", "r", pre_edit="p"),
                   rec("b", "unrelated", "p", "p", pre_edit="p")]
        assert metric(records, "unrelated") == 1.0
        records.append(rec("c", "unrelated", "q", "q", pre_edit="p"))
        assert metric(records, "unrelated") == pytest.approx(2 / 3)

    def test_mixed_kinds_rejected(self):
        records = [rec("a", "edit", "x", "x"), rec("b", "t_gen", "x", "x")]
        with pytest.raises(ArgumentError):
            metric(records, "edit")

    def test_empty_input_absent(self):
        assert metric([], "edit") is None

    def test_unrelated_requires_pre_edit(self):
        with pytest.raises(ValidationError):
            metric([rec("a", "unrelated", "x", "x")], "unrelated")

    def test_normalization_hook_off_by_default(self):
        records = [rec("a", "edit", "X ", "x")]
        assert metric(records, "edit") == 0.0
        assert metric(records, "edit",
                      normalize=lambda s: s.strip().lower()) == 1.0


class TestBuildReport:
    def test_hand_fixture(self):
        records = (
            [rec(f"r{i}", "edit", "ok" if i < 3 else "no", "ok") for i in range(4)]
            + [rec(f"u{i}", "unrelated", "keep", "keep", pre_edit="keep") for i in range(4)]
            + [rec(f"t{i}", "t_gen", "ok" if i < 2 else "no", "ok") for i in range(4)]
            + [rec(f"i{i}", "i_gen", "ok" if i < 1 else "no", "ok") for i in range(4)]
            + [rec(f"g{i}", "r_gen", "ok", "ok") for i in range(4)]
            + [rec(f"c{i}", "coe_gen", "no", "ok") for i in range(4)]
        )
        report = build_report(records)
        assert report.values == {
            "reliability": 0.75, "locality": 1.0, "t_gen": 0.5,
            "i_gen": 0.25, "r_gen": 1.0, "coe_gen": 0.0,
        }
        assert all(count == 4 for count in report.counts.values())

    def test_missing_kind_marked_absent(self):
        report = build_report([rec("a", "edit", "x", "x")])
        assert report.values["reliability"] == 1.0
        assert report.values["t_gen"] is None
        assert report.counts["t_gen"] == 0


class TestErrorChain:
    def edit(self, n):
        return Edit(edit_id="e", image_ref="img", question="q?", answer="a",
                    reasoning=tuple(f"s{i}" for i in range(n)))

    def test_subset_count(self):
        mock = MockProvider(seed=0, yesno_default_p=0.9)
        chain = error_chain(self.edit(3), mock)
        assert chain.subset_count_checked == 7
        assert chain.sentences == ()

    def test_union_of_failing_subsets(self):
        mock = MockProvider(seed=0, yesno_default_p=0.9)
        mock.plant_yesno(0.1, statement="s1")
        mock.plant_yesno(0.1, statement="s1 s2")
        chain = error_chain(self.edit(3), mock)
        assert chain.sentences == ("s1", "s2")

    def test_chain_preserves_reasoning_order(self):
        mock = MockProvider(seed=0, yesno_default_p=0.9)
        mock.plant_yesno(0.1, statement="s2")
        mock.plant_yesno(0.1, statement="s0")
        chain = error_chain(self.edit(3), mock)
        assert chain.sentences == ("s0", "s2")

    def test_empty_reasoning_empty_chain(self):
        mock = MockProvider(seed=0)
        chain = error_chain(self.edit(0), mock)
        assert chain.sentences == () and chain.subset_count_checked == 0

    def test_size_guard(self):
        mock = MockProvider(seed=0)
        with pytest.raises(ArgumentError):
            error_chain(self.edit(17), mock)

    def test_brute_force_equivalence(self):
        # independent enumeration over designated failing subsets
        rng = np.random.default_rng(0)
        for n in (1, 2, 3, 4):
            statements = [f"s{i}" for i in range(n)]
            subsets = []
            for mask in range(1, 1 << n):
                subsets.append(tuple(i for i in range(n) if mask >> i & 1))
            failing = [s for s in subsets if rng.random() < 0.3]
            mock = MockProvider(seed=0, yesno_default_p=0.9)
            expected_union = set()
            for subset in failing:
                mock.plant_yesno(0.05, statement=" ".join(statements[i] for i in subset))
                expected_union.update(subset)
            chain = error_chain(self.edit(n), mock)
            assert chain.subset_count_checked == 2**n - 1
            assert chain.sentences == tuple(statements[i] for i in sorted(expected_union))

    def test_template_fixed(self):
        assert CHAIN_VERIFY_TEMPLATE == (
            "Given the image, is the following statement correct? Statement:'{statement}'"
        )


def seq_setup(seed=0):
    mock = planted_mock(seed=seed, aug_frac=0.02, scale_overrides={"far::": 5.0})
    config = DualConfig(layer=LayerSpec("vision", 0, "mean"), text_weight=1.0,
                        vision_dim=32, text_dim=16, manifest_hash=mock.manifest().hash())
    return mock, config, DualEmbedder(mock, config)


def stream(count):
    return [Edit(edit_id=f"e{i}", image_ref=f"img-{i}", question=f"question {i}?",
                 answer=f"answer-{i}") for i in range(count)]


class TestSequentialRun:
    def test_checkpoint_schedule(self):
        mock, config, embedder = seq_setup()
        trajectory = sequential_run(stream(40), [], Codebook(config), embedder,
                                    SequentialConfig(eval_every=20, batch=5, seed=0))
        assert [cp.step for cp in trajectory.checkpoints] == [20, 40]
        assert trajectory.completed_edits == 40
        assert trajectory.error is None
        for cp in trajectory.checkpoints:
            assert cp.kb_per_edit > 0
            assert cp.metrics["reliability"] == 1.0

    def test_batch_clamped_to_accumulated(self):
        mock, config, embedder = seq_setup()
        trajectory = sequential_run(stream(4), [], Codebook(config), embedder,
                                    SequentialConfig(eval_every=2, batch=50, seed=0))
        assert trajectory.checkpoints[0].counts["reliability"] == 2
        assert trajectory.checkpoints[1].counts["reliability"] == 4

    def test_deterministic_given_seed(self):
        mock, config, embedder = seq_setup()
        runs = []
        for _ in range(2):
            mock2, config2, embedder2 = seq_setup()
            t = sequential_run(stream(20), [], Codebook(config2), embedder2,
                               SequentialConfig(eval_every=10, batch=5, seed=3))
            runs.append([(cp.step, cp.metrics, cp.counts, cp.kb_per_edit)
                         for cp in t.checkpoints])
        assert runs[0] == runs[1]

    def test_eval_pool_and_locality(self):
        mock, config, embedder = seq_setup()
        edits = stream(10)
        pool = [EvalSample(sample_id=f"t::{e.edit_id}", kind="t_gen",
                           image_ref=e.image_ref, question=e.question + " rephrased?",
                           reference_answer=e.answer, parent_edit_id=e.edit_id)
                for e in edits]
        pool += [EvalSample(sample_id=f"u{i}", kind="unrelated",
                            image_ref=f"far::img-{i}", question=f"far::other {i}?",
                            reference_answer=f"orig-{i}") for i in range(10)]
        trajectory = sequential_run(edits, pool, Codebook(config), embedder,
                                    SequentialConfig(eval_every=10, batch=5, seed=0))
        (cp,) = trajectory.checkpoints
        assert cp.counts["t_gen"] == 5
        assert cp.counts["locality"] == 5
        assert cp.metrics["locality"] == 1.0

    def test_provider_failure_truncates(self):
        mock, config, embedder = seq_setup()

        class Flaky(type(mock)):
            calls = 0

            def embed_pair(self, *args, **kwargs):
                Flaky.calls += 1
                if Flaky.calls > 30:
                    raise ProviderTransportError("lost connection")
                return super().embed_pair(*args, **kwargs)

        flaky = Flaky(seed=0)
        embedder2 = DualEmbedder(flaky, DualConfig(
            layer=config.layer, text_weight=1.0, vision_dim=32, text_dim=16,
            manifest_hash=config.manifest_hash))
        cb = Codebook(embedder2.config)
        trajectory = sequential_run(stream(50), [], cb, embedder2,
                                    SequentialConfig(eval_every=10, batch=2, seed=0))
        assert trajectory.error is not None
        assert trajectory.completed_edits < 50
        assert cb.edit_count == trajectory.completed_edits

    def test_empty_stream_rejected(self):
        mock, config, embedder = seq_setup()
        with pytest.raises(ArgumentError):
            sequential_run([], [], Codebook(config), embedder)


class TestLocalityPrep:
    def corpus(self, size):
        return [EvalSample(sample_id=f"c{i}", kind="unrelated",
                           image_ref=f"img-{i}", question=f"what color is object {i}?",
                           reference_answer=f"a{i}")
                for i in range(size)]

    def test_top_overlap_selected(self):
        corpus = self.corpus(30)
        edits = [Edit(edit_id="e", image_ref="i",
                      question="what color is object 7?", answer="x")]
        out = prepare_locality_set(corpus, edits, seed=0, random_count=5, similar_count=3)
        ids = {s.sample_id for s in out}
        assert "c7" in ids  # exact question match always wins its edit's top-3
        assert all(s.kind == "unrelated" for s in out)
        assert len(out) <= 8

    def test_counts_and_dedup(self):
        corpus = self.corpus(300)
        edits = [Edit(edit_id=f"e{i}", image_ref="i",
                      question=f"what color is object {i}?", answer="x")
                 for i in range(50)]
        out = prepare_locality_set(corpus, edits, seed=1)
        ids = [s.sample_id for s in out]
        assert len(ids) == len(set(ids))
        assert len(out) <= 200

    def test_deterministic(self):
        corpus = self.corpus(40)
        edits = [Edit(edit_id="e", image_ref="i", question="what color?", answer="x")]
        a = prepare_locality_set(corpus, edits, seed=5)
        b = prepare_locality_set(corpus, edits, seed=5)
        assert a == b

    def test_empty_corpus_rejected(self):
        with pytest.raises(ArgumentError):
            prepare_locality_set([], [], seed=0)


def test_jaccard():
    assert jaccard("a b c", "a b c") == 1.0
    assert jaccard("a b", "b c") == pytest.approx(1 / 3)
    assert jaccard("", "") == 1.0
    assert jaccard("a", "") == 0.0
