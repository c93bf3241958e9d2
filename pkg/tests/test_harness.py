import numpy as np
import pytest

from liforge.harness import (
    ORACLE_TEACHER,
    AblationTable,
    SynthSpec,
    generate,
    run_ablation,
)
from liforge.losses import LossConfig
from liforge.optim import OptimConfig
from liforge.scoring import DynamicLength
from liforge.training import TrainConfig


SMALL = SynthSpec(seed=0, vocab_size=100, n_docs=150, n_queries=20)


def _train_config(total_steps=10, seed=0):
    return TrainConfig(
        total_steps=total_steps,
        n_way=SMALL.n_way,
        batch_size=4,
        loss=LossConfig(kind="kl"),
        optim=OptimConfig(lr=1e-3),
        aug_mode=DynamicLength(),
        checkpoint_every=1000,
        seed=seed,
    )


class TestGenerate:
    def test_shapes_and_ids(self):
        data = generate(SMALL)
        assert len(data.corpus) == SMALL.n_docs
        assert len(data.queries) == SMALL.n_queries
        assert len(data.triplets) == SMALL.n_queries
        assert data.corpus[0][0] == "d00000"
        assert data.queries[0][0] == "q00000"
        assert data.doc_centers.shape == (SMALL.n_docs, SMALL.topic_dim)

    def test_every_query_has_relevant_docs(self):
        data = generate(SMALL)
        for qid, _ in data.queries:
            assert len(data.qrels.relevant(qid)) >= 1

    def test_triplet_layout(self):
        data = generate(SMALL)
        for record in data.triplets:
            assert len(record.docs) == SMALL.n_way
            positives = set(data.qrels.relevant(record.query_id))
            assert record.docs[0].doc_id in positives
            for doc in record.docs[1:]:
                assert doc.doc_id not in positives
            for doc in record.docs:
                assert ORACLE_TEACHER in doc.teacher_scores

    def test_lengths_within_bounds(self):
        data = generate(SMALL)
        for _, text in data.corpus:
            assert SMALL.doc_len[0] <= len(text.split()) <= SMALL.doc_len[1]
        for _, text in data.queries:
            assert SMALL.query_len[0] <= len(text.split()) <= SMALL.query_len[1]

    def test_deterministic_bitwise(self):
        a = generate(SMALL)
        b = generate(SMALL)
        assert a.corpus == b.corpus
        assert a.queries == b.queries
        assert a.qrels.judgments == b.qrels.judgments
        assert a.triplets == b.triplets
        np.testing.assert_array_equal(a.doc_centers, b.doc_centers)

    def test_seed_changes_output(self):
        a = generate(SMALL)
        b = generate(SynthSpec(seed=1, vocab_size=100, n_docs=150, n_queries=20))
        assert a.corpus != b.corpus

    def test_noiseless_oracle_ranks_positives_first(self):
        # with sigma=0 the teacher is the true latent cosine, so within each
        # training record the positive doc must outrank every sampled negative
        spec = SynthSpec(seed=3, vocab_size=100, n_docs=150, n_queries=20,
                         teacher_noise_sigma=0.0)
        data = generate(spec)
        for record in data.triplets:
            scores = [doc.teacher_scores[ORACLE_TEACHER] for doc in record.docs]
            assert scores[0] == max(scores)

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValueError):
            SynthSpec(vocab_size=0)
        with pytest.raises(ValueError):
            SynthSpec(teacher_noise_sigma=-0.1)


class TestAblationTable:
    def test_tsv_round_shape(self):
        table = AblationTable(columns=("ndcg@10",), rows=(("base", (0.5,)), ("alt", (0.25,))))
        lines = table.to_tsv().strip().split("\n")
        assert lines[0] == "config\tndcg@10"
        assert lines[1] == "base\t0.500000"
        assert lines[2] == "alt\t0.250000"


class TestRunAblation:
    def test_single_row_deterministic(self):
        grid = [_train_config()]
        kwargs = dict(spec=SMALL, metrics=["ndcg@10"], enc_config=None, labels=["only"])
        a = run_ablation(grid, **kwargs)
        b = run_ablation(grid, **kwargs)
        assert a == b
        assert a.rows[0][0] == "only"
        assert 0.0 <= a.rows[0][1][0] <= 1.0

    def test_duplicate_rows_identical(self):
        grid = [_train_config(), _train_config()]
        table = run_ablation(grid, SMALL, ["ndcg@10", "mrr@10"])
        assert table.rows[0][1] == table.rows[1][1]

    def test_threaded_matches_serial(self):
        grid = [_train_config(seed=0), _train_config(seed=1), _train_config(seed=2)]
        serial = run_ablation(grid, SMALL, ["ndcg@10"], threads=1)
        threaded = run_ablation(grid, SMALL, ["ndcg@10"], threads=4)
        assert serial.to_tsv() == threaded.to_tsv()
