import numpy as np
import pytest

from liforge.core import (
    Checkpoint,
    CheckpointFormatError,
    DataError,
    MASK_ID,
    QMARK_ID,
    Qrels,
    RunList,
    TripletDoc,
    TripletRecord,
    UNK_ID,
    Vocab,
    load_checkpoint,
    make_rng,
    read_corpus,
    read_qrels,
    read_run,
    read_triplets,
    save_checkpoint,
    tokenize,
    write_corpus,
    write_qrels,
    write_run,
    write_triplets,
)


@pytest.fixture
def vocab():
    return Vocab.build(["cat sat on the mat", "dog barked"])


class TestTokenize:
    def test_empty_text(self, vocab):
        assert tokenize("", vocab) == []

    def test_repeated_token(self, vocab):
        cat = vocab.lookup("cat")
        assert tokenize("cat cat", vocab) == [cat, cat]

    def test_unknown_maps_to_unk(self, vocab):
        assert tokenize("cat zzz", vocab) == [vocab.lookup("cat"), UNK_ID]

    def test_lowercasing(self, vocab):
        assert tokenize("CAT Cat", vocab) == tokenize("cat cat", vocab)

    def test_never_emits_reserved_except_unk(self, vocab):
        ids = tokenize("[pad] [mask] [q] [d] [unk]", vocab)
        assert all(i == UNK_ID for i in ids)

    def test_deterministic(self, vocab):
        assert tokenize("the dog sat", vocab) == tokenize("the dog sat", vocab)


class TestVocab:
    def test_reserved_ids_fixed(self, vocab):
        assert vocab.id_to_token[:5] == ("[PAD]", "[MASK]", "[UNK]", "[Q]", "[D]")
        assert MASK_ID == 1 and QMARK_ID == 3

    def test_bijective_over_non_reserved(self, vocab):
        for token, idx in vocab.token_to_id.items():
            assert vocab.id_to_token[idx] == token
            assert idx >= 5


def _random_checkpoint(rng, include_special=True):
    tensors = {}
    for i in range(int(rng.integers(1, 5))):
        ndim = int(rng.integers(1, 5))
        shape = tuple(int(rng.integers(1, 5)) for _ in range(ndim))
        values = rng.standard_normal(shape).astype(np.float32)
        if include_special and values.size >= 3:
            flat = values.reshape(-1)
            flat[0] = np.float32(-0.0)
            flat[1] = np.float32(1e-42)  # subnormal
            flat[2] = np.float32(0.0)
        tensors[f"t{i}"] = values
    step = int(rng.integers(0, 10000))
    return Checkpoint(tensors=tensors, meta={"step": step, "seed": 1, "config_digest": "x"})


class TestCheckpointIO:
    def test_round_trip_100_random(self, tmp_path):
        rng = make_rng(7)
        for i in range(100):
            ckpt = _random_checkpoint(rng)
            path = tmp_path / f"c{i}.ckpt"
            save_checkpoint(ckpt, path)
            loaded = load_checkpoint(path)
            assert loaded.equals_bitwise(ckpt)
            assert loaded.meta == ckpt.meta

    def test_empty_tensor_map(self, tmp_path):
        path = tmp_path / "empty.ckpt"
        save_checkpoint(Checkpoint(tensors={}, meta={}), path)
        assert load_checkpoint(path).tensors == {}

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(CheckpointFormatError, match="magic"):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "trunc.ckpt"
        ckpt = Checkpoint(tensors={"a": np.ones((4, 4), dtype=np.float32)})
        save_checkpoint(ckpt, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(CheckpointFormatError, match="payload"):
            load_checkpoint(path)

    def test_header_length_overflow(self, tmp_path):
        path = tmp_path / "hdr.ckpt"
        path.write_bytes(b"LIFORGE1" + (2**40).to_bytes(8, "little") + b"{}")
        with pytest.raises(CheckpointFormatError, match="header"):
            load_checkpoint(path)


class TestRng:
    def test_equal_seeds_equal_streams(self):
        a = make_rng(123).random(100_000)
        b = make_rng(123).random(100_000)
        np.testing.assert_array_equal(a, b)

    def test_different_seeds_differ(self):
        assert make_rng(1).random() != make_rng(2).random()


class TestDomainTypes:
    def test_triplet_requires_two_docs(self):
        with pytest.raises(DataError):
            TripletRecord("q", "text", (TripletDoc("d1", "t", {"a": 1.0}),))

    def test_triplet_teacher_consistency(self):
        with pytest.raises(DataError, match="teacher"):
            TripletRecord("q", "text", (
                TripletDoc("d1", "t", {"a": 1.0}),
                TripletDoc("d2", "t", {"b": 1.0}),
            ))

    def test_qrels_rejects_negative_grade(self):
        with pytest.raises(DataError):
            Qrels({"q1": {"d1": -1}})

    def test_qrels_rejects_empty(self):
        with pytest.raises(DataError):
            Qrels({})

    def test_runlist_sorted_with_doc_id_ties(self):
        run = RunList.from_scores({"q": [("b", 1.0), ("a", 1.0), ("c", 2.0)]})
        assert [d for d, _ in run.rankings["q"]] == ["c", "a", "b"]

    def test_runlist_rejects_duplicates(self):
        with pytest.raises(DataError):
            RunList({"q": (("a", 2.0), ("a", 1.0))})


class TestFileFormats:
    def test_corpus_round_trip(self, tmp_path):
        docs = [("d1", "hello world"), ("d2", "unicode 日本語")]
        write_corpus(docs, tmp_path / "c.jsonl")
        assert read_corpus(tmp_path / "c.jsonl") == docs

    def test_qrels_round_trip(self, tmp_path):
        qrels = Qrels({"q1": {"d1": 2, "d2": 0}, "q2": {"d3": 1}})
        write_qrels(qrels, tmp_path / "q.txt")
        assert read_qrels(tmp_path / "q.txt").judgments == qrels.judgments

    def test_run_round_trip(self, tmp_path):
        run = RunList.from_scores({"q1": [("d1", 2.5), ("d2", 1.25)]})
        write_run(run, tmp_path / "r.txt")
        assert read_run(tmp_path / "r.txt").rankings == run.rankings

    def test_triplets_round_trip(self, tmp_path):
        record = TripletRecord("q1", "some query", (
            TripletDoc("d1", "pos text", {"t1": 0.9, "t2": 0.8}),
            TripletDoc("d2", "neg text", {"t1": 0.1, "t2": 0.3}),
        ))
        write_triplets([record], tmp_path / "t.jsonl")
        loaded = list(read_triplets(tmp_path / "t.jsonl"))
        assert loaded == [record]
