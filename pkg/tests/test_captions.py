import itertools
import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hoi_pretrain.captions import (
    HashingTextEncoder,
    HOITriplet,
    TextEncodingError,
    build_negative_bank,
    embed_texts,
    normalize_prompt,
    parse_caption,
    template_prompt,
)
from hoi_pretrain.captions.bank import NegativeBank
from hoi_pretrain.captions.io import RecordError, parse_caption_file, read_triplet_records
from hoi_pretrain.captions.lexicon import PERSON_NOUNS, VERB_FORMS
from hoi_pretrain.captions.parser import ShallowCaptionParser


def load_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# parser

def test_small_examples(fixtures_dir):
    for row in load_jsonl(os.path.join(fixtures_dir, "caption_examples.jsonl")):
        got = [list(t.key()) for t in parse_caption(row["text"], row["id"])]
        assert got == row["expected"], row["text"]


def test_generated_caption_fixture_parses_exactly(fixtures_dir):
    rows = load_jsonl(os.path.join(fixtures_dir, "captions_200.jsonl"))
    assert len(rows) == 200
    mismatches = [r["id"] for r in rows
                  if [list(t.key()) for t in parse_caption(r["text"], r["id"])] != r["expected"]]
    assert mismatches == []


def test_no_triplet_breaks_the_filter_rules(fixtures_dir):
    lemmas = set(VERB_FORMS.values())
    for r in load_jsonl(os.path.join(fixtures_dir, "captions_200.jsonl")):
        for t in parse_caption(r["text"], r["id"]):
            assert t.human in PERSON_NOUNS
            assert t.verb.split()[0] in lemmas
            assert t.source_caption_id == r["id"]


def test_specific_caption_shapes():
    assert [t.key() for t in parse_caption("a woman is riding a horse")] == [("woman", "ride", "horse")]
    assert [t.key() for t in parse_caption("the boy sat on a bench")] == [("boy", "sit on", "bench")]
    assert parse_caption("a dog chases a ball") == []
    assert parse_caption("") == []


def test_duplicate_clauses_are_reported_once():
    out = parse_caption("a man rides a horse and a man rides a horse")
    assert [t.key() for t in out] == [("man", "ride", "horse")]


def test_custom_lexicon_changes_the_person_filter():
    parser = ShallowCaptionParser(person_nouns={"dog"})
    assert [t.key() for t in parser.parse("a dog chases a ball")] == [("dog", "chase", "ball")]
    assert parser.parse("a man drives a car") == []


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(["man", "girl", "rides", "riding", "holds", "a", "the", "is", "on",
                                  "horse", "cup", "dog", "big", ",", ".", "and", "xq"]), max_size=15))
def test_parser_never_breaks_its_contract(words):
    text = " ".join(words)
    for t in parse_caption(text):
        assert t.human in PERSON_NOUNS and t.object


# ---------------------------------------------------------------------------
# prompts

def test_template_prompt_examples():
    assert template_prompt(HOITriplet("man", "ride", "horse")) == "a photo of man ride horse"
    assert template_prompt(HOITriplet("Girl", "sit  on", "Bench")) == "a photo of girl sit on bench"


@given(st.text(alphabet="aBc \t\n", max_size=30))
def test_prompt_normalization_is_idempotent(text):
    once = normalize_prompt(text)
    assert normalize_prompt(once) == once
    assert once == once.lower() and "  " not in once


# ---------------------------------------------------------------------------
# text embedder

def test_embedder_is_deterministic_and_normalized():
    prompts = ["a photo of man ride horse", "a photo of girl hold cup"]
    a = embed_texts(prompts, HashingTextEncoder(32))
    b = embed_texts(prompts, HashingTextEncoder(32))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-12)


def test_shared_words_raise_similarity():
    people = ["man", "woman", "boy", "girl", "chef"]
    verbs = ["ride", "hold", "eat", "throw"]
    objects = ["horse", "cup", "apple", "ball", "kite"]
    rng = np.random.default_rng(0)
    corpus = sorted({(people[rng.integers(5)], verbs[rng.integers(4)], objects[rng.integers(5)])
                     for _ in range(40)})[:20]
    assert len(corpus) == 20
    emb = embed_texts([f"a photo of {h} {v} {o}" for h, v, o in corpus], HashingTextEncoder(64))
    two, zero = [], []
    for i, j in itertools.combinations(range(20), 2):
        shared = sum(a == b for a, b in zip(corpus[i], corpus[j]))
        cos = float(emb[i] @ emb[j])
        (two if shared == 2 else zero if shared == 0 else []).append(cos)
    assert two and zero
    assert min(two) > max(zero)


def test_empty_prompt_list_and_failing_encoder():
    with pytest.raises(ValueError):
        embed_texts([])

    class Broken:
        dim = 4

        def encode(self, prompts):
            raise RuntimeError("offline")

    with pytest.raises(TextEncodingError, match="offline"):
        embed_texts(["a photo of man ride horse"], Broken())


# ---------------------------------------------------------------------------
# negative bank

def _bank_inputs(fixtures_dir, n=None):
    recs = read_triplet_records(os.path.join(fixtures_dir, "triplets_1000.jsonl"))[:n]
    prompts = [r["prompt"] for r in recs]
    return embed_texts(prompts), [r["triplet_id"] for r in recs], prompts


def test_fewer_triplets_than_clusters_gives_singletons(fixtures_dir):
    emb, ids, prompts = _bank_inputs(fixtures_dir, 5)
    bank = build_negative_bank(emb, 100, 10, 0, ids, prompts)
    assert bank.num_clusters == 5
    assert sorted(map(len, bank.per_cluster_samples.values())) == [1] * 5
    assert bank.negatives_for(ids[0]) == ids[1:]


def test_bank_is_reproducible_for_a_seed(fixtures_dir):
    emb, ids, prompts = _bank_inputs(fixtures_dir, 200)
    a = build_negative_bank(emb, 20, 10, 3, ids, prompts)
    b = build_negative_bank(emb, 20, 10, 3, ids, prompts)
    assert a.cluster_assignments == b.cluster_assignments
    assert a.per_cluster_samples == b.per_cluster_samples


def test_negatives_exclude_positive_and_its_prompt():
    prompts = ["a photo of man ride horse", "a photo of man ride horse", "a photo of girl eat apple",
               "a photo of chef cut bread"]
    ids = ["a", "b", "c", "d"]
    bank = build_negative_bank(embed_texts(prompts), 4, 10, 0, ids, prompts)
    assert bank.negatives_for("a") == ["c", "d"]
    with pytest.raises(KeyError):
        bank.negatives_for("zzz")


def test_bank_sampling_bounds(fixtures_dir):
    emb, ids, prompts = _bank_inputs(fixtures_dir)
    bank = build_negative_bank(emb, 100, 10, 0, ids, prompts)
    sizes = {}
    for tid, c in bank.cluster_assignments.items():
        sizes[c] = sizes.get(c, 0) + 1
    for c, picks in bank.per_cluster_samples.items():
        assert len(picks) == min(10, sizes[c])
        assert all(bank.cluster_assignments[t] == c for t in picks)
    negs = bank.negatives_for(ids[0], np.random.default_rng(1))
    assert len(negs) <= 1000 and ids[0] not in negs and len(set(negs)) == len(negs)


def test_bank_save_load_round_trip(fixtures_dir, tmp_path):
    emb, ids, prompts = _bank_inputs(fixtures_dir, 50)
    bank = build_negative_bank(emb, 8, 3, 0, ids, prompts)
    path = str(tmp_path / "bank.npz")
    bank.save(path)
    back = NegativeBank.load(path)
    np.testing.assert_array_equal(back.embeddings, bank.embeddings)
    assert back.cluster_assignments == bank.cluster_assignments
    assert back.per_cluster_samples == bank.per_cluster_samples
    assert back.prompts == bank.prompts


def test_bank_rejects_bad_inputs():
    with pytest.raises(ValueError):
        build_negative_bank(np.zeros((0, 4)))
    with pytest.raises(ValueError):
        build_negative_bank(np.eye(2), triplet_ids=["x", "x"])


# ---------------------------------------------------------------------------
# record files

def test_parse_caption_file_writes_versioned_records(fixtures_dir, tmp_path):
    dst = str(tmp_path / "out.jsonl")
    n_cap, n_trip = parse_caption_file(os.path.join(fixtures_dir, "caption_examples.jsonl"), dst)
    assert (n_cap, n_trip) == (3, 1)
    rec = read_triplet_records(dst)[0]
    assert rec["triplet_id"] == "ex0:0" and rec["caption_id"] == "ex0"
    assert rec["prompt"] == "a photo of man drive car"


def test_record_errors_carry_line_numbers(tmp_path):
    src = tmp_path / "bad.jsonl"
    src.write_text('{"id": "a", "text": "a man rides a horse"}\n{not json}\n')
    with pytest.raises(RecordError) as err:
        parse_caption_file(str(src), str(tmp_path / "o.jsonl"))
    assert err.value.line == 2
    src.write_text('{"id": "a"}\n')
    with pytest.raises(RecordError, match="text"):
        parse_caption_file(str(src), str(tmp_path / "o.jsonl"))
    trip = tmp_path / "t.jsonl"
    trip.write_text('{"v": 9, "triplet_id": "x", "prompt": "p"}\n')
    with pytest.raises(RecordError, match="version"):
        read_triplet_records(str(trip))
