import json

import pytest

from corpusmetrics.datagen import (
    DOMAINS,
    FeatureBank,
    GenRecord,
    VocabBank,
    bundled_feature_bank,
    bundled_vocab_bank,
    extract_prompts,
    generate_dataset,
    load_template,
    read_corpus_jsonl,
    render_story_prompt,
    sample_spec,
    split_corpus,
    write_corpus_jsonl,
)
from corpusmetrics.judge import JudgeConfig, ScriptedTransport

CFG = JudgeConfig(backoff_base=0.0)
VOCAB = VocabBank("jr", ("dog", "ball", "sun", "tree", "lake", "frog"))
FEATS = FeatureBank(("a plot twist at the end", "a dialogue between characters", "a moral lesson"))


class EchoTransport:
    """Returns the user prompt itself; lets tests assert on prompt content."""

    def complete(self, system_text, user_text):
        return user_text


class TestBanks:
    def test_bundled_banks_load(self):
        for domain in DOMAINS:
            bank = bundled_vocab_bank(domain)
            assert len(bank.words) >= 100
        assert len(bundled_feature_bank().features) >= 20

    def test_jr_and_gre_banks_differ(self):
        assert bundled_vocab_bank("jr").words != bundled_vocab_bank("gre").words
        assert bundled_vocab_bank("gre").words == bundled_vocab_bank("news").words

    def test_duplicate_words_rejected(self):
        with pytest.raises(ValueError):
            VocabBank("jr", ("Dog", "dog"))

    def test_empty_banks_rejected(self):
        with pytest.raises(ValueError):
            VocabBank("jr", ())
        with pytest.raises(ValueError):
            FeatureBank(())


class TestSampleSpec:
    def test_exactly_three_words_without_replacement(self):
        words, feats = sample_spec(VOCAB, FEATS, 2, seed=0)
        assert len(words) == 3
        assert len(set(words)) == 3
        assert len(feats) == 2
        assert len(set(feats)) == 2

    def test_vocab_of_exactly_three(self):
        bank = VocabBank("jr", ("a", "b", "c"))
        words, _ = sample_spec(bank, FEATS, 1, seed=5)
        assert sorted(words) == ["a", "b", "c"]

    def test_zero_features_is_error(self):
        with pytest.raises(ValueError):
            sample_spec(VOCAB, FEATS, 0, seed=0)

    def test_banks_too_small(self):
        with pytest.raises(ValueError):
            sample_spec(VocabBank("jr", ("a", "b")), FEATS, 1, seed=0)
        with pytest.raises(ValueError):
            sample_spec(VOCAB, FEATS, 4, seed=0)

    def test_fixed_seed_reproducible(self):
        assert sample_spec(VOCAB, FEATS, 2, seed=9) == sample_spec(VOCAB, FEATS, 2, seed=9)

    def test_distinct_seeds_vary(self):
        draws = {tuple(sample_spec(VOCAB, FEATS, 2, seed=s)[0]) for s in range(20)}
        assert len(draws) > 1


class TestRenderStoryPrompt:
    def test_jr_word_substitution(self):
        system, user = render_story_prompt(load_template("jr"), ["dog", "ball", "sun"], ["a moral lesson"])
        assert "The story should use the words: dog, ball, and sun." in user
        assert "simple words that a 5 year old child would understand" in user
        assert "celebrated children's author" in system

    def test_gre_system_text(self):
        system, _ = render_story_prompt(load_template("gre"), ["a", "b", "c"], ["f"])
        assert "expected of a college graduate" in system

    def test_features_joined_with_comma_space(self):
        _, user = render_story_prompt(
            load_template("gre"), ["a", "b", "c"], ["first feature", "second feature"]
        )
        assert "The story has the following features: first feature, second feature" in user

    def test_no_slots_left_after_render(self):
        for domain in DOMAINS:
            _, user = render_story_prompt(load_template(domain), ["x", "y", "z"], ["f1", "f2"])
            assert "<WORD-" not in user
            assert "<FEAT-" not in user

    def test_wrong_word_count_is_error(self):
        with pytest.raises(ValueError):
            render_story_prompt(load_template("jr"), ["a", "b"], ["f"])
        with pytest.raises(ValueError):
            render_story_prompt(load_template("jr"), ["a", "b", "c", "d"], ["f"])

    def test_no_features_is_error(self):
        with pytest.raises(ValueError):
            render_story_prompt(load_template("jr"), ["a", "b", "c"], [])

    def test_domain_specific_user_text(self):
        _, history = render_story_prompt(load_template("history"), ["a", "b", "c"], ["f"])
        assert "short historical article (3-5 paragraphs)" in history
        _, sports = render_story_prompt(load_template("sports"), ["a", "b", "c"], ["f"])
        assert "short sports article (3-5 paragraphs)" in sports
        _, news = render_story_prompt(load_template("news"), ["a", "b", "c"], ["f"])
        assert "concise news article (3-5 paragraphs)" in news

    def test_unknown_domain_is_error(self):
        with pytest.raises(ValueError):
            load_template("poetry")


class TestGenerateDataset:
    def test_echo_corpus_contains_sampled_words(self):
        records = generate_dataset(
            "jr", 5, CFG, seed=3, vocab=VOCAB, feats=FEATS, transport=EchoTransport()
        )
        assert len(records) == 5
        for rec in records:
            assert len(rec.words) == 3
            for word in rec.words:
                assert word in rec.text
            for feature in rec.features:
                assert feature in rec.text

    def test_ids_unique_and_stable(self):
        a = generate_dataset("jr", 4, CFG, seed=1, vocab=VOCAB, feats=FEATS, transport=EchoTransport())
        b = generate_dataset("jr", 4, CFG, seed=1, vocab=VOCAB, feats=FEATS, transport=EchoTransport())
        assert [r.id for r in a] == [r.id for r in b]
        assert len({r.id for r in a}) == 4
        assert [r.words for r in a] == [r.words for r in b]

    def test_token_budget_stops_after_first_meeting_record(self):
        # every echoed story is dozens of tokens; budget 1 stops after one
        records = generate_dataset(
            "jr", 10, CFG, seed=0, token_budget=1, vocab=VOCAB, feats=FEATS,
            transport=EchoTransport(),
        )
        assert len(records) == 1

    def test_count_zero_warns_and_returns_empty(self, caplog):
        with caplog.at_level("WARNING"):
            records = generate_dataset(
                "jr", 0, CFG, seed=0, vocab=VOCAB, feats=FEATS, transport=EchoTransport()
            )
        assert records == []

    def test_all_failures_is_error(self):
        transport = ScriptedTransport(["HTTP 503"])
        with pytest.raises(RuntimeError):
            generate_dataset("jr", 3, CFG, seed=0, vocab=VOCAB, feats=FEATS, transport=transport)

    def test_failed_requests_skipped(self):
        replies = ["HTTP 500", "A story about things.", "Another story."]
        transport = ScriptedTransport(replies)
        cfg = JudgeConfig(backoff_base=0.0, max_in_flight=1)
        records = generate_dataset(
            "jr", 3, cfg, seed=0, vocab=VOCAB, feats=FEATS, transport=transport
        )
        assert len(records) == 2


class TestSplitCorpus:
    def _records(self, n):
        return [GenRecord(f"r{i}", "jr", ("a", "b", "c"), ("f",), f"text {i}") for i in range(n)]

    def test_ten_records_fraction_point_two(self):
        labeled = split_corpus(self._records(10), 0.2, seed=0)
        assert sum(r.split == "test" for r in labeled) == 2
        assert sum(r.split == "train" for r in labeled) == 8

    def test_two_records_fraction_half(self):
        labeled = split_corpus(self._records(2), 0.5, seed=0)
        assert sorted(r.split for r in labeled) == ["test", "train"]

    def test_every_record_labeled_exactly_once(self):
        records = self._records(17)
        labeled = split_corpus(records, 0.25, seed=4)
        assert len(labeled) == len(records)
        assert {r.id for r in labeled} == {r.id for r in records}
        assert all(r.split in ("train", "test") for r in labeled)

    def test_deterministic(self):
        records = self._records(30)
        a = split_corpus(records, 0.1, seed=8)
        b = split_corpus(records, 0.1, seed=8)
        assert [(r.id, r.split) for r in a] == [(r.id, r.split) for r in b]

    def test_both_splits_nonempty_even_for_tiny_fractions(self):
        labeled = split_corpus(self._records(5), 0.01, seed=0)
        assert sum(r.split == "test" for r in labeled) == 1

    def test_bad_fraction_is_error(self):
        for fraction in (0.0, 1.0, -0.5, 2.0):
            with pytest.raises(ValueError):
                split_corpus(self._records(10), fraction, seed=0)

    def test_too_small_corpus_is_error(self):
        with pytest.raises(ValueError):
            split_corpus(self._records(1), 0.5, seed=0)


class TestExtractPrompts:
    def _records(self, lengths):
        return [
            GenRecord(f"r{i}", "jr", ("a", "b", "c"), ("f",), " ".join(f"t{j}" for j in range(k)))
            for i, k in enumerate(lengths)
        ]

    def test_prefixes_have_requested_length(self):
        prompts = extract_prompts(self._records([60, 80]), prefix_tokens=50, seed=0, count=2)
        assert len(prompts) == 2
        for p in prompts:
            assert len(p["prompt"].split()) == 50

    def test_short_documents_skipped(self, caplog):
        with caplog.at_level("WARNING"):
            prompts = extract_prompts(self._records([10, 60]), prefix_tokens=50, seed=0, count=5)
        assert len(prompts) == 1

    def test_no_eligible_documents_is_error(self):
        with pytest.raises(ValueError):
            extract_prompts(self._records([5, 8]), prefix_tokens=50, seed=0, count=1)

    def test_count_larger_than_corpus_returns_all(self, caplog):
        with caplog.at_level("WARNING"):
            prompts = extract_prompts(self._records([60, 70, 80]), 50, seed=0, count=99)
        assert len(prompts) == 3

    def test_seeded_sample_deterministic(self):
        records = self._records([60] * 20)
        a = extract_prompts(records, 50, seed=6, count=5)
        b = extract_prompts(records, 50, seed=6, count=5)
        assert a == b

    def test_prefix_is_document_prefix(self):
        records = self._records([55])
        prompts = extract_prompts(records, 50, seed=0, count=1)
        assert records[0].text.startswith(prompts[0]["prompt"])


class TestCorpusIo:
    def test_round_trip(self, tmp_path):
        records = [
            GenRecord("r1", "jr", ("a", "b", "c"), ("f1", "f2"), "A story.", "train"),
            GenRecord("r2", "gre", ("x", "y", "z"), ("f3",), "Another story.", "test"),
        ]
        path = tmp_path / "corpus.jsonl"
        write_corpus_jsonl(records, path)
        assert read_corpus_jsonl(path) == records

    def test_jsonl_shape(self, tmp_path):
        records = [GenRecord("r1", "jr", ("a", "b", "c"), ("f",), "text")]
        path = tmp_path / "corpus.jsonl"
        write_corpus_jsonl(records, path)
        raw = path.read_bytes()
        assert raw.endswith(b"\n")
        assert b"\r" not in raw
        obj = json.loads(raw.decode())
        assert list(obj) == ["id", "domain", "words", "features", "text", "split"]

    def test_duplicate_ids_rejected(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        line = json.dumps({"id": "same", "text": "t"})
        path.write_text(line + "\n" + line + "\n")
        with pytest.raises(ValueError):
            read_corpus_jsonl(path)

    def test_empty_corpus_rejected(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text("")
        with pytest.raises(ValueError):
            read_corpus_jsonl(path)
