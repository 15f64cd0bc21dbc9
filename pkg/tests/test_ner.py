"""BIO tag handling, tag projection, masking examples, dictionary tagger."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, strategies as st

from entcorr.errors import (
    EmptyInputError,
    LengthMismatchError,
    OverlappingSpansError,
    SpanOutOfBoundsError,
)
from entcorr.ner import (
    MASK_TOKEN,
    SEP_TOKEN,
    EntitySpan,
    TaggedUtterance,
    align_tags_to_hypothesis,
    build_rlm_example,
    dictionary_tagger,
    extract_spans,
    repair_bio,
    tags_from_spans,
)


def random_tagged(rng: random.Random, min_len: int = 0, max_len: int = 30):
    """Random text with random disjoint spans; returns (length, spans)."""
    n = rng.randint(min_len, max_len)
    spans = []
    pos = 0
    while pos < n - 1:
        if rng.random() < 0.4:
            start = pos
            end = min(n, start + rng.randint(1, 4))
            label = rng.choice(["PER", "LOC", "ORG", None])
            spans.append(EntitySpan(start, end, label))
            pos = end + rng.randint(1, 3)
        else:
            pos += rng.randint(1, 3)
    return n, spans


class TestRepairBio:
    def test_valid_sequence_untouched(self):
        tags = ["O", "B-LOC", "I-LOC", "O", "B", "I"]
        assert repair_bio(tags) == tags

    def test_orphan_i_at_start(self):
        assert repair_bio(["I-PER", "I-PER"]) == ["B-PER", "I-PER"]

    def test_orphan_i_after_o(self):
        assert repair_bio(["O", "I-LOC"]) == ["O", "B-LOC"]

    def test_label_change_starts_new_span(self):
        assert repair_bio(["B-PER", "I-LOC"]) == ["B-PER", "B-LOC"]

    def test_untyped_continuation_of_typed_span(self):
        assert repair_bio(["B-PER", "I"]) == ["B-PER", "B"]

    def test_malformed_tag_raises(self):
        with pytest.raises(ValueError):
            repair_bio(["X-LOC"])


class TestExtractSpans:
    def test_basic_extraction_with_text(self):
        spans = extract_spans(["O", "B-LOC", "I-LOC", "I-LOC", "O"], "去峨眉山玩")
        assert spans == (EntitySpan(1, 4, "LOC", "峨眉山"),)

    def test_adjacent_b_tags_split_spans(self):
        spans = extract_spans(["B-PER", "B-PER"])
        assert [(s.start, s.end) for s in spans] == [(0, 1), (1, 2)]

    def test_span_running_to_end(self):
        spans = extract_spans(["O", "B-ORG", "I-ORG"])
        assert spans == (EntitySpan(1, 3, "ORG"),)

    def test_length_mismatch_raises(self):
        with pytest.raises(LengthMismatchError):
            extract_spans(["O", "O"], "abc")

    def test_untyped_spans(self):
        spans = extract_spans(["B", "I", "O"])
        assert spans[0].label is None

    def test_round_trip_through_tags(self):
        rng = random.Random(7)
        for _ in range(200):
            n, spans = random_tagged(rng)
            tags = tags_from_spans(n, spans)
            assert list(extract_spans(tags)) == spans


class TestTagsFromSpans:
    def test_out_of_bounds_raises(self):
        with pytest.raises(SpanOutOfBoundsError):
            tags_from_spans(3, [EntitySpan(1, 4, "LOC")])

    def test_overlap_raises(self):
        with pytest.raises(OverlappingSpansError):
            tags_from_spans(5, [EntitySpan(0, 3, "LOC"), EntitySpan(2, 4, "PER")])

    def test_unsorted_input_accepted(self):
        tags = tags_from_spans(4, [EntitySpan(2, 4, "PER"), EntitySpan(0, 2, "LOC")])
        assert tags == ["B-LOC", "I-LOC", "B-PER", "I-PER"]


class TestTaggedUtterance:
    def test_length_checked(self):
        with pytest.raises(LengthMismatchError):
            TaggedUtterance("abc", ("O", "O"))

    def test_spans_property(self):
        tagged = TaggedUtterance("去峨眉山玩", ("O", "B-LOC", "I-LOC", "I-LOC", "O"))
        assert tagged.spans[0].text == "峨眉山"


class TestTagProjection:
    def test_identity_projection_returns_tags_verbatim(self):
        tagged = TaggedUtterance("去峨眉山玩", ("O", "B-LOC", "I-LOC", "I-LOC", "O"))
        assert align_tags_to_hypothesis(tagged, tagged.text) == list(tagged.tags)

    def test_substitution_inherits_tag(self):
        tagged = TaggedUtterance("去峨眉山", ("O", "B-LOC", "I-LOC", "I-LOC"))
        assert align_tags_to_hypothesis(tagged, "去鹅没闪") == \
            ["O", "B-LOC", "I-LOC", "I-LOC"]

    def test_insertion_splits_span_and_repairs(self):
        tagged = TaggedUtterance("去峨眉山", ("O", "B-LOC", "I-LOC", "I-LOC"))
        # the inserted character gets O, stranding the rest of the span,
        # which the repair promotes to a fresh B
        assert align_tags_to_hypothesis(tagged, "去峨哦眉山") == \
            ["O", "B-LOC", "O", "B-LOC", "I-LOC"]

    def test_deletion_drops_tag(self):
        tagged = TaggedUtterance("去峨眉山玩", ("O", "B-LOC", "I-LOC", "I-LOC", "O"))
        projected = align_tags_to_hypothesis(tagged, "去眉山玩")
        assert projected == ["O", "B-LOC", "I-LOC", "O"]

    def test_empty_inputs_raise(self):
        tagged = TaggedUtterance("去", ("O",))
        with pytest.raises(EmptyInputError):
            align_tags_to_hypothesis(tagged, "")

    def test_projection_never_changes_length(self):
        rng = random.Random(13)
        pool = "我们今天去峨眉山看风景北京上海玩了的很"
        for _ in range(100):
            n = rng.randint(1, 12)
            ref = "".join(rng.choice(pool) for _ in range(n))
            spans = []
            if n >= 3:
                spans = [EntitySpan(1, 3, "LOC")]
            tagged = TaggedUtterance(ref, tuple(tags_from_spans(n, spans)))
            hyp = "".join(rng.choice(pool) for _ in range(rng.randint(1, 14)))
            assert len(align_tags_to_hypothesis(tagged, hyp)) == len(hyp)


class TestRlmExamples:
    def _tagged(self):
        return TaggedUtterance(
            "我们今天去峨眉山看风景",
            ("O", "O", "O", "O", "O", "B-LOC", "I-LOC", "I-LOC", "O", "O", "O"))

    def test_layout_text_sep_tags(self):
        example = build_rlm_example(self._tagged(), mask_fraction=0.0)
        n = 11
        assert len(example.input) == 2 * n + 1
        assert example.input[n] == SEP_TOKEN
        assert all(tok == MASK_TOKEN for tok in example.input[n + 1:])
        # with no text masking, targets are exactly the tags
        assert example.masked == tuple(range(n + 1, 2 * n + 1))
        assert example.target == self._tagged().tags

    def test_mask_count_is_floor_of_fraction(self):
        example = build_rlm_example(self._tagged(), mask_fraction=0.3, rng_seed=5)
        text_masked = [i for i in example.masked if i < 11]
        assert len(text_masked) == int(0.3 * 8)  # 8 non-entity characters

    def test_entity_positions_never_masked(self):
        for seed in range(50):
            example = build_rlm_example(self._tagged(), 0.9, rng_seed=seed)
            text_masked = {i for i in example.masked if i < 11}
            assert text_masked.isdisjoint({5, 6, 7})

    def test_targets_recover_masked_characters(self):
        tagged = self._tagged()
        example = build_rlm_example(tagged, 0.5, rng_seed=3)
        n = len(tagged.text)
        for idx, tgt in zip(example.masked, example.target):
            if idx < n:
                assert tgt == tagged.text[idx]
                assert example.input[idx] == MASK_TOKEN

    def test_deterministic_per_seed(self):
        a = build_rlm_example(self._tagged(), 0.3, rng_seed=42)
        b = build_rlm_example(self._tagged(), 0.3, rng_seed=42)
        c = build_rlm_example(self._tagged(), 0.3, rng_seed=43)
        assert a == b
        assert a != c

    def test_degenerate_inputs_allowed(self):
        empty = build_rlm_example(TaggedUtterance("", ()))
        assert empty.input == (SEP_TOKEN,)
        assert empty.masked == ()
        single = build_rlm_example(TaggedUtterance("好", ("O",)), 1.0)
        assert single.input == (MASK_TOKEN, SEP_TOKEN, MASK_TOKEN)
        assert single.target == ("好", "O")

    def test_orphan_tags_repaired_in_targets(self):
        tagged = TaggedUtterance("去峨山", ("O", "I-LOC", "I-LOC"))
        example = build_rlm_example(tagged, 0.0)
        assert example.target == ("O", "B-LOC", "I-LOC")

    @given(st.integers(0, 2**32 - 1))
    def test_masked_indices_sorted_and_unique(self, seed):
        example = build_rlm_example(self._tagged(), 0.4, rng_seed=seed)
        assert list(example.masked) == sorted(set(example.masked))


class TestDictionaryTagger:
    def test_finds_homophone_corruption(self, desk_repo):
        text = "我们今天去鹅没闪看风景"
        tags = dictionary_tagger(text, desk_repo, threshold=0.9)
        assert tags == ["O"] * 5 + ["B-LOC", "I-LOC", "I-LOC"] + ["O"] * 3

    def test_clean_reference_tagged_too(self, desk_repo):
        tags = dictionary_tagger("她考上了清华大学", desk_repo, threshold=0.9)
        assert tags == ["O"] * 4 + ["B-ORG", "I-ORG", "I-ORG", "I-ORG"]

    def test_below_threshold_all_outside(self, desk_repo):
        assert dictionary_tagger("你好吗", desk_repo, threshold=0.9) == ["O"] * 3

    def test_short_text_all_outside(self, desk_repo):
        assert dictionary_tagger("好", desk_repo) == ["O"]
        assert dictionary_tagger("", desk_repo) == []

    def test_empty_repo_all_outside(self, dictionary, desk_repo):
        empty = type(desk_repo)((), desk_repo.config)
        assert dictionary_tagger("峨眉山", empty) == ["O", "O", "O"]

    def test_threshold_validation(self, desk_repo):
        with pytest.raises(ValueError):
            dictionary_tagger("峨眉山", desk_repo, threshold=0.0)

    def test_max_len_caps_windows(self, desk_repo):
        # the 4-character span cannot be found through 2-char windows alone
        text = "她考上了青花大雪"
        with_cap = dictionary_tagger(text, desk_repo, threshold=0.9, max_len=2)
        assert with_cap == ["O"] * 8
        without = dictionary_tagger(text, desk_repo, threshold=0.9)
        assert without[4:] == ["B-ORG", "I-ORG", "I-ORG", "I-ORG"]

    def test_overlap_resolved_by_similarity_first(self, dictionary):
        from entcorr.repository import RepositoryConfig, build_repository
        r = build_repository([("峨眉山", None)], RepositoryConfig(dictionary))
        # at 0.3 both the 们上 window (sim 0.4) and the wider 我们上 window
        # (sim 1/3) qualify; higher similarity wins the overlap despite the
        # narrower width
        tags = dictionary_tagger("我们上", r, threshold=0.3)
        assert tags == ["O", "B-UNK", "I-UNK"]

    def test_conservative_at_half_threshold(self, dictionary):
        from entcorr.repository import RepositoryConfig, build_repository
        r = build_repository([("峨眉山", None)], RepositoryConfig(dictionary))
        assert dictionary_tagger("我们上", r, threshold=0.5) == ["O", "O", "O"]

    def test_unknown_character_propagates(self, desk_repo):
        from entcorr.errors import UnknownCharacterError
        with pytest.raises(UnknownCharacterError):
            dictionary_tagger("龘龘", desk_repo)

    def test_desk_corpus_finds_exactly_one_span_per_utterance(self, desk_repo):
        import json
        from conftest import bundled
        for line in bundled("desk_corpus.jsonl").read_text(
                encoding="utf-8").splitlines():
            record = json.loads(line)
            tags = dictionary_tagger(record["hypothesis"], desk_repo, 0.9)
            spans = extract_spans(tags, record["hypothesis"])
            ent = record["entities"][0]
            assert len(spans) == 1, record["id"]
            assert (spans[0].start, spans[0].end) == (ent["start"], ent["end"])
