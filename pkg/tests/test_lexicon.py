"""Lexicon loading and segmentation, checked against a brute-force
enumeration oracle that shares no code with the DP implementation."""

import random

import pytest

from pinyingender.lexicon import (
    InvalidPinyinError,
    LexiconFormatError,
    Segmentation,
    SegmentationLimitError,
    SyllableLexicon,
    bundled_lexicon,
    canonical_segment,
    load_lexicon,
    segment_all,
)


def brute_force_segmentations(name, syllables, longest):
    """Exhaustive recursion over prefixes; the independent oracle."""
    if not name:
        return [()]
    found = []
    for end in range(1, min(longest, len(name)) + 1):
        head = name[:end]
        if head in syllables:
            for rest in brute_force_segmentations(name[end:], syllables, longest):
                found.append((head,) + rest)
    return found


class TestLoadLexicon:
    def test_basic_load(self):
        lex = load_lexicon(["jian", "guo", "yan"])
        assert len(lex) == 3
        assert lex.max_syllable_len == 4

    def test_lowercase_and_dedup(self):
        lex = load_lexicon(["jian", "JIAN"])
        assert len(lex) == 1
        assert "jian" in lex

    def test_whitespace_inside_entry_is_rejected(self):
        with pytest.raises(LexiconFormatError) as err:
            load_lexicon(["ji an"])
        assert err.value.line_number == 1

    def test_blank_lines_and_comments_skipped(self):
        lex = load_lexicon(["# header", "", "yan", "  ", "yu"])
        assert len(lex) == 2

    def test_digit_rejected_with_line_number(self):
        with pytest.raises(LexiconFormatError) as err:
            load_lexicon(["yan", "y4n"])
        assert err.value.line_number == 2

    def test_too_long_entry_rejected(self):
        with pytest.raises(LexiconFormatError):
            load_lexicon(["zhuangg"])

    def test_empty_source_rejected(self):
        with pytest.raises(ValueError):
            load_lexicon(["# nothing here", ""])

    def test_bundled_inventory(self):
        lex = bundled_lexicon()
        assert 380 <= len(lex) <= 440
        assert lex.max_syllable_len == 6
        for syllable in ("jian", "guo", "xian", "zhuang", "a", "er"):
            assert syllable in lex


class TestSegmentAll:
    def test_jianguo_full_inventory(self, lexicon):
        got = {seg.parts for seg in segment_all("jianguo", lexicon)}
        assert got == {
            ("jian", "guo"),
            ("jian", "gu", "o"),
            ("ji", "an", "guo"),
            ("ji", "an", "gu", "o"),
        }

    def test_xian_full_inventory(self, lexicon):
        got = {seg.parts for seg in segment_all("xian", lexicon)}
        assert got == {("xian",), ("xi", "an")}

    def test_unsplittable_returns_empty(self, lexicon):
        assert segment_all("qzz", lexicon) == []

    def test_invalid_inputs(self, lexicon):
        for bad in ("", "ji an", "Jian", "ji4n"):
            with pytest.raises(InvalidPinyinError):
                segment_all(bad, lexicon)

    def test_reconstruction_invariant(self, lexicon):
        for seg in segment_all("jianguo", lexicon):
            assert "".join(seg.parts) == "jianguo"
            assert all(part in lexicon for part in seg.parts)

    def test_matches_oracle_on_random_strings(self, lexicon):
        rng = random.Random(20240419)
        # bias toward letters that start syllables so hits are common
        alphabet = "aeiounghjxy"
        for _ in range(300):
            name = "".join(rng.choice(alphabet)
                           for _ in range(rng.randint(1, 12)))
            expected = set(brute_force_segmentations(
                name, lexicon.syllables, lexicon.max_syllable_len))
            got = {seg.parts for seg in segment_all(name, lexicon)}
            assert got == expected, name

    def test_monotone_in_lexicon(self):
        base = load_lexicon(["jian", "guo", "gu"])
        bigger = load_lexicon(["jian", "guo", "gu", "o", "ji", "an"])
        small = {seg.parts for seg in segment_all("jianguo", base)}
        large = {seg.parts for seg in segment_all("jianguo", bigger)}
        assert small <= large

    def test_enumeration_cap(self):
        lex = load_lexicon(["a", "aa", "aaa"])
        with pytest.raises(SegmentationLimitError):
            segment_all("a" * 40, lex)


class TestCanonicalSegment:
    def test_expected_count_pins_split(self, lexicon):
        seg = canonical_segment("jianguo", lexicon, expected_count=2)
        assert seg.parts == ("jian", "guo")

    def test_minimal_count_preferred(self, lexicon):
        assert canonical_segment("xian", lexicon).parts == ("xian",)

    def test_impossible_count_absent(self, lexicon):
        assert canonical_segment("jianguo", lexicon, expected_count=5) is None

    def test_longest_first_tie_break(self):
        lex = load_lexicon(["xi", "an", "xia", "n"])
        # both splits have two parts; (3,1) beats (2,2) lexicographically
        seg = canonical_segment("xian", lex, expected_count=2)
        assert seg.parts == ("xia", "n")

    def test_deterministic_across_runs(self, lexicon):
        first = canonical_segment("jianguo", lexicon)
        for _ in range(5):
            assert canonical_segment("jianguo", lexicon) == first

    def test_invalid_expected_count(self, lexicon):
        with pytest.raises(ValueError):
            canonical_segment("xian", lexicon, expected_count=0)


class TestSegmentationType:
    def test_empty_parts_rejected(self):
        with pytest.raises(ValueError):
            Segmentation(())

    def test_text_property(self):
        assert Segmentation(("jian", "guo")).text == "jianguo"

    def test_lexicon_invariant_checked(self):
        with pytest.raises(ValueError):
            SyllableLexicon(frozenset({"yan"}), max_syllable_len=5)
