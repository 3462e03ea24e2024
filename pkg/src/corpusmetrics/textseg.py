"""Deterministic tokenization, sentence segmentation, and syllable estimation.

Every readability formula downstream consumes the surface counts produced
here, so the rules are fixed and explicit rather than delegated to an
external package: words are maximal runs of letters/apostrophes, numbers are
maximal digit runs, sentences end at ./!/? with a small abbreviation guard,
and syllables are vowel groups with a silent-e adjustment.  All functions
are pure; identical input bytes yield identical output on every run.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .wordlists import WordList

# Maximal letter/apostrophe runs first (so "don't" stays one token), then
# digit runs, then any single non-space character.
_TOKEN_RE = re.compile(r"(?:[^\W\d_]|')+|\d+|\S", re.UNICODE)
_LETTER_RE = re.compile(r"[^\W\d_]", re.UNICODE)

_VOWELS = frozenset("aeiouy")
_TERMINATOR_CHARS = frozenset(".!?")
_ABBREVIATIONS = frozenset({"mr", "mrs", "dr", "st", "vs", "etc"})


@dataclass(frozen=True)
class Token:
    """One surface token with half-open offsets into the source string."""

    text: str
    kind: str  # "word" | "number" | "punctuation"
    start: int
    end: int


@dataclass(frozen=True)
class SentenceSpan:
    """Half-open character span plus half-open token-index range."""

    start: int
    end: int
    token_start: int
    token_end: int


@dataclass(frozen=True)
class TextCounts:
    """Surface counts for one document.

    ``characters`` counts letters and digits only.  ``complex_words`` follows
    the Gunning definition: three or more syllables, excluding capitalized
    words that are not sentence-initial (a cheap proper-noun approximation);
    hyphenated compounds are already split into their parts by tokenization.
    """

    words: int
    sentences: int
    characters: int
    syllables: int
    words_le2_syllables: int
    words_ge3_syllables: int
    complex_words: int
    difficult_dale_chall: int
    difficult_spache: int


def tokenize(text: str) -> list[Token]:
    """Split text into word / number / punctuation tokens.

    Words are maximal runs of letters and apostrophes containing at least
    one letter; hyphens separate tokens, so compounds count as their parts.
    """
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        lexeme = m.group()
        if lexeme.isdigit():
            kind = "number"
        elif _LETTER_RE.search(lexeme):
            kind = "word"
        else:
            kind = "punctuation"
        tokens.append(Token(lexeme, kind, m.start(), m.end()))
    return tokens


def _is_terminator(token: Token) -> bool:
    return token.kind == "punctuation" and any(
        ch in _TERMINATOR_CHARS for ch in token.text
    )


def _blocks_split(prev: Token | None, nxt: Token | None) -> bool:
    """Abbreviation and lowercase-continuation guards for one terminator."""
    if prev is not None and prev.kind == "word":
        if prev.text.lower() in _ABBREVIATIONS:
            return True
        if len(prev.text) == 1 and prev.text.isupper():
            return True
    if nxt is not None and nxt.kind == "word" and nxt.text[:1].islower():
        return True
    return False


def split_sentences(text: str, tokens: list[Token] | None = None) -> list[SentenceSpan]:
    """Segment text into sentences ending at '.', '!', '?' or end-of-text.

    A terminator does not split when the preceding word is a known
    abbreviation (Mr, Mrs, Dr, St, vs, etc, or a single capital letter) or
    when the next word starts lowercase.  Only segments containing at least
    one word token become sentences, so every word token belongs to exactly
    one sentence.
    """
    if tokens is None:
        tokens = tokenize(text)
    spans = []
    first = None

    def close(last: int) -> None:
        nonlocal first
        if first is not None and any(
            t.kind == "word" for t in tokens[first : last + 1]
        ):
            spans.append(
                SentenceSpan(tokens[first].start, tokens[last].end, first, last + 1)
            )
        first = None

    i = 0
    while i < len(tokens):
        if first is None:
            first = i
        if _is_terminator(tokens[i]):
            # Absorb an immediately following run of terminators ("?!").
            while i + 1 < len(tokens) and _is_terminator(tokens[i + 1]):
                i += 1
            prev = tokens[i - 1] if i > 0 else None
            nxt = tokens[i + 1] if i + 1 < len(tokens) else None
            if not _blocks_split(prev, nxt):
                close(i)
        i += 1
    close(len(tokens) - 1)
    return spans


def count_syllables(word: str) -> int:
    """Estimate syllables as maximal vowel groups (a,e,i,o,u,y, lowercased).

    A trailing silent 'e' is subtracted when the word is longer than two
    characters and does not end in "le"; the result is clamped to >= 1.
    """
    w = word.lower()
    if not _LETTER_RE.search(w):
        raise ValueError(f"cannot count syllables of letterless input: {word!r}")
    count = 0
    prev_vowel = False
    for ch in w:
        is_vowel = ch in _VOWELS
        if is_vowel and not prev_vowel:
            count += 1
        prev_vowel = is_vowel
    if w.endswith("e") and not w.endswith("le") and len(w) > 2:
        count -= 1
    return max(count, 1)


def text_counts(text: str, dale_chall: WordList, spache: WordList) -> TextCounts:
    """Aggregate every surface count the readability formulas need.

    Word-list lookups compare lowercased token text; characters count
    letters and digits anywhere in the text.
    """
    if not dale_chall.entries or not spache.entries:
        raise ValueError("word lists must be non-empty")
    tokens = tokenize(text)
    sentences = split_sentences(text, tokens)

    sentence_initial = {
        next(
            i
            for i in range(span.token_start, span.token_end)
            if tokens[i].kind == "word"
        )
        for span in sentences
    }

    words = 0
    syllables = 0
    le2 = 0
    ge3 = 0
    complex_words = 0
    difficult_dc = 0
    difficult_sp = 0
    for i, tok in enumerate(tokens):
        if tok.kind != "word":
            continue
        words += 1
        syl = count_syllables(tok.text)
        syllables += syl
        if syl >= 3:
            ge3 += 1
            capitalized = tok.text[:1].isupper()
            if not (capitalized and i not in sentence_initial):
                complex_words += 1
        else:
            le2 += 1
        lowered = tok.text.lower()
        if lowered not in dale_chall.entries:
            difficult_dc += 1
        if lowered not in spache.entries:
            difficult_sp += 1

    return TextCounts(
        words=words,
        sentences=len(sentences),
        characters=sum(1 for ch in text if ch.isalnum()),
        syllables=syllables,
        words_le2_syllables=le2,
        words_ge3_syllables=ge3,
        complex_words=complex_words,
        difficult_dale_chall=difficult_dc,
        difficult_spache=difficult_sp,
    )
