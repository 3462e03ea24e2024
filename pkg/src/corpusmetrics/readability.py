"""Eight classic readability formulas computed from TextCounts.

The formulas take pre-computed counts rather than raw text so the arithmetic
is exact and testable in isolation; ``readability_report`` wires them to the
tokenizer.  All scores are grade-level units except where a formula defines
otherwise.  Scores are undefined for empty text: every formula requires at
least one word and one sentence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .textseg import TextCounts, text_counts
from .wordlists import WordList, load_word_list

FORMULA_NAMES = (
    "fkgl",
    "ari",
    "coleman_liau",
    "dale_chall",
    "gunning_fog",
    "linsear_write",
    "smog",
    "spache",
)


class DegenerateTextError(ValueError):
    """Raised when a formula is evaluated on zero words or zero sentences."""


@dataclass(frozen=True)
class ReadabilityReport:
    scores: dict[str, float]
    counts: TextCounts


def _require(counts: TextCounts) -> None:
    if counts.words < 1 or counts.sentences < 1:
        raise DegenerateTextError(
            f"readability formulas need words >= 1 and sentences >= 1, "
            f"got words={counts.words} sentences={counts.sentences}"
        )


def fkgl(counts: TextCounts) -> float:
    """Flesch-Kincaid grade: 0.39*(words/sentences) + 11.8*(syllables/words) - 15.59."""
    _require(counts)
    return (
        0.39 * (counts.words / counts.sentences)
        + 11.8 * (counts.syllables / counts.words)
        - 15.59
    )


def ari(counts: TextCounts) -> float:
    """Automated readability index: 4.71*(chars/words) + 0.5*(words/sentences) - 21.43."""
    _require(counts)
    return (
        4.71 * (counts.characters / counts.words)
        + 0.5 * (counts.words / counts.sentences)
        - 21.43
    )


def coleman_liau(counts: TextCounts) -> float:
    """Coleman-Liau index over characters and sentences per 100 words."""
    _require(counts)
    return (
        0.0588 * (counts.characters / counts.words * 100)
        - 0.296 * (counts.sentences / counts.words * 100)
        - 15.8
    )


def dale_chall(counts: TextCounts) -> float:
    """Dale-Chall score; adds 3.6365 when difficult words exceed 5% (strict)."""
    _require(counts)
    difficult_share = counts.difficult_dale_chall / counts.words
    score = 0.1579 * difficult_share * 100 + 0.0496 * (counts.words / counts.sentences)
    if difficult_share > 0.05:
        score += 3.6365
    return score


def gunning_fog(counts: TextCounts) -> float:
    """Gunning fog index: 0.4*[(words/sentences) + 100*(complex/words)]."""
    _require(counts)
    return 0.4 * (
        counts.words / counts.sentences
        + 100 * (counts.complex_words / counts.words)
    )


def linsear_write(counts: TextCounts) -> float:
    """Linsear Write: r = (<=2-syllable words + 3*(>=3-syllable words))/sentences,
    then r/2 when r > 20 (strict) else (r - 2)/2."""
    _require(counts)
    r = (
        counts.words_le2_syllables + 3 * counts.words_ge3_syllables
    ) / counts.sentences
    return r / 2 if r > 20 else (r - 2) / 2


def smog(counts: TextCounts) -> float:
    """SMOG index: 1.0430*sqrt(30*(>=3-syllable words/sentences)) + 3.1291."""
    _require(counts)
    return 1.0430 * math.sqrt(30 * (counts.words_ge3_syllables / counts.sentences)) + 3.1291


def spache(counts: TextCounts) -> float:
    """Spache score over words per sentence and unfamiliar-word percentage."""
    _require(counts)
    return (
        0.121 * (counts.words / counts.sentences)
        + 0.082 * (counts.difficult_spache / counts.words * 100)
        + 0.659
    )


_FORMULAS = {
    "fkgl": fkgl,
    "ari": ari,
    "coleman_liau": coleman_liau,
    "dale_chall": dale_chall,
    "gunning_fog": gunning_fog,
    "linsear_write": linsear_write,
    "smog": smog,
    "spache": spache,
}


def bundled_word_list_path(name: str) -> Path:
    """Path of a word list shipped with the package ("dale_chall" or "spache")."""
    return Path(str(resources.files("corpusmetrics") / "data" / "wordlists" / f"{name}.txt"))


def load_default_word_lists() -> tuple[WordList, WordList]:
    """Load the bundled Dale-Chall and Spache reconstructions."""
    return (
        load_word_list(bundled_word_list_path("dale_chall"), "dale_chall"),
        load_word_list(bundled_word_list_path("spache"), "spache"),
    )


def readability_report(
    text: str, dale_chall_list: WordList, spache_list: WordList
) -> ReadabilityReport:
    """Compute TextCounts once and evaluate all eight formulas."""
    counts = text_counts(text, dale_chall_list, spache_list)
    _require(counts)
    scores = {name: fn(counts) for name, fn in _FORMULAS.items()}
    return ReadabilityReport(scores=scores, counts=counts)


def corpus_report(
    texts: dict[str, str], dale_chall_list: WordList, spache_list: WordList
) -> tuple[dict[str, ReadabilityReport], dict[str, float]]:
    """Per-document reports plus the unweighted per-formula mean.

    The corpus score for each formula is the plain mean of per-document
    scores, matching how one number is reported per dataset.
    """
    reports = {
        doc_id: readability_report(text, dale_chall_list, spache_list)
        for doc_id, text in texts.items()
    }
    if not reports:
        raise DegenerateTextError("corpus is empty")
    means = {
        name: sum(r.scores[name] for r in reports.values()) / len(reports)
        for name in FORMULA_NAMES
    }
    return reports, means
