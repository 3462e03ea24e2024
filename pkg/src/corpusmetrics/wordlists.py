"""Familiar-word lists used by the Dale-Chall and Spache formulas."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class WordList:
    name: str
    entries: frozenset[str]
    source_path: str


def load_word_list(path: str | Path, name: str | None = None) -> WordList:
    """Load a word list: one word per line, '#' comments and blanks ignored.

    Entries are lowercased; an empty list is an error.
    """
    path = Path(path)
    entries = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            word = line.split("#", 1)[0].strip().lower()
            if not word:
                continue
            if any(ch.isspace() for ch in word):
                raise ValueError(f"{path}: word list entry contains whitespace: {word!r}")
            entries.add(word)
    if not entries:
        raise ValueError(f"{path}: word list is empty")
    return WordList(name or path.stem, frozenset(entries), str(path))
