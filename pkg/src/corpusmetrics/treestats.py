"""Bracketed constituency-tree parsing and syntactic complexity statistics.

Trees arrive one per line in Penn-Treebank-style bracketing, e.g.
``(S (NP (DT The) (NN cat)) (VP (VBD sat)))``.  Metrics count leaves as
nodes: depth is the maximum number of nodes on any root-to-leaf path, width
is the largest number of nodes at a single depth level, and nodes is the
total node count.  Parsing a tree is an external concern; this module only
consumes the bracketings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path


class TreeParseError(ValueError):
    """Malformed bracketing; ``offset`` is the character position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class ParseTree:
    label: str
    children: tuple["ParseTree", ...] = field(default=())

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class TreeMetrics:
    depth: int
    width: int
    nodes: int


def parse_bracketed(line: str) -> ParseTree:
    """Parse one ``(LABEL child ...)`` bracketing into a ParseTree.

    Children are sub-bracketings or bare leaf tokens; a node with a leaf
    child must have exactly that one child (preterminal convention).
    Serializing the result reproduces the input modulo whitespace.
    """
    pos = 0
    n = len(line)

    def skip_ws() -> None:
        nonlocal pos
        while pos < n and line[pos].isspace():
            pos += 1

    def read_atom() -> str:
        nonlocal pos
        start = pos
        while pos < n and not line[pos].isspace() and line[pos] not in "()":
            pos += 1
        return line[start:pos]

    def read_tree() -> ParseTree:
        nonlocal pos
        if pos >= n or line[pos] != "(":
            raise TreeParseError("expected '('", pos)
        open_pos = pos
        pos += 1
        skip_ws()
        label = read_atom()
        if not label:
            raise TreeParseError("empty node label", pos)
        children: list[ParseTree] = []
        leaf_children = 0
        while True:
            skip_ws()
            if pos >= n:
                raise TreeParseError("unbalanced brackets: missing ')'", n)
            if line[pos] == ")":
                pos += 1
                break
            if line[pos] == "(":
                children.append(read_tree())
            else:
                token = read_atom()
                children.append(ParseTree(token))
                leaf_children += 1
        if not children:
            raise TreeParseError(f"node '{label}' has no children", open_pos)
        if leaf_children and len(children) != 1:
            raise TreeParseError(
                f"node '{label}' mixes a leaf token with other children", open_pos
            )
        return ParseTree(label, tuple(children))

    skip_ws()
    tree = read_tree()
    skip_ws()
    if pos != n:
        raise TreeParseError("trailing garbage after tree", pos)
    return tree


def serialize(tree: ParseTree) -> str:
    """Inverse of parse_bracketed, single-space separated."""
    if tree.is_leaf:
        return tree.label
    return "(" + " ".join([tree.label] + [serialize(c) for c in tree.children]) + ")"


def tree_metrics(tree: ParseTree) -> TreeMetrics:
    """Depth, width, and node count with leaves included."""
    level_counts: list[int] = []
    stack = [(tree, 0)]
    nodes = 0
    depth = 0
    while stack:
        node, level = stack.pop()
        nodes += 1
        if level >= len(level_counts):
            level_counts.extend([0] * (level + 1 - len(level_counts)))
        level_counts[level] += 1
        depth = max(depth, level + 1)
        for child in node.children:
            stack.append((child, level + 1))
    return TreeMetrics(depth=depth, width=max(level_counts), nodes=nodes)


@dataclass(frozen=True)
class CorpusTreeStats:
    mean_depth: float
    mean_width: float
    mean_nodes: float
    parsed: int
    failures: int
    per_line: tuple[tuple[int, TreeMetrics], ...]  # (1-based line number, metrics)


def corpus_tree_stats(path: str | Path) -> CorpusTreeStats:
    """Unweighted per-sentence means over a one-tree-per-line file.

    Blank lines are skipped; unparseable lines are counted as failures.
    A file with no parseable tree is an error.
    """
    per_line = []
    failures = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                metrics = tree_metrics(parse_bracketed(line))
            except TreeParseError:
                failures += 1
                continue
            per_line.append((lineno, metrics))
    if not per_line:
        raise ValueError(f"{path}: no parseable trees ({failures} failed lines)")
    k = len(per_line)
    return CorpusTreeStats(
        mean_depth=sum(m.depth for _, m in per_line) / k,
        mean_width=sum(m.width for _, m in per_line) / k,
        mean_nodes=sum(m.nodes for _, m in per_line) / k,
        parsed=k,
        failures=failures,
        per_line=tuple(per_line),
    )
