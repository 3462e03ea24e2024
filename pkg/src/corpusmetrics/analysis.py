"""Correlation, learnability, and perplexity analyses over metric tables.

A MetricTable is a small named-rows-by-named-columns grid of reals with
explicit missing values (None).  Missing values are pairwise-dropped by the
correlation operations, never imputed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path


class UndefinedCorrelationError(ValueError):
    """Fewer than two complete pairs, or an input with zero variance."""


@dataclass
class MetricTable:
    row_ids: list[str]
    columns: dict[str, list[float | None]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(set(self.row_ids)) != len(self.row_ids):
            raise ValueError("row ids must be unique")
        for name, values in self.columns.items():
            if len(values) != len(self.row_ids):
                raise ValueError(
                    f"column {name!r} has {len(values)} values for "
                    f"{len(self.row_ids)} rows"
                )

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, MetricTable)
            and self.row_ids == other.row_ids
            and self.columns == other.columns
        )


def _complete_pairs(
    x: list[float | None], y: list[float | None]
) -> tuple[list[float], list[float]]:
    xs, ys = [], []
    for a, b in zip(x, y, strict=True):
        if a is not None and b is not None:
            xs.append(float(a))
            ys.append(float(b))
    return xs, ys


def pearson(x: list[float | None], y: list[float | None]) -> float:
    """Sample Pearson correlation; pairs with a missing value are dropped."""
    xs, ys = _complete_pairs(x, y)
    if len(xs) < 2:
        raise UndefinedCorrelationError(
            f"need >= 2 complete pairs, got {len(xs)}"
        )
    n = len(xs)
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    dx = [a - mx for a in xs]
    dy = [b - my for b in ys]
    sxx = math.fsum(a * a for a in dx)
    syy = math.fsum(b * b for b in dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("zero variance input")
    return math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)


def _average_ranks(values: list[float]) -> list[float]:
    """Ranks starting at 1; tied values share the mean of their positions."""
    order = sorted(range(len(values)), key=values.__getitem__)
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mean_rank = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = mean_rank
        i = j + 1
    return ranks


def spearman(x: list[float | None], y: list[float | None]) -> float:
    """Rank correlation: Pearson over average ranks (ties get mean rank)."""
    xs, ys = _complete_pairs(x, y)
    if len(xs) < 2:
        raise UndefinedCorrelationError(
            f"need >= 2 complete pairs, got {len(xs)}"
        )
    return pearson(_average_ranks(xs), _average_ranks(ys))


def correlation_matrix(
    table: MetricTable, method: str = "pearson"
) -> tuple[list[str], list[list[float | None]]]:
    """Symmetric correlation matrix with unit diagonal.

    Undefined cells (zero variance or too few complete pairs) are reported
    as missing rather than fabricated.  Returns (column names, matrix).
    """
    if method not in ("pearson", "spearman"):
        raise ValueError(f"unknown method {method!r}")
    if len(table.columns) < 2:
        raise ValueError("correlation matrix needs >= 2 columns")
    fn = pearson if method == "pearson" else spearman
    names = list(table.columns)
    k = len(names)
    matrix: list[list[float | None]] = [[None] * k for _ in range(k)]
    for i in range(k):
        matrix[i][i] = 1.0
        for j in range(i + 1, k):
            try:
                r = fn(table.columns[names[i]], table.columns[names[j]])
            except UndefinedCorrelationError:
                r = None
            matrix[i][j] = r
            matrix[j][i] = r
    return names, matrix


def learnability_ratio(output_coherence_mean: float, train_coherence_mean: float) -> float:
    """Mean output coherence divided by mean training-data coherence."""
    if train_coherence_mean <= 0:
        raise ValueError(
            f"train coherence mean must be positive, got {train_coherence_mean}"
        )
    return output_coherence_mean / train_coherence_mean


def perplexity_from_logprobs(logprobs: list[float]) -> float:
    """exp(-mean) of natural-log token probabilities for one document."""
    if not logprobs:
        raise ValueError("empty logprob vector")
    if any(lp > 0 for lp in logprobs):
        raise ValueError("logprobs must be <= 0")
    return math.exp(-math.fsum(logprobs) / len(logprobs))


def corpus_perplexity(docs: list[list[float]]) -> float:
    """Token-weighted pooling: exp(-(total logprob / total tokens))."""
    if not docs:
        raise ValueError("no documents")
    total = math.fsum(math.fsum(d) for d in docs)
    tokens = sum(len(d) for d in docs)
    if tokens == 0:
        raise ValueError("no tokens")
    for d in docs:
        if any(lp > 0 for lp in d):
            raise ValueError("logprobs must be <= 0")
    return math.exp(-total / tokens)


def cross_model_perplexity(per_model: dict[str, float]) -> float:
    """Arithmetic mean of per-model corpus perplexities."""
    if not per_model:
        raise ValueError("no models")
    return math.fsum(per_model.values()) / len(per_model)


def read_logprobs_jsonl(path: str | Path) -> dict[str, list[list[float]]]:
    """Group per-document logprob vectors by model_id.

    Expects JSONL records: {"doc_id": ..., "model_id": ..., "logprobs": [...]}.
    """
    grouped: dict[str, list[list[float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            try:
                model = str(obj["model_id"])
                logprobs = [float(v) for v in obj["logprobs"]]
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: missing field {exc}") from exc
            grouped.setdefault(model, []).append(logprobs)
    if not grouped:
        raise ValueError(f"{path}: no logprob records")
    return grouped


def emit_report(table: MetricTable, out_path: str | Path, format: str = "csv") -> None:
    """Write a table as CSV or JSON; missing cells are empty/null.

    The emitted file parses back to an equal table via parse_report.
    """
    out_path = Path(out_path)
    if format == "csv":
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["row_id"] + list(table.columns))
            for i, row_id in enumerate(table.row_ids):
                row = [row_id]
                for values in table.columns.values():
                    v = values[i]
                    row.append("" if v is None else repr(float(v)))
                writer.writerow(row)
    elif format == "json":
        payload = {"row_ids": table.row_ids, "columns": table.columns}
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    else:
        raise ValueError(f"unknown report format {format!r}")


def parse_report(path: str | Path) -> MetricTable:
    """Read a table previously written by emit_report (format by extension)."""
    path = Path(path)
    if path.suffix == ".json":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        return MetricTable(
            row_ids=list(payload["row_ids"]),
            columns={
                name: [None if v is None else float(v) for v in values]
                for name, values in payload["columns"].items()
            },
        )
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = header[1:]
        row_ids = []
        columns: dict[str, list[float | None]] = {name: [] for name in names}
        for row in reader:
            row_ids.append(row[0])
            for name, cell in zip(names, row[1:], strict=True):
                columns[name].append(float(cell) if cell else None)
    return MetricTable(row_ids=row_ids, columns=columns)


def to_long_rows(table: MetricTable) -> list[tuple[str, str, float]]:
    """Tidy (series, x, y) rows for plotting; missing cells are skipped."""
    rows = []
    for name, values in table.columns.items():
        for row_id, v in zip(table.row_ids, values, strict=True):
            if v is not None:
                rows.append((name, row_id, float(v)))
    return rows
