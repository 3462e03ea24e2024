"""Unique n-gram counting, training-set indexing, and n-gram novelty.

The engine fingerprints every n-gram with two independent 64-bit lanes
(128 bits total; collision probability below 1e-18 at a billion distinct
keys, which is the documented exactness caveat) and deduplicates fingerprint
pairs with budget-aware chunking: each chunk is deduplicated in memory and
accumulated, spilling hash-partitioned sorted runs to disk when the memory
budget is exceeded.  Distinct counts are then taken per partition, so shard
and run merges are associative, commutative, and exact.

N-grams never cross document boundaries.  Tokens are either lowercase word
strings (see textseg) or externally produced non-negative integer ids; both
reduce to per-token 64-bit content hashes, so results do not depend on
vocabulary construction order.

Approximate mode replaces the exact pipeline with a 16 KiB-per-n
HyperLogLog sketch (2^14 registers, ~0.81% standard error).
"""

from __future__ import annotations

import hashlib
import logging
import math
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from threading import Lock

import numpy as np

from . import textseg

logger = logging.getLogger(__name__)

MAX_N = 8
DEFAULT_MEMORY_BUDGET = 1 << 30  # 1 GiB
HLL_PRECISION = 14  # 2^14 one-byte registers = 16 KiB per n
HLL_ERROR_BOUND = 1.04 / math.sqrt(1 << HLL_PRECISION)

_U64 = np.uint64
_SALT_A = _U64(0x243F6A8885A308D3)
_SALT_B = _U64(0x452821E638D01377)
_MULT_A = _U64(0x100000001B3)
_MULT_B = _U64(0xC6A4A7935BD1E995)
_N_PARTITIONS = 256  # spill runs are partitioned by the top 8 bits of lane A


class BudgetError(RuntimeError):
    """The memory budget cannot hold the stream plus working buffers."""


def _splitmix64(x: np.ndarray) -> np.ndarray:
    """Standard 64-bit finalizer; consumes its (fresh) argument in place."""
    t = np.empty_like(x)
    x += _U64(0x9E3779B97F4A7C15)
    np.right_shift(x, _U64(30), out=t)
    x ^= t
    x *= _U64(0xBF58476D1CE4E5B9)
    np.right_shift(x, _U64(27), out=t)
    x ^= t
    x *= _U64(0x94D049BB133111EB)
    np.right_shift(x, _U64(31), out=t)
    x ^= t
    return x


def _word_hashes(vocab: list[str]) -> tuple[np.ndarray, np.ndarray]:
    """Stable 128-bit content hash per word, split into two uint64 lanes."""
    a = np.empty(len(vocab), dtype=np.uint64)
    b = np.empty(len(vocab), dtype=np.uint64)
    for i, word in enumerate(vocab):
        digest = hashlib.blake2b(word.encode("utf-8"), digest_size=16).digest()
        a[i] = int.from_bytes(digest[:8], "little")
        b[i] = int.from_bytes(digest[8:], "little")
    return a, b


class TokenStream:
    """A sequence of documents reduced to flat per-token hash lanes.

    Construct via from_word_docs / from_id_docs; the original documents are
    retained so the stream can be re-sampled or re-serialized.
    """

    def __init__(self, documents, token_kind: str, lane_a, lane_b, doc_lengths):
        self.documents = documents
        self.token_kind = token_kind
        self.lane_a = lane_a
        self.lane_b = lane_b
        self.doc_lengths = doc_lengths
        self.total_tokens = int(doc_lengths.sum())

    @classmethod
    def from_word_docs(cls, docs: list[list[str]]) -> "TokenStream":
        if any(len(d) == 0 for d in docs):
            raise ValueError("token stream may not contain empty documents")
        vocab: dict[str, int] = {}
        ids = np.empty(sum(len(d) for d in docs), dtype=np.int64)
        pos = 0
        for doc in docs:
            for tok in doc:
                idx = vocab.setdefault(tok, len(vocab))
                ids[pos] = idx
                pos += 1
        table_a, table_b = _word_hashes(list(vocab))
        lengths = np.array([len(d) for d in docs], dtype=np.int64)
        return cls(docs, "word", table_a[ids], table_b[ids], lengths)

    @classmethod
    def from_id_docs(cls, docs: list[np.ndarray]) -> "TokenStream":
        docs = [np.asarray(d) for d in docs]
        lengths = np.array([d.size for d in docs], dtype=np.int64)
        # fill the flat array directly: no concatenate + astype double copy
        flat = np.empty(int(lengths.sum()), dtype=np.uint64)
        pos = 0
        for d in docs:
            if d.size == 0:
                raise ValueError("token stream may not contain empty documents")
            if int(d.min()) < 0:
                raise ValueError("token ids must be non-negative")
            flat[pos : pos + d.size] = d
            pos += d.size
        with np.errstate(over="ignore"):
            lane_a = _splitmix64(flat + _SALT_A)
            lane_b = _splitmix64(flat + _SALT_B)
        return cls(docs, "id", lane_a, lane_b, lengths)

    def total_ngrams(self, n: int) -> int:
        return int(np.maximum(self.doc_lengths - n + 1, 0).sum())


def load_id_stream(path: str | Path) -> TokenStream:
    """One document per line, space-separated non-negative integer ids."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if parts:
                docs.append(np.array([int(p) for p in parts], dtype=np.int64))
    if not docs:
        raise ValueError(f"{path}: no documents")
    return TokenStream.from_id_docs(docs)


def load_jsonl_stream(path: str | Path, text_field: str = "text") -> TokenStream:
    """Lowercased word tokens of each JSONL record's text field."""
    import json

    docs = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            text = json.loads(line)[text_field]
            words = [t.text.lower() for t in textseg.tokenize(text) if t.kind == "word"]
            if words:
                docs.append(words)
            else:
                skipped += 1
    if skipped:
        logger.warning("%s: skipped %d documents with no word tokens", path, skipped)
    if not docs:
        raise ValueError(f"{path}: no non-empty documents")
    return TokenStream.from_word_docs(docs)


@dataclass(frozen=True)
class NgramProfile:
    n_max: int
    unique: dict[int, int]
    total: dict[int, int]
    mode: str  # "exact" | "approximate"
    relative_error_bound: float | None
    token_kind: str


def write_profile_csv(profile: NgramProfile, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("n,unique,total,mode,error_bound\n")
        bound = "" if profile.relative_error_bound is None else repr(profile.relative_error_bound)
        for n in sorted(profile.unique):
            fh.write(f"{n},{profile.unique[n]},{profile.total[n]},{profile.mode},{bound}\n")


# ---------------------------------------------------------------------------
# fingerprint windows


def _window_hashes(lane: np.ndarray, n: int, mult: np.uint64, start: int, stop: int) -> np.ndarray:
    """Rolling polynomial hash of every length-n window starting in [start, stop)."""
    m = stop - start
    h = np.zeros(m, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for k in range(n):
            h *= mult
            h += lane[start + k : start + k + m]
    return h


def _valid_start_mask(doc_lengths: np.ndarray, n: int, total_tokens: int) -> np.ndarray:
    """Boolean mask over window starts [0, T-n]: True when the window stays
    inside one document."""
    n_positions = total_tokens - n + 1
    if n_positions <= 0:
        return np.zeros(0, dtype=bool)
    mask = np.ones(n_positions, dtype=bool)
    if n == 1:
        return mask
    ends = np.cumsum(doc_lengths)
    starts = ends - doc_lengths
    bad_lo = np.maximum(starts, ends - (n - 1))
    bad_hi = np.minimum(ends, n_positions)
    lengths = np.maximum(bad_hi - bad_lo, 0)
    if lengths.sum() == 0:
        return mask
    # expand [bad_lo, bad_hi) ranges into one flat index array
    offsets = np.repeat(np.cumsum(lengths) - lengths, lengths)
    idx = np.repeat(bad_lo, lengths) + (np.arange(lengths.sum()) - offsets)
    mask[idx] = False
    return mask


# ---------------------------------------------------------------------------
# exact dedup

def _unique_pairs(hi: np.ndarray, lo: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct (hi, lo) pairs, sorted by (hi, lo).

    Sorting the hi lane alone is several times faster than a full pair
    lexsort, and ties in a random 64-bit lane are almost always true pair
    duplicates, so only tied runs get the full treatment.  When the probe
    shows the chunk is duplicate-heavy the plain lexsort is cheaper.
    """
    if hi.size == 0:
        return hi.copy(), lo.copy()
    probe = np.sort(hi)
    tie_mass = int((probe[1:] == probe[:-1]).sum())
    del probe
    if tie_mass * 2 > hi.size:
        order = np.lexsort((lo, hi))
        hs, ls = hi[order], lo[order]
        keep = np.empty(hs.size, dtype=bool)
        keep[0] = True
        keep[1:] = (hs[1:] != hs[:-1]) | (ls[1:] != ls[:-1])
        return hs[keep], ls[keep]

    order = np.argsort(hi, kind="quicksort")
    hs, ls = hi[order], lo[order]
    tied = np.zeros(hs.size, dtype=bool)
    tied[1:] = hs[1:] == hs[:-1]
    if not tied.any():
        return hs, ls
    run_member = tied.copy()
    run_member[:-1] |= tied[1:]
    sub_h, sub_l = hs[run_member], ls[run_member]
    sub_order = np.lexsort((sub_l, sub_h))
    sub_h, sub_l = sub_h[sub_order], sub_l[sub_order]
    keep = np.empty(sub_h.size, dtype=bool)
    keep[0] = True
    keep[1:] = (sub_h[1:] != sub_h[:-1]) | (sub_l[1:] != sub_l[:-1])
    uh = np.concatenate([hs[~run_member], sub_h[keep]])
    ul = np.concatenate([ls[~run_member], sub_l[keep]])
    # the two parts have disjoint hi values; a stable hi sort keeps each
    # part's internal (hi, lo) order, so the result is pair-sorted
    merge = np.argsort(uh, kind="stable")
    return uh[merge], ul[merge]


def _partition_cuts(hi: np.ndarray) -> np.ndarray:
    """Slice boundaries of the 256 hi-prefix partitions in a pair-sorted run."""
    bounds = np.arange(1, _N_PARTITIONS, dtype=np.uint64) << _U64(56)
    return np.concatenate(([0], np.searchsorted(hi, bounds), [hi.size]))


class _RunStore:
    """Accumulates sorted unique fingerprint runs, spilling past a cap.

    On spill, all buffered runs are merged, re-deduplicated, and written as
    one file partitioned by the top 8 bits of the hi lane, so the final
    distinct count can be taken one partition at a time regardless of how
    many runs (or worker shards) contributed.  Merging is a set union:
    associative, commutative, and independent of arrival order.
    """

    def __init__(self, spill_dir: Path, ram_cap_bytes: int):
        self.spill_dir = spill_dir
        self.ram_cap = ram_cap_bytes
        self.ram_runs: list[tuple[np.ndarray, np.ndarray]] = []
        self.ram_bytes = 0
        self.spilled: list[tuple[Path, np.ndarray]] = []  # (file, item offsets per partition)
        self._lock = Lock()
        self._counter = 0

    def add_run(self, hi: np.ndarray, lo: np.ndarray) -> None:
        if hi.size == 0:
            return
        with self._lock:
            self.ram_runs.append((hi, lo))
            self.ram_bytes += hi.nbytes + lo.nbytes
            if self.ram_bytes > self.ram_cap:
                self._spill_locked()

    def _spill_locked(self) -> None:
        path = self.spill_dir / f"run{self._counter:05d}.bin"
        self._counter += 1
        offsets = np.zeros(_N_PARTITIONS + 1, dtype=np.int64)
        cuts = [_partition_cuts(hi) for hi, _ in self.ram_runs]
        with open(path, "wb") as fh:
            for p in range(_N_PARTITIONS):
                his = [hi[c[p] : c[p + 1]] for (hi, _), c in zip(self.ram_runs, cuts)]
                los = [lo[c[p] : c[p + 1]] for (_, lo), c in zip(self.ram_runs, cuts)]
                uh, ul = _unique_pairs(np.concatenate(his), np.concatenate(los))
                offsets[p + 1] = offsets[p] + uh.size
                fh.write(uh.astype("<u8", copy=False).tobytes())
                fh.write(ul.astype("<u8", copy=False).tobytes())
        self.spilled.append((path, offsets))
        self.ram_runs = []
        self.ram_bytes = 0

    def _partition_arrays(self, p: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
        his, los = [], []
        for hi, lo in self.ram_runs:
            c = _partition_cuts(hi)
            a, b = int(c[p]), int(c[p + 1])
            if b > a:
                his.append(hi[a:b])
                los.append(lo[a:b])
        for path, offsets in self.spilled:
            count = int(offsets[p + 1] - offsets[p])
            if count == 0:
                continue
            with open(path, "rb") as fh:
                fh.seek(int(offsets[p]) * 16)
                buf = fh.read(count * 16)
            his.append(np.frombuffer(buf[: count * 8], dtype="<u8"))
            los.append(np.frombuffer(buf[count * 8 :], dtype="<u8"))
        return his, los

    def reduce_partitions(self, extract: bool, workers: int = 1):
        """Distinct count (and optionally the distinct pairs) per partition."""
        if not self.spilled and len(self.ram_runs) <= 1:
            # single in-memory run: already deduplicated and pair-sorted
            if not self.ram_runs:
                empty = np.empty(0, np.uint64)
                return 0, (empty if extract else None), (empty if extract else None)
            hi, lo = self.ram_runs[0]
            return hi.size, (hi if extract else None), (lo if extract else None)

        def one(p: int):
            his, los = self._partition_arrays(p)
            if not his:
                return 0, None, None
            uh, ul = _unique_pairs(np.concatenate(his), np.concatenate(los))
            return uh.size, (uh if extract else None), (ul if extract else None)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(one, range(_N_PARTITIONS)))
        else:
            results = [one(p) for p in range(_N_PARTITIONS)]
        total = sum(size for size, _, _ in results)
        if not extract:
            return total, None, None
        parts_h = [uh for _, uh, _ in results if uh is not None and uh.size]
        parts_l = [ul for _, _, ul in results if ul is not None and ul.size]
        if parts_h:
            return total, np.concatenate(parts_h), np.concatenate(parts_l)
        return total, np.empty(0, np.uint64), np.empty(0, np.uint64)

    @property
    def spill_count(self) -> int:
        return len(self.spilled)


# ---------------------------------------------------------------------------
# exact counting

def _budget_plan(stream: TokenStream, memory_budget: int, workers: int = 1) -> tuple[int, int]:
    """Chunk size (positions) and run-accumulation cap derived from the budget.

    The budget covers the stream's hash lanes (16 bytes/token), per-chunk
    working memory (~56 bytes/position across fingerprints, sort order, and
    gathers, multiplied by concurrent workers), and the in-memory run
    accumulator.  The documented minimum is lanes + 96 MiB.
    """
    lanes_bytes = stream.lane_a.nbytes + stream.lane_b.nbytes
    minimum = lanes_bytes + 96 * (1 << 20)
    if memory_budget < minimum:
        raise BudgetError(
            f"memory budget {memory_budget} too small: need >= {minimum} bytes "
            f"({lanes_bytes} for token hash lanes + 96 MiB working memory)"
        )
    spare = memory_budget - lanes_bytes
    ram_cap = min(spare // 4, 1 << 30)
    chunk = (spare - ram_cap) // (56 * max(workers, 1))
    chunk = max(min(chunk, 1 << 25), 1 << 20)
    return chunk, ram_cap


def _shard_masks(stream: TokenStream, n: int, workers: int) -> list[np.ndarray]:
    """Partition the valid window starts across workers by document."""
    valid = _valid_start_mask(stream.doc_lengths, n, stream.total_tokens)
    if workers <= 1 or valid.size == 0:
        return [valid]
    doc_of_position = np.repeat(
        (np.arange(len(stream.doc_lengths)) % workers).astype(np.uint8),
        stream.doc_lengths,
    )[: valid.size]
    return [valid & (doc_of_position == w) for w in range(workers)]


def _iter_chunk_hashes(stream: TokenStream, n: int, chunk: int, position_mask: np.ndarray):
    """Yield (laneA, laneB) window-hash arrays for masked positions, one
    contiguous chunk of the flat token array at a time."""
    for lo in range(0, position_mask.size, chunk):
        hi = min(lo + chunk, position_mask.size)
        sel = position_mask[lo:hi]
        if not sel.any():
            continue
        a = _window_hashes(stream.lane_a, n, _MULT_A, lo, hi)
        b = _window_hashes(stream.lane_b, n, _MULT_B, lo, hi)
        if not sel.all():
            a = a[sel]
            b = b[sel]
        yield a, b


def _exact_count_n(
    stream: TokenStream,
    n: int,
    chunk: int,
    store: _RunStore,
    workers: int,
) -> int:
    def run_shard(mask: np.ndarray) -> None:
        for hi_arr, lo_arr in _iter_chunk_hashes(stream, n, chunk, mask):
            store.add_run(*_unique_pairs(hi_arr, lo_arr))

    masks = _shard_masks(stream, n, workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_shard, masks))
    else:
        for mask in masks:
            run_shard(mask)
    count, _, _ = store.reduce_partitions(extract=False, workers=workers)
    return count


def count_unique_ngrams(
    stream: TokenStream,
    n_max: int,
    mode: str = "exact",
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
    workers: int = 1,
    stats: dict | None = None,
) -> NgramProfile:
    """Unique and total n-gram counts for n = 1..n_max.

    Exact mode deduplicates 128-bit fingerprints, spilling partitioned runs
    to disk when the memory budget is exceeded; approximate mode uses a
    16 KiB HyperLogLog per n (standard error ~0.81%, documented bound
    ``HLL_ERROR_BOUND``).  Counts are invariant under document order and
    worker count.
    """
    if not 1 <= n_max <= MAX_N:
        raise ValueError(f"n_max must be in 1..{MAX_N}, got {n_max}")
    if mode not in ("exact", "approximate"):
        raise ValueError(f"unknown mode {mode!r}")
    ns = range(1, n_max + 1)
    totals = {n: stream.total_ngrams(n) for n in ns}

    if mode == "approximate":
        unique = {n: _hll_count_n(stream, n) for n in ns}
        return NgramProfile(
            n_max=n_max,
            unique=unique,
            total=totals,
            mode="approximate",
            relative_error_bound=HLL_ERROR_BOUND,
            token_kind=stream.token_kind,
        )

    workers = max(workers, 1)
    chunk, ram_cap = _budget_plan(stream, memory_budget, workers)
    unique = {}
    spilled = 0
    with tempfile.TemporaryDirectory(prefix="ngrams-spill-") as tmp:
        for n in ns:
            store = _RunStore(Path(tmp) / f"n{n}", ram_cap)
            store.spill_dir.mkdir()
            unique[n] = _exact_count_n(stream, n, chunk, store, workers)
            spilled += store.spill_count
    if stats is not None:
        stats["spilled_runs"] = spilled
        stats["chunk_positions"] = chunk
    return NgramProfile(
        n_max=n_max,
        unique=unique,
        total=totals,
        mode="exact",
        relative_error_bound=None,
        token_kind=stream.token_kind,
    )


# ---------------------------------------------------------------------------
# approximate counting (HyperLogLog)

_HLL_M = 1 << HLL_PRECISION
_HLL_VALUE_BITS = 64 - HLL_PRECISION  # 50
_HLL_ALPHA_INF = 1.0 / (2.0 * math.log(2.0))


def _hll_sigma(x: float) -> float:
    """sigma(x) = x + sum_k x^(2^k) * 2^(k-1); diverges at x = 1."""
    if x == 1.0:
        return float("inf")
    y = 1.0
    z = x
    while True:
        x = x * x
        z_prev = z
        z += x * y
        y += y
        if z == z_prev:
            return z


def _hll_tau(x: float) -> float:
    """tau(x) = (1 - x - sum_k (1 - x^(2^-k))^2 * 2^-k) / 3."""
    if x == 0.0 or x == 1.0:
        return 0.0
    y = 1.0
    z = 1.0 - x
    while True:
        x = math.sqrt(x)
        z_prev = z
        y *= 0.5
        z -= (1.0 - x) ** 2 * y
        if z == z_prev:
            return z / 3.0


class HllSketch:
    """Fixed-seed HyperLogLog over 64-bit hashes; 2^14 one-byte registers.

    Cardinality uses the histogram-based improved estimator (sigma/tau
    corrections), which is free of the raw estimator's bias around the
    linear-counting crossover, so the ~0.81% standard error holds across
    the whole range.
    """

    def __init__(self):
        self.registers = np.zeros(_HLL_M, dtype=np.uint8)

    def add_hashes(self, hashes: np.ndarray) -> None:
        if hashes.size == 0:
            return
        idx = (hashes >> _U64(_HLL_VALUE_BITS)).astype(np.uint32)
        w = hashes & _U64((1 << _HLL_VALUE_BITS) - 1)
        _, exp = np.frexp(w.astype(np.float64))
        rho = (_HLL_VALUE_BITS + 1 - exp).astype(np.uint32)  # w == 0 -> 51
        packed = np.unique((idx << np.uint32(6)) | rho)
        np.maximum.at(self.registers, packed >> np.uint32(6), (packed & np.uint32(63)).astype(np.uint8))

    def merge(self, other: "HllSketch") -> None:
        np.maximum(self.registers, other.registers, out=self.registers)

    def estimate(self) -> float:
        counts = np.bincount(self.registers, minlength=_HLL_VALUE_BITS + 2)
        m = float(_HLL_M)
        z = m * _hll_tau(1.0 - counts[_HLL_VALUE_BITS + 1] / m)
        for k in range(_HLL_VALUE_BITS, 0, -1):
            z = 0.5 * (z + float(counts[k]))
        z += m * _hll_sigma(counts[0] / m)
        return _HLL_ALPHA_INF * m * m / z


def _hll_count_n(stream: TokenStream, n: int) -> int:
    sketch = HllSketch()
    mask = _valid_start_mask(stream.doc_lengths, n, stream.total_tokens)
    if mask.size == 0:
        return 0
    block = 1 << 24
    for lo in range(0, mask.size, block):
        hi = min(lo + block, mask.size)
        h = _window_hashes(stream.lane_a, n, _MULT_A, lo, hi)
        sketch.add_hashes(h[mask[lo:hi]])
    return round(sketch.estimate())


# ---------------------------------------------------------------------------
# membership indexes and novelty

class _BloomFilter:
    """Double-hashed Bloom filter sized for a requested false-positive rate."""

    def __init__(self, expected_items: int, fpr: float):
        if not 0 < fpr < 1:
            raise ValueError(f"bloom fpr must be in (0, 1), got {fpr}")
        expected = max(expected_items, 1)
        self.num_bits = max(64, int(math.ceil(-expected * math.log(fpr) / (math.log(2) ** 2))))
        self.num_hashes = max(1, round(self.num_bits / expected * math.log(2)))
        self.fpr = fpr
        self.bits = np.zeros((self.num_bits + 7) // 8, dtype=np.uint8)

    def _positions(self, hi: np.ndarray, lo: np.ndarray, i: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            g = hi + _U64(i) * (lo | _U64(1))
        return g % _U64(self.num_bits)

    def insert(self, hi: np.ndarray, lo: np.ndarray) -> None:
        for i in range(self.num_hashes):
            pos = self._positions(hi, lo, i)
            np.bitwise_or.at(
                self.bits, (pos >> _U64(3)).astype(np.int64),
                (np.uint8(1) << (pos & _U64(7)).astype(np.uint8)),
            )

    def contains(self, hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
        result = np.ones(hi.size, dtype=bool)
        for i in range(self.num_hashes):
            pos = self._positions(hi, lo, i)
            bit = (self.bits[(pos >> _U64(3)).astype(np.int64)] >> (pos & _U64(7)).astype(np.uint8)) & 1
            result &= bit.astype(bool)
        return result


def _pairs_contain(
    sorted_hi: np.ndarray, sorted_lo: np.ndarray, qhi: np.ndarray, qlo: np.ndarray
) -> np.ndarray:
    """Batch membership of query pairs in a pair-sorted fingerprint set."""
    found = np.zeros(qhi.size, dtype=bool)
    if sorted_hi.size == 0 or qhi.size == 0:
        return found
    pos = np.searchsorted(sorted_hi, qhi, side="left")
    active = np.flatnonzero(pos < sorted_hi.size)
    while active.size:
        p = pos[active]
        same_hi = sorted_hi[p] == qhi[active]
        hit = same_hi & (sorted_lo[p] == qlo[active])
        found[active[hit]] = True
        walk = active[same_hi & ~hit]
        pos[walk] += 1
        active = walk[pos[walk] < sorted_hi.size]
    return found


class NgramIndex:
    """Membership structure over the n-grams of a training stream.

    The exact backend stores deduplicated 128-bit fingerprints per n; the
    bloom backend may answer true for absent n-grams with probability at
    most ``bloom_fpr`` (it is sized by inserted instances, an upper bound on
    distinct keys, so the achieved rate is at or below the request).
    """

    def __init__(self, n_values, backend, token_kind, bloom_fpr=None):
        self.n_values = tuple(sorted(n_values))
        self.backend = backend
        self.token_kind = token_kind
        self.bloom_fpr = bloom_fpr
        self._exact: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._blooms: dict[int, _BloomFilter] = {}

    def contains_hashes(self, n: int, hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
        if n not in self.n_values:
            raise KeyError(f"index does not cover n={n} (has {self.n_values})")
        if self.backend == "exact":
            by_n = self._exact[n]
            return _pairs_contain(by_n[0], by_n[1], hi, lo)
        return self._blooms[n].contains(hi, lo)

    def contains(self, ngram) -> bool:
        """Membership of one explicit n-gram (a tuple of tokens or ids)."""
        n = len(ngram)
        if self.token_kind == "word":
            doc = [str(t) for t in ngram]
            probe = TokenStream.from_word_docs([doc])
        else:
            probe = TokenStream.from_id_docs([np.array(ngram, dtype=np.int64)])
        hi = _window_hashes(probe.lane_a, n, _MULT_A, 0, 1)
        lo = _window_hashes(probe.lane_b, n, _MULT_B, 0, 1)
        return bool(self.contains_hashes(n, hi, lo)[0])


def build_index(
    stream: TokenStream,
    n_values,
    backend: str = "exact",
    bloom_fpr: float | None = None,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> NgramIndex:
    """Index every n-gram of the stream for the requested n values."""
    n_values = sorted(set(int(n) for n in n_values))
    if not n_values or n_values[0] < 1 or n_values[-1] > MAX_N:
        raise ValueError(f"n_values must be a non-empty subset of 1..{MAX_N}")
    if backend not in ("exact", "bloom"):
        raise ValueError(f"unknown index backend {backend!r}")
    if backend == "bloom" and bloom_fpr is None:
        bloom_fpr = 0.01

    index = NgramIndex(n_values, backend, stream.token_kind, bloom_fpr)
    chunk, ram_cap = _budget_plan(stream, memory_budget)
    with tempfile.TemporaryDirectory(prefix="ngidx-spill-") as tmp:
        for n in n_values:
            mask = _valid_start_mask(stream.doc_lengths, n, stream.total_tokens)
            if backend == "bloom":
                bloom = _BloomFilter(stream.total_ngrams(n), bloom_fpr)
                for hi_arr, lo_arr in _iter_chunk_hashes(stream, n, chunk, mask):
                    bloom.insert(hi_arr, lo_arr)
                index._blooms[n] = bloom
            else:
                store = _RunStore(Path(tmp) / f"n{n}", ram_cap)
                store.spill_dir.mkdir()
                for hi_arr, lo_arr in _iter_chunk_hashes(stream, n, chunk, mask):
                    store.add_run(*_unique_pairs(hi_arr, lo_arr))
                _, uh, ul = store.reduce_partitions(extract=True)
                index._exact[n] = (uh, ul)
    return index


def novelty_profile(generated: TokenStream, index: NgramIndex, n_values) -> dict[int, float]:
    """Per-n fraction of generated n-gram instances absent from the index.

    Instances are counted, not types; windows never cross document
    boundaries.  When the generated stream has no window of some n the
    fraction is NaN.
    """
    result = {}
    for n in sorted(set(int(n) for n in n_values)):
        if n not in index.n_values:
            raise KeyError(f"index does not cover n={n} (has {index.n_values})")
        mask = _valid_start_mask(generated.doc_lengths, n, generated.total_tokens)
        total = int(mask.sum()) if mask.size else 0
        if total == 0:
            result[n] = float("nan")
            continue
        absent = 0
        block = 1 << 24
        for lo in range(0, mask.size, block):
            hi = min(lo + block, mask.size)
            sel = mask[lo:hi]
            qa = _window_hashes(generated.lane_a, n, _MULT_A, lo, hi)[sel]
            qb = _window_hashes(generated.lane_b, n, _MULT_B, lo, hi)[sel]
            absent += int((~index.contains_hashes(n, qa, qb)).sum())
        result[n] = absent / total
    return result


def test_vs_train_novelty(
    test_stream: TokenStream,
    train_stream: TokenStream,
    n_values,
    backend: str = "exact",
    bloom_fpr: float | None = None,
) -> dict[int, float]:
    """Novelty of a test stream with respect to a training stream."""
    index = build_index(train_stream, n_values, backend, bloom_fpr)
    return novelty_profile(test_stream, index, n_values)


def write_novelty_csv(novelty: dict[int, float], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("n,novelty\n")
        for n in sorted(novelty):
            fh.write(f"{n},{repr(novelty[n])}\n")


# ---------------------------------------------------------------------------
# sampling and persistence

def sample_tokens(stream: TokenStream, budget: int, seed: int) -> TokenStream:
    """Whole documents in seeded-shuffle order until the token budget.

    The final document is truncated to hit the budget exactly; when the
    stream is smaller than the budget the whole stream is returned (in
    shuffled order) with a warning.
    """
    if budget < 1:
        raise ValueError(f"token budget must be >= 1, got {budget}")
    if len(stream.doc_lengths) == 0:
        raise ValueError("cannot sample from an empty stream")
    order = np.random.default_rng(seed).permutation(len(stream.doc_lengths))
    if stream.total_tokens < budget:
        logger.warning(
            "token budget %d exceeds stream size %d; taking all tokens",
            budget, stream.total_tokens,
        )
    picked = []
    remaining = budget
    for d in order:
        doc = stream.documents[int(d)]
        size = len(doc)
        if size >= remaining:
            picked.append(doc[:remaining])
            remaining = 0
            break
        picked.append(doc)
        remaining -= size
    if stream.token_kind == "word":
        return TokenStream.from_word_docs([list(d) for d in picked])
    return TokenStream.from_id_docs([np.asarray(d) for d in picked])


_MAGIC = b"NGIDX1"
_BACKEND_TAGS = {"exact": 0, "bloom": 1}
_KIND_TAGS = {"word": 0, "id": 1}


def save_index(index: NgramIndex, path: str | Path) -> None:
    """Persist an index: magic header, backend tag, n values, payload.

    All integers are fixed-width little-endian, so files are bit-exact
    across platforms.
    """
    import struct

    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BB", _BACKEND_TAGS[index.backend], _KIND_TAGS[index.token_kind]))
        fh.write(struct.pack("<I", len(index.n_values)))
        for n in index.n_values:
            fh.write(struct.pack("<I", n))
        if index.backend == "exact":
            for n in index.n_values:
                hi, lo = index._exact[n]
                fh.write(struct.pack("<Q", hi.size))
                fh.write(hi.astype("<u8", copy=False).tobytes())
                fh.write(lo.astype("<u8", copy=False).tobytes())
        else:
            fh.write(struct.pack("<d", index.bloom_fpr))
            for n in index.n_values:
                bloom = index._blooms[n]
                fh.write(struct.pack("<QI", bloom.num_bits, bloom.num_hashes))
                fh.write(bloom.bits.tobytes())


def load_index(path: str | Path) -> NgramIndex:
    import struct

    with open(path, "rb") as fh:
        magic = fh.read(6)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not an n-gram index file (bad magic {magic!r})")
        backend_tag, kind_tag = struct.unpack("<BB", fh.read(2))
        backend = {v: k for k, v in _BACKEND_TAGS.items()}[backend_tag]
        kind = {v: k for k, v in _KIND_TAGS.items()}[kind_tag]
        (n_count,) = struct.unpack("<I", fh.read(4))
        n_values = [struct.unpack("<I", fh.read(4))[0] for _ in range(n_count)]
        if backend == "exact":
            index = NgramIndex(n_values, backend, kind)
            for n in n_values:
                (size,) = struct.unpack("<Q", fh.read(8))
                hi = np.frombuffer(fh.read(size * 8), dtype="<u8")
                lo = np.frombuffer(fh.read(size * 8), dtype="<u8")
                index._exact[n] = (hi, lo)
        else:
            (fpr,) = struct.unpack("<d", fh.read(8))
            index = NgramIndex(n_values, backend, kind, fpr)
            for n in n_values:
                num_bits, num_hashes = struct.unpack("<QI", fh.read(12))
                bloom = _BloomFilter.__new__(_BloomFilter)
                bloom.num_bits = num_bits
                bloom.num_hashes = num_hashes
                bloom.fpr = fpr
                bloom.bits = np.frombuffer(fh.read((num_bits + 7) // 8), dtype=np.uint8).copy()
                index._blooms[n] = bloom
    return index
