"""Synthetic story-corpus generation against a chat-completions endpoint.

Five prompt templates (jr, gre, history, sports, news) are instantiated
with three vocabulary words sampled without replacement plus a sampled list
of narrative features, sent to a generator endpoint (the wire protocol is
shared with the judge client), and collected into versioned JSONL corpora
with train/test split labels.  All sampling is seeded; for a fixed seed the
full sequence of sampled specs is byte-reproducible.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .judge import HttpChatTransport, JudgeConfig, TransportError

logger = logging.getLogger(__name__)

DOMAINS = ("jr", "gre", "history", "sports", "news")
FEATURE_SLOT = "<FEAT-1> ... <FEAT-K>"
WORD_SLOTS = ("<WORD-1>", "<WORD-2>", "<WORD-3>")


@dataclass(frozen=True)
class StoryTemplate:
    domain: str
    system_text: str
    user_template: str


@dataclass(frozen=True)
class VocabBank:
    domain: str
    words: tuple[str, ...]

    def __post_init__(self):
        if not self.words:
            raise ValueError("vocabulary bank is empty")
        lowered = [w.lower() for w in self.words]
        if len(set(lowered)) != len(lowered):
            raise ValueError("vocabulary bank has duplicate words (after lowercasing)")


@dataclass(frozen=True)
class FeatureBank:
    features: tuple[str, ...]

    def __post_init__(self):
        if not self.features:
            raise ValueError("feature bank is empty")
        if len(set(self.features)) != len(self.features):
            raise ValueError("feature bank has duplicate entries")


@dataclass(frozen=True)
class GenRecord:
    id: str
    domain: str
    words: tuple[str, str, str]
    features: tuple[str, ...]
    text: str
    split: str = "train"


def _data_path(name: str) -> Path:
    return Path(str(resources.files("corpusmetrics") / "data" / "storygen" / name))


def load_template(domain: str) -> StoryTemplate:
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}; expected one of {DOMAINS}")
    payload = json.loads(_data_path(f"{domain}.json").read_text(encoding="utf-8"))
    return StoryTemplate(domain, payload["system"], payload["user"])


def _read_bank_lines(path: str | Path) -> list[str]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                entries.append(line)
    return entries


def load_vocab_bank(path: str | Path, domain: str) -> VocabBank:
    return VocabBank(domain, tuple(_read_bank_lines(path)))


def load_feature_bank(path: str | Path) -> FeatureBank:
    return FeatureBank(tuple(_read_bank_lines(path)))


def bundled_vocab_bank(domain: str) -> VocabBank:
    """jr uses the child-friendly bank; every other domain uses the GRE bank."""
    name = "vocab_jr.txt" if domain == "jr" else "vocab_gre.txt"
    return load_vocab_bank(_data_path(name), domain)


def bundled_feature_bank() -> FeatureBank:
    return load_feature_bank(_data_path("features.txt"))


def sample_spec(
    vocab: VocabBank, feats: FeatureBank, k_features: int, seed: int
) -> tuple[list[str], list[str]]:
    """Three words and k features, sampled without replacement, seeded."""
    if k_features < 1:
        raise ValueError("templates require at least one feature")
    if len(vocab.words) < 3:
        raise ValueError(f"vocabulary bank too small: {len(vocab.words)} < 3")
    if len(feats.features) < k_features:
        raise ValueError(
            f"feature bank too small: {len(feats.features)} < {k_features}"
        )
    rng = random.Random(seed)
    words = rng.sample(vocab.words, 3)
    features = rng.sample(feats.features, k_features)
    return words, features


def render_story_prompt(
    template: StoryTemplate, words: list[str], features: list[str]
) -> tuple[str, str]:
    """Substitute words and features into the template, byte-exactly.

    Exactly three words are required; features are joined with ", ".
    """
    if len(words) != 3:
        raise ValueError(f"templates take exactly 3 words, got {len(words)}")
    if not features:
        raise ValueError("templates require at least one feature")
    user = template.user_template
    for slot, word in zip(WORD_SLOTS, words):
        user = user.replace(slot, word)
    user = user.replace(FEATURE_SLOT, ", ".join(features))
    return template.system_text, user


def _whitespace_tokens(text: str) -> int:
    return len(text.split())


def generate_dataset(
    domain: str,
    count: int,
    gen_config: JudgeConfig,
    seed: int,
    token_budget: int | None = None,
    k_features: int = 2,
    vocab: VocabBank | None = None,
    feats: FeatureBank | None = None,
    transport=None,
    count_tokens=None,
) -> list[GenRecord]:
    """Generate a story corpus; one record per successful completion.

    Specs (words, features, ids) are precomputed from the seed, so output
    is deterministic given what the endpoint returns.  With a token budget,
    generation runs sequentially and stops after the first record that
    meets or exceeds the budget (whitespace word-tokens unless a counter is
    supplied); otherwise `count` requests run with bounded concurrency.
    """
    template = load_template(domain)
    vocab = vocab or bundled_vocab_bank(domain)
    feats = feats or bundled_feature_bank()
    count_tokens = count_tokens or _whitespace_tokens
    if transport is None:
        transport = HttpChatTransport(gen_config)
    if count == 0:
        logger.warning("generate_dataset called with count=0; empty corpus")
        return []
    if count < 0:
        raise ValueError("count must be >= 0")

    master = random.Random(seed)
    specs = []
    for i in range(count):
        record_seed = master.randrange(1 << 62)
        words, features = sample_spec(vocab, feats, k_features, record_seed)
        specs.append((f"{domain}-{seed}-{i:06d}", words, features))

    def request(spec) -> GenRecord | None:
        rec_id, words, features = spec
        system_text, user_text = render_story_prompt(template, words, features)
        try:
            text = transport.complete(system_text, user_text)
        except TransportError as exc:
            logger.warning("generation failed for %s: %s", rec_id, exc)
            return None
        if not text:
            logger.warning("generation for %s returned empty text", rec_id)
            return None
        return GenRecord(rec_id, domain, tuple(words), tuple(features), text)

    records: list[GenRecord] = []
    if token_budget is not None:
        used = 0
        for spec in specs:
            record = request(spec)
            if record is None:
                continue
            records.append(record)
            used += count_tokens(record.text)
            if used >= token_budget:
                break
    else:
        with ThreadPoolExecutor(max_workers=max(gen_config.max_in_flight, 1)) as pool:
            for record in pool.map(request, specs):
                if record is not None:
                    records.append(record)
    if not records:
        raise RuntimeError(f"all {count} generation requests failed")
    return records


def split_corpus(records: list[GenRecord], test_fraction: float, seed: int) -> list[GenRecord]:
    """Label every record train or test by a seeded shuffle; order preserved."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(records)
    if n < 2:
        raise ValueError("corpus too small to split: need at least 2 records")
    n_test = min(max(round(n * test_fraction), 1), n - 1)
    order = list(range(n))
    random.Random(seed).shuffle(order)
    test_idx = set(order[:n_test])
    return [
        dataclasses.replace(rec, split="test" if i in test_idx else "train")
        for i, rec in enumerate(records)
    ]


def extract_prompts(
    records: list[GenRecord],
    prefix_tokens: int,
    seed: int,
    count: int,
) -> list[dict]:
    """First `prefix_tokens` whitespace tokens of sampled documents.

    Documents shorter than the prefix are skipped with a warning; asking for
    more prompts than there are eligible documents returns them all.
    """
    if prefix_tokens < 1:
        raise ValueError("prefix_tokens must be >= 1")
    eligible = []
    skipped = 0
    for rec in records:
        tokens = rec.text.split()
        if len(tokens) >= prefix_tokens:
            eligible.append((rec.id, " ".join(tokens[:prefix_tokens])))
        else:
            skipped += 1
    if skipped:
        logger.warning("skipped %d documents shorter than %d tokens", skipped, prefix_tokens)
    if not eligible:
        raise ValueError(f"no documents have >= {prefix_tokens} tokens")
    if count >= len(eligible):
        if count > len(eligible):
            logger.warning(
                "requested %d prompts but only %d documents are eligible", count, len(eligible)
            )
        chosen = eligible
    else:
        picked = set(random.Random(seed).sample(range(len(eligible)), count))
        chosen = [e for i, e in enumerate(eligible) if i in picked]
    return [{"id": doc_id, "prompt": prompt} for doc_id, prompt in chosen]


def write_corpus_jsonl(records: list[GenRecord], path: str | Path) -> None:
    """UTF-8 JSONL, LF line endings, one record per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "id": rec.id,
                        "domain": rec.domain,
                        "words": list(rec.words),
                        "features": list(rec.features),
                        "text": rec.text,
                        "split": rec.split,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_corpus_jsonl(path: str | Path) -> list[GenRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            records.append(
                GenRecord(
                    id=str(obj["id"]),
                    domain=obj.get("domain", ""),
                    words=tuple(obj.get("words", ())),
                    features=tuple(obj.get("features", ())),
                    text=obj["text"],
                    split=obj.get("split", "train"),
                )
            )
    if not records:
        raise ValueError(f"{path}: empty corpus")
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate record ids")
    return records


def write_prompts_jsonl(prompts: list[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in prompts:
            fh.write(json.dumps(p, ensure_ascii=False) + "\n")
