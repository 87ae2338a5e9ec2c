"""Data model for distantly supervised sentence bags: JSONL ingestion and
serialization, vocabulary building, position features, and a seeded synthetic
noisy-corpus generator with planted gold mention annotations.

JSONL schema (one object per line, UTF-8, LF endings):

    {"tokens": [str], "head": int, "tail": int, "relation": str,
     "gold_mentions": [[int]] (optional), "is_noise": bool (optional),
     "split": "train"|"test" (optional, default "train")}

A bag groups the sentences sharing (head surface, tail surface, relation);
every sentence carries the bag's noisy relation label.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
MIN_SENTENCE_LEN = 3

# Relative token offsets to an entity are clipped to [-30, 30] and shifted to
# bucket indices in [0, 60]; the entity's own position lands on bucket 30.
POSITION_CLIP = 30
N_POSITION_BUCKETS = 2 * POSITION_CLIP + 1


class CorpusError(ValueError):
    """Malformed corpus input; message names the offending line when known."""


@dataclass
class Sentence:
    tokens: list[str]
    token_ids: list[int]
    head_idx: int
    tail_idx: int
    relation_id: int
    gold_mentions: list[list[int]] | None = None
    is_noise: bool | None = None
    split: str = "train"

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class Bag:
    relation_id: int
    head: str
    tail: str
    sentences: list[Sentence]


@dataclass
class PositionFeatures:
    head_buckets: list[int]
    tail_buckets: list[int]


class Vocabulary:
    """Case-folded token <-> id map with reserved ids 0=PAD, 1=UNK."""

    def __init__(self):
        self._token_to_id = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        self._id_to_token = [PAD_TOKEN, UNK_TOKEN]

    def add(self, token: str) -> int:
        key = token.lower()
        existing = self._token_to_id.get(key)
        if existing is not None:
            return existing
        idx = len(self._id_to_token)
        self._token_to_id[key] = idx
        self._id_to_token.append(key)
        return idx

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token.lower(), UNK_ID)

    def token_of(self, idx: int) -> str:
        return self._id_to_token[idx]

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._id_to_token == other._id_to_token

    def tokens(self) -> list[str]:
        return list(self._id_to_token)


@dataclass
class Corpus:
    bags: list[Bag]
    vocabulary: Vocabulary
    relations: list[str]

    def sentences(self):
        for bag in self.bags:
            yield from bag.sentences

    def n_sentences(self) -> int:
        return sum(len(b.sentences) for b in self.bags)

    def subset(self, split: str) -> "Corpus":
        """Corpus restricted to one split; shares vocabulary and relations."""
        bags = []
        for bag in self.bags:
            kept = [s for s in bag.sentences if s.split == split]
            if kept:
                bags.append(Bag(bag.relation_id, bag.head, bag.tail, kept))
        return Corpus(bags, self.vocabulary, self.relations)


def position_bucket(j: int, entity_idx: int) -> int:
    offset = j - entity_idx
    return max(-POSITION_CLIP, min(POSITION_CLIP, offset)) + POSITION_CLIP


def position_buckets(sentence: Sentence) -> PositionFeatures:
    head = [position_bucket(j, sentence.head_idx) for j in range(len(sentence))]
    tail = [position_bucket(j, sentence.tail_idx) for j in range(len(sentence))]
    return PositionFeatures(head, tail)


def _validate_record(rec: dict, line_no: int) -> None:
    for key in ("tokens", "head", "tail", "relation"):
        if key not in rec:
            raise CorpusError(f"line {line_no}: missing key '{key}'")
    tokens = rec["tokens"]
    if not isinstance(tokens, list) or not tokens or not all(isinstance(t, str) for t in tokens):
        raise CorpusError(f"line {line_no}: 'tokens' must be a non-empty list of strings")
    n = len(tokens)
    for key in ("head", "tail"):
        idx = rec[key]
        if not isinstance(idx, int) or not 0 <= idx < n:
            raise CorpusError(f"line {line_no}: '{key}' index {idx!r} out of range for {n} tokens")
    if rec["head"] == rec["tail"]:
        raise CorpusError(f"line {line_no}: head and tail indices coincide")
    for mention in rec.get("gold_mentions") or []:
        if not all(isinstance(i, int) and 0 <= i < n for i in mention):
            raise CorpusError(f"line {line_no}: gold mention index out of range")
    split = rec.get("split", "train")
    if split not in ("train", "test"):
        raise CorpusError(f"line {line_no}: unknown split {split!r}")


def _pad_tokens(tokens: list[str]) -> list[str]:
    if len(tokens) >= MIN_SENTENCE_LEN:
        return list(tokens)
    return list(tokens) + [PAD_TOKEN] * (MIN_SENTENCE_LEN - len(tokens))


def load_jsonl(path) -> Corpus:
    """Parse a JSONL corpus file, group sentences into bags, and build the
    vocabulary from training-split tokens (first-occurrence order).
    """
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            _validate_record(rec, line_no)
            records.append(rec)

    vocab = Vocabulary()
    for rec in records:
        if rec.get("split", "train") == "train":
            for token in rec["tokens"]:
                vocab.add(token)

    relations: list[str] = []
    relation_ids: dict[str, int] = {}
    bag_order: dict[tuple, int] = {}
    bags: list[Bag] = []
    for rec in records:
        name = rec["relation"]
        if name not in relation_ids:
            relation_ids[name] = len(relations)
            relations.append(name)
        rel_id = relation_ids[name]
        tokens = _pad_tokens(rec["tokens"])
        gold = rec.get("gold_mentions")
        sentence = Sentence(
            tokens=tokens,
            token_ids=[vocab.id_of(t) for t in tokens],
            head_idx=rec["head"],
            tail_idx=rec["tail"],
            relation_id=rel_id,
            gold_mentions=None if gold is None else [sorted(m) for m in gold],
            is_noise=rec.get("is_noise"),
            split=rec.get("split", "train"),
        )
        key = (rec["tokens"][rec["head"]].lower(), rec["tokens"][rec["tail"]].lower(), name)
        if key not in bag_order:
            bag_order[key] = len(bags)
            bags.append(Bag(rel_id, key[0], key[1], []))
        bags[bag_order[key]].sentences.append(sentence)
    return Corpus(bags, vocab, relations)


def write_jsonl(corpus: Corpus, path) -> None:
    """Serialize a corpus; ``load_jsonl`` on the output reproduces it."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for bag in corpus.bags:
            for s in bag.sentences:
                rec = {
                    "tokens": s.tokens,
                    "head": s.head_idx,
                    "tail": s.tail_idx,
                    "relation": corpus.relations[s.relation_id],
                    "split": s.split,
                }
                if s.gold_mentions is not None:
                    rec["gold_mentions"] = s.gold_mentions
                if s.is_noise is not None:
                    rec["is_noise"] = s.is_noise
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def remove_tokens(sentence: Sentence, indices) -> Sentence:
    """Sentence with the indexed tokens deleted and entity indices shifted;
    padded back to the minimum length if the deletion leaves fewer than
    3 tokens.  Entity tokens cannot be removed.
    """
    drop = set(indices)
    if sentence.head_idx in drop or sentence.tail_idx in drop:
        raise ValueError("cannot remove an entity token")
    tokens = [t for j, t in enumerate(sentence.tokens) if j not in drop]
    token_ids = [t for j, t in enumerate(sentence.token_ids) if j not in drop]
    head = sentence.head_idx - sum(1 for j in drop if j < sentence.head_idx)
    tail = sentence.tail_idx - sum(1 for j in drop if j < sentence.tail_idx)
    while len(tokens) < MIN_SENTENCE_LEN:
        tokens.append(PAD_TOKEN)
        token_ids.append(PAD_ID)
    return replace(
        sentence,
        tokens=tokens,
        token_ids=token_ids,
        head_idx=head,
        tail_idx=tail,
        gold_mentions=None,
        is_noise=None,
    )


def normalized_surface(sentence: Sentence, indices) -> str:
    """Case-folded tokens joined by single spaces in index order."""
    return " ".join(sentence.tokens[j].lower() for j in indices)


def matches_gold(indices, gold_mentions) -> bool:
    """Whether an extracted index set is an acceptable match for a planted
    mention: the full planted set or a contiguous sub-span containing its
    head (first) word, i.e. a prefix of the planted index list.
    """
    if not indices or not gold_mentions:
        return False
    ext = list(indices)
    for gold in gold_mentions:
        if ext == list(gold[: len(ext)]):
            return True
    return False


def gold_surface_sets(corpus: Corpus) -> dict[int, set[str]]:
    """Acceptable mention surfaces per relation, derived from planted gold:
    each planted phrase contributes all its head-anchored prefixes.
    """
    out: dict[int, set[str]] = {r: set() for r in range(len(corpus.relations))}
    for sentence in corpus.sentences():
        if sentence.is_noise or not sentence.gold_mentions:
            continue
        for gold in sentence.gold_mentions:
            for ln in range(1, len(gold) + 1):
                out[sentence.relation_id].add(normalized_surface(sentence, gold[:ln]))
    return out


@dataclass
class GenConfig:
    n_relations: int
    mentions_per_relation: int
    bags: int
    sentences_per_bag: int
    noise_ratio: float
    seed: int
    min_fillers: int = 1
    max_fillers: int = 4
    test_fraction: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.noise_ratio < 1.0:
            raise ValueError("noise_ratio must be in [0, 1)")
        for name in ("n_relations", "mentions_per_relation", "bags", "sentences_per_bag"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.min_fillers < 1 or self.max_fillers < self.min_fillers:
            raise ValueError("filler range invalid (need 1 <= min <= max)")


# Small pools keep every filler and entity frequent corpus-wide, so neither
# offers a memorization handle for the relation label; only the planted
# phrases carry the relation signal.
_FILLER_POOL = [f"fill{i:02d}" for i in range(20)]
_ENTITY_POOL = [f"ent{i:02d}" for i in range(15)]


def _make_lexicons(cfg: GenConfig, rng) -> list[list[list[str]]]:
    """Per-relation planted phrases of 1-3 words.  Every phrase word is
    unique to its phrase corpus-wide, so the phrase (not the surrounding
    fillers) is what marks the relation; the first word is the phrase head.
    """
    lexicons = []
    for r in range(cfg.n_relations):
        phrases = []
        for m in range(cfg.mentions_per_relation):
            length = int(rng.integers(1, 4))
            phrase = [f"r{r}m{m}"] + [f"r{r}m{m}x{k}" for k in range(length - 1)]
            phrases.append(phrase)
        lexicons.append(phrases)
    return lexicons


def _build_sentence(rng, head: str, tail: str, phrase: list[str], cfg: GenConfig):
    """Token layout: fillers | head | fillers | phrase | fillers | tail | fillers.
    Returns (tokens, head_idx, tail_idx, phrase_indices).
    """
    total = int(rng.integers(cfg.min_fillers, cfg.max_fillers + 1))
    slots = rng.multinomial(total, [0.25] * 4)
    fill = lambda k: [str(w) for w in rng.choice(_FILLER_POOL, size=k)]
    a, b, c, d = (int(x) for x in slots)
    tokens = fill(a) + [head] + fill(b) + list(phrase) + fill(c) + [tail] + fill(d)
    head_idx = a
    phrase_start = a + 1 + b
    tail_idx = phrase_start + len(phrase) + c
    phrase_indices = list(range(phrase_start, phrase_start + len(phrase)))
    return tokens, head_idx, tail_idx, phrase_indices


def generate_synthetic(config: GenConfig) -> Corpus:
    """Deterministic synthetic corpus: positive sentences embed entity pair
    plus one of their relation's planted phrases; noise sentences keep the
    bag's label but carry a different relation's phrase or none at all.
    Splits are assigned per bag (first ~(1-test_fraction) of each relation's
    bags are train).
    """
    rng = np.random.default_rng(config.seed)
    relations = [f"rel{r}" for r in range(config.n_relations)]
    lexicons = _make_lexicons(config, rng)

    used_pairs: set[tuple] = set()
    raw_bags = []  # (rel, head, tail, split, [sentence dicts])
    per_rel_count = [0] * config.n_relations
    bags_per_rel = [0] * config.n_relations
    for b in range(config.bags):
        bags_per_rel[b % config.n_relations] += 1

    for b in range(config.bags):
        rel = b % config.n_relations
        while True:
            head, tail = (str(w) for w in rng.choice(_ENTITY_POOL, size=2, replace=False))
            if (head, tail, rel) not in used_pairs:
                used_pairs.add((head, tail, rel))
                break
        total_rel = bags_per_rel[rel]
        if config.test_fraction <= 0.0 or total_rel < 2:
            n_train = total_rel
        else:
            # keep at least one bag on each side of the split
            n_train = int(np.ceil(total_rel * (1.0 - config.test_fraction)))
            n_train = min(max(n_train, 1), total_rel - 1)
        split = "train" if per_rel_count[rel] < n_train else "test"
        per_rel_count[rel] += 1

        sentences = []
        for _ in range(config.sentences_per_bag):
            is_noise = bool(rng.random() < config.noise_ratio)
            if is_noise:
                # Most noise carries no relation phrase at all; a third keeps
                # another relation's phrase under the wrong label.
                if config.n_relations > 1 and rng.random() < 1.0 / 3.0:
                    other = int(rng.integers(config.n_relations - 1))
                    other = other if other < rel else other + 1
                    phrase = lexicons[other][int(rng.integers(config.mentions_per_relation))]
                else:
                    phrase = []
                tokens, h, t, _ = _build_sentence(rng, head, tail, phrase, config)
                sentences.append(
                    dict(tokens=tokens, head=h, tail=t, gold=[], noise=True)
                )
            else:
                phrase = lexicons[rel][int(rng.integers(config.mentions_per_relation))]
                tokens, h, t, planted = _build_sentence(rng, head, tail, phrase, config)
                sentences.append(
                    dict(tokens=tokens, head=h, tail=t, gold=[planted], noise=False)
                )
        raw_bags.append((rel, head, tail, split, sentences))

    vocab = Vocabulary()
    for rel, head, tail, split, sentences in raw_bags:
        if split == "train":
            for s in sentences:
                for token in s["tokens"]:
                    vocab.add(token)

    bags = []
    for rel, head, tail, split, sentences in raw_bags:
        built = [
            Sentence(
                tokens=_pad_tokens(s["tokens"]),
                token_ids=[vocab.id_of(t) for t in _pad_tokens(s["tokens"])],
                head_idx=s["head"],
                tail_idx=s["tail"],
                relation_id=rel,
                gold_mentions=s["gold"],
                is_noise=s["noise"],
                split=split,
            )
            for s in sentences
        ]
        bags.append(Bag(rel, head, tail, built))
    return Corpus(bags, vocab, relations)
