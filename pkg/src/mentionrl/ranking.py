"""Corpus-level mention ranking: count statistics over extractions, the
product score P(mention|relation) * P(relation|mention), and top-N lexicon
construction.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

from .corpus import Corpus
from .extractor import MentionResult


@dataclass
class MentionCounts:
    n_mr: dict  # (surface, relation_id) -> times extracted for that relation
    n_r: dict   # relation_id -> sentences labeled with the relation
    n_m: dict   # surface -> times extracted overall


def accumulate(extractions: list[MentionResult], corpus: Corpus) -> MentionCounts:
    """Count mention extractions; empty mentions are excluded.  ``n_r``
    counts every corpus sentence labeled with the relation, not only the
    selected ones."""
    n_mr: Counter = Counter()
    n_m: Counter = Counter()
    for mention in extractions:
        if mention.is_empty():
            continue
        n_mr[(mention.surface, mention.sentence.relation_id)] += 1
        n_m[mention.surface] += 1
    n_r: Counter = Counter()
    for sentence in corpus.sentences():
        n_r[sentence.relation_id] += 1
    return MentionCounts(dict(n_mr), dict(n_r), dict(n_m))


def score(surface: str, relation_id: int, counts: MentionCounts) -> float:
    """P(m|r) * P(r|m) = (n_mr/n_r) * (n_mr/n_m); zero when any count is."""
    n_mr = counts.n_mr.get((surface, relation_id), 0)
    n_r = counts.n_r.get(relation_id, 0)
    n_m = counts.n_m.get(surface, 0)
    if n_mr == 0 or n_r == 0 or n_m == 0:
        return 0.0
    return (n_mr / n_r) * (n_mr / n_m)


@dataclass
class LexiconEntry:
    mention: str
    score: float
    count: int


@dataclass
class Lexicon:
    n_relations: int
    per_relation: dict = field(default_factory=dict)  # relation_id -> [LexiconEntry]

    def entries(self, relation_id: int) -> list[LexiconEntry]:
        return self.per_relation.get(relation_id, [])

    def surfaces(self, relation_id: int) -> list[str]:
        return [e.mention for e in self.entries(relation_id)]


def top_n(counts: MentionCounts, n: int, n_relations: int | None = None) -> Lexicon:
    """Per relation, mentions sorted by score descending, ties by higher
    extraction count then lexicographic surface, truncated to ``n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n_relations is None:
        n_relations = (max(counts.n_r) + 1) if counts.n_r else 0
    lexicon = Lexicon(n_relations)
    for rel in range(n_relations):
        scored = []
        for (surface, r), n_mr in counts.n_mr.items():
            if r != rel:
                continue
            scored.append(
                LexiconEntry(surface, score(surface, rel, counts), n_mr)
            )
        scored.sort(key=lambda e: (-e.score, -e.count, e.mention))
        lexicon.per_relation[rel] = scored[:n]
    return lexicon


def write_lexicon(lexicon: Lexicon, relations: list[str], path) -> None:
    """Lexicon JSON keyed by relation name, entries in rank order."""
    payload = {
        relations[rel]: [
            {"mention": e.mention, "score": e.score, "count": e.count}
            for e in lexicon.entries(rel)
        ]
        for rel in range(lexicon.n_relations)
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


def read_lexicon(path, relations: list[str]) -> Lexicon:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    lexicon = Lexicon(len(relations))
    index = {name: i for i, name in enumerate(relations)}
    for name, entries in payload.items():
        rel = index[name]
        lexicon.per_relation[rel] = [
            LexiconEntry(e["mention"], e["score"], e["count"]) for e in entries
        ]
    return lexicon
