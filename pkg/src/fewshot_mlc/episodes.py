"""K-shot support sets and few-shot episodes.

Support sets follow the minimum-including construction: greedily add
shuffled pool items until every label is covered K times, then walk the
candidates largest-label-set-first and drop any item whose removal keeps
all labels at K occurrences, skipping an otherwise-possible removal with
a configurable probability (0.2 by default).  With the skip probability
at zero the result is 1-minimal: removing any single item breaks
coverage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .corpus import Domain, LabeledUtterance
from .errors import DataError
from .rng import Rng


@dataclass(frozen=True)
class SupportSet:
    items: tuple[LabeledUtterance, ...]
    k: int

    def __post_init__(self) -> None:
        ids = [item.id for item in self.items]
        if len(set(ids)) != len(ids):
            raise DataError("support set contains duplicate utterance ids")

    def label_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for item in self.items:
            for label in item.labels:
                counts[label] = counts.get(label, 0) + 1
        return counts

    def ids(self) -> set[str]:
        return {item.id for item in self.items}


@dataclass(frozen=True)
class Episode:
    support: SupportSet
    queries: tuple[LabeledUtterance, ...]
    domain_name: str

    def __post_init__(self) -> None:
        support_ids = self.support.ids()
        for q in self.queries:
            if q.id in support_ids:
                raise DataError(f"query {q.id!r} also appears in the support set")


def check_coverage(support: SupportSet, label_names) -> bool:
    """True iff every label appears in at least k support items."""
    counts = support.label_counts()
    return all(counts.get(name, 0) >= support.k for name in label_names)


def build_support_set(domain: Domain, k: int, rng: Rng, skip_prob: float = 0.2) -> SupportSet:
    """Sample one K-shot support set from the domain pool."""
    if k < 1:
        raise ValueError("k must be positive")
    pool_counts: dict[str, int] = {}
    for item in domain.pool:
        for label in item.labels:
            pool_counts[label] = pool_counts.get(label, 0) + 1
    for name in domain.label_space.names:
        if pool_counts.get(name, 0) < k:
            raise DataError(
                f"domain {domain.name!r}: label {name!r} occurs "
                f"{pool_counts.get(name, 0)} time(s), need {k}"
            )

    shuffled = list(domain.pool)
    rng.shuffle(shuffled)

    counts = {name: 0 for name in domain.label_space.names}
    selected: list[LabeledUtterance] = []
    needed = len(counts)
    satisfied = 0
    for item in shuffled:
        if satisfied == needed:
            break
        if any(counts[label] < k for label in item.labels):
            selected.append(item)
            for label in item.labels:
                counts[label] += 1
                if counts[label] == k:
                    satisfied += 1

    # Removal pass: larger label sets first, ties in selection order.
    order = sorted(range(len(selected)), key=lambda i: (-len(selected[i].labels), i))
    kept = [True] * len(selected)
    for i in order:
        item = selected[i]
        if all(counts[label] - 1 >= k for label in item.labels):
            if skip_prob > 0.0 and rng.bernoulli(skip_prob):
                continue
            kept[i] = False
            for label in item.labels:
                counts[label] -= 1

    items = tuple(item for i, item in enumerate(selected) if kept[i])
    return SupportSet(items=items, k=k)


def build_split(domain: Domain, k: int, n_episodes: int, query_size: int,
                rng: Rng, skip_prob: float = 0.2) -> list[Episode]:
    """Sample n_episodes (support, query) pairs from one domain."""
    episodes: list[Episode] = []
    for _ in range(n_episodes):
        support = build_support_set(domain, k, rng, skip_prob=skip_prob)
        support_ids = support.ids()
        remaining = [item for item in domain.pool if item.id not in support_ids]
        if len(remaining) < query_size:
            raise DataError(
                f"domain {domain.name!r}: only {len(remaining)} utterances left "
                f"outside the support set, need {query_size} queries"
            )
        queries = tuple(rng.sample(remaining, query_size))
        episodes.append(Episode(support=support, queries=queries, domain_name=domain.name))
    return episodes


def save_split(episodes: list[Episode], path: str | Path) -> None:
    """Serialize episodes by id reference, one JSON array per split file."""
    records = [
        {
            "domain": ep.domain_name,
            "k": ep.support.k,
            "support_ids": [item.id for item in ep.support.items],
            "query_ids": [q.id for q in ep.queries],
        }
        for ep in episodes
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(records, fh, indent=2)
        fh.write("\n")


def load_split(path: str | Path, domains: list[Domain]) -> list[Episode]:
    """Resolve a split file against loaded domains."""
    by_name = {d.name: d for d in domains}
    with open(path, encoding="utf-8") as fh:
        try:
            records = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc.msg}") from exc
    episodes: list[Episode] = []
    for rec in records:
        if rec["domain"] not in by_name:
            raise DataError(f"{path}: unknown domain {rec['domain']!r}")
        domain = by_name[rec["domain"]]
        index = {item.id: item for item in domain.pool}
        try:
            support_items = tuple(index[i] for i in rec["support_ids"])
            queries = tuple(index[i] for i in rec["query_ids"])
        except KeyError as exc:
            raise DataError(f"{path}: unknown utterance id {exc.args[0]!r}") from exc
        episodes.append(Episode(
            support=SupportSet(items=support_items, k=int(rec["k"])),
            queries=queries,
            domain_name=domain.name,
        ))
    return episodes
