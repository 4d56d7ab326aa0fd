"""Label-instance relevance scores (dot-product similarity)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import LabelSpace, Utterance
from .embeddings import EmbeddingTable, sentence_embedding
from .episodes import SupportSet
from .errors import DataError, NumericError
from .labelrep import LabelReps, _project


@dataclass(frozen=True)
class RelevanceScores:
    scores: np.ndarray  # (N,), label-space order
    query_id: str

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.scores)):
            raise NumericError(f"non-finite relevance score for query {self.query_id!r}")


def _query_embedding(query: Utterance, table: EmbeddingTable,
                     proj: np.ndarray | None) -> np.ndarray:
    if query.id not in table.utterance_vecs:
        raise DataError(f"no embedding entry for utterance {query.id!r}")
    return _project(sentence_embedding(table.utterance_vecs[query.id]), proj)


def relevance_scores(query: Utterance, reps: LabelReps, table: EmbeddingTable,
                     proj: np.ndarray | None = None) -> RelevanceScores:
    """Dot products against anchored label representations.

    With beta 0 the representations are plain prototypes, which is the
    prototypical-network baseline scorer.
    """
    q = _query_embedding(query, table, proj)
    return RelevanceScores(scores=reps.anchored @ q, query_id=query.id)


def matching_scores(query: Utterance, support: SupportSet, label_space: LabelSpace,
                    table: EmbeddingTable,
                    proj: np.ndarray | None = None) -> RelevanceScores:
    """Matching-network-style scorer: per label, the mean dot product
    between the query and that label's support embeddings."""
    q = _query_embedding(query, table, proj)
    scores = np.empty(len(label_space), dtype=np.float64)
    for i, name in enumerate(label_space.names):
        dots = [
            float(q @ _project(sentence_embedding(table.utterance_vecs[item.id]), proj))
            for item in support.items if name in item.labels
        ]
        if not dots:
            raise ValueError(f"label {name!r} has no support items")
        scores[i] = sum(dots) / len(dots)
    return RelevanceScores(scores=scores, query_id=query.id)
