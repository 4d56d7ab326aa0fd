"""Prototype and anchored label representations.

A label's prototype is the mean embedding of the support items carrying
it; an item with m labels contributes to all m prototypes, which is what
lets co-labeled supports collapse onto the same vector.  The anchored
representation pulls each prototype toward the label-name embedding with
an interpolation factor beta, separating labels that share supports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import LabelSpace
from .embeddings import EmbeddingTable, label_name_embedding, sentence_embedding
from .episodes import SupportSet


def _project(vec: np.ndarray, proj: np.ndarray | None) -> np.ndarray:
    return vec if proj is None else proj @ vec


def prototype(label_index: int, support: SupportSet, label_space: LabelSpace,
              table: EmbeddingTable, proj: np.ndarray | None = None) -> np.ndarray:
    """Mean of the (projected) sentence embeddings of same-label supports."""
    name = label_space.names[label_index]
    members = [item for item in support.items if name in item.labels]
    if not members:
        raise ValueError(f"label {name!r} has no support items")
    embeds = [
        _project(sentence_embedding(table.utterance_vecs[item.id]), proj)
        for item in members
    ]
    return np.mean(embeds, axis=0)


def anchored_rep(label_index: int, support: SupportSet, label_space: LabelSpace,
                 table: EmbeddingTable, beta: float,
                 proj: np.ndarray | None = None) -> np.ndarray:
    """Convex combination of the label-name anchor and the prototype."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    name = label_space.names[label_index]
    anchor = _project(label_name_embedding(name, table), proj)
    proto = prototype(label_index, support, label_space, table, proj)
    return beta * anchor + (1.0 - beta) * proto


@dataclass(frozen=True)
class LabelReps:
    """Per-label prototypes and anchored representations, label-space order."""

    prototypes: np.ndarray   # (N, dim)
    anchored: np.ndarray     # (N, dim)
    counts: tuple[int, ...]  # support items per label
    beta: float


def compute_label_reps(support: SupportSet, label_space: LabelSpace,
                       table: EmbeddingTable, beta: float,
                       proj: np.ndarray | None = None) -> LabelReps:
    protos = []
    anchors = []
    counts = []
    for i, name in enumerate(label_space.names):
        protos.append(prototype(i, support, label_space, table, proj))
        anchors.append(anchored_rep(i, support, label_space, table, beta, proj))
        counts.append(sum(1 for item in support.items if name in item.labels))
    return LabelReps(
        prototypes=np.stack(protos),
        anchored=np.stack(anchors),
        counts=tuple(counts),
        beta=beta,
    )
