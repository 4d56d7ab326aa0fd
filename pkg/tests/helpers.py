import numpy as np

from fewshot_mlc.corpus import Domain, LabeledUtterance, LabelSpace, Utterance
from fewshot_mlc.embeddings import KIND_LABEL, KIND_UTTERANCE, EmbeddingTable


def make_domain(name, records, label_names=None):
    """Build a Domain from {id: (tokens, labels)} records."""
    if label_names is None:
        label_names = sorted({l for _, labels in records.values() for l in labels})
    pool = tuple(
        LabeledUtterance(
            utterance=Utterance(id=uid, tokens=tuple(tokens), text=" ".join(tokens)),
            labels=frozenset(labels),
        )
        for uid, (tokens, labels) in records.items()
    )
    return Domain(name=name, label_space=LabelSpace.from_names(label_names), pool=pool)


def make_table(dim, utterances=None, labels=None):
    """Build an EmbeddingTable from explicit {id: rows} matrices."""
    table = EmbeddingTable(dim=dim)
    for key, rows in (utterances or {}).items():
        table.add(KIND_UTTERANCE, key, np.atleast_2d(np.asarray(rows, dtype=np.float64)))
    for key, rows in (labels or {}).items():
        table.add(KIND_LABEL, key, np.atleast_2d(np.asarray(rows, dtype=np.float64)))
    return table


def basis(dim, index, scale=1.0):
    v = np.zeros(dim)
    v[index] = scale
    return v
