"""Token embeddings: the FSML interchange format and a toy embedder.

FSML binary layout (little-endian throughout):

* magic bytes ``FSML``
* u32 version (must be 1)
* u32 dim
* records until EOF, each:
    * u8 kind: 0 = utterance, 1 = label
    * u16 id byte length, then that many UTF-8 bytes
    * u32 n_vectors
    * n_vectors * dim float32 values (row-major)

The toy embedder replaces a frozen pretrained encoder for self-contained
runs: each token's vector is drawn from a splitmix64 stream seeded with
``hash64(token) XOR seed`` (see :mod:`fewshot_mlc.rng` for the stream
specification), using dim approximately-normal values (sum of 12
uniforms minus 6), then normalized to unit L2 norm.  Identical tokens
therefore map to identical vectors on every platform.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .corpus import Domain
from .errors import DataError
from .rng import Rng, hash64

FSML_MAGIC = b"FSML"
FSML_VERSION = 1
KIND_UTTERANCE = 0
KIND_LABEL = 1


@dataclass
class EmbeddingTable:
    """Frozen id -> token-vector-sequence maps for utterances and labels.

    Matrices are stored float32 (the interchange precision) so that a
    write/load cycle reproduces the table bit-exactly.
    """

    dim: int
    utterance_vecs: dict[str, np.ndarray] = field(default_factory=dict)
    label_vecs: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, kind: int, key: str, vecs: np.ndarray) -> None:
        vecs = np.asarray(vecs, dtype=np.float32)
        if vecs.ndim != 2 or vecs.shape[1] != self.dim:
            raise DataError(
                f"entry {key!r}: expected shape (n, {self.dim}), got {vecs.shape}"
            )
        target = self.utterance_vecs if kind == KIND_UTTERANCE else self.label_vecs
        if key in target:
            raise DataError(f"duplicate embedding id {key!r}")
        target[key] = vecs


def load_embedding_table(path) -> EmbeddingTable:
    """Read an FSML file; errors name the offending byte offset."""
    with open(path, "rb") as fh:
        data = fh.read()

    if data[:4] != FSML_MAGIC:
        raise DataError(f"{path}: bad magic {data[:4]!r} at offset 0")
    if len(data) < 12:
        raise DataError(f"{path}: truncated header at offset {len(data)}")
    version, dim = struct.unpack_from("<II", data, 4)
    if version != FSML_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    if dim < 1:
        raise DataError(f"{path}: invalid dim {dim}")

    table = EmbeddingTable(dim=dim)
    offset = 12
    total = len(data)
    while offset < total:
        base = offset
        if offset + 3 > total:
            raise DataError(f"{path}: truncated record header at offset {base}")
        kind = data[offset]
        if kind not in (KIND_UTTERANCE, KIND_LABEL):
            raise DataError(f"{path}: unknown record kind {kind} at offset {base}")
        (id_len,) = struct.unpack_from("<H", data, offset + 1)
        offset += 3
        if offset + id_len + 4 > total:
            raise DataError(f"{path}: truncated record id at offset {base}")
        key = data[offset:offset + id_len].decode("utf-8")
        offset += id_len
        (n_vectors,) = struct.unpack_from("<I", data, offset)
        offset += 4
        payload = n_vectors * dim * 4
        if offset + payload > total:
            raise DataError(f"{path}: truncated payload at offset {offset}")
        vecs = np.frombuffer(data, dtype="<f4", count=n_vectors * dim, offset=offset)
        offset += payload
        table.add(kind, key, vecs.reshape(n_vectors, dim).copy())
    return table


def write_embedding_table(table: EmbeddingTable, path) -> None:
    """Write an FSML file; reading it back reproduces the table bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(FSML_MAGIC)
        fh.write(struct.pack("<II", FSML_VERSION, table.dim))
        for kind, entries in ((KIND_UTTERANCE, table.utterance_vecs),
                              (KIND_LABEL, table.label_vecs)):
            for key, vecs in entries.items():
                raw = key.encode("utf-8")
                if len(raw) > 0xFFFF:
                    raise DataError(f"id too long to serialize: {key!r}")
                fh.write(struct.pack("<BH", kind, len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<I", vecs.shape[0]))
                fh.write(np.ascontiguousarray(vecs, dtype="<f4").tobytes())


def toy_embed(tokens, dim: int, seed: int) -> np.ndarray:
    """Deterministic pseudo-embeddings, one unit-norm row per token."""
    if dim < 2:
        raise ValueError("toy embeddings need dim >= 2")
    rows = np.empty((len(tokens), dim), dtype=np.float64)
    for r, token in enumerate(tokens):
        stream = Rng(hash64(token) ^ seed)
        for c in range(dim):
            rows[r, c] = sum(stream.random() for _ in range(12)) - 6.0
        norm = float(np.linalg.norm(rows[r]))
        if norm < 1e-12:
            rows[r, 0] = 1.0
            norm = 1.0
        rows[r] /= norm
    return rows


def build_toy_table(domains: list[Domain], dim: int, seed: int) -> EmbeddingTable:
    """Toy-embed every utterance and label name of the given domains."""
    table = EmbeddingTable(dim=dim)
    cache: dict[str, np.ndarray] = {}

    def vector(token: str) -> np.ndarray:
        if token not in cache:
            cache[token] = toy_embed([token], dim, seed)[0]
        return cache[token]

    for domain in domains:
        for item in domain.pool:
            vecs = np.stack([vector(t) for t in item.utterance.tokens])
            table.add(KIND_UTTERANCE, item.id, vecs)
        for name, toks in zip(domain.label_space.names, domain.label_space.name_tokens):
            if name in table.label_vecs:
                continue  # shared across domains
            table.add(KIND_LABEL, name, np.stack([vector(t) for t in toks]))
    return table


def sentence_embedding(vecs: np.ndarray) -> np.ndarray:
    """Mean over token vectors."""
    vecs = np.asarray(vecs, dtype=np.float64)
    if vecs.ndim != 2 or vecs.shape[0] == 0:
        raise ValueError("sentence_embedding needs at least one token vector")
    return vecs.mean(axis=0)


def label_name_embedding(label: str, table: EmbeddingTable) -> np.ndarray:
    """Mean over a label name's token vectors (the label's anchor)."""
    if label not in table.label_vecs:
        raise DataError(f"no embedding entry for label {label!r}")
    return sentence_embedding(table.label_vecs[label])


def bind_check(table: EmbeddingTable, domain: Domain) -> None:
    """Verify the table covers every utterance id and label of a domain."""
    missing_utts = [item.id for item in domain.pool if item.id not in table.utterance_vecs]
    missing_labels = [n for n in domain.label_space.names if n not in table.label_vecs]
    if missing_utts or missing_labels:
        parts = []
        if missing_utts:
            parts.append(f"{len(missing_utts)} utterances (first: {missing_utts[0]!r})")
        if missing_labels:
            parts.append(f"labels {missing_labels}")
        raise DataError(f"domain {domain.name!r}: embedding table missing " + ", ".join(parts))
