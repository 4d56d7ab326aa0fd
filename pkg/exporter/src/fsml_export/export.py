"""Corpus-to-FSML export with a pretrained transformer encoder.

Reads the corpus directory layout (per-domain ``labels.json`` +
``data.jsonl``), runs every utterance through the encoder, mean-pools
subword vectors back onto the corpus tokens, and writes one FSML record
per utterance id plus one per label name.  The engine consuming the
file stays embedding-agnostic: it sees per-token float32 vectors only.

FSML layout (little-endian): magic ``FSML``, u32 version=1, u32 dim,
then records of (u8 kind [0=utterance, 1=label], u16 id length, id
UTF-8 bytes, u32 n_vectors, n_vectors*dim float32).
"""

from __future__ import annotations

import json
import os
import re
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

FSML_MAGIC = b"FSML"
FSML_VERSION = 1
KIND_UTTERANCE = 0
KIND_LABEL = 1

_NAME_SPLIT = re.compile(r"[_\-\s]+")


class ExportError(Exception):
    pass


@dataclass(frozen=True)
class ExportJob:
    corpus: str
    encoder: str
    out: str
    max_length: int = 128
    batch_size: int = 16
    device: str = "cpu"


@dataclass
class CorpusRecord:
    uid: str
    tokens: list[str]


@dataclass
class Corpus:
    utterances: list[CorpusRecord] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)


def tokenize_label_name(name: str) -> list[str]:
    """Same rule the engine applies: split on _, -, whitespace; lowercase."""
    tokens = [t for t in _NAME_SPLIT.split(name.lower()) if t]
    if not tokens:
        raise ExportError(f"label name {name!r} tokenizes to nothing")
    return tokens


def read_corpus(path: str | Path) -> Corpus:
    path = Path(path)
    if not path.is_dir():
        raise ExportError(f"{path}: not a directory")
    corpus = Corpus()
    seen_ids: set[str] = set()
    seen_labels: set[str] = set()
    for domain_dir in sorted(p for p in path.iterdir() if p.is_dir()):
        labels_path = domain_dir / "labels.json"
        data_path = domain_dir / "data.jsonl"
        if not labels_path.is_file() or not data_path.is_file():
            raise ExportError(f"{domain_dir}: expected labels.json and data.jsonl")
        header = json.loads(labels_path.read_text(encoding="utf-8"))
        for label in header["labels"]:
            if label not in seen_labels:
                seen_labels.add(label)
                corpus.labels.append(label)
        with data_path.open(encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                uid = str(rec["id"])
                if uid in seen_ids:
                    raise ExportError(f"{data_path}:{line_no}: duplicate id {uid!r}")
                seen_ids.add(uid)
                tokens = [str(t) for t in rec["tokens"]]
                if not tokens:
                    raise ExportError(f"{data_path}:{line_no}: empty token list")
                corpus.utterances.append(CorpusRecord(uid=uid, tokens=tokens))
    if not corpus.utterances:
        raise ExportError(f"{path}: no utterances found")
    return corpus


class Encoder:
    """Thin wrapper: tokenizes pre-split words, returns per-word vectors."""

    def __init__(self, name_or_path: str, device: str = "cpu",
                 max_length: int = 128) -> None:
        self.tokenizer = AutoTokenizer.from_pretrained(name_or_path)
        self.model = AutoModel.from_pretrained(name_or_path)
        self.model.eval()
        self.device = torch.device(device)
        self.model.to(self.device)
        self.max_length = max_length
        self.hidden_size = int(self.model.config.hidden_size)

    @torch.no_grad()
    def encode_batch(self, token_lists: list[list[str]]) -> list[np.ndarray]:
        enc = self.tokenizer(
            token_lists,
            is_split_into_words=True,
            padding=True,
            truncation=True,
            max_length=self.max_length,
            return_tensors="pt",
        ).to(self.device)
        hidden = self.model(**enc).last_hidden_state.cpu().numpy()

        out: list[np.ndarray] = []
        for row, tokens in enumerate(token_lists):
            word_ids = enc.word_ids(batch_index=row)
            pooled = np.zeros((len(tokens), self.hidden_size), dtype=np.float64)
            counts = np.zeros(len(tokens), dtype=np.int64)
            for pos, wid in enumerate(word_ids):
                if wid is None:
                    continue
                pooled[wid] += hidden[row, pos]
                counts[wid] += 1
            if np.any(counts == 0):
                missing = int(np.argmin(counts))
                raise ExportError(
                    f"no subword vectors for token {tokens[missing]!r} "
                    f"(position {missing}); increase max_length")
            out.append((pooled / counts[:, None]).astype(np.float32))
        return out


def _write_record(fh, kind: int, key: str, vecs: np.ndarray) -> None:
    raw = key.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ExportError(f"id too long to serialize: {key!r}")
    fh.write(struct.pack("<BH", kind, len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", vecs.shape[0]))
    fh.write(np.ascontiguousarray(vecs, dtype="<f4").tobytes())


def export(job: ExportJob) -> Path:
    """Encode the corpus and write the FSML file atomically."""
    corpus = read_corpus(job.corpus)
    encoder = Encoder(job.encoder, device=job.device, max_length=job.max_length)

    out_path = Path(job.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=out_path.parent, suffix=".fsml.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(FSML_MAGIC)
            fh.write(struct.pack("<II", FSML_VERSION, encoder.hidden_size))
            for start in range(0, len(corpus.utterances), job.batch_size):
                batch = corpus.utterances[start:start + job.batch_size]
                try:
                    vectors = encoder.encode_batch([r.tokens for r in batch])
                except ExportError:
                    # re-encode one by one so the error names the culprit
                    for rec in batch:
                        try:
                            encoder.encode_batch([rec.tokens])
                        except ExportError as exc:
                            raise ExportError(
                                f"alignment failure for utterance "
                                f"{rec.uid!r}: {exc}") from exc
                    raise
                for rec, vecs in zip(batch, vectors):
                    _write_record(fh, KIND_UTTERANCE, rec.uid, vecs)
            label_tokens = [tokenize_label_name(l) for l in corpus.labels]
            for start in range(0, len(corpus.labels), job.batch_size):
                names = corpus.labels[start:start + job.batch_size]
                vectors = encoder.encode_batch(label_tokens[start:start + job.batch_size])
                for name, vecs in zip(names, vectors):
                    _write_record(fh, KIND_LABEL, name, vecs)
        os.replace(tmp_name, out_path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return out_path
