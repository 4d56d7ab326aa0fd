import struct

import numpy as np
import pytest

from fsml_export.export import (
    Encoder,
    ExportError,
    ExportJob,
    export,
    read_corpus,
    tokenize_label_name,
)

from encoder_fixtures import HIDDEN_SIZE, write_corpus


def test_read_corpus_counts(sample_corpus):
    corpus = read_corpus(sample_corpus)
    assert len(corpus.utterances) == 50
    assert len(corpus.labels) == 4


def test_read_corpus_duplicate_id(tmp_path):
    write_corpus(tmp_path / "c", {
        "a": (["x_y"], [("dup", ["what"], ["x_y"]), ("dup", ["time"], ["x_y"])]),
    })
    with pytest.raises(ExportError, match="dup"):
        read_corpus(tmp_path / "c")


def test_label_name_tokenization():
    assert tokenize_label_name("set_alarm") == ["set", "alarm"]
    assert tokenize_label_name("Check-Weather now") == ["check", "weather", "now"]


def test_export_record_count_and_header(sample_corpus, tiny_encoder, tmp_path):
    out = tmp_path / "emb.fsml"
    export(ExportJob(corpus=str(sample_corpus), encoder=tiny_encoder, out=str(out)))
    data = out.read_bytes()
    assert data[:4] == b"FSML"
    version, dim = struct.unpack_from("<II", data, 4)
    assert version == 1
    assert dim == HIDDEN_SIZE  # header dim equals encoder hidden size

    # walk the records: 50 utterances + 4 labels
    offset = 12
    kinds = []
    while offset < len(data):
        kind = data[offset]
        (id_len,) = struct.unpack_from("<H", data, offset + 1)
        offset += 3 + id_len
        (n_vec,) = struct.unpack_from("<I", data, offset)
        offset += 4 + n_vec * dim * 4
        kinds.append(kind)
    assert kinds.count(0) == 50
    assert kinds.count(1) == 4


def test_export_loads_in_engine_with_zero_bind_errors(sample_corpus, tiny_encoder,
                                                      tmp_path):
    # Conformance gate: the primary engine must accept the file as-is.
    from fewshot_mlc.corpus import load_corpus
    from fewshot_mlc.embeddings import bind_check, load_embedding_table

    out = tmp_path / "emb.fsml"
    export(ExportJob(corpus=str(sample_corpus), encoder=tiny_encoder, out=str(out)))

    table = load_embedding_table(out)
    assert table.dim == HIDDEN_SIZE
    domains = load_corpus(sample_corpus)
    for domain in domains:
        bind_check(table, domain)  # raises on any missing id or label
    total = sum(len(d.pool) for d in domains)
    assert total == 50
    assert len(table.utterance_vecs) == 50
    print("[PASS] export-conformance: 0 bind errors on 50-utterance corpus, "
          f"dim={table.dim}")


def test_vector_rows_align_with_corpus_tokens(sample_corpus, tiny_encoder, tmp_path):
    from fewshot_mlc.corpus import load_corpus
    from fewshot_mlc.embeddings import load_embedding_table

    out = tmp_path / "emb.fsml"
    export(ExportJob(corpus=str(sample_corpus), encoder=tiny_encoder, out=str(out)))
    table = load_embedding_table(out)
    for domain in load_corpus(sample_corpus):
        for item in domain.pool:
            assert table.utterance_vecs[item.id].shape == \
                (len(item.utterance.tokens), HIDDEN_SIZE)
        for name, toks in zip(domain.label_space.names,
                              domain.label_space.name_tokens):
            assert table.label_vecs[name].shape == (len(toks), HIDDEN_SIZE)


def test_export_is_deterministic(sample_corpus, tiny_encoder, tmp_path):
    a = tmp_path / "a.fsml"
    b = tmp_path / "b.fsml"
    export(ExportJob(corpus=str(sample_corpus), encoder=tiny_encoder, out=str(a)))
    export(ExportJob(corpus=str(sample_corpus), encoder=tiny_encoder, out=str(b)))
    assert a.read_bytes() == b.read_bytes()


def test_subword_pooling_matches_manual_mean(tiny_encoder):
    # "alarms" splits into wordpieces; the exported row must equal the
    # mean of its subword vectors.
    import torch

    encoder = Encoder(tiny_encoder)
    tokens = ["set", "alarms", "now"]
    [pooled] = encoder.encode_batch([tokens])
    assert pooled.shape == (3, HIDDEN_SIZE)

    enc = encoder.tokenizer([tokens], is_split_into_words=True, return_tensors="pt")
    with torch.no_grad():
        hidden = encoder.model(**enc).last_hidden_state[0].numpy()
    word_ids = enc.word_ids(batch_index=0)
    for w in range(3):
        rows = [hidden[p] for p, wid in enumerate(word_ids) if wid == w]
        manual = np.mean(rows, axis=0)
        np.testing.assert_allclose(pooled[w], manual.astype(np.float32), atol=1e-6)


def test_truncation_alignment_failure_names_utterance(tmp_path, tiny_encoder):
    corpus = write_corpus(tmp_path / "c", {
        "a": (["x_y"], [
            ("ok-1", ["what", "time"], ["x_y"]),
            ("too-long-1", ["what"] * 40, ["x_y"]),
        ]),
    })
    with pytest.raises(ExportError, match="too-long-1"):
        export(ExportJob(corpus=str(corpus), encoder=tiny_encoder,
                         out=str(tmp_path / "x.fsml"), max_length=8))
    assert not (tmp_path / "x.fsml").exists()  # atomic: nothing half-written
