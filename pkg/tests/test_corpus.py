import json

import pytest

from fewshot_mlc.corpus import (
    SynthSpec,
    generate_synthetic,
    load_corpus,
    load_domain,
    save_domain,
    tokenize_label_name,
)
from fewshot_mlc.errors import ConfigError, DataError


def _write_domain(tmp_path, name="alpha", labels=("query_time", "set_alarm"),
                  records=None):
    d = tmp_path / name
    d.mkdir()
    (d / "labels.json").write_text(
        json.dumps({"domain": name, "labels": list(labels)}), encoding="utf-8")
    if records is None:
        records = [
            {"id": "u1", "text": "what time", "tokens": ["what", "time"],
             "labels": ["query_time"]},
            {"id": "u2", "text": "set alarm", "tokens": ["set", "alarm"],
             "labels": ["set_alarm"]},
            {"id": "u3", "text": "time and alarm", "tokens": ["time", "and", "alarm"],
             "labels": ["query_time", "set_alarm"]},
        ]
    with (d / "data.jsonl").open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return d


def test_load_valid_domain(tmp_path):
    _write_domain(tmp_path)
    domains = load_corpus(tmp_path)
    assert len(domains) == 1
    assert len(domains[0].pool) == 3
    assert domains[0].label_space.names == ("query_time", "set_alarm")
    assert domains[0].pool[0].utterance.tokens == ("what", "time")


def test_unknown_label_names_the_label(tmp_path):
    _write_domain(tmp_path, records=[
        {"id": "u1", "text": "x", "tokens": ["x"], "labels": ["foo"]},
        {"id": "u2", "text": "y", "tokens": ["y"], "labels": ["query_time"]},
        {"id": "u3", "text": "z", "tokens": ["z"], "labels": ["set_alarm"]},
    ])
    with pytest.raises(DataError, match="foo"):
        load_corpus(tmp_path)


def test_duplicate_id_names_the_id(tmp_path):
    _write_domain(tmp_path, records=[
        {"id": "dup", "text": "x", "tokens": ["x"], "labels": ["query_time"]},
        {"id": "dup", "text": "y", "tokens": ["y"], "labels": ["set_alarm"]},
    ])
    with pytest.raises(DataError, match="dup"):
        load_corpus(tmp_path)


def test_empty_tokens_rejected(tmp_path):
    _write_domain(tmp_path, records=[
        {"id": "u1", "text": "", "tokens": [], "labels": ["query_time"]},
        {"id": "u2", "text": "y", "tokens": ["y"], "labels": ["set_alarm"]},
    ])
    with pytest.raises(DataError, match="tokens"):
        load_corpus(tmp_path)


def test_missing_field_names_file_and_line(tmp_path):
    _write_domain(tmp_path, records=[
        {"id": "u1", "text": "x", "tokens": ["x"], "labels": ["query_time"]},
        {"id": "u2", "tokens": ["y"], "labels": ["set_alarm"]},
    ])
    with pytest.raises(DataError, match=r"data\.jsonl:2"):
        load_corpus(tmp_path)


def test_unused_label_rejected(tmp_path):
    _write_domain(tmp_path, labels=("query_time", "set_alarm", "never_used"))
    with pytest.raises(DataError, match="never_used"):
        load_corpus(tmp_path)


def test_label_name_tokenization():
    assert tokenize_label_name("query_time") == ("query", "time")
    assert tokenize_label_name("Check-Status now") == ("check", "status", "now")
    with pytest.raises(DataError):
        tokenize_label_name("___")


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

def test_p_multi_zero_forces_single_labels():
    domain = generate_synthetic(SynthSpec(n_labels=2, pool_size=40, p_multi=0.0), 1)
    assert len(domain.pool) == 40
    assert all(len(item.labels) == 1 for item in domain.pool)
    used = {l for item in domain.pool for l in item.labels}
    assert used == set(domain.label_space.names)


def test_same_seed_identical_domains():
    spec = SynthSpec(n_labels=4, pool_size=200, p_multi=0.25)
    assert generate_synthetic(spec, 7) == generate_synthetic(spec, 7)


def test_different_seed_differs():
    spec = SynthSpec(n_labels=4, pool_size=200, p_multi=0.25)
    assert generate_synthetic(spec, 7) != generate_synthetic(spec, 8)


def test_multi_label_fraction_near_p_multi():
    # Binomial oracle: count multi-label items over the generated pool;
    # n=200, p=0.25 puts [0.15, 0.35] at more than three standard
    # deviations around the mean.
    domain = generate_synthetic(SynthSpec(n_labels=4, pool_size=200, p_multi=0.25), 7)
    fraction = sum(1 for item in domain.pool if len(item.labels) > 1) / len(domain.pool)
    assert 0.15 <= fraction <= 0.35


def test_every_label_covers_minimum():
    spec = SynthSpec(n_labels=8, pool_size=120, p_multi=0.2)
    domain = generate_synthetic(spec, 3)
    floor = -(-spec.pool_size // (2 * spec.n_labels))  # ceil
    for name in domain.label_space.names:
        count = sum(1 for item in domain.pool if name in item.labels)
        assert count >= floor, f"{name} appears {count} < {floor} times"


def test_bad_spec_rejected():
    with pytest.raises(ConfigError):
        SynthSpec(n_labels=1, pool_size=40)
    with pytest.raises(ConfigError):
        SynthSpec(n_labels=4, pool_size=4)
    with pytest.raises(ConfigError):
        SynthSpec(n_labels=4, pool_size=40, vocab_per_label=0)


def test_save_load_round_trip(tmp_path):
    domain = generate_synthetic(SynthSpec(n_labels=3, pool_size=60, p_multi=0.3), 11)
    save_domain(domain, tmp_path)
    loaded = load_domain(tmp_path / domain.name)
    assert loaded == domain


def test_save_twice_identical_bytes(tmp_path):
    domain = generate_synthetic(SynthSpec(n_labels=3, pool_size=60), 11)
    a = tmp_path / "a"
    b = tmp_path / "b"
    save_domain(domain, a)
    save_domain(domain, b)
    assert (a / domain.name / "data.jsonl").read_bytes() == \
        (b / domain.name / "data.jsonl").read_bytes()
