import json
import os

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")

HIDDEN_SIZE = 32

_WORDS = [
    "what", "time", "and", "where", "when", "is", "the", "alarm", "set",
    "query", "cancel", "flight", "hotel", "book", "music", "play", "weather",
    "check", "route", "find", "now", "today", "tomorrow", "please", "city",
    "home", "work", "meeting", "remind", "me", "to", "at",
]


def build_tiny_encoder(root):
    """A small randomly initialized BERT saved to disk, WordPiece vocab
    covering the test corpus plus subword pieces for everything else."""
    import torch
    from transformers import BertConfig, BertModel, BertTokenizerFast

    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + _WORDS
    vocab += [f"##{c}" for c in "abcdefghijklmnopqrstuvwxyz0123456789"]
    vocab += list("abcdefghijklmnopqrstuvwxyz0123456789?.!,;")
    (root / "vocab.txt").write_text("\n".join(vocab) + "\n", encoding="utf-8")

    tokenizer = BertTokenizerFast(vocab_file=str(root / "vocab.txt"),
                                  do_lower_case=True)
    config = BertConfig(
        vocab_size=len(vocab), hidden_size=HIDDEN_SIZE, num_hidden_layers=2,
        num_attention_heads=2, intermediate_size=64,
        max_position_embeddings=128,
    )
    torch.manual_seed(1234)
    model = BertModel(config)
    model.save_pretrained(root)
    tokenizer.save_pretrained(root)
    return str(root)


def write_corpus(base, domains):
    """domains: {name: (labels, [(id, tokens, labels), ...])}"""
    for name, (labels, records) in domains.items():
        d = base / name
        d.mkdir(parents=True)
        (d / "labels.json").write_text(
            json.dumps({"domain": name, "labels": labels}), encoding="utf-8")
        with (d / "data.jsonl").open("w", encoding="utf-8") as fh:
            for uid, tokens, rec_labels in records:
                fh.write(json.dumps({
                    "id": uid, "text": " ".join(tokens),
                    "tokens": tokens, "labels": rec_labels,
                }) + "\n")
    return base


def build_sample_corpus(tmp_path):
    """50 utterances across two domains, enough for the conformance gate."""
    words = _WORDS
    domains = {}
    uid = 0
    for dom_idx, name in enumerate(("schedule", "navigate")):
        labels = ["set_alarm", "query_time"] if dom_idx == 0 else \
                 ["find_route", "check_weather"]
        records = []
        for i in range(25):
            tokens = [words[(uid * 3 + j) % len(words)] for j in range(3 + i % 5)]
            label = labels[i % 2]
            records.append((f"{name}-{uid:03d}", tokens, [label]))
            uid += 1
        domains[name] = (labels, records)
    return write_corpus(tmp_path / "corpus", domains)
