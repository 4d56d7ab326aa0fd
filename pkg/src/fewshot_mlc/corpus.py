"""Multi-label corpora partitioned into domains.

On-disk layout: a corpus directory holds one subdirectory per domain,
each with

* ``labels.json`` -- ``{"domain": str, "labels": [str, ...]}``
* ``data.jsonl`` -- one record per line:
  ``{"id": str, "text": str, "tokens": [str, ...], "labels": [str, ...]}``

Files are UTF-8 with LF line endings.  Domains load in sorted
subdirectory order, records in file order.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, DataError
from .rng import Rng

_NAME_SPLIT = re.compile(r"[_\-\s]+")


def tokenize_label_name(name: str) -> tuple[str, ...]:
    """Split a label name on underscores, hyphens, and whitespace; lowercase."""
    tokens = tuple(t for t in _NAME_SPLIT.split(name.lower()) if t)
    if not tokens:
        raise DataError(f"label name {name!r} tokenizes to nothing")
    return tokens


@dataclass(frozen=True)
class Utterance:
    """One user utterance: a unique id plus its pre-tokenized form."""

    id: str
    tokens: tuple[str, ...]
    text: str = ""

    def __post_init__(self) -> None:
        if not self.tokens:
            raise DataError(f"utterance {self.id!r} has no tokens")


@dataclass(frozen=True)
class LabeledUtterance:
    utterance: Utterance
    labels: frozenset[str]

    def __post_init__(self) -> None:
        if not self.labels:
            raise DataError(f"utterance {self.utterance.id!r} has an empty label set")

    @property
    def id(self) -> str:
        return self.utterance.id


@dataclass(frozen=True)
class LabelSpace:
    """Ordered, distinct label names; order defines label indices."""

    names: tuple[str, ...]
    name_tokens: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        if len(set(self.names)) != len(self.names):
            raise DataError("label names are not distinct")
        if len(self.name_tokens) != len(self.names):
            raise DataError("name_tokens length does not match names")

    @classmethod
    def from_names(cls, names: list[str] | tuple[str, ...]) -> "LabelSpace":
        names = tuple(names)
        return cls(names=names, name_tokens=tuple(tokenize_label_name(n) for n in names))

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"label {name!r} not in label space") from None


@dataclass(frozen=True)
class Domain:
    """A named label space plus its pool of labeled utterances."""

    name: str
    label_space: LabelSpace
    pool: tuple[LabeledUtterance, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        covered: set[str] = set()
        known = set(self.label_space.names)
        for item in self.pool:
            if item.id in seen:
                raise DataError(f"domain {self.name!r}: duplicate utterance id {item.id!r}")
            seen.add(item.id)
            for label in item.labels:
                if label not in known:
                    raise DataError(
                        f"domain {self.name!r}: utterance {item.id!r} uses unknown label {label!r}"
                    )
            covered |= item.labels
        missing = known - covered
        if missing:
            raise DataError(
                f"domain {self.name!r}: labels never used in pool: {sorted(missing)}"
            )

    def by_id(self, utterance_id: str) -> LabeledUtterance:
        for item in self.pool:
            if item.id == utterance_id:
                return item
        raise DataError(f"domain {self.name!r}: no utterance with id {utterance_id!r}")


def _parse_record(raw: dict, path: Path, line_no: int, known_labels: set[str]) -> LabeledUtterance:
    for key in ("id", "text", "tokens", "labels"):
        if key not in raw:
            raise DataError(f"{path}:{line_no}: missing field {key!r}")
    tokens = raw["tokens"]
    if not isinstance(tokens, list) or not tokens:
        raise DataError(f"{path}:{line_no}: 'tokens' must be a non-empty list")
    labels = raw["labels"]
    if not isinstance(labels, list) or not labels:
        raise DataError(f"{path}:{line_no}: 'labels' must be a non-empty list")
    if len(set(labels)) != len(labels):
        raise DataError(f"{path}:{line_no}: duplicate labels in {labels}")
    for label in labels:
        if label not in known_labels:
            raise DataError(f"{path}:{line_no}: label {label!r} not in label space")
    utt = Utterance(id=str(raw["id"]), tokens=tuple(str(t) for t in tokens), text=str(raw["text"]))
    return LabeledUtterance(utterance=utt, labels=frozenset(str(l) for l in labels))


def load_domain(domain_dir: str | Path) -> Domain:
    """Load one domain from a directory holding labels.json and data.jsonl."""
    domain_dir = Path(domain_dir)
    labels_path = domain_dir / "labels.json"
    data_path = domain_dir / "data.jsonl"
    if not labels_path.is_file():
        raise DataError(f"{labels_path}: missing labels file")
    if not data_path.is_file():
        raise DataError(f"{data_path}: missing data file")

    with labels_path.open(encoding="utf-8") as fh:
        try:
            header = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{labels_path}: invalid JSON: {exc.msg}") from exc
    if "domain" not in header or "labels" not in header:
        raise DataError(f"{labels_path}: expected keys 'domain' and 'labels'")
    label_space = LabelSpace.from_names([str(l) for l in header["labels"]])
    known = set(label_space.names)

    pool: list[LabeledUtterance] = []
    seen_ids: set[str] = set()
    with data_path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{data_path}:{line_no}: invalid JSON: {exc.msg}") from exc
            item = _parse_record(raw, data_path, line_no, known)
            if item.id in seen_ids:
                raise DataError(f"{data_path}:{line_no}: duplicate utterance id {item.id!r}")
            seen_ids.add(item.id)
            pool.append(item)

    return Domain(name=str(header["domain"]), label_space=label_space, pool=tuple(pool))


def load_corpus(path: str | Path) -> list[Domain]:
    """Load every domain under a corpus directory, in sorted directory order."""
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"{path}: not a directory")
    domain_dirs = sorted(p for p in path.iterdir() if p.is_dir())
    if not domain_dirs:
        raise DataError(f"{path}: no domain subdirectories found")
    return [load_domain(d) for d in domain_dirs]


def save_domain(domain: Domain, corpus_dir: str | Path) -> Path:
    """Write a domain under corpus_dir/<domain.name>/; returns the directory."""
    out = Path(corpus_dir) / domain.name
    out.mkdir(parents=True, exist_ok=True)
    header = {"domain": domain.name, "labels": list(domain.label_space.names)}
    with (out / "labels.json").open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(header, fh, indent=2)
        fh.write("\n")
    with (out / "data.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        for item in domain.pool:
            record = {
                "id": item.id,
                "text": item.utterance.text,
                "tokens": list(item.utterance.tokens),
                "labels": sorted(item.labels),
            }
            fh.write(json.dumps(record))
            fh.write("\n")
    return out


# ---------------------------------------------------------------------------
# Synthetic corpus generation
# ---------------------------------------------------------------------------

# Label names are verb_noun pairs; consecutive global indices share no noun
# within a window of 16, so every domain of up to 16 labels gets distinct
# private vocabularies.
_NAME_VERBS = (
    "query", "set", "cancel", "book", "find", "play", "check", "send",
    "update", "remove", "open", "close", "report", "confirm", "schedule", "locate",
)
_NAME_NOUNS = (
    "time", "alarm", "flight", "hotel", "music", "weather", "route", "message",
    "news", "event", "ticket", "order", "status", "meeting", "place", "reminder",
)

_INTERROGATIVES = ("what", "when", "where", "which", "how")


def synth_label_name(global_index: int) -> str:
    verb = _NAME_VERBS[(global_index + global_index // 16) % 16]
    noun = _NAME_NOUNS[global_index % 16]
    return f"{verb}_{noun}"


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic corpus generator.

    ``label_offset`` shifts the label-name window so that sibling domains
    overlap in label vocabulary, mimicking corpora whose domains share
    similar intents.
    """

    n_labels: int
    pool_size: int
    vocab_per_label: int = 12
    noise_vocab: int = 30
    p_multi: float = 0.2
    tokens_per_label: tuple[int, int] = (3, 7)
    name: str = "synth"
    label_offset: int = 0

    def __post_init__(self) -> None:
        if self.n_labels < 2:
            raise ConfigError("synthetic corpus needs at least 2 labels")
        if self.vocab_per_label < 1 or self.noise_vocab < 1:
            raise ConfigError("vocabulary sizes must be positive")
        if self.pool_size < 2 * self.n_labels:
            raise ConfigError("pool must hold at least 2 utterances per label")
        if not 0.0 <= self.p_multi <= 1.0:
            raise ConfigError("p_multi must be in [0, 1]")
        lo, hi = self.tokens_per_label
        if lo < 1 or hi < lo:
            raise ConfigError("tokens_per_label span must satisfy 1 <= lo <= hi")
        if self.label_offset + self.n_labels > 256:
            raise ConfigError("label_offset + n_labels must not exceed 256")


def _segment(rng: Rng, name_toks: tuple[str, ...], private: list[str],
             noise: list[str], span: tuple[int, int]) -> list[str]:
    # ~30% label-name tokens, ~50% private vocabulary, ~20% shared noise:
    # name tokens make label anchors informative, noise creates cross-label
    # similarity the thresholding has to cope with.
    length = span[0] + rng.randint(span[1] - span[0] + 1)
    tokens: list[str] = []
    for _ in range(length):
        u = rng.random()
        if u < 0.30:
            tokens.append(rng.choice(name_toks))
        elif u < 0.80:
            tokens.append(rng.choice(private))
        else:
            tokens.append(rng.choice(noise))
    return tokens


def generate_synthetic(spec: SynthSpec, seed: int) -> Domain:
    """Generate a deterministic synthetic domain.

    Single-label utterances draw from one label's vocabulary; multi-label
    utterances (probability ``p_multi``) concatenate 2-3 label segments,
    joining them with "and" about half the time so surface features
    correlate with the label count.  Every label is the designated label
    of ``pool_size // n_labels`` utterances, which guarantees coverage.
    """
    rng = Rng(seed)
    n = spec.n_labels
    names = [synth_label_name(spec.label_offset + i) for i in range(n)]
    label_space = LabelSpace.from_names(names)

    private = [
        [f"{label_space.name_tokens[i][1]}{j}" for j in range(spec.vocab_per_label)]
        for i in range(n)
    ]
    noise = [f"noise{j}" for j in range(spec.noise_vocab)]
    span = spec.tokens_per_label

    pool: list[LabeledUtterance] = []
    for idx in range(spec.pool_size):
        anchor = idx % n
        label_ids = [anchor]
        if rng.bernoulli(spec.p_multi):
            extra = 2 if rng.bernoulli(0.7) else 3
            others = [i for i in range(n) if i != anchor]
            label_ids += rng.sample(others, extra - 1)

        tokens: list[str] = []
        for pos, lab in enumerate(label_ids):
            if pos > 0 and rng.bernoulli(0.5):
                tokens.append("and")
            segment = _segment(rng, label_space.name_tokens[lab], private[lab], noise, span)
            tokens.extend(segment)
        if rng.bernoulli(0.3):
            tokens.insert(0, rng.choice(_INTERROGATIVES))
        u = rng.random()
        if u < 0.2:
            tokens.append("?")
        elif u < 0.5:
            tokens.append(".")

        utt = Utterance(
            id=f"{spec.name}-{idx:04d}",
            tokens=tuple(tokens),
            text=" ".join(tokens),
        )
        pool.append(LabeledUtterance(utterance=utt, labels=frozenset(names[i] for i in label_ids)))

    return Domain(name=spec.name, label_space=label_space, pool=tuple(pool))
