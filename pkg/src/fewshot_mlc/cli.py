"""Command-line surface.

Subcommands cover the whole pipeline: ``gen-synth`` writes a synthetic
corpus, ``embed-toy`` produces an FSML embedding file, ``episodes``
samples a split, ``train`` fits a model on source domains, ``eval``
cross-validates, ``predict`` scores one query, and ``ablate`` runs the
four-way model comparison.

Configuration comes from an optional JSON file (unknown keys are
rejected) with command-line flags taking precedence.  Exit codes:
0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .corpus import SynthSpec, generate_synthetic, load_corpus, save_domain
from .embeddings import (
    bind_check,
    build_toy_table,
    load_embedding_table,
    write_embedding_table,
)
from .episodes import build_split, save_split
from .errors import ConfigError, DataError, NumericError
from .evaluation import (
    ablation_run,
    cross_validate,
    summarize_reports,
    write_report_tsv,
)
from .rng import Rng, derive_seed
from .thresholding import MODES, default_lexicons, load_lexicons, predict
from .training import TrainConfig, load_model, save_model, train_pipeline


@dataclass
class Config:
    """Every knob of the pipeline; flags override config-file keys."""

    # paths (resolved against workdir)
    workdir: str = "."
    corpus: str = "corpus"
    embeddings: str = "embeddings.fsml"
    lexicons: str | None = None
    model: str = "model.json"
    out: str = "out"

    # synthetic corpus
    domains: int = 3
    labels: int = 8
    pool: int = 300
    p_multi: float = 0.2
    vocab_per_label: int = 12
    noise_vocab: int = 30
    span_lo: int = 3
    span_hi: int = 7

    # embeddings
    dim: int = 32

    # episodes
    domain: str | None = None
    k_shot: int = 1
    query_size: int = 16
    episodes_per_domain: int = 40
    eval_episodes: int = 40
    skip_prob: float = 0.2

    # training
    epochs: int = 15
    batch_size: int = 4
    lr_proj: float = 1e-2
    lr_kernel: float = 1e-2
    r_grid_step: float = 0.01
    mlp_layers: int = 2
    mlp_hidden: int = 10
    alpha: float = 0.3
    beta: float = 0.5
    epsilon: float = 1e-6
    seed: int = 1
    seeds: list[int] | None = None
    train_domains: list[str] | None = None
    beta_sweep: bool = False

    # evaluation / prediction
    mode: str = "calibrated"
    scorer: str = "alr"
    query_id: str | None = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.scorer not in ("alr", "matching"):
            raise ConfigError(f"scorer must be 'alr' or 'matching', got {self.scorer!r}")
        if self.dim < 2:
            raise ConfigError("embedding dim must be >= 2")
        if self.k_shot < 1:
            raise ConfigError("k_shot must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must be in [0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must be in [0, 1]")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.span_lo < 1 or self.span_hi < self.span_lo:
            raise ConfigError("token span must satisfy 1 <= lo <= hi")

    def path(self, name: str) -> Path:
        return Path(self.workdir) / getattr(self, name)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr_proj=self.lr_proj,
            lr_kernel=self.lr_kernel, r_grid_step=self.r_grid_step, seed=self.seed,
            beta=self.beta, mlp_layers=self.mlp_layers, mlp_hidden=self.mlp_hidden,
            k_shot=self.k_shot, episodes_per_domain=self.episodes_per_domain,
            eval_episodes=self.eval_episodes, query_size=self.query_size,
            alpha=self.alpha, epsilon=self.epsilon, skip_prob=self.skip_prob,
            beta_sweep=self.beta_sweep,
        )


_FIELD_NAMES = {f.name for f in dataclasses.fields(Config)}


def load_config(path: str | None, overrides: dict) -> Config:
    values: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc.msg}") from exc
        unknown = set(raw) - _FIELD_NAMES
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        values.update(raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = Config(**values)
    cfg.validate()
    return cfg


def _lexicons(cfg: Config):
    if cfg.lexicons is None:
        return default_lexicons()
    return load_lexicons(cfg.path("lexicons"))


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_synth(cfg: Config) -> int:
    out_dir = cfg.path("corpus")
    for d in range(cfg.domains):
        name = f"domain{d:02d}"
        spec = SynthSpec(
            n_labels=cfg.labels, pool_size=cfg.pool, vocab_per_label=cfg.vocab_per_label,
            noise_vocab=cfg.noise_vocab, p_multi=cfg.p_multi,
            tokens_per_label=(cfg.span_lo, cfg.span_hi), name=name, label_offset=d,
        )
        domain = generate_synthetic(spec, derive_seed(cfg.seed, "synth", name))
        save_domain(domain, out_dir)
        print(f"wrote {out_dir / name} ({len(domain.pool)} utterances, "
              f"{len(domain.label_space)} labels)")
    return 0


def cmd_embed_toy(cfg: Config) -> int:
    domains = load_corpus(cfg.path("corpus"))
    table = build_toy_table(domains, cfg.dim, cfg.seed)
    out = cfg.path("embeddings")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_embedding_table(table, out)
    print(f"wrote {out} ({len(table.utterance_vecs)} utterances, "
          f"{len(table.label_vecs)} labels, dim={table.dim})")
    return 0


def _select_domain(cfg: Config, domains):
    if cfg.domain is None:
        raise ConfigError("this command needs --domain")
    for d in domains:
        if d.name == cfg.domain:
            return d
    raise DataError(f"domain {cfg.domain!r} not found in corpus")


def cmd_episodes(cfg: Config) -> int:
    domains = load_corpus(cfg.path("corpus"))
    domain = _select_domain(cfg, domains)
    rng = Rng(derive_seed(cfg.seed, "episodes", domain.name))
    episodes = build_split(domain, cfg.k_shot, cfg.episodes_per_domain,
                           cfg.query_size, rng, skip_prob=cfg.skip_prob)
    out = cfg.path("out")
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"episodes_{domain.name}_k{cfg.k_shot}.json"
    save_split(episodes, path)
    print(f"wrote {path} ({len(episodes)} episodes)")
    return 0


def _load_bound(cfg: Config):
    domains = load_corpus(cfg.path("corpus"))
    table = load_embedding_table(cfg.path("embeddings"))
    for domain in domains:
        bind_check(table, domain)
    return domains, table


def cmd_train(cfg: Config) -> int:
    domains, table = _load_bound(cfg)
    if cfg.train_domains:
        wanted = set(cfg.train_domains)
        missing = wanted - {d.name for d in domains}
        if missing:
            raise DataError(f"unknown train domains: {sorted(missing)}")
        domains = [d for d in domains if d.name in wanted]
    lexicons = _lexicons(cfg)
    model, report = train_pipeline(domains, table, cfg.train_config(), lexicons)
    model_path = cfg.path("model")
    model_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, model_path)
    _write_json(cfg.path("out") / "train_report.json", report)
    print(f"wrote {model_path} (r={model.threshold.r:.2f}, "
          f"bandwidth={model.threshold.bandwidth:.4f})")
    return 0


def cmd_eval(cfg: Config) -> int:
    domains, table = _load_bound(cfg)
    lexicons = _lexicons(cfg)
    seeds = cfg.seeds or [cfg.seed]
    reports = cross_validate(domains, table, cfg.train_config(), lexicons,
                             mode=cfg.mode, scorer=cfg.scorer, seeds=seeds)
    summary = summarize_reports(reports)
    out = cfg.path("out")
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / f"eval_{cfg.mode}.json", {
        "mode": cfg.mode,
        "scorer": cfg.scorer,
        "k": cfg.k_shot,
        "seeds": seeds,
        "summary": summary,
        "reports": [r.to_dict() for r in reports],
    })
    write_report_tsv(reports, out / f"eval_{cfg.mode}.tsv")
    print(f"grand mean F1: {summary['grand_mean_f1']:.4f} "
          f"(label-count acc {summary['mean_label_count_acc']:.4f})")
    return 0


def cmd_predict(cfg: Config) -> int:
    if cfg.query_id is None:
        raise ConfigError("predict needs --query-id")
    domains, table = _load_bound(cfg)
    domain = _select_domain(cfg, domains)
    lexicons = _lexicons(cfg)
    model = load_model(cfg.path("model"))
    from .episodes import build_support_set

    rng = Rng(derive_seed(cfg.seed, "predict-support", domain.name))
    support = build_support_set(domain, cfg.k_shot, rng, skip_prob=cfg.skip_prob)
    query = domain.by_id(cfg.query_id)
    pred = predict(query.utterance, support, domain.label_space, table, lexicons,
                   model, mode=cfg.mode, scorer=cfg.scorer)
    doc = {
        "query_id": cfg.query_id,
        "mode": cfg.mode,
        "scores": {name: float(s) for name, s in
                   zip(domain.label_space.names, pred.scores.scores)},
        "t_meta": pred.t_meta,
        "t_est": pred.t_est,
        "t": pred.t,
        "n_est": pred.n_est,
        "labels": sorted(pred.labels),
        "gold": sorted(query.labels),
    }
    print(json.dumps(doc, indent=2))
    _write_json(cfg.path("out") / f"predict_{cfg.query_id}.json", doc)
    return 0


def cmd_ablate(cfg: Config) -> int:
    domains, table = _load_bound(cfg)
    lexicons = _lexicons(cfg)
    seeds = cfg.seeds or [cfg.seed]
    result = ablation_run(domains, table, cfg.train_config(), lexicons, seeds=seeds)
    _write_json(cfg.path("out") / f"ablation_k{cfg.k_shot}.json", result)
    for name, row in result["rows"].items():
        print(f"{name:8s} F1={row['mean_f1']:.4f} count-acc={row['label_count_acc']:.4f}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

_COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "embed-toy": cmd_embed_toy,
    "episodes": cmd_episodes,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "ablate": cmd_ablate,
}

_INT_FLAGS = ("domains", "labels", "pool", "vocab_per_label", "noise_vocab",
              "span_lo", "span_hi", "dim", "k_shot", "query_size",
              "episodes_per_domain", "eval_episodes", "epochs", "batch_size",
              "mlp_layers", "mlp_hidden", "seed")
_FLOAT_FLAGS = ("p_multi", "skip_prob", "lr_proj", "lr_kernel", "r_grid_step",
                "alpha", "beta", "epsilon")
_STR_FLAGS = ("workdir", "corpus", "embeddings", "lexicons", "model", "out",
              "domain", "mode", "scorer", "query_id")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsmlc",
        description="Few-shot multi-label intent detection pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file")
        for flag in _INT_FLAGS:
            p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=int)
        for flag in _FLOAT_FLAGS:
            p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=float)
        for flag in _STR_FLAGS:
            p.add_argument(f"--{flag.replace('_', '-')}", dest=flag)
        p.add_argument("--seeds", dest="seeds", type=lambda s: [int(x) for x in s.split(",")])
        p.add_argument("--beta-sweep", dest="beta_sweep", action="store_const", const=True)
        p.add_argument("--train-domains", dest="train_domains",
                       type=lambda s: s.split(","))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items()
                 if k in _FIELD_NAMES and v is not None}
    try:
        cfg = load_config(args.config, overrides)
        return _COMMANDS[args.command](cfg)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
