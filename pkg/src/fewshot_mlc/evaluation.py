"""Episode-level evaluation and leave-one-domain-out cross-validation.

Micro-F1 is computed inside each episode by pooling true/false
positives and negatives over every query-label pair, then episode
scores are averaged over the split.  Label-number accuracy is the
fraction of queries whose predicted label-set size matches the gold
size, pooled over the whole split.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .corpus import Domain
from .embeddings import EmbeddingTable
from .episodes import Episode, build_split
from .errors import DataError
from .rng import Rng, derive_seed
from .thresholding import Lexicons, make_episode_context, predict_in_context
from .training import ModelParams, TrainConfig, train_pipeline


def micro_f1(predictions, golds) -> float:
    """Pooled-confusion F1 over aligned lists of label sets."""
    if len(predictions) != len(golds):
        raise ValueError(f"length mismatch: {len(predictions)} vs {len(golds)}")
    tp = fp = fn = 0
    for pred, gold in zip(predictions, golds):
        pred = set(pred)
        gold = set(gold)
        tp += len(pred & gold)
        fp += len(pred - gold)
        fn += len(gold - pred)
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def label_count_accuracy(predictions, golds) -> float:
    """Fraction of queries with the correct number of predicted labels."""
    if len(predictions) != len(golds):
        raise ValueError(f"length mismatch: {len(predictions)} vs {len(golds)}")
    if not predictions:
        raise ValueError("no predictions to score")
    hits = sum(1 for p, g in zip(predictions, golds) if len(set(p)) == len(set(g)))
    return hits / len(predictions)


@dataclass
class EvalReport:
    domain: str
    mode: str
    scorer: str
    k: int
    seed: int
    episode_f1: list[float]
    episode_count_hits: list[int]
    mean_f1: float
    std_f1: float
    label_count_acc: float
    kr_count_acc: float
    n_queries: int
    fixed_t: float | None = None

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "mode": self.mode,
            "scorer": self.scorer,
            "k": self.k,
            "seed": self.seed,
            "mean_f1": self.mean_f1,
            "std_f1": self.std_f1,
            "label_count_acc": self.label_count_acc,
            "kr_count_acc": self.kr_count_acc,
            "n_episodes": len(self.episode_f1),
            "n_queries": self.n_queries,
            "fixed_t": self.fixed_t,
            "episode_f1": self.episode_f1,
        }


def evaluate_split(episodes: list[Episode], model: ModelParams, domain: Domain,
                   table: EmbeddingTable, lexicons: Lexicons, mode: str,
                   fixed_t: float | None = None, scorer: str = "alr",
                   seed: int = 0) -> EvalReport:
    """Predict every query of every episode and aggregate."""
    if not episodes:
        raise DataError("no episodes to evaluate")
    episode_f1: list[float] = []
    episode_hits: list[int] = []
    all_pred: list[frozenset[str]] = []
    all_gold: list[frozenset[str]] = []
    kr_hits = 0
    n_queries = 0
    for ep in episodes:
        ctx = make_episode_context(ep.support, domain.label_space, table, model,
                                   lexicons, scorer)
        preds = [predict_in_context(q.utterance, ctx, mode, fixed_t=fixed_t)
                 for q in ep.queries]
        golds = [q.labels for q in ep.queries]
        pred_sets = [p.labels for p in preds]
        episode_f1.append(micro_f1(pred_sets, golds))
        hits = sum(1 for p, g in zip(pred_sets, golds) if len(p) == len(g))
        episode_hits.append(hits)
        # Diagnostic: how often the kernel count estimate itself is right,
        # rounding half up.
        kr_hits += sum(
            1 for p, g in zip(preds, golds)
            if int(np.floor(p.n_est + 0.5)) == len(g)
        )
        all_pred.extend(pred_sets)
        all_gold.extend(golds)
        n_queries += len(ep.queries)

    return EvalReport(
        domain=domain.name,
        mode=mode,
        scorer=scorer,
        k=episodes[0].support.k,
        seed=seed,
        episode_f1=episode_f1,
        episode_count_hits=episode_hits,
        mean_f1=float(np.mean(episode_f1)),
        std_f1=float(np.std(episode_f1)),
        label_count_acc=label_count_accuracy(all_pred, all_gold),
        kr_count_acc=kr_hits / n_queries,
        n_queries=n_queries,
        fixed_t=fixed_t,
    )


def write_report_tsv(reports: list[EvalReport], path: str | Path) -> None:
    """Flat per-episode TSV for plotting: episode_id, f1, n_correct_count."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("episode_id\tf1\tn_correct_count\n")
        for report in reports:
            for i, (f1, hits) in enumerate(zip(report.episode_f1, report.episode_count_hits)):
                fh.write(f"{report.domain}:s{report.seed}:{i:03d}\t{f1:.6f}\t{hits}\n")


def tune_fixed_threshold(episodes: list[Episode], model: ModelParams, domain: Domain,
                         table: EmbeddingTable, lexicons: Lexicons,
                         scorer: str = "alr") -> float:
    """Grid-search a fixed threshold on dev episodes.

    Candidates step through the observed score range at 5% increments;
    ties break toward the smaller threshold.
    """
    per_episode: list[tuple[list[np.ndarray], list[frozenset[str]]]] = []
    lo = np.inf
    hi = -np.inf
    for ep in episodes:
        ctx = make_episode_context(ep.support, domain.label_space, table, model,
                                   lexicons, scorer)
        rows = []
        for q in ep.queries:
            pred = predict_in_context(q.utterance, ctx, "meta_only")
            rows.append(pred.scores.scores)
            lo = min(lo, float(pred.scores.scores.min()))
            hi = max(hi, float(pred.scores.scores.max()))
        per_episode.append((rows, [q.labels for q in ep.queries]))

    if not np.isfinite(lo) or hi <= lo:
        return lo if np.isfinite(lo) else 0.0
    candidates = [lo + j * 0.05 * (hi - lo) for j in range(21)]
    names = domain.label_space.names

    best_t = candidates[0]
    best_f1 = -1.0
    for t in candidates:
        f1s = []
        for rows, golds in per_episode:
            preds = [frozenset(n for n, s in zip(names, row) if s > t) for row in rows]
            f1s.append(micro_f1(preds, golds))
        mean = float(np.mean(f1s))
        if mean > best_f1:
            best_f1 = mean
            best_t = t
    return best_t


def build_eval_episodes(domain: Domain, cfg: TrainConfig, seed: int) -> list[Episode]:
    rng = Rng(derive_seed(seed, "eval-episodes", domain.name))
    return build_split(domain, cfg.k_shot, cfg.eval_episodes, cfg.query_size,
                       rng, skip_prob=cfg.skip_prob)


def _train_rotation(sources, dev, table, run_cfg, lexicons, mode, scorer, seed):
    """Train for one rotation; with beta_sweep on, pick the anchoring
    factor from the grid by dev-domain mean F1 (ties toward smaller)."""
    betas = run_cfg.beta_grid if run_cfg.beta_sweep else (run_cfg.beta,)
    best = None
    for beta in betas:
        model, _ = train_pipeline(sources, table, replace(run_cfg, beta=beta), lexicons)
        if len(betas) == 1:
            return model
        dev_eps = build_eval_episodes(dev, run_cfg, seed)
        dev_mode = mode if mode != "fixed" else "meta_only"
        dev_f1 = evaluate_split(dev_eps, model, dev, table, lexicons, dev_mode,
                                scorer=scorer, seed=seed).mean_f1
        if best is None or dev_f1 > best[0]:
            best = (dev_f1, model)
    return best[1]


def cross_validate(domains: list[Domain], table: EmbeddingTable, cfg: TrainConfig,
                   lexicons: Lexicons, mode: str = "calibrated",
                   scorer: str = "alr", seeds=None) -> list[EvalReport]:
    """Rotate (target, dev, sources) over the domains; train per rotation.

    The dev domain tunes the fixed threshold when mode == "fixed" and
    selects beta when the sweep is enabled; multiple seeds rerun every
    rotation for seed averaging.
    """
    if len(domains) < 3:
        raise ValueError("cross-validation needs at least 3 domains")
    seeds = list(seeds) if seeds else [cfg.seed]
    reports: list[EvalReport] = []
    for seed in seeds:
        run_cfg = replace(cfg, seed=seed)
        for t_idx, target in enumerate(domains):
            dev = domains[(t_idx + 1) % len(domains)]
            sources = [d for i, d in enumerate(domains) if d is not target and d is not dev]
            model = _train_rotation(sources, dev, table, run_cfg, lexicons,
                                    mode, scorer, seed)
            fixed_t = None
            if mode == "fixed":
                dev_eps = build_eval_episodes(dev, run_cfg, seed)
                fixed_t = tune_fixed_threshold(dev_eps, model, dev, table, lexicons, scorer)
            target_eps = build_eval_episodes(target, run_cfg, seed)
            reports.append(evaluate_split(
                target_eps, model, target, table, lexicons, mode,
                fixed_t=fixed_t, scorer=scorer, seed=seed))
    return reports


def summarize_reports(reports: list[EvalReport]) -> dict:
    """Per-target and per-seed means plus the grand mean."""
    by_target: dict[str, list[float]] = {}
    by_seed: dict[int, list[float]] = {}
    for r in reports:
        by_target.setdefault(r.domain, []).append(r.mean_f1)
        by_seed.setdefault(r.seed, []).append(r.mean_f1)
    return {
        "grand_mean_f1": float(np.mean([r.mean_f1 for r in reports])),
        "mean_label_count_acc": float(np.mean([r.label_count_acc for r in reports])),
        "per_target_mean_f1": {k: float(np.mean(v)) for k, v in sorted(by_target.items())},
        "per_seed_mean_f1": {str(k): float(np.mean(v)) for k, v in sorted(by_seed.items())},
    }


# ---------------------------------------------------------------------------
# Four-way ablation: MPN, MMN, MPN+ALR, full model
# ---------------------------------------------------------------------------

ABLATION_ROWS = ("mpn", "mmn", "mpn_alr", "full")


def ablation_run(domains: list[Domain], table: EmbeddingTable, cfg: TrainConfig,
                 lexicons: Lexicons, seeds=None) -> dict:
    """Evaluate the four model rows on every cross-validation rotation.

    MPN and MMN share a projection trained without anchoring (beta 0)
    and use a dev-tuned fixed threshold; MPN+ALR uses the anchored model
    with a fixed threshold; the full row adds the calibrated threshold.
    A meta_only evaluation of the anchored model is kept as a diagnostic.
    """
    if len(domains) < 3:
        raise ValueError("ablation needs at least 3 domains")
    seeds = list(seeds) if seeds else [cfg.seed]
    rows: dict[str, list[EvalReport]] = {name: [] for name in ABLATION_ROWS}
    diagnostics: list[EvalReport] = []

    for seed in seeds:
        full_cfg = replace(cfg, seed=seed)
        plain_cfg = replace(cfg, seed=seed, beta=0.0)
        for t_idx, target in enumerate(domains):
            dev = domains[(t_idx + 1) % len(domains)]
            sources = [d for i, d in enumerate(domains) if d is not target and d is not dev]

            model_full, _ = train_pipeline(sources, table, full_cfg, lexicons)
            model_plain, _ = train_pipeline(sources, table, plain_cfg, lexicons)

            dev_eps = build_eval_episodes(dev, full_cfg, seed)
            target_eps = build_eval_episodes(target, full_cfg, seed)

            settings = {
                "mpn": (model_plain, "fixed", "alr"),
                "mmn": (model_plain, "fixed", "matching"),
                "mpn_alr": (model_full, "fixed", "alr"),
                "full": (model_full, "calibrated", "alr"),
            }
            for name, (model, mode, scorer) in settings.items():
                fixed_t = None
                if mode == "fixed":
                    fixed_t = tune_fixed_threshold(dev_eps, model, dev, table,
                                                   lexicons, scorer)
                rows[name].append(evaluate_split(
                    target_eps, model, target, table, lexicons, mode,
                    fixed_t=fixed_t, scorer=scorer, seed=seed))
            diagnostics.append(evaluate_split(
                target_eps, model_full, target, table, lexicons, "meta_only",
                scorer="alr", seed=seed))

    def _mean(reports, attr):
        return float(np.mean([getattr(r, attr) for r in reports]))

    return {
        "rows": {
            name: {
                "mean_f1": _mean(reports, "mean_f1"),
                "label_count_acc": _mean(reports, "label_count_acc"),
                "reports": [r.to_dict() for r in reports],
            }
            for name, reports in rows.items()
        },
        "diagnostics": {
            "meta_only": {
                "mean_f1": _mean(diagnostics, "mean_f1"),
                "label_count_acc": _mean(diagnostics, "label_count_acc"),
                "reports": [r.to_dict() for r in diagnostics],
            }
        },
        "seeds": seeds,
        "k": cfg.k_shot,
    }
