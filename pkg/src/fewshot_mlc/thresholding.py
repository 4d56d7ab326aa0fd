"""Meta-calibrated thresholding.

The final threshold for a query blends two sources:

* a logit-adaptive meta threshold, ``r * max(scores) + (1-r) * min(scores)``,
  whose interpolation rate r is learned on source domains, and
* a support-set estimate obtained by kernel regression: surface features
  of the query are compared against support items with a Gaussian kernel,
  and the weighted average of per-item score cutoffs gives a threshold
  tailored to the query's likely label count.

Labels strictly above the blended threshold are predicted.  When every
score ties, the threshold drops just below them so all labels pass.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from typing import TYPE_CHECKING

from .corpus import LabelSpace, Utterance
from .embeddings import EmbeddingTable
from .episodes import SupportSet
from .errors import DataError
from .rng import Rng
from .scoring import RelevanceScores, matching_scores, relevance_scores

if TYPE_CHECKING:
    from .training import ModelParams

_PUNCT_CHARS = set(string.punctuation)
_PUNCT_SUFFIXES = (".", ",", "!", "?", ";")
DEGENERATE_SPAN = 1e-9


# ---------------------------------------------------------------------------
# Lexicons and surface features
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Lexicons:
    conjunctions: frozenset[str]
    verbs: frozenset[str]
    interrogatives: frozenset[str]


def _read_lexicon(text: str) -> frozenset[str]:
    tokens = set()
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tokens.add(line.lower())
    return frozenset(tokens)


def load_lexicons(directory: str | Path) -> Lexicons:
    """Load conjunctions.txt, verbs.txt, interrogatives.txt from a directory."""
    directory = Path(directory)
    parts = {}
    for name in ("conjunctions", "verbs", "interrogatives"):
        path = directory / f"{name}.txt"
        if not path.is_file():
            raise DataError(f"{path}: missing lexicon file")
        parts[name] = _read_lexicon(path.read_text(encoding="utf-8"))
    return Lexicons(**parts)


def default_lexicons() -> Lexicons:
    """The lexicons shipped with the package."""
    base = resources.files("fewshot_mlc") / "lexicons"
    return Lexicons(
        conjunctions=_read_lexicon((base / "conjunctions.txt").read_text(encoding="utf-8")),
        verbs=_read_lexicon((base / "verbs.txt").read_text(encoding="utf-8")),
        interrogatives=_read_lexicon((base / "interrogatives.txt").read_text(encoding="utf-8")),
    )


@dataclass(frozen=True)
class RawFeatures:
    """Surface counts correlated with the number of intents in a sentence."""

    length: int
    conjunctions: int
    predicates: int
    punctuation: int
    interrogatives: int

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.length, self.conjunctions, self.predicates,
             self.punctuation, self.interrogatives],
            dtype=np.float64,
        )


def _is_punctuation(token: str) -> bool:
    return all(ch in _PUNCT_CHARS for ch in token) or token.endswith(_PUNCT_SUFFIXES)


def extract_features(u: Utterance, lexicons: Lexicons) -> RawFeatures:
    return RawFeatures(
        length=len(u.tokens),
        conjunctions=sum(1 for t in u.tokens if t in lexicons.conjunctions),
        predicates=sum(1 for t in u.tokens if t in lexicons.verbs),
        punctuation=sum(1 for t in u.tokens if _is_punctuation(t)),
        interrogatives=sum(1 for t in u.tokens if t in lexicons.interrogatives),
    )


# ---------------------------------------------------------------------------
# Feature projector (small MLP, ReLU after every affine layer)
# ---------------------------------------------------------------------------

FEATURE_DIM = 5
FEATURE_SCALE = 10.0  # raw counts are divided by this before the MLP


@dataclass
class Mlp:
    """Affine+ReLU stack; weights[i] has shape (out, in), biases[i] (out,)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Apply to a vector (d,) or a batch (n, d)."""
        h = np.asarray(x, dtype=np.float64)
        for w, b in zip(self.weights, self.biases):
            h = np.maximum(h @ w.T + b, 0.0)
        return h

    def forward_with_cache(self, x: np.ndarray):
        """Batch forward returning the per-layer activations for backprop."""
        h = np.asarray(x, dtype=np.float64)
        activations = [h]
        for w, b in zip(self.weights, self.biases):
            h = np.maximum(h @ w.T + b, 0.0)
            activations.append(h)
        return h, activations

    def backward(self, grad_out: np.ndarray, activations: list[np.ndarray]):
        """Backprop a (n, out) output gradient; returns per-layer (dW, db)."""
        grads = [None] * len(self.weights)
        g = np.asarray(grad_out, dtype=np.float64)
        for layer in range(len(self.weights) - 1, -1, -1):
            post = activations[layer + 1]
            pre_grad = g * (post > 0.0)
            grads[layer] = (pre_grad.T @ activations[layer], pre_grad.sum(axis=0))
            g = pre_grad @ self.weights[layer]
        return grads

    def copy(self) -> "Mlp":
        return Mlp(weights=[w.copy() for w in self.weights],
                   biases=[b.copy() for b in self.biases])


def init_mlp(n_layers: int, hidden: int, rng: Rng, input_dim: int = FEATURE_DIM) -> Mlp:
    """Uniform(-1, 1)/sqrt(fan_in) weights, small positive biases."""
    if n_layers < 1:
        raise ValueError("MLP needs at least one layer")
    weights, biases = [], []
    fan_in = input_dim
    for _ in range(n_layers):
        scale = 1.0 / math.sqrt(fan_in)
        w = np.array(
            [[(rng.random() * 2.0 - 1.0) * scale for _ in range(fan_in)]
             for _ in range(hidden)],
            dtype=np.float64,
        )
        weights.append(w)
        biases.append(np.full(hidden, 0.01, dtype=np.float64))
        fan_in = hidden
    return Mlp(weights=weights, biases=biases)


def project_features(raw: RawFeatures, mlp: Mlp) -> np.ndarray:
    """Scaled raw counts through the MLP."""
    return mlp.forward(raw.as_vector() / FEATURE_SCALE)


# ---------------------------------------------------------------------------
# Threshold parameters and component operations
# ---------------------------------------------------------------------------

@dataclass
class ThresholdParams:
    """Everything the meta-calibrated threshold learns or configures.

    The kernel bandwidth is parameterized as lambda = exp(rho) so it
    stays positive under gradient updates.
    """

    r: float
    alpha: float
    rho: float
    mlp: Mlp
    epsilon: float = 1e-6

    def __post_init__(self) -> None:
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"r must be in [0, 1], got {self.r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")

    @property
    def bandwidth(self) -> float:
        return math.exp(self.rho)

    def copy(self) -> "ThresholdParams":
        return ThresholdParams(r=self.r, alpha=self.alpha, rho=self.rho,
                               mlp=self.mlp.copy(), epsilon=self.epsilon)


def meta_threshold(scores: RelevanceScores | np.ndarray, r: float) -> float:
    """Interpolation between the max and min relevance score."""
    values = scores.scores if isinstance(scores, RelevanceScores) else np.asarray(scores)
    if values.size == 0:
        raise ValueError("meta_threshold needs a non-empty score vector")
    return float(r * values.max() + (1.0 - r) * values.min())


def kernel_weight(a: np.ndarray, b: np.ndarray, lam: float) -> float:
    """Gaussian kernel exp(-||a - b||^2 / lambda)."""
    if lam <= 0.0:
        raise ValueError("bandwidth must be positive")
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.exp(-(diff @ diff) / lam))


def _support_kernel_weights(query: Utterance, support: SupportSet,
                            params: ThresholdParams, lexicons: Lexicons):
    """Kernel weights between the query and each support item, plus the
    support label counts. Weights are strictly positive, so Z > 0."""
    lam = params.bandwidth
    phi_q = project_features(extract_features(query, lexicons), params.mlp)
    weights = np.empty(len(support.items), dtype=np.float64)
    counts = np.empty(len(support.items), dtype=np.float64)
    for j, item in enumerate(support.items):
        phi_s = project_features(extract_features(item.utterance, lexicons), params.mlp)
        weights[j] = kernel_weight(phi_q, phi_s, lam)
        counts[j] = len(item.labels)
    return weights, counts


def estimate_label_count(query: Utterance, support: SupportSet,
                         params: ThresholdParams, lexicons: Lexicons) -> float:
    """Kernel-weighted average of support label-set sizes."""
    if not support.items:
        raise ValueError("support set is empty")
    weights, counts = _support_kernel_weights(query, support, params, lexicons)
    return float((weights @ counts) / weights.sum())


def kth_score_threshold(scores: RelevanceScores | np.ndarray, n: int,
                        epsilon: float = 1e-6) -> float:
    """The (n+1)-th largest score; passes exactly the top n under strict >.

    For n >= N no such score exists, so the threshold drops below the
    minimum by a relative margin and every label passes.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    values = scores.scores if isinstance(scores, RelevanceScores) else np.asarray(scores)
    ordered = np.sort(values)[::-1]
    if n >= ordered.size:
        lo = float(ordered[-1])
        return lo - epsilon * (1.0 + abs(lo))
    return float(ordered[n])


def estimate_threshold(query: Utterance, support: SupportSet,
                       scores: RelevanceScores, params: ThresholdParams,
                       lexicons: Lexicons) -> float:
    """Kernel-weighted average of per-support-item score cutoffs."""
    if not support.items:
        raise ValueError("support set is empty")
    weights, counts = _support_kernel_weights(query, support, params, lexicons)
    cutoffs = np.array(
        [kth_score_threshold(scores, int(c), epsilon=params.epsilon) for c in counts],
        dtype=np.float64,
    )
    return float((weights @ cutoffs) / weights.sum())


def calibrated_threshold(t_meta: float, t_est: float, alpha: float) -> float:
    """Convex blend of the meta threshold and the support-set estimate."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * t_meta + (1.0 - alpha) * t_est


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

MODES = ("meta_only", "calibrated", "fixed")


@dataclass(frozen=True)
class Prediction:
    scores: RelevanceScores
    t_meta: float
    t_est: float
    t: float
    n_est: float
    labels: frozenset[str]


def select_labels(scores: np.ndarray, t: float, label_space: LabelSpace) -> frozenset[str]:
    return frozenset(
        name for name, s in zip(label_space.names, scores) if s > t
    )


def decide_threshold(scores: np.ndarray, t_meta: float, t_est: float, mode: str,
                     alpha: float, epsilon: float,
                     fixed_t: float | None = None) -> float:
    """Pick the threshold for one query according to the prediction mode."""
    if mode == "meta_only":
        t = t_meta
    elif mode == "calibrated":
        t = calibrated_threshold(t_meta, t_est, alpha)
    elif mode == "fixed":
        if fixed_t is None:
            raise ValueError("fixed mode needs a threshold value")
        t = fixed_t
    else:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    # All-scores-equal escape: nudge below the common value so that every
    # label is selected rather than none.
    if float(scores.max() - scores.min()) < DEGENERATE_SPAN:
        t = t_meta - epsilon * (1.0 + abs(t_meta))
    return t


@dataclass
class EpisodeContext:
    """Support-set state shared by every query of one episode."""

    support: SupportSet
    label_space: LabelSpace
    table: EmbeddingTable
    model: "ModelParams"
    lexicons: Lexicons
    scorer: str
    reps: object                 # LabelReps when scorer == "alr"
    support_phi: np.ndarray      # (S, H) projected support features
    support_counts: np.ndarray   # (S,) label-set sizes


def make_episode_context(support: SupportSet, label_space: LabelSpace,
                         table: EmbeddingTable, model: "ModelParams",
                         lexicons: Lexicons, scorer: str = "alr") -> EpisodeContext:
    from .labelrep import compute_label_reps

    if scorer not in ("alr", "matching"):
        raise ValueError(f"unknown scorer {scorer!r}")
    reps = None
    if scorer == "alr":
        reps = compute_label_reps(support, label_space, table, model.beta, model.proj)
    phi = np.stack([
        project_features(extract_features(item.utterance, lexicons), model.threshold.mlp)
        for item in support.items
    ])
    counts = np.array([len(item.labels) for item in support.items], dtype=np.float64)
    return EpisodeContext(support=support, label_space=label_space, table=table,
                          model=model, lexicons=lexicons, scorer=scorer,
                          reps=reps, support_phi=phi, support_counts=counts)


def predict_in_context(query: Utterance, ctx: EpisodeContext, mode: str,
                       fixed_t: float | None = None) -> Prediction:
    params = ctx.model.threshold
    if ctx.scorer == "alr":
        rel = relevance_scores(query, ctx.reps, ctx.table, ctx.model.proj)
    else:
        rel = matching_scores(query, ctx.support, ctx.label_space, ctx.table,
                              ctx.model.proj)
    scores = rel.scores

    t_meta = meta_threshold(scores, params.r)
    phi_q = project_features(extract_features(query, ctx.lexicons), params.mlp)
    diff = ctx.support_phi - phi_q
    weights = np.exp(-np.einsum("sh,sh->s", diff, diff) / params.bandwidth)
    z = float(weights.sum())
    n_est = float(weights @ ctx.support_counts) / z
    cutoffs = np.array([
        kth_score_threshold(scores, int(c), epsilon=params.epsilon)
        for c in ctx.support_counts
    ])
    t_est = float(weights @ cutoffs) / z

    t = decide_threshold(scores, t_meta, t_est, mode, params.alpha,
                         params.epsilon, fixed_t=fixed_t)
    return Prediction(
        scores=rel, t_meta=t_meta, t_est=t_est, t=t, n_est=n_est,
        labels=select_labels(scores, t, ctx.label_space),
    )


def predict(query: Utterance, support: SupportSet, label_space: LabelSpace,
            table: EmbeddingTable, lexicons: Lexicons, model: "ModelParams",
            mode: str = "calibrated", fixed_t: float | None = None,
            scorer: str = "alr") -> Prediction:
    """Score a query against its support set and select labels above the
    mode's threshold."""
    ctx = make_episode_context(support, label_space, table, model, lexicons, scorer)
    return predict_in_context(query, ctx, mode, fixed_t=fixed_t)
