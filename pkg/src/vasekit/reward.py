"""Verifiable multi-dimensional caption reward and group-relative advantages.

The reward for a generated caption is

    R = clamp( sum_i w_i * r_i  -  P  +  B , 0, 1 )

where ``r_i`` is the thresholded per-dimension cosine similarity, ``P`` a
weighted sum of length, repetition and irrelevance penalties, and ``B`` a
bonus proportional to the character sequence-match ratio against the
reference caption.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dimensions import DIMENSIONS, Dimension, DimensionSlots, Lexicon, default_lexicon, extract_slots
from .exceptions import EmptyGroup, InvalidConfig, ProviderError
from .similarity import DEFAULT_DIMENSION, cosine, cosine_matrix, make_provider, sequence_match_ratio
from .text import split_sentences, tokenize

DEFAULT_WEIGHTS = (0.20, 0.20, 0.15, 0.15, 0.20, 0.10)


@dataclass(frozen=True)
class RewardConfig:
    weights: tuple[float, ...] = DEFAULT_WEIGHTS  # canonical dimension order
    tau: float = 0.7
    alpha_length: float = 0.1
    alpha_repetition: float = 0.1
    alpha_irrelevant: float = 0.15
    beta: float = 0.1
    length_min: int = 15
    length_max: int = 120
    tau_irrelevant: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    def validate(self) -> "RewardConfig":
        w = self.weights
        if len(w) != len(DIMENSIONS):
            raise InvalidConfig(f"expected {len(DIMENSIONS)} weights, got {len(w)}")
        if any(not math.isfinite(x) or x < 0 for x in w):
            raise InvalidConfig(f"weights must be finite and >= 0: {w}")
        if abs(math.fsum(w) - 1.0) > 1e-9:
            raise InvalidConfig(f"weights must sum to 1.0, got {math.fsum(w)!r}")
        for name in ("tau", "tau_irrelevant"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1], got {v}")
        for name in ("alpha_length", "alpha_repetition", "alpha_irrelevant", "beta"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise InvalidConfig(f"{name} must be >= 0, got {v}")
        if not (0 < self.length_min < self.length_max):
            raise InvalidConfig(
                f"need 0 < length_min < length_max, got {self.length_min}, {self.length_max}"
            )
        return self

    def weight(self, dim: Dimension) -> float:
        return self.weights[DIMENSIONS.index(Dimension(dim))]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["weights"] = {d.value: w for d, w in zip(DIMENSIONS, self.weights)}
        return out

    @classmethod
    def from_dict(cls, obj: Mapping) -> "RewardConfig":
        obj = dict(obj)
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(f"unknown reward config keys {sorted(unknown)}")
        if isinstance(obj.get("weights"), Mapping):
            wmap = obj["weights"]
            bad = set(wmap) - {d.value for d in DIMENSIONS}
            if bad:
                raise InvalidConfig(f"unknown weight keys {sorted(bad)}")
            defaults = dict(zip((d.value for d in DIMENSIONS), DEFAULT_WEIGHTS))
            obj["weights"] = tuple(wmap.get(d.value, defaults[d.value]) for d in DIMENSIONS)
        try:
            return cls(**obj)
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(str(exc)) from None


@dataclass(frozen=True)
class PenaltyBreakdown:
    length: float
    repetition: float
    irrelevant: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RewardResult:
    sims: dict[str, float]
    rewards: dict[str, float]
    penalty: PenaltyBreakdown
    bonus: float
    raw: float
    reward: float
    generated_slots: dict[str, str | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "sims": self.sims,
            "rewards": self.rewards,
            "penalty": self.penalty.to_dict(),
            "bonus": self.bonus,
            "raw": self.raw,
            "reward": self.reward,
            "generated_slots": self.generated_slots,
        }


def dimensional_reward(sim: float, tau: float = 0.7) -> float:
    """Thresholded similarity: ``sim`` if ``sim >= tau`` else 0. Negative sims count as 0."""
    sim = max(0.0, float(sim))
    return sim if sim >= tau else 0.0


def combine(
    sims: Sequence[float], cfg: RewardConfig, penalty: float = 0.0, bonus: float = 0.0
) -> tuple[list[float], float, float]:
    """Per-dimension rewards, the unclamped total and the clamped reward for given sims."""
    rewards = [dimensional_reward(s, cfg.tau) for s in sims]
    raw = math.fsum([w * r for w, r in zip(cfg.weights, rewards)]) - penalty + bonus
    return rewards, raw, min(1.0, max(0.0, raw))


def length_penalty(n_tokens: int, length_min: int, length_max: int) -> float:
    if length_min <= n_tokens <= length_max:
        return 0.0
    bound = length_min if n_tokens < length_min else length_max
    return min(1.0, abs(n_tokens - bound) / bound)


def repetition_penalty(tokens: Sequence[str]) -> float:
    """One minus the fraction of distinct token trigrams."""
    if len(tokens) < 3:
        return 0.0
    trigrams = list(zip(tokens, tokens[1:], tokens[2:]))
    return 1.0 - len(set(trigrams)) / len(trigrams)


def irrelevance_penalty(caption: str, target_slots: DimensionSlots, tau_irrelevant: float, provider) -> float:
    """Fraction of sentences whose best cosine to any populated target slot is below ``tau_irrelevant``."""
    sentences = split_sentences(caption)
    if not sentences:
        return 1.0
    slots = [v for _, v in target_slots.items() if v is not None]
    if not slots:
        return 1.0
    vecs = _embed(provider, sentences + slots)
    sims = cosine_matrix(vecs[: len(sentences)], vecs[len(sentences):])
    best = sims.max(axis=1)
    return float(np.count_nonzero(best < tau_irrelevant)) / len(sentences)


def compute_penalty(caption: str, target_slots: DimensionSlots, cfg: RewardConfig, provider=None) -> PenaltyBreakdown:
    provider = provider or make_provider()
    tokens = tokenize(caption)
    p_len = length_penalty(len(tokens), cfg.length_min, cfg.length_max)
    p_rep = repetition_penalty(tokens)
    p_irr = irrelevance_penalty(caption, target_slots, cfg.tau_irrelevant, provider)
    total = cfg.alpha_length * p_len + cfg.alpha_repetition * p_rep + cfg.alpha_irrelevant * p_irr
    return PenaltyBreakdown(p_len, p_rep, p_irr, total)


def _embed(provider, texts: list[str]) -> np.ndarray:
    try:
        vecs = np.asarray(provider.embed(texts), dtype=np.float64)
    except ProviderError:
        raise
    except Exception as exc:  # foreign provider failures surface uniformly
        raise ProviderError(f"{type(exc).__name__}: {exc}") from exc
    if vecs.shape[0] != len(texts) or not np.all(np.isfinite(vecs)):
        raise ProviderError("provider returned a malformed embedding batch")
    return vecs


def dimension_sims(generated: DimensionSlots, target: DimensionSlots, provider) -> list[float]:
    """Cosine per dimension in canonical order; 0.0 where either slot is absent."""
    pairs = [(i, generated[d], target[d]) for i, d in enumerate(DIMENSIONS)]
    present = [(i, g, t) for i, g, t in pairs if g is not None and t is not None]
    sims = [0.0] * len(DIMENSIONS)
    if present:
        vecs = _embed(provider, [g for _, g, _ in present] + [t for _, _, t in present])
        n = len(present)
        for k, (i, _, _) in enumerate(present):
            sims[i] = cosine(vecs[k], vecs[n + k])
    return sims


def compute_reward(
    generated: str,
    target_slots: DimensionSlots,
    target_caption: str,
    cfg: RewardConfig | None = None,
    provider=None,
    lexicon: Lexicon | None = None,
) -> RewardResult:
    cfg = (cfg or RewardConfig()).validate()
    provider = provider or make_provider()
    if not target_slots.populated():
        raise InvalidConfig("target slots have no populated dimension")
    gen_slots = extract_slots(generated, lexicon or default_lexicon())
    sims = dimension_sims(gen_slots, target_slots, provider)
    penalty = compute_penalty(generated, target_slots, cfg, provider)
    bonus = cfg.beta * sequence_match_ratio(generated, target_caption)
    rewards, raw, reward = combine(sims, cfg, penalty.total, bonus)
    names = [d.value for d in DIMENSIONS]
    return RewardResult(
        sims=dict(zip(names, sims)),
        rewards=dict(zip(names, rewards)),
        penalty=penalty,
        bonus=bonus,
        raw=raw,
        reward=reward,
        generated_slots=gen_slots.to_dict(),
    )


@dataclass(frozen=True)
class AdvantageResult:
    rewards: tuple[float, ...]
    mean: float
    std: float
    advantages: tuple[float, ...]


def group_advantages(rewards: Sequence[float], eps: float = 1e-8) -> AdvantageResult:
    """``(R - mean) / std`` with population std; all zeros when ``std <= eps``.

    ``eps`` only guards the zero-variance case. Adding it to the denominator would
    shrink the advantage spread to ``std / (std + eps)`` for tight groups.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise EmptyGroup("a rollout group needs at least one reward")
    mean = float(r.mean())
    std = float(r.std())
    if std <= eps:
        adv = np.zeros_like(r)
    else:
        adv = (r - mean) / std
    return AdvantageResult(tuple(r.tolist()), mean, std, tuple(adv.tolist()))


class CaptionRewardScorer(BaseEstimator):
    """Estimator wrapper around :func:`compute_reward`.

    ``fit`` validates the hyperparameters and resolves the provider and
    lexicon; ``predict`` maps ``(generated, target_slots, target_caption)``
    triples to rewards in [0, 1].
    """

    def __init__(
        self,
        weights=DEFAULT_WEIGHTS,
        tau=0.7,
        alpha_length=0.1,
        alpha_repetition=0.1,
        alpha_irrelevant=0.15,
        beta=0.1,
        length_min=15,
        length_max=120,
        tau_irrelevant=0.2,
        provider="hashed-bow",
        dimension=DEFAULT_DIMENSION,
        lexicon=None,
    ):
        self.weights = weights
        self.tau = tau
        self.alpha_length = alpha_length
        self.alpha_repetition = alpha_repetition
        self.alpha_irrelevant = alpha_irrelevant
        self.beta = beta
        self.length_min = length_min
        self.length_max = length_max
        self.tau_irrelevant = tau_irrelevant
        self.provider = provider
        self.dimension = dimension
        self.lexicon = lexicon

    def fit(self, X=None, y=None):
        self.config_ = RewardConfig(
            weights=tuple(self.weights),
            tau=self.tau,
            alpha_length=self.alpha_length,
            alpha_repetition=self.alpha_repetition,
            alpha_irrelevant=self.alpha_irrelevant,
            beta=self.beta,
            length_min=self.length_min,
            length_max=self.length_max,
            tau_irrelevant=self.tau_irrelevant,
        ).validate()
        if isinstance(self.provider, str):
            self.provider_ = make_provider(self.provider, self.dimension)
        else:
            self.provider_ = self.provider
        if self.lexicon is None or isinstance(self.lexicon, Lexicon):
            self.lexicon_ = self.lexicon or default_lexicon()
        else:
            self.lexicon_ = Lexicon.from_file(self.lexicon)
        return self

    def explain(self, X) -> list[RewardResult]:
        check_is_fitted(self, "config_")
        return [
            compute_reward(gen, slots, caption, self.config_, self.provider_, self.lexicon_)
            for gen, slots, caption in X
        ]

    def predict(self, X) -> np.ndarray:
        return np.array([r.reward for r in self.explain(X)], dtype=np.float64)


class GroupAdvantageNormalizer(TransformerMixin, BaseEstimator):
    """Normalize rewards within rollout groups.

    ``transform(rewards, groups)`` returns advantages aligned with ``rewards``;
    without ``groups`` the whole batch is one group.
    """

    def __init__(self, eps=1e-8):
        self.eps = eps

    def fit(self, X=None, y=None, groups=None):
        if not self.eps > 0:
            raise InvalidConfig("eps must be positive")
        return self

    def transform(self, X, groups=None) -> np.ndarray:
        r = np.asarray(X, dtype=np.float64).ravel()
        if groups is None:
            return np.asarray(group_advantages(r, self.eps).advantages)
        groups = np.asarray(groups)
        if groups.shape != r.shape:
            raise ValueError("groups must align with rewards")
        out = np.empty_like(r)
        for g in dict.fromkeys(groups.tolist()):
            mask = groups == g
            out[mask] = group_advantages(r[mask], self.eps).advantages
        return out

    def fit_transform(self, X, y=None, groups=None):
        return self.fit(X, y, groups).transform(X, groups)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags
