"""Spatial-concept model: conjugate sufficient statistics, the collapsed
conditional for (position cluster, concept), fixed-lag rejuvenation, and the
concept-side importance-weight terms."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (NEW, Assignment, Hyperparameters, WordSequence,
                   assert_prob_vector)

_LOG_2PI = math.log(2.0 * math.pi)


class CorruptStatsError(RuntimeError):
    """A removal did not match a prior addition; counts would go negative."""


@dataclass(frozen=True)
class ConceptDatum:
    """Observation bundle of one teaching step as seen by the concept model."""

    xy: np.ndarray
    feature: np.ndarray
    words: WordSequence

    def __post_init__(self):
        object.__setattr__(self, "xy", np.asarray(self.xy, dtype=float))
        object.__setattr__(self, "feature", np.asarray(self.feature, dtype=np.int64))

    def with_words(self, words: WordSequence) -> "ConceptDatum":
        return ConceptDatum(self.xy, self.feature, tuple(words))


class _PositionStats:
    __slots__ = ("n", "s", "q", "_cache")

    def __init__(self):
        self.n = 0
        self.s = np.zeros(2)
        self.q = np.zeros((2, 2))
        self._cache = None

    def clone(self) -> "_PositionStats":
        dup = _PositionStats()
        dup.n = self.n
        dup.s = self.s.copy()
        dup.q = self.q.copy()
        return dup


class _ConceptStats:
    __slots__ = ("n", "words", "word_total", "feats", "feat_total", "pos_counts")

    def __init__(self, feature_dim: int):
        self.n = 0
        self.words: Counter = Counter()
        self.word_total = 0
        self.feats = np.zeros(feature_dim, dtype=np.int64)
        self.feat_total = 0
        self.pos_counts: Counter = Counter()

    def clone(self) -> "_ConceptStats":
        dup = _ConceptStats(len(self.feats))
        dup.n = self.n
        dup.words = Counter(self.words)
        dup.word_total = self.word_total
        dup.feats = self.feats.copy()
        dup.feat_total = self.feat_total
        dup.pos_counts = Counter(self.pos_counts)
        return dup


def log_polya(counts: Sequence[float] | dict, prior: float, n_categories: int,
              obs_counts: dict | Sequence[float]) -> float:
    """Dirichlet-multinomial log marginal of one ordered observation sequence.

    Depends on the observation only through its counts (exchangeability);
    the multinomial coefficient is deliberately not included.
    """
    if prior <= 0:
        raise ValueError("prior must be positive")
    if isinstance(counts, dict):
        get = lambda key: counts.get(key, 0)
        total = sum(counts.values())
    else:
        arr = np.asarray(counts)
        get = lambda key: arr[key]
        total = float(arr.sum())
    if isinstance(obs_counts, dict):
        items = obs_counts.items()
        obs_total = sum(obs_counts.values())
    else:
        obs = np.asarray(obs_counts)
        items = [(i, c) for i, c in enumerate(obs) if c > 0]
        obs_total = float(obs.sum())
    a_total = prior * n_categories
    out = math.lgamma(a_total + total) - math.lgamma(a_total + total + obs_total)
    for key, c in items:
        if c <= 0:
            continue
        base = prior + get(key)
        out += math.lgamma(base + c) - math.lgamma(base)
    return out


def _words_to_counts(words: WordSequence) -> Counter:
    return Counter(words)


class PosteriorStats:
    """Conjugate sufficient statistics for the whole concept model.

    Incremental add/remove keeps the stats strictly equal to a from-scratch
    recount over the currently included data (integer counts exactly, real
    sums to rounding). Cluster ids are never reused.
    """

    def __init__(self, hyper: Hyperparameters, feature_dim: int):
        self.hyper = hyper
        self.feature_dim = int(feature_dim)
        self.concepts: dict[int, _ConceptStats] = {}
        self.positions: dict[int, _PositionStats] = {}
        self.pooled_words: Counter = Counter()
        self.pooled_word_total = 0
        self.total_n = 0
        self._next_concept = 0
        self._next_position = 0

    # -- bookkeeping --------------------------------------------------------
    def clone(self) -> "PosteriorStats":
        dup = PosteriorStats(self.hyper, self.feature_dim)
        dup.concepts = {l: c.clone() for l, c in self.concepts.items()}
        dup.positions = {k: p.clone() for k, p in self.positions.items()}
        dup.pooled_words = Counter(self.pooled_words)
        dup.pooled_word_total = self.pooled_word_total
        dup.total_n = self.total_n
        dup._next_concept = self._next_concept
        dup._next_position = self._next_position
        return dup

    def vocabulary(self) -> set:
        return {w for w, c in self.pooled_words.items() if c > 0}

    def vocab_size(self, extra_words: WordSequence = ()) -> int:
        return len(self.vocabulary() | set(extra_words))

    def active_concepts(self) -> list[int]:
        return sorted(self.concepts)

    def active_positions(self) -> list[int]:
        return sorted(self.positions)

    # -- sequential Bayesian update ------------------------------------------
    def add(self, datum: ConceptDatum, assignment: Assignment) -> Assignment:
        """Fold one datum in; NEW ids are allocated fresh indices.

        Returns the concrete assignment actually used.
        """
        l = assignment.concept
        if l == NEW:
            l = self._next_concept
            self._next_concept += 1
            self.concepts[l] = _ConceptStats(self.feature_dim)
        elif l not in self.concepts:
            raise KeyError(f"unknown concept id {l}")
        k = assignment.position
        if k == NEW:
            k = self._next_position
            self._next_position += 1
            self.positions[k] = _PositionStats()
        elif k not in self.positions:
            raise KeyError(f"unknown position id {k}")

        cstats = self.concepts[l]
        cstats.n += 1
        cstats.pos_counts[k] += 1
        for w, c in _words_to_counts(datum.words).items():
            cstats.words[w] += c
            self.pooled_words[w] += c
        cstats.word_total += len(datum.words)
        self.pooled_word_total += len(datum.words)
        cstats.feats += datum.feature
        cstats.feat_total += int(datum.feature.sum())

        pstats = self.positions[k]
        pstats.n += 1
        pstats.s += datum.xy
        pstats.q += np.outer(datum.xy, datum.xy)
        pstats._cache = None

        self.total_n += 1
        return Assignment(position=k, concept=l)

    def remove(self, datum: ConceptDatum, assignment: Assignment) -> None:
        """Exact inverse of ``add`` for a datum previously added under
        ``assignment``; clusters whose count reaches zero are retired."""
        l, k = assignment.concept, assignment.position
        if l not in self.concepts or k not in self.positions:
            raise CorruptStatsError(f"assignment {assignment} references retired ids")
        cstats = self.concepts[l]
        pstats = self.positions[k]
        if cstats.n < 1 or pstats.n < 1 or cstats.pos_counts[k] < 1:
            raise CorruptStatsError("count underflow")
        word_counts = _words_to_counts(datum.words)
        for w, c in word_counts.items():
            if cstats.words.get(w, 0) < c or self.pooled_words.get(w, 0) < c:
                raise CorruptStatsError(f"word count underflow for {w!r}")

        cstats.n -= 1
        cstats.pos_counts[k] -= 1
        if cstats.pos_counts[k] == 0:
            del cstats.pos_counts[k]
        for w, c in word_counts.items():
            cstats.words[w] -= c
            if cstats.words[w] == 0:
                del cstats.words[w]
            self.pooled_words[w] -= c
            if self.pooled_words[w] == 0:
                del self.pooled_words[w]
        cstats.word_total -= len(datum.words)
        self.pooled_word_total -= len(datum.words)
        cstats.feats -= datum.feature
        if (cstats.feats < 0).any():
            raise CorruptStatsError("feature count underflow")
        cstats.feat_total -= int(datum.feature.sum())

        pstats.n -= 1
        if pstats.n == 0:
            del self.positions[k]
        else:
            pstats.s -= datum.xy
            pstats.q -= np.outer(datum.xy, datum.xy)
            pstats._cache = None
        if cstats.n == 0:
            del self.concepts[l]
        self.total_n -= 1

    def replace_words(self, assignment: Assignment, old: WordSequence,
                      new: WordSequence) -> None:
        """Swap a datum's word sequence in place (segmentation changed,
        assignment did not)."""
        cstats = self.concepts[assignment.concept]
        for w, c in _words_to_counts(old).items():
            if cstats.words.get(w, 0) < c or self.pooled_words.get(w, 0) < c:
                raise CorruptStatsError(f"word count underflow for {w!r}")
            cstats.words[w] -= c
            if cstats.words[w] == 0:
                del cstats.words[w]
            self.pooled_words[w] -= c
            if self.pooled_words[w] == 0:
                del self.pooled_words[w]
        cstats.word_total -= len(old)
        self.pooled_word_total -= len(old)
        for w, c in _words_to_counts(new).items():
            cstats.words[w] += c
            self.pooled_words[w] += c
        cstats.word_total += len(new)
        self.pooled_word_total += len(new)

    # -- predictive densities -------------------------------------------------
    def _niw_posterior(self, k: int | None):
        """(kappa_n, m_n, nu_n, V_n) for cluster k, or the prior for NEW."""
        h = self.hyper
        if k is None or k == NEW:
            return h.kappa0, h.m0_vec, h.nu0, h.v0_mat
        p = self.positions[k]
        if p._cache is None:
            kappa_n = h.kappa0 + p.n
            m_n = (h.kappa0 * h.m0_vec + p.s) / kappa_n
            nu_n = h.nu0 + p.n
            v_n = (h.v0_mat + p.q + h.kappa0 * np.outer(h.m0_vec, h.m0_vec)
                   - kappa_n * np.outer(m_n, m_n))
            p._cache = (kappa_n, m_n, nu_n, v_n)
        return p._cache

    def log_predictive_position(self, k: int, xy: np.ndarray) -> float:
        """Bivariate Student-t posterior predictive density at ``xy``.

        NEW (or unseen) clusters use the prior predictive.
        """
        kappa_n, m_n, nu_n, v_n = self._niw_posterior(k)
        df = nu_n - 1.0  # nu_n - d + 1 with d = 2
        scale = v_n * (kappa_n + 1.0) / (kappa_n * df)
        det = scale[0, 0] * scale[1, 1] - scale[0, 1] * scale[1, 0]
        dx = xy[0] - m_n[0]
        dy = xy[1] - m_n[1]
        quad = (scale[1, 1] * dx * dx - 2.0 * scale[0, 1] * dx * dy
                + scale[0, 0] * dy * dy) / det
        return (math.lgamma(0.5 * (df + 2.0)) - math.lgamma(0.5 * df)
                - math.log(df * math.pi) - 0.5 * math.log(det)
                - 0.5 * (df + 2.0) * math.log1p(quad / df))

    def log_polya_words(self, l: int, words: WordSequence, vocab: int) -> float:
        counts = self.concepts[l].words if l in self.concepts else {}
        return log_polya(counts, self.hyper.beta, vocab, _words_to_counts(words))

    def log_polya_feats(self, l: int, feature: np.ndarray) -> float:
        counts = self.concepts[l].feats if l in self.concepts else np.zeros(self.feature_dim)
        return log_polya(counts, self.hyper.chi, self.feature_dim, feature)

    def log_polya_words_pooled(self, words: WordSequence, vocab: int) -> float:
        return log_polya(self.pooled_words, self.hyper.beta, vocab,
                         _words_to_counts(words))


@dataclass
class ConceptPrediction:
    """Normalized categorical over (position, concept) pairs, NEW included."""

    pairs: list[tuple[int, int]]         # (position id or NEW, concept id or NEW)
    log_scores: np.ndarray               # unnormalized
    probs: np.ndarray

    def table(self) -> dict[tuple[int, int], float]:
        return {pair: float(p) for pair, p in zip(self.pairs, self.probs)}

    def sample(self, rng: np.random.Generator) -> Assignment:
        u = rng.random()
        acc = 0.0
        for pair, p in zip(self.pairs, self.probs):
            acc += p
            if u < acc:
                return Assignment(position=pair[0], concept=pair[1])
        return Assignment(position=self.pairs[-1][0], concept=self.pairs[-1][1])

    def argmax(self) -> Assignment:
        idx = int(np.argmax(self.probs))  # ties -> lowest index
        return Assignment(position=self.pairs[idx][0], concept=self.pairs[idx][1])


def _crp_concept_terms(stats: PosteriorStats) -> dict[int, float]:
    """log CRP probability of each concept choice (NEW under key NEW)."""
    h = stats.hyper
    denom = math.log(stats.total_n + h.alpha)
    out = {l: math.log(stats.concepts[l].n) - denom for l in stats.active_concepts()}
    out[NEW] = math.log(h.alpha) - denom
    return out


def _crp_position_terms(stats: PosteriorStats, l: int) -> dict[int, float]:
    """log CRP probability of each position choice within concept ``l``.

    A NEW concept seats its first datum at a NEW position with certainty;
    positions never used by ``l`` have zero prior mass (nested restaurants).
    """
    gamma = stats.hyper.gamma
    out: dict[int, float] = {}
    if l == NEW or l not in stats.concepts:
        for k in stats.active_positions():
            out[k] = -math.inf
        out[NEW] = 0.0
        return out
    cstats = stats.concepts[l]
    denom = math.log(cstats.n + gamma)
    for k in stats.active_positions():
        n_lk = cstats.pos_counts.get(k, 0)
        out[k] = math.log(n_lk) - denom if n_lk > 0 else -math.inf
    out[NEW] = math.log(gamma) - denom
    return out


def joint_conditional_ic(stats: PosteriorStats, datum: ConceptDatum) -> ConceptPrediction:
    """Collapsed conditional over (position, concept) for one held-out datum.

    The datum must already be excluded from ``stats``. Combines the concept
    CRP, the per-concept position CRP, the position Student-t predictive,
    and the word/feature Polya marginals of each concept.
    """
    vocab = stats.vocab_size(datum.words)
    concept_ids = stats.active_concepts() + [NEW]
    position_ids = stats.active_positions() + [NEW]
    crp_l = _crp_concept_terms(stats)
    pos_term = {k: stats.log_predictive_position(k, datum.xy) for k in position_ids}
    pairs: list[tuple[int, int]] = []
    scores: list[float] = []
    for l in concept_ids:
        word_term = stats.log_polya_words(l, datum.words, vocab)
        feat_term = stats.log_polya_feats(l, datum.feature)
        crp_k = _crp_position_terms(stats, l)
        base = crp_l[l] + word_term + feat_term
        for k in position_ids:
            pairs.append((k, l))
            scores.append(base + crp_k[k] + pos_term[k])
    log_scores = np.asarray(scores)
    hi = log_scores.max()
    probs = np.exp(log_scores - hi)
    probs /= probs.sum()
    assert_prob_vector(probs)
    return ConceptPrediction(pairs=pairs, log_scores=log_scores, probs=probs)


def concept_weights(stats: PosteriorStats, datum: ConceptDatum
                    ) -> tuple[float, float, float]:
    """Importance-weight terms (w_f, w_ic, w_s) for the current teaching step.

    ``stats`` must exclude the step's own datum. w_f is the concept-mixture
    feature marginal; w_ic the position predictive averaged over the joint
    (position, concept) prior; w_s the ratio of the concept-conditioned word
    marginal to the concept-free one.
    """
    vocab = stats.vocab_size(datum.words)
    crp_l = _crp_concept_terms(stats)
    concept_ids = stats.active_concepts() + [NEW]
    position_ids = stats.active_positions() + [NEW]

    w_f_terms = [crp_l[l] + stats.log_polya_feats(l, datum.feature)
                 for l in concept_ids]
    w_f = _lse(w_f_terms)

    pos_term = {k: stats.log_predictive_position(k, datum.xy) for k in position_ids}
    w_ic_terms = []
    for l in concept_ids:
        crp_k = _crp_position_terms(stats, l)
        for k in position_ids:
            w_ic_terms.append(crp_l[l] + crp_k[k] + pos_term[k])
    w_ic = _lse(w_ic_terms)

    num_terms = [crp_l[l] + stats.log_polya_words(l, datum.words, vocab)
                 for l in concept_ids]
    w_s = _lse(num_terms) - stats.log_polya_words_pooled(datum.words, vocab)
    return w_f, w_ic, w_s


def _lse(values) -> float:
    arr = np.asarray(values, dtype=float)
    hi = arr.max()
    if not math.isfinite(hi):
        return -math.inf
    return float(hi + math.log(np.exp(arr - hi).sum()))


class WindowEntry:
    """One teaching step inside a fixed-lag window."""

    __slots__ = ("step", "datum", "assignment")

    def __init__(self, step: int, datum: ConceptDatum, assignment: Assignment):
        self.step = step
        self.datum = datum
        self.assignment = assignment

    def clone(self) -> "WindowEntry":
        return WindowEntry(self.step, self.datum, self.assignment)


def flr_sweep(stats: PosteriorStats, window: Sequence[WindowEntry],
              rng: np.random.Generator, record: list | None = None) -> None:
    """One collapsed-Gibbs pass over the window, oldest entry first.

    Each entry's datum is removed, its (position, concept) pair redrawn from
    the collapsed conditional given everything else, and re-added. ``record``
    collects the conditional tables when provided.
    """
    for entry in window:
        stats.remove(entry.datum, entry.assignment)
        pred = joint_conditional_ic(stats, entry.datum)
        if record is not None:
            record.append((entry.step, pred))
        drawn = pred.sample(rng)
        entry.assignment = stats.add(entry.datum, drawn)


@dataclass
class ThetaSnapshot:
    """Posterior-mean point estimates of every model parameter."""

    concept_ids: list[int]
    position_ids: list[int]
    pi: dict[int, float]
    phi: dict[int, dict[int, float]]
    word_probs: dict[int, dict[WordSequence, float]]
    feat_probs: dict[int, np.ndarray]
    position_mean: dict[int, np.ndarray]
    position_cov: dict[int, np.ndarray]
    cov_flagged: dict[int, bool]
    prior_mean: np.ndarray
    vocabulary: list
    word_counts: dict[int, dict] = field(default_factory=dict)
    word_totals: dict[int, int] = field(default_factory=dict)
    beta: float = 0.1

    def to_json(self) -> dict:
        return {
            "concepts": [
                {
                    "id": l,
                    "pi": self.pi[l],
                    "phi": {str(k): v for k, v in self.phi[l].items()},
                    "words": {" ".join(w): p for w, p in self.word_probs[l].items()},
                    "word_counts": {" ".join(w): int(c)
                                    for w, c in sorted(self.word_counts.get(l, {}).items())},
                    "word_total": int(self.word_totals.get(l, 0)),
                    "feats": [float(v) for v in self.feat_probs[l]],
                }
                for l in self.concept_ids
            ],
            "positions": [
                {
                    "id": k,
                    "mean": [float(v) for v in self.position_mean[k]],
                    "cov": [[float(v) for v in row] for row in self.position_cov[k]],
                    "cov_flagged": self.cov_flagged[k],
                }
                for k in self.position_ids
            ],
        }


def estimate_theta(stats: PosteriorStats) -> ThetaSnapshot:
    """Posterior means: Dirichlet means for the categoricals, NIW means for
    the Gaussians (covariance falls back to the mode when the mean is
    undefined, flagged)."""
    h = stats.hyper
    concept_ids = stats.active_concepts()
    position_ids = stats.active_positions()
    vocab = sorted(stats.vocabulary())
    n_l = len(concept_ids)
    n_k = len(position_ids)
    pi = {l: (stats.concepts[l].n + h.alpha) / (stats.total_n + n_l * h.alpha)
          for l in concept_ids}
    phi = {}
    word_probs = {}
    feat_probs = {}
    for l in concept_ids:
        c = stats.concepts[l]
        phi[l] = {k: (c.pos_counts.get(k, 0) + h.gamma) / (c.n + n_k * h.gamma)
                  for k in position_ids}
        denom = c.word_total + len(vocab) * h.beta
        word_probs[l] = {w: (c.words.get(w, 0) + h.beta) / denom for w in vocab}
        feat_probs[l] = (c.feats + h.chi) / (c.feat_total + stats.feature_dim * h.chi)
    position_mean = {}
    position_cov = {}
    cov_flagged = {}
    for k in position_ids:
        kappa_n, m_n, nu_n, v_n = stats._niw_posterior(k)
        position_mean[k] = m_n
        if nu_n > 3.0:  # nu_n > d + 1 with d = 2
            position_cov[k] = v_n / (nu_n - 3.0)
            cov_flagged[k] = False
        else:
            position_cov[k] = v_n / (nu_n + 3.0)
            cov_flagged[k] = True
    word_counts = {l: dict(stats.concepts[l].words) for l in concept_ids}
    word_totals = {l: stats.concepts[l].word_total for l in concept_ids}
    return ThetaSnapshot(concept_ids, position_ids, pi, phi, word_probs,
                         feat_probs, position_mean, position_cov, cov_flagged,
                         h.m0_vec.copy(), vocab, word_counts, word_totals,
                         h.beta)
