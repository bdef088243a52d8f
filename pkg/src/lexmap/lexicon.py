"""Lexical acquisition: n-best phoneme decoding under the current lexicon,
Dirichlet-process unigram word segmentation by blocked Gibbs sampling, word
re-segmentation, and fixed-lag segmentation over a window of utterances."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Phonemes, Word, WordSequence, normalize_log_weights


@dataclass(frozen=True)
class LexiconParams:
    """Base measure of the word DP: geometric length times uniform phonemes."""

    alphabet_size: int
    p_continue: float = 0.5
    max_word_len: int = 8
    concentration: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.p_continue < 1.0:
            raise ValueError("p_continue must lie in (0, 1)")
        if self.alphabet_size < 1 or self.max_word_len < 1:
            raise ValueError("alphabet and word-length cap must be positive")
        if self.concentration <= 0:
            raise ValueError("concentration must be positive")

    def log_g0_by_len(self) -> np.ndarray:
        """log base probability of a word, by length 1..max_word_len."""
        p = self.p_continue
        lens = np.arange(1, self.max_word_len + 1)
        log_len = (lens - 1) * math.log(p) + math.log1p(-p) - math.log1p(-p ** self.max_word_len)
        return log_len - lens * math.log(self.alphabet_size)


class Lexicon:
    """Word-count table of a DP-unigram language model."""

    def __init__(self, params: LexiconParams, counts: Counter | None = None):
        self.params = params
        self.counts: Counter = Counter(counts) if counts else Counter()
        self.total = sum(self.counts.values())
        self._log_g0 = params.log_g0_by_len()
        self._lam_g0 = [float(v) for v in
                        params.concentration * np.exp(self._log_g0)]
        self._log_denom = math.log(self.total + params.concentration)

    def clone(self) -> "Lexicon":
        return Lexicon(self.params, self.counts)

    def merged_with(self, extra: Counter) -> "Lexicon":
        merged = Counter(self.counts)
        merged.update(extra)
        return Lexicon(self.params, merged)

    def log_g0(self, word: Word) -> float:
        n = len(word)
        if not 1 <= n <= self.params.max_word_len:
            return -math.inf
        return float(self._log_g0[n - 1])

    def log_pred(self, word: Word) -> float:
        """Static CRP predictive probability of one more token of ``word``."""
        n = len(word)
        if not 1 <= n <= self.params.max_word_len:
            if word in self.counts:
                return math.log(self.counts[word]) - self._log_denom
            return -math.inf
        return math.log(self.counts.get(word, 0) + self._lam_g0[n - 1]) \
            - self._log_denom

    def to_json(self) -> dict:
        return {" ".join(w): int(c) for w, c in sorted(self.counts.items())}

    @classmethod
    def from_sentences(cls, params: LexiconParams,
                       sentences: Sequence[WordSequence]) -> "Lexicon":
        counts: Counter = Counter()
        for sent in sentences:
            counts.update(sent)
        return cls(params, counts)


@dataclass(frozen=True)
class Hypothesis:
    phonemes: Phonemes
    channel_logp: float
    rank_logp: float


@dataclass
class HypothesisList:
    """Candidate true phoneme strings for one utterance, best ranked first."""

    hyps: list[Hypothesis]

    def __post_init__(self):
        if not self.hyps:
            raise ValueError("hypothesis list must be nonempty")
        ranks = [h.rank_logp for h in self.hyps]
        if any(a < b for a, b in zip(ranks, ranks[1:])):
            raise ValueError("hypotheses must be sorted by descending rank score")

    @classmethod
    def single(cls, phonemes: Phonemes) -> "HypothesisList":
        return cls([Hypothesis(tuple(phonemes), 0.0, 0.0)])


def _edit1_candidates(y: Phonemes, channel) -> dict[Phonemes, tuple[str, int]]:
    """The verbatim string plus its single-edit neighbors reachable under
    the channel (substitutions only into the confusion-row support).

    Values describe one derivation (edit kind, position) per string.
    """
    out: dict[Phonemes, tuple[str, int]] = {tuple(y): ("verbatim", 0)}
    n = len(y)
    if channel.p_ins > 0 and n > 1:
        # a shorter source: the channel inserted y[i]
        for i in range(n):
            out.setdefault(tuple(y[:i] + y[i + 1:]), ("ins", i))
    if channel.p_sub > 0:
        for i in range(n):
            for v in channel.source_support(y[i]):
                if v != y[i]:
                    out.setdefault(tuple(y[:i] + (v,) + y[i + 1:]), ("sub", i))
    if channel.p_del > 0:
        # a longer source: the channel deleted the extra symbol
        for i in range(n + 1):
            for v in channel.alphabet:
                out.setdefault(tuple(y[:i] + (v,) + y[i:]), ("del", i))
    return out


def string_prior_logz(phonemes: Phonemes, lexicon: Lexicon) -> float:
    """Marginal probability of a string under the lexicon: sum over all
    segmentations of the static CRP predictive product (forward pass)."""
    alpha = _forward_table(tuple(phonemes), lexicon.log_pred, lexicon.params.max_word_len)
    return alpha[-1]


def _backward_table(phonemes: Phonemes, log_pred, max_len: int) -> list[float]:
    n = len(phonemes)
    beta = [-math.inf] * (n + 1)
    beta[n] = 0.0
    for m in range(n - 1, -1, -1):
        terms = []
        for k in range(m + 1, min(n, m + max_len) + 1):
            b = beta[k]
            if b == -math.inf:
                continue
            lp = log_pred(phonemes[m:k])
            if lp > -math.inf:
                terms.append(b + lp)
        if terms:
            beta[m] = _lse(terms)
    return beta


def _edit1_prior_scores(y: Phonemes, lexicon: Lexicon,
                        cands: dict[Phonemes, tuple[str, int]]) -> dict[Phonemes, float]:
    """Prior log marginal of every single-edit candidate from one alpha/beta
    pass over the observed string.

    Exactly one word of any segmentation covers the edited site; prefix and
    suffix masses are shared with the base string, so each candidate costs
    O(max_word_len^2) instead of a full forward pass.
    """
    lp = lexicon.log_pred
    w_max = lexicon.params.max_word_len
    alpha = _forward_table(y, lp, w_max)
    beta = _backward_table(y, lp, w_max)
    n = len(y)
    out: dict[Phonemes, float] = {}
    for cand, (kind, i) in cands.items():
        if kind == "verbatim":
            out[cand] = alpha[-1]
            continue
        m = len(cand)
        terms: list[float] = []
        if kind == "sub":
            # same length; words [j, k) with j <= i < k cover the edit
            for j in range(max(0, i - w_max + 1), i + 1):
                if alpha[j] == -math.inf:
                    continue
                for k in range(i + 1, min(m, j + w_max) + 1):
                    v = lp(cand[j:k])
                    if v > -math.inf and beta[k] > -math.inf:
                        terms.append(alpha[j] + v + beta[k])
        elif kind == "del":
            # candidate has one extra symbol at slot i; suffix shifts by one
            for j in range(max(0, i - w_max + 1), i + 1):
                if alpha[j] == -math.inf:
                    continue
                for k in range(i + 1, min(m, j + w_max) + 1):
                    v = lp(cand[j:k])
                    if v > -math.inf and beta[k - 1] > -math.inf:
                        terms.append(alpha[j] + v + beta[k - 1])
        else:  # "ins": candidate lost y[i]; either a boundary at the seam...
            if alpha[i] > -math.inf and beta[i + 1] > -math.inf:
                terms.append(alpha[i] + beta[i + 1])
            # ...or a word [j, k) crossing it (suffix shifts back by one)
            for j in range(max(0, i - w_max + 1), i):
                if alpha[j] == -math.inf:
                    continue
                for k in range(i + 1, min(m, j + w_max) + 1):
                    v = lp(cand[j:k])
                    if v > -math.inf and beta[k + 1] > -math.inf:
                        terms.append(alpha[j] + v + beta[k + 1])
        out[cand] = _lse(terms) if terms else -math.inf
    return out


def decode_nbest(y: Phonemes, lexicon: Lexicon, channel, n_best: int,
                 channel_cache: dict | None = None) -> HypothesisList:
    """Rank candidate source strings by channel likelihood times lexicon prior.

    The verbatim observation is always one of the returned hypotheses; stored
    per-hypothesis scores keep the channel term separate so the segmenter can
    re-weigh the lexicon part dynamically. ``channel_cache`` memoizes the
    per-candidate channel scores across repeated decodes of one utterance.
    """
    if n_best < 1:
        raise ValueError("n_best must be >= 1")
    y = tuple(y)
    cands = _edit1_candidates(y, channel)
    priors = _edit1_prior_scores(y, lexicon, cands)
    scored = []
    for cand in cands:
        if channel_cache is not None and cand in channel_cache:
            ch = channel_cache[cand]
        else:
            ch = channel.log_likelihood(y, cand)
            if channel_cache is not None:
                channel_cache[cand] = ch
        if ch == -math.inf:
            continue
        rank = ch + priors[cand]
        scored.append(Hypothesis(cand, ch, rank))
    scored.sort(key=lambda h: (-h.rank_logp, h.phonemes))
    top = scored[:n_best]
    if all(h.phonemes != y for h in top):
        verbatim = next(h for h in scored if h.phonemes == y)
        top = top[:-1] + [verbatim] if len(top) == n_best else top + [verbatim]
        top.sort(key=lambda h: (-h.rank_logp, h.phonemes))
    return HypothesisList(top)


# ---------------------------------------------------------------------------
# blocked Gibbs segmentation
# ---------------------------------------------------------------------------

def _lse(values: list[float]) -> float:
    hi = max(values)
    if hi == -math.inf:
        return -math.inf
    return hi + math.log(sum(math.exp(v - hi) for v in values))


def _span_scores(phonemes: Phonemes, log_pred, max_len: int) -> list[list[float]]:
    """lp[j][i - j - 1] = static predictive of the word phonemes[j:i]."""
    n = len(phonemes)
    return [[log_pred(phonemes[j:j + w + 1])
             for w in range(min(max_len, n - j))]
            for j in range(n)]


def _forward_table(phonemes: Phonemes, log_pred, max_len: int,
                   spans: list[list[float]] | None = None) -> list[float]:
    n = len(phonemes)
    if spans is None:
        spans = _span_scores(phonemes, log_pred, max_len)
    alpha = [-math.inf] * (n + 1)
    alpha[0] = 0.0
    for i in range(1, n + 1):
        hi = -math.inf
        terms = []
        for j in range(max(0, i - max_len), i):
            a = alpha[j]
            if a == -math.inf:
                continue
            lp = spans[j][i - j - 1]
            if lp > -math.inf:
                v = a + lp
                terms.append(v)
                if v > hi:
                    hi = v
        if terms:
            alpha[i] = hi + math.log(sum(math.exp(v - hi) for v in terms))
    return alpha


def _backward_sample(phonemes: Phonemes, alpha: list[float],
                     spans: list[list[float]], max_len: int,
                     rng: np.random.Generator) -> WordSequence:
    words: list[Word] = []
    i = len(phonemes)
    while i > 0:
        choices = []
        weights = []
        hi = -math.inf
        for j in range(max(0, i - max_len), i):
            a = alpha[j]
            if a == -math.inf:
                continue
            lp = spans[j][i - j - 1]
            if lp > -math.inf:
                choices.append(j)
                weights.append(a + lp)
                if a + lp > hi:
                    hi = a + lp
        u = rng.random() * sum(math.exp(v - hi) for v in weights)
        acc = 0.0
        j = choices[-1]
        for cand_j, v in zip(choices, weights):
            acc += math.exp(v - hi)
            if u < acc:
                j = cand_j
                break
        words.append(phonemes[j:i])
        i = j
    return tuple(reversed(words))


class _CountView:
    """Base lexicon counts plus a mutable corpus overlay."""

    def __init__(self, base: Lexicon):
        self.base = base
        self.corpus: Counter = Counter()
        self.corpus_total = 0
        self.lam = base.params.concentration
        self.max_len = base.params.max_word_len

    def count(self, word: Word) -> float:
        return self.base.counts.get(word, 0) + self.corpus.get(word, 0)

    @property
    def total(self) -> float:
        return self.base.total + self.corpus_total

    def log_pred(self, word: Word) -> float:
        g0 = self.base.log_g0(word)
        c = self.count(word)
        if g0 == -math.inf and c == 0:
            return -math.inf
        lam_g0 = 0.0 if g0 == -math.inf else self.lam * math.exp(g0)
        return math.log(c + lam_g0) - math.log(self.total + self.lam)

    def span_scores(self, phonemes: Phonemes, max_len: int) -> list[list[float]]:
        """Static span predictives, same values as log_pred per span."""
        base = self.base.counts
        corp = self.corpus
        lam_g0 = self.base._lam_g0
        log_denom = math.log(self.total + self.lam)
        log = math.log
        n = len(phonemes)
        out = []
        for j in range(n):
            row = []
            top = min(max_len, n - j)
            for w in range(1, top + 1):
                word = phonemes[j:j + w]
                c = base.get(word, 0) + corp.get(word, 0)
                row.append(log(c + lam_g0[w - 1]) - log_denom)
            out.append(row)
        return out

    def add(self, words: WordSequence) -> None:
        for w in words:
            self.corpus[w] += 1
        self.corpus_total += len(words)

    def remove(self, words: WordSequence) -> None:
        for w in words:
            self.corpus[w] -= 1
            if self.corpus[w] == 0:
                del self.corpus[w]
        self.corpus_total -= len(words)

    def seq_logprob(self, words: WordSequence) -> float:
        """Exact sequential CRP probability of adding ``words`` in order."""
        running: Counter = Counter()
        total = self.total
        out = 0.0
        for m, w in enumerate(words):
            g0 = self.base.log_g0(w)
            c = self.count(w) + running[w]
            if g0 == -math.inf and c == 0:
                return -math.inf
            out += math.log(c + self.lam * math.exp(g0)) - math.log(total + m + self.lam)
            running[w] += 1
        return out


def _static_sum(words: WordSequence, spans: list[list[float]]) -> float:
    j = 0
    total = 0.0
    for w in words:
        total += spans[j][len(w) - 1]
        j += len(w)
    return total


@dataclass
class SegmentResult:
    segmentations: list[WordSequence]
    choices: list[int]
    corpus_counts: Counter
    samples: list[tuple[WordSequence, ...]] = field(default_factory=list)

    def lexicon(self, params: LexiconParams) -> Lexicon:
        return Lexicon(params, self.corpus_counts)


def segment_gibbs(hypothesis_lists: Sequence[HypothesisList], base: Lexicon,
                  sweeps: int, rng: np.random.Generator,
                  collect_samples: bool = False) -> SegmentResult:
    """Blocked Gibbs over (hypothesis choice, segmentation) per utterance.

    Proposals come from a forward-filtering backward-sampling pass with the
    CRP predictive held static, then a Metropolis-Hastings correction makes
    the chain target the exact DP-unigram posterior. Counts in ``base`` act
    as immutable prior customers.
    """
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    if not hypothesis_lists:
        return SegmentResult([], [], Counter())
    view = _CountView(base)
    max_len = base.params.max_word_len
    n_utt = len(hypothesis_lists)
    choices: list[int] = [0] * n_utt
    segs: list[WordSequence | None] = [None] * n_utt
    samples: list[tuple[WordSequence, ...]] = []

    for sweep in range(sweeps):
        for u, hyp_list in enumerate(hypothesis_lists):
            current = segs[u]
            if current is not None:
                view.remove(current)
            # FFBS proposal jointly over (hypothesis, boundaries)
            spans = []
            tables = []
            totals = []
            for hyp in hyp_list.hyps:
                sp = view.span_scores(hyp.phonemes, max_len)
                alpha = _forward_table(hyp.phonemes, view.log_pred, max_len, sp)
                spans.append(sp)
                tables.append(alpha)
                totals.append(hyp.channel_logp + alpha[-1])
            probs = normalize_log_weights(totals)
            u_draw = rng.random()
            acc = 0.0
            b = len(totals) - 1
            for idx, pr in enumerate(probs):
                acc += pr
                if u_draw < acc:
                    b = idx
                    break
            proposal = _backward_sample(hyp_list.hyps[b].phonemes, tables[b],
                                        spans[b], max_len, rng)
            if current is None:
                accepted = True
            else:
                # static proposal density vs exact sequential CRP target;
                # channel terms and the shared normalizer cancel
                log_ratio = (view.seq_logprob(proposal)
                             - _static_sum(proposal, spans[b])
                             - view.seq_logprob(current)
                             + _static_sum(current, spans[choices[u]]))
                accepted = math.log(rng.random()) < min(0.0, log_ratio)
            if accepted:
                choices[u] = b
                segs[u] = proposal
            view.add(segs[u])
        if collect_samples:
            samples.append(tuple(segs))
    return SegmentResult([s for s in segs], choices, view.corpus, samples)


def select_segmentation(segmentations: Sequence[Sequence[WordSequence]],
                        log_weights: Sequence[float]) -> tuple[int, list[WordSequence]]:
    """Pick the segmentation whose identical-copy group carries the largest
    total weight; ties break toward the lowest particle index."""
    if not segmentations:
        raise ValueError("need at least one particle")
    probs = normalize_log_weights(log_weights)
    groups: dict[tuple, list[int]] = {}
    for idx, seg in enumerate(segmentations):
        groups.setdefault(tuple(tuple(s) for s in seg), []).append(idx)
    best_key: tuple = ()
    best_score = -math.inf
    best_index = len(probs)
    for key, members in groups.items():
        score = float(sum(probs[m] for m in members))
        lead = min(members)
        if score > best_score or (score == best_score and lead < best_index):
            best_key, best_score, best_index = key, score, lead
    return best_index, list(best_key)


def resegment_lexicon(sentences: Sequence[WordSequence], params: LexiconParams,
                      sweeps: int, rng: np.random.Generator) -> Lexicon:
    """Re-segment concatenated sentences from scratch and return the induced
    lexicon; mitigates words glued together by earlier passes."""
    if not sentences:
        return Lexicon(params)
    strings = []
    for sent in sentences:
        flat: list[str] = []
        for w in sent:
            flat.extend(w)
        strings.append(HypothesisList.single(tuple(flat)))
    result = segment_gibbs(strings, Lexicon(params), sweeps, rng)
    return Lexicon(params, result.corpus_counts)


def flr_segment(utterances: Sequence[Phonemes], base: Lexicon, channel,
                n_best: int, sweeps: int, rng: np.random.Generator
                ) -> tuple[list[WordSequence], Lexicon, list[HypothesisList]]:
    """Decode and segment a fixed-lag window of utterances.

    The lexicon frozen before the window supplies both the decode prior and
    the prior customers of the segmenter; the returned lexicon merges it with
    the window's sampled word counts. Cost depends only on the window size.
    """
    if not utterances:
        raise ValueError("window must be nonempty")
    hyp_lists = [decode_nbest(y, base, channel, n_best) for y in utterances]
    result = segment_gibbs(hyp_lists, base, sweeps, rng)
    return result.segmentations, base.merged_with(result.corpus_counts), hyp_lists
