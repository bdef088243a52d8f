"""Evaluation: clustering/lexical metrics, word selection, the batch
collapsed-Gibbs reference sampler, and scalability slope reports."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats as scipy_stats

from .concepts import (ConceptDatum, PosteriorStats, ThetaSnapshot,
                       joint_conditional_ic)
from .core import NEW, Assignment, Hyperparameters, WordSequence
from .lexicon import Lexicon


def ari(labels_a: Sequence, labels_b: Sequence) -> float:
    """Adjusted Rand Index via pair counting with chance correction."""
    if len(labels_a) != len(labels_b):
        raise ValueError("label sequences must have equal length")
    n = len(labels_a)
    if n < 2:
        raise ValueError("need at least two items")
    table: Counter = Counter(zip(labels_a, labels_b))
    rows: Counter = Counter(labels_a)
    cols: Counter = Counter(labels_b)
    comb2 = lambda m: m * (m - 1) / 2.0
    sum_ij = sum(comb2(c) for c in table.values())
    sum_a = sum(comb2(c) for c in rows.values())
    sum_b = sum(comb2(c) for c in cols.values())
    total = comb2(n)
    expected = sum_a * sum_b / total
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:  # both partitions trivial
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def ear(n_correct: int, n_estimated: int) -> float:
    """Cluster-count accuracy: max(1 - |nC - nE| / nC, 0)."""
    if n_correct < 1:
        raise ValueError("n_correct must be >= 1")
    return max(1.0 - abs(n_correct - n_estimated) / n_correct, 0.0)


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Edit distance over token sequences (two-row dynamic program)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, tok_a in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, tok_b in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (tok_a != tok_b))
        prev = cur
    return prev[-1]


DELIM = "|"


def delimited(words: Sequence[Sequence[str]]) -> list[str]:
    """Flatten a word sequence into tokens with a delimiter token between
    words; the delimiter counts as a single letter in PAR."""
    out: list[str] = []
    for i, w in enumerate(words):
        if i:
            out.append(DELIM)
        out.extend(w)
    return out


def par(correct: Sequence[str], hypothesis: Sequence[str]) -> float:
    """Phoneme accuracy rate: 1 - LD/len(correct), clamped at 0."""
    correct = list(correct)
    if not correct:
        raise ValueError("correct sequence must be nonempty")
    dist = levenshtein(correct, list(hypothesis))
    return max(1.0 - dist / len(correct), 0.0)


def _gaussian_logpdf(xy: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    dx, dy = xy[0] - mean[0], xy[1] - mean[1]
    quad = (cov[1, 1] * dx * dx - 2 * cov[0, 1] * dx * dy + cov[0, 0] * dy * dy) / det
    return -math.log(2.0 * math.pi) - 0.5 * math.log(det) - 0.5 * quad


def select_word(xy: np.ndarray, theta: ThetaSnapshot, lexicon: Lexicon) -> tuple:
    """Most probable place word at a position, marginalized over concepts and
    their position clusters; ties break lexicographically."""
    if not lexicon.counts:
        raise ValueError("empty lexicon")
    if not theta.concept_ids:
        raise ValueError("no concepts learned")
    xy = np.asarray(xy, dtype=float)
    weights = {}
    for l in theta.concept_ids:
        spatial = sum(theta.phi[l][k] * math.exp(_gaussian_logpdf(
            xy, theta.position_mean[k], theta.position_cov[k]))
            for k in theta.position_ids)
        weights[l] = theta.pi[l] * spatial
    # Dirichlet means over the union vocabulary so dictionary-only words get
    # coherent smoothing mass
    vocab_size = len(set(theta.vocabulary) | set(lexicon.counts))
    best_word = None
    best_score = -math.inf
    for word in sorted(lexicon.counts):
        score = 0.0
        for l in theta.concept_ids:
            counts = theta.word_counts.get(l, {})
            denom = theta.word_totals.get(l, 0) + vocab_size * theta.beta
            score += weights[l] * (counts.get(word, 0) + theta.beta) / denom
        if score > best_score:
            best_word, best_score = word, score
    return best_word


@dataclass
class GibbsOracleResult:
    assignments: list[Assignment]
    samples: list[tuple[tuple[int, int], ...]]
    tables: list[dict]


def batch_gibbs_oracle(data: Sequence[ConceptDatum], hyper: Hyperparameters,
                       feature_dim: int, iterations: int,
                       rng: np.random.Generator,
                       collect_samples: bool = False) -> GibbsOracleResult:
    """Batch collapsed Gibbs over (position, concept) assignments.

    Shares the conditional routine with the online model, so its per-datum
    conditional tables are exactly the rejuvenation sweep's. Intended as a
    test oracle for small datasets.
    """
    stats = PosteriorStats(hyper, feature_dim)
    assignments: list[Assignment] = []
    for datum in data:  # sequential prior-predictive initialization
        pred = joint_conditional_ic(stats, datum)
        assignments.append(stats.add(datum, pred.sample(rng)))
    samples: list[tuple[tuple[int, int], ...]] = []
    tables: list[dict] = []
    for _ in range(iterations):
        for idx, datum in enumerate(data):
            stats.remove(datum, assignments[idx])
            pred = joint_conditional_ic(stats, datum)
            assignments[idx] = stats.add(datum, pred.sample(rng))
        if collect_samples:
            samples.append(tuple((a.position, a.concept) for a in assignments))
    return GibbsOracleResult(assignments, samples, tables)


def canonical_partition(labels: Sequence[int]) -> tuple[int, ...]:
    """Relabel cluster ids by first appearance so histories compare equal."""
    mapping: dict[int, int] = {}
    out = []
    for lab in labels:
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out.append(mapping[lab])
    return tuple(out)


@dataclass
class SlopeStat:
    slope: float
    ci_low: float
    ci_high: float
    n: int

    @property
    def contains_zero(self) -> bool:
        return self.ci_low <= 0.0 <= self.ci_high

    @property
    def strictly_positive(self) -> bool:
        return self.ci_low > 0.0


def time_slope(steps: Sequence[float], millis: Sequence[float],
               confidence: float = 0.95) -> SlopeStat:
    """Least-squares slope of per-step wall time with a t-based CI."""
    x = np.asarray(steps, dtype=float)
    y = np.asarray(millis, dtype=float)
    if x.size < 3:
        raise ValueError("need at least 3 points")
    res = scipy_stats.linregress(x, y)
    tcrit = scipy_stats.t.ppf(0.5 + confidence / 2.0, x.size - 2)
    margin = tcrit * res.stderr
    return SlopeStat(float(res.slope), float(res.slope - margin),
                     float(res.slope + margin), x.size)


def scalability_report(timings: dict[str, list[tuple[float, float]]]) -> dict:
    """Per-variant slope statistics of wall time vs. step index."""
    report = {}
    for variant, points in timings.items():
        if len(points) < 20:
            raise ValueError(f"variant {variant}: need >= 20 timed steps")
        xs = [p[0] for p in points]
        ys = [p[1] for p in points]
        stat = time_slope(xs, ys)
        report[variant] = {
            "slope_ms_per_step": stat.slope,
            "ci_low": stat.ci_low,
            "ci_high": stat.ci_high,
            "n": stat.n,
            "flat": stat.contains_zero,
        }
    return report


def format_report(report: dict) -> str:
    lines = [f"{'variant':24s} {'slope ms/step':>14s} {'95% CI':>24s} flat"]
    for variant, row in report.items():
        ci = f"[{row['ci_low']:+.3f}, {row['ci_high']:+.3f}]"
        lines.append(f"{variant:24s} {row['slope_ms_per_step']:+14.3f} {ci:>24s}"
                     f" {'yes' if row['flat'] else 'no'}")
    return "\n".join(lines)
