"""Shared domain types, log-space weight utilities, and particle bookkeeping."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

NEW = -1  # distinguished id for "open a fresh cluster"

PROB_SUM_TOL = 1e-9


class DegenerateWeightsError(ValueError):
    """Raised when every log-weight is -inf and no distribution exists."""


class StepRecordError(ValueError):
    """Raised for records that violate the dataset schema."""


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi] using the atan2 convention."""
    wrapped = math.atan2(math.sin(theta), math.cos(theta))
    # atan2 maps pi to pi but -pi occurs for inputs like -pi exactly
    if wrapped <= -math.pi:
        wrapped = math.pi
    return wrapped


def assert_prob_vector(p: np.ndarray | Sequence[float]) -> None:
    """Shared guard: every probability vector in the artifact sums to 1."""
    arr = np.asarray(p, dtype=float)
    s = float(arr.sum())
    if not math.isfinite(s) or abs(s - 1.0) > PROB_SUM_TOL:
        raise AssertionError(f"probability vector sums to {s!r}, not 1")
    if (arr < -PROB_SUM_TOL).any():
        raise AssertionError("probability vector has negative entries")


def logsumexp(values: Iterable[float]) -> float:
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        return -math.inf
    hi = arr.max()
    if not math.isfinite(hi):
        return float(hi) if hi == -math.inf else math.inf
    return float(hi + math.log(np.exp(arr - hi).sum()))


def normalize_log_weights(log_weights: Sequence[float]) -> np.ndarray:
    """Exponentiate and normalize log-weights; invariant to a constant shift.

    Raises DegenerateWeightsError when no weight is finite.
    """
    arr = np.asarray(log_weights, dtype=float)
    if arr.size == 0:
        raise DegenerateWeightsError("empty weight vector")
    hi = arr.max()
    if not math.isfinite(hi):
        raise DegenerateWeightsError("all log-weights are -inf")
    p = np.exp(arr - hi)
    p /= p.sum()
    assert_prob_vector(p)
    return p


def systematic_resample(probabilities: Sequence[float], count: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Low-variance systematic resampling.

    Index i appears floor(count*p_i) or ceil(count*p_i) times.
    """
    p = np.asarray(probabilities, dtype=float)
    if p.size == 0:
        raise ValueError("empty probability vector")
    if count < 1:
        raise ValueError("count must be >= 1")
    assert_prob_vector(p)
    positions = (rng.random() + np.arange(count)) / count
    cum = np.cumsum(p)
    cum[-1] = 1.0  # guard against round-off excluding the last index
    return np.searchsorted(cum, positions, side="left").astype(np.int64)


def effective_sample_size(probabilities: Sequence[float]) -> float:
    """ESS = 1 / sum(p_i^2); lies in [1, len(p)] for a proper distribution."""
    p = np.asarray(probabilities, dtype=float)
    assert_prob_vector(p)
    return float(1.0 / np.square(p).sum())


# ---------------------------------------------------------------------------
# domain value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    """2D pose; heading stored normalized to (-pi, pi]."""

    x: float
    y: float
    heading: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)
                and math.isfinite(self.heading)):
            raise ValueError("pose coordinates must be finite")
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class ControlInput:
    """Odometry increment in rotate-translate-rotate form."""

    rot1: float
    trans: float
    rot2: float

    def __post_init__(self):
        if self.trans < 0:
            raise ValueError("translation must be nonnegative")
        if not (math.isfinite(self.rot1) and math.isfinite(self.rot2)
                and math.isfinite(self.trans)):
            raise ValueError("control terms must be finite")


NO_RETURN = math.inf  # sentinel range for beams without an echo


@dataclass(frozen=True)
class RangeScan:
    """Fixed-angle range scan; no-return beams carry range == NO_RETURN."""

    angles: np.ndarray
    ranges: np.ndarray
    max_range: float

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=float)
        ranges = np.asarray(self.ranges, dtype=float)
        if angles.shape != ranges.shape or angles.ndim != 1:
            raise ValueError("angles and ranges must be equal-length vectors")
        if not (np.diff(angles) > 0).all():
            raise ValueError("beam angles must be strictly increasing")
        returned = np.isfinite(ranges)
        if (ranges[returned] <= 0).any() or (ranges[returned] > self.max_range + 1e-9).any():
            raise ValueError("returned ranges must lie in (0, max_range]")
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "ranges", ranges)

    def __eq__(self, other):
        return (isinstance(other, RangeScan)
                and np.array_equal(self.angles, other.angles)
                and np.array_equal(self.ranges, other.ranges)
                and self.max_range == other.max_range)


@dataclass(frozen=True)
class ImageFeature:
    """Bag-of-visual-words count vector."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or (counts < 0).any() or counts.sum() <= 0:
            raise ValueError("feature counts must be nonnegative with positive total")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        return isinstance(other, ImageFeature) and np.array_equal(self.counts, other.counts)


Phonemes = tuple[str, ...]
Word = tuple[str, ...]
WordSequence = tuple[Word, ...]


def words_to_phonemes(words: WordSequence) -> Phonemes:
    out: list[str] = []
    for w in words:
        out.extend(w)
    return tuple(out)


def validate_utterance(phonemes: Sequence[str], alphabet: Sequence[str]) -> Phonemes:
    ph = tuple(phonemes)
    if not ph:
        raise ValueError("utterance must be nonempty")
    allowed = set(alphabet)
    bad = [s for s in ph if s not in allowed]
    if bad:
        raise ValueError(f"symbols outside the alphabet: {bad}")
    return ph


@dataclass(frozen=True)
class Hyperparameters:
    """Prior parameters for the concept/position/word model."""

    alpha: float = 10.0        # concept CRP concentration
    gamma: float = 1.0         # per-concept position CRP concentration
    beta: float = 0.1          # word Dirichlet
    chi: float = 0.1           # feature Dirichlet
    lam: float = 1.0           # lexicon DP concentration
    m0: tuple[float, float] = (0.0, 0.0)
    kappa0: float = 0.001
    v0: tuple[tuple[float, float], tuple[float, float]] = ((2.0, 0.0), (0.0, 2.0))
    nu0: float = 3.0

    def __post_init__(self):
        for name in ("alpha", "gamma", "beta", "chi", "lam", "kappa0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        v0 = np.asarray(self.v0, dtype=float)
        if v0.shape != (2, 2) or not np.allclose(v0, v0.T) or np.linalg.eigvalsh(v0).min() <= 0:
            raise ValueError("v0 must be symmetric positive-definite")
        if self.nu0 <= 1:
            raise ValueError("nu0 must exceed dimension - 1")

    @property
    def m0_vec(self) -> np.ndarray:
        return np.asarray(self.m0, dtype=float)

    @property
    def v0_mat(self) -> np.ndarray:
        return np.asarray(self.v0, dtype=float)


@dataclass(frozen=True)
class Assignment:
    """Latent indices of one teaching step: position cluster and concept."""

    position: int
    concept: int

    def is_concrete(self) -> bool:
        return self.position != NEW and self.concept != NEW


@dataclass(frozen=True)
class StepRecord:
    """One simulator step: odometry + scan, plus an optional teaching pair.

    Ground truth rides along for evaluation only; the learner never reads it.
    """

    t: int
    odom: ControlInput
    scan: RangeScan
    feature: ImageFeature | None = None
    phonemes: Phonemes | None = None
    truth: dict | None = None

    def __post_init__(self):
        if (self.feature is None) != (self.phonemes is None):
            raise StepRecordError("teaching pair must carry both feature and phonemes")
        if self.phonemes is not None and len(self.phonemes) == 0:
            raise StepRecordError("teaching utterance must be nonempty")

    @property
    def is_teaching(self) -> bool:
        return self.phonemes is not None


# ---------------------------------------------------------------------------
# JSON-lines dataset format
# ---------------------------------------------------------------------------

def record_to_json(rec: StepRecord) -> dict:
    obj: dict = {
        "t": rec.t,
        "odom": [rec.odom.rot1, rec.odom.trans, rec.odom.rot2],
        "scan": {
            "angles": [float(a) for a in rec.scan.angles],
            "ranges": [None if not math.isfinite(r) else float(r) for r in rec.scan.ranges],
            "max_range": rec.scan.max_range,
        },
    }
    if rec.feature is not None:
        obj["feature"] = [int(c) for c in rec.feature.counts]
        obj["phonemes"] = " ".join(rec.phonemes)
    if rec.truth is not None:
        obj["truth"] = rec.truth
    return obj


def record_from_json(obj: dict) -> StepRecord:
    try:
        scan = obj["scan"]
        ranges = [NO_RETURN if r is None else float(r) for r in scan["ranges"]]
        feature = None
        phonemes = None
        if "feature" in obj or "phonemes" in obj:
            feature = ImageFeature(np.asarray(obj["feature"], dtype=np.int64))
            phonemes = tuple(obj["phonemes"].split())
        return StepRecord(
            t=int(obj["t"]),
            odom=ControlInput(*[float(v) for v in obj["odom"]]),
            scan=RangeScan(np.asarray(scan["angles"], float), np.asarray(ranges, float),
                           float(scan["max_range"])),
            feature=feature,
            phonemes=phonemes,
            truth=obj.get("truth"),
        )
    except StepRecordError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise StepRecordError(f"malformed step record: {exc}") from exc


def write_records(path, records: Iterable[StepRecord]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_json(rec)) + "\n")


def read_records(path) -> Iterator[StepRecord]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield record_from_json(json.loads(line))


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Deterministic RNG stream keyed by (seed, *key).

    Streams are independent of worker scheduling: every (particle, step)
    pair draws from its own generator.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))
