"""Particle-filter engine running the five algorithm variants: the two
baselines, the improved fixed-lag variants, and the windowed scalable one."""

from __future__ import annotations

import json
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .concepts import (ConceptDatum, PosteriorStats, WindowEntry,
                       concept_weights, estimate_theta, flr_sweep,
                       joint_conditional_ic)
from .core import (Assignment, Hyperparameters, Phonemes, Pose, StepRecord,
                   StepRecordError, WordSequence, effective_sample_size,
                   normalize_log_weights, rng_for, systematic_resample)
from .lexicon import (Lexicon, LexiconParams, decode_nbest, resegment_lexicon,
                      segment_gibbs, select_segmentation)
from .slam import (LikelihoodFieldParams, MotionNoise, OccupancyGrid,
                   sample_motion_model, scan_match, slam_weight)

VARIANTS = ("original", "original_aw_ws", "improved_flr", "improved_flr_rs",
            "scalable")

# rng stream ids
_MOTION, _WEIGHT, _SEGMENT, _CONCEPT, _RESAMPLE, _RS = range(1, 7)


@dataclass(frozen=True)
class AlgorithmConfig:
    """Resolved run configuration for one engine cell."""

    variant: str = "improved_flr_rs"
    particles: int = 10
    lag: int = 10
    motion_samples: int = 30
    n_best: int = 5
    sweeps: int | None = None       # None: 10 on full history, 20 on a window
    rs_sweeps: int = 30
    seed: int = 0
    resample: str = "every"         # every | teaching | ess
    grid_resolution: float = 0.1
    feature_dim: int = 20
    max_word_len: int = 8
    p_continue: float = 0.5
    motion_noise: MotionNoise = field(default_factory=MotionNoise)
    lf: LikelihoodFieldParams = field(default_factory=LikelihoodFieldParams)
    hyper: Hyperparameters = field(default_factory=Hyperparameters)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.particles < 1 or self.lag < 0:
            raise ValueError("particles must be >= 1 and lag >= 0")
        if self.resample not in ("every", "teaching", "ess"):
            raise ValueError(f"unknown resample mode {self.resample!r}")

    # variant structure -----------------------------------------------------
    @property
    def uses_flr(self) -> bool:
        return self.variant in ("improved_flr", "improved_flr_rs", "scalable")

    @property
    def uses_aw(self) -> bool:
        return self.variant != "original"

    @property
    def uses_ws(self) -> bool:
        return self.variant != "original"

    @property
    def uses_rs(self) -> bool:
        return self.variant == "improved_flr_rs"

    @property
    def windowed(self) -> bool:
        return self.variant == "scalable"

    @property
    def effective_sweeps(self) -> int:
        if self.sweeps is not None:
            return self.sweeps
        return 20 if self.windowed else 10

    def lexicon_params(self, alphabet_size: int) -> LexiconParams:
        return LexiconParams(alphabet_size, self.p_continue, self.max_word_len,
                             self.hyper.lam)

    def to_json(self) -> dict:
        return {
            "variant": self.variant, "particles": self.particles,
            "lag": self.lag, "motion_samples": self.motion_samples,
            "n_best": self.n_best, "sweeps": self.sweeps,
            "rs_sweeps": self.rs_sweeps, "seed": self.seed,
            "resample": self.resample, "grid_resolution": self.grid_resolution,
            "feature_dim": self.feature_dim, "max_word_len": self.max_word_len,
            "p_continue": self.p_continue,
            "motion_noise": [self.motion_noise.a1, self.motion_noise.a2,
                             self.motion_noise.a3, self.motion_noise.a4],
            "lf": [self.lf.sigma_hit, self.lf.w_hit, self.lf.w_rand],
            "hyper": {
                "alpha": self.hyper.alpha, "gamma": self.hyper.gamma,
                "beta": self.hyper.beta, "chi": self.hyper.chi,
                "lam": self.hyper.lam, "m0": list(self.hyper.m0),
                "kappa0": self.hyper.kappa0,
                "v0": [list(r) for r in self.hyper.v0], "nu0": self.hyper.nu0,
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AlgorithmConfig":
        kwargs = dict(obj)
        if "motion_noise" in kwargs:
            kwargs["motion_noise"] = MotionNoise(*kwargs["motion_noise"])
        if "lf" in kwargs:
            kwargs["lf"] = LikelihoodFieldParams(*kwargs["lf"])
        if "hyper" in kwargs:
            h = dict(kwargs["hyper"])
            h["m0"] = tuple(h["m0"])
            h["v0"] = tuple(tuple(r) for r in h["v0"])
            kwargs["hyper"] = Hyperparameters(**h)
        return cls(**kwargs)


class Particle:
    """One filter hypothesis: trajectory tail, grid, posterior stats, lag
    window, segmentations, and the running weights."""

    __slots__ = ("pose", "grid", "stats", "window", "assignments",
                 "segmentations", "teach_poses", "log_weight", "log_ws_cum",
                 "ws_window")

    def __init__(self, pose: Pose, grid: OccupancyGrid, stats: PosteriorStats,
                 lag: int):
        self.pose = pose
        self.grid = grid
        self.stats = stats
        self.window: deque[WindowEntry] = deque()
        self.assignments: list[Assignment] = []
        self.segmentations: list[WordSequence] = []
        self.teach_poses: list[Pose] = []
        self.log_weight = 0.0
        self.log_ws_cum = 0.0
        self.ws_window: deque[float] = deque(maxlen=max(lag, 1))

    def clone(self) -> "Particle":
        dup = Particle.__new__(Particle)
        dup.pose = self.pose
        dup.grid = self.grid.clone()
        dup.stats = self.stats.clone()
        dup.window = deque(e.clone() for e in self.window)
        dup.assignments = list(self.assignments)
        dup.segmentations = list(self.segmentations)
        dup.teach_poses = list(self.teach_poses)
        dup.log_weight = self.log_weight
        dup.log_ws_cum = self.log_ws_cum
        dup.ws_window = deque(self.ws_window, maxlen=self.ws_window.maxlen)
        return dup

    def log_ws(self, windowed: bool) -> float:
        return float(sum(self.ws_window)) if windowed else self.log_ws_cum


@dataclass
class StepOutput:
    """Per-step public record; wall times stay out of the JSON line so a
    rerun is byte-identical."""

    t: int
    teaching: bool
    weights: list[float]
    max_particle: int
    ess: float
    resampled: bool
    pose: tuple[float, float, float]
    n_concepts: int
    n_positions: int
    assignments: dict | None = None
    s_star: list[list[str]] | None = None
    theta: dict | None = None
    timings: dict | None = None

    def to_json(self) -> dict:
        obj = {
            "t": self.t, "teaching": self.teaching,
            "weights": [round(float(w), 12) for w in self.weights],
            "max_particle": self.max_particle, "ess": round(float(self.ess), 9),
            "resampled": self.resampled,
            "pose": [round(v, 9) for v in self.pose],
            "n_concepts": self.n_concepts, "n_positions": self.n_positions,
        }
        if self.assignments is not None:
            obj["assignments"] = self.assignments
        if self.s_star is not None:
            obj["s_star"] = self.s_star
        if self.theta is not None:
            obj["theta"] = self.theta
        return obj


class _Phases:
    def __init__(self):
        self.rows: list[tuple[str, float]] = []
        self._t0 = time.perf_counter()

    def mark(self, phase: str) -> None:
        now = time.perf_counter()
        self.rows.append((phase, (now - self._t0) * 1000.0))
        self._t0 = now

    def as_dict(self) -> dict:
        out: dict[str, float] = {}
        for phase, ms in self.rows:
            out[phase] = out.get(phase, 0.0) + ms
        out["total"] = sum(out.values())
        return out


class Engine:
    """Runs one variant over a stream of step records.

    Particles are processed in a deterministic loop, but every random draw
    comes from a stream keyed by (seed, stream, step, particle), so the
    result would be identical under any worker scheduling.
    """

    def __init__(self, config: AlgorithmConfig, channel, start: Pose | None = None):
        kernels.warmup()
        self.config = config
        self.channel = channel
        self.lex_params = config.lexicon_params(len(channel.alphabet))
        self.lm = Lexicon(self.lex_params)          # published dictionary
        self.frozen_lm = Lexicon(self.lex_params)   # scalable decode base
        self.teach_utterances: list[Phonemes] = []  # window-only when scalable
        self.teach_features: list[np.ndarray] = []
        self._channel_cache: dict[Phonemes, dict] = {}
        self.selected_segs: deque[WordSequence] = deque()
        self.n_teach = 0
        self.step_index = 0
        pose0 = start if start is not None else Pose(0.0, 0.0, 0.0)
        self.particles = [
            Particle(pose0,
                     OccupancyGrid(resolution=config.grid_resolution),
                     PosteriorStats(config.hyper, config.feature_dim),
                     config.lag)
            for _ in range(config.particles)
        ]
        self.timing_rows: list[tuple[int, str, float]] = []

    # -- helpers -------------------------------------------------------------
    def _validate(self, record: StepRecord) -> None:
        if record.is_teaching and len(record.feature.counts) != self.config.feature_dim:
            raise StepRecordError(
                f"feature dim {len(record.feature.counts)} != configured "
                f"{self.config.feature_dim}")

    def _rng(self, stream: int, particle: int = 0) -> np.random.Generator:
        return rng_for(self.config.seed, stream, self.step_index, particle)

    # -- main ---------------------------------------------------------------
    def step(self, record: StepRecord) -> StepOutput:
        self._validate(record)
        cfg = self.config
        phases = _Phases()
        teaching = record.is_teaching

        # SLAM: motion proposal, scan-match refinement, measurement weight
        for r, p in enumerate(self.particles):
            rng_m = self._rng(_MOTION, r)
            guess = sample_motion_model(record.odom, p.pose, cfg.motion_noise, rng_m)
            refined = scan_match(record.scan, guess, p.grid, cfg.lf)
            w_z = slam_weight(record.scan, p.pose, record.odom, p.grid,
                              cfg.motion_samples, cfg.motion_noise,
                              self._rng(_WEIGHT, r), cfg.lf)
            p.pose = refined
            p.log_weight += w_z
        phases.mark("slam")

        s_star_out: list[list[str]] | None = None
        if teaching:
            s_star_out = self._teaching_phase(record, phases)

        for p in self.particles:
            p.grid.integrate_scan(record.scan, p.pose)
        phases.mark("grid")

        probs = normalize_log_weights([p.log_weight for p in self.particles])
        ess = effective_sample_size(probs)
        max_particle = int(np.argmax(probs))
        src = self.particles[max_particle]  # pre-resample snapshot source
        do_resample = {
            "every": True,
            "teaching": teaching,
            "ess": ess < cfg.particles / 2.0,
        }[cfg.resample]
        if cfg.particles == 1:
            do_resample = False
        if do_resample:
            idx = systematic_resample(probs, cfg.particles, self._rng(_RESAMPLE))
            self.particles = [self.particles[i].clone() for i in idx]
            for p in self.particles:
                p.log_weight = 0.0
        phases.mark("resample")

        out = StepOutput(
            t=record.t, teaching=teaching, weights=[float(v) for v in probs],
            max_particle=max_particle, ess=ess, resampled=do_resample,
            pose=(src.pose.x, src.pose.y, src.pose.heading),
            n_concepts=len(src.stats.concepts),
            n_positions=len(src.stats.positions),
        )
        if teaching:
            out.assignments = {
                "i": [a.position for a in src.assignments],
                "C": [a.concept for a in src.assignments],
            }
            out.s_star = s_star_out
            out.theta = estimate_theta(src.stats).to_json()
        out.timings = phases.as_dict()
        for phase, ms in out.timings.items():
            self.timing_rows.append((record.t, phase, ms))
        self.step_index += 1
        return out

    # -- teaching machinery ---------------------------------------------------
    def _teaching_phase(self, record: StepRecord, phases: _Phases) -> list[list[str]]:
        cfg = self.config
        lag = max(cfg.lag, 1)

        # slide the fixed-lag window before this step enters it
        keep_old = (lag - 1) if cfg.uses_flr else 0
        while self.config.windowed and len(self.teach_utterances) > keep_old:
            frozen_words = self.selected_segs.popleft()
            self.frozen_lm = self.frozen_lm.merged_with(
                _word_counter([frozen_words]))
            gone = self.teach_utterances.pop(0)
            self.teach_features.pop(0)
            self._channel_cache.pop(gone, None)
        for p in self.particles:
            while len(p.window) > keep_old:
                p.window.popleft()

        self.teach_utterances.append(record.phonemes)
        self.teach_features.append(record.feature.counts)
        teach_idx = self.n_teach
        self.n_teach += 1

        decode_base = self.frozen_lm if cfg.windowed else self.lm
        hyp_lists = [decode_nbest(y, decode_base, self.channel, cfg.n_best,
                                  self._channel_cache.setdefault(y, {}))
                     for y in self.teach_utterances]
        phases.mark("decode")

        seg_base = self.frozen_lm if cfg.windowed else Lexicon(self.lex_params)
        window_len = len(self.teach_utterances)
        for r, p in enumerate(self.particles):
            result = segment_gibbs(hyp_lists, seg_base, cfg.effective_sweeps,
                                   self._rng(_SEGMENT, r))
            new_segs = result.segmentations
            # refresh word counts of re-segmented steps already in the stats
            start = teach_idx - (window_len - 1)
            for offset in range(window_len - 1):
                idx = start + offset
                old = p.segmentations[idx]
                new = new_segs[offset]
                if old != new:
                    p.stats.replace_words(p.assignments[idx], old, new)
                    p.segmentations[idx] = new
            for entry in p.window:
                entry.datum = entry.datum.with_words(p.segmentations[entry.step])
            p.segmentations.append(new_segs[-1])
        phases.mark("segment")

        for r, p in enumerate(self.particles):
            rng_c = self._rng(_CONCEPT, r)
            if cfg.uses_flr:
                flr_sweep(p.stats, list(p.window), rng_c)
                for entry in p.window:
                    p.assignments[entry.step] = entry.assignment
            datum = ConceptDatum(np.array([p.pose.x, p.pose.y]),
                                 record.feature.counts,
                                 p.segmentations[teach_idx])
            w_f, w_ic, w_s = concept_weights(p.stats, datum)
            pred = joint_conditional_ic(p.stats, datum)
            assignment = p.stats.add(datum, pred.sample(rng_c))
            p.assignments.append(assignment)
            p.teach_poses.append(p.pose)
            entry = WindowEntry(teach_idx, datum, assignment)
            p.window.append(entry)
            p.log_weight += w_f + w_s + (w_ic if cfg.uses_aw else 0.0)
            p.log_ws_cum += w_s
            p.ws_window.append(w_s)
        phases.mark("concepts")

        # language-model selection and publication
        if cfg.windowed:
            segs = [p.segmentations[-window_len:] for p in self.particles]
        else:
            segs = [p.segmentations for p in self.particles]
        if cfg.uses_ws:
            sel_weights = [p.log_ws(cfg.windowed) for p in self.particles]
        else:
            sel_weights = [p.log_weight for p in self.particles]
        winner, s_star = select_segmentation(segs, sel_weights)
        phases.mark("select")

        if cfg.windowed:
            self.selected_segs = deque(s_star)
            self.lm = self.frozen_lm.merged_with(_word_counter(s_star))
        elif cfg.uses_rs:
            self.lm = resegment_lexicon(s_star, self.lex_params, cfg.rs_sweeps,
                                        self._rng(_RS))
        else:
            self.lm = Lexicon.from_sentences(self.lex_params, s_star)
        phases.mark("lexicon")
        return [[" ".join(w) for w in sent] for sent in s_star]

    # -- exports ---------------------------------------------------------------
    def final_artifacts(self) -> dict:
        probs = normalize_log_weights([p.log_weight for p in self.particles])
        best = self.particles[int(np.argmax(probs))]
        theta = estimate_theta(best.stats)
        return {
            "theta": theta.to_json(),
            "assignments": {
                "i": [a.position for a in best.assignments],
                "C": [a.concept for a in best.assignments],
            },
            "segmentation": [[" ".join(w) for w in sent]
                             for sent in best.segmentations],
            "teach_poses": [[p.x, p.y, p.heading] for p in best.teach_poses],
            "lexicon": self.lm.to_json(),
            "grid": best.grid,
            "theta_obj": theta,
        }


def _word_counter(sentences: Sequence[WordSequence]):
    from collections import Counter

    counts: Counter = Counter()
    for sent in sentences:
        counts.update(sent)
    return counts


@dataclass
class RunResult:
    outputs: list[StepOutput]
    engine: Engine
    out_dir: Path | None = None


def run(records: Sequence[StepRecord], config: AlgorithmConfig, channel,
        out_dir: str | Path | None = None, start: Pose | None = None,
        metrics_off: bool = False) -> RunResult:
    """Run one engine cell over a dataset; optionally write the artifact
    directory (config.json, steps.jsonl, timing.csv, final/)."""
    if not records:
        raise ValueError("dataset is empty")
    engine = Engine(config, channel, start=start)
    outputs = []
    for record in records:
        out = engine.step(record)
        if metrics_off:
            out.assignments = None
            out.s_star = None
            out.theta = None
        outputs.append(out)

    result = RunResult(outputs, engine)
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "final").mkdir(parents=True, exist_ok=True)
        with open(out_dir / "config.json", "w") as fh:
            json.dump(config.to_json(), fh, indent=1, sort_keys=True)
        with open(out_dir / "steps.jsonl", "w") as fh:
            for out in outputs:
                fh.write(json.dumps(out.to_json()) + "\n")
        with open(out_dir / "timing.csv", "w") as fh:
            fh.write("t,phase,ms\n")
            for t, phase, ms in engine.timing_rows:
                fh.write(f"{t},{phase},{ms:.6f}\n")
        final = engine.final_artifacts()
        final["grid"].save(out_dir / "final" / "grid.pgm",
                           out_dir / "final" / "grid.json")
        with open(out_dir / "final" / "params.json", "w") as fh:
            json.dump({k: final[k] for k in
                       ("theta", "assignments", "segmentation", "teach_poses")},
                      fh)
        with open(out_dir / "final" / "lexicon.json", "w") as fh:
            json.dump(final["lexicon"], fh, indent=1, sort_keys=True)
        result.out_dir = out_dir
    return result
