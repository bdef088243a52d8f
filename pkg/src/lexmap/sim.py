"""Synthetic data generation: multi-room environments, noisy odometry
trajectories, ray-cast range scans, place-conditioned visual-word features,
and phoneme utterances passed through a confusion channel."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (NO_RETURN, ControlInput, ImageFeature, Phonemes, Pose,
                   RangeScan, StepRecord, WordSequence, wrap_angle)
from .slam import MotionNoise, OccupancyGrid, rasterize_segments

ALPHABET: tuple[str, ...] = (
    "a", "i", "u", "e", "o",
    "ka", "ki", "ku", "ke", "ko",
    "sa", "shi", "su", "se", "so",
    "ta", "chi", "tsu", "te", "to",
    "na", "ni", "nu", "ne", "no",
    "ha", "hi", "fu", "he", "ho",
)

NAME = None  # placeholder slot inside a phrase template

TEMPLATES: tuple[tuple, ...] = (
    (("ko", "ko"), ("ha",), NAME, ("te", "su")),
    (NAME, ("te", "su"), ("na", "no")),
    (("ko", "chi", "se"), ("ha",), NAME),
    (("so", "ko"), ("ni",), NAME, ("ka", "na")),
    (("ko", "ko"), ("ha",), NAME, ("ta", "no"), ("te", "su")),
    (NAME, ("ni",), ("i", "ku")),
    (("a", "no"), NAME, ("te", "su")),
    (("hi", "to"), ("ha",), NAME, ("te", "su")),
    (("ko", "ko"), NAME),
    (NAME, ("ka", "na"), ("na", "no")),
)


class EnvironmentSpecError(ValueError):
    """Invalid environment or trajectory specification."""


# ---------------------------------------------------------------------------
# phoneme channel
# ---------------------------------------------------------------------------

class ChannelModel:
    """Symbol-level noise: substitutions and deletions per consumed symbol,
    geometric insertions between symbols. The exact emission likelihood is
    available via dynamic programming and matches the sampler."""

    def __init__(self, alphabet: Sequence[str], p_sub: float, p_ins: float,
                 p_del: float, confusion: np.ndarray):
        if not (0 <= p_sub < 1 and 0 <= p_ins < 1 and 0 <= p_del < 1):
            raise ValueError("rates must lie in [0, 1)")
        confusion = np.asarray(confusion, dtype=float)
        v = len(alphabet)
        if confusion.shape != (v, v) or not np.allclose(confusion.sum(axis=1), 1.0):
            raise ValueError("confusion rows must sum to 1")
        self.alphabet = tuple(alphabet)
        self.p_sub = float(p_sub)
        self.p_ins = float(p_ins)
        self.p_del = float(p_del)
        self.confusion = confusion
        self._index = {s: i for i, s in enumerate(self.alphabet)}

    # -- constructors --------------------------------------------------------
    @classmethod
    def noiseless(cls, alphabet: Sequence[str] = ALPHABET) -> "ChannelModel":
        return cls.uniform(alphabet, 0.0, 0.0, 0.0)

    @classmethod
    def uniform(cls, alphabet: Sequence[str], p_sub: float, p_ins: float,
                p_del: float) -> "ChannelModel":
        """Dense confusion: substitution uniform over all other symbols."""
        v = len(alphabet)
        conf = np.full((v, v), 1.0 / (v - 1))
        np.fill_diagonal(conf, 0.0)
        return cls(alphabet, p_sub, p_ins, p_del, conf)

    @classmethod
    def ring(cls, alphabet: Sequence[str], p_sub: float, p_ins: float,
             p_del: float, width: int = 2) -> "ChannelModel":
        """Sparse confusion: each symbol confusable with its 2*width ring
        neighbors only (keeps n-best decoding cheap)."""
        v = len(alphabet)
        conf = np.zeros((v, v))
        for i in range(v):
            neighbors = [(i + d) % v for d in range(-width, width + 1) if d != 0]
            conf[i, neighbors] = 1.0 / len(neighbors)
        return cls(alphabet, p_sub, p_ins, p_del, conf)

    # -- sampling ------------------------------------------------------------
    def sub_support(self, symbol: str) -> list[str]:
        """Symbols the given source symbol can be confused into."""
        row = self.confusion[self._index[symbol]]
        return [self.alphabet[j] for j in np.nonzero(row)[0]]

    def source_support(self, observed: str) -> list[str]:
        """Source symbols that can emit the given observed symbol."""
        col = self.confusion[:, self._index[observed]]
        return [self.alphabet[j] for j in np.nonzero(col)[0]]

    def apply(self, phonemes: Phonemes, rng: np.random.Generator) -> Phonemes:
        """Sample a corrupted utterance; may come out empty under deletions."""
        out: list[str] = []
        v = len(self.alphabet)
        for sym in tuple(phonemes) + (None,):
            while rng.random() < self.p_ins:
                out.append(self.alphabet[int(rng.integers(v))])
            if sym is None:
                break
            if rng.random() < self.p_del:
                continue
            if rng.random() < self.p_sub:
                row = self.confusion[self._index[sym]]
                out.append(self.alphabet[int(rng.choice(v, p=row))])
            else:
                out.append(sym)
        return tuple(out)

    # -- likelihood ----------------------------------------------------------
    def _emit_prob(self, x: str, y: str) -> float:
        same = 1.0 if x == y else 0.0
        return (1.0 - self.p_sub) * same + self.p_sub * self.confusion[
            self._index[x], self._index[y]]

    def log_likelihood(self, observed: Phonemes, source: Phonemes) -> float:
        """Exact log P(observed | source) by alignment dynamic programming."""
        x = tuple(source)
        y = tuple(observed)
        n, m = len(x), len(y)
        ins = self.p_ins / len(self.alphabet)
        stay = 1.0 - self.p_ins
        f = np.zeros((n + 1, m + 1))
        f[0, 0] = 1.0
        for j in range(1, m + 1):
            f[0, j] = f[0, j - 1] * ins
        for i in range(1, n + 1):
            f[i, 0] = f[i - 1, 0] * stay * self.p_del
            emit_row = [self._emit_prob(x[i - 1], yj) for yj in y]
            for j in range(1, m + 1):
                f[i, j] = (f[i, j - 1] * ins
                           + f[i - 1, j] * stay * self.p_del
                           + f[i - 1, j - 1] * stay * (1.0 - self.p_del) * emit_row[j - 1])
        p = f[n, m] * stay
        return math.log(p) if p > 0 else -math.inf

    def to_json(self) -> dict:
        return {"alphabet": list(self.alphabet), "p_sub": self.p_sub,
                "p_ins": self.p_ins, "p_del": self.p_del,
                "confusion": self.confusion.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "ChannelModel":
        return cls(obj["alphabet"], obj["p_sub"], obj["p_ins"], obj["p_del"],
                   np.asarray(obj["confusion"]))


# ---------------------------------------------------------------------------
# environment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnvironmentSpec:
    """Rectilinear rooms in a row over a shared corridor.

    ``name_ids`` lets several rooms share one place name (and hence one
    concept); explicit ``x_offsets`` may place rooms freely, in which case
    overlap is rejected.
    """

    room_sizes: tuple[tuple[float, float], ...]
    name_ids: tuple[int, ...] | None = None
    corridor_height: float = 2.2
    door_width: float = 0.9
    x_offsets: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.room_sizes:
            raise EnvironmentSpecError("need at least one room")
        for w, h in self.room_sizes:
            if w <= 0 or h <= 0:
                raise EnvironmentSpecError("room sizes must be positive")
        if self.door_width <= 0:
            raise EnvironmentSpecError("door width must be positive")
        if self.corridor_height == 0 and len(self.room_sizes) > 1:
            raise EnvironmentSpecError("rooms are unreachable without a corridor")
        if self.name_ids is not None and len(self.name_ids) != len(self.room_sizes):
            raise EnvironmentSpecError("name_ids must match room count")


@dataclass(frozen=True)
class Place:
    id: int
    name_id: int
    box: tuple[float, float, float, float]  # x0, y0, x1, y1 of the room

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.box
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)


Segment = tuple[tuple[float, float], tuple[float, float]]


@dataclass
class Environment:
    walls: list[Segment]
    places: list[Place]
    names: list[Phonemes]
    bounds: tuple[float, float]
    corridor_height: float

    def to_json(self) -> dict:
        return {
            "walls": [[list(a), list(b)] for a, b in self.walls],
            "places": [{"id": p.id, "name_id": p.name_id, "box": list(p.box)}
                       for p in self.places],
            "names": [" ".join(n) for n in self.names],
            "bounds": list(self.bounds),
            "corridor_height": self.corridor_height,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Environment":
        return cls(
            walls=[(tuple(a), tuple(b)) for a, b in obj["walls"]],
            places=[Place(p["id"], p["name_id"], tuple(p["box"]))
                    for p in obj["places"]],
            names=[tuple(n.split()) for n in obj["names"]],
            bounds=tuple(obj["bounds"]),
            corridor_height=obj["corridor_height"],
        )


def _random_name(rng: np.random.Generator, taken: set) -> Phonemes:
    carriers = {w for t in TEMPLATES for w in t if w is not None}
    while True:
        length = int(rng.integers(3, 6))
        name = tuple(ALPHABET[int(i)] for i in rng.integers(0, len(ALPHABET), length))
        if name not in taken and name not in carriers:
            return name


def generate_environment(spec: EnvironmentSpec, rng: np.random.Generator
                         ) -> Environment:
    """Build walls and named place regions from a room-row specification."""
    sizes = spec.room_sizes
    ch = spec.corridor_height
    if spec.x_offsets is not None:
        offsets = list(spec.x_offsets)
        boxes = [(x0, ch, x0 + w, ch + h) for x0, (w, h) in zip(offsets, sizes)]
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                a, b = boxes[i], boxes[j]
                if a[0] < b[2] and b[0] < a[2]:
                    raise EnvironmentSpecError(f"rooms {i} and {j} overlap")
    else:
        offsets = list(np.concatenate([[0.0], np.cumsum([w for w, _ in sizes])[:-1]]))
        boxes = [(x0, ch, x0 + w, ch + h) for x0, (w, h) in zip(offsets, sizes)]

    total_w = max(b[2] for b in boxes)
    room_h = max(h for _, h in sizes)
    total_h = ch + room_h
    walls: list[Segment] = [
        ((0.0, 0.0), (total_w, 0.0)),
        ((total_w, 0.0), (total_w, total_h)),
        ((total_w, total_h), (0.0, total_h)),
        ((0.0, total_h), (0.0, 0.0)),
    ]
    if ch > 0:
        for x0, y0, x1, y1 in boxes:
            cx = (x0 + x1) / 2.0
            gap_l = cx - spec.door_width / 2.0
            gap_r = cx + spec.door_width / 2.0
            if gap_l > x0:
                walls.append(((x0, y0), (gap_l, y0)))
            if gap_r < x1:
                walls.append(((gap_r, y0), (x1, y0)))
    for i in range(1, len(boxes)):
        x = boxes[i][0]
        walls.append(((x, ch), (x, total_h)))

    name_ids = list(spec.name_ids) if spec.name_ids is not None else list(range(len(sizes)))
    n_names = max(name_ids) + 1
    names: list[Phonemes] = []
    taken: set = set()
    for _ in range(n_names):
        name = _random_name(rng, taken)
        taken.add(name)
        names.append(name)
    places = [Place(i, name_ids[i], boxes[i]) for i in range(len(boxes))]
    return Environment(walls, places, names, (total_w, total_h), ch)


def wall_grid(env: Environment, resolution: float = 0.1) -> OccupancyGrid:
    """Ground-truth occupancy grid rasterized from the wall segments."""
    grid = OccupancyGrid(resolution=resolution, origin=(-1.0, -1.0),
                         shape=(int(env.bounds[1] / resolution) + 24,
                                int(env.bounds[0] / resolution) + 24))
    rasterize_segments(grid, env.walls)
    return grid


# ---------------------------------------------------------------------------
# ray casting
# ---------------------------------------------------------------------------

def raycast_ranges(pose: Pose, angles: np.ndarray, walls: Sequence[Segment],
                   max_range: float) -> np.ndarray:
    """Analytic ray/segment intersection distances; inf past max_range."""
    angles = np.asarray(angles, dtype=float) + pose.heading
    d = np.stack([np.cos(angles), np.sin(angles)], axis=1)  # (B, 2)
    a = np.asarray([s[0] for s in walls], dtype=float)      # (S, 2)
    b = np.asarray([s[1] for s in walls], dtype=float)
    e = b - a                                               # (S, 2)
    p = np.array([pose.x, pose.y])
    ap = a - p                                              # (S, 2)
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
    num_t = ap[None, :, 0] * e[None, :, 1] - ap[None, :, 1] * e[None, :, 0]
    num_s = ap[None, :, 0] * d[:, None, 1] - ap[None, :, 1] * d[:, None, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num_t / denom
        s = num_s / denom
    valid = (np.abs(denom) > 1e-12) & (t > 1e-9) & (s >= 0.0) & (s <= 1.0)
    t = np.where(valid, t, np.inf)
    best = t.min(axis=1)
    return np.where(best <= max_range, best, np.inf)


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectorySpec:
    total_teaching: int = 60
    step_length: float = 1.0
    beams: int = 36
    max_range: float = 10.0
    range_sigma: float = 0.02
    odom_noise: MotionNoise = field(default_factory=lambda: MotionNoise(0.005, 0.005, 0.005, 0.005))
    feature_dim: int = 20
    feature_total: int = 50
    feature_dirichlet: float = 0.5


def _scan_at(pose: Pose, env: Environment, traj: TrajectorySpec,
             rng: np.random.Generator) -> RangeScan:
    angles = np.linspace(-math.pi, math.pi, traj.beams, endpoint=False)
    true_r = raycast_ranges(pose, angles, env.walls, traj.max_range)
    hit = np.isfinite(true_r)
    noisy = true_r.copy()
    noisy[hit] = np.clip(true_r[hit] + rng.normal(0.0, traj.range_sigma, hit.sum()),
                         1e-3, traj.max_range)
    noisy[~hit] = NO_RETURN
    return RangeScan(angles, noisy, traj.max_range)


def _control_between(prev: Pose, nxt: Pose) -> ControlInput:
    dx, dy = nxt.x - prev.x, nxt.y - prev.y
    trans = math.hypot(dx, dy)
    bearing = math.atan2(dy, dx) if trans > 1e-9 else prev.heading
    rot1 = wrap_angle(bearing - prev.heading)
    rot2 = wrap_angle(nxt.heading - bearing)
    return ControlInput(rot1, trans, rot2)


def _noisy_odom(u: ControlInput, noise: MotionNoise,
                rng: np.random.Generator) -> ControlInput:
    r1 = u.rot1 + rng.normal(0.0, math.sqrt(noise.a1 * u.rot1 ** 2 + noise.a2 * u.trans ** 2))
    tr = abs(u.trans + rng.normal(0.0, math.sqrt(noise.a3 * u.trans ** 2
                                                 + noise.a4 * (u.rot1 ** 2 + u.rot2 ** 2))))
    r2 = u.rot2 + rng.normal(0.0, math.sqrt(noise.a1 * u.rot2 ** 2 + noise.a2 * u.trans ** 2))
    return ControlInput(r1, tr, r2)


def _waypoints(start: Pose, target: tuple[float, float], env: Environment,
               step_length: float) -> list[tuple[float, float]]:
    mid_y = env.corridor_height / 2.0 if env.corridor_height > 0 else start.y
    anchors = [(start.x, start.y)]
    if abs(start.y - mid_y) > 1e-6:
        anchors.append((start.x, mid_y))
    if abs(start.x - target[0]) > 1e-6:
        anchors.append((target[0], mid_y))
    anchors.append(target)
    points: list[tuple[float, float]] = []
    for a, b in zip(anchors, anchors[1:]):
        dist = math.hypot(b[0] - a[0], b[1] - a[1])
        if dist < 1e-9:
            continue
        n = max(1, int(math.ceil(dist / step_length)))
        for i in range(1, n + 1):
            f = i / n
            points.append((a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])))
    return points


def apply_channel(phonemes: Phonemes, channel: ChannelModel,
                  rng: np.random.Generator) -> Phonemes:
    return channel.apply(phonemes, rng)


def start_pose(env: Environment) -> Pose:
    """Deterministic initial pose; the learner is told where it starts."""
    y = env.corridor_height / 2.0 if env.corridor_height > 0 \
        else env.places[0].center[1]
    return Pose(env.places[0].box[0] + 0.8, y, 0.0)


def generate_dataset(env: Environment, traj: TrajectorySpec,
                     channel: ChannelModel, rng: np.random.Generator
                     ) -> list[StepRecord]:
    """Roll out a teaching tour: move through the corridor to each place,
    then emit a (feature, utterance) teaching pair with ground truth."""
    n_places = len(env.places)
    per_place = traj.total_teaching // n_places
    extra = traj.total_teaching - per_place * n_places
    visit_pool = [p.id for p in env.places for _ in range(per_place)]
    visit_pool += [env.places[i].id for i in range(extra)]
    order = list(rng.permutation(visit_pool))

    n_concepts = max(p.name_id for p in env.places) + 1
    thetas = rng.dirichlet([traj.feature_dirichlet] * traj.feature_dim,
                           size=n_concepts)

    records: list[StepRecord] = []
    pose = Pose(env.places[0].box[0] + 0.8, env.corridor_height / 2.0
                if env.corridor_height > 0 else env.places[0].center[1], 0.0)
    t = 0
    for place_id in order:
        place = env.places[place_id]
        x0, y0, x1, y1 = place.box
        jitter_x = rng.uniform(-0.25, 0.25) * (x1 - x0)
        jitter_y = rng.uniform(-0.25, 0.25) * (y1 - y0)
        target = (place.center[0] + jitter_x, place.center[1] + jitter_y)
        points = _waypoints(pose, target, env, traj.step_length)
        for idx, (px, py) in enumerate(points):
            heading = math.atan2(py - pose.y, px - pose.x) \
                if math.hypot(px - pose.x, py - pose.y) > 1e-9 else pose.heading
            nxt = Pose(px, py, heading)
            u_true = _control_between(pose, nxt)
            u_obs = _noisy_odom(u_true, traj.odom_noise, rng)
            pose = nxt
            scan = _scan_at(pose, env, traj, rng)
            teaching = idx == len(points) - 1
            feature = None
            phonemes = None
            truth: dict = {"pose": [float(pose.x), float(pose.y), float(pose.heading)]}
            if teaching:
                concept = place.name_id
                counts = rng.multinomial(traj.feature_total, thetas[concept])
                feature = ImageFeature(counts)
                template = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
                words: WordSequence = tuple(
                    env.names[concept] if w is NAME else w for w in template)
                flat = tuple(s for w in words for s in w)
                noisy: Phonemes = ()
                while not noisy:  # degenerate all-deleted draws are re-drawn
                    noisy = apply_channel(flat, channel, rng)
                phonemes = noisy
                truth.update({
                    "place": int(place.id),
                    "concept": int(concept),
                    "words": [" ".join(w) for w in words],
                })
            records.append(StepRecord(t=t, odom=u_obs, scan=scan,
                                      feature=feature, phonemes=phonemes,
                                      truth=truth))
            t += 1
    return records


def default_home_spec() -> EnvironmentSpec:
    """Six rooms over a corridor; two rooms share a name (5 distinct names)."""
    return EnvironmentSpec(
        room_sizes=((4.0, 4.0),) * 6,
        name_ids=(0, 1, 2, 3, 1, 4),
    )
