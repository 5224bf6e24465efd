"""Synthetic multi-actor scenes.

Instead of video frames, each actor carries one feature vector per branch,
drawn as an action prototype plus Gaussian noise. Two label rules are
provided. 'key-actor-side' designates one actor whose action picks a base
activity and whose horizontal position picks the left/right variant, so the
activity label is base * 2 + side. 'majority-action' labels the scene with
the action most actors perform, resampling action vectors until the top
count is unique.

Branch prototypes are drawn independently per branch, so different branches
carry different views of the same action. With `complementary` set, pairs of
key actions are additionally collapsed to a shared prototype per branch
(different pairs in different branches): no single branch can separate all
key actions, but together they can. `corrupt_prob` replaces an actor's
feature vector in one branch with pure noise at that rate, independently per
branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .fileio import atomic_write_text, f17
from .posenc import BoxCenter
from .seeding import DATA, rng_for

RULE_KEY_ACTOR = "key-actor-side"
RULE_MAJORITY = "majority-action"
RULES = (RULE_KEY_ACTOR, RULE_MAJORITY)

# Key actors stay clear of the x = 0.5 midline by this margin, on either side.
SIDE_MARGIN = 0.02

FORMAT_HEADER = "groupact-dataset v1"


@dataclass(frozen=True)
class SceneConfig:
    rule: str
    num_actions: int
    num_activities: int
    n_actors: object = 12  # int, or (lo, hi) drawn uniformly per scene
    branch_dims: dict = field(default_factory=lambda: {"static": 16})
    noise: float = 0.5
    complementary: bool = False
    corrupt_prob: float = 0.0
    t_frames: int = 10  # carried as metadata; features are already per-clip
    seed: int = 0

    def __post_init__(self):
        if self.rule not in RULES:
            raise ConfigError(f"unknown rule {self.rule!r}, expected one of {RULES}")
        lo, hi = self.actor_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad actor count range {self.n_actors!r}")
        if not self.branch_dims:
            raise ConfigError("need at least one branch")
        for name, dim in self.branch_dims.items():
            if not name or any(c.isspace() for c in name):
                raise ConfigError(f"bad branch name {name!r}")
            if int(dim) < 4:
                raise ConfigError(f"branch {name!r} needs dim >= 4, got {dim}")
        if self.num_actions < 2:
            raise ConfigError(f"need at least 2 actions, got {self.num_actions}")
        if self.rule == RULE_KEY_ACTOR:
            if self.num_activities < 2 or self.num_activities % 2 != 0:
                raise ConfigError(
                    f"key-actor-side needs an even activity count, got {self.num_activities}"
                )
            if self.num_actions <= self.num_base:
                raise ConfigError(
                    f"need background actions: num_actions {self.num_actions} <= "
                    f"base activities {self.num_base}"
                )
        else:
            if self.num_activities != self.num_actions:
                raise ConfigError(
                    "majority-action labels scenes with an action id, so "
                    f"num_activities must equal num_actions, got {self.num_activities}/{self.num_actions}"
                )
        if self.noise < 0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")
        if not 0.0 <= self.corrupt_prob <= 1.0:
            raise ConfigError(f"corrupt_prob must lie in [0, 1], got {self.corrupt_prob}")
        if self.t_frames < 1:
            raise ConfigError(f"t_frames must be >= 1, got {self.t_frames}")
        if self.complementary:
            if self.rule != RULE_KEY_ACTOR:
                raise ConfigError("complementary prototypes need the key-actor-side rule")
            if len(self.branch_dims) < 2:
                raise ConfigError("complementary prototypes need at least 2 branches")
            if self.num_base < 4:
                raise ConfigError(
                    f"complementary prototypes need >= 4 base activities, got {self.num_base}"
                )
        # Canonical forms so loaded and freshly built configs compare equal.
        object.__setattr__(self, "n_actors", lo if lo == hi else (lo, hi))
        object.__setattr__(
            self, "branch_dims", {str(k): int(v) for k, v in self.branch_dims.items()}
        )

    @property
    def actor_range(self):
        if isinstance(self.n_actors, (tuple, list)):
            lo, hi = self.n_actors
            return int(lo), int(hi)
        return int(self.n_actors), int(self.n_actors)

    @property
    def num_base(self) -> int:
        """Base activities for the key-actor rule; key actions are 0..num_base-1."""
        return self.num_activities // 2

    @property
    def branch_names(self):
        return sorted(self.branch_dims)


@dataclass(eq=False)
class ActorScene:
    scene_id: int
    activity: int
    actions: np.ndarray  # (n,) int
    centers: np.ndarray  # (n, 2) in [0, 1]
    features: dict  # branch name -> (n, dim) float

    def box_centers(self):
        return [BoxCenter(x, y) for x, y in self.centers]

    @property
    def n_actors(self) -> int:
        return len(self.actions)

    def __eq__(self, other):
        if not isinstance(other, ActorScene):
            return NotImplemented
        return (
            self.scene_id == other.scene_id
            and self.activity == other.activity
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.centers, other.centers)
            and sorted(self.features) == sorted(other.features)
            and all(np.array_equal(self.features[b], other.features[b]) for b in self.features)
        )


@dataclass(eq=False)
class SceneDataset:
    config: SceneConfig
    prototypes: dict  # branch name -> (num_actions, dim) float
    scenes: list

    def __eq__(self, other):
        if not isinstance(other, SceneDataset):
            return NotImplemented
        return (
            self.config == other.config
            and sorted(self.prototypes) == sorted(other.prototypes)
            and all(np.array_equal(self.prototypes[b], other.prototypes[b]) for b in self.prototypes)
            and self.scenes == other.scenes
        )


def _draw_prototypes(cfg: SceneConfig, rng) -> dict:
    protos = {}
    for name in cfg.branch_names:
        protos[name] = rng.standard_normal((cfg.num_actions, cfg.branch_dims[name]))
    if cfg.complementary:
        # Branch i cannot separate the key actions in half (i % 2): those rows
        # share one prototype. The other branches cover for it.
        split = cfg.num_base // 2
        halves = (range(0, split), range(split, cfg.num_base))
        for i, name in enumerate(cfg.branch_names):
            merged = list(halves[i % 2])
            for action in merged[1:]:
                protos[name][action] = protos[name][merged[0]]
    return protos


def _draw_features(cfg, protos, actions, n, rng) -> dict:
    feats = {}
    for name in cfg.branch_names:
        dim = cfg.branch_dims[name]
        feats[name] = protos[name][actions] + cfg.noise * rng.standard_normal((n, dim))
    if cfg.corrupt_prob > 0:
        for name in cfg.branch_names:
            hit = rng.random(n) < cfg.corrupt_prob
            feats[name][hit] = rng.standard_normal((int(hit.sum()), cfg.branch_dims[name]))
    return feats


def _draw_n(cfg, rng) -> int:
    lo, hi = cfg.actor_range
    return lo if lo == hi else int(rng.integers(lo, hi + 1))


def generate_volleyball_like(cfg: SceneConfig, count: int, start_id: int = 0) -> SceneDataset:
    """Scenes labelled by one key actor's action and field side.

    Per-scene draw order: actor count, base activity, side, key index,
    background actions, centers, the key actor's constrained x, then
    features branch by branch.
    """
    if cfg.rule != RULE_KEY_ACTOR:
        raise ConfigError(f"config rule is {cfg.rule!r}")
    rng = rng_for(cfg.seed, DATA)
    protos = _draw_prototypes(cfg, rng)
    scenes = []
    for sid in range(start_id, start_id + count):
        n = _draw_n(cfg, rng)
        base = int(rng.integers(cfg.num_base))
        side = int(rng.integers(2))  # 0 = left, 1 = right
        key = int(rng.integers(n))
        actions = rng.integers(cfg.num_base, cfg.num_actions, size=n)
        actions[key] = base
        centers = rng.uniform(0.0, 1.0, size=(n, 2))
        if side == 0:
            centers[key, 0] = rng.uniform(SIDE_MARGIN, 0.5 - SIDE_MARGIN)
        else:
            centers[key, 0] = rng.uniform(0.5 + SIDE_MARGIN, 1.0 - SIDE_MARGIN)
        feats = _draw_features(cfg, protos, actions, n, rng)
        scenes.append(ActorScene(sid, base * 2 + side, actions, centers, feats))
    return SceneDataset(cfg, protos, scenes)


def generate_collective_like(cfg: SceneConfig, count: int, start_id: int = 0) -> SceneDataset:
    """Scenes labelled by the action most actors perform.

    Action vectors with a tied top count are redrawn, so the winner is
    always unique.
    """
    if cfg.rule != RULE_MAJORITY:
        raise ConfigError(f"config rule is {cfg.rule!r}")
    rng = rng_for(cfg.seed, DATA)
    protos = _draw_prototypes(cfg, rng)
    scenes = []
    for sid in range(start_id, start_id + count):
        n = _draw_n(cfg, rng)
        while True:
            actions = rng.integers(0, cfg.num_actions, size=n)
            counts = np.bincount(actions, minlength=cfg.num_actions)
            top = counts.max()
            if (counts == top).sum() == 1:
                break
        activity = int(counts.argmax())
        centers = rng.uniform(0.0, 1.0, size=(n, 2))
        feats = _draw_features(cfg, protos, actions, n, rng)
        scenes.append(ActorScene(sid, activity, actions, centers, feats))
    return SceneDataset(cfg, protos, scenes)


def generate(cfg: SceneConfig, count: int, start_id: int = 0) -> SceneDataset:
    if cfg.rule == RULE_KEY_ACTOR:
        return generate_volleyball_like(cfg, count, start_id)
    return generate_collective_like(cfg, count, start_id)


def majority_action(actions) -> int:
    """The unique most-common action; DataError when the top count is tied."""
    counts = np.bincount(np.asarray(actions))
    top = counts.max()
    if (counts == top).sum() != 1:
        raise DataError(f"no unique majority in {list(actions)}")
    return int(counts.argmax())


def _floats_line(values) -> str:
    return " ".join(f17(v) for v in values)


def save_dataset(ds: SceneDataset, path) -> None:
    """Textual dump: self-describing header, prototypes, then scene records.

    Floats are written with 17 significant digits, so a load sees bit-equal
    values and two saves of equal datasets are byte-identical.
    """
    cfg = ds.config
    lo, hi = cfg.actor_range
    lines = [
        FORMAT_HEADER,
        f"rule {cfg.rule}",
        f"num_actions {cfg.num_actions}",
        f"num_activities {cfg.num_activities}",
        f"n_actors {lo} {hi}",
        f"noise {f17(cfg.noise)}",
        f"complementary {int(cfg.complementary)}",
        f"corrupt_prob {f17(cfg.corrupt_prob)}",
        f"t_frames {cfg.t_frames}",
        f"seed {cfg.seed}",
        f"branches {len(cfg.branch_dims)}",
    ]
    for name in cfg.branch_names:
        lines.append(f"branch {name} {cfg.branch_dims[name]}")
    for name in cfg.branch_names:
        lines.append(f"prototypes {name}")
        lines.extend(_floats_line(row) for row in ds.prototypes[name])
    lines.append(f"scenes {len(ds.scenes)}")
    for scene in ds.scenes:
        lines.append(f"scene {scene.scene_id}")
        lines.append(f"activity {scene.activity}")
        lines.append(f"actors {scene.n_actors}")
        lines.append("actions " + " ".join(str(int(a)) for a in scene.actions))
        lines.append("centers")
        lines.extend(_floats_line(row) for row in scene.centers)
        for name in cfg.branch_names:
            lines.append(f"features {name}")
            lines.extend(_floats_line(row) for row in scene.features[name])
    lines.append("end")
    atomic_write_text(path, "\n".join(lines) + "\n")


class _LineReader:
    def __init__(self, path, text):
        self.path = path
        self.lines = text.splitlines()
        self.no = 0

    def next(self) -> str:
        if self.no >= len(self.lines):
            raise ParseError(self.path, self.no + 1, "unexpected end of file")
        self.no += 1
        return self.lines[self.no - 1]

    def fail(self, msg):
        raise ParseError(self.path, self.no, msg)

    def keyword(self, word: str) -> list:
        cells = self.next().split()
        if not cells or cells[0] != word:
            self.fail(f"expected {word!r}")
        return cells[1:]

    def int_field(self, word: str) -> int:
        cells = self.keyword(word)
        if len(cells) != 1:
            self.fail(f"{word}: expected one value")
        try:
            return int(cells[0])
        except ValueError:
            self.fail(f"{word}: bad integer {cells[0]!r}")

    def float_row(self, width: int) -> np.ndarray:
        cells = self.next().split()
        if len(cells) != width:
            self.fail(f"expected {width} values, got {len(cells)}")
        try:
            return np.array([float(c) for c in cells])
        except ValueError:
            self.fail("bad float")


def load_dataset(path) -> SceneDataset:
    try:
        text = open(path, encoding="utf-8").read()
    except OSError as exc:
        raise DataError(f"cannot read dataset: {exc}") from None
    r = _LineReader(path, text)
    if r.next() != FORMAT_HEADER:
        r.fail(f"expected header {FORMAT_HEADER!r}")
    rule = r.keyword("rule")
    if len(rule) != 1:
        r.fail("rule: expected one value")
    num_actions = r.int_field("num_actions")
    num_activities = r.int_field("num_activities")
    lo_hi = r.keyword("n_actors")
    if len(lo_hi) != 2:
        r.fail("n_actors: expected two values")
    try:
        lo, hi = int(lo_hi[0]), int(lo_hi[1])
    except ValueError:
        r.fail("n_actors: bad integer")
    noise_cells = r.keyword("noise")
    complementary = r.int_field("complementary")
    corrupt_cells = r.keyword("corrupt_prob")
    t_frames = r.int_field("t_frames")
    seed = r.int_field("seed")
    n_branches = r.int_field("branches")
    branch_dims = {}
    for _ in range(n_branches):
        cells = r.keyword("branch")
        if len(cells) != 2:
            r.fail("branch: expected name and dim")
        try:
            branch_dims[cells[0]] = int(cells[1])
        except ValueError:
            r.fail("branch: bad dim")
    try:
        cfg = SceneConfig(
            rule=rule[0],
            num_actions=num_actions,
            num_activities=num_activities,
            n_actors=lo if lo == hi else (lo, hi),
            branch_dims=branch_dims,
            noise=float(noise_cells[0]),
            complementary=bool(complementary),
            corrupt_prob=float(corrupt_cells[0]),
            t_frames=t_frames,
            seed=seed,
        )
    except (ConfigError, ValueError, IndexError) as exc:
        raise ParseError(path, r.no, f"bad header: {exc}") from None
    prototypes = {}
    for name in cfg.branch_names:
        got = r.keyword("prototypes")
        if got != [name]:
            r.fail(f"expected prototypes for {name!r}")
        prototypes[name] = np.stack(
            [r.float_row(branch_dims[name]) for _ in range(num_actions)]
        )
    n_scenes = r.int_field("scenes")
    scenes = []
    for _ in range(n_scenes):
        sid = r.int_field("scene")
        activity = r.int_field("activity")
        if not 0 <= activity < num_activities:
            r.fail(f"activity {activity} out of range")
        n = r.int_field("actors")
        if not lo <= n <= hi:
            r.fail(f"actor count {n} outside [{lo}, {hi}]")
        cells = r.keyword("actions")
        if len(cells) != n:
            r.fail(f"expected {n} actions, got {len(cells)}")
        try:
            actions = np.array([int(c) for c in cells])
        except ValueError:
            r.fail("bad action id")
        if actions.min() < 0 or actions.max() >= num_actions:
            r.fail("action id out of range")
        r.keyword("centers")
        centers = np.stack([r.float_row(2) for _ in range(n)])
        if centers.min() < 0.0 or centers.max() > 1.0:
            r.fail("center outside [0, 1]")
        feats = {}
        for name in cfg.branch_names:
            got = r.keyword("features")
            if got != [name]:
                r.fail(f"expected features for {name!r}")
            feats[name] = np.stack([r.float_row(branch_dims[name]) for _ in range(n)])
        scenes.append(ActorScene(sid, activity, actions, centers, feats))
    r.keyword("end")
    if r.no != len(r.lines):
        raise ParseError(path, r.no + 1, "trailing content after 'end'")
    return SceneDataset(cfg, prototypes, scenes)
