"""Toy top-down lane-following world: bicycle-model vehicle, severity-graded
collisions, the 1 - o_l - o_r - psi*c reward, and a perspective-lite front
view rendered in the shared 8-class palette."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import seg_lab
from .seg_lab import CLASS_NAMES, PROTOTYPES, SceneSample, SoftmaxModel

_OBJECT_STREAM = 0x0BEC7
_RENDER_STREAM = 0xC0FFE

# crash severity ladder: none/S0/S1/S2/S3 -> {0, 1/4, 1/2, 3/4, 1}
CRASH_LADDER = (0.0, 0.25, 0.5, 0.75, 1.0)

DONE_REASONS = ("crash", "offline", "offroad", "goal", "timeout")


@dataclass(frozen=True)
class TrackConfig:
    length: float = 150.0
    turn: str = "left"  # "none" | "left" | "right"
    turn_start: float = 70.0
    turn_radius: float = 25.0
    turn_angle_deg: float = 80.0
    lane_half_width: float = 2.0  # normalizes the off-line measure
    road_left: float = 4.0  # road extent to the left of the lane center
    road_right: float = 1.5  # and to the right (sidewalk beyond)
    sidewalk_width: float = 1.5
    n_objects: int = 6
    min_object_gap: float = 0.3
    dt: float = 1.0
    wheelbase: float = 0.8
    max_speed: float = 0.35  # meters per step
    min_speed: float = 0.10  # idle creep; the vehicle never fully stops
    max_accel: float = 0.05
    max_brake: float = 0.10
    drag: float = 0.004
    max_steer: float = 0.45  # wheel angle in radians at |steer| = 1
    vehicle_length: float = 0.9
    vehicle_width: float = 0.5
    collision_radius: float = 0.45
    goal_tolerance: float = 3.0
    max_steps: int = 500
    alpha: float = 1.0  # off-line weight
    beta: float = 1.0  # off-road weight
    psi: float = 10.0  # crash weight
    vehicle_crash_speed: float = 0.2  # relative speed separating S2 from S1 vehicle hits
    command_lookahead: float = 18.0
    render_height: int = 24
    render_width: int = 32
    render_noise: float = 0.05
    render_depth: float = 28.0
    render_focal: float = 18.0
    spawn_retries: int = 20


def track_config_to_kv(config: TrackConfig) -> dict:
    return {f"track.{k}": v for k, v in vars(config).items()}


def track_config_from_kv(kv: dict) -> TrackConfig:
    kwargs = {}
    for key, value in kv.items():
        if not key.startswith("track."):
            continue
        name = key[len("track.") :]
        default = getattr(TrackConfig, name, None)
        if default is None and name not in TrackConfig.__dataclass_fields__:
            raise ValueError(f"unknown track config key {key}")
        fieldtype = type(TrackConfig.__dataclass_fields__[name].default)
        kwargs[name] = fieldtype(value) if fieldtype is not str else str(value)
    return TrackConfig(**kwargs)


@dataclass(frozen=True, eq=False)
class Track:
    """Polyline centerline with cumulative arclength and per-segment frames."""

    config: TrackConfig
    points: np.ndarray  # (K, 2)
    cumlen: np.ndarray  # (K,) arclength at each point
    tangents: np.ndarray  # (K-1, 2) unit tangent per segment

    @property
    def length(self) -> float:
        return float(self.cumlen[-1])

    def turn_window(self):
        cfg = self.config
        if cfg.turn == "none":
            return None
        arc = cfg.turn_radius * math.radians(cfg.turn_angle_deg)
        return cfg.turn_start, cfg.turn_start + arc

    def project(self, xy: np.ndarray):
        """Arclength, signed lateral offset (left positive) and tangent of
        the closest centerline point for one or many query points."""
        pts = np.atleast_2d(np.asarray(xy, dtype=float))
        a = self.points[:-1]
        d = self.points[1:] - a
        seg_len2 = (d * d).sum(axis=1)
        rel = pts[:, None, :] - a[None, :, :]
        t = np.clip((rel * d[None]).sum(axis=2) / seg_len2[None], 0.0, 1.0)
        proj = a[None] + t[..., None] * d[None]
        diff = pts[:, None, :] - proj
        dist2 = (diff * diff).sum(axis=2)
        best = dist2.argmin(axis=1)
        rows = np.arange(pts.shape[0])
        tangent = self.tangents[best]
        offset = pts - proj[rows, best]
        lateral = tangent[:, 0] * offset[:, 1] - tangent[:, 1] * offset[:, 0]
        s_along = self.cumlen[best] + t[rows, best] * np.sqrt(seg_len2[best])
        if np.isscalar(xy[0]) or np.asarray(xy).ndim == 1:
            return float(s_along[0]), float(lateral[0]), tangent[0]
        return s_along, lateral, tangent


def build_track(config: TrackConfig, spacing: float = 2.0) -> Track:
    pts = [np.array([0.0, 0.0])]
    heading = 0.0
    remaining = config.length

    def advance(dist, dheading=0.0):
        nonlocal heading
        steps = max(1, int(math.ceil(dist / spacing)))
        for _ in range(steps):
            heading += dheading / steps
            step = dist / steps
            last = pts[-1]
            pts.append(last + step * np.array([math.cos(heading), math.sin(heading)]))

    if config.turn == "none":
        advance(config.length)
    else:
        first = min(config.turn_start, config.length)
        advance(first)
        remaining = config.length - first
        arc = min(config.turn_radius * math.radians(config.turn_angle_deg), remaining)
        if arc > 0:
            sign = 1.0 if config.turn == "left" else -1.0
            advance(arc, dheading=sign * arc / config.turn_radius)
            remaining -= arc
        if remaining > 0:
            advance(remaining)
    points = np.array(pts)
    seg = np.diff(points, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cumlen = np.concatenate([[0.0], np.cumsum(seg_len)])
    tangents = seg / seg_len[:, None]
    return Track(config=config, points=points, cumlen=cumlen, tangents=tangents)


@dataclass(frozen=True)
class WorldObject:
    class_name: str
    class_id: int
    x: float
    y: float
    radius: float
    crash_severity: float  # ladder value for a contact at speed


@dataclass(frozen=True)
class Action:
    steer: float
    throttle: float
    brake: float

    def clamped(self) -> Action:
        return Action(
            steer=float(np.clip(self.steer, -1.0, 1.0)),
            throttle=float(np.clip(self.throttle, 0.0, 1.0)),
            brake=float(np.clip(self.brake, 0.0, 1.0)),
        )


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    o_l: float
    o_r: float
    c: float
    done: bool
    reason: str | None
    hit: str | None = None  # class name of the collided object


@dataclass(frozen=True, eq=False)
class WorldState:
    track: Track
    objects: tuple[WorldObject, ...]
    seed: int
    x: float
    y: float
    heading: float
    speed: float
    step_count: int = 0
    damage: float = 0.0
    done: bool = False
    done_reason: str | None = None


_OBJECT_SPECS = {
    # class -> (radius, lateral placement range); lateral is signed, left positive
    "car": (0.55, (-1.3, -0.6)),
    "bus": (0.80, (-1.3, -0.7)),
    "person": (0.30, (-2.6, -1.2)),
    "bike": (0.35, (-2.6, -1.2)),
    "building": (0.60, (-1.5, -0.9)),
}


def _object_severity(class_name: str, speed: float, config: TrackConfig) -> float:
    if class_name == "person":
        return 1.0
    if class_name == "bike":
        return 0.75
    if class_name in ("car", "bus"):
        return 0.75 if speed > config.vehicle_crash_speed else 0.5
    return 0.25  # static obstacle


def _place_objects(seed: int, track: Track, config: TrackConfig):
    classes = ("car", "bus", "person", "bike", "building")
    for attempt in range(config.spawn_retries):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_OBJECT_STREAM, attempt)))
        objects = []
        ok = True
        for _ in range(config.n_objects):
            name = str(rng.choice(classes))
            radius, lat_range = _OBJECT_SPECS[name]
            s = float(rng.uniform(12.0, max(13.0, track.length - 8.0)))
            lateral = float(rng.uniform(*lat_range))
            seg = int(np.searchsorted(track.cumlen, s, side="right") - 1)
            seg = min(seg, track.tangents.shape[0] - 1)
            base = track.points[seg] + (s - track.cumlen[seg]) * track.tangents[seg]
            left = np.array([-track.tangents[seg][1], track.tangents[seg][0]])
            pos = base + lateral * left
            candidate = WorldObject(
                class_name=name,
                class_id=CLASS_NAMES.index(name),
                x=float(pos[0]),
                y=float(pos[1]),
                radius=radius,
                crash_severity=0.0,
            )
            for other in objects:
                gap = math.hypot(candidate.x - other.x, candidate.y - other.y)
                if gap < candidate.radius + other.radius + config.min_object_gap:
                    ok = False
                    break
            if not ok:
                break
            objects.append(candidate)
        if ok:
            return tuple(objects)
    raise RuntimeError(f"could not place {config.n_objects} objects without overlap")


def reset(seed: int, config: TrackConfig = TrackConfig()) -> WorldState:
    """Vehicle centered at the track start; deterministic object placement.

    Overlapping spawn draws are regenerated from a derived seed a bounded
    number of times.
    """
    track = build_track(config)
    objects = _place_objects(seed, track, config)
    heading = math.atan2(track.tangents[0][1], track.tangents[0][0])
    return WorldState(
        track=track,
        objects=objects,
        seed=seed,
        x=float(track.points[0][0]),
        y=float(track.points[0][1]),
        heading=heading,
        speed=config.min_speed,
    )


def _footprint_offroad_fraction(state: WorldState, config: TrackConfig) -> float:
    # 3 x 5 sample grid over the vehicle rectangle
    xs = np.linspace(-config.vehicle_length / 2, config.vehicle_length / 2, 5)
    ys = np.linspace(-config.vehicle_width / 2, config.vehicle_width / 2, 3)
    gx, gy = np.meshgrid(xs, ys)
    cos_h, sin_h = math.cos(state.heading), math.sin(state.heading)
    px = state.x + gx * cos_h - gy * sin_h
    py = state.y + gx * sin_h + gy * cos_h
    pts = np.stack([px.ravel(), py.ravel()], axis=1)
    _, lateral, _ = state.track.project(pts)
    off = (lateral > config.road_left) | (lateral < -config.road_right)
    return float(off.mean())


def step(state: WorldState, action: Action):
    """Advance one step; returns (next_state, StepOutcome).

    The reward is exactly 1 - alpha*o_l - beta*o_r - psi*c.  Exactly one
    termination reason fires, with priority crash > offline > offroad >
    goal > timeout; stepping a finished episode is an error.
    """
    if state.done:
        raise ValueError("episode is done; reset the world before stepping again")
    config = state.track.config
    action = action.clamped()

    speed = state.speed + config.max_accel * action.throttle - config.max_brake * action.brake - config.drag
    speed = float(np.clip(speed, config.min_speed, config.max_speed))
    heading = state.heading
    if speed > 0:
        heading += (speed / config.wheelbase) * math.tan(action.steer * config.max_steer) * config.dt
    x = state.x + speed * math.cos(heading) * config.dt
    y = state.y + speed * math.sin(heading) * config.dt

    moved = replace(state, x=x, y=y, heading=heading, speed=speed)
    s_along, lateral, _ = state.track.project(np.array([x, y]))
    o_l = float(min(abs(lateral) / config.lane_half_width, 1.0))
    o_r = _footprint_offroad_fraction(moved, config)

    c = 0.0
    hit = None
    for obj in state.objects:
        if math.hypot(x - obj.x, y - obj.y) <= config.collision_radius + obj.radius:
            severity = _object_severity(obj.class_name, speed, config)
            if severity > c:
                c = severity
                hit = obj.class_name

    reason = None
    if c > 0.0:
        reason = "crash"
    elif o_l >= 1.0:
        reason = "offline"
    elif o_r >= 0.5:
        reason = "offroad"
    elif s_along >= state.track.length - config.goal_tolerance:
        reason = "goal"
    elif state.step_count + 1 >= config.max_steps:
        reason = "timeout"

    reward = 1.0 - config.alpha * o_l - config.beta * o_r - config.psi * c
    next_state = replace(
        moved,
        step_count=state.step_count + 1,
        damage=state.damage + c,
        done=reason is not None,
        done_reason=reason,
    )
    outcome = StepOutcome(
        reward=reward, o_l=o_l, o_r=o_r, c=c, done=reason is not None, reason=reason, hit=hit
    )
    return next_state, outcome


def distance_to_goal(state: WorldState) -> float:
    s_along, _, _ = state.track.project(np.array([state.x, state.y]))
    return max(state.track.length - s_along, 0.0)


def current_command(state: WorldState) -> str:
    """High-level command from the topological route: follow, left or right."""
    window = state.track.turn_window()
    if window is None:
        return "follow"
    s_along, _, _ = state.track.project(np.array([state.x, state.y]))
    start, end = window
    if start - state.track.config.command_lookahead <= s_along <= end:
        return state.track.config.turn
    return "follow"


# ---------------------------------------------------------------------------
# Front-view rendering
# ---------------------------------------------------------------------------


def render_front_view(state: WorldState) -> SceneSample:
    """Project lane, road bands and objects into the seg_lab grid format.

    Ground rows use a flat-ground perspective (near rows at the bottom);
    rows above the horizon are a building skyline under sky.  Rendering is
    deterministic in (world seed, step counter).
    """
    config = state.track.config
    h, w = config.render_height, config.render_width
    horizon = int(0.33 * h)
    labels = np.empty((h, w), dtype=np.int64)
    labels[: max(horizon - 2, 0)] = CLASS_NAMES.index("sky")
    labels[max(horizon - 2, 0) : horizon] = CLASS_NAMES.index("building")

    rows = np.arange(horizon, h)
    depth_idx = rows - horizon + 1.0
    depth = config.render_depth / depth_idx
    cols = np.arange(w) - (w - 1) / 2.0
    lat = cols[None, :] * depth[:, None] / config.render_focal

    cos_h, sin_h = math.cos(state.heading), math.sin(state.heading)
    fwd = np.array([cos_h, sin_h])
    left = np.array([-sin_h, cos_h])
    ground = (
        np.array([state.x, state.y])[None, None, :]
        + depth[:, None, None] * fwd[None, None, :]
        + lat[:, :, None] * left[None, None, :]
    )
    flat = ground.reshape(-1, 2)

    _, lateral, _ = state.track.project(flat)
    ground_labels = np.full(flat.shape[0], CLASS_NAMES.index("building"), dtype=np.int64)
    on_road = (lateral >= -config.road_right) & (lateral <= config.road_left)
    right_walk = (lateral < -config.road_right) & (
        lateral >= -config.road_right - config.sidewalk_width
    )
    left_walk = (lateral > config.road_left) & (
        lateral <= config.road_left + config.sidewalk_width
    )
    ground_labels[on_road] = CLASS_NAMES.index("road")
    ground_labels[right_walk | left_walk] = CLASS_NAMES.index("sidewalk")

    if state.objects:
        centers = np.array([[o.x, o.y] for o in state.objects])
        radii = np.array([o.radius for o in state.objects])
        ids = np.array([o.class_id for o in state.objects])
        dist = np.linalg.norm(flat[:, None, :] - centers[None], axis=2)
        inside = dist <= radii[None]
        score = np.where(inside, dist / radii[None], np.inf)
        best = score.argmin(axis=1)
        hit = np.isfinite(score.min(axis=1))
        ground_labels[hit] = ids[best[hit]]

    labels[horizon:] = ground_labels.reshape(h - horizon, w)
    rng = np.random.default_rng(
        np.random.SeedSequence(state.seed, spawn_key=(_RENDER_STREAM, state.step_count))
    )
    features = PROTOTYPES[labels] + config.render_noise * rng.standard_normal((h, w, 3))
    return SceneSample(features=features, labels=labels, seed=state.seed)


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------

COMMANDS = ("follow", "left", "right")


@dataclass(frozen=True, eq=False)
class Observation:
    latents: np.ndarray  # (2, Hp, Wp, hidden) two most recent latent grids
    measurements: np.ndarray  # (speed, goal distance, damage, one-hot command)


def _pool(grid: np.ndarray, pool: int) -> np.ndarray:
    h, w, c = grid.shape
    hp, wp = h // pool, w // pool
    trimmed = grid[: hp * pool, : wp * pool]
    return trimmed.reshape(hp, pool, wp, pool, c).mean(axis=(1, 3))


def observe(
    state: WorldState,
    segmenter: SoftmaxModel,
    previous: np.ndarray | None = None,
    pool: int = 4,
) -> Observation:
    """Latent observation: pooled penultimate segmenter activations over the
    rendered front view, stacked with the previous step's latent (duplicated
    at the first step), plus the measurement vector."""
    view = render_front_view(state)
    latent = _pool(seg_lab.penultimate(segmenter, view), pool)
    stack = np.stack([latent if previous is None else previous, latent])
    config = state.track.config
    command = current_command(state)
    cmd_onehot = [1.0 if command == c else 0.0 for c in COMMANDS]
    measurements = np.array(
        [
            state.speed / config.max_speed,
            distance_to_goal(state) / state.track.length,
            state.damage,
            *cmd_onehot,
        ]
    )
    return Observation(latents=stack, measurements=measurements)


def observation_sizes(config: TrackConfig, hidden: int, pool: int = 4):
    hp = config.render_height // pool
    wp = config.render_width // pool
    return 2 * hp * wp * hidden, 3 + len(COMMANDS)


# ---------------------------------------------------------------------------
# Episode logging
# ---------------------------------------------------------------------------


def step_log_row(t: int, action: Action, outcome: StepOutcome, state: WorldState) -> dict:
    """One JSON-lines record per step; the metrics module consumes these."""
    return {
        "t": t,
        "action": [action.steer, action.throttle, action.brake],
        "r": outcome.reward,
        "o_l": outcome.o_l,
        "o_r": outcome.o_r,
        "c": outcome.c,
        "done": outcome.reason,
        "hit": outcome.hit,
        "speed": state.speed,
        "x": state.x,
        "y": state.y,
    }
