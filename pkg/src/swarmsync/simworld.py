"""Deterministic round-based world.

Robots broadcast once per round over a full-mesh radio whose per-link losses
come from a :class:`DropSchedule`.  Between rounds every robot's plant tracks
the commanded maneuver velocity.  Three physics levels are available:

* ``static``: no motion at all (fast protocol sweeps),
* ``kinematic``: noise-free plant, robots broadcast their true state,
* ``full``: noisy plant, emulated IMU/flow/UWB sensors and one Kalman filter
  per robot; robots broadcast their filter estimate.

Every random draw comes from generators seeded by the scenario seed, so the
same seed and configuration replay the same trace byte for byte.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from itertools import combinations
from math import comb
from typing import Iterator, Optional, Sequence

import numpy as np

from .ekf import (
    FLOW_FMT,
    FLOW_TOPIC,
    IMU_FMT,
    IMU_TOPIC,
    UWB_FMT,
    UWB_TOPIC,
    ControlInput,
    KalmanNode,
    NoiseConfig,
    RobotState,
    forecast,
    wrap_angle,
)
from .pubsub import Broker, make_publisher
from .sensors import (
    DEFAULT_FOV,
    G,
    AnchorLayout,
    FlowRaw,
    ImuRaw,
    UwbRanges,
    anchor_distances,
    meters_per_pixel,
)
from .sync import Evicted, Rejoined, StartManeuver
from .vm import ManeuverClamped, ManeuverCommand, ManeuverComplete, Robot

STATIC = "static"
KINEMATIC = "kinematic"
FULL = "full"


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class PlantState:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    vx: float = 0.0
    vy: float = 0.0

    def as_tuple(self) -> tuple:
        return (self.x, self.y, self.theta, self.vx, self.vy)


@dataclass(frozen=True)
class NoiseSpec:
    gyro: float = 0.01      # rad/s
    flow: float = 2.0       # px/s
    uwb: float = 0.05       # m
    seed: int = 0
    accel: float = 0.3      # actuation disturbance, m/s^2
    turn: float = 0.02      # actuation disturbance, rad/s

    def __post_init__(self):
        for name in ("gyro", "flow", "uwb", "accel", "turn"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"noise sigma {name} must be finite and >= 0")

    @classmethod
    def noiseless(cls, seed: int = 0) -> "NoiseSpec":
        return cls(0.0, 0.0, 0.0, seed, 0.0, 0.0)


@dataclass(frozen=True)
class FlowMount:
    height: float = 0.1
    alpha: float = 0.0
    fov: float = DEFAULT_FOV


def _wrap_half(a: float) -> float:
    """Wrap to [-pi/2, pi/2)."""
    return (a + math.pi / 2) % math.pi - math.pi / 2


def step_plant(
    p: PlantState,
    cmd,
    dt: float,
    lag: float = 0.0,
    arena: Optional[tuple] = None,
    round_period: float = 0.1,
    semi_implicit: bool = True,
) -> PlantState:
    """Advance the plant by ``dt`` toward the commanded velocity.

    ``cmd`` is a :class:`ManeuverCommand` or a ``(vx, vy)`` pair.  With
    ``lag = 0`` the velocity jumps to the command; otherwise it relaxes with
    time constant ``lag``.  Position uses the updated velocity, or the old one
    with ``semi_implicit=False`` (the filter's own discretization).  The heading
    turns onto the axis of the applied acceleration (thrust may be reversed),
    and stays put when there is none.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if isinstance(cmd, ManeuverCommand):
        tvx, tvy = cmd.velocity(round_period)
    else:
        tvx, tvy = cmd
    k = 1.0 if lag <= 0 else -math.expm1(-dt / lag)
    vx = p.vx + (tvx - p.vx) * k
    vy = p.vy + (tvy - p.vy) * k
    ax, ay = (vx - p.vx) / dt, (vy - p.vy) / dt
    theta = p.theta
    if math.hypot(ax, ay) > 1e-12:
        theta = wrap_angle(theta + _wrap_half(math.atan2(ay, ax) - theta))
    if semi_implicit:
        x, y = p.x + dt * vx, p.y + dt * vy
    else:
        x, y = p.x + dt * p.vx, p.y + dt * p.vy
    if arena is not None:
        x, vx = _clamp(x, vx, arena[0])
        y, vy = _clamp(y, vy, arena[1])
    return PlantState(x, y, theta, vx, vy)


def _clamp(pos: float, vel: float, limit: float) -> tuple[float, float]:
    if pos < 0.0:
        return 0.0, 0.0
    if pos > limit:
        return limit, 0.0
    return pos, vel


def thrust_control(before: PlantState, after: PlantState, dt: float) -> tuple[float, float]:
    """(u_a, u_theta) reproducing the velocity change under the filter's motion model."""
    u_theta = wrap_angle(after.theta - before.theta) / dt
    dvx, dvy = after.vx - before.vx, after.vy - before.vy
    c, s = math.cos(after.theta), math.sin(after.theta)
    return (dvx * c + dvy * s) / dt, u_theta


def sample_sensors(
    p: PlantState,
    noise: NoiseSpec,
    anchors: AnchorLayout = AnchorLayout(),
    rng: Optional[np.random.Generator] = None,
    theta_rate: float = 0.0,
    accel: tuple = (0.0, 0.0),
    mount: FlowMount = FlowMount(),
    z: float = 0.0,
) -> tuple[ImuRaw, FlowRaw, UwbRanges]:
    """Raw readings a robot in state ``p`` would produce.

    Flow is reported in the arena frame.  With all sigmas zero every reading
    inverts exactly to the true state.
    """
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    e = rng.standard_normal(7)
    gyro = theta_rate + noise.gyro * e[0]
    imu = ImuRaw((accel[0] / G, accel[1] / G, 1.0), (0.0, 0.0, math.degrees(gyro)))
    mpp = meters_per_pixel(mount.height, mount.alpha, mount.fov)
    flow = FlowRaw(p.vx / mpp + noise.flow * e[1], p.vy / mpp + noise.flow * e[2],
                   mount.height, mount.alpha, mount.fov)
    d = anchor_distances((p.x, p.y, z), anchors) + noise.uwb * e[3:7]
    return imu, flow, UwbRanges(tuple(float(v) for v in np.abs(d)))


# drop schedules

def ordered_pairs(ids: Sequence[int]) -> list[tuple[int, int]]:
    return [(s, t) for s in ids for t in ids if s != t]


class DropSchedule:
    """Which (sender, receiver) deliveries fail in which round.

    Either an explicit loss set of ``(round, sender, receiver)`` triples, a
    stochastic generator (i.i.d. per-link loss ``p`` plus optional per-link
    bursts of up to ``burst_max`` rounds starting with probability
    ``burst_rate``), or both.  Stochastic draws are generated round by round
    from ``seed`` so replays are identical however the schedule is queried.
    """

    def __init__(self, losses=(), seed: Optional[int] = None, p: float = 0.0,
                 burst_max: int = 0, burst_rate: float = 0.0):
        if not 0.0 <= p <= 1.0 or not 0.0 <= burst_rate <= 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        if burst_max < 0:
            raise ValueError("burst_max must be >= 0")
        self.explicit: dict[int, set] = {}
        for r, s, t in losses:
            if s == t:
                raise ValueError("a robot never sends to itself")
            self.explicit.setdefault(int(r), set()).add((int(s), int(t)))
        self.seed = seed
        self.p = p
        self.burst_max = burst_max
        self.burst_rate = burst_rate
        self._pairs: Optional[list] = None
        self._rows: list[frozenset] = []
        self._rng = None
        self._burst = None

    @property
    def stochastic(self) -> bool:
        return self.seed is not None and (self.p > 0 or (self.burst_max > 0 and self.burst_rate > 0))

    def losses(self) -> list[tuple[int, int, int]]:
        return sorted((r, s, t) for r, st in self.explicit.items() for s, t in st)

    def _grow(self, r: int) -> None:
        pairs = self._pairs
        m = len(pairs)
        if self._rng is None:
            self._rng = np.random.default_rng(self.seed)
            self._burst = np.zeros(m, dtype=np.int64)
        while len(self._rows) <= r:
            u = self._rng.random((2, m))
            lost = u[0] < self.p
            if self.burst_max > 0 and self.burst_rate > 0:
                lens = self._rng.integers(1, self.burst_max + 1, size=m)
                active = self._burst > 0
                start = ~active & (u[1] < self.burst_rate)
                self._burst[start] = lens[start]
                active |= start
                lost |= active
                self._burst[active] -= 1
            self._rows.append(frozenset(pairs[i] for i in np.flatnonzero(lost)))

    def dropped(self, r: int, ids: Sequence[int]) -> frozenset:
        out = self.explicit.get(r)
        out = frozenset(out) if out else frozenset()
        if self.stochastic:
            if self._pairs is None:
                self._pairs = ordered_pairs(sorted(ids))
            self._grow(r)
            out = out | self._rows[r]
        return out

    def spec(self) -> dict:
        d: dict = {}
        if self.explicit:
            d["losses"] = [list(x) for x in self.losses()]
        if self.seed is not None:
            d.update(seed=self.seed, p=self.p, burst_max=self.burst_max, burst_rate=self.burst_rate)
        return d


def lossy_bursts(schedule: DropSchedule, horizon: int, ids: Sequence[int]) -> list[int]:
    """Lengths of maximal runs of consecutive rounds in which some delivery fails."""
    runs, cur = [], 0
    for r in range(horizon):
        if schedule.dropped(r, ids):
            cur += 1
        elif cur:
            runs.append(cur)
            cur = 0
    if cur:
        runs.append(cur)
    return runs


def count_schedules(n: int, horizon: int, max_losses: int) -> int:
    cells = horizon * n * (n - 1)
    return sum(comb(cells, k) for k in range(min(max_losses, cells) + 1))


def enumerate_schedules(n: int, horizon: int, max_losses: int, cap: int = 2_000_000,
                        exhaustive_limits: bool = True) -> Iterator[DropSchedule]:
    """Every loss set of at most ``max_losses`` cells, smallest first.

    Cells are (round, sender, receiver) in lexicographic order; within a size
    the sets come out in lexicographic order of their cells.
    """
    if exhaustive_limits and (n > 3 or horizon > 20):
        raise BudgetExceeded("exhaustive enumeration is limited to n <= 3, horizon <= 20")
    total = count_schedules(n, horizon, max_losses)
    if cap <= 0 or total > cap:
        raise BudgetExceeded(f"{total} schedules exceed the budget of {cap}")
    cells = [(r, s, t) for r in range(horizon) for s, t in ordered_pairs(range(n))]
    for k in range(min(max_losses, len(cells)) + 1):
        for combo in combinations(cells, k):
            yield DropSchedule(combo)


# world

@dataclass
class Body:
    """Physical side of one robot: plant, sensors, filter."""

    plant: PlantState
    broker: Optional[Broker] = None
    node: Optional[KalmanNode] = None
    dead_reckoning: Optional[np.ndarray] = None
    pubs: dict = field(default_factory=dict)


@dataclass
class WorldParams:
    physics: str = STATIC
    arena: tuple = (10.0, 10.0)
    lag: float = 0.1
    ekf_dt: float = 0.02
    uwb_every: int = 5
    mount: FlowMount = FlowMount()
    noise: NoiseSpec = NoiseSpec()
    seed: int = 0
    initial_sigma: float = 0.1


@dataclass
class RoundReport:
    round: int
    robots: list
    delivered: int
    dropped: int
    events: list

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "delivered": self.delivered,
            "dropped": self.dropped,
            "robots": self.robots,
            "events": self.events,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def event_dict(ev) -> dict:
    if isinstance(ev, StartManeuver):
        return {"type": "start", "robot": ev.robot, "round": ev.round, "epoch": ev.epoch,
                "mode": ev.op_mode.name, "catch_up": ev.catch_up}
    if isinstance(ev, Evicted):
        return {"type": "evict", "robot": ev.robot, "member": ev.member, "round": ev.round}
    if isinstance(ev, Rejoined):
        return {"type": "rejoin", "robot": ev.robot, "member": ev.member, "round": ev.round}
    if isinstance(ev, ManeuverComplete):
        return {"type": "complete", "robot": ev.robot, "round": ev.round, "epoch": ev.epoch}
    if isinstance(ev, ManeuverClamped):
        return {"type": "clamped", "robot": ev.robot, "round": ev.round,
                "requested": ev.requested, "applied": ev.applied}
    raise TypeError(f"unknown event {ev!r}")


def _r6(v: float) -> float:
    return float(f"{v:.9g}")


class World:
    def __init__(self, robots: list[Robot], plants: list[PlantState], drops: DropSchedule = None,
                 params: WorldParams = WorldParams()):
        if len(robots) != len(plants):
            raise ValueError("one plant per robot")
        ids = [r.id for r in robots]
        if ids != sorted(set(ids)):
            raise ValueError("robot ids must be unique and ascending")
        self.robots = robots
        self.ids = ids
        self.drops = drops if drops is not None else DropSchedule()
        self.params = params
        self.round = 0
        self.layout = AnchorLayout(scale=params.arena[0])
        self.rng = np.random.default_rng(params.seed)
        self.bodies = [Body(p) for p in plants]
        self.dropped_total = 0
        for robot in robots:
            robot.keep_maps = False
        if params.physics == FULL:
            self._init_filters()
        elif params.physics not in (STATIC, KINEMATIC):
            raise ValueError(f"unknown physics level {params.physics!r}")

    def _init_filters(self) -> None:
        prm = self.params
        nz = prm.noise
        r_fresh = {"gyro": max(nz.gyro, 1e-4) ** 2, "flow": 1e-3, "uwb": 1e-2}
        noise = NoiseConfig.from_sigmas(max(nz.accel, 1e-3), max(nz.turn, 1e-3), prm.ekf_dt,
                                        r_fresh=r_fresh)
        for body in self.bodies:
            b = Broker()
            body.broker = b
            body.pubs = {
                IMU_TOPIC: make_publisher(b, IMU_TOPIC, struct.calcsize(IMU_FMT)),
                FLOW_TOPIC: make_publisher(b, FLOW_TOPIC, struct.calcsize(FLOW_FMT)),
                UWB_TOPIC: make_publisher(b, UWB_TOPIC, struct.calcsize(UWB_FMT)),
            }
            p = body.plant
            P0 = np.diag([prm.initial_sigma ** 2] * 2 + [0.01, 0.01, 0.01])
            e = self.rng.standard_normal(2) * prm.initial_sigma
            est = RobotState(p.x + e[0], p.y + e[1], p.vx, p.vy, p.theta, P0)
            body.node = KalmanNode(b, est, noise, self.layout, uwb_sigma=max(nz.uwb, 1e-3),
                                   flow_sigma_px=max(nz.flow, 0.05))
            body.dead_reckoning = est.vector()

    def broadcast_state(self, i: int) -> tuple:
        body = self.bodies[i]
        if body.node is not None:
            s = body.node.state
            return (s.x, s.y, s.theta, s.vx, s.vy)
        return body.plant.as_tuple()

    def clone(self) -> "World":
        """Independent copy of a static world (used by the model checker)."""
        if self.params.physics != STATIC:
            raise ValueError("only static worlds can be cloned")
        new = World.__new__(World)
        new.__dict__.update(self.__dict__)
        new.robots = [r.clone() for r in self.robots]
        return new

    def run_round(self, lost: Optional[frozenset] = None) -> RoundReport:
        """One round; ``lost`` overrides the drop schedule for this round."""
        r = self.round
        robots = self.robots
        beacons = [robot.broadcast(self.broadcast_state(i)) for i, robot in enumerate(robots)]
        if lost is None:
            lost = self.drops.dropped(r, self.ids)
        delivered = dropped = 0
        for t, receiver in enumerate(robots):
            tid = receiver.id
            for s, beacon in enumerate(beacons):
                if s == t:
                    continue
                if (robots[s].id, tid) in lost:
                    dropped += 1
                else:
                    receiver.receive(beacon)
                    delivered += 1
        self.dropped_total += dropped
        events = []
        for robot in robots:
            events.extend(robot.drive_round())
        if self.params.physics != STATIC:
            self._move()
        rows = []
        for i, (robot, beacon) in enumerate(zip(robots, beacons)):
            msg = beacon.msg
            row = {"id": robot.id, "state": msg.proto_state.name, "mode": msg.op_mode.name,
                   "vote": msg.vote_count, "epoch": robot.sync.epoch,
                   "members": robot.sync.members}
            if self.params.physics != STATIC:
                p = self.bodies[i].plant
                row["true"] = [_r6(p.x), _r6(p.y)]
                if self.bodies[i].node is not None:
                    s = self.bodies[i].node.state
                    row["est"] = [_r6(s.x), _r6(s.y)]
                    dr = self.bodies[i].dead_reckoning
                    row["dr"] = [_r6(dr[0]), _r6(dr[1])]
            rows.append(row)
        evs = []
        for ev in events:
            d = event_dict(ev)
            if d["type"] == "start":
                robot = robots[self.ids.index(ev.robot)]
                d["ldmap"] = robot.last_start_digest
            evs.append(d)
        self.round += 1
        return RoundReport(r, rows, delivered, dropped, evs)

    def _move(self) -> None:
        prm = self.params
        rp = self.robots[0].cfg.round_period
        for robot, body in zip(self.robots, self.bodies):
            cmd = robot.velocity if robot.executing else (0.0, 0.0)
            if prm.physics == KINEMATIC:
                body.plant = step_plant(body.plant, cmd, rp, prm.lag, prm.arena)
                continue
            steps = max(1, round(rp / prm.ekf_dt))
            dt = rp / steps
            for k in range(steps):
                self._substep(body, cmd, dt, k)

    def _substep(self, body: Body, cmd, dt: float, k: int) -> None:
        prm = self.params
        nz = prm.noise
        before = body.plant
        # same discretization as the filter, so only the disturbances differ
        ideal = step_plant(before, cmd, dt, prm.lag, None, semi_implicit=False)
        u_a, u_theta = thrust_control(before, ideal, dt)
        w = self.rng.standard_normal(3)
        vx = ideal.vx + nz.accel * dt * w[0]
        vy = ideal.vy + nz.accel * dt * w[1]
        theta = wrap_angle(ideal.theta + nz.turn * dt * w[2])
        x, y = ideal.x, ideal.y
        x, vx = _clamp(x, vx, prm.arena[0])
        y, vy = _clamp(y, vy, prm.arena[1])
        after = PlantState(x, y, theta, vx, vy)
        body.plant = after
        rate = wrap_angle(theta - before.theta) / dt
        acc = ((vx - before.vx) / dt, (vy - before.vy) / dt)
        imu, flow, uwb = sample_sensors(after, nz, self.layout, self.rng, rate, acc, prm.mount)
        body.pubs[IMU_TOPIC](struct.pack(IMU_FMT, *imu.accel_unit, *imu.gyro_dps))
        body.pubs[FLOW_TOPIC](struct.pack(FLOW_FMT, flow.delta_px_x, flow.delta_px_y,
                                          flow.height_m, flow.mount_angle_alpha, flow.fov_theta))
        if k % prm.uwb_every == prm.uwb_every - 1:
            body.pubs[UWB_TOPIC](struct.pack(UWB_FMT, *uwb.d))
        body.broker.broker_step()
        u = ControlInput(u_a, u_theta, dt)
        body.node.step(u)
        body.dead_reckoning = forecast(body.dead_reckoning, u)

    def run(self, rounds: int) -> Iterator[RoundReport]:
        for _ in range(rounds):
            yield self.run_round()


def run_round(world: World) -> RoundReport:
    return world.run_round()
