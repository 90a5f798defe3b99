"""Application interface on top of the synchronizer.

An application registers three hooks.  ``init`` runs once; ``new_round`` runs
whenever the robot starts a maneuver and must fill in the command it is handed;
``end_of_round`` runs when that maneuver finishes.  Both round hooks receive a
copy of the robot's local dynamic map (LDMap): the latest pose, velocity and
payload of every member as of the last completed communication round.

A robot's broadcast each round is a :class:`Beacon`, the synchronizer message
followed by the sender's pose and velocity.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

from .sync import (
    AUTONOMOUS,
    COOPERATIVE,
    PAYLOAD_SIZE,
    PROGRESS,
    Evicted,
    OpMode,
    StartManeuver,
    SyncConfig,
    SyncMessage,
    SyncState,
    build_broadcast,
    decode_message,
    end_of_round,
    ids_of,
    notify_maneuver_complete,
    on_receive,
)

POSE_FMT = "<5d"
POSE_SIZE = struct.calcsize(POSE_FMT)
_ENTRY_FMT = "<B5d9si"
_HEADER_FMT = "<IBB"
MAX_DURATION = 10_000


class VMError(Exception):
    pass


class AlreadyRegistered(VMError):
    pass


class PayloadTooLarge(VMError):
    pass


class HookFailure(VMError):
    def __init__(self, robot: int, round: int, hook: str, reason: str):
        super().__init__(f"robot {robot}, round {round}: {hook} failed: {reason}")
        self.robot = robot
        self.round = round
        self.hook = hook


class Beacon(NamedTuple):
    msg: SyncMessage
    state: tuple  # x, y, theta, vx, vy

    def encode(self) -> bytes:
        return self.msg.encode() + struct.pack(POSE_FMT, *self.state)

    @classmethod
    def decode(cls, data: bytes) -> "Beacon":
        head, tail = data[:-POSE_SIZE], data[-POSE_SIZE:]
        return cls(decode_message(head), struct.unpack(POSE_FMT, tail))


@dataclass(frozen=True)
class LDEntry:
    id: int
    x: float
    y: float
    theta: float
    vx: float
    vy: float
    payload: bytes
    last_heard_round: int  # -1 when never heard

    @property
    def pose(self) -> tuple:
        return (self.x, self.y, self.theta)


@dataclass(frozen=True)
class LDMap:
    entries: tuple
    op_mode: OpMode
    round: int

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if ids != sorted(set(ids)):
            raise ValueError("LDMap entries must be unique and ordered by id")

    @property
    def ids(self) -> list[int]:
        return [e.id for e in self.entries]

    def get(self, robot_id: int) -> Optional[LDEntry]:
        for e in self.entries:
            if e.id == robot_id:
                return e
        return None

    def fresh(self) -> tuple:
        """Entries heard in this map's round."""
        return tuple(e for e in self.entries if e.last_heard_round == self.round)

    def to_bytes(self) -> bytes:
        out = [struct.pack(_HEADER_FMT, self.round, int(self.op_mode), len(self.entries))]
        for e in self.entries:
            out.append(struct.pack(_ENTRY_FMT, e.id, e.x, e.y, e.theta, e.vx, e.vy,
                                   e.payload, e.last_heard_round))
        return b"".join(out)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()[:16]


@dataclass
class ManeuverCommand:
    """Velocity (m/s) or displacement (m) held for ``duration`` rounds."""

    vx: float = 0.0
    vy: float = 0.0
    dx: Optional[float] = None
    dy: Optional[float] = None
    duration: int = 0

    def velocity(self, round_period: float) -> tuple[float, float]:
        if self.dx is not None or self.dy is not None:
            span = self.duration * round_period
            return (self.dx or 0.0) / span, (self.dy or 0.0) / span
        return self.vx, self.vy

    def well_formed(self) -> bool:
        vals = [self.vx, self.vy] + [v for v in (self.dx, self.dy) if v is not None]
        return isinstance(self.duration, int) and self.duration > 0 and all(map(math.isfinite, vals))


@dataclass
class AppHooks:
    init: Optional[Callable[[], None]] = None
    new_round: Optional[Callable] = None      # (command_out, ldmap, global_state, clock) -> status
    end_of_round: Optional[Callable] = None   # (ldmap, global_state, clock) -> status
    name: str = "app"


def noop_app(K_vote: int) -> AppHooks:
    """Stand still for K_vote rounds, forever."""

    def new_round(cmd, ldmap, gs, clock):
        cmd.vx = cmd.vy = 0.0
        cmd.duration = K_vote
        return 0

    return AppHooks(new_round=new_round, name="noop")


@dataclass(frozen=True)
class ManeuverClamped:
    robot: int
    round: int
    requested: int
    applied: int


@dataclass(frozen=True)
class ManeuverComplete:
    robot: int
    round: int
    epoch: int


class Robot:
    """One robot's synchronizer, application and local view.

    The world calls ``broadcast`` and ``receive`` during a round and then
    ``drive_round`` once the round's deliveries are over.
    """

    def __init__(self, robot_id: int, cfg: SyncConfig = SyncConfig(), roster=()):
        self.id = robot_id
        self.cfg = cfg
        self.sync = SyncState(robot_id, cfg, roster)
        self.payload = bytes(PAYLOAD_SIZE)
        self.app: Optional[AppHooks] = None
        self.global_state = bytearray(1)
        self.view: dict[int, tuple] = {}  # id -> (state tuple, payload, round heard)
        self.command: Optional[ManeuverCommand] = None
        self.velocity = (0.0, 0.0)
        self.remaining = 0
        self.started = False
        self.calls = {"init": 0, "new_round": 0, "end_of_round": 0}
        self.new_round_maps: list[LDMap] = []
        self.keep_maps = False
        self.last_start_digest = ""
        self._boot_events: list = []

    def clone(self) -> "Robot":
        new = Robot.__new__(Robot)
        new.__dict__.update(self.__dict__)
        new.sync = self.sync.copy()
        new.view = dict(self.view)
        new.calls = dict(self.calls)
        new.new_round_maps = list(self.new_round_maps)
        new._boot_events = list(self._boot_events)
        return new

    def key(self) -> tuple:
        return (self.sync.key(), self.remaining, self.started)

    # lifecycle

    def register_app(self, hooks: AppHooks) -> int:
        if self.app is not None or self.started:
            raise AlreadyRegistered(f"robot {self.id} already has an application")
        self.app = hooks
        if hooks.init is not None:
            hooks.init()
        self.calls["init"] += 1
        return self.id

    def send_message_data(self, payload: bytes) -> bool:
        if len(payload) > PAYLOAD_SIZE:
            raise PayloadTooLarge(f"{len(payload)} bytes exceeds {PAYLOAD_SIZE}")
        self.payload = bytes(payload).ljust(PAYLOAD_SIZE, b"\0")
        return True

    def clock(self, rnd: int) -> float:
        return rnd * self.cfg.round_period

    def _start(self) -> None:
        if self.app is None:
            self.register_app(noop_app(self.cfg.K_vote))
        self.started = True
        # the first maneuver has no completed round to look back on
        entries = tuple(self._entry(i, -1) for i in ids_of(self.sync.members))
        self._begin_maneuver(LDMap(entries, AUTONOMOUS, 0), 0, self._boot_events)

    # per-round traffic

    def broadcast(self, state: tuple) -> Beacon:
        if not self.started:
            self._start()
        rnd = self.sync.round
        self.view[self.id] = (tuple(state), self.payload, rnd)
        return Beacon(build_broadcast(self.sync, self.payload), tuple(state))

    def receive(self, beacon: Beacon) -> None:
        msg = beacon.msg
        self.view[msg.sender] = (beacon.state, msg.payload, self.sync.round)
        on_receive(self.sync, msg)

    def _entry(self, i: int, rnd: int) -> LDEntry:
        seen = self.view.get(i)
        if seen is None:
            return LDEntry(i, 0.0, 0.0, 0.0, 0.0, 0.0, bytes(PAYLOAD_SIZE), -1)
        (x, y, th, vx, vy), payload, heard = seen
        return LDEntry(i, x, y, th, vx, vy, payload, heard)

    def ldmap(self, members: int, op_mode: OpMode, rnd: int) -> LDMap:
        return LDMap(tuple(self._entry(i, rnd) for i in ids_of(members)), op_mode, rnd)

    # round driver

    def _begin_maneuver(self, ldmap: LDMap, rnd: int, events: list) -> None:
        cmd = ManeuverCommand()
        status = self._call("new_round", rnd, cmd, ldmap, self.global_state, self.clock(rnd))
        if status not in (0, None):
            raise HookFailure(self.id, rnd, "new_round", f"status {status}")
        if not cmd.well_formed():
            raise HookFailure(self.id, rnd, "new_round", "no well-formed command written")
        lo, hi = self.cfg.K_vote, MAX_DURATION
        if not lo <= cmd.duration <= hi:
            applied = min(max(cmd.duration, lo), hi)
            events.append(ManeuverClamped(self.id, rnd, cmd.duration, applied))
            cmd.duration = applied
        self.command = cmd
        self.velocity = cmd.velocity(self.cfg.round_period)
        self.remaining = cmd.duration
        self.last_start_digest = ldmap.digest()
        if self.keep_maps:
            self.new_round_maps.append(ldmap)

    def _call(self, hook: str, rnd: int, *args):
        fn = getattr(self.app, hook)
        self.calls[hook] += 1
        if fn is None:
            return 0
        try:
            return fn(*args)
        except HookFailure:
            raise
        except Exception as exc:
            raise HookFailure(self.id, rnd, hook, repr(exc)) from exc

    def drive_round(self) -> list:
        s = self.sync
        rnd = s.round
        members_before = s.members
        heard_all = not (members_before & ~s.self_bit & ~s._heard)
        executing = s.proto_state == PROGRESS
        events = end_of_round(s)
        if self._boot_events:
            events[:0] = self._boot_events
            self._boot_events = []
        start = None
        for ev in events:
            if isinstance(ev, StartManeuver):
                start = ev
        if start is not None:
            members = members_before & s.members if start.op_mode == COOPERATIVE else s.members
            self._begin_maneuver(self.ldmap(members, start.op_mode, rnd), rnd, events)
        elif executing:
            self.remaining -= 1
            if self.remaining <= 0:
                notify_maneuver_complete(s)
                self.velocity = (0.0, 0.0)
                mode = COOPERATIVE if heard_all else AUTONOMOUS
                status = self._call("end_of_round", rnd, self.ldmap(s.members, mode, rnd),
                                    self.global_state, self.clock(rnd))
                if status not in (0, None):
                    raise HookFailure(self.id, rnd, "end_of_round", f"status {status}")
                events.append(ManeuverComplete(self.id, rnd, s.epoch))
        for ev in events:
            if isinstance(ev, Evicted):
                self.view.pop(ev.member, None)
        return events

    @property
    def executing(self) -> bool:
        return self.sync.proto_state == PROGRESS


def drive_round(robot: Robot) -> list:
    return robot.drive_round()


def register_app(robot: Robot, hooks: AppHooks) -> int:
    return robot.register_app(hooks)


def send_message_data(robot: Robot, payload: bytes) -> bool:
    return robot.send_message_data(payload)
