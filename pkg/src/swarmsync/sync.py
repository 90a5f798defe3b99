"""Round-based maneuver synchronizer with membership and operation modes.

Each robot cycles PROGRESS -> WAIT -> VOTE -> PROGRESS.  A robot in PROGRESS
executes a maneuver; once done it waits until every member it knows of has
reported WAIT (or until it hears somebody already voting), then counts
``K_vote`` rounds in VOTE and starts the next maneuver.  Vote counters are
merged by maximum so robots that join the vote late line up with the earliest
voter.

Alongside, a silence-counting failure detector evicts members that stay quiet
for ``member_timeout`` rounds, and a stream-consensus rule tracks the
operation mode: COOPERATIVE while everyone hears everyone, AUTONOMOUS as soon
as a message is missed or any peer reports AUTONOMOUS, back to COOPERATIVE
once a robot hears AUTONOMOUS from every peer that runs the rule.

Sets of robot ids are stored as 32-bit masks (bit ``i`` is robot ``i``).

Round protocol (driven by the caller once per synchronous round)::

    msg = build_broadcast(s, payload)        # every robot, then
    on_receive(s, peer_msg)                  # for each delivered peer message
    events = end_of_round(s)                 # every robot
    notify_maneuver_complete(s)              # when the local maneuver ends
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple, Optional

log = logging.getLogger(__name__)

MAX_ROBOTS = 32
PAYLOAD_SIZE = 9
WIRE_FORMAT = "<BBBBI9s"
WIRE_SIZE = struct.calcsize(WIRE_FORMAT)


class ProtoState(IntEnum):
    PROGRESS = 0
    WAIT = 1
    VOTE = 2


class OpMode(IntEnum):
    COOPERATIVE = 0
    AUTONOMOUS = 1


PROGRESS, WAIT, VOTE = ProtoState.PROGRESS, ProtoState.WAIT, ProtoState.VOTE
COOPERATIVE, AUTONOMOUS = OpMode.COOPERATIVE, OpMode.AUTONOMOUS


class SyncError(Exception):
    pass


class PayloadSize(SyncError):
    pass


class NotInProgress(SyncError):
    pass


class UnknownEpoch(SyncError):
    """Kept for callers that want to raise on stale peers; receive() only logs them."""


class WireError(SyncError):
    pass


def mask_of(ids) -> int:
    m = 0
    for i in ids:
        if not 0 <= i < MAX_ROBOTS:
            raise ValueError(f"robot id {i} outside 0..{MAX_ROBOTS - 1}")
        m |= 1 << i
    return m


def ids_of(mask: int) -> list[int]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


@dataclass(frozen=True)
class SyncConfig:
    K_vote: int = 2
    round_period: float = 0.1
    autonomous_threshold: int = 1
    member_timeout: Optional[int] = None
    grace_rounds: int = 2

    def __post_init__(self):
        if self.K_vote < 1:
            raise ValueError("K_vote must be at least 1")
        if self.member_timeout is None:
            object.__setattr__(self, "member_timeout", 10 * self.K_vote)
        if self.member_timeout <= self.K_vote:
            raise ValueError("member_timeout must exceed K_vote")
        if self.autonomous_threshold < 1:
            raise ValueError("autonomous_threshold must be positive")
        if self.round_period <= 0:
            raise ValueError("round_period must be positive")


class SyncMessage(NamedTuple):
    sender: int
    proto_state: int
    members: int
    vote_count: int
    op_mode: int
    payload: bytes

    def encode(self) -> bytes:
        return encode_message(self)


def encode_message(msg: SyncMessage) -> bytes:
    if len(msg.payload) != PAYLOAD_SIZE:
        raise PayloadSize(f"payload must be {PAYLOAD_SIZE} bytes")
    return struct.pack(
        WIRE_FORMAT, msg.sender, int(msg.proto_state), int(msg.op_mode),
        msg.vote_count, msg.members, msg.payload,
    )


def decode_message(data: bytes) -> SyncMessage:
    if len(data) != WIRE_SIZE:
        raise WireError(f"expected {WIRE_SIZE} bytes, got {len(data)}")
    sender, proto, mode, vote, members, payload = struct.unpack(WIRE_FORMAT, data)
    if proto > 2 or mode > 1:
        raise WireError("bad state or mode byte")
    return SyncMessage(sender, ProtoState(proto), members, vote, OpMode(mode), payload)


@dataclass
class OpModeLedger:
    last_heard: dict[int, int] = field(default_factory=dict)
    mode_reports: dict[int, int] = field(default_factory=dict)


@dataclass(frozen=True)
class StartManeuver:
    robot: int
    round: int
    epoch: int
    op_mode: OpMode
    catch_up: bool = False


@dataclass(frozen=True)
class Evicted:
    robot: int
    member: int
    round: int


@dataclass(frozen=True)
class Rejoined:
    robot: int
    member: int
    round: int


class SyncState:
    """Per-robot synchronizer state.  Operations mutate it in place."""

    __slots__ = (
        "self_id", "cfg", "proto_state", "members", "members_in_wait", "members_in_vote",
        "vote_count", "message_lost", "op_mode", "round", "epoch", "ledger", "pending",
        "evicted", "progress_age", "phase", "synced", "wait_age",
        # per-round scratch, cleared by end_of_round
        "_heard", "_rx_auto", "_rx_progress", "_rx_foreign", "_peer_started", "_adopted", "_unheard",
    )

    def __init__(self, self_id: int, cfg: SyncConfig = SyncConfig(), roster=()):
        if not 0 <= self_id < MAX_ROBOTS:
            raise ValueError(f"robot id {self_id} outside 0..{MAX_ROBOTS - 1}")
        self.self_id = self_id
        self.cfg = cfg
        self.proto_state = PROGRESS
        self.members = (1 << self_id) | mask_of(roster)
        self.members_in_wait = 0
        self.members_in_vote = 0
        self.vote_count = 0
        self.message_lost = {i: 0 for i in ids_of(self.members)}
        self.op_mode = COOPERATIVE
        self.round = 0
        self.epoch = 0
        # maneuver parity, advertised so peers can tell "ahead" from "still finishing"
        self.phase = 0
        self.synced = False
        self.wait_age = 0
        self.ledger = OpModeLedger()
        self.pending = 0
        self.evicted = 0
        # a fresh robot is mid-maneuver with nothing stale to filter
        self.progress_age = cfg.grace_rounds
        self._clear_scratch()

    def _clear_scratch(self) -> None:
        self._heard = 0
        self._rx_auto = 0
        self._rx_progress = 0
        self._rx_foreign = False
        self._peer_started = False
        self._unheard = False
        self._adopted = False

    @property
    def self_bit(self) -> int:
        return 1 << self.self_id

    def copy(self) -> "SyncState":
        new = SyncState.__new__(SyncState)
        for name in SyncState.__slots__:
            setattr(new, name, getattr(self, name))
        new.message_lost = dict(self.message_lost)
        new.ledger = OpModeLedger(dict(self.ledger.last_heard), dict(self.ledger.mode_reports))
        return new

    def key(self) -> tuple:
        """Hashable summary of everything that influences future behavior."""
        lost = tuple(sorted(self.message_lost.items()))
        return (
            int(self.proto_state), self.members, self.members_in_wait, self.members_in_vote,
            self.vote_count, lost, int(self.op_mode), self.pending, self.evicted,
            min(self.progress_age, self.cfg.grace_rounds), self.phase, self.synced,
            min(self.wait_age, self.cfg.K_vote),
        )

    def __repr__(self) -> str:
        return (
            f"SyncState(id={self.self_id}, {self.proto_state.name}, round={self.round}, "
            f"members={ids_of(self.members)}, wait={ids_of(self.members_in_wait)}, "
            f"v={self.vote_count}, {self.op_mode.name})"
        )


def build_broadcast(s: SyncState, payload: bytes) -> SyncMessage:
    if len(payload) != PAYLOAD_SIZE:
        raise PayloadSize(f"payload must be exactly {PAYLOAD_SIZE} bytes, got {len(payload)}")
    st = s.proto_state
    if st == PROGRESS:
        return SyncMessage(s.self_id, PROGRESS, s.members, s.phase, COOPERATIVE, payload)
    if st == WAIT:
        return SyncMessage(s.self_id, WAIT, s.members_in_wait | s.self_bit, s.phase, s.op_mode, payload)
    return SyncMessage(s.self_id, VOTE, s.members_in_vote | s.self_bit, s.vote_count, s.op_mode, payload)


def on_receive(s: SyncState, msg: SyncMessage) -> SyncState:
    sender = msg.sender
    if sender == s.self_id:
        raise ValueError("self-delivery must be filtered by the network layer")
    bit = 1 << sender
    s._heard |= bit
    s.ledger.last_heard[sender] = s.round
    s.ledger.mode_reports[sender] = msg.op_mode
    mine = s.proto_state

    if not s.members & bit:
        if mine == PROGRESS:
            s.members |= bit
            s.evicted &= ~bit
        else:
            if s.evicted & bit:
                log.debug("robot %d: message from evicted robot %d ignored until next maneuver",
                          s.self_id, sender)
            s.pending |= bit
            s._rx_foreign = True
            return s
    s.message_lost[sender] = 0

    theirs = msg.proto_state
    if theirs != VOTE and not s.synced and mine == PROGRESS:
        s.phase = msg.vote_count & 1
    if theirs == PROGRESS:
        s._rx_progress |= bit
        if mine == PROGRESS:
            s.members |= msg.members & ~s.evicted
            s.message_lost.update({i: 0 for i in ids_of(s.members) if i not in s.message_lost})
        elif msg.vote_count & 1 != s.phase:
            # the sender already started the next maneuver: the vote is over
            s._peer_started = True
        return s

    if msg.op_mode == AUTONOMOUS:
        s._rx_auto |= bit
    if theirs == WAIT and msg.vote_count & 1 != s.phase:
        # finished a different maneuver than ours: stale, not evidence for this cycle
        return s
    if theirs == VOTE and mine == PROGRESS and s.progress_age < s.cfg.grace_rounds:
        # possibly a straggler still voting in the previous cycle
        return s
    if theirs == WAIT and mine != PROGRESS and s.wait_age >= s.cfg.K_vote \
            and not msg.members & s.self_bit:
        # K rounds after we started waiting this peer still has not heard us
        s._unheard = True
    s.members_in_wait |= bit | msg.members
    if theirs == VOTE:
        s.members_in_vote |= bit | msg.members
        if mine == WAIT:
            s.proto_state = VOTE
            s.vote_count = msg.vote_count
            s._adopted = True
        elif mine == VOTE and msg.vote_count > s.vote_count:
            s.vote_count = msg.vote_count
    return s


def _stream_consensus(s: SyncState, others: int, silent: int) -> None:
    cfg = s.cfg
    if s.op_mode == AUTONOMOUS:
        peers_running = others & ~s._rx_progress
        if not silent and not s._rx_foreign and (s._rx_auto & others) == peers_running:
            s.op_mode = COOPERATIVE
    else:
        lagging = any(s.message_lost.get(i, 0) >= cfg.autonomous_threshold for i in ids_of(others))
        # an unknown sender means member views may differ
        if lagging or (s._rx_auto & others) or s._rx_foreign:
            s.op_mode = AUTONOMOUS


def end_of_round(s: SyncState) -> list:
    """Close the current round: failure detection, mode update, transitions."""
    cfg = s.cfg
    events: list = []
    me = s.self_bit
    others = s.members & ~me

    # failure detector
    silent = others & ~s._heard
    if silent:
        for i in ids_of(silent):
            s.message_lost[i] = s.message_lost.get(i, 0) + 1
            if s.message_lost[i] >= cfg.member_timeout:
                bit = 1 << i
                s.members &= ~bit
                s.members_in_wait &= ~bit
                s.members_in_vote &= ~bit
                s.evicted |= bit
                del s.message_lost[i]
                events.append(Evicted(s.self_id, i, s.round))
        others = s.members & ~me
        silent &= others

    # stream consensus over this round's receptions (robots in PROGRESS skip it)
    if s.proto_state != PROGRESS:
        _stream_consensus(s, others, silent)
        if s._peer_started:
            s.op_mode = AUTONOMOUS

    # protocol transitions
    start = False
    if s.proto_state == WAIT:
        if s._peer_started:
            start = True
        elif not (s.members & ~(s.members_in_wait | me)):
            s.proto_state = VOTE
            s.vote_count = 0
            s.members_in_vote |= me
    elif s.proto_state == VOTE:
        s.members_in_vote |= me
        if s._peer_started:
            start = True
        else:
            cap = cfg.K_vote - 1 if s._unheard else cfg.K_vote
            s.vote_count = max(s.vote_count, min(s.vote_count + 1, cap))
            start = s.vote_count >= cfg.K_vote

    if start:
        mode = s.op_mode
        s.proto_state = PROGRESS
        s.members_in_wait = 0
        s.members_in_vote = 0
        s.vote_count = 0
        s.progress_age = 0
        s.epoch += 1
        s.phase ^= 1
        s.synced = True
        events.append(StartManeuver(s.self_id, s.round, s.epoch, mode, s._peer_started))
        s.op_mode = COOPERATIVE
        if s.pending:
            for i in ids_of(s.pending):
                s.message_lost[i] = 0
                s.evicted &= ~(1 << i)
                events.append(Rejoined(s.self_id, i, s.round))
            s.members |= s.pending
            s.pending = 0
    elif s.proto_state == PROGRESS:
        s.progress_age += 1
    else:
        s.wait_age += 1

    s.round += 1
    s._clear_scratch()
    return events


def notify_maneuver_complete(s: SyncState) -> SyncState:
    if s.proto_state != PROGRESS:
        raise NotInProgress(f"robot {s.self_id} is in {s.proto_state.name}")
    s.proto_state = WAIT
    s.wait_age = 0
    s.members_in_wait |= s.self_bit
    # rejoin stream consensus without assuming agreement
    s.op_mode = AUTONOMOUS
    return s


def membership_snapshot(s: SyncState) -> list[int]:
    return ids_of(s.members)
