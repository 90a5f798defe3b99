import pytest
from hypothesis import given, settings, strategies as st

from swarmsync.simworld import DropSchedule, PlantState, World
from swarmsync.sync import (
    AUTONOMOUS,
    COOPERATIVE,
    PAYLOAD_SIZE,
    PROGRESS,
    VOTE,
    WAIT,
    WIRE_SIZE,
    Evicted,
    NotInProgress,
    PayloadSize,
    Rejoined,
    StartManeuver,
    SyncConfig,
    SyncMessage,
    SyncState,
    WireError,
    build_broadcast,
    decode_message,
    encode_message,
    end_of_round,
    ids_of,
    mask_of,
    membership_snapshot,
    notify_maneuver_complete,
    on_receive,
)
from swarmsync.vm import AppHooks, Robot

PAY = bytes(PAYLOAD_SIZE)


def msg(sender, state, members, vote=0, mode=COOPERATIVE):
    return SyncMessage(sender, state, mask_of(members), vote, mode, PAY)


def test_fresh_broadcast():
    s = SyncState(4)
    m = build_broadcast(s, PAY)
    assert (m.proto_state, ids_of(m.members), m.op_mode, m.vote_count) == (PROGRESS, [4], COOPERATIVE, 0)
    with pytest.raises(PayloadSize):
        build_broadcast(s, b"short")


def test_vote_and_wait_broadcasts():
    s = SyncState(0, SyncConfig(K_vote=5))
    notify_maneuver_complete(s)
    assert s.op_mode == AUTONOMOUS
    m = build_broadcast(s, PAY)
    assert m.proto_state == WAIT and m.op_mode == AUTONOMOUS
    s.proto_state, s.vote_count = VOTE, 3
    assert build_broadcast(s, PAY).vote_count == 3


def test_wait_receives_wait():
    s = SyncState(1, roster=[1, 3])
    notify_maneuver_complete(s)
    on_receive(s, msg(3, WAIT, [3]))
    assert s.members_in_wait == mask_of([1, 3])


def test_wait_adopts_vote():
    s = SyncState(1, SyncConfig(K_vote=3), roster=[1, 2])
    notify_maneuver_complete(s)
    on_receive(s, msg(2, VOTE, [1, 2], vote=2))
    assert s.proto_state == VOTE and s.vote_count == 2


def test_progress_buffers_wait():
    s = SyncState(1, roster=[1, 3])
    on_receive(s, msg(3, WAIT, [3]))
    assert s.proto_state == PROGRESS
    assert s.members_in_wait & mask_of([3])


def test_notify_keeps_buffered_peers():
    s = SyncState(1, roster=[1, 2, 3])
    on_receive(s, msg(2, WAIT, [2]))
    on_receive(s, msg(3, WAIT, [3]))
    notify_maneuver_complete(s)
    assert s.proto_state == WAIT and ids_of(s.members_in_wait) == [1, 2, 3]
    with pytest.raises(NotInProgress):
        notify_maneuver_complete(s)


def test_single_robot_votes_k_rounds():
    s = SyncState(0, SyncConfig(K_vote=3))
    notify_maneuver_complete(s)
    assert end_of_round(s) == [] and s.proto_state == VOTE
    history = []
    for _ in range(3):
        history.append(end_of_round(s))
    assert history[0] == history[1] == []
    assert [type(e) for e in history[2]] == [StartManeuver]
    assert s.proto_state == PROGRESS and s.vote_count == 0


def test_self_delivery_rejected():
    with pytest.raises(ValueError):
        on_receive(SyncState(2), msg(2, PROGRESS, [2]))


def test_membership_snapshot():
    s = SyncState(3)
    assert membership_snapshot(s) == [3]
    on_receive(s, msg(5, PROGRESS, [5]))
    on_receive(s, msg(2, PROGRESS, [2]))
    assert membership_snapshot(s) == [2, 3, 5]


def test_silent_member_is_evicted_and_rejoins():
    cfg = SyncConfig(K_vote=2, member_timeout=6)
    s = SyncState(0, cfg, roster=[0, 5])
    events = []
    for _ in range(6):
        events += end_of_round(s)
    assert Evicted(0, 5, 5) in events
    assert membership_snapshot(s) == [0]
    assert 5 not in s.message_lost
    # back from the dead: heard while waiting, merged at the next start
    notify_maneuver_complete(s)
    on_receive(s, msg(5, PROGRESS, [5]))
    assert s.pending == mask_of([5])
    evs = []
    while not any(isinstance(e, StartManeuver) for e in evs):
        evs = end_of_round(s)
    assert Rejoined(0, 5, s.round - 1) in evs and membership_snapshot(s) == [0, 5]


def test_wire_is_seventeen_bytes_and_round_trips():
    m = msg(7, VOTE, [0, 7, 31], vote=3, mode=AUTONOMOUS)
    data = encode_message(m)
    assert len(data) == WIRE_SIZE == 17
    assert data[:4] == bytes([7, 2, 1, 3])
    assert int.from_bytes(data[4:8], "little") == (1 | 1 << 7 | 1 << 31)
    assert decode_message(data) == m
    with pytest.raises(WireError):
        decode_message(data[:-1])
    with pytest.raises(WireError):
        decode_message(bytes([7, 9]) + data[2:])


@given(st.integers(0, 31), st.sampled_from([PROGRESS, WAIT, VOTE]), st.integers(0, 2**32 - 1),
       st.integers(0, 255), st.sampled_from([COOPERATIVE, AUTONOMOUS]),
       st.binary(min_size=9, max_size=9))
def test_wire_round_trip(sender, state, members, vote, mode, payload):
    m = SyncMessage(sender, state, members, vote, mode, payload)
    assert decode_message(m.encode()) == m


def fixed_app(durations):
    """An app whose k-th maneuver lasts durations[k] rounds (then K_vote)."""
    it = iter(durations)

    def new_round(cmd, ldmap, gs, clock):
        cmd.duration = next(it, 2)
        return 0

    return AppHooks(new_round=new_round)


def make_world(n, cfg, durations=None, drops=None):
    robots = [Robot(i, cfg, range(n)) for i in range(n)]
    if durations is not None:
        for r, d in zip(robots, durations):
            r.register_app(fixed_app(d))
    return World(robots, [PlantState(float(i), 0.0) for i in range(n)], drops or DropSchedule())


def start_rounds(world, rounds):
    starts = {}
    for _ in range(rounds):
        for ev in world.run_round().events:
            if ev["type"] == "start":
                starts.setdefault(ev["epoch"], {})[ev["robot"]] = ev["round"]
    return starts


def test_staggered_finish_starts_together():
    w = make_world(3, SyncConfig(K_vote=2), durations=[[2], [4], [6]])
    starts = start_rounds(w, 40)
    assert len(starts) >= 3
    for epoch, got in starts.items():
        assert len(set(got.values())) == 1 and len(got) == 3


def test_one_drop_while_waiting_bounded_skew():
    # robot 0 finishes first and waits; one of robot 2's messages to it is lost
    w = make_world(3, SyncConfig(K_vote=2), durations=[[2], [4], [6]],
                   drops=DropSchedule([(6, 2, 0)]))
    starts = start_rounds(w, 40)
    for got in starts.values():
        assert len(got) == 3 and max(got.values()) - min(got.values()) <= 2


def test_blackout_round_counts_every_silence():
    w = make_world(3, SyncConfig(K_vote=2))
    w.run_round()
    rep = w.run_round(lost=frozenset((s, t) for s in range(3) for t in range(3) if s != t))
    assert rep.delivered == 0 and rep.dropped == 6
    for r in w.robots:
        assert all(v == 1 for k, v in r.sync.message_lost.items() if k != r.id)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 4), st.integers(1, 3), st.integers(0, 10_000), st.floats(0.0, 0.5))
def test_vote_monotone_within_occupancy(n, K, seed, p):
    w = make_world(n, SyncConfig(K_vote=K), drops=DropSchedule(seed=seed, p=p))
    last = {}
    for _ in range(60):
        w.run_round()
        for r in w.robots:
            s = r.sync
            if s.proto_state == VOTE:
                assert s.vote_count >= last.get(r.id, 0)
                assert s.vote_count <= K
                last[r.id] = s.vote_count
            else:
                assert s.vote_count == 0
                last.pop(r.id, None)
            assert r.id in ids_of(s.members)
            assert s.message_lost.get(r.id, 0) == 0


def test_config_guards():
    with pytest.raises(ValueError):
        SyncConfig(K_vote=0)
    with pytest.raises(ValueError):
        SyncConfig(K_vote=3, member_timeout=3)
    assert SyncConfig(K_vote=3).member_timeout == 30
