"""In-process publish/subscribe broker with bounded queues.

Publishers own an outbox queue and register it under a unique 8-bit topic id.
Subscribers hand the broker an inbox queue plus an opaque notify handle.
``publish`` never blocks: it snapshots the outbox tuple and records a pending
notification; ``broker_step`` drains those notifications in FIFO order and
fans each tuple out to every subscriber inbox.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

MAX_TUPLE_SIZE = 64

OVERWRITE = "overwrite"
DROP_NEWEST = "drop-newest"


class PubSubError(Exception):
    pass


class DuplicateTopic(PubSubError):
    pass


class InvalidSize(PubSubError):
    pass


class UnknownTopic(PubSubError):
    pass


class InvalidHandle(PubSubError):
    pass


class EmptyOutbox(PubSubError):
    pass


class BoundedQueue:
    """Fixed-capacity tuple queue.

    With the ``overwrite`` policy a put into a full queue evicts the oldest
    entry (a capacity-1 queue therefore always holds the latest tuple).  With
    ``drop-newest`` the incoming tuple is discarded instead.
    """

    def __init__(self, capacity: int = 1, policy: str = OVERWRITE):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        if policy not in (OVERWRITE, DROP_NEWEST):
            raise ValueError(f"unknown overflow policy {policy!r}")
        self.capacity = capacity
        self.policy = policy
        self._items: deque[bytes] = deque()
        self.dropped = 0

    def put(self, item: bytes) -> bool:
        """Insert ``item``; returns False when something had to be dropped."""
        if len(self._items) < self.capacity:
            self._items.append(item)
            return True
        self.dropped += 1
        if self.policy == OVERWRITE:
            self._items.popleft()
            self._items.append(item)
        return False

    def get(self) -> Optional[bytes]:
        if not self._items:
            return None
        return self._items.popleft()

    def peek(self) -> Optional[bytes]:
        return self._items[0] if self._items else None

    def clear(self) -> None:
        self._items.clear()

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(list(self._items))


@dataclass
class SubscriberRecord:
    inbox: BoundedQueue
    notify_handle: Any

    @property
    def capacity(self) -> int:
        return self.inbox.capacity


@dataclass
class PublisherRecord:
    topic: int
    tuple_size: int
    outbox: BoundedQueue
    subscribers: list[SubscriberRecord] = field(default_factory=list)


class Broker:
    """Routes fixed-size tuples from publishers to subscribers.

    ``late_binding`` lets a subscriber attach to a topic before its
    publisher registers; with it disabled such a subscribe raises
    :class:`UnknownTopic`.
    """

    def __init__(self, late_binding: bool = True):
        self.late_binding = late_binding
        self.publishers: list[PublisherRecord] = []
        self._by_topic: dict[int, int] = {}
        self._early: dict[int, list[SubscriberRecord]] = {}
        self._pending: deque[tuple[int, bytes, tuple]] = deque()
        self.notifications: dict[int, int] = {}

    def register_publisher(self, topic: int, tuple_size: int, outbox: BoundedQueue) -> int:
        if not 0 <= topic <= 0xFF:
            raise InvalidSize(f"topic id {topic} does not fit in 8 bits")
        if topic in self._by_topic:
            raise DuplicateTopic(f"topic {topic} already registered")
        if not 1 <= tuple_size <= MAX_TUPLE_SIZE:
            raise InvalidSize(f"tuple size {tuple_size} outside 1..{MAX_TUPLE_SIZE}")
        rec = PublisherRecord(topic, tuple_size, outbox)
        rec.subscribers.extend(self._early.pop(topic, []))
        handle = len(self.publishers)
        self.publishers.append(rec)
        self._by_topic[topic] = handle
        return handle

    def subscribe(self, topic: int, notify_handle: Any, inbox: BoundedQueue) -> bool:
        sub = SubscriberRecord(inbox, notify_handle)
        handle = self._by_topic.get(topic)
        if handle is not None:
            self.publishers[handle].subscribers.append(sub)
            return True
        if not self.late_binding:
            raise UnknownTopic(f"topic {topic} has no publisher")
        self._early.setdefault(topic, []).append(sub)
        return True

    def publish(self, handle: int) -> int:
        """Queue the outbox tuple for fan-out; returns the subscriber count."""
        if not isinstance(handle, int) or not 0 <= handle < len(self.publishers):
            raise InvalidHandle(f"no publisher with handle {handle!r}")
        rec = self.publishers[handle]
        item = rec.outbox.get()
        if item is None:
            raise EmptyOutbox(f"topic {rec.topic} published with an empty outbox")
        if len(item) != rec.tuple_size:
            raise InvalidSize(
                f"topic {rec.topic} expects {rec.tuple_size}-byte tuples, got {len(item)}"
            )
        # fan-out set is fixed now; later subscribers do not see this tuple
        subs = tuple(rec.subscribers)
        self._pending.append((rec.topic, bytes(item), subs))
        return len(subs)

    @property
    def pending(self) -> int:
        return len(self._pending)

    def broker_step(self) -> int:
        """Deliver every pending publication in notification order."""
        processed = 0
        while self._pending:
            topic, item, subs = self._pending.popleft()
            for sub in subs:
                sub.inbox.put(item)
                self._signal(sub.notify_handle, topic)
            processed += 1
        return processed

    def _signal(self, notify_handle: Any, topic: int) -> None:
        key = id(notify_handle)
        self.notifications[key] = self.notifications.get(key, 0) + 1
        if callable(notify_handle):
            notify_handle(topic)


def make_publisher(broker: Broker, topic: int, tuple_size: int) -> Callable[[bytes], int]:
    """Register a topic with a capacity-1 outbox and return a ``send(tuple)`` helper."""
    outbox = BoundedQueue(1, OVERWRITE)
    handle = broker.register_publisher(topic, tuple_size, outbox)

    def send(item: bytes) -> int:
        outbox.put(item)
        return broker.publish(handle)

    return send
