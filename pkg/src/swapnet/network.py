"""Byte-level TCP network: events, in-flight buffers and the reordering relation."""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import NamedTuple


@dataclass(frozen=True)
class NewConnection:
    conn: int


@dataclass(frozen=True)
class ToServer:
    conn: int
    byte: int


@dataclass(frozen=True)
class FromServer:
    conn: int
    byte: int


NetworkEvent = NewConnection | ToServer | FromServer


class ConnectionStatus(enum.IntEnum):
    CLOSED = 0
    PENDING = 1
    ACCEPTED = 2


class Channel(NamedTuple):
    status: ConnectionStatus = ConnectionStatus.CLOSED
    to_server: bytes = b""
    from_server: bytes = b""


_CLOSED = Channel()


class BudgetExhausted(Exception):
    """A search gave up after visiting its node budget."""


class NetworkState:
    """Per-connection status and in-flight queues.  Treated as immutable."""

    __slots__ = ("_chans", "_key")

    def __init__(self, chans=None):
        self._chans = dict(chans or {})
        self._key = None

    def channel(self, c) -> Channel:
        return self._chans.get(c, _CLOSED)

    def status(self, c) -> ConnectionStatus:
        return self.channel(c).status

    def with_channel(self, c, ch: Channel) -> "NetworkState":
        chans = dict(self._chans)
        chans[c] = ch
        return NetworkState(chans)

    def conns(self, status=None):
        ids = sorted(self._chans)
        if status is None:
            return ids
        return [c for c in ids if self._chans[c].status == status]

    def key(self):
        if self._key is None:
            self._key = tuple(sorted(self._chans.items()))
        return self._key

    def __eq__(self, other):
        return isinstance(other, NetworkState) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"NetworkState({dict(self.key())!r})"


INITIAL = NetworkState()

_OPEN = (ConnectionStatus.PENDING, ConnectionStatus.ACCEPTED)


def server_transition(ev, ns: NetworkState) -> NetworkState | None:
    ch = ns.channel(ev.conn)
    if isinstance(ev, NewConnection):
        if ch.status != ConnectionStatus.PENDING:
            return None
        return ns.with_channel(ev.conn, ch._replace(status=ConnectionStatus.ACCEPTED))
    if isinstance(ev, FromServer):
        if ch.status != ConnectionStatus.ACCEPTED:
            return None
        return ns.with_channel(ev.conn, ch._replace(from_server=ch.from_server + bytes((ev.byte,))))
    if ch.status not in _OPEN or not ch.to_server or ch.to_server[0] != ev.byte:
        return None
    return ns.with_channel(ev.conn, ch._replace(to_server=ch.to_server[1:]))


def client_transition(ev, ns: NetworkState) -> NetworkState | None:
    ch = ns.channel(ev.conn)
    if isinstance(ev, NewConnection):
        if ch.status != ConnectionStatus.CLOSED:
            return None
        return ns.with_channel(ev.conn, ch._replace(status=ConnectionStatus.PENDING))
    if isinstance(ev, ToServer):
        if ch.status not in _OPEN:
            return None
        return ns.with_channel(ev.conn, ch._replace(to_server=ch.to_server + bytes((ev.byte,))))
    if not ch.from_server or ch.from_server[0] != ev.byte:
        return None
    return ns.with_channel(ev.conn, ch._replace(from_server=ch.from_server[1:]))


def server_transitions(events, ns):
    for ev in events:
        ns = server_transition(ev, ns)
        if ns is None:
            return None
    return ns


def network_reordered(ts, tc, ns0: NetworkState = INITIAL, budget: int = 10**6) -> bool:
    """Can one network execution produce ``ts`` at the server and ``tc`` at the client?

    Both traces must be consumed completely; bytes may stay in flight.
    Memoized depth-first search over (server index, client index, state).
    """
    ts, tc = tuple(ts), tuple(tc)
    seen = set()
    stack = [(0, 0, ns0)]
    while stack:
        i, j, ns = stack.pop()
        if i == len(ts) and j == len(tc):
            return True
        key = (i, j, ns)
        if key in seen:
            continue
        seen.add(key)
        if len(seen) > budget:
            raise BudgetExhausted(f"network_reordered visited {budget} states")
        if j < len(tc):
            nxt = client_transition(tc[j], ns)
            if nxt is not None:
                stack.append((i, j + 1, nxt))
        if i < len(ts):
            nxt = server_transition(ts[i], ns)
            if nxt is not None:
                stack.append((i + 1, j, nxt))
    return False


def brute_force_reordered(ts, tc, ns0: NetworkState = INITIAL) -> bool:
    """Reference oracle: try every interleaving explicitly.  Small inputs only."""
    ts, tc = tuple(ts), tuple(tc)
    n = len(ts) + len(tc)
    if n > 16:
        raise ValueError(f"brute force limited to 16 events, got {n}")
    for server_slots in itertools.combinations(range(n), len(ts)):
        slots = set(server_slots)
        ns, i, j = ns0, 0, 0
        for pos in range(n):
            if pos in slots:
                ns = server_transition(ts[i], ns)
                i += 1
            else:
                ns = client_transition(tc[j], ns)
                j += 1
            if ns is None:
                break
        else:
            return True
    return False
