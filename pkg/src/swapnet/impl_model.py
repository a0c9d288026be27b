"""Purely functional model of the buffered, event-driven swap server."""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace

from .itree import (Effect, EffectSig, ITree, Ret, Tau, TraceEvent, bind, choose,
                    iterate, or_, ret, trigger)
from .network import FromServer, NewConnection, ToServer
from .swap_spec import DEFAULT_MESSAGE_SIZE, zeros

MODEL_MUTANTS = {
    "echo": "reply with the request just received instead of the stored message",
    "no_swap": "never replace the stored message",
}


class ConnState(enum.Enum):
    RECVING = "RECVING"
    SENDING = "SENDING"
    DELETED = "DELETED"


@dataclass(frozen=True)
class Connection:
    conn_id: int
    state: ConnState = ConnState.RECVING
    request_buf: bytes = b""
    response_buf: bytes = b""


@dataclass(frozen=True)
class ServerState:
    conns: tuple = ()
    last_full_msg: bytes = bytes(DEFAULT_MESSAGE_SIZE)


class _Failure:
    def __repr__(self):
        return "FAILURE"

    def __reduce__(self):
        return "FAILURE"


FAILURE = _Failure()


@dataclass(frozen=True)
class Accept(Effect):
    endpoint: int = 0
    live: frozenset = field(default=frozenset(), compare=False)
    kind = "accept"

    def responses(self, sig=None):
        if sig is None:
            return None
        return (None,) + tuple(c for c in sig.conn_ids if c not in self.live)

    def accepts(self, value):
        return value is None or (isinstance(value, int) and value not in self.live)


@dataclass(frozen=True)
class RecvBytes(Effect):
    conn: int
    maxlen: int
    kind = "recv"

    def responses(self, sig=None):
        if sig is None:
            return None
        out = [FAILURE]
        for n in range(self.maxlen + 1):
            out.extend(bytes(p) for p in itertools.product(sig.alphabet, repeat=n))
        return tuple(out)

    def accepts(self, value):
        return value is FAILURE or (isinstance(value, bytes) and len(value) <= self.maxlen)


@dataclass(frozen=True)
class SendBytes(Effect):
    conn: int
    data: bytes
    kind = "send"

    def responses(self, sig=None):
        return (FAILURE,) + tuple(range(len(self.data) + 1))

    def accepts(self, value):
        return value is FAILURE or (isinstance(value, int) and 0 <= value <= len(self.data))


def impl_sig(alphabet: bytes = b"ab", conn_ids=(1, 2)) -> EffectSig:
    return EffectSig(kinds=(Accept, RecvBytes, SendBytes), alphabet=alphabet,
                     conn_ids=tuple(conn_ids))


def accept_connection(endpoint=0, live=frozenset()) -> ITree:
    def on_accept(r):
        return ret(None if r is None else Connection(r))
    return bind(trigger(Accept(endpoint, frozenset(live))), on_accept)


def process_conn(buffer_size: int, c: Connection, last_full_msg: bytes,
                 mutant: str | None = None) -> ITree:
    """Service one connection: a receive while RECVING, a send while SENDING."""
    if c.state == ConnState.RECVING:
        def on_recv(r):
            if r is FAILURE or r == b"":
                return ret((replace(c, state=ConnState.DELETED), last_full_msg))
            buf = c.request_buf + r
            if len(buf) < buffer_size:
                return ret((replace(c, request_buf=buf), last_full_msg))
            reply = buf if mutant == "echo" else last_full_msg
            stored = last_full_msg if mutant == "no_swap" else buf
            return ret((Connection(c.conn_id, ConnState.SENDING, b"", reply), stored))
        return bind(trigger(RecvBytes(c.conn_id, buffer_size - len(c.request_buf))), on_recv)

    if c.state == ConnState.SENDING:
        def on_send(r):
            if r is FAILURE:
                return ret((replace(c, state=ConnState.DELETED), last_full_msg))
            rest = c.response_buf[r:]
            if rest:
                return ret((replace(c, response_buf=rest), last_full_msg))
            return ret((Connection(c.conn_id, ConnState.RECVING), last_full_msg))
        return bind(trigger(SendBytes(c.conn_id, c.response_buf)), on_send)

    raise ValueError(f"cannot service connection {c.conn_id} in state {c.state}")


def replace_when(pred, x, xs) -> tuple:
    return tuple(x if pred(y) else y for y in xs)


def select_loop_body(endpoint, buffer_size: int, st: ServerState,
                     mutant: str | None = None) -> ITree:
    conns, last = st.conns, st.last_full_msg
    live = frozenset(c.conn_id for c in conns if c.state != ConnState.DELETED)

    def accepted(r):
        if r is None:
            return ret((True, st))
        return ret((True, ServerState((r,) + conns, last)))

    def serviced(res):
        c2, last2 = res
        active = (ConnState.RECVING, ConnState.SENDING)
        new_conns = replace_when(lambda x: x.state in active and x.conn_id == c2.conn_id,
                                 c2, conns)
        return ret((True, ServerState(new_conns, last2)))

    waiting_to_recv = [c for c in conns if c.state == ConnState.RECVING]
    waiting_to_send = [c for c in conns if c.state == ConnState.SENDING]
    return or_(
        bind(accept_connection(endpoint, live), accepted),
        bind(choose(waiting_to_recv + waiting_to_send),
             lambda c: bind(process_conn(buffer_size, c, last, mutant), serviced)))


def initial_state(buffer_size: int = DEFAULT_MESSAGE_SIZE) -> ServerState:
    return ServerState((), zeros(buffer_size))


def impl_model(endpoint=0, buffer_size: int = DEFAULT_MESSAGE_SIZE,
               mutant: str | None = None) -> ITree:
    if mutant is not None and mutant not in MODEL_MUTANTS:
        raise ValueError(f"unknown model mutant {mutant!r}")
    return iterate(lambda st: select_loop_body(endpoint, buffer_size, st, mutant),
                   initial_state(buffer_size))


# -- scripted oracle -----------------------------------------------------------


class ScriptError(ValueError):
    pass


def interpret(tree: ITree, script, max_taus: int = 10_000):
    """Drive ``tree`` with a fixed list of ``(kind, response)`` pairs.

    Every Vis node, internal choices included, consumes the next entry.
    Returns the event log and the remaining tree.
    """
    log = []
    taus = 0
    for kind, value in script:
        node = tree.observe()
        while isinstance(node, Tau):
            taus += 1
            if taus > max_taus:
                raise ScriptError("model diverges without visible effects")
            node = node.force().observe()
        if isinstance(node, Ret):
            raise ScriptError(f"model returned {node.value!r} with script left over")
        e = node.effect
        if e.kind != kind:
            raise ScriptError(f"script step {len(log)}: expected {e.kind}, got {kind}")
        if not e.accepts(value):
            raise ScriptError(f"script step {len(log)}: {value!r} is not a response to {e!r}")
        log.append(TraceEvent(e, value))
        tree = node.k(value)
    return log, tree


def network_events(log) -> tuple:
    """Server-side network events performed by a model execution log."""
    out = []
    for ev in log:
        e, r = ev.effect, ev.response
        if isinstance(e, Accept) and r is not None:
            out.append(NewConnection(r))
        elif isinstance(e, RecvBytes) and isinstance(r, bytes):
            out.extend(ToServer(e.conn, b) for b in r)
        elif isinstance(e, SendBytes) and isinstance(r, int):
            out.extend(FromServer(e.conn, b) for b in e.data[:r])
    return tuple(out)
