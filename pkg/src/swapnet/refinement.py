"""Executable network refinement between the model, the linear spec and observed traces.

Membership of a client-side trace is decided by co-simulation: client
events are consumed greedily (a client step that is enabled now stays
enabled after any server step, so taking it early never loses a witness),
and whenever the client is blocked the server side is advanced by one of
its moves.  A move of the linear spec is atomic at its two linearization
points: accepting a pending connection, or receiving a whole message and
emitting the stored reply.  Visited configurations are memoized.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .impl_model import (Accept, RecvBytes, SendBytes, ServerState, initial_state,
                         network_events, select_loop_body)
from .itree import Ret, Tau, TraceEvent, Vis, enumerate_traces, heads
from .network import (INITIAL, BudgetExhausted, ConnectionStatus, FromServer, NetworkState,
                      NewConnection, ToServer, client_transition, network_reordered,
                      server_transition, server_transitions)
from .swap_spec import (DEFAULT_MESSAGE_SIZE, ObsConnect, ObsMsgFromServer, ObsMsgToServer,
                        flatten_to_network, is_spec_trace, linear_spec, linear_spec_from,
                        spec_sig, zeros)

DEFAULT_BUDGET = 10**6


@dataclass(frozen=True)
class Accepted:
    witness: tuple


@dataclass(frozen=True)
class Rejected:
    counterexample: tuple


@dataclass(frozen=True)
class BudgetExceeded:
    explored: int


# -- server-side systems ----------------------------------------------------------


@dataclass(frozen=True)
class SpecConfig:
    tree: object
    ns: NetworkState
    last: bytes


@dataclass(frozen=True)
class ImplConfig:
    st: ServerState
    ns: NetworkState


class _AnyInitial:
    def __repr__(self):
        return "ANY_INITIAL"


# The stored message before the first exchange is unknown (a server that has
# already been running).  The first reply then fixes it, read off the
# client's observations on the connection served first.
ANY_INITIAL = _AnyInitial()


class SpecSystem:
    """The linear spec seen as a server acting on the network."""

    def __init__(self, message_size=DEFAULT_MESSAGE_SIZE, initial=None):
        self.n = message_size
        self.initial_msg = zeros(message_size) if initial is None else initial
        self.observed = ()

    def initial(self, ns=INITIAL):
        if self.initial_msg is ANY_INITIAL:
            return SpecConfig(None, ns, ANY_INITIAL)
        return SpecConfig(linear_spec(self.n, self.initial_msg), ns, self.initial_msg)

    @staticmethod
    def key(cfg):
        return (cfg.ns, cfg.last)

    def _first_reply(self, c):
        seen = bytes(ev.byte for ev in self.observed
                     if isinstance(ev, FromServer) and ev.conn == c)
        return seen[:self.n].ljust(self.n, b"\0")

    def _moves_unknown(self, cfg):
        ns = cfg.ns
        accepted = tuple(ns.conns(ConnectionStatus.ACCEPTED))
        out = []
        for c in accepted:
            guess = self._first_reply(c)
            sub = SpecConfig(linear_spec_from(accepted, guess, self.n), ns, guess)
            out.extend(m for m in self.moves(sub)
                       if isinstance(m[0][0], ToServer) and m[0][0].conn == c)
        for c in ns.conns(ConnectionStatus.PENDING):
            ev = NewConnection(c)
            out.append(((ev,), SpecConfig(None, server_transition(ev, ns), ANY_INITIAL)))
        return out

    def moves(self, cfg):
        if cfg.last is ANY_INITIAL:
            return self._moves_unknown(cfg)
        n, ns = self.n, cfg.ns
        exchanges, accepts = [], []
        for node in heads(cfg.tree):
            if not isinstance(node, Vis):
                continue
            e = node.effect
            if isinstance(e, ObsConnect):
                for c in ns.conns(ConnectionStatus.PENDING):
                    if e.accepts(c):
                        ev = NewConnection(c)
                        accepts.append(((ev,), SpecConfig(node.k(c), server_transition(ev, ns),
                                                          cfg.last)))
            elif isinstance(e, ObsMsgToServer):
                queued = ns.channel(e.conn).to_server
                if len(queued) < n:
                    continue
                msg = queued[:n]
                recv = tuple(ToServer(e.conn, b) for b in msg)
                ns2 = server_transitions(recv, ns)
                if ns2 is None:
                    continue
                for reply in heads(node.k(msg)):
                    if isinstance(reply, Vis) and isinstance(reply.effect, ObsMsgFromServer):
                        send = tuple(FromServer(e.conn, b) for b in reply.effect.msg)
                        ns3 = server_transitions(send, ns2)
                        if ns3 is not None:
                            exchanges.append((recv + send, SpecConfig(reply.k(()), ns3, msg)))
        return exchanges + accepts


class ImplSystem:
    """The implementation model, one select-loop iteration per move.

    Responses that produce no network event (accept returning nothing,
    sending zero bytes, failed or closed receives) are not explored: they
    leave the network untouched and can only remove later behaviours.
    """

    def __init__(self, message_size=DEFAULT_MESSAGE_SIZE, mutant=None, endpoint=0):
        self.n = message_size
        self.mutant = mutant
        self.endpoint = endpoint

    def initial(self, ns=INITIAL):
        return ImplConfig(initial_state(self.n), ns)

    @staticmethod
    def key(cfg):
        return (cfg.st, cfg.ns)

    def moves(self, cfg):
        out = []
        stack = [(select_loop_body(self.endpoint, self.n, cfg.st, self.mutant), cfg.ns, ())]
        while stack:
            t, ns, evs = stack.pop()
            node = t.observe()
            while isinstance(node, Tau):
                node = node.force().observe()
            if isinstance(node, Ret):
                if evs:
                    out.append((evs, ImplConfig(node.value[1], ns)))
                continue
            e = node.effect
            if e.internal:
                for x in reversed(tuple(e.responses(None))):
                    stack.append((node.k(x), ns, evs))
            elif isinstance(e, Accept):
                for c in reversed(ns.conns(ConnectionStatus.PENDING)):
                    if e.accepts(c):
                        ev = NewConnection(c)
                        stack.append((node.k(c), server_transition(ev, ns), evs + (ev,)))
            elif isinstance(e, RecvBytes):
                queued = ns.channel(e.conn).to_server
                for size in range(min(e.maxlen, len(queued)), 0, -1):
                    got = tuple(ToServer(e.conn, b) for b in queued[:size])
                    ns2 = server_transitions(got, ns)
                    if ns2 is not None:
                        stack.append((node.k(queued[:size]), ns2, evs + got))
            elif isinstance(e, SendBytes):
                for size in range(len(e.data), 0, -1):
                    sent = tuple(FromServer(e.conn, b) for b in e.data[:size])
                    ns2 = server_transitions(sent, ns)
                    if ns2 is not None:
                        stack.append((node.k(size), ns2, evs + sent))
        return out


# -- membership --------------------------------------------------------------------


def _consume(tc, j, cfg):
    ns = cfg.ns
    while j < len(tc):
        nxt = client_transition(tc[j], ns)
        if nxt is None:
            break
        ns, j = nxt, j + 1
    return j, (cfg if ns is cfg.ns else replace(cfg, ns=ns))


def _saturate(system, cfg, witness, limit=10_000):
    for _ in range(limit):
        moves = system.moves(cfg)
        if not moves:
            break
        evs, cfg = moves[0]
        witness += evs
    return witness


def cosimulate(tc, system, budget=DEFAULT_BUDGET, saturate=True, max_moves=None):
    """Search for a server-side trace of ``system`` that explains client trace ``tc``."""
    tc = tuple(tc)
    seen = set()
    best = 0
    stack = [(system.initial(), 0, (), 0)]
    while stack:
        cfg, j, witness, depth = stack.pop()
        j, cfg = _consume(tc, j, cfg)
        best = max(best, j)
        if j == len(tc):
            if saturate:
                witness = _saturate(system, cfg, witness)
            return Accepted(witness)
        key = (j, system.key(cfg))
        if key in seen:
            continue
        seen.add(key)
        if len(seen) > budget:
            return BudgetExceeded(len(seen))
        if max_moves is not None and depth >= max_moves:
            continue
        for evs, nxt in reversed(system.moves(cfg)):
            stack.append((nxt, j, witness + evs, depth + 1))
    return Rejected(tc[:best + 1])


def spec_behavior_member(tc, message_size=DEFAULT_MESSAGE_SIZE, budget=DEFAULT_BUDGET,
                         saturate=True, initial=None):
    """Is client trace ``tc`` explained by the linear spec over the network?

    ``initial`` is the stored message before the first exchange (zeros by
    default, or ``ANY_INITIAL``).
    """
    system = SpecSystem(message_size, initial)
    system.observed = tuple(tc)
    return cosimulate(tc, system, budget, saturate)


def impl_behavior_member(tc, depth=None, message_size=DEFAULT_MESSAGE_SIZE, mutant=None,
                         budget=DEFAULT_BUDGET):
    """Membership in the model's network behaviour; ``depth`` caps loop iterations."""
    return cosimulate(tc, ImplSystem(message_size, mutant), budget, saturate=False,
                      max_moves=depth)


def spec_behavior_naive(tc, message_size=DEFAULT_MESSAGE_SIZE, budget=DEFAULT_BUDGET):
    """Reference decision procedure: enumerate spec traces, try every reordering.

    Candidate witnesses are all byte-level prefixes of flattened spec traces
    over the connection ids and request bytes that occur in ``tc``.  A
    candidate whose received bytes on some connection are not a prefix of
    what the client sent there is skipped without searching.
    """
    tc = tuple(tc)
    n = message_size
    ids = sorted({ev.conn for ev in tc})
    sent = {}
    for ev in tc:
        if isinstance(ev, ToServer):
            sent[ev.conn] = sent.get(ev.conn, b"") + bytes((ev.byte,))
    alphabet = bytes(sorted({b for data in sent.values() for b in data}))
    opens = sum(isinstance(ev, NewConnection) for ev in tc)
    depth = opens + 2 * (sum(map(len, sent.values())) // n)
    traces = enumerate_traces(linear_spec(n), depth, spec_sig(alphabet, ids))
    flats = {flatten_to_network(tr.events, n) for tr in traces}

    def plausible(ts):
        got = {}
        for ev in ts:
            if isinstance(ev, ToServer):
                got[ev.conn] = got.get(ev.conn, b"") + bytes((ev.byte,))
        return all(sent.get(c, b"").startswith(data) for c, data in got.items())

    candidates = set()
    for flat in flats:
        for k in range(len(flat) + 1):
            if not plausible(flat[:k]):
                break
            candidates.add(flat[:k])
    for ts in sorted(candidates, key=len):
        if network_reordered(ts, tc, budget=budget):
            return Accepted(ts)
    return Rejected(tc)


# -- bounded model refinement ----------------------------------------------------------


@dataclass
class RefinementResult:
    status: str                 # "holds" | "counterexample" | "budget-exceeded"
    counterexample: tuple | None = None
    explored: int = 0

    @property
    def holds(self):
        return self.status == "holds"


def _closure(system, cfgs):
    seen = {system.key(c): c for c in cfgs}
    stack = list(seen.values())
    while stack:
        for _, nxt in system.moves(stack.pop()):
            k = system.key(nxt)
            if k not in seen:
                seen[k] = nxt
                stack.append(nxt)
    return list(seen.values())


def _client_step(system, cfgs, ev):
    out = {}
    for c in cfgs:
        ns = client_transition(ev, c.ns)
        if ns is not None:
            nxt = replace(c, ns=ns)
            out[system.key(nxt)] = nxt
    return list(out.values())


def network_refines_bounded(z, alphabet=b"ab", conn_ids=(1, 2), message_size=1,
                            mutant=None, budget=DEFAULT_BUDGET) -> RefinementResult:
    """Check every client trace of the model up to ``z`` events against the linear spec.

    Explores the product of two subset constructions: the model
    configurations and the linear spec configurations consistent with the client
    trace so far.  A trace the model can produce but the linear spec cannot
    explain is returned as the counterexample.
    """
    impl = ImplSystem(message_size, mutant)
    spec = SpecSystem(message_size)
    visited = {}
    explored = 0

    def explore(icfgs, scfgs, tc, z):
        nonlocal explored
        explored += 1
        if explored > budget:
            raise BudgetExhausted
        iclos = _closure(impl, icfgs)
        sclos = _closure(spec, scfgs)
        events = []
        for c in conn_ids:
            events.append(NewConnection(c))
            events.extend(ToServer(c, b) for b in alphabet)
        heads_seen = {(c, cfg.ns.channel(c).from_server[0])
                      for cfg in iclos for c in conn_ids if cfg.ns.channel(c).from_server}
        events.extend(FromServer(c, b) for c, b in sorted(heads_seen))
        for ev in events:
            inext = _client_step(impl, iclos, ev)
            if not inext:
                continue
            snext = _client_step(spec, sclos, ev)
            tc2 = tc + (ev,)
            if not snext:
                return tc2
            remaining = z - len(tc2)
            if remaining <= 0:
                continue
            key = (frozenset(impl.key(c) for c in inext), frozenset(spec.key(c) for c in snext))
            if visited.get(key, -1) >= remaining:
                continue
            visited[key] = remaining
            bad = explore(inext, snext, tc2, z)
            if bad is not None:
                return bad
        return None

    # Deepening one event at a time makes the first counterexample a shortest one.
    for bound in range(1, z + 1):
        visited.clear()
        try:
            bad = explore([impl.initial()], [spec.initial()], (), bound)
        except BudgetExhausted:
            return RefinementResult("budget-exceeded", explored=explored)
        if bad is not None:
            return RefinementResult("counterexample", bad, explored)
    return RefinementResult("holds", explored=explored)


# -- linearization points --------------------------------------------------------------


def _points(log, n):
    """Classify each network-relevant step of a model execution log."""
    bufs = {}
    for ev in log:
        e, r = ev.effect, ev.response
        if isinstance(e, Accept) and r is not None:
            bufs[r] = b""
            yield "accept", r, None
        elif isinstance(e, RecvBytes):
            if not isinstance(r, bytes) or not r:
                bufs.pop(e.conn, None)
                continue
            buf = bufs.get(e.conn, b"") + r
            if len(buf) >= n:
                bufs[e.conn] = b""
                yield "complete", e.conn, buf
            else:
                bufs[e.conn] = buf
                yield "partial_recv", e.conn, buf
        elif isinstance(e, SendBytes) and isinstance(r, int) and r > 0:
            yield "send", e.conn, e.data[:r]


LINEARIZATION_POINTS = ("accept", "complete")


def linearization_points(log, message_size=DEFAULT_MESSAGE_SIZE, fires=None):
    """Replay a model run, extending a spec witness whenever ``fires(kind)`` holds.

    Returns ``(firings, witness)`` where each firing is ``(kind, spec_events)``.
    """
    fires = fires or (lambda kind: kind in LINEARIZATION_POINTS)
    last = zeros(message_size)
    conns = frozenset()
    firings, spec_events = [], []
    for kind, conn, data in _points(log, message_size):
        if not fires(kind):
            continue
        if kind == "accept":
            new = [TraceEvent(ObsConnect(conns), conn)]
            conns = conns | {conn}
        else:
            msg = data[:message_size].ljust(message_size, b"\0")
            new = [TraceEvent(ObsMsgToServer(conn, message_size), msg),
                   TraceEvent(ObsMsgFromServer(conn, last), ())]
            last = msg
        firings.append((kind, new))
        spec_events.extend(new)
    return firings, flatten_to_network(spec_events, message_size)


def linearization_points_check(log, message_size=DEFAULT_MESSAGE_SIZE, fires=None) -> bool:
    """Check that the witness grows exactly at accepts and completed messages.

    The resulting witness must also be a spec trace that explains what a
    client observing the run synchronously would see.
    """
    firings, witness = linearization_points(log, message_size, fires)
    expected = [kind for kind, _, _ in _points(log, message_size)
                if kind in LINEARIZATION_POINTS]
    if [kind for kind, _ in firings] != expected:
        return False
    return (is_spec_trace(witness, message_size)
            and network_reordered(witness, network_events(log)))


# -- recorded server runs ----------------------------------------------------------------


def server_trace_in_model(ts, message_size=DEFAULT_MESSAGE_SIZE, mutant=None,
                          budget=DEFAULT_BUDGET) -> bool:
    """Can the model perform exactly the server-side network trace ``ts``?

    Clients are assumed to have opened every connection and sent every byte
    up front, so only the model's own choices are searched.
    """
    ts = tuple(ts)
    ns = INITIAL
    for ev in ts:
        if isinstance(ev, NewConnection):
            ns = client_transition(ev, ns)
        elif isinstance(ev, ToServer):
            if ns.status(ev.conn) == ConnectionStatus.CLOSED:
                return False
            ns = client_transition(ev, ns)
        if ns is None:
            return False
    system = ImplSystem(message_size, mutant)
    seen = set()
    stack = [(system.initial(ns), 0)]
    while stack:
        cfg, i = stack.pop()
        if i == len(ts):
            return True
        key = (i, system.key(cfg))
        if key in seen:
            continue
        seen.add(key)
        if len(seen) > budget:
            raise BudgetExhausted(f"server_trace_in_model visited {budget} states")
        for evs, nxt in system.moves(cfg):
            if ts[i:i + len(evs)] == evs:
                stack.append((nxt, i + len(evs)))
    return False
