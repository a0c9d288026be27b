"""Randomized client scenarios, drivers for the live server and the model, shrinking.

A scenario opens some connections, sends fixed-size requests in random
chunks, and interleaves everything into one schedule.  Running it yields
the client-side network trace, which is then checked against the linear
spec.  Scenarios are pure functions of their seed.
"""
from __future__ import annotations

import json
import random
import selectors
import socket
import time
from dataclasses import asdict, dataclass, field, replace

from .network import FromServer, NewConnection, ToServer, client_transition
from .refinement import (ANY_INITIAL, BudgetExceeded, ImplSystem, Rejected,
                         spec_behavior_member)
from .server import MUTANTS, ServerConfig, ServerProcess
from .swap_spec import DEFAULT_MESSAGE_SIZE
from .traceio import render_trace

ALPHABET = b"abcdefghijklmnopqrstuvwxyz"
DISCARD_CAP = 3000


@dataclass(frozen=True)
class Limits:
    max_connections: int = 5
    max_messages: int = 4
    message_size: int = DEFAULT_MESSAGE_SIZE
    recv_probability: float = 0.7
    close_probability: float = 0.3


@dataclass(frozen=True)
class Step:
    conn: int
    action: str            # open | send | recv | close
    msg: int = -1          # index of the message a send or recv belongs to
    data: bytes = b""      # chunk for send
    size: int = 0          # max bytes for recv


@dataclass(frozen=True)
class Scenario:
    seed: int
    message_size: int
    messages: tuple        # ((conn, (msg, ...)), ...)
    schedule: tuple

    @property
    def connections(self):
        return len(self.messages)

    def measure(self):
        return self.connections + sum(len(m) for _, m in self.messages) + len(self.schedule)

    def validate(self):
        declared = {c for c, _ in self.messages}
        chunks = {}
        for st in self.schedule:
            if st.conn not in declared:
                raise ValueError(f"step refers to undeclared connection {st.conn}")
            if st.action == "send":
                chunks[(st.conn, st.msg)] = chunks.get((st.conn, st.msg), b"") + st.data
        for c, msgs in self.messages:
            for i, m in enumerate(msgs):
                if chunks.pop((c, i), b"") != m:
                    raise ValueError(f"chunks of message {i} on connection {c} do not partition it")
        if chunks:
            raise ValueError(f"chunks for undeclared messages {sorted(chunks)}")
        return self

    def to_json(self):
        return {
            "seed": self.seed,
            "message_size": self.message_size,
            "messages": {str(c): [m.decode("latin-1") for m in msgs] for c, msgs in self.messages},
            "schedule": [_step_json(s) for s in self.schedule],
        }


def _step_json(st):
    out = {"conn": st.conn, "action": st.action}
    if st.action == "send":
        out.update(msg=st.msg, data=st.data.decode("latin-1"))
    elif st.action == "recv":
        out.update(size=st.size)
    return out


def _chunks(rng, msg, n):
    out, i = [], 0
    while i < len(msg):
        k = rng.randint(1, n)
        out.append(msg[i:i + k])
        i += k
    return out


def gen_scenario(seed, limits: Limits = Limits()) -> Scenario:
    rng = random.Random(seed)
    n = limits.message_size
    k = rng.randint(1, limits.max_connections)
    messages, programs = [], []
    for c in range(1, k + 1):
        msgs = tuple(bytes(rng.choice(ALPHABET) for _ in range(n))
                     for _ in range(rng.randint(1, limits.max_messages)))
        messages.append((c, msgs))
        prog = [Step(c, "open")]
        for i, m in enumerate(msgs):
            prog.extend(Step(c, "send", i, chunk) for chunk in _chunks(rng, m, n))
            if rng.random() < limits.recv_probability:
                prog.append(Step(c, "recv", i, size=n))
        if rng.random() < limits.close_probability:
            prog.append(Step(c, "close"))
        programs.append(prog)
    schedule = []
    while programs:
        prog = rng.choice(programs)
        schedule.append(prog.pop(0))
        if not prog:
            programs.remove(prog)
    return Scenario(seed, n, tuple(messages), tuple(schedule))


def has_cross_interleaving(sc: Scenario) -> bool:
    """Does a send on one connection fall between two chunks of another's message?"""
    open_msg = {}
    for st in sc.schedule:
        if st.action != "send":
            continue
        if any(c != st.conn for c in open_msg):
            return True
        sent = open_msg.get(st.conn, (st.msg, 0))
        size = sent[1] + len(st.data) if sent[0] == st.msg else len(st.data)
        if size >= sc.message_size:
            open_msg.pop(st.conn, None)
        else:
            open_msg[st.conn] = (st.msg, size)
    return False


# -- running scenarios ---------------------------------------------------------------


@dataclass
class RunResult:
    trace: tuple
    status: str = "ok"          # ok | inconclusive
    expected_reply_bytes: int = 0
    reply_bytes: int = 0
    note: str = ""

    @property
    def discarded(self):
        return self.status == "ok" and self.expected_reply_bytes > 0 and self.reply_bytes == 0


class _Client:
    def __init__(self, sc, addr, reply_timeout, grace):
        self.sc, self.addr = sc, addr
        self.reply_timeout, self.grace = reply_timeout, grace
        self.n = sc.message_size
        self.trace = []
        self.socks = {}
        self.pending = {}       # conn -> bytes of the current request sent so far
        self.owed = {}          # conn -> reply bytes still expected
        self.expected = 0
        self.received = 0

    def _read(self, c, limit, wait):
        sock = self.socks[c]
        deadline = time.monotonic() + wait
        got = b""
        with selectors.DefaultSelector() as sel:
            sel.register(sock, selectors.EVENT_READ)
            while len(got) < limit:
                left = deadline - time.monotonic()
                if not sel.select(max(0.0, left)):
                    break
                try:
                    data = sock.recv(limit - len(got))
                except (BlockingIOError, InterruptedError):
                    continue
                except OSError:
                    break
                if not data:
                    break
                got += data
                self._record_reply(c, data)
                if self.owed.get(c, 0) <= 0:
                    wait = 0.0
                    deadline = time.monotonic()
        return got

    def _record_reply(self, c, data):
        self.trace.extend(FromServer(c, b) for b in data)
        self.owed[c] = self.owed.get(c, 0) - len(data)
        self.received += len(data)

    def step(self, st):
        c = st.conn
        if st.action == "open":
            sock = socket.create_connection(self.addr, timeout=self.reply_timeout)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            sock.setblocking(False)
            self.socks[c] = sock
            self.trace.append(NewConnection(c))
        elif c not in self.socks:
            return
        elif st.action == "send":
            sock = self.socks[c]
            sock.settimeout(self.reply_timeout)
            try:
                sock.sendall(st.data)
            except OSError:
                return
            finally:
                sock.setblocking(False)
            self.trace.extend(ToServer(c, b) for b in st.data)
            done = self.pending.get(c, b"") + st.data
            while len(done) >= self.n:
                done = done[self.n:]
                self.owed[c] = self.owed.get(c, 0) + self.n
                self.expected += self.n
            self.pending[c] = done
        elif st.action == "recv":
            wait = self.reply_timeout if self.owed.get(c, 0) > 0 else 0.0
            self._read(c, st.size, wait)
        elif st.action == "close":
            if self.owed.get(c, 0) > 0:
                self._read(c, self.owed[c], self.reply_timeout)
            self.socks.pop(c).close()

    def drain(self):
        """Collect outstanding replies in arrival order, then briefly look for extras."""
        with selectors.DefaultSelector() as sel:
            for c, sock in self.socks.items():
                sel.register(sock, selectors.EVENT_READ, c)
            last_progress = time.monotonic()
            grace_until = None
            while sel.get_map():
                now = time.monotonic()
                if grace_until is None and (all(v <= 0 for v in self.owed.values())
                                            or now - last_progress > self.reply_timeout):
                    grace_until = now + self.grace
                if grace_until is not None and now >= grace_until:
                    break
                limit = grace_until if grace_until is not None else last_progress + self.reply_timeout
                for key, _ in sel.select(max(0.0, limit - now)):
                    try:
                        data = key.fileobj.recv(4096)
                    except (BlockingIOError, InterruptedError):
                        continue
                    except OSError:
                        data = b""
                    if not data:
                        sel.unregister(key.fileobj)
                        continue
                    self._record_reply(key.data, data)
                    last_progress = time.monotonic()

    def close(self):
        for sock in self.socks.values():
            sock.close()
        self.socks.clear()


def run_scenario_tcp(sc: Scenario, addr, reply_timeout=2.0, grace=0.02) -> RunResult:
    """Drive a live server with the scenario and record what the client observes."""
    client = _Client(sc, addr, reply_timeout, grace)
    try:
        for st in sc.schedule:
            client.step(st)
        client.drain()
    except OSError as exc:
        return RunResult(tuple(client.trace), "inconclusive", client.expected, client.received,
                         f"connection failed: {exc}")
    finally:
        client.close()
    return RunResult(tuple(client.trace), "ok", client.expected, client.received)


def run_scenario_model(sc: Scenario, depth=200, mutant=None, rng_seed=None) -> RunResult:
    """Co-execute the scenario with the model, resolving its choices at random."""
    rng = random.Random(sc.seed if rng_seed is None else rng_seed)
    system = ImplSystem(sc.message_size, mutant)
    cfg = system.initial()
    trace, moves_left = [], depth
    closed = set()
    expected = received = 0
    pending = {}

    def server_steps(count):
        nonlocal cfg, moves_left
        for _ in range(count):
            if moves_left <= 0:
                return
            options = system.moves(cfg)
            if not options:
                return
            _, cfg = rng.choice(options)
            moves_left -= 1

    def read(c, limit):
        nonlocal cfg, received
        queued = cfg.ns.channel(c).from_server[:limit]
        for b in queued:
            ev = FromServer(c, b)
            cfg = replace(cfg, ns=client_transition(ev, cfg.ns))
            trace.append(ev)
        received += len(queued)

    for st in sc.schedule:
        server_steps(rng.randint(0, 3))
        c = st.conn
        if c in closed:
            continue
        if st.action == "open":
            ev = NewConnection(c)
            cfg = replace(cfg, ns=client_transition(ev, cfg.ns))
            trace.append(ev)
        elif st.action == "send":
            for b in st.data:
                ev = ToServer(c, b)
                cfg = replace(cfg, ns=client_transition(ev, cfg.ns))
                trace.append(ev)
            done = pending.get(c, 0) + len(st.data)
            expected += (done // sc.message_size) * sc.message_size
            pending[c] = done % sc.message_size
        elif st.action == "recv":
            for _ in range(8):
                if cfg.ns.channel(c).from_server:
                    break
                server_steps(1)
            read(c, st.size)
        elif st.action == "close":
            closed.add(c)
    for _ in range(depth):
        options = system.moves(cfg)
        if moves_left <= 0 or not options:
            break
        server_steps(1)
        for c in cfg.ns.conns():
            if c not in closed:
                read(c, len(cfg.ns.channel(c).from_server))
    return RunResult(tuple(trace), "ok", expected, received)


# -- targets ----------------------------------------------------------------------


class ForkedServerTarget:
    """A fresh server process per scenario, so every run starts from the initial store."""

    def __init__(self, mutant=None, reply_timeout=2.0, grace=0.02):
        self.mutant = mutant
        self.reply_timeout = reply_timeout
        self.grace = grace
        self.initial = None

    def describe(self):
        return f"tcp server (forked, mutant {self.mutant})"

    def run(self, sc):
        config = ServerConfig(port=0, message_size=sc.message_size, mutant=self.mutant)
        with ServerProcess(config) as proc:
            return run_scenario_tcp(sc, proc.addr, self.reply_timeout, self.grace)


class AddressTarget:
    """An already running server; its stored message is unknown, so the first reply fixes it."""

    def __init__(self, addr, reply_timeout=2.0, grace=0.02):
        self.addr = addr
        self.reply_timeout = reply_timeout
        self.grace = grace
        self.initial = ANY_INITIAL

    def describe(self):
        return f"tcp server at {self.addr[0]}:{self.addr[1]}"

    def run(self, sc):
        return run_scenario_tcp(sc, self.addr, self.reply_timeout, self.grace)


class ModelTarget:
    def __init__(self, mutant=None, depth=200):
        self.mutant = mutant
        self.depth = depth
        self.initial = None

    def describe(self):
        return f"implementation model (mutant {self.mutant})"

    def run(self, sc):
        return run_scenario_model(sc, self.depth, self.mutant)


# -- checking, shrinking, campaigns ----------------------------------------------------


@dataclass
class Outcome:
    seed: int
    verdict: str            # accepted | rejected | budget | discarded | inconclusive
    run: RunResult
    detail: object = None


def check_scenario(sc, target, budget=10**6) -> Outcome:
    res = target.run(sc)
    if res.status != "ok":
        return Outcome(sc.seed, "inconclusive", res, res.note)
    verdict = spec_behavior_member(res.trace, sc.message_size, budget, saturate=False,
                                   initial=target.initial)
    if isinstance(verdict, Rejected):
        return Outcome(sc.seed, "rejected", res, verdict)
    if isinstance(verdict, BudgetExceeded):
        return Outcome(sc.seed, "budget", res, verdict)
    if res.discarded:
        return Outcome(sc.seed, "discarded", res)
    return Outcome(sc.seed, "accepted", res, verdict)


def _without_conn(sc, c):
    return replace(sc, messages=tuple(m for m in sc.messages if m[0] != c),
                   schedule=tuple(s for s in sc.schedule if s.conn != c))


def _without_msg(sc, c, i):
    messages = tuple((cc, msgs[:i] + msgs[i + 1:]) if cc == c else (cc, msgs)
                     for cc, msgs in sc.messages)
    schedule = []
    for s in sc.schedule:
        if s.conn == c and s.msg == i:
            continue
        if s.conn == c and s.msg > i:
            s = replace(s, msg=s.msg - 1)
        schedule.append(s)
    return replace(sc, messages=messages, schedule=tuple(schedule))


def _merged(sc, a, b):
    schedule = list(sc.schedule)
    schedule[a] = replace(schedule[a], data=schedule[a].data + schedule[b].data)
    del schedule[b]
    return replace(sc, schedule=tuple(schedule))


def reductions(sc: Scenario):
    """Every single-step reduction; each strictly lowers ``measure``."""
    for c, msgs in sc.messages:
        if len(sc.messages) > 1:
            yield _without_conn(sc, c)
        if len(msgs) > 1:
            for i in range(len(msgs)):
                yield _without_msg(sc, c, i)
    last_chunk = {}
    for idx, s in enumerate(sc.schedule):
        if s.action == "send":
            prev = last_chunk.get((s.conn, s.msg))
            if prev is not None:
                yield _merged(sc, prev, idx)
            last_chunk[(s.conn, s.msg)] = idx
    for idx, s in enumerate(sc.schedule):
        if s.action in ("recv", "close"):
            yield replace(sc, schedule=sc.schedule[:idx] + sc.schedule[idx + 1:])


def shrink(sc: Scenario, failing, max_attempts=500) -> Scenario:
    """Greedy: take the first reduction that still fails, until none does."""
    attempts = 0
    progress = True
    while progress and attempts < max_attempts:
        progress = False
        for cand in reductions(sc):
            attempts += 1
            if failing(cand):
                sc = cand
                progress = True
                break
            if attempts >= max_attempts:
                break
    return sc


@dataclass
class TestReport:
    target: str = ""
    scenarios_run: int = 0
    accepted: int = 0
    rejected: int = 0
    budget_exceeded: int = 0
    inconclusive: int = 0
    discarded: int = 0
    seconds: float = 0.0
    counterexample: dict | None = None
    verdicts: list = field(default_factory=list)

    def to_json(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def counterexample_record(sc, outcome, shrunk=None, shrunk_trace=None):
    rec = {"seed": sc.seed, "scenario": sc.to_json(), "trace": render_trace(outcome.run.trace)}
    if shrunk is not None:
        rec["shrunk_scenario"] = shrunk.to_json()
        rec["shrunk_trace"] = render_trace(shrunk_trace)
    return rec


def run_tests(target, seeds, limits: Limits = Limits(), budget=10**6, time_budget=None,
              stop_on_failure=True, do_shrink=True, keep_verdicts=True) -> TestReport:
    report = TestReport(target=target.describe())
    start = time.monotonic()
    for seed in seeds:
        if time_budget is not None and time.monotonic() - start > time_budget:
            break
        if report.discarded >= DISCARD_CAP:
            break
        sc = gen_scenario(seed, limits)
        out = check_scenario(sc, target, budget)
        report.scenarios_run += 1
        kind = out.verdict
        if kind == "budget":
            report.budget_exceeded += 1
        else:
            setattr(report, kind, getattr(report, kind) + 1)
        if keep_verdicts:
            report.verdicts.append({"seed": seed, "verdict": kind})
        if kind == "rejected" and report.counterexample is None:
            shrunk = shrunk_trace = None
            if do_shrink:
                shrunk = shrink(sc, lambda s: check_scenario(s, target, budget).verdict == "rejected")
                shrunk_trace = check_scenario(shrunk, target, budget).run.trace
            report.counterexample = counterexample_record(sc, out, shrunk, shrunk_trace)
            if stop_on_failure:
                break
    report.seconds = time.monotonic() - start
    return report


@dataclass
class MutantResult:
    mutant: int
    description: str
    killed: bool
    scenarios: int
    discarded: int
    seconds: float
    seed: int | None = None


def mutation_campaign(make_target=ForkedServerTarget, mutants=None, max_scenarios=1000,
                      time_budget=300.0, seed0=0, limits: Limits = Limits(), budget=10**6):
    """Run scenarios against each mutant until it is rejected or the budget runs out."""
    results = []
    for m in sorted(MUTANTS) if mutants is None else mutants:
        target = make_target(m)
        start = time.monotonic()
        runs = discards = 0
        killed_by = None
        while runs < max_scenarios and time.monotonic() - start < time_budget:
            seed = seed0 + runs
            out = check_scenario(gen_scenario(seed, limits), target, budget)
            runs += 1
            if out.verdict == "discarded":
                discards += 1
            if out.verdict == "rejected":
                killed_by = seed
                break
        results.append(MutantResult(m, MUTANTS.get(m, ""), killed_by is not None, runs,
                                    discards, time.monotonic() - start, killed_by))
    return results
