"""Shared fixtures: random finite trees with an independent trace oracle, sample three-client runs."""
from __future__ import annotations

import random

import pytest

from swapnet.itree import (NO_RESULT, EffectSig, Input, Output, Trace, TraceEvent, bind, choose,
                           or_, ret, tau, trigger)
from swapnet.network import FromServer, NewConnection, ToServer

SMALL_IO = EffectSig(kinds=(Input, Output), alphabet=b"\x00\x01")


# -- random finite trees ---------------------------------------------------------------
#
# A tree is described by nested tuples so the expected trace set can be
# computed straight from the description, without any ITree machinery:
#   ("ret", v) ("tau", d) ("or", d0, d1) ("choose", [d...]) ("out", v, d) ("in", [d0, d1])
# For "in" the continuation picks its child by the input value.


def gen_desc(rng: random.Random, depth: int):
    kinds = ["ret"] if depth <= 0 else ["ret", "tau", "or", "choose", "out", "in", "in"]
    kind = rng.choice(kinds)
    if kind == "ret":
        return ("ret", rng.randint(0, 3))
    if kind == "tau":
        return ("tau", gen_desc(rng, depth - 1))
    if kind == "or":
        return ("or", gen_desc(rng, depth - 1), gen_desc(rng, depth - 1))
    if kind == "choose":
        return ("choose", [gen_desc(rng, depth - 1) for _ in range(rng.randint(1, 3))])
    if kind == "out":
        return ("out", rng.randint(0, 2), gen_desc(rng, depth - 1))
    return ("in", [gen_desc(rng, depth - 1), gen_desc(rng, depth - 1)])


def build(desc):
    kind = desc[0]
    if kind == "ret":
        return ret(desc[1])
    if kind == "tau":
        return tau(build(desc[1]))
    if kind == "or":
        return or_(build(desc[1]), build(desc[2]))
    if kind == "choose":
        return bind(choose(range(len(desc[1]))), lambda i: build(desc[1][i]))
    if kind == "out":
        return bind(trigger(Output(desc[1])), lambda _: build(desc[2]))
    return bind(trigger(Input()), lambda x: build(desc[1][x]))


def oracle_traces(desc, depth=10**9):
    """Trace set of a description: every event prefix with NO_RESULT, completed runs with their value."""
    kind = desc[0]
    if kind == "ret":
        return {((), NO_RESULT), ((), desc[1])}
    if kind == "tau":
        return oracle_traces(desc[1], depth)
    if kind in ("or", "choose"):
        kids = desc[1:] if kind == "or" else desc[1]
        return set().union(*(oracle_traces(d, depth) for d in kids))
    out = {((), NO_RESULT)}
    if depth == 0:
        return out
    if kind == "out":
        branches = [(TraceEvent(Output(desc[1]), ()), desc[2])]
    else:
        branches = [(TraceEvent(Input(), x), desc[1][x]) for x in (0, 1)]
    for ev, sub in branches:
        for evs, res in oracle_traces(sub, depth - 1):
            out.add(((ev,) + evs, res))
    return out


def as_pairs(traces):
    return {(t.events, t.result) for t in traces}


def gen_cont(rng, depth):
    """A continuation ``x -> tree`` built from a table of descriptions."""
    table = [gen_desc(rng, depth) for _ in range(4)]
    return (lambda x: build(table[hash(x) % 4])), table


@pytest.fixture
def rng():
    return random.Random(1234)


# -- network traces ---------------------------------------------------------------------


def net(text: str) -> tuple:
    """Compact network traces: ``C1 S1:abc F1:000``; a '0' byte stands for NUL."""
    out = []
    for tok in text.split():
        tag, rest = tok[0], tok[1:]
        if tag == "C":
            out.append(NewConnection(int(rest)))
            continue
        conn, _, payload = rest.partition(":")
        cls = ToServer if tag == "S" else FromServer
        out.extend(cls(int(conn), 0 if ch == "0" else ord(ch)) for ch in payload)
    return tuple(out)


# The three-client run, one client at a time.
SYNC_RUN = "C1 S1:abc F1:000 C2 S2:def F2:abc C3 S3:ghi F3:def"
# The same explanation seen through a reordering network: sends chunked and
# interleaved across connections, connects racing accepts, the last reply
# never delivered.
DISORDERED_RUN = "C1 C2 C3 S1:ab S3:ghi S2:def S1:c F2:abc F1:000"


# -- acceptance summary -----------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


__all__ = ["SMALL_IO", "Trace", "gen_desc", "build", "oracle_traces", "as_pairs", "net"]
