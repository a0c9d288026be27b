"""Interaction trees: lazily unfolded Ret / Tau / Vis computations.

A tree is unfolded one node at a time with ``observe()``; recursive
occurrences live behind zero-argument thunks (``Tau``) or continuations
(``Vis``), so infinite trees such as ``spin()`` or ``forever(body)`` are
ordinary values.  Everything that inspects a tree (traces, equivalence,
refinement) is bounded by an explicit fuel or depth.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Iterator


class UnknownEffect(ValueError):
    pass


class UnenumerableEffect(ValueError):
    """An effect's response domain cannot be listed and no sampler was given."""


class ITree:
    __slots__ = ()

    def observe(self) -> "ITree":
        """Return the head node (a Ret, Tau or Vis)."""
        return self

    def bind(self, k: Callable[[Any], "ITree"]) -> "ITree":
        return _Bind(self, k)

    def map(self, f: Callable[[Any], Any]) -> "ITree":
        return _Bind(self, lambda x: Ret(f(x)))


class Ret(ITree):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = value

    def __repr__(self):
        return f"Ret({self.value!r})"


class Tau(ITree):
    __slots__ = ("thunk",)

    def __init__(self, thunk: Callable[[], ITree]):
        self.thunk = thunk

    def force(self) -> ITree:
        return self.thunk()

    def __repr__(self):
        return "Tau(...)"


class Vis(ITree):
    __slots__ = ("effect", "k")

    def __init__(self, effect: "Effect", k: Callable[[Any], ITree]):
        self.effect = effect
        self.k = k

    def __repr__(self):
        return f"Vis({self.effect!r}, ...)"


class _Bind(ITree):
    __slots__ = ("tree", "k")

    def __init__(self, tree, k):
        self.tree = tree
        self.k = k

    def observe(self):
        node = self.tree.observe()
        k = self.k
        if isinstance(node, Ret):
            return k(node.value).observe()
        if isinstance(node, Tau):
            return Tau(lambda: _Bind(node.force(), k))
        return Vis(node.effect, lambda x: _Bind(node.k(x), k))


# -- effects -----------------------------------------------------------------


class Effect:
    """Base class for effect requests.

    Subclasses are frozen dataclasses.  ``kind`` names the effect in scripts
    and logs; ``internal`` marks nondeterministic choice, which trace
    enumeration branches on but never emits.
    """

    kind = "effect"
    internal = False

    def responses(self, sig: "EffectSig | None") -> Iterable | None:
        """Finite response domain, or None when it cannot be enumerated."""
        return None

    def accepts(self, value) -> bool:
        return True


@dataclass(frozen=True)
class Or(Effect):
    kind = "or"
    internal = True

    def responses(self, sig=None):
        return (0, 1)

    def accepts(self, value):
        return value in (0, 1)


@dataclass(frozen=True)
class Choose(Effect):
    n: int
    kind = "choose"
    internal = True

    def responses(self, sig=None):
        return range(self.n)

    def accepts(self, value):
        return isinstance(value, int) and 0 <= value < self.n


@dataclass
class EffectSig:
    """Registry of effect kinds plus the finite domains used for enumeration.

    ``alphabet`` bounds byte-valued responses and ``conn_ids`` bounds
    connection identifiers; effects consult them in ``responses``.
    """

    kinds: tuple = ()
    alphabet: bytes = b"abcd"
    conn_ids: tuple = (1, 2, 3)

    def __contains__(self, effect):
        return isinstance(effect, (Or, Choose)) or isinstance(effect, tuple(self.kinds))

    def responses(self, effect):
        if effect not in self:
            raise UnknownEffect(f"effect {effect!r} is not registered")
        values = effect.responses(self)
        if values is None:
            raise UnenumerableEffect(f"cannot enumerate responses of {effect!r}")
        return values


def _responses(effect, sig, sampler):
    if effect.internal:
        return effect.responses(sig)
    if sampler is not None:
        return sampler(effect)
    if sig is not None:
        return sig.responses(effect)
    values = effect.responses(None)
    if values is None:
        raise UnenumerableEffect(f"cannot enumerate responses of {effect!r}")
    return values


# -- constructors and combinators ---------------------------------------------


def ret(value=None) -> ITree:
    return Ret(value)


def tau(t: ITree) -> ITree:
    return Tau(lambda: t)


def delay(thunk: Callable[[], ITree]) -> ITree:
    """A Tau whose subtree is only built when forced."""
    return Tau(thunk)


def spin() -> ITree:
    return Tau(spin)


def vis(effect: Effect, k: Callable[[Any], ITree] = Ret, sig: EffectSig | None = None) -> ITree:
    if sig is not None and effect not in sig:
        raise UnknownEffect(f"effect {effect!r} is not registered")
    return Vis(effect, k)


def trigger(effect: Effect) -> ITree:
    return Vis(effect, Ret)


def bind(t: ITree, k: Callable[[Any], ITree]) -> ITree:
    return _Bind(t, k)


def or_(t1: ITree, t2: ITree) -> ITree:
    return Vis(Or(), lambda i: t1 if i == 0 else t2)


def choose(items) -> ITree:
    """Pick one of ``items``.  An empty list gives a stuck node with no continuation."""
    items = tuple(items)
    return Vis(Choose(len(items)), lambda i: Ret(items[i]))


def forever(body: ITree) -> ITree:
    return _Bind(body, lambda _: Tau(lambda: forever(body)))


def iterate(step: Callable[[Any], ITree], state) -> ITree:
    """Run ``step`` repeatedly, threading state, while it yields ``(True, state)``.

    Iterations are separated by a Tau.
    """
    def again(res):
        cont, nxt = res
        if not cont:
            return Ret(nxt)
        return Tau(lambda: iterate(step, nxt))
    return _Bind(step(state), again)


# -- traces ------------------------------------------------------------------


class _NoResult:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "NO_RESULT"

    def __reduce__(self):
        return (_NoResult, ())


NO_RESULT = _NoResult()


@dataclass(frozen=True)
class TraceEvent:
    effect: Effect
    response: Any


@dataclass(frozen=True)
class Trace:
    events: tuple = ()
    result: Any = NO_RESULT

    def __len__(self):
        return len(self.events)


@dataclass
class TraceCheck:
    ok: bool
    exhausted: bool = False

    def __bool__(self):
        return self.ok


def check_trace(t: ITree, events, result=NO_RESULT, fuel: int = 1000) -> TraceCheck:
    """Decide membership of a trace, reporting whether fuel ran out.

    ``fuel`` bounds node unfoldings along each explored path.  Internal
    choices are resolved by search; visible events must match in order.
    """
    events = tuple(events)
    n = len(events)
    exhausted = False
    stack = [(t, 0, fuel)]
    while stack:
        tree, i, f = stack.pop()
        if i == n and result is NO_RESULT:
            return TraceCheck(True, exhausted)
        if f <= 0:
            exhausted = True
            continue
        node = tree.observe()
        if isinstance(node, Ret):
            if i == n and node.value == result:
                return TraceCheck(True, exhausted)
        elif isinstance(node, Tau):
            stack.append((node.force(), i, f - 1))
        elif node.effect.internal:
            for x in reversed(tuple(node.effect.responses(None))):
                stack.append((node.k(x), i, f - 1))
        elif i < n:
            ev = events[i]
            if ev.effect == node.effect and node.effect.accepts(ev.response):
                stack.append((node.k(ev.response), i + 1, f - 1))
    return TraceCheck(False, exhausted)


def is_trace(t: ITree, events, result=NO_RESULT, fuel: int = 1000) -> bool:
    return check_trace(t, events, result, fuel).ok


def heads(t: ITree, fuel: int = 1000) -> Iterator[ITree]:
    """Yield every Ret or visible Vis node reachable through Tau and internal choice."""
    stack = [(t, fuel)]
    while stack:
        tree, f = stack.pop()
        if f <= 0:
            continue
        node = tree.observe()
        if isinstance(node, Tau):
            stack.append((node.force(), f - 1))
        elif isinstance(node, Vis) and node.effect.internal:
            for x in reversed(tuple(node.effect.responses(None))):
                stack.append((node.k(x), f - 1))
        else:
            yield node


def enumerate_traces(t: ITree, depth: int, sig: EffectSig | None = None,
                     sampler=None, internal_fuel: int = 200) -> set[Trace]:
    """All observable traces with at most ``depth`` visible events.

    The set is prefix closed: every reachable event sequence appears with
    ``NO_RESULT``, and sequences that end at a ``Ret`` also appear with
    that result.  ``internal_fuel`` caps the Tau/choice steps taken between
    two visible events, which is what keeps ``spin()`` finite.
    """
    out = set()
    stack = [(t, (), internal_fuel)]
    while stack:
        tree, evs, f = stack.pop()
        out.add(Trace(evs))
        if f <= 0:
            continue
        node = tree.observe()
        if isinstance(node, Ret):
            out.add(Trace(evs, node.value))
        elif isinstance(node, Tau):
            stack.append((node.force(), evs, f - 1))
        elif node.effect.internal:
            for x in node.effect.responses(sig):
                stack.append((node.k(x), evs, f - 1))
        elif len(evs) < depth:
            for x in _responses(node.effect, sig, sampler):
                if node.effect.accepts(x):
                    stack.append((node.k(x), evs + (TraceEvent(node.effect, x),), internal_fuel))
    return out


# -- equivalence and refinement -------------------------------------------------


class Eutt(enum.Enum):
    EQUIVALENT = "equivalent"
    DISTINCT = "distinct"
    UNKNOWN = "unknown"


def _strip_taus(t, allowance):
    for _ in range(allowance + 1):
        node = t.observe()
        if not isinstance(node, Tau):
            return node
        t = node.force()
    return None


def eutt_bounded(t: ITree, u: ITree, fuel: int = 1000, sig: EffectSig | None = None,
                 sampler=None) -> Eutt:
    """Bounded equivalence up to Tau.

    ``fuel`` bounds how many Vis levels are compared along any path, and
    also how many Taus either side may skip before each comparison.  A
    side still silent after that is inconclusive, never distinct.
    """
    unknown = False
    stack = [(t, u, fuel)]
    while stack:
        a, b, f = stack.pop()
        na = _strip_taus(a, fuel)
        nb = _strip_taus(b, fuel)
        if na is None or nb is None:
            unknown = True
            continue
        if isinstance(na, Ret) and isinstance(nb, Ret):
            if na.value != nb.value:
                return Eutt.DISTINCT
            continue
        if isinstance(na, Ret) or isinstance(nb, Ret) or na.effect != nb.effect:
            return Eutt.DISTINCT
        if f <= 0:
            unknown = True
            continue
        for x in _responses(na.effect, sig, sampler):
            stack.append((na.k(x), nb.k(x), f - 1))
    return Eutt.UNKNOWN if unknown else Eutt.EQUIVALENT


def refines_bounded(t: ITree, u: ITree, depth: int, sig: EffectSig | None = None,
                    sampler=None) -> bool:
    return enumerate_traces(t, depth, sig, sampler) <= enumerate_traces(u, depth, sig, sampler)


# -- a tiny console interface, handy for examples -------------------------------


@dataclass(frozen=True)
class Input(Effect):
    kind = "input"

    def responses(self, sig=None):
        return tuple(sig.alphabet) if sig is not None else None

    def accepts(self, value):
        return isinstance(value, int)


@dataclass(frozen=True)
class Output(Effect):
    value: Any = None
    kind = "output"

    def responses(self, sig=None):
        return ((),)

    def accepts(self, value):
        return value == ()


def echo() -> ITree:
    return forever(bind(trigger(Input()), lambda x: trigger(Output(x))))


IO = EffectSig(kinds=(Input, Output))
