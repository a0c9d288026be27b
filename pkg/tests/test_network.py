import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SYNC_RUN, DISORDERED_RUN, net
from swapnet.network import (INITIAL, BudgetExhausted, Channel, ConnectionStatus as CS,
                             FromServer, NetworkState, NewConnection, ToServer,
                             brute_force_reordered, client_transition, network_reordered,
                             server_transition)


def state(**chans):
    return NetworkState({int(k[1:]): v for k, v in chans.items()})


def test_server_transitions():
    pending = state(c1=Channel(CS.PENDING))
    assert server_transition(FromServer(1, 1), pending) is None
    assert server_transition(NewConnection(1), pending).status(1) == CS.ACCEPTED
    assert server_transition(NewConnection(1), INITIAL) is None
    two = state(c1=Channel(CS.ACCEPTED, b"xy"))
    assert server_transition(ToServer(1, ord("x")), two).channel(1).to_server == b"y"
    assert server_transition(ToServer(1, ord("y")), two) is None
    # receiving on a connection the server has not accepted yet is allowed
    assert server_transition(ToServer(1, 7), state(c1=Channel(CS.PENDING, b"\x07"))) is not None


def test_client_transitions():
    assert client_transition(NewConnection(1), INITIAL).status(1) == CS.PENDING
    assert client_transition(NewConnection(1), state(c1=Channel(CS.PENDING))) is None
    sent = client_transition(ToServer(1, 5), state(c1=Channel(CS.PENDING)))
    assert sent.channel(1).to_server == b"\x05"
    assert client_transition(ToServer(1, 5), INITIAL) is None
    waiting = state(c1=Channel(CS.ACCEPTED, b"", b"\x02"))
    assert client_transition(FromServer(1, 3), waiting) is None
    assert client_transition(FromServer(1, 2), waiting).channel(1).from_server == b""


def test_states_compare_by_value():
    a = client_transition(NewConnection(2), client_transition(NewConnection(1), INITIAL))
    b = client_transition(NewConnection(1), client_transition(NewConnection(2), INITIAL))
    assert a == b and hash(a) == hash(b)
    assert a.conns(CS.PENDING) == [1, 2]


def test_synchronous_run_is_reordered_trivially():
    left = net(SYNC_RUN)
    assert network_reordered(left, left)


def test_disordered_run_is_a_reordering_of_the_sync_run():
    assert network_reordered(net(SYNC_RUN), net(DISORDERED_RUN))


def test_same_connection_order_is_preserved():
    ts = net("C1 S1:a F1:xy")
    assert network_reordered(ts, net("C1 S1:a F1:xy"))
    assert not network_reordered(ts, net("C1 S1:a F1:yx"))
    assert not brute_force_reordered(ts, net("C1 S1:a F1:yx"))


def test_empty_and_unaccepted_cases():
    assert network_reordered((), ())
    assert brute_force_reordered((), ())
    assert not network_reordered((FromServer(1, 1),), ())
    assert not brute_force_reordered((FromServer(1, 1),), ())


def test_leftovers_may_stay_in_flight():
    assert network_reordered(net("C1 S1:a"), net("C1 S1:abc"))
    assert network_reordered(net("C1 S1:a F1:z"), net("C1 S1:a"))


def test_budget_is_enforced():
    left = net(SYNC_RUN)
    with pytest.raises(BudgetExhausted):
        network_reordered(left, net(DISORDERED_RUN), budget=3)


def test_brute_force_limit():
    with pytest.raises(ValueError):
        brute_force_reordered(net("C1 S1:abcdefgh"), net("C1 S1:abcdefgh"))


# -- oracle agreement -----------------------------------------------------------------------

EVENTS = [NewConnection(c) for c in (1, 2)] + [
    cls(c, b) for cls in (ToServer, FromServer) for c in (1, 2) for b in (0, 1)]


def random_pair(rng, max_total=8):
    total = rng.randint(0, max_total)
    k = rng.randint(0, total)
    return (tuple(rng.choice(EVENTS) for _ in range(k)),
            tuple(rng.choice(EVENTS) for _ in range(total - k)))


def plausible_pair(rng, max_total=8):
    """Pairs more likely to be related: a server run and a shuffled client view of it."""
    ts, ns = [], INITIAL
    tc = []
    for _ in range(rng.randint(0, max_total)):
        ev = rng.choice(EVENTS)
        client_side = rng.random() < 0.5
        nxt = (client_transition if client_side else server_transition)(ev, ns)
        if nxt is None:
            continue
        (tc if client_side else ts).append(ev)
        ns = nxt
    if tc and rng.random() < 0.3:
        i, j = rng.randrange(len(tc)), rng.randrange(len(tc))
        tc[i], tc[j] = tc[j], tc[i]
    return tuple(ts), tuple(tc)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_network_reordered_agrees_with_brute_force(seed):
    rng = random.Random(seed)
    for ts, tc in (random_pair(rng), plausible_pair(rng)):
        assert network_reordered(ts, tc) == brute_force_reordered(ts, tc)


def test_agreement_is_not_vacuous():
    rng = random.Random(7)
    verdicts = [network_reordered(*plausible_pair(rng)) for _ in range(300)]
    assert any(verdicts) and not all(verdicts)


def test_brute_force_matches_hand_enumeration():
    # Independent restatement for one tiny pair: list all interleavings by hand.
    ts, tc = (NewConnection(1),), (NewConnection(1),)
    orders = [[("s", 0), ("c", 0)], [("c", 0), ("s", 0)]]
    ok = []
    for order in orders:
        ns = INITIAL
        for side, i in order:
            ns = (server_transition if side == "s" else client_transition)(
                (ts if side == "s" else tc)[i], ns)
            if ns is None:
                break
        ok.append(ns is not None)
    assert ok == [False, True]
    assert brute_force_reordered(ts, tc) and network_reordered(ts, tc)
