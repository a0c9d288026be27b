import socket
import time

import pytest

from swapnet.network import FromServer, NewConnection, ToServer
from swapnet.refinement import Accepted, server_trace_in_model, spec_behavior_member
from swapnet.server import (MUTANTS, ConfigError, ServerConfig, ServerProcess, SwapServer,
                            mutant_registry, open_listener)
from swapnet.traceio import read_trace


def recv_exact(sock, n, timeout=2.0):
    sock.settimeout(timeout)
    out = b""
    try:
        while len(out) < n:
            chunk = sock.recv(n - len(out))
            if not chunk:
                break
            out += chunk
    except socket.timeout:
        pass
    return out


def swap(addr, msg, chunks=None):
    with socket.create_connection(addr) as s:
        for part in chunks or [msg]:
            s.sendall(part)
            time.sleep(0.01)
        return recv_exact(s, len(msg))


def test_three_client_session():
    with ServerProcess(ServerConfig(port=0)) as srv:
        assert [swap(srv.addr, m) for m in (b"abc", b"def", b"ghi")] == [b"\0\0\0", b"abc", b"def"]


def test_chunked_request_gets_the_right_reply():
    with ServerProcess(ServerConfig(port=0)) as srv:
        assert swap(srv.addr, b"abc", [b"a", b"b", b"c"]) == b"\0\0\0"
        assert swap(srv.addr, b"xyz", [b"xy", b"z"]) == b"abc"


def test_interleaved_clients_never_block_each_other():
    with ServerProcess(ServerConfig(port=0)) as srv:
        a = socket.create_connection(srv.addr)
        b = socket.create_connection(srv.addr)
        trace = [NewConnection(1), NewConnection(2)]
        for sock, c, part in ((a, 1, b"ab"), (b, 2, b"de"), (b, 2, b"f"), (a, 1, b"c")):
            sock.sendall(part)
            trace += [ToServer(c, x) for x in part]
            time.sleep(0.02)
        rb = recv_exact(b, 3)
        ra = recv_exact(a, 3)
        trace += [FromServer(2, x) for x in rb] + [FromServer(1, x) for x in ra]
        a.close()
        b.close()
    assert rb == b"\0\0\0" and ra == b"def"
    assert isinstance(spec_behavior_member(trace), Accepted)


def test_client_close_only_drops_that_connection():
    with ServerProcess(ServerConfig(port=0)) as srv:
        gone = socket.create_connection(srv.addr)
        gone.sendall(b"ab")
        gone.close()
        assert swap(srv.addr, b"xyz") == b"\0\0\0"


def test_logged_effects_are_a_model_behaviour(tmp_path):
    log = tmp_path / "effects.trace"
    with ServerProcess(ServerConfig(port=0, log_effects=str(log))) as srv:
        a = socket.create_connection(srv.addr)
        b = socket.create_connection(srv.addr)
        a.sendall(b"a")
        time.sleep(0.02)
        b.sendall(b"xyz")
        assert recv_exact(b, 3) == b"\0\0\0"
        a.sendall(b"bc")
        assert recv_exact(a, 3) == b"xyz"
        a.close()
        b.close()
        time.sleep(0.05)
    ts = read_trace(log)
    assert sum(isinstance(e, FromServer) for e in ts) == 6
    assert server_trace_in_model(ts)


def test_registry_and_config_validation():
    assert [m for m, _ in mutant_registry()] == list(range(1, 13))
    assert all(MUTANTS[m] for m in MUTANTS)
    with pytest.raises(ConfigError):
        ServerConfig(mutant=99).validate()
    with pytest.raises(ConfigError):
        ServerConfig(message_size=0).validate()
    with pytest.raises(ConfigError):
        ServerConfig(max_connections=0).validate()


def test_accepts_at_most_one_connection_per_iteration():
    listener = open_listener()
    server = SwapServer(listener, ServerConfig(port=0))
    clients = [socket.create_connection(listener.getsockname()) for _ in range(3)]
    time.sleep(0.05)
    server.step(0.1)
    assert len(server.conns) == 1
    server.step(0.1)
    server.step(0.1)
    assert [c.conn_id for c in server.conns] == [3, 2, 1]
    assert server.conns[0].record().state.name == "RECVING"
    for c in clients:
        c.close()
    server.close()
    listener.close()


@pytest.mark.parametrize("mutant,replies", [
    (None, [b"\0\0\0", b"abc"]),
    (1, [b"\xff\xff\xff", b"abc"]),
    (3, [b"abc", b"def"]),
    (7, [b"\0\0\0", b"\0\0\0"]),
    (8, [b"abc", b"def"]),
    (9, [b"\0\0", b"ab"]),
])
def test_mutant_replies_on_one_connection(mutant, replies):
    with ServerProcess(ServerConfig(port=0, mutant=mutant)) as srv:
        with socket.create_connection(srv.addr) as s:
            got = []
            for msg in (b"abc", b"def"):
                s.sendall(msg)
                got.append(recv_exact(s, 3, timeout=0.3))
    assert got == replies


def test_mutant_five_doubles_the_reply():
    with ServerProcess(ServerConfig(port=0, mutant=5)) as srv:
        with socket.create_connection(srv.addr) as s:
            s.sendall(b"abc")
            assert recv_exact(s, 6) == b"\0" * 6


def test_mutant_twelve_keeps_the_offset():
    with ServerProcess(ServerConfig(port=0, mutant=12)) as srv:
        with socket.create_connection(srv.addr) as s:
            s.sendall(b"abc")
            assert recv_exact(s, 3) == b"\0\0\0"
            s.sendall(b"d")
            assert recv_exact(s, 3) == b"abc"      # "abd" completed after one byte


def test_mutant_four_replies_early():
    with ServerProcess(ServerConfig(port=0, mutant=4)) as srv:
        with socket.create_connection(srv.addr) as s:
            s.sendall(b"a")
            assert recv_exact(s, 3, timeout=1.0) == b"\0\0\0"
