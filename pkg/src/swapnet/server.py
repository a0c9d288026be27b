"""Single-process, event-driven TCP swap server.

The loop mirrors the buffered design of the model in ``impl_model``: every
connection is a small state machine that is either receiving a fixed-size
request or sending back a reply, and one readiness multiplexer drives all
of them.  Numbered mutants inject plausible C-style bugs for mutation
testing.
"""
from __future__ import annotations

import logging
import os
import selectors
import signal
import socket
import time
from dataclasses import dataclass

from .impl_model import Connection, ConnState
from .swap_spec import DEFAULT_MESSAGE_SIZE, zeros

log = logging.getLogger(__name__)

MUTANTS = {
    1: "stored message initialised to 0xff bytes instead of zeros",
    2: "request considered complete one byte early (off-by-one read length)",
    3: "reply echoes the request instead of the stored message",
    4: "reply sent as soon as the first chunk of a request arrives",
    5: "reply contains the stored message twice",
    6: "reply written to the most recently accepted other connection",
    7: "stored message never updated",
    8: "stored message updated before the reply is captured",
    9: "last byte of every reply dropped",
    10: "after two accepts a new socket overwrites the head connection slot",
    11: "recv returning 0 treated as one byte of data; connection kept",
    12: "request offset not reset after a completed request",
}


def mutant_registry():
    return sorted(MUTANTS.items())


class ConfigError(ValueError):
    pass


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 8421
    message_size: int = DEFAULT_MESSAGE_SIZE
    max_connections: int = 64
    poll_timeout_ms: int = 100
    mutant: int | None = None
    log_effects: str | None = None

    def validate(self):
        if self.message_size < 1:
            raise ConfigError("message size must be at least 1")
        if self.max_connections < 1:
            raise ConfigError("max connections must be at least 1")
        if self.poll_timeout_ms < 0:
            raise ConfigError("poll timeout must be non-negative")
        if self.mutant is not None and self.mutant not in MUTANTS:
            raise ConfigError(f"unknown mutant {self.mutant!r}; known: {sorted(MUTANTS)}")
        return self


class LiveConnection:
    """Socket plus the connection state machine and byte counters."""

    def __init__(self, sock, conn_id, message_size):
        self.sock = sock
        self.conn_id = conn_id
        self.state = ConnState.RECVING
        self.buf = bytearray(message_size)
        self.offset = 0
        self.send_buf = b""
        self.send_sock = sock
        self.replied_early = False
        self.bytes_in = 0
        self.bytes_out = 0

    def record(self) -> Connection:
        return Connection(self.conn_id, self.state, bytes(self.buf[:self.offset]), self.send_buf)

    def __repr__(self):
        return f"LiveConnection({self.conn_id}, {self.state.name}, in={self.bytes_in}, out={self.bytes_out})"


class SwapServer:
    def __init__(self, listener, config: ServerConfig):
        self.config = config.validate()
        self.n = config.message_size
        self.mutant = config.mutant
        self.listener = listener
        listener.setblocking(False)
        self.store = b"\xff" * self.n if self.mutant == 1 else zeros(self.n)
        self.conns: list[LiveConnection] = []
        self.next_id = 1
        self.accepts = 0
        self.orphans = []           # sockets displaced by mutant 10, held open
        self.sel = selectors.DefaultSelector()
        self.sel.register(listener, selectors.EVENT_READ, None)
        self.stopping = False
        self._log = open(config.log_effects, "a", encoding="utf-8") if config.log_effects else None

    # -- effect log ------------------------------------------------------------

    def _emit(self, tag, conn_id, data=None):
        if self._log is None:
            return
        if data is None:
            self._log.write(f"{tag} {conn_id}\n")
        else:
            self._log.writelines(f"{tag} {conn_id} {b:02x}\n" for b in data)

    # -- loop ------------------------------------------------------------------

    def run(self):
        timeout = self.config.poll_timeout_ms / 1000
        try:
            while not self.stopping:
                self.step(timeout)
        finally:
            self.close()

    def step(self, timeout):
        self._sync_interest()
        events = self.sel.select(timeout)
        ready = {key.data for key, _ in events if key.data is not None}
        listener_ready = any(key.data is None for key, _ in events)
        if listener_ready and len(self.conns) < self.config.max_connections:
            self._accept()
        for c in list(self.conns):
            if c in ready:
                self._service(c)
        dead = [c for c in self.conns if c.state == ConnState.DELETED]
        for c in dead:
            self.conns.remove(c)
            self._drop(c)
        if self._log is not None:
            self._log.flush()

    def _sync_interest(self):
        for c in self.conns:
            want = selectors.EVENT_WRITE if c.state == ConnState.SENDING else selectors.EVENT_READ
            key = self.sel.get_key(c.sock)
            if key.events != want:
                self.sel.modify(c.sock, want, c)

    def _accept(self):
        try:
            sock, _ = self.listener.accept()
        except (BlockingIOError, InterruptedError):
            return
        except OSError as exc:
            log.warning("accept failed: %s", exc)
            return
        sock.setblocking(False)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.accepts += 1
        conn_id = self.next_id
        self.next_id += 1
        self._emit("C", conn_id)
        if self.mutant == 10 and self.accepts > 2 and self.conns:
            head = self.conns[0]
            self.sel.unregister(head.sock)
            self.orphans.append(head.sock)
            head.sock = head.send_sock = sock
            self.sel.register(sock, selectors.EVENT_READ, head)
            return
        c = LiveConnection(sock, conn_id, self.n)
        self.conns.insert(0, c)
        self.sel.register(sock, selectors.EVENT_READ, c)

    def _drop(self, c):
        try:
            self.sel.unregister(c.sock)
        except (KeyError, ValueError):
            pass
        c.sock.close()

    # -- per-connection work ---------------------------------------------------

    def _service(self, c):
        if c.state == ConnState.RECVING:
            self._recv(c)
        elif c.state == ConnState.SENDING:
            self._send(c)

    def _recv(self, c):
        n, m = self.n, self.mutant
        want = n - c.offset
        if m == 2:
            want = max(1, n - 1 - c.offset)
        try:
            data = c.sock.recv(want)
        except (BlockingIOError, InterruptedError):
            return
        except OSError:
            c.state = ConnState.DELETED
            return
        if not data:
            if m != 11:
                c.state = ConnState.DELETED
                return
            data = bytes(c.buf[c.offset:c.offset + 1]) or b"\0"
        else:
            self._emit("S", c.conn_id, data)
        c.bytes_in += len(data)
        c.buf[c.offset:c.offset + len(data)] = data
        c.offset += len(data)

        done = c.offset >= (n - 1 if m == 2 else n)
        if not done:
            if m == 4 and not c.replied_early:
                c.replied_early = True
                self._start_reply(c, self.store)
            return
        msg = bytes(c.buf)
        c.offset = n - 1 if m == 12 else 0
        if m == 4 and c.replied_early:
            c.replied_early = False
            self.store = msg
            return
        if m == 8:
            self.store = msg
        reply = {3: msg, 5: self.store + self.store, 9: self.store[:-1]}.get(m, self.store)
        if m not in (7, 8):
            self.store = msg
        self._start_reply(c, reply)

    def _start_reply(self, c, reply):
        c.send_buf = reply
        c.send_sock = c.sock
        if self.mutant == 6:
            others = [o for o in self.conns if o is not c and o.state != ConnState.DELETED]
            if others:
                c.send_sock = others[0].sock
        c.state = ConnState.SENDING if reply else ConnState.RECVING

    def _send(self, c):
        try:
            sent = c.send_sock.send(c.send_buf)
        except (BlockingIOError, InterruptedError):
            return
        except OSError:
            c.state = ConnState.DELETED
            return
        self._emit("F", c.conn_id, c.send_buf[:sent])
        c.bytes_out += sent
        c.send_buf = c.send_buf[sent:]
        if not c.send_buf:
            c.state = ConnState.RECVING

    def close(self):
        for c in self.conns:
            self._drop(c)
        self.conns.clear()
        for s in self.orphans:
            s.close()
        self.sel.close()
        if self._log is not None:
            self._log.close()
            self._log = None


def open_listener(host="127.0.0.1", port=0):
    return socket.create_server((host, port), backlog=128)


def serve_on(listener, config: ServerConfig):
    """Run the loop on an already-bound listener until SIGTERM or SIGINT."""
    server = SwapServer(listener, config)

    def stop(signum, frame):
        server.stopping = True

    old = {s: signal.signal(s, stop) for s in (signal.SIGTERM, signal.SIGINT)}
    try:
        server.run()
    finally:
        for s, h in old.items():
            signal.signal(s, h)


def serve(config: ServerConfig):
    config.validate()
    try:
        listener = open_listener(config.host, config.port)
    except OSError as exc:
        raise ConfigError(f"cannot listen on {config.host}:{config.port}: {exc}") from exc
    host, port = listener.getsockname()[:2]
    log.info("swap server on %s:%d (message size %d, mutant %s)", host, port,
             config.message_size, config.mutant)
    with listener:
        serve_on(listener, config)


class ServerProcess:
    """A forked server on an ephemeral port; use as a context manager."""

    def __init__(self, config: ServerConfig | None = None):
        self.config = (config or ServerConfig(port=0)).validate()
        self.pid = None
        self.addr = None

    def start(self):
        listener = open_listener(self.config.host, self.config.port)
        self.addr = listener.getsockname()[:2]
        pid = os.fork()
        if pid == 0:
            code = 0
            try:
                serve_on(listener, self.config)
            except BaseException:
                code = 1
            finally:
                os._exit(code)
        listener.close()
        self.pid = pid
        return self

    def stop(self, timeout=2.0):
        if self.pid is None:
            return
        try:
            os.kill(self.pid, signal.SIGTERM)
        except ProcessLookupError:
            pass
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            done, _ = os.waitpid(self.pid, os.WNOHANG)
            if done:
                break
            time.sleep(0.005)
        else:
            try:
                os.kill(self.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            try:
                os.waitpid(self.pid, 0)
            except ChildProcessError:
                pass
        self.pid = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

