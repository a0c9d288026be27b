"""Text formats: network traces and scripted-oracle replay files.

Trace lines::

    C <conn>          NewConnection
    S <conn> <hex2>   ToServer byte
    F <conn> <hex2>   FromServer byte

Script lines (one effect response each, consumed by ``impl_model.interpret``)::

    or 0|1
    choose <index>
    accept <conn>|none
    recv <hex>|eof|fail
    send <count>|fail

In both formats ``#`` starts a comment and blank lines are ignored.
"""
from __future__ import annotations

from .impl_model import FAILURE
from .network import FromServer, NewConnection, ToServer


class TraceFormatError(ValueError):
    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def _lines(text):
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _conn(lineno, tok):
    if not tok.isdigit():
        raise TraceFormatError(lineno, f"bad connection id {tok!r}")
    return int(tok)


def _byte(lineno, tok):
    if len(tok) != 2:
        raise TraceFormatError(lineno, f"expected two hex digits, got {tok!r}")
    try:
        return int(tok, 16)
    except ValueError:
        raise TraceFormatError(lineno, f"bad hex byte {tok!r}") from None


def parse_trace(text: str) -> tuple:
    out = []
    for lineno, toks in _lines(text):
        tag, args = toks[0], toks[1:]
        if tag == "C" and len(args) == 1:
            out.append(NewConnection(_conn(lineno, args[0])))
        elif tag in ("S", "F") and len(args) == 2:
            cls = ToServer if tag == "S" else FromServer
            out.append(cls(_conn(lineno, args[0]), _byte(lineno, args[1])))
        else:
            raise TraceFormatError(lineno, f"unrecognised event {' '.join(toks)!r}")
    return tuple(out)


def render_event(ev) -> str:
    if isinstance(ev, NewConnection):
        return f"C {ev.conn}"
    tag = "S" if isinstance(ev, ToServer) else "F"
    return f"{tag} {ev.conn} {ev.byte:02x}"


def render_trace(trace, header: str | None = None) -> str:
    lines = [f"# {h}" for h in header.splitlines()] if header else []
    lines.extend(render_event(ev) for ev in trace)
    return "".join(line + "\n" for line in lines)


def read_trace(path) -> tuple:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh.read())


def write_trace(path, trace, header=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_trace(trace, header))


def parse_script(text: str) -> list:
    """Parse a replay file into ``(kind, response)`` pairs."""
    out = []
    for lineno, toks in _lines(text):
        if len(toks) != 2:
            raise TraceFormatError(lineno, f"expected '<kind> <value>', got {' '.join(toks)!r}")
        kind, arg = toks
        if kind in ("or", "choose"):
            if not arg.isdigit():
                raise TraceFormatError(lineno, f"bad index {arg!r}")
            out.append((kind, int(arg)))
        elif kind == "accept":
            out.append((kind, None if arg == "none" else _conn(lineno, arg)))
        elif kind == "recv":
            if arg == "fail":
                out.append((kind, FAILURE))
            elif arg == "eof":
                out.append((kind, b""))
            else:
                try:
                    out.append((kind, bytes.fromhex(arg)))
                except ValueError:
                    raise TraceFormatError(lineno, f"bad hex payload {arg!r}") from None
        elif kind == "send":
            if arg == "fail":
                out.append((kind, FAILURE))
            elif arg.isdigit():
                out.append((kind, int(arg)))
            else:
                raise TraceFormatError(lineno, f"bad send count {arg!r}")
        else:
            raise TraceFormatError(lineno, f"unknown effect kind {kind!r}")
    return out


def render_script(script) -> str:
    lines = []
    for kind, value in script:
        if value is FAILURE:
            arg = "fail"
        elif kind == "accept":
            arg = "none" if value is None else str(value)
        elif kind == "recv":
            arg = value.hex() if value else "eof"
        else:
            arg = str(value)
        lines.append(f"{kind} {arg}\n")
    return "".join(lines)
