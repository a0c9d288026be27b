import os
import socket
import subprocess
import sys
import time

import pytest

from conftest import SYNC_RUN, DISORDERED_RUN, net
from swapnet.cli import build_parser, main
from swapnet.traceio import TraceFormatError, parse_trace, read_trace, render_trace, write_trace


def test_parser_defaults_and_ranges():
    args = build_parser().parse_args(["test", "--seeds", "5..9"])
    assert args.seeds == range(5, 10) and args.target == "tcp"
    assert build_parser().parse_args(["test", "--seeds", "7"]).seeds == range(7, 8)
    for bad in (["test", "--seeds", "9..5"], ["test", "--addr", "nohost"], ["frobnicate"]):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(bad)
        assert exc.value.code == 2


def test_env_overrides_serve_defaults(monkeypatch):
    monkeypatch.setenv("SWAP_PORT", "9123")
    monkeypatch.setenv("SWAP_MUTANT", "4")
    args = build_parser().parse_args(["serve"])
    assert args.port == 9123 and args.mutant == 4
    assert build_parser().parse_args(["serve", "--port", "1"]).port == 1
    monkeypatch.setenv("SWAP_PORT", "lots")
    assert main(["mutants"]) == 2


def test_trace_format_round_trip(tmp_path):
    tr = net(DISORDERED_RUN)
    assert parse_trace(render_trace(tr)) == tr
    path = tmp_path / "t.trace"
    write_trace(path, tr, header="observed")
    assert read_trace(path) == tr
    with pytest.raises(TraceFormatError) as exc:
        parse_trace("C 1\nS 1 zz\n")
    assert exc.value.lineno == 2


def test_check_accepts_the_disordered_run(tmp_path, capsys):
    path = tmp_path / "right.trace"
    write_trace(path, net(DISORDERED_RUN))
    assert main(["check", str(path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("accepted")
    assert parse_trace(out.split("\n", 1)[1]) == net(SYNC_RUN)


def test_check_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.trace"
    write_trace(bad, net("C1 S1:abc F1:xyz"))
    assert main(["check", str(bad)]) == 1
    assert main(["check", str(bad), "--any-initial"]) == 0
    garbled = tmp_path / "garbled.trace"
    garbled.write_text("X 1\n")
    assert main(["check", str(garbled)]) == 2
    assert main(["check", str(tmp_path / "missing")]) == 2
    right = tmp_path / "right.trace"
    write_trace(right, net(DISORDERED_RUN))
    assert main(["check", str(right), "--budget", "1"]) == 3
    empty = tmp_path / "empty.trace"
    empty.write_text("")
    assert main(["check", str(empty)]) == 0
    capsys.readouterr()


def test_test_single_seed_against_the_server(capsys):
    assert main(["test", "--seeds", "0..0", "--reply-timeout", "0.5"]) == 0
    assert "1 scenarios" in capsys.readouterr().out


def test_test_finds_and_writes_a_counterexample(tmp_path, capsys):
    out, report = tmp_path / "cx.trace", tmp_path / "report.json"
    code = main(["test", "--mutant", "1", "--seeds", "0..20", "--reply-timeout", "0.5",
                 "--out", str(out), "--report", str(report)])
    assert code == 1
    assert read_trace(out)
    assert '"rejected": 1' in report.read_text()
    assert "counterexample from seed" in capsys.readouterr().out


def test_test_against_the_model(capsys):
    assert main(["test", "--target", "model", "--seeds", "0..30"]) == 0
    assert main(["test", "--target", "model", "--mutant", "echo", "--seeds", "0..30"]) == 1
    assert main(["test", "--target", "model", "--mutant", "bogus"]) == 2
    assert main(["test", "--mutant", "99"]) == 2
    capsys.readouterr()


def test_model_refine(capsys):
    assert main(["model-refine", "--depth", "4"]) == 0
    assert main(["model-refine", "--depth", "6", "--mutant", "no_swap"]) == 1
    assert "counterexample" in capsys.readouterr().out
    assert main(["model-refine", "--depth", "6", "--budget", "3"]) == 3
    assert main(["model-refine", "--alphabet", ""]) == 2


def test_mutants_listing(capsys):
    assert main(["mutants"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert sum(line.startswith("server") for line in lines) == 12
    assert sum(line.startswith("model") for line in lines) == 2


def test_serve_rejects_unknown_mutant(capsys):
    assert main(["serve", "--mutant", "99"]) == 2
    capsys.readouterr()


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_serve_subprocess_answers_three_clients():
    port = free_port()
    env = dict(os.environ, SWAP_PORT=str(port))
    proc = subprocess.Popen([sys.executable, "-m", "swapnet", "serve"], env=env,
                            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    try:
        deadline = time.monotonic() + 10
        while True:
            try:
                socket.create_connection(("127.0.0.1", port), timeout=1).close()
                break
            except OSError:
                assert time.monotonic() < deadline, "server did not come up"
                time.sleep(0.05)
        replies = []
        for msg in (b"abc", b"def", b"ghi"):
            with socket.create_connection(("127.0.0.1", port), timeout=2) as s:
                s.sendall(msg)
                got = b""
                while len(got) < 3:
                    chunk = s.recv(3 - len(got))
                    if not chunk:
                        break
                    got += chunk
                replies.append(got)
        # the first probe connection was accepted and closed without a message
        assert replies == [b"\0\0\0", b"abc", b"def"]
    finally:
        proc.terminate()
        assert proc.wait(timeout=5) == 0
