"""Command-line entry point: ``python -m swapnet {serve,test,check,model-refine,mutants}``.

Exit codes: 0 pass, 1 counterexample, 2 usage or parse error, 3 search budget exceeded.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import traceio
from .impl_model import MODEL_MUTANTS
from .refinement import (ANY_INITIAL, DEFAULT_BUDGET, Accepted, BudgetExceeded,
                         network_refines_bounded, spec_behavior_member)
from .server import MUTANTS, ConfigError, ServerConfig, serve
from .tester import (AddressTarget, ForkedServerTarget, Limits, ModelTarget, mutation_campaign,
                     run_tests)

EXIT_OK, EXIT_COUNTEREXAMPLE, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2, 3


def _env(name, default):
    return os.environ.get("SWAP_" + name, default)


def _seed_range(text):
    lo, sep, hi = text.partition("..")
    try:
        a = int(lo)
        b = int(hi) if sep else a
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}") from None
    if b < a:
        raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
    return range(a, b + 1)


def _addr(text):
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def _conn_ids(text):
    try:
        ids = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ids, got {text!r}") from None
    if not ids:
        raise argparse.ArgumentTypeError("need at least one connection id")
    return ids


def build_parser():
    p = argparse.ArgumentParser(prog="swapnet", description=__doc__.splitlines()[0],
                                epilog="Flags of 'serve' may also be set through SWAP_* "
                                       "environment variables, e.g. SWAP_PORT=9000.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("serve", help="run the swap server")
    s.add_argument("--host", default=_env("HOST", "127.0.0.1"))
    s.add_argument("--port", type=int, default=int(_env("PORT", 8421)))
    s.add_argument("--message-size", type=int, default=int(_env("MESSAGE_SIZE", 3)))
    s.add_argument("--max-conns", type=int, default=int(_env("MAX_CONNS", 64)))
    s.add_argument("--poll-timeout", type=int, default=int(_env("POLL_TIMEOUT", 100)),
                   help="readiness poll timeout in milliseconds")
    mutant = _env("MUTANT", None)
    s.add_argument("--mutant", type=int, default=int(mutant) if mutant else None,
                   help="inject a numbered bug (see 'mutants')")
    s.add_argument("--log-effects", default=_env("LOG_EFFECTS", None), metavar="PATH",
                   help="append the server-side network trace to PATH")

    t = sub.add_parser("test", help="random scenarios against the server or the model")
    t.add_argument("--target", choices=("tcp", "model"), default="tcp")
    t.add_argument("--addr", type=_addr, default=None,
                   help="running server; without it a fresh server is forked per scenario")
    t.add_argument("--seeds", type=_seed_range, default=range(0, 100), metavar="A..B")
    t.add_argument("--mutant", default=None,
                   help="server mutant number (tcp) or model mutant name (model)")
    t.add_argument("--message-size", type=int, default=3)
    t.add_argument("--budget", type=int, default=DEFAULT_BUDGET, help="search budget per trace")
    t.add_argument("--time-budget", type=float, default=None, metavar="SECONDS")
    t.add_argument("--reply-timeout", type=float, default=2.0, metavar="SECONDS")
    t.add_argument("--report", default=None, metavar="PATH", help="write a JSON report")
    t.add_argument("--out", default=None, metavar="PATH", help="write the shrunk failing trace")
    t.add_argument("--no-shrink", action="store_true")
    t.add_argument("--campaign", action="store_true",
                   help="run every server mutant until killed (seeds give the budget)")

    c = sub.add_parser("check", help="check a client-side trace file against the linear swap server")
    c.add_argument("file")
    c.add_argument("--message-size", type=int, default=3)
    c.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    c.add_argument("--any-initial", action="store_true",
                   help="do not assume the stored message starts as zeros")

    m = sub.add_parser("model-refine", help="bounded exhaustive check of the model against the linear spec")
    m.add_argument("--depth", type=int, default=8)
    m.add_argument("--alphabet", default="ab")
    m.add_argument("--conn-ids", type=_conn_ids, default=(1, 2))
    m.add_argument("--message-size", type=int, default=1)
    m.add_argument("--mutant", choices=sorted(MODEL_MUTANTS), default=None)
    m.add_argument("--budget", type=int, default=DEFAULT_BUDGET)

    sub.add_parser("mutants", help="list server and model mutants")
    return p


def cmd_serve(args):
    config = ServerConfig(args.host, args.port, args.message_size, args.max_conns,
                          args.poll_timeout, args.mutant, args.log_effects)
    try:
        config.validate()
    except ConfigError as exc:
        print(f"swapnet serve: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        serve(config)
    except ConfigError as exc:
        print(f"swapnet serve: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def _print_report(report):
    print(f"{report.target}: {report.scenarios_run} scenarios, {report.accepted} accepted, "
          f"{report.rejected} rejected, {report.discarded} discarded, "
          f"{report.budget_exceeded} over budget, {report.inconclusive} inconclusive "
          f"({report.seconds:.1f}s)")


def cmd_test(args):
    if args.mutant is not None and args.target == "tcp":
        try:
            mutant = int(args.mutant)
        except ValueError:
            mutant = None
        if mutant not in MUTANTS:
            print(f"swapnet test: unknown server mutant {args.mutant!r}", file=sys.stderr)
            return EXIT_USAGE
    elif args.mutant is not None and args.mutant not in MODEL_MUTANTS:
        print(f"swapnet test: unknown model mutant {args.mutant!r}", file=sys.stderr)
        return EXIT_USAGE
    else:
        mutant = args.mutant
    limits = Limits(message_size=args.message_size)

    if args.campaign:
        results = mutation_campaign(
            lambda mm: ForkedServerTarget(mm, args.reply_timeout), max_scenarios=len(args.seeds),
            time_budget=args.time_budget or 300.0, seed0=args.seeds.start, limits=limits,
            budget=args.budget)
        for r in results:
            status = f"killed by scenario {r.scenarios} (seed {r.seed})" if r.killed else "survived"
            print(f"mutant {r.mutant:2d}: {status}; {r.discarded} discarded; "
                  f"{r.seconds:.2f}s  [{r.description}]")
        return EXIT_OK if all(r.killed for r in results) else EXIT_COUNTEREXAMPLE

    if args.target == "model":
        target = ModelTarget(mutant)
    elif args.addr is not None:
        target = AddressTarget(args.addr, args.reply_timeout)
    else:
        target = ForkedServerTarget(mutant, args.reply_timeout)
    report = run_tests(target, args.seeds, limits, args.budget, args.time_budget,
                       do_shrink=not args.no_shrink)
    _print_report(report)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report.dumps() + "\n")
    if report.counterexample is not None:
        cx = report.counterexample
        trace_text = cx.get("shrunk_trace", cx["trace"])
        print(f"counterexample from seed {cx['seed']}:")
        print(trace_text, end="")
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(f"# counterexample, seed {cx['seed']}\n" + trace_text)
        return EXIT_COUNTEREXAMPLE
    if report.budget_exceeded:
        return EXIT_BUDGET
    return EXIT_OK


def cmd_check(args):
    try:
        trace = traceio.read_trace(args.file)
    except OSError as exc:
        print(f"swapnet check: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except traceio.TraceFormatError as exc:
        print(f"swapnet check: {args.file}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    verdict = spec_behavior_member(trace, args.message_size, args.budget,
                                   initial=ANY_INITIAL if args.any_initial else None)
    if isinstance(verdict, Accepted):
        print("accepted; witness:")
        print(traceio.render_trace(verdict.witness), end="")
        return EXIT_OK
    if isinstance(verdict, BudgetExceeded):
        print(f"inconclusive: search budget exceeded after {verdict.explored} states")
        return EXIT_BUDGET
    print("rejected; shortest unexplainable prefix:")
    print(traceio.render_trace(verdict.counterexample), end="")
    return EXIT_COUNTEREXAMPLE


def cmd_model_refine(args):
    alphabet = args.alphabet.encode("latin-1")
    if not alphabet or args.depth < 0 or args.message_size < 1:
        print("swapnet model-refine: need a non-empty alphabet, depth >= 0, message size >= 1",
              file=sys.stderr)
        return EXIT_USAGE
    res = network_refines_bounded(args.depth, alphabet, args.conn_ids, args.message_size,
                                  args.mutant, args.budget)
    if res.status == "holds":
        print(f"holds for all client traces up to {args.depth} events "
              f"({res.explored} product states)")
        return EXIT_OK
    if res.status == "budget-exceeded":
        print(f"inconclusive: budget exceeded after {res.explored} product states")
        return EXIT_BUDGET
    print(f"counterexample ({len(res.counterexample)} events):")
    print(traceio.render_trace(res.counterexample), end="")
    return EXIT_COUNTEREXAMPLE


def cmd_mutants(args):
    for num, desc in sorted(MUTANTS.items()):
        print(f"server {num:2d}  {desc}")
    for name, desc in sorted(MODEL_MUTANTS.items()):
        print(f"model  {name:8s}{desc}")
    return EXIT_OK


COMMANDS = {"serve": cmd_serve, "test": cmd_test, "check": cmd_check,
            "model-refine": cmd_model_refine, "mutants": cmd_mutants}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except ValueError as exc:       # bad SWAP_* value
        print(f"swapnet: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return COMMANDS[args.cmd](args)


if __name__ == "__main__":
    sys.exit(main())
