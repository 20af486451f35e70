"""Command-line entry point: ``streamsafe verify|oracle|bench``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .fixpoint import DEFAULT_BAG_CAP, ResourceExceeded, analyze
from .frontend import FrontendError, parse_program, validate

EXIT_CODES = {"safe": 0, "unsafe": 1, "not-sc": 2, "assertion-violated": 3}
EXIT_USAGE = 64
EXIT_RESOURCE = 65

TABLE_HEADER = ("Program", "LOC", "Streaming-coherent?", "Found Safe", "# States", "Time (ms)")


def count_loc(text: str) -> int:
    """Non-blank lines that are not pure comments."""
    n = 0
    for line in text.splitlines():
        s = line.strip()
        if s and not s.startswith("#") and not s.startswith("//"):
            n += 1
    return n


def load(path) -> tuple:
    text = Path(path).read_text(encoding="utf-8")
    prog = parse_program(text)
    validate(prog, prog.spec)
    return prog, text


def report_for(path, *, bag_cap: int = DEFAULT_BAG_CAP, invariants: bool = False) -> dict:
    """Analyze one file and build its JSON report.

    Raises ``FrontendError`` for bad input and ``ResourceExceeded`` when the
    bag cap is hit.
    """
    prog, text = load(path)
    t0 = time.perf_counter()
    v = analyze(prog, prog.spec, bag_cap=bag_cap)
    ms = (time.perf_counter() - t0) * 1000
    rep = {
        "file": str(path),
        "verdict": v.kind,
        "streaming_coherent": v.kind != "not-sc",
        "found_safe": v.kind == "safe",
        "states": v.states,
        "time_ms": round(ms, 3),
    }
    if v.kind in ("unsafe", "assertion-violated"):
        rep["counterexample"] = list(v.trace)
    elif v.kind == "not-sc":
        rep["trace"] = list(v.trace)
        rep["letter"] = v.letter
    if invariants and v.kind == "safe":
        rep["invariants"] = [inv.to_json() for inv in v.invariants]
    rep["loc"] = count_loc(text)
    rep["expect"] = prog.expect
    rep["detail"] = v.detail
    return rep


def _cell(rep: dict, col: str) -> str:
    if col == "Program":
        return Path(rep["file"]).stem
    if col == "LOC":
        return str(rep.get("loc", ""))
    if "error" in rep:
        return "error" if col == "Streaming-coherent?" else "---"
    if col == "Streaming-coherent?":
        return "yes" if rep["streaming_coherent"] else "no"
    if col == "Found Safe":
        if not rep["streaming_coherent"]:
            return "---"
        return "yes" if rep["found_safe"] else "no"
    if col == "# States":
        return str(rep["states"]) if rep["found_safe"] else "---"
    return f"{rep['time_ms']:.1f}"


def format_table(reports: list) -> str:
    rows = [TABLE_HEADER] + [tuple(_cell(r, c) for c in TABLE_HEADER) for r in reports]
    widths = [max(len(r[i]) for r in rows) for i in range(len(TABLE_HEADER))]
    lines = []
    for j, row in enumerate(rows):
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells))
        if j == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines)


def _text_report(rep: dict) -> str:
    out = [f"{rep['file']}: {rep['verdict']}"]
    if rep.get("detail"):
        out.append(f"  {rep['detail']}")
    if rep["verdict"] == "safe":
        out.append(f"  live states at exit: {rep['states']}")
    for key, title in (("counterexample", "counterexample"), ("trace", "trace")):
        if key in rep:
            out.append(f"  {title}:")
            out.extend(f"    {l}" for l in rep[key])
    if "letter" in rep:
        out.append(f"  offending letter: {rep['letter']}")
    for inv in rep.get("invariants", []):
        out.append(f"  loop {inv['index']} while ({inv['loop']}):")
        for d in inv["disjuncts"]:
            out.append("    | " + " & ".join(d))
    out.append(f"  time: {rep['time_ms']:.1f} ms")
    return "\n".join(out)


def cmd_verify(args) -> int:
    try:
        rep = report_for(args.path, bag_cap=args.bag_cap, invariants=args.emit_invariants)
    except (FrontendError, OSError) as e:
        print(f"error: {args.path}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ResourceExceeded as e:
        print(f"resource-exceeded: {args.path}: {e}", file=sys.stderr)
        return EXIT_RESOURCE
    if args.format == "json":
        print(json.dumps(rep, indent=2))
    else:
        print(_text_report(rep))
    return EXIT_CODES[rep["verdict"]]


def cmd_oracle(args) -> int:
    from .differential import program_oracle

    try:
        prog, _ = load(args.path)
    except (FrontendError, OSError) as e:
        print(f"error: {args.path}: {e}", file=sys.stderr)
        return EXIT_USAGE
    rep = program_oracle(prog, prog.spec, max_heap=args.max_heap, trials=args.trials,
                         seed=args.seed)
    data = {"file": args.path, **rep.to_json()}
    if args.format == "json":
        print(json.dumps(data, indent=2))
    else:
        print(f"{args.path}: {len(rep.discrepancies)} discrepancies in {rep.trials} trials "
              f"over {rep.heaps} heaps")
        for n in rep.notes:
            print(f"  note: {n}")
        for d in rep.discrepancies[:5]:
            print(f"  {d['kind']}: {' ; '.join(d['trace'])}")
    if not rep.coherent:
        return EXIT_CODES["not-sc"]
    return 0 if rep.ok else 1


def cmd_bench(args) -> int:
    files = sorted(Path(args.corpus_dir).glob("*.prog"))
    reports, agree = [], 0
    for f in files:
        try:
            rep = report_for(f, bag_cap=args.bag_cap, invariants=args.emit_invariants)
        except (FrontendError, ResourceExceeded) as e:
            rep = {"file": str(f), "error": str(e), "loc": None, "expect": None}
        if rep.get("expect") and rep.get("verdict") == rep["expect"]:
            agree += 1
        reports.append(rep)
    counts = {}
    for r in reports:
        k = r.get("verdict", "error")
        counts[k] = counts.get(k, 0) + 1
    summary = {"files": len(reports), "counts": counts, "agree_with_expect": agree}
    if args.format == "json":
        print(json.dumps({"reports": reports, "summary": summary}, indent=2))
    else:
        if reports:
            print(format_table(reports))
        print(f"\n{len(reports)} files: " + ", ".join(f"{v} {k}" for k, v in sorted(counts.items()))
              + f"; {agree}/{len(reports)} match their @expect header")
    if args.json_out:
        Path(args.json_out).write_text(json.dumps({"reports": reports, "summary": summary},
                                                  indent=2), encoding="utf-8")
    return 0 if agree == len(reports) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="streamsafe",
                                description="Memory-safety verifier for single-pass heap programs.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="analyze one program")
    v.add_argument("path")
    v.add_argument("--format", choices=("text", "json"), default="text")
    v.add_argument("--bag-cap", type=int, default=DEFAULT_BAG_CAP)
    v.add_argument("--emit-invariants", action="store_true")
    v.set_defaults(func=cmd_verify)

    o = sub.add_parser("oracle", help="compare the analysis with concrete heaps")
    o.add_argument("path")
    o.add_argument("--format", choices=("text", "json"), default="text")
    o.add_argument("--max-heap", type=int, default=5)
    o.add_argument("--trials", type=int, default=1000)
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_oracle)

    b = sub.add_parser("bench", help="run every .prog file of a directory")
    b.add_argument("corpus_dir")
    b.add_argument("--format", choices=("text", "json"), default="text")
    b.add_argument("--bag-cap", type=int, default=DEFAULT_BAG_CAP)
    b.add_argument("--emit-invariants", action="store_true")
    b.add_argument("--json-out", default="bench-report.json",
                   help="where to write the JSON rows ('' to skip)")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else 0
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
