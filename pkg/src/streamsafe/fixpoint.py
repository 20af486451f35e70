"""Whole-program analysis: push bags of automaton states through the program.

Statements are interpreted structurally.  Branches split the bag along the
guard alternatives and rejoin by union; loops iterate guard and body until
the bag at the loop head stops growing, which must happen because the state
space is finite.  The first unsafe, non-coherent or assertion-failing
transition stops the analysis; the reported trace is then a shortest such
word, found by breadth-first search over (control node, state) pairs.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .automaton import (AnalysisState, Infeasible, NotStreamingCoherent, Unsafe, facts,
                        initial_state, step_with_coherence)
from .frontend import (LETTER_TYPES, AssertFalse, Guard, If, Not, Program, ReachSpec, Seq,
                       Skip, ValidatedProgram, While, lower_to_cfa, nnf_guards, validate)

DEFAULT_BAG_CAP = 100_000


class ResourceExceeded(RuntimeError):
    """The bag at some program point outgrew the configured cap."""


@dataclass
class Verdict:
    kind: str                      # safe | unsafe | not-sc | assertion-violated
    trace: list = field(default_factory=list)
    letter: str | None = None      # offending letter for not-sc
    detail: str = ""
    invariants: list = field(default_factory=list)
    states: int = 0                # live states at program exit
    states_explored: int = 0
    max_bag: int = 0

    @property
    def safe(self) -> bool:
        return self.kind == "safe"


@dataclass
class Invariant:
    loop: str                      # loop condition text
    line: int                      # ordinal of the loop in the program text
    disjuncts: list                # one conjunction (list of facts) per state

    def to_json(self) -> dict:
        return {"loop": self.loop, "index": self.line, "disjuncts": self.disjuncts}


class _Flag(Exception):
    def __init__(self, kind, outcome=None):
        super().__init__(kind)
        self.kind, self.outcome = kind, outcome


def _prepare(program, spec):
    if isinstance(program, ValidatedProgram):
        return program.program, spec or program.spec
    if isinstance(program, Program):
        spec = spec or program.spec
        return validate(program, spec).program, spec
    raise TypeError("expected a Program")


class _Runner:
    def __init__(self, program: Program, spec: ReachSpec, cap: int, assertions: bool):
        self.program, self.spec = program, spec
        self.cap, self.assertions = cap, assertions
        self.heads = {}           # id(while) -> set of states
        self.loops = []           # while nodes in textual order
        self.explored = set()
        self.max_bag = 0

    def note(self, bag):
        self.explored |= bag
        if len(bag) > self.max_bag:
            self.max_bag = len(bag)
        if len(bag) > self.cap:
            raise ResourceExceeded(f"bag of {len(bag)} states exceeds cap {self.cap}")
        return bag

    def letter(self, bag, l):
        if isinstance(l, Skip):
            return bag
        if isinstance(l, AssertFalse):
            if self.assertions and bag:
                raise _Flag("assertion-violated")
            return set()
        out = set()
        for s in bag:
            s2 = step_with_coherence(s, l)
            if isinstance(s2, AnalysisState):
                out.add(s2)
            elif isinstance(s2, Unsafe):
                raise _Flag("unsafe", s2)
            elif isinstance(s2, NotStreamingCoherent):
                raise _Flag("not-sc", s2)
        return self.note(out)

    def guard(self, bag, cond, positive=True):
        out = set()
        for branch in nnf_guards(cond, positive):
            b = bag
            for l in branch:
                b = self.letter(b, l)
            out |= b
        return out

    def stmt(self, bag, s):
        if not bag:
            return bag
        if isinstance(s, LETTER_TYPES):
            return self.letter(bag, s)
        if isinstance(s, Seq):
            for item in s.items:
                bag = self.stmt(bag, item)
            return bag
        if isinstance(s, If):
            a = self.stmt(self.guard(bag, s.cond), s.then)
            b = self.stmt(self.guard(bag, s.cond, False), s.orelse)
            return self.note(a | b)
        if isinstance(s, Guard):
            return self.guard(bag, s.cond)
        if isinstance(s, While):
            if id(s) not in self.heads:
                self.heads[id(s)] = set()
                self.loops.append(s)
            head, out = loop_fixpoint(bag, s.cond, s.body, self)
            self.heads[id(s)] |= head
            return out
        raise TypeError(f"unknown statement {s!r}")


def loop_fixpoint(bag, cond, body, runner: _Runner | None = None):
    """Least fixpoint of guard-then-body from ``bag``.

    Returns ``(head, exit)``: every state seen at the loop head, and those
    states filtered through the negated guard.
    """
    runner = runner or _Runner(None, None, DEFAULT_BAG_CAP, False)
    head = set(bag)
    frontier = set(bag)
    while frontier:
        after = runner.stmt(runner.guard(frontier, cond), body)
        frontier = after - head
        head |= frontier
        runner.note(head)
    return head, runner.guard(head, cond, False)


def _loop_invariants(runner: _Runner) -> list:
    out = []
    for i, loop in enumerate(runner.loops):
        states = sorted(runner.heads[id(loop)], key=lambda s: sorted(facts(s)))
        out.append(Invariant(str(loop.cond), i, [facts(s) for s in states]))
    return out


def analyze(program, spec: ReachSpec | None = None, *, bag_cap: int = DEFAULT_BAG_CAP,
            assertions: bool = True) -> Verdict:
    """Memory-safety (and assertion) verdict for a program."""
    prog, spec = _prepare(program, spec)
    runner = _Runner(prog, spec, bag_cap, assertions)
    q0 = initial_state(spec, prog.signature)
    try:
        final = runner.stmt(runner.note({q0}), prog.body)
    except _Flag:
        return shortest_counterexample(prog, spec, assertions=assertions)
    return Verdict("safe", invariants=_loop_invariants(runner), states=len(final),
                   states_explored=len(runner.explored), max_bag=runner.max_bag)


def check_assertions(program, spec: ReachSpec | None = None, **kw) -> Verdict:
    return analyze(program, spec, assertions=True, **kw)


def emit_invariants(program, spec: ReachSpec | None = None, **kw) -> list:
    v = analyze(program, spec, **kw)
    return v.invariants


def shortest_counterexample(program, spec: ReachSpec | None = None, *,
                            assertions: bool = True) -> Verdict:
    """Breadth-first search of the control-flow graph times the automaton.

    Returns the verdict carried by a shortest flagged word, or a safe verdict
    without invariants when no word is flagged.
    """
    prog, spec = _prepare(program, spec)
    cfa = lower_to_cfa(prog)
    q0 = initial_state(spec, prog.signature)
    start = (cfa.entry, q0)
    parent = {start: None}
    queue = deque([start])

    def trace_to(node, extra):
        out = [extra]
        while parent[node] is not None:
            node, l = parent[node]
            out.append(l)
        return [str(l) for l in reversed(out)]

    while queue:
        cur = queue.popleft()
        node, q = cur
        for l, dst in cfa.successors(node):
            if isinstance(l, AssertFalse):
                if assertions:
                    return Verdict("assertion-violated", trace_to(cur, l), str(l))
                continue
            q2 = step_with_coherence(q, l)
            if isinstance(q2, Infeasible):
                continue
            if isinstance(q2, Unsafe):
                return Verdict("unsafe", trace_to(cur, l), str(l), q2.reason)
            if isinstance(q2, NotStreamingCoherent):
                return Verdict("not-sc", trace_to(cur, l), str(l), f"{q2.reason}: {q2.detail}")
            nxt = (dst, q2)
            if nxt not in parent:
                parent[nxt] = (cur, l)
                queue.append(nxt)
    return Verdict("safe")
