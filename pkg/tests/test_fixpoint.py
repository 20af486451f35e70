from collections import deque

import pytest

from streamsafe.automaton import (AnalysisState, Infeasible, NotStreamingCoherent, Unsafe,
                                  initial_state, run, step_with_coherence)
from streamsafe.fixpoint import (ResourceExceeded, analyze, check_assertions, emit_invariants,
                                 loop_fixpoint, shortest_counterexample)
from streamsafe.frontend import AssertFalse, lower_to_cfa, parse_execution, parse_program

from conftest import CORPUS, LIST3, header, word

LIST_HEAD = """vars loc: x, y, NIL
fields loc: next
@reach list: start={x} pointers={next} stop={NIL}
"""

INFEASIBLE_THEN_ASSERT = """vars loc: x, y, NIL, z1, z2, z3
fields loc: next
@reach list: start={x, y} pointers={next} stop={NIL}
begin
  assume(x != NIL); assume(y != NIL); z1 := x.next; assume(z1 != z2);
  y.next := z2; z3 := x.next; assume(z2 = z3);
  assert(false)
end"""


def prog(body):
    return parse_program(LIST_HEAD + "begin\n" + body + "\nend")


def corpus(name):
    return parse_program((CORPUS / f"{name}.prog").read_text())


def replay_trace(p, trace):
    q = initial_state(p.spec, p.signature)
    for text in trace:
        if text == "assert(false)":
            return "assert"
        q = step_with_coherence(q, parse_execution(text, p.signature)[0])
    return q


def test_skip_is_safe_with_one_state():
    v = analyze(prog("skip"))
    assert v.kind == "safe" and v.states == 1 and v.states_explored == 1
    assert v.invariants == []


def test_list_walk_head_bag():
    v = analyze(prog("y := x; while (y != NIL) { y := y.next }"))
    assert v.kind == "safe"
    (inv,) = v.invariants
    assert 1 <= len(inv.disjuncts) <= 4
    assert any("y in maybe[list]" in d for d in inv.disjuncts)


def test_guarded_walk_reaches_yes_disjunct():
    v = analyze(prog("assume(x != NIL); y := x; while (y != NIL) { y := y.next }"))
    (inv,) = v.invariants
    flat = [" & ".join(d) for d in inv.disjuncts]
    assert any("y = x" in d and "x in yes[list]" in d and "x != NIL" in d for d in flat)


def test_loop_fixpoint_of_identity_body():
    sig, spec = header(LIST3)
    q0 = initial_state(spec, sig)
    body = parse_program(LIST_HEAD + "begin skip end").body
    cond = parse_program(LIST_HEAD + "begin while (x = y) { skip } end").body.cond
    head, out = loop_fixpoint({q0}, cond, body)
    assert len(head) == 2           # q0 and q0 with x = y
    assert len(out) == 1


def test_loop_free_program_has_no_invariants():
    assert emit_invariants(prog("assume(x != NIL); y := x.next")) == []


def test_reverse_verdicts():
    assert analyze(corpus("sll-reverse-safe")).kind == "safe"
    v = analyze(corpus("sll-reverse-unsafe"))
    assert v.kind == "unsafe"
    p = corpus("sll-reverse-unsafe")
    assert isinstance(replay_trace(p, v.trace), Unsafe)
    # the loop guard appears twice: one full iteration then the bad read
    assert sum(t.startswith("assume(cur") for t in v.trace) == 2
    assert v.trace[-1] == "nxt := cur.next"


def test_first_letter_off_list_gives_length_one_trace():
    v = analyze(prog("y := y.next; y := x.next"))
    assert v.kind == "unsafe" and v.trace == ["y := y.next"]


@pytest.mark.parametrize("name", ["sll-sorted-merge-non-streaming-coherent",
                                  "bst-remove-root-non-streaming-coherent"])
def test_non_coherent_corpus_programs(name):
    p = corpus(name)
    v = analyze(p)
    assert v.kind == "not-sc"
    assert v.letter == v.trace[-1]
    assert isinstance(replay_trace(p, v.trace), NotStreamingCoherent)
    assert lower_to_cfa(p).accepts_prefix(parse_execution("; ".join(v.trace), p.signature))


def test_assert_under_contradiction_is_unreachable():
    p = prog("assume(x = y); if (x != y) then assert(false) else skip")
    assert check_assertions(p).kind == "safe"


def test_bare_assert_fails():
    v = check_assertions(prog("assert(false)"))
    assert v.kind == "assertion-violated" and v.trace == ["assert(false)"]


def test_assert_after_infeasible_prefix_holds():
    assert check_assertions(parse_program(INFEASIBLE_THEN_ASSERT)).kind == "safe"


def test_unsafe_before_assert_wins():
    v = check_assertions(prog("y := y.next; assert(false)"))
    assert v.kind == "unsafe"


def test_assertion_desugaring_catches_reachable_failure():
    p = prog("assume(x != NIL); y := x.next; assert(y != NIL)")
    v = check_assertions(p)
    assert v.kind == "assertion-violated"
    assert v.trace[-1] == "assert(false)"


def test_assertions_can_be_switched_off():
    assert analyze(prog("assert(false)"), assertions=False).kind == "safe"


def test_bag_cap_raises():
    with pytest.raises(ResourceExceeded):
        analyze(corpus("avl-balance-safe"), bag_cap=2)


def test_search_agrees_when_nothing_is_flagged():
    v = shortest_counterexample(corpus("sll-find-safe"))
    assert v.kind == "safe"


# ---------------------------------------------------------------- corpus-wide properties

CORPUS_FILES = sorted(CORPUS.glob("*.prog"))


def _product_exit_states(p):
    """Live automaton states at exit nodes of the explicit CFA x automaton product."""
    cfa = lower_to_cfa(p)
    q0 = initial_state(p.spec, p.signature)
    seen = {(cfa.entry, q0)}
    queue = deque(seen)
    while queue:
        node, q = queue.popleft()
        for l, dst in cfa.successors(node):
            if isinstance(l, AssertFalse):
                continue
            q2 = step_with_coherence(q, l)
            assert isinstance(q2, (AnalysisState, Infeasible)), "safe program flagged in product"
            if isinstance(q2, AnalysisState) and (dst, q2) not in seen:
                seen.add((dst, q2))
                queue.append((dst, q2))
    return {q for n, q in seen if n in cfa.exits}


@pytest.mark.parametrize("path", CORPUS_FILES, ids=lambda p: p.stem)
def test_verdict_consistent_with_short_words(path):
    p = parse_program(path.read_text())
    v = analyze(p)
    assert v.kind == p.expect
    cfa = lower_to_cfa(p)
    words = cfa.words(14, prefixes=True)
    if v.kind == "safe":
        for w in words:
            q = run(initial_state(p.spec, p.signature), w)
            assert not isinstance(q, (Unsafe, NotStreamingCoherent)), w
        assert len(_product_exit_states(p)) == v.states
    else:
        trace = parse_execution("; ".join(v.trace), p.signature)
        assert cfa.accepts_prefix(trace)
        q = replay_trace(p, v.trace)
        expected = Unsafe if v.kind == "unsafe" else NotStreamingCoherent
        assert isinstance(q, expected)
        # no shorter word is flagged
        for w in words:
            if len(w) < len(trace):
                q = run(initial_state(p.spec, p.signature), w)
                assert not isinstance(q, (Unsafe, NotStreamingCoherent)), w
