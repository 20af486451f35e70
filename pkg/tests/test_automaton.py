import pytest
from hypothesis import given, settings, strategies as st

from streamsafe.automaton import (INFEASIBLE, AnalysisState, Infeasible, NotStreamingCoherent,
                                  Unsafe, canonical_form, category_of, classify, facts,
                                  initial_state, render, run, step, step_with_coherence)
from streamsafe.frontend import alphabet
from streamsafe.terms import check_streaming_coherent

from conftest import LIST3, header, word
from state_checks import deterministic, random_walk, state_problems

ALIAS_HEADER = """vars loc: x, y, NIL, z1, z2, z3
fields loc: next
@reach list: start={x, y} pointers={next} stop={NIL}
begin skip end"""

LATE_EQUALITY = ("assume(x != NIL); assume(y != NIL); z1 := x.next; assume(z1 != z2); "
       "y.next := z2; z3 := x.next; assume(z2 = z3)")

DATA_HEADER = """vars loc: x, NIL
vars data: a, b, c, u, v, u0, v0
fields loc: next
fields data: val
funcs: f/1
@reach list: start={x} pointers={next} stop={NIL}
begin skip end"""

TREE_HEADER = """vars loc: t, l, r, NIL
fields loc: left, right, up
@reach tree: start={t} pointers={left, right} stop={NIL}
begin skip end"""


def cats(q, var):
    return category_of(q, q.cls(var))


def test_initial_state_components(list3):
    sig, spec = list3
    q = initial_state(spec, sig)
    assert cats(q, "x") == ["maybe[list]"]
    assert cats(q, "NIL") == ["no"]
    assert cats(q, "y") == ["elsewhere"]
    assert q.yes == (frozenset(),) and q.allocd == frozenset()
    assert q.diseq == frozenset() and q.ptab == frozenset()


def test_no_elsewhere_without_extra_loc_vars():
    sig, spec = header("""vars loc: x, NIL
fields loc: next
@reach list: start={x} pointers={next} stop={NIL}
begin skip end""")
    assert initial_state(spec, sig).elsewhere == frozenset()


def test_shared_start_is_maybe_for_each_triple():
    sig, spec = header("""vars loc: x, NIL
fields loc: next, left
@reach a: start={x} pointers={next} stop={NIL}
@reach b: start={x} pointers={left} stop={NIL}
begin skip end""")
    q = initial_state(spec, sig)
    assert cats(q, "x") == ["maybe[a]", "maybe[b]"]
    assert state_problems(q) == []


def test_narrative_of_one_list_step(list3):
    sig, spec = list3
    q = initial_state(spec, sig)
    x, y, nil = (q.cls(v) for v in ("x", "y", "NIL"))

    q = step(q, word("assume(x != NIL)", sig)[0])
    assert cats(q, "x") == ["yes[list]"]
    assert q.diseq == {(x, nil)}            # y is off the list, so no claim about it

    q = step(q, word("y := x.next", sig)[0])
    y = q.cls("y")
    assert cats(q, "x") == ["yes[list]"]
    assert cats(q, "y") == ["maybe[list]"]
    assert q.diseq == {(x, nil), tuple(sorted((x, y)))}
    assert q.table == {("next", (x,)): y}

    q = step(q, word("assume(y != NIL)", sig)[0])
    assert cats(q, "y") == ["yes[list]"]
    assert q.maybe == (frozenset(),)
    assert tuple(sorted((y, nil))) in q.diseq


def test_late_equality_after_aliased_write_is_infeasible():
    sig, spec = header(ALIAS_HEADER)
    q = initial_state(spec, sig)
    trail = []
    for l in word(LATE_EQUALITY, sig):
        q = step(q, l)
        trail.append(classify(q))
    assert trail == ["live"] * 6 + ["infeasible"]


def test_off_list_deref_is_unsafe(list3):
    sig, spec = list3
    q = step(initial_state(spec, sig), word("x := y.next", sig)[0])
    assert isinstance(q, Unsafe)


def test_unchecked_start_deref_is_unsafe(list3):
    sig, spec = list3
    q = step(initial_state(spec, sig), word("y := x.next", sig)[0])
    assert isinstance(q, Unsafe)


def test_free_then_use_is_unsafe(list3):
    sig, spec = list3
    q = run(initial_state(spec, sig), word("alloc(y); free(y); x := y.next", sig))
    assert isinstance(q, Unsafe)


def test_allocated_cell_points_to_itself(list3):
    sig, spec = list3
    q = run(initial_state(spec, sig), word("alloc(y); x := y.next", sig))
    assert q.cls("x") == q.cls("y")
    assert cats(q, "y") == ["allocd"]


def test_off_tree_field_lands_elsewhere():
    sig, spec = header(TREE_HEADER)
    q = run(initial_state(spec, sig), word("assume(t != NIL); l := t.left; r := t.up", sig))
    assert cats(q, "l") == ["maybe[tree]"]
    assert cats(q, "r") == ["elsewhere"]


def test_terminal_states_absorb(list3):
    sig, spec = list3
    for l in alphabet(sig, spec):
        assert step(INFEASIBLE, l) is INFEASIBLE
        assert step(Unsafe("x"), l) == Unsafe("x")


def test_classify_tags(list3):
    sig, spec = list3
    assert classify(Infeasible()) == "infeasible"
    assert classify(Unsafe()) == "unsafe"
    assert classify(initial_state(spec, sig)) == "live"


def test_contradicting_equality_is_infeasible(list3):
    sig, spec = list3
    q = run(initial_state(spec, sig), word("assume(x != y); assume(x = y)", sig))
    assert q is INFEASIBLE
    q = run(initial_state(spec, sig), word("assume(x = y); assume(x != y)", sig))
    assert q is INFEASIBLE


def test_equating_frontier_with_stop_moves_it_to_no(list3):
    sig, spec = list3
    q = run(initial_state(spec, sig), word("assume(x = NIL)", sig))
    assert q.cls("x") == q.cls("NIL")
    assert cats(q, "x") == ["no"]


def test_data_congruence_through_function():
    sig, spec = header(DATA_HEADER)
    q = run(initial_state(spec, sig), word("u := f(a); v := f(b); assume(u != v); assume(a = b)",
                                           sig), coherence=False)
    assert q is INFEASIBLE


# ---------------------------------------------------------------- coherence tracker

def test_recompute_after_drop_is_memoizing():
    sig, spec = header(DATA_HEADER)
    q = initial_state(spec, sig)
    outs = []
    for l in word("a := f(c); a := b; a := f(c)", sig):
        q = step_with_coherence(q, l)
        outs.append(classify(q))
    assert outs == ["live", "live", "not-sc"]
    assert q.reason == "memoizing"


def test_held_results_never_flag():
    sig, spec = header(DATA_HEADER)
    q = run(initial_state(spec, sig), word("a := f(c); b := f(a); u := f(c); assume(u = b)", sig))
    assert isinstance(q, AnalysisState)


def test_late_base_equality_is_flagged_like_the_term_engine():
    sig, spec = header(DATA_HEADER)
    e = word("u := u0; u := f(u); u := f(u); v := v0; v := f(v); v := f(v); "
             "assume(u0 = v0); assume(u != v)", sig)
    q = initial_state(spec, sig)
    at = None
    for k, l in enumerate(e, 1):
        q = step_with_coherence(q, l)
        if isinstance(q, NotStreamingCoherent):
            at = k
            break
    assert (at, q.reason) == (7, "early-assume")
    ref = check_streaming_coherent(e, spec, sig)
    assert (ref.step, ref.reason) == (at, q.reason)


def test_reread_of_dropped_successor_flags(list3):
    sig, spec = list3
    q = run(initial_state(spec, sig), word("assume(x != NIL); y := x.next; y := x; y := x.next", sig))
    assert isinstance(q, NotStreamingCoherent) and q.reason == "memoizing"


# ---------------------------------------------------------------- canonical form and rendering

def test_canonical_form_ignores_construction_order(list3):
    sig, spec = list3
    q0 = initial_state(spec, sig)
    a = run(q0, word("assume(x != NIL); assume(y = x)", sig))
    b = run(q0, word("assume(y = x); assume(x != NIL)", sig))
    assert canonical_form(a) == canonical_form(b)
    assert a == b and hash(a) == hash(b)


def test_canonical_form_sees_diseq(list3):
    sig, spec = list3
    q0 = initial_state(spec, sig)
    a = run(q0, word("assume(x != y)", sig))
    assert canonical_form(a) != canonical_form(q0)


def test_canonical_form_idempotent_on_rebuilt_states(list3):
    sig, spec = list3
    q = run(initial_state(spec, sig), word("assume(x != NIL); y := x.next", sig))
    assert canonical_form(q) == canonical_form(q)
    assert deterministic(q, word("assume(y != NIL)", sig)[0])


def test_render_and_facts(list3):
    sig, spec = list3
    q = run(initial_state(spec, sig), word("assume(x != NIL); y := x.next", sig))
    text = render(q)
    assert "{x}  [yes[list]]" in text and "next({x}) -> {y}" in text
    fs = facts(q)
    assert "x != NIL" in fs and "y = x.next" in fs and "y in maybe[list]" in fs


# ---------------------------------------------------------------- properties

@pytest.mark.parametrize("text", [LIST3, TREE_HEADER, DATA_HEADER])
def test_random_walks_keep_state_invariants(text):
    sig, spec = header(text)
    for q, l, q2 in random_walk(sig, spec, 4000, seed=7):
        if isinstance(q2, AnalysisState):
            assert state_problems(q2) == [], (render(q), l)
            assert deterministic(q, l)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=10_000), max_size=10))
def test_step_and_coherent_step_agree_when_no_flag(picks):
    sig, spec = header(LIST3)
    letters = alphabet(sig, spec)
    q = p = initial_state(spec, sig)
    for i in picks:
        l = letters[i % len(letters)]
        q2 = step_with_coherence(q, l)
        if isinstance(q2, NotStreamingCoherent):
            return
        p = step(p, l)
        assert canonical_form(p) == canonical_form(q2)
        if not isinstance(q2, AnalysisState):
            return
        q = q2
