from hypothesis import given, settings, strategies as st

from streamsafe.frontend import ReachSpec, Triple
from streamsafe.terms import (C_DYN, Term, alpha, apply_func, check_alias_aware, check_coherent,
                              check_streaming_coherent, comp, congruence_closure, dyn_location,
                              flds_comp, forest_closure, init_field, init_var, replay)

from conftest import LIST3, LIST_Z, header, word

# Two loc vars and a data field: alias checks only have the pair (x, y) to decide.
TWO_LOC = """vars loc: x, y
vars data: z1, z2, d
fields data: p, val
begin skip end"""

FUNCS = """vars data: u, v, w, u0, v0, a, b, c
funcs: f/1, g/2
begin skip end"""

a, b, c = init_var("a"), init_var("b"), init_var("c")


def g(s, t):
    return apply_func("g", (s, t))


def nxt(t):
    return init_field("next", t)


# ---------------------------------------------------------------- comp and friends

def test_comp_of_empty_prefix_is_initial_constant(list3):
    sig, _ = list3
    assert comp([], 0, "x", sig) is init_var("x")


def test_second_allocation_is_f_dyn_of_c_dyn(list3):
    sig, _ = list3
    e = word("alloc(x); alloc(y)", sig)
    assert comp(e, 2, "x", sig) is C_DYN
    assert comp(e, 2, "y", sig) is dyn_location(1)
    assert str(comp(e, 2, "y", sig)) == "f_dyn(c_dyn)"


def test_write_through_alias_is_seen_by_read_through_other_name():
    sig, _ = header(TWO_LOC)
    e = word("assume(x = y); x.p := z1; z2 := y.p", sig)
    assert comp(e, 3, "z2", sig) is comp(e, 3, "z1", sig) is init_var("z1")


def test_equality_learned_after_the_read_does_not_rewrite_it():
    sig, _ = header(TWO_LOC)
    e = word("x.p := z1; z2 := y.p; assume(x = y); assume(z1 != z2)", sig)
    assert comp(e, 4, "z2", sig) is init_field("p", init_var("y"))


def test_flds_comp_base_case(list3):
    sig, _ = list3
    assert flds_comp([], 0, "next", "x", sig) is nxt(init_var("x"))


def test_flds_comp_after_store(listz):
    sig, _ = listz
    e = word("y.next := z1", sig)
    assert flds_comp(e, 1, "next", "y", sig) is comp(e, 1, "z1", sig)
    # untouched cell keeps its initial field
    assert flds_comp(e, 1, "next", "x", sig) is nxt(init_var("x"))


def test_flds_comp_follows_equal_target(listz):
    sig, _ = listz
    e = word("y.next := z1; assume(z2 = y)", sig)
    assert flds_comp(e, 1, "next", "z2", sig) is nxt(init_var("z2"))
    assert flds_comp(e, 2, "next", "z2", sig) is init_var("z1")


def test_alpha_starts_empty_and_ignores_disequalities(list3):
    sig, _ = list3
    e = word("assume(x = y); assume(x != NIL); assume(y != NIL)", sig)
    assert alpha(e, 0, sig) == []
    assert alpha(e, 1, sig) == [(init_var("x"), init_var("y"))]
    assert alpha(e, 3, sig) == alpha(e, 1, sig)


def test_term_rendering():
    assert str(dyn_location(2)) == "f_dyn(f_dyn(c_dyn))"
    assert str(g(a, nxt(b))) == "g(init_a, init_next(init_b))"
    assert Term("fn", "g", (a, c)) is g(a, c)


# ---------------------------------------------------------------- closures

def test_congruence_without_pairs_is_syntactic():
    rel = congruence_closure([g(a, c), g(b, c)], [])
    terms = rel.carrier
    for s in terms:
        for t in terms:
            assert rel.equiv(s, t) == (s is t)


def test_congruence_lifts_through_unary_function():
    f = lambda t: apply_func("f", (t,))
    rel = congruence_closure([f(a), f(b)], [(a, b)])
    assert rel.equiv(f(a), f(b))


def test_congruence_merges_exactly_two_pairs():
    carrier = [a, b, c, g(a, c), g(b, c)]
    rel = congruence_closure(carrier, [(a, b)])
    merged = {frozenset((s, t)) for s in carrier for t in carrier if s is not t and rel.equiv(s, t)}
    assert merged == {frozenset((a, b)), frozenset((g(a, c), g(b, c)))}


def test_forest_rule_forces_list_cells_to_stop():
    _, spec = header(LIST3)
    x = init_var("x")
    one, two = nxt(x), nxt(nxt(x))
    rel = forest_closure(spec, [(one, two)], [two])
    nil = init_var("NIL")
    assert rel.equiv(one, nil) and rel.equiv(two, nil)
    # plain congruence does not
    plain = congruence_closure([two], [(one, two)])
    assert not plain.equiv(one, init_var("NIL"))


def test_forest_rule_across_two_trees():
    spec = ReachSpec((Triple("s", ("x",), ("next",), ("NIL",)),
                      Triple("t", ("y",), ("left",), ("NULL",))))
    x, y = init_var("x"), init_var("y")
    tx, ty = nxt(x), init_field("left", y)
    rel = forest_closure(spec, [(tx, ty)], [tx, ty])
    assert rel.equiv(tx, init_var("NIL"))
    assert rel.equiv(ty, init_var("NULL"))
    assert rel.equiv(init_var("NIL"), init_var("NULL"))
    # roots themselves were not equated
    assert not rel.equiv(x, y)


def test_forest_rule_idle_without_pairs():
    _, spec = header(LIST3)
    x = init_var("x")
    rel = forest_closure(spec, [], [nxt(nxt(x))])
    assert not rel.equiv(nxt(x), init_var("NIL"))


def test_allocated_cells_point_to_themselves(list3):
    sig, _ = list3
    t = nxt(C_DYN)
    rel = congruence_closure([t], [], dynamic_fields={"next"})
    assert rel.equiv(t, C_DYN)


# fuzzed carriers over {a,b,c} with f/1, g/2 and the list field

_leaf = st.sampled_from([a, b, c, init_var("x"), init_var("NIL")])


def _extend(children):
    return st.one_of(children.map(lambda t: apply_func("f", (t,))),
                     st.tuples(children, children).map(lambda p: g(*p)),
                     children.map(nxt))


_term = st.recursive(_leaf, _extend, max_leaves=4)
_pairs = st.lists(st.tuples(_term, _term), max_size=4)


@settings(max_examples=200, deadline=None)
@given(_pairs, st.lists(_term, max_size=4))
def test_forest_closure_contains_congruence(pairs, extra):
    _, spec = header(LIST3)
    carrier = extra + [t for p in pairs for t in p]
    cc = congruence_closure(carrier, pairs)
    fc = forest_closure(spec, pairs, carrier)
    for s in cc.carrier:
        for t in cc.carrier:
            if cc.equiv(s, t):
                assert fc.equiv(s, t)


@settings(max_examples=200, deadline=None)
@given(_pairs, _pairs, st.lists(_term, max_size=3))
def test_closures_are_monotone(small, more, extra):
    _, spec = header(LIST3)
    carrier = extra + [t for p in small + more for t in p]
    for make in (lambda ps: congruence_closure(carrier, ps),
                 lambda ps: forest_closure(spec, ps, carrier)):
        lo, hi = make(small), make(small + more)
        for s in lo.carrier:
            for t in lo.carrier:
                if lo.equiv(s, t):
                    assert hi.equiv(s, t)


# ---------------------------------------------------------------- alias awareness

def test_unknown_alias_at_write_is_reported(listz):
    sig, _ = listz
    e = word("z1 := x.next; assume(z1 != z2); y.next := z2; z3 := x.next", sig)
    v = check_alias_aware(e, sig)
    assert v.step == 3 and set(v.detail) == {"x", "y"}


def test_must_alias_write_is_fine():
    sig, _ = header(TWO_LOC)
    e = word("assume(x = y); x.p := z1; z2 := y.p", sig)
    assert check_alias_aware(e, sig) is None


def test_must_not_alias_write_is_fine():
    sig, _ = header(TWO_LOC)
    assert check_alias_aware(word("assume(x != y); y.val := d", sig), sig) is None
    v = check_alias_aware(word("y.val := d", sig), sig)
    assert v.step == 1 and set(v.detail) == {"x", "y"}


def test_disequality_seen_through_equal_names():
    sig, _ = header("""vars loc: x, y, w
vars data: d
fields data: val
begin skip end""")
    e = word("assume(w = x); assume(w != y); y.val := d", sig)
    assert check_alias_aware(e, sig) is None


# ---------------------------------------------------------------- coherence

def _recompute(n):
    body = ["u := f(w)"] + ["u := f(u)"] * n + ["v := f(w)"] + ["v := f(v)"] * n
    return "; ".join(body + ["assume(u != v)"])


def test_recomputed_chain_is_memoizing():
    sig, spec = header(FUNCS)
    for n in (1, 2, 5):
        e = word(_recompute(n), sig)
        v = check_coherent(e, sig)
        assert (v.step, v.reason, v.detail) == (n + 2, "memoizing", "f(init_w)")
        assert check_streaming_coherent(e, spec, sig) == v


def test_late_base_equality_is_early_assume():
    sig, spec = header(FUNCS)
    n = 2
    body = ["u := u0"] + ["u := f(u)"] * n + ["v := v0"] + ["v := f(v)"] * n
    e = word("; ".join(body + ["assume(u0 = v0)", "assume(u != v)"]), sig)
    v = check_coherent(e, sig)
    assert (v.step, v.reason) == (2 * n + 3, "early-assume")
    assert check_streaming_coherent(e, spec, sig) == v


def test_holding_every_result_is_coherent():
    sig, spec = header(FUNCS)
    e = word("a := f(w); b := f(a); c := g(a, b); assume(a = w); assume(b != c)", sig)
    assert check_coherent(e, sig) is None
    assert check_streaming_coherent(e, spec, sig) is None


def test_recompute_while_still_held_is_fine():
    sig, spec = header(FUNCS)
    e = word("a := f(w); b := f(w); a := f(b)", sig)
    assert check_streaming_coherent(e, spec, sig) is None


def test_single_pass_walk_is_streaming_coherent(list3):
    sig, spec = list3
    e = word("; ".join(["assume(x != NIL); x := x.next"] * 3), sig)
    assert len(e) == 6
    assert check_streaming_coherent(e, spec, sig) is None


def test_rereading_dropped_successor_is_memoizing(list3):
    sig, spec = list3
    e = word("assume(x != NIL); y := x.next; y := x; y := x.next", sig)
    v = check_streaming_coherent(e, spec, sig)
    assert (v.step, v.reason, v.detail) == (4, "memoizing", "init_next(init_x)")


def test_location_equalities_are_exempt_from_early_assume(list3):
    sig, spec = list3
    e = word("assume(x != NIL); x := x.next; assume(x != NIL); x := x.next; assume(y = NIL)", sig)
    assert check_streaming_coherent(e, spec, sig) is None


# ---------------------------------------------------------------- term model vs replay state

def test_replay_tracks_allocation_count(list3):
    sig, _ = list3
    st_ = replay(word("alloc(x); y := x; alloc(y); alloc(x)", sig), signature=sig)
    assert st_.allocations == 3
    assert st_.get("x") is dyn_location(2)
    assert st_.get("y") is dyn_location(1)
