"""Finite-state memory-safety tracker over executions.

A live state abstracts an execution prefix by an equivalence on variables,
disequalities between classes, a partial table of function/field values on
classes, and a placement of every location class into one of the categories

* ``yes[i]``    known to be a non-stop node of tree ``i`` (safe to dereference)
* ``maybe[i]``  reached by traversing tree ``i`` but possibly its stop location
* ``no``        stop locations and freed cells
* ``allocd``    cells obtained from ``alloc``
* ``elsewhere`` arbitrary static locations outside every traversal

States are immutable and canonical: a class is labelled by the index of its
least variable, so two states are equal exactly when they carry the same
information.  ``step`` is the plain transition function; ``step_with_coherence``
additionally flags executions that recompute a dropped value or assume an
equality underneath a dropped value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

from .frontend import (DATA, LOC, Alloc, Apply, AssertFalse, Assign, Assume, Free, Load,
                       ReachSpec, Signature, Skip, Store)


class Context:
    """Signature-derived lookup tables shared by all states of one analysis."""

    def __init__(self, signature: Signature, spec: ReachSpec):
        self.signature = signature
        self.spec = spec
        self.variables = tuple(signature.variables)
        self.index = {v: i for i, v in enumerate(self.variables)}
        self.sorts = tuple(LOC if v in signature.loc_vars else DATA for v in self.variables)
        self.loc_ids = tuple(i for i, s in enumerate(self.sorts) if s == LOC)
        self.loc_fields = tuple(signature.loc_fields)
        self.data_funcs = frozenset(f for f, _ in signature.data_funcs)
        self.triples = tuple(spec.triples)
        self.pointers = tuple(frozenset(t.pointers) for t in self.triples)
        self.stop_vars = tuple(t.stop_var for t in self.triples)
        self.ntriples = len(self.triples)
        self.triple_names = tuple(t.name for t in self.triples)


# ---------------------------------------------------------------------------
# state values


@dataclass(frozen=True)
class Infeasible:
    def __str__(self):
        return "infeasible"


@dataclass(frozen=True)
class Unsafe:
    reason: str = ""

    def __str__(self):
        return f"unsafe: {self.reason}"


@dataclass(frozen=True)
class NotStreamingCoherent:
    stmt: str
    reason: str
    detail: str = ""

    def __str__(self):
        return f"not streaming-coherent at '{self.stmt}' ({self.reason})"


INFEASIBLE = Infeasible()


@dataclass(frozen=True)
class AnalysisState:
    rep: tuple                      # class label of each variable
    diseq: frozenset                # (a, b) label pairs with a < b
    ptab: frozenset                 # ((symbol, arg labels), result label)
    yes: tuple                      # per triple: frozenset of labels
    maybe: tuple
    no: frozenset
    allocd: frozenset
    elsewhere: frozenset
    dropped: frozenset = frozenset()        # (symbol, arg labels) whose value was lost
    partial: frozenset = frozenset()        # (func, args, result) with some args lost
    dropped_super: frozenset = frozenset()  # data labels under a lost value
    ctx: Context = field(default=None, compare=False, repr=False)

    @cached_property
    def _hash(self):
        return hash((self.rep, self.diseq, self.ptab, self.yes, self.maybe, self.no,
                     self.allocd, self.elsewhere, self.dropped, self.partial,
                     self.dropped_super))

    def __hash__(self):
        return self._hash

    @cached_property
    def table(self) -> dict:
        return dict(self.ptab)

    def cls(self, var: str) -> int:
        return self.rep[self.ctx.index[var]]

    def members(self, label: int) -> list:
        return [v for v, r in zip(self.ctx.variables, self.rep) if r == label]

    def derefable(self, label: int) -> bool:
        return label in self.allocd or any(label in y for y in self.yes)


def initial_state(spec: ReachSpec, signature: Signature) -> AnalysisState:
    ctx = Context(signature, spec)
    idx = ctx.index
    maybe = tuple(frozenset(idx[v] for v in t.start) for t in ctx.triples)
    no = frozenset(idx[v] for v in ctx.stop_vars)
    maybe = tuple(m - no for m in maybe)
    placed = no.union(*maybe) if maybe else no
    elsewhere = frozenset(i for i in ctx.loc_ids if i not in placed)
    return AnalysisState(
        rep=tuple(range(len(ctx.variables))), diseq=frozenset(), ptab=frozenset(),
        yes=tuple(frozenset() for _ in ctx.triples), maybe=maybe, no=no,
        allocd=frozenset(), elsewhere=elsewhere, ctx=ctx)


# ---------------------------------------------------------------------------
# mutable working copy


GONE = -1  # argument slot whose class is no longer held


def _pair(a, b):
    return (a, b) if a < b else (b, a)


class _Work:
    def __init__(self, st: AnalysisState):
        ctx = self.ctx = st.ctx
        self.cls = dict(zip(ctx.variables, st.rep))
        self.idsort = {}
        self.next_id = len(ctx.variables)
        self.diseq = set(st.diseq)
        self.ptab = dict(st.ptab)
        self.yes = [set(s) for s in st.yes]
        self.maybe = [set(s) for s in st.maybe]
        self.no = set(st.no)
        self.allocd = set(st.allocd)
        self.elsewhere = set(st.elsewhere)
        self.dropped = set(st.dropped)
        self.partial = set(st.partial)
        self.conflict = False

    def sort(self, cid: int) -> str:
        s = self.idsort.get(cid)
        return s if s is not None else self.ctx.sorts[cid]

    def fresh(self, sort: str) -> int:
        cid = self.next_id
        self.next_id += 1
        self.idsort[cid] = sort
        return cid

    def live_loc(self) -> set:
        return {self.cls[self.ctx.variables[i]] for i in self.ctx.loc_ids}

    def collections(self):
        return self.yes + self.maybe + [self.no, self.allocd, self.elsewhere]

    def derefable(self, cid: int) -> bool:
        return cid in self.allocd or any(cid in y for y in self.yes)

    def purely_elsewhere(self, cid: int) -> bool:
        return cid in self.elsewhere and not (
            cid in self.no or cid in self.allocd
            or any(cid in s for s in self.yes) or any(cid in s for s in self.maybe))

    def add_diseq(self, a: int, b: int):
        if a == b:
            self.conflict = True
        else:
            self.diseq.add(_pair(a, b))

    # -- merging -----------------------------------------------------------

    def _union(self, keep: int, gone: int) -> list:
        def ren(x):
            return keep if x == gone else x

        for v, c in self.cls.items():
            if c == gone:
                self.cls[v] = keep
        diseq = set()
        for a, b in self.diseq:
            a, b = ren(a), ren(b)
            if a == b:
                self.conflict = True
            else:
                diseq.add(_pair(a, b))
        self.diseq = diseq
        table, forced = {}, []
        for (sym, args), res in self.ptab.items():
            key, res = (sym, tuple(map(ren, args))), ren(res)
            old = table.get(key)
            if old is not None and old != res:
                forced.append((old, res))
            else:
                table[key] = res
        self.ptab = table
        for coll in self.collections():
            if gone in coll:
                coll.discard(gone)
                coll.add(keep)
        self.dropped = {(sym, tuple(map(ren, args))) for sym, args in self.dropped}
        self.partial = {(sym, tuple(map(ren, args)), ren(r)) for sym, args, r in self.partial}
        return forced

    def merge(self, pairs) -> None:
        """Merge classes, forcing frontier classes onto their stops, then close under the table."""
        alias = {}

        def res(x):
            while x in alias:
                x = alias[x]
            return x

        queue = list(pairs)
        while queue:
            a, b = queue.pop(0)
            a, b = res(a), res(b)
            if a == b:
                continue
            if self.sort(a) == LOC:
                for r, other in ((a, b), (b, a)):
                    if self.purely_elsewhere(other):
                        continue
                    for i, m in enumerate(self.maybe):
                        if r in m:
                            queue.append((r, self.cls[self.ctx.stop_vars[i]]))
            alias[b] = a
            queue.extend(self._union(a, b))

    # -- normalization -----------------------------------------------------

    def freeze(self, base: AnalysisState):
        if self.conflict:
            return INFEASIBLE
        ctx = self.ctx
        live = set(self.cls.values())
        for a, b in self.diseq:
            if a == b:
                return INFEASIBLE

        # vacated classes: their table entries become dropped markers.  A data
        # application that lost only some arguments is kept with those slots
        # blanked, since it still sits above the surviving ones.
        table, dropped, partial = {}, set(), set()
        funcs = ctx.data_funcs

        def blank(args):
            return tuple(a if a in live else GONE for a in args)

        for (sym, args), r in self.ptab.items():
            if all(a in live for a in args):
                if r in live:
                    table[(sym, args)] = r
                else:
                    dropped.add((sym, args))
            elif sym in funcs and any(a in live for a in args):
                if r in live:
                    partial.add((sym, blank(args), r))
                else:
                    dropped.add((sym, blank(args)))
        for sym, args, r in self.partial:
            if any(a in live for a in args):
                if r in live:
                    partial.add((sym, blank(args), r))
                else:
                    dropped.add((sym, blank(args)))
        for sym, args in self.dropped:
            if all(a in live for a in args):
                dropped.add((sym, args))
            elif sym in funcs and any(a in live for a in args):
                dropped.add((sym, blank(args)))
        dropped = {k for k in dropped if k not in table}
        diseq = {(a, b) for a, b in self.diseq if a in live and b in live}

        yes = [s & live for s in self.yes]
        maybe = [s & live for s in self.maybe]
        no, allocd, elsewhere = self.no & live, self.allocd & live, self.elsewhere & live

        # category precedence: no > allocd > yes/maybe > elsewhere
        for c in live:
            if self.sort(c) != LOC:
                continue
            if c in no:
                allocd.discard(c)
                elsewhere.discard(c)
                for s in yes + maybe:
                    s.discard(c)
            elif c in allocd:
                elsewhere.discard(c)
                for s in yes + maybe:
                    s.discard(c)
            elif any(c in s for s in yes + maybe):
                elsewhere.discard(c)
                for y, m in zip(yes, maybe):
                    if c in y:
                        m.discard(c)

        # a frontier class already known to differ from its stop is a tree node
        loc_live = {c for c in live if self.sort(c) == LOC}
        changed = True
        while changed:
            changed = False
            for i in range(ctx.ntriples):
                stop = self.cls[ctx.stop_vars[i]]
                for c in list(maybe[i]):
                    if _pair(c, stop) in diseq:
                        maybe[i].discard(c)
                        yes[i].add(c)
                        for o in loc_live:
                            if o != c and o not in elsewhere:
                                diseq.add(_pair(c, o))
                        changed = True

        label = {}
        for i, v in enumerate(ctx.variables):
            c = self.cls[v]
            if c not in label:
                label[c] = i
        label[GONE] = GONE
        L = label.__getitem__
        ptab = frozenset(((s, tuple(map(L, a))), L(r)) for (s, a), r in table.items())
        dropped = frozenset((s, tuple(map(L, a))) for s, a in dropped)
        partial = frozenset((s, tuple(map(L, a)), L(r)) for s, a, r in partial)
        return AnalysisState(
            rep=tuple(L(self.cls[v]) for v in ctx.variables),
            diseq=frozenset(_pair(L(a), L(b)) for a, b in diseq),
            ptab=ptab,
            yes=tuple(frozenset(map(L, s)) for s in yes),
            maybe=tuple(frozenset(map(L, s)) for s in maybe),
            no=frozenset(map(L, no)), allocd=frozenset(map(L, allocd)),
            elsewhere=frozenset(map(L, elsewhere)),
            dropped=dropped, partial=partial,
            dropped_super=_dropped_super(ctx, ptab, partial, dropped),
            ctx=ctx)


def _dropped_super(ctx: Context, ptab, partial, dropped) -> frozenset:
    """Data classes lying underneath some dropped data-function application."""
    below = {}
    for (sym, args), r in ptab:
        if sym in ctx.data_funcs:
            below.setdefault(r, []).extend(args)
    for sym, args, r in partial:
        below.setdefault(r, []).extend(args)
    out = set()
    stack = [a for sym, args in dropped if sym in ctx.data_funcs for a in args]
    while stack:
        c = stack.pop()
        if c in out or c == GONE:
            continue
        out.add(c)
        stack.extend(below.get(c, ()))
    return frozenset(out)


# ---------------------------------------------------------------------------
# transitions


def step(state, letter):
    """One transition.  Non-live states are absorbing."""
    if not isinstance(state, AnalysisState):
        return state
    if isinstance(letter, (Skip, AssertFalse)):
        return state
    ctx = state.ctx
    w = _Work(state)
    cls = w.cls

    if isinstance(letter, Assign):
        if letter.target == letter.source:
            return state
        cls[letter.target] = cls[letter.source]

    elif isinstance(letter, Load):
        base = cls[letter.base]
        if not w.derefable(base):
            return Unsafe(f"dereference of {letter.base} in '{letter}'")
        key = (letter.field, (base,))
        hit = w.ptab.get(key)
        if hit is not None:
            cls[letter.target] = hit
        else:
            new = w.fresh(letter.sort)
            if letter.sort == LOC:
                along = [k for k in range(ctx.ntriples)
                         if base in w.yes[k] and letter.field in ctx.pointers[k]]
                targets = set(w.allocd)
                if along:
                    for k in along:
                        w.maybe[k].add(new)
                    for y in w.yes:
                        targets |= y
                else:
                    w.elsewhere.add(new)
                for c in targets:
                    w.add_diseq(new, c)
            w.ptab[key] = new
            cls[letter.target] = new

    elif isinstance(letter, Store):
        base = cls[letter.base]
        if not w.derefable(base):
            return Unsafe(f"dereference of {letter.base} in '{letter}'")
        w.ptab[(letter.field, (base,))] = cls[letter.source]

    elif isinstance(letter, Apply):
        key = (letter.func, tuple(cls[a] for a in letter.args))
        hit = w.ptab.get(key)
        if hit is not None:
            cls[letter.target] = hit
        else:
            new = w.fresh(DATA)
            w.ptab[key] = new
            cls[letter.target] = new

    elif isinstance(letter, Alloc):
        new = w.fresh(LOC)
        others = w.live_loc()
        cls[letter.var] = new
        others |= w.live_loc()
        others.discard(new)
        for c in others:
            w.add_diseq(new, c)
        w.allocd.add(new)
        for p in ctx.loc_fields:
            w.ptab[(p, (new,))] = new

    elif isinstance(letter, Free):
        c = cls[letter.var]
        if not w.derefable(c):
            return Unsafe(f"free of {letter.var} in '{letter}'")
        w.allocd.discard(c)
        for s in w.yes + w.maybe:
            s.discard(c)
        w.no.add(c)

    elif isinstance(letter, Assume):
        a, b = cls[letter.left], cls[letter.right]
        if letter.equal:
            if a == b:
                return state
            w.merge([(a, b)])
        else:
            if a == b:
                return INFEASIBLE
            if letter.sort == LOC:
                for i in range(ctx.ntriples):
                    stop = cls[ctx.stop_vars[i]]
                    for s, c in ((a, b), (b, a)):
                        if s == stop and c in w.maybe[i]:
                            _promote(w, c, i)
            w.add_diseq(a, b)
    else:
        raise TypeError(f"not a letter: {letter!r}")
    return w.freeze(state)


def _promote(w: _Work, c: int, i: int) -> None:
    w.maybe[i].discard(c)
    w.yes[i].add(c)
    for o in w.live_loc():
        if o != c and o not in w.elsewhere:
            w.add_diseq(c, o)


def step_with_coherence(state, letter):
    """Like ``step`` but first rejects letters that break streaming-coherence."""
    if not isinstance(state, AnalysisState):
        return state
    if isinstance(letter, Load):
        base = state.cls(letter.base)
        key = (letter.field, (base,))
        if key in state.dropped:
            return NotStreamingCoherent(str(letter), "memoizing",
                                        f"{letter.field} of [{letter.base}] was dropped")
        if (letter.sort == LOC and base in state.allocd and key not in state.table):
            return NotStreamingCoherent(str(letter), "memoizing",
                                        f"{letter.field} of allocated [{letter.base}] was lost")
    elif isinstance(letter, Apply):
        key = (letter.func, tuple(state.cls(a) for a in letter.args))
        if key in state.dropped:
            return NotStreamingCoherent(str(letter), "memoizing",
                                        f"{letter.func}({', '.join(letter.args)}) was dropped")
    elif isinstance(letter, Assume) and letter.equal and letter.sort == DATA:
        for v in (letter.left, letter.right):
            if state.cls(v) in state.dropped_super:
                return NotStreamingCoherent(str(letter), "early-assume",
                                            f"a value computed from [{v}] was dropped")
    return step(state, letter)


def run(state, letters, coherence: bool = True):
    """Fold a letter sequence through the transition function."""
    f = step_with_coherence if coherence else step
    for l in letters:
        state = f(state, l)
    return state


def classify(state) -> str:
    if isinstance(state, Infeasible):
        return "infeasible"
    if isinstance(state, Unsafe):
        return "unsafe"
    if isinstance(state, NotStreamingCoherent):
        return "not-sc"
    return "live"


def canonical_form(state):
    """Plain hashable tuple for a state; equal iff every component agrees."""
    if not isinstance(state, AnalysisState):
        return (classify(state),)
    return ("live", state.rep, tuple(sorted(state.diseq)), tuple(sorted(state.ptab)),
            tuple(tuple(sorted(s)) for s in state.yes),
            tuple(tuple(sorted(s)) for s in state.maybe),
            tuple(sorted(state.no)), tuple(sorted(state.allocd)),
            tuple(sorted(state.elsewhere)), tuple(sorted(state.dropped)),
            tuple(sorted(state.partial)),
            tuple(sorted(state.dropped_super)))


# ---------------------------------------------------------------------------
# reading states back


def class_names(state: AnalysisState) -> dict:
    """label -> '{x,y}' style name listing the members."""
    groups = {}
    for v, r in zip(state.ctx.variables, state.rep):
        groups.setdefault(r, []).append(v)
    return {r: "{" + ",".join(vs) + "}" for r, vs in groups.items()}


def category_of(state: AnalysisState, label: int) -> list:
    ctx = state.ctx
    out = []
    for i, name in enumerate(ctx.triple_names):
        if label in state.yes[i]:
            out.append(f"yes[{name}]")
        if label in state.maybe[i]:
            out.append(f"maybe[{name}]")
    if label in state.no:
        out.append("no")
    if label in state.allocd:
        out.append("allocd")
    if label in state.elsewhere:
        out.append("elsewhere")
    return out


def facts(state: AnalysisState) -> list:
    """State as a conjunction of equalities, disequalities and memberships."""
    ctx = state.ctx
    rep_var = {}
    out = []
    for v, r in zip(ctx.variables, state.rep):
        if r in rep_var:
            out.append(f"{v} = {rep_var[r]}")
        else:
            rep_var[r] = v
    for a, b in sorted(state.diseq):
        out.append(f"{rep_var[a]} != {rep_var[b]}")
    for (sym, args), r in sorted(state.ptab):
        if sym in ctx.data_funcs:
            out.append(f"{rep_var[r]} = {sym}({', '.join(rep_var[a] for a in args)})")
        else:
            out.append(f"{rep_var[r]} = {rep_var[args[0]]}.{sym}")
    for r, v in rep_var.items():
        for cat in category_of(state, r):
            out.append(f"{v} in {cat}")
    return out


def render(state) -> str:
    if not isinstance(state, AnalysisState):
        return str(state)
    names = class_names(state)
    lines = ["classes:"]
    for r, n in sorted(names.items()):
        cats = category_of(state, r)
        lines.append(f"  {n}" + (f"  [{' '.join(cats)}]" if cats else ""))
    if state.diseq:
        lines.append("diseq: " + ", ".join(f"{names[a]}!={names[b]}" for a, b in sorted(state.diseq)))
    for (sym, args), r in sorted(state.ptab):
        lines.append(f"  {sym}({', '.join(names[a] for a in args)}) -> {names[r]}")
    if state.dropped:
        lines.append("dropped: " + ", ".join(
            f"{sym}({', '.join(names.get(a, '_') for a in args)})"
            for sym, args in sorted(state.dropped)))
    return "\n".join(lines)
