"""Ground terms, congruence closures and trace-level coherence checkers.

Every variable of an execution holds a symbolic term built from initial
constants (``init_x``), initial field functions (``init_next``), data
functions and the allocation symbols ``c_dyn``/``f_dyn``.  Equalities
collected from ``assume(x = y)`` letters induce a congruence on terms; the
checkers in this module interrogate that congruence directly and serve as
reference oracles for the finite-state tracker in :mod:`streamsafe.automaton`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .frontend import (DATA, LOC, Alloc, Apply, Assign, Assume, Load, ReachSpec,
                       Signature, Store)


class Term:
    """Hash-consed ground term; structurally equal terms are the same object."""

    __slots__ = ("op", "name", "args", "_hash", "__weakref__")
    _table: dict = {}

    def __new__(cls, op: str, name: str, args: tuple = ()):
        key = (op, name, args)
        t = cls._table.get(key)
        if t is None:
            t = object.__new__(cls)
            t.op, t.name, t.args = op, name, args
            t._hash = hash(key)
            cls._table[key] = t
        return t

    def __hash__(self):
        return self._hash

    def __reduce__(self):
        return (Term, (self.op, self.name, self.args))

    @property
    def symbol(self) -> tuple:
        return (self.op, self.name)

    def __str__(self):
        if self.op == "var":
            return f"init_{self.name}"
        if self.op == "dyn":
            return "c_dyn"
        head = {"fld": f"init_{self.name}", "fdyn": "f_dyn"}.get(self.op, self.name)
        return f"{head}({', '.join(map(str, self.args))})"

    __repr__ = __str__

    def subterms(self) -> Iterable["Term"]:
        stack = [self]
        seen = set()
        while stack:
            t = stack.pop()
            if t in seen:
                continue
            seen.add(t)
            yield t
            stack.extend(t.args)

    @property
    def is_dynamic(self) -> bool:
        return self.op in ("dyn", "fdyn")


def init_var(name: str) -> Term:
    return Term("var", name)


def init_field(field: str, arg: Term) -> Term:
    return Term("fld", field, (arg,))


def apply_func(func: str, args: Sequence[Term]) -> Term:
    return Term("fn", func, tuple(args))


C_DYN = Term("dyn", "c_dyn")


def dyn_location(k: int) -> Term:
    """Term of the k-th allocation (0-based): f_dyn applied k times to c_dyn."""
    t = C_DYN
    for _ in range(k):
        t = Term("fdyn", "f_dyn", (t,))
    return t


def subterm_closure(terms: Iterable[Term]) -> list:
    out = {}
    for t in terms:
        for s in t.subterms():
            out[s] = None
    return list(out)


# ---------------------------------------------------------------------------
# closures


class CongruenceRelation:
    """A congruence on a finite subterm-closed carrier, queried by ``equiv``."""

    def __init__(self, carrier: Iterable[Term]):
        self.carrier = subterm_closure(carrier)
        self.parent = {t: t for t in self.carrier}

    def find(self, t: Term) -> Term:
        p = self.parent
        root = t
        while p[root] is not root:
            root = p[root]
        while p[t] is not root:
            p[t], t = root, p[t]
        return root

    def union(self, a: Term, b: Term) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra is rb:
            return False
        self.parent[ra] = rb
        return True

    def equiv(self, a: Term, b: Term) -> bool:
        if a is b:
            return True
        if a not in self.parent or b not in self.parent:
            return False
        return self.find(a) is self.find(b)

    def class_of(self, t: Term) -> frozenset:
        r = self.find(t)
        return frozenset(s for s in self.carrier if self.find(s) is r)

    def classes(self) -> list:
        groups = {}
        for t in self.carrier:
            groups.setdefault(self.find(t), []).append(t)
        return list(groups.values())

    def merged_pairs(self) -> set:
        """Unordered pairs of distinct carrier terms that the relation identifies."""
        out = set()
        for group in self.classes():
            for i, a in enumerate(group):
                for b in group[i + 1:]:
                    out.add(frozenset((a, b)))
        return out

    def contains(self, other: "CongruenceRelation") -> bool:
        return all(self.equiv(a, b) for pair in other.merged_pairs() for a, b in [tuple(pair)])

    def _close(self, dynamic_fields=None) -> bool:
        """Saturate under congruence (and the allocation self-loop rule)."""
        changed_any = False
        apps = [t for t in self.carrier if t.args]
        while True:
            changed = False
            sig = {}
            for t in apps:
                key = (t.op, t.name, tuple(self.find(a) for a in t.args))
                other = sig.get(key)
                if other is None:
                    sig[key] = t
                elif self.union(t, other):
                    changed = True
            if dynamic_fields:
                dyn_roots = {self.find(t) for t in self.carrier if t.is_dynamic}
                for t in apps:
                    if (t.op == "fld" and t.name in dynamic_fields
                            and self.find(t.args[0]) in dyn_roots and self.union(t, t.args[0])):
                        changed = True
            if not changed:
                return changed_any
            changed_any = True


def congruence_closure(carrier: Iterable[Term], pairs: Iterable, *,
                       dynamic_fields=None) -> CongruenceRelation:
    """Smallest congruence on ``carrier`` (plus subterms) containing ``pairs``.

    With ``dynamic_fields`` given, the initial value of any of those location
    fields at an allocated location is identified with the location itself,
    which is how fresh cells are laid out.
    """
    pairs = list(pairs)
    rel = CongruenceRelation(list(carrier) + [t for p in pairs for t in p])
    for a, b in pairs:
        rel.union(a, b)
    rel._close(dynamic_fields)
    return rel


class TraversalIndex:
    """Which triples a term is a traversal term of (built from starts by pointers)."""

    def __init__(self, spec: ReachSpec):
        self.spec = spec
        self.starts = {}
        for i, tr in enumerate(spec.triples):
            for s in tr.start:
                self.starts.setdefault(s, set()).add(i)
        self.pointers = [set(tr.pointers) for tr in spec.triples]
        self.stops = [init_var(tr.stop[0]) for tr in spec.triples]
        self._memo = {}

    def triples_of(self, t: Term) -> frozenset:
        got = self._memo.get(t)
        if got is not None:
            return got
        if t.op == "var":
            got = frozenset(self.starts.get(t.name, ()))
        elif t.op == "fld":
            got = frozenset(i for i in self.triples_of(t.args[0]) if t.name in self.pointers[i])
        else:
            got = frozenset()
        self._memo[t] = got
        return got


def forest_closure(spec: ReachSpec, pairs: Iterable, carrier: Iterable[Term], *,
                   dynamic_fields=None, index: TraversalIndex | None = None) -> CongruenceRelation:
    """Congruence closure strengthened by the forest rule.

    Whenever two distinct traversal terms (of triples i and j) fall in one
    class, both are identified with their stop constants.
    """
    index = index or TraversalIndex(spec)
    pairs = list(pairs)
    rel = CongruenceRelation(list(carrier) + [t for p in pairs for t in p] + index.stops)
    for a, b in pairs:
        rel.union(a, b)
    travs = [(t, index.triples_of(t)) for t in rel.carrier]
    travs = [(t, ts) for t, ts in travs if ts]
    while True:
        rel._close(dynamic_fields)
        groups = {}
        for t, ts in travs:
            groups.setdefault(rel.find(t), []).append((t, ts))
        forced = False
        for members in groups.values():
            if len(members) < 2:
                continue
            for t, ts in members:
                for i in ts:
                    if rel.union(t, index.stops[i]):
                        forced = True
        if not forced:
            return rel


# ---------------------------------------------------------------------------
# Comp / FldsComp / alpha


class TermState:
    """Symbolic state after a prefix: variable terms, field writes and equalities.

    Field reads are resolved against the most recent write whose target is
    congruent to the term being read under the equalities known so far
    (equalities are facts about the initial heap, so one learned after a
    write still tells us the write hit that cell).  Without such a write the
    read yields the initial field function applied to the term.
    """

    def __init__(self, variables: Sequence[str] = (), loc_fields: Iterable[str] = ()):
        self.variables = list(variables)
        self.loc_fields = frozenset(loc_fields)
        self.comp = {v: init_var(v) for v in self.variables}
        self.writes = []  # (field, target, value)
        self.alpha = []
        self.beta = []
        self.terms = dict.fromkeys(self.comp.values())
        self.allocations = 0

    def copy(self) -> "TermState":
        c = TermState.__new__(TermState)
        c.variables = self.variables
        c.loc_fields = self.loc_fields
        c.comp = dict(self.comp)
        c.writes = list(self.writes)
        c.alpha = list(self.alpha)
        c.beta = list(self.beta)
        c.terms = dict(self.terms)
        c.allocations = self.allocations
        return c

    def get(self, var: str) -> Term:
        t = self.comp.get(var)
        if t is None:
            t = self.comp[var] = init_var(var)
            self.variables.append(var)
            self.terms[t] = None
        return t

    def equal_under(self, a: Term, b: Term) -> bool:
        if a is b:
            return True
        rel = congruence_closure([a, b], self.alpha, dynamic_fields=self.loc_fields)
        return rel.equiv(a, b)

    def field_term(self, field: str, target: Term) -> Term:
        for fld, tgt, val in reversed(self.writes):
            if fld == field and self.equal_under(target, tgt):
                return val
        return init_field(field, target)

    def apply(self, letter) -> None:
        if isinstance(letter, Assign):
            self._set(letter.target, self.get(letter.source))
        elif isinstance(letter, Load):
            self._set(letter.target, self.field_term(letter.field, self.get(letter.base)))
        elif isinstance(letter, Apply):
            self._set(letter.target, apply_func(letter.func, [self.get(a) for a in letter.args]))
        elif isinstance(letter, Alloc):
            self._set(letter.var, dyn_location(self.allocations))
            self.allocations += 1
        elif isinstance(letter, Store):
            self.writes.append((letter.field, self.get(letter.base), self.get(letter.source)))
        elif isinstance(letter, Assume):
            pair = (self.get(letter.left), self.get(letter.right))
            (self.alpha if letter.equal else self.beta).append(pair)

    def _set(self, var: str, t: Term) -> None:
        self.get(var)
        self.comp[var] = t
        self.terms[t] = None


def _fields_of(execution, signature: Signature | None) -> frozenset:
    if signature is not None:
        return frozenset(signature.loc_fields)
    return frozenset(l.field for l in execution
                     if isinstance(l, (Load, Store)) and l.sort == LOC)


def _vars_of(execution, signature: Signature | None) -> list:
    if signature is not None:
        return list(signature.variables)
    out = {}
    for l in execution:
        for name in ("target", "source", "base", "var", "left", "right"):
            v = getattr(l, name, None)
            if v is not None:
                out[v] = None
        for a in getattr(l, "args", ()) or ():
            out[a] = None
    return list(out)


def replay(execution, position: int | None = None, signature: Signature | None = None) -> TermState:
    """TermState after the first ``position`` letters (all letters by default)."""
    execution = list(execution)
    position = len(execution) if position is None else position
    st = TermState(_vars_of(execution, signature), _fields_of(execution, signature))
    for letter in execution[:position]:
        st.apply(letter)
    return st


def comp(execution, position: int, var: str, signature: Signature | None = None) -> Term:
    return replay(execution, position, signature).get(var)


def flds_comp(execution, position: int, field: str, var: str,
              signature: Signature | None = None) -> Term:
    st = replay(execution, position, signature)
    return st.field_term(field, st.get(var))


def alpha(execution, position: int, signature: Signature | None = None) -> list:
    return list(replay(execution, position, signature).alpha)


def terms_of(execution, position: int | None = None, signature: Signature | None = None) -> list:
    return list(replay(execution, position, signature).terms)


# ---------------------------------------------------------------------------
# checkers


@dataclass(frozen=True)
class Violation:
    step: int  # 1-based index of the offending letter
    reason: str
    detail: object = None


def _superterm_classes(rel: CongruenceRelation, base_roots: set) -> set:
    """Roots of classes holding a proper superterm (modulo the relation) of ``base_roots``."""
    above = set()
    apps = [t for t in rel.carrier if t.args]
    changed = True
    while changed:
        changed = False
        for t in apps:
            r = rel.find(t)
            if r in above:
                continue
            if any(rel.find(a) in base_roots or rel.find(a) in above for a in t.args):
                above.add(r)
                changed = True
    return above


class _Checker:
    """Shared driver for the coherence and streaming-coherence conditions."""

    def __init__(self, signature: Signature, spec: ReachSpec | None, streaming: bool):
        self.sig = signature
        self.spec = spec if spec is not None else ReachSpec()
        self.streaming = streaming
        self.index = TraversalIndex(self.spec)
        self.state = TermState(signature.variables, signature.loc_fields)

    def copy(self) -> "_Checker":
        c = _Checker.__new__(_Checker)
        c.sig, c.spec, c.streaming, c.index = self.sig, self.spec, self.streaming, self.index
        c.state = self.state.copy()
        return c

    def closure(self, extra: Sequence[Term] = ()) -> CongruenceRelation:
        st = self.state
        carrier = list(st.terms) + list(extra)
        if self.streaming:
            return forest_closure(self.spec, st.alpha, carrier, dynamic_fields=st.loc_fields,
                                  index=self.index)
        return congruence_closure(carrier, st.alpha, dynamic_fields=st.loc_fields)

    def holders(self, rel: CongruenceRelation, t: Term, sort: str | None = None) -> bool:
        names = self.sig.variables if sort is None else (
            self.sig.data_vars if sort == DATA else self.sig.loc_vars)
        return any(rel.equiv(self.state.get(z), t) for z in names)

    def feed(self, letter, step: int) -> Violation | None:
        """Check the letter against the prefix so far, then absorb it."""
        st = self.state
        if isinstance(letter, (Load, Apply)):
            after = st.copy()
            after.apply(letter)
            t = after.comp[letter.target]
            rel = self.closure([t])
            root = rel.find(t)
            if any(rel.find(s) is root for s in st.terms) and not self.holders(rel, t):
                self.state = after
                return Violation(step, "memoizing", str(t))
            self.state = after
            return None
        if isinstance(letter, Assume) and letter.equal and (letter.sort == DATA or not self.streaming):
            tu, tv = st.get(letter.left), st.get(letter.right)
            rel = self.closure()
            above = _superterm_classes(rel, {rel.find(tu), rel.find(tv)})
            holder_sort = DATA if self.streaming else None
            for s in st.terms:
                if rel.find(s) in above and not self.holders(rel, s, holder_sort):
                    st.apply(letter)
                    return Violation(step, "early-assume", str(s))
        st.apply(letter)
        return None


def check_alias_aware(execution, signature: Signature | None = None) -> Violation | None:
    """First field write where some location variable is neither must- nor must-not-aliased."""
    execution = list(execution)
    sig_vars = list(signature.loc_vars) if signature else None
    st = replay([], 0, signature) if signature else TermState(
        _vars_of(execution, None), _fields_of(execution, None))
    if sig_vars is None:
        sig_vars = [v for v in st.variables if _is_loc_var(v, execution)]
    for k, letter in enumerate(execution, 1):
        if isinstance(letter, Store):
            tx = st.get(letter.base)
            for z in sig_vars:
                if z == letter.base:
                    continue
                tz = st.get(z)
                carrier = [tx, tz] + [t for p in st.beta for t in p]
                if st.equal_under(tx, tz):
                    continue
                rel = congruence_closure(carrier, st.alpha + [(tx, tz)],
                                         dynamic_fields=st.loc_fields)
                if any(rel.equiv(a, b) for a, b in st.beta):
                    continue
                return Violation(k, "alias-unknown", (letter.base, z))
        st.apply(letter)
    return None


def _is_loc_var(v: str, execution) -> bool:
    for l in execution:
        if isinstance(l, (Alloc,)) and l.var == v:
            return True
        if isinstance(l, (Load, Store)) and l.base == v:
            return True
        if isinstance(l, (Assign, Assume)) and l.sort == LOC and v in (
                getattr(l, "target", None), getattr(l, "source", None),
                getattr(l, "left", None), getattr(l, "right", None)):
            return True
        if isinstance(l, Load) and l.sort == LOC and l.target == v:
            return True
        if isinstance(l, Store) and l.sort == LOC and l.source == v:
            return True
    return False


def check_coherent(execution, signature: Signature) -> Violation | None:
    """Memoizing and early-assume conditions under plain congruence of the equalities."""
    execution = list(execution)
    bad = check_alias_aware(execution, signature)
    if bad is not None:
        return Violation(bad.step, "not-alias-aware", bad.detail)
    chk = _Checker(signature, None, streaming=False)
    for k, letter in enumerate(execution, 1):
        v = chk.feed(letter, k)
        if v is not None:
            return v
    return None


def check_streaming_coherent(execution, spec: ReachSpec, signature: Signature) -> Violation | None:
    """Memoizing and data early-assume conditions under the forest closure."""
    chk = StreamingMonitor(signature, spec)
    for k, letter in enumerate(execution, 1):
        v = chk.feed(letter, k)
        if v is not None:
            return v
    return None


class StreamingMonitor(_Checker):
    """Incremental streaming-coherence checker; ``copy`` supports prefix sharing."""

    def __init__(self, signature: Signature, spec: ReachSpec):
        super().__init__(signature, spec, streaming=True)

    def copy(self) -> "StreamingMonitor":
        c = StreamingMonitor.__new__(StreamingMonitor)
        c.sig, c.spec, c.streaming, c.index = self.sig, self.spec, True, self.index
        c.state = self.state.copy()
        return c


def monitor_key(mon: _Checker) -> tuple:
    """Hashable summary of everything later coherence checks can depend on."""
    st = mon.state
    return (tuple(st.comp[v] for v in st.variables), tuple(st.writes),
            frozenset(frozenset(p) for p in st.alpha), frozenset(st.terms))
