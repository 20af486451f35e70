"""Program text, abstract syntax and control-flow lowering.

A program file declares its vocabulary, optional reachability triples and
a statement body::

    @expect safe
    vars loc: x, y, NIL
    vars data: a
    fields loc: next
    fields data: val
    funcs: f/1
    @reach list: start={x} pointers={next} stop={NIL}
    begin
      y := x;
      while (y != NIL) y := y.next
    end

Bodies are built from atomic letters (assignments, field reads and writes,
alloc/free, assume) combined with ``;``, ``if``/``else``, ``while`` and
``assert``.  ``lower_to_cfa`` turns a body into a finite automaton whose
paths spell exactly the executions of the program.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Iterator, Sequence, Union

LOC = "loc"
DATA = "data"


class FrontendError(Exception):
    """Base class for parse, sort and validation diagnostics."""

    kind = "error"

    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message = message
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line else ""
        super().__init__(f"{where}{self.kind}: {message}")


class ParseError(FrontendError):
    kind = "syntax error"


class UnknownIdentifier(FrontendError):
    kind = "unknown identifier"


class SortError(FrontendError):
    kind = "sort mismatch"


class ConstantWriteError(FrontendError):
    kind = "write to spec constant"


class ValidationError(FrontendError):
    """A well-formedness failure found by ``validate``; ``code`` names the rule."""

    kind = "invalid"

    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(f"[{code}] {message}")


@dataclass(frozen=True)
class Signature:
    loc_vars: tuple = ()
    data_vars: tuple = ()
    loc_fields: tuple = ()
    data_fields: tuple = ()
    data_funcs: tuple = ()  # (name, arity) pairs
    spec_constants: tuple = ()

    def __post_init__(self):
        names = (list(self.loc_vars) + list(self.data_vars) + list(self.loc_fields)
                 + list(self.data_fields) + [f for f, _ in self.data_funcs])
        seen = set()
        for n in names:
            if n in seen:
                raise ValidationError("duplicate-name", f"name {n!r} declared twice")
            seen.add(n)

    def var_sort(self, name: str) -> str | None:
        if name in self.loc_vars:
            return LOC
        if name in self.data_vars:
            return DATA
        return None

    def field_sort(self, name: str) -> str | None:
        if name in self.loc_fields:
            return LOC
        if name in self.data_fields:
            return DATA
        return None

    def arity(self, name: str) -> int | None:
        for f, k in self.data_funcs:
            if f == name:
                return k
        return None

    @property
    def variables(self) -> tuple:
        return tuple(self.loc_vars) + tuple(self.data_vars)

    @property
    def fields(self) -> tuple:
        return tuple(self.loc_fields) + tuple(self.data_fields)


# ---------------------------------------------------------------------------
# letters


@dataclass(frozen=True, slots=True)
class Skip:
    def __str__(self):
        return "skip"


@dataclass(frozen=True, slots=True)
class Assign:
    target: str
    source: str
    sort: str = LOC

    def __str__(self):
        return f"{self.target} := {self.source}"


@dataclass(frozen=True, slots=True)
class Load:
    target: str
    base: str
    field: str
    sort: str = LOC

    def __str__(self):
        return f"{self.target} := {self.base}.{self.field}"


@dataclass(frozen=True, slots=True)
class Store:
    base: str
    field: str
    source: str
    sort: str = LOC

    def __str__(self):
        return f"{self.base}.{self.field} := {self.source}"


@dataclass(frozen=True, slots=True)
class Apply:
    target: str
    func: str
    args: tuple

    sort = DATA

    def __str__(self):
        return f"{self.target} := {self.func}({', '.join(self.args)})"


@dataclass(frozen=True, slots=True)
class Alloc:
    var: str

    def __str__(self):
        return f"alloc({self.var})"


@dataclass(frozen=True, slots=True)
class Free:
    var: str

    def __str__(self):
        return f"free({self.var})"


@dataclass(frozen=True, slots=True)
class Assume:
    left: str
    right: str
    equal: bool
    sort: str = LOC

    def __str__(self):
        op = "=" if self.equal else "!="
        return f"assume({self.left} {op} {self.right})"


@dataclass(frozen=True, slots=True)
class AssertFalse:
    def __str__(self):
        return "assert(false)"


Letter = Union[Skip, Assign, Load, Store, Apply, Alloc, Free, Assume, AssertFalse]
LETTER_TYPES = (Skip, Assign, Load, Store, Apply, Alloc, Free, Assume, AssertFalse)


def assigned_var(letter) -> str | None:
    """The variable a letter overwrites, if any."""
    if isinstance(letter, (Assign, Load, Apply)):
        return letter.target
    if isinstance(letter, Alloc):
        return letter.var
    return None


def dereferenced_var(letter) -> str | None:
    if isinstance(letter, Load):
        return letter.base
    if isinstance(letter, Store):
        return letter.base
    if isinstance(letter, Free):
        return letter.var
    return None


# ---------------------------------------------------------------------------
# conditions and compound statements


@dataclass(frozen=True)
class Atom:
    left: str
    right: str
    equal: bool
    sort: str = LOC

    def __str__(self):
        return f"{self.left} {'=' if self.equal else '!='} {self.right}"


@dataclass(frozen=True)
class Not:
    cond: object

    def __str__(self):
        return f"not ({self.cond})"


@dataclass(frozen=True)
class And:
    left: object
    right: object

    def __str__(self):
        return f"({self.left}) and ({self.right})"


@dataclass(frozen=True)
class Or:
    left: object
    right: object

    def __str__(self):
        return f"({self.left}) or ({self.right})"


@dataclass(frozen=True)
class Seq:
    items: tuple


@dataclass(frozen=True)
class If:
    cond: object
    then: object
    orelse: object


@dataclass(frozen=True)
class While:
    cond: object
    body: object


@dataclass(frozen=True)
class Guard:
    """``assume(c)`` with a compound condition; atomic ones parse to ``Assume``."""

    cond: object


@dataclass(frozen=True)
class Triple:
    name: str
    start: tuple
    pointers: tuple
    stop: tuple

    @property
    def stop_var(self) -> str:
        return self.stop[0]


@dataclass(frozen=True)
class ReachSpec:
    triples: tuple = ()

    @property
    def constants(self) -> tuple:
        out = []
        for t in self.triples:
            for c in tuple(t.start) + tuple(t.stop):
                if c not in out:
                    out.append(c)
        return tuple(out)


@dataclass(frozen=True)
class Program:
    signature: Signature
    body: object
    spec: ReachSpec = ReachSpec()
    expect: str | None = None


@dataclass(frozen=True)
class ValidatedProgram:
    program: Program
    spec: ReachSpec

    @property
    def signature(self) -> Signature:
        return self.program.signature

    @property
    def body(self):
        return self.program.body


# ---------------------------------------------------------------------------
# tokenizer

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>(\#|//)[^\n]*)
  | (?P<op>:=|!=|=|\(|\)|\{|\}|,|;|\.|:|/|@)
  | (?P<num>[0-9]+)
  | (?P<id>[A-Za-z_][A-Za-z0-9_']*(?:-[A-Za-z0-9_]+)*)
""", re.VERBOSE)

KEYWORDS = {"begin", "end", "skip", "if", "then", "else", "while", "do", "assume",
            "assert", "alloc", "free", "not", "and", "or", "false", "vars", "fields",
            "funcs"}


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list:
    toks = []
    line, col, pos = 1, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        s = m.group()
        if kind == "nl":
            line, col = line + 1, 1
        else:
            if kind in ("op", "num", "id"):
                toks.append(_Tok(kind, s, line, col))
            col += len(s)
        pos = m.end()
    toks.append(_Tok("eof", "", line, col))
    return toks


class _Parser:
    def __init__(self, text: str, signature: Signature | None = None,
                 spec: ReachSpec | None = None):
        self.toks = _tokenize(text)
        self.i = 0
        self.sig = signature
        self.constants = set(spec.constants) if spec else set()

    # token helpers
    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def peek(self, k=1) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        if text == "eof":
            return self.tok.kind == "eof"
        return self.tok.kind in ("op", "id") and self.tok.text == text

    def take(self, text: str | None = None) -> _Tok:
        t = self.tok
        if text is not None and not self.at(text):
            raise ParseError(f"expected {text!r}, found {t.text or 'end of input'!r}",
                             t.line, t.col)
        self.i += 1
        return t

    def ident(self) -> _Tok:
        t = self.tok
        if t.kind != "id" or t.text in KEYWORDS:
            raise ParseError(f"expected identifier, found {t.text or 'end of input'!r}",
                             t.line, t.col)
        self.i += 1
        return t

    def ident_list(self) -> list:
        names = [self.ident().text]
        while self.at(","):
            self.take(",")
            names.append(self.ident().text)
        return names

    # declarations
    def program(self) -> Program:
        decl = {"loc_vars": [], "data_vars": [], "loc_fields": [], "data_fields": [],
                "data_funcs": []}
        triples = []
        expect = None
        while not self.at("begin"):
            t = self.tok
            if t.kind == "eof":
                raise ParseError("missing 'begin'", t.line, t.col)
            if self.at("@"):
                self.take("@")
                d = self.ident()
                if d.text == "expect":
                    expect = self.ident_or_kw()
                    if expect not in ("safe", "unsafe", "not-sc"):
                        raise ParseError(f"unknown expectation {expect!r}", d.line, d.col)
                elif d.text == "reach":
                    triples.append(self.reach())
                else:
                    raise ParseError(f"unknown directive @{d.text}", d.line, d.col)
            elif self.at("vars") or self.at("fields"):
                what = self.take().text
                srt = self.ident_or_kw()
                if srt not in (LOC, DATA):
                    raise ParseError(f"expected 'loc' or 'data' after {what}", t.line, t.col)
                self.take(":")
                key = ("loc_" if srt == LOC else "data_") + ("vars" if what == "vars" else "fields")
                decl[key].extend(self.ident_list())
            elif self.at("funcs"):
                self.take("funcs")
                self.take(":")
                while True:
                    name = self.ident().text
                    self.take("/")
                    n = self.tok
                    if n.kind != "num":
                        raise ParseError("expected arity", n.line, n.col)
                    self.i += 1
                    decl["data_funcs"].append((name, int(n.text)))
                    if not self.at(","):
                        break
                    self.take(",")
            else:
                raise ParseError(f"unexpected {t.text!r} in declarations", t.line, t.col)
            if self.at(";"):
                self.take(";")
        spec = ReachSpec(tuple(triples))
        sig = Signature(tuple(decl["loc_vars"]), tuple(decl["data_vars"]),
                        tuple(decl["loc_fields"]), tuple(decl["data_fields"]),
                        tuple(decl["data_funcs"]), spec.constants)
        self.sig = sig
        self.constants = set(spec.constants)
        for tr in triples:
            for c in tr.start + tr.stop:
                if sig.var_sort(c) != LOC:
                    raise UnknownIdentifier(f"reach constant {c!r} is not a loc variable")
            for p in tr.pointers:
                if sig.field_sort(p) != LOC:
                    raise UnknownIdentifier(f"reach pointer {p!r} is not a loc field")
        self.take("begin")
        body = self.stmts(("end",))
        self.take("end")
        if self.tok.kind != "eof":
            raise ParseError(f"trailing input {self.tok.text!r}", self.tok.line, self.tok.col)
        return Program(sig, body, spec, expect)

    def ident_or_kw(self) -> str:
        t = self.tok
        if t.kind != "id":
            raise ParseError("expected a word", t.line, t.col)
        self.i += 1
        return t.text

    def reach(self) -> Triple:
        name = self.ident().text
        self.take(":")
        parts = {}
        for key in ("start", "pointers", "stop"):
            k = self.ident_or_kw()
            if k != key:
                raise ParseError(f"expected {key}=", self.tok.line, self.tok.col)
            self.take("=")
            self.take("{")
            items = [] if self.at("}") else self.ident_list()
            self.take("}")
            parts[key] = tuple(items)
        return Triple(name, parts["start"], parts["pointers"], parts["stop"])

    # statements
    def stmts(self, closers) -> object:
        items = []
        while not any(self.at(c) for c in closers):
            items.append(self.stmt())
            if self.at(";"):
                self.take(";")
            elif not any(self.at(c) for c in closers):
                t = self.tok
                raise ParseError(f"expected ';' before {t.text or 'end of input'!r}",
                                 t.line, t.col)
        return _seq(items)

    def stmt(self):
        t = self.tok
        if self.at("{"):
            self.take("{")
            s = self.stmts(("}",))
            self.take("}")
            return s
        if self.at("skip"):
            self.take()
            return Skip()
        if self.at("if"):
            self.take()
            self.take("(")
            c = self.cond()
            self.take(")")
            if self.at("then"):
                self.take()
            then = self.stmt()
            orelse = Skip()
            if self.at("else"):
                self.take()
                orelse = self.stmt()
            return If(c, then, orelse)
        if self.at("while"):
            self.take()
            self.take("(")
            c = self.cond()
            self.take(")")
            if self.at("do"):
                self.take()
            return While(c, self.stmt())
        if self.at("assume"):
            self.take()
            self.take("(")
            c = self.cond()
            self.take(")")
            if isinstance(c, Atom):
                return Assume(c.left, c.right, c.equal, c.sort)
            return Guard(c)
        if self.at("assert"):
            self.take()
            self.take("(")
            if self.at("false"):
                self.take()
                self.take(")")
                return AssertFalse()
            c = self.cond()
            self.take(")")
            return If(Not(c), AssertFalse(), Skip())
        if self.at("alloc") or self.at("free"):
            kw = self.take().text
            self.take("(")
            v = self.var_ref(LOC)
            self.take(")")
            if kw == "alloc":
                self.check_write(v, t)
                return Alloc(v)
            return Free(v)
        # assignment forms
        lhs = self.ident()
        if self.at("."):
            self.take(".")
            fld = self.field_ref()
            self.take(":=")
            self.need_sort(lhs, LOC)
            src = self.ident()
            self.need_sort(src, self.sig.field_sort(fld))
            return Store(lhs.text, fld, src.text, self.sig.field_sort(fld))
        self.take(":=")
        tsort = self.sort_of(lhs)
        self.check_write(lhs.text, lhs)
        src = self.ident()
        if self.at("("):
            arity = self.sig.arity(src.text)
            if arity is None:
                raise UnknownIdentifier(f"{src.text!r} is not a declared function",
                                        src.line, src.col)
            self.take("(")
            args = [] if self.at(")") else [self.var_ref(DATA)]
            while self.at(","):
                self.take(",")
                args.append(self.var_ref(DATA))
            self.take(")")
            if len(args) != arity:
                raise SortError(f"{src.text} expects {arity} arguments", src.line, src.col)
            if tsort != DATA:
                raise SortError(f"function result is data but {lhs.text!r} is loc",
                                lhs.line, lhs.col)
            return Apply(lhs.text, src.text, tuple(args))
        if self.at("."):
            self.take(".")
            self.need_sort(src, LOC)
            fld = self.field_ref()
            fs = self.sig.field_sort(fld)
            if fs != tsort:
                raise SortError(f"field {fld!r} is {fs} but {lhs.text!r} is {tsort}",
                                lhs.line, lhs.col)
            return Load(lhs.text, src.text, fld, fs)
        self.need_sort(src, tsort)
        return Assign(lhs.text, src.text, tsort)

    def check_write(self, name: str, tok: _Tok):
        if name in self.constants:
            raise ConstantWriteError(f"{name!r} is a reach constant", tok.line, tok.col)

    def sort_of(self, tok: _Tok) -> str:
        s = self.sig.var_sort(tok.text)
        if s is None:
            raise UnknownIdentifier(f"{tok.text!r}", tok.line, tok.col)
        return s

    def need_sort(self, tok: _Tok, sort: str):
        s = self.sort_of(tok)
        if s != sort:
            raise SortError(f"{tok.text!r} is {s}, expected {sort}", tok.line, tok.col)

    def var_ref(self, sort: str) -> str:
        t = self.ident()
        self.need_sort(t, sort)
        return t.text

    def field_ref(self) -> str:
        t = self.ident()
        if self.sig.field_sort(t.text) is None:
            raise UnknownIdentifier(f"field {t.text!r}", t.line, t.col)
        return t.text

    # conditions: or < and < not < atom
    def cond(self):
        c = self.conj()
        while self.at("or"):
            self.take()
            c = Or(c, self.conj())
        return c

    def conj(self):
        c = self.neg()
        while self.at("and"):
            self.take()
            c = And(c, self.neg())
        return c

    def neg(self):
        if self.at("not"):
            self.take()
            return Not(self.neg())
        if self.at("("):
            self.take("(")
            c = self.cond()
            self.take(")")
            return c
        left = self.ident()
        op = self.tok
        if not (self.at("=") or self.at("!=")):
            raise ParseError("expected '=' or '!='", op.line, op.col)
        self.take()
        right = self.ident()
        ls, rs = self.sort_of(left), self.sort_of(right)
        if ls != rs:
            raise SortError(f"comparing {ls} {left.text!r} with {rs} {right.text!r}",
                            left.line, left.col)
        return Atom(left.text, right.text, op.text == "=", ls)


def _seq(items: list):
    flat = []
    for s in items:
        if isinstance(s, Seq):
            flat.extend(s.items)
        elif not isinstance(s, Skip):
            flat.append(s)
    if not flat:
        return Skip()
    if len(flat) == 1:
        return flat[0]
    return Seq(tuple(flat))


def parse_program(text: str) -> Program:
    """Parse a whole program file (declarations, reach triples and body)."""
    return _Parser(text).program()


def parse_statements(text: str, signature: Signature, spec: ReachSpec | None = None):
    """Parse a statement sequence against an existing signature."""
    p = _Parser(text, signature, spec)
    body = p.stmts(("eof",)) if p.tok.kind != "eof" else Skip()
    if p.tok.kind != "eof":
        raise ParseError("trailing input", p.tok.line, p.tok.col)
    return body


def parse_execution(text: str, signature: Signature) -> list:
    """Parse a ``;``-separated word of atomic letters."""
    body = parse_statements(text, signature)
    items = body.items if isinstance(body, Seq) else (() if isinstance(body, Skip) else (body,))
    for s in items:
        if not isinstance(s, LETTER_TYPES):
            raise ParseError(f"not an atomic letter: {s!r}")
    return list(items)


# ---------------------------------------------------------------------------
# validation


def _walk(stmt) -> Iterator:
    if isinstance(stmt, Seq):
        for s in stmt.items:
            yield from _walk(s)
    elif isinstance(stmt, If):
        yield from _walk(stmt.then)
        yield from _walk(stmt.orelse)
    elif isinstance(stmt, While):
        yield from _walk(stmt.body)
    else:
        yield stmt


def validate(program: Program, spec: ReachSpec | None = None) -> ValidatedProgram:
    spec = program.spec if spec is None else spec
    sig = program.signature
    for tr in spec.triples:
        if len(tr.stop) != 1:
            raise ValidationError("stop-not-singleton",
                                  f"triple {tr.name!r} has stop set {set(tr.stop)}")
        for c in tr.start + tr.stop:
            if sig.var_sort(c) != LOC:
                raise ValidationError("unknown-constant",
                                      f"triple {tr.name!r} names {c!r}, not a loc variable")
        for p in tr.pointers:
            if sig.field_sort(p) != LOC:
                raise ValidationError("unknown-pointer",
                                      f"triple {tr.name!r} names {p!r}, not a loc field")
    consts = set(spec.constants)
    for s in _walk(program.body):
        v = assigned_var(s)
        if v is not None and v in consts:
            raise ValidationError("constant-overwritten", f"{s} assigns reach constant {v!r}")
    if spec is not program.spec or sig.spec_constants != spec.constants:
        sig = Signature(sig.loc_vars, sig.data_vars, sig.loc_fields, sig.data_fields,
                        sig.data_funcs, spec.constants)
        program = Program(sig, program.body, spec, program.expect)
    return ValidatedProgram(program, spec)


# ---------------------------------------------------------------------------
# executions


def nnf_guards(cond, positive: bool = True) -> list:
    """Alternatives of ``assume(cond)``: each is a list of atomic assume letters."""
    if isinstance(cond, Atom):
        return [[Assume(cond.left, cond.right, cond.equal == positive, cond.sort)]]
    if isinstance(cond, Not):
        return nnf_guards(cond.cond, not positive)
    if isinstance(cond, (And, Or)):
        left = nnf_guards(cond.left, positive)
        right = nnf_guards(cond.right, positive)
        if isinstance(cond, And) == positive:
            return [a + b for a in left for b in right]
        return left + right
    raise TypeError(f"not a condition: {cond!r}")


@dataclass(frozen=True)
class ControlFlowAutomaton:
    nodes: tuple
    edges: tuple  # (src, letter, dst)
    entry: int
    exits: frozenset

    def successors(self, node: int) -> list:
        return self._succ.get(node, [])

    @property
    def _succ(self) -> dict:
        cache = self.__dict__.get("_succ_cache")
        if cache is None:
            cache = {}
            for s, l, d in self.edges:
                cache.setdefault(s, []).append((l, d))
            object.__setattr__(self, "_succ_cache", cache)
        return cache

    def words(self, max_len: int, prefixes: bool = False) -> set:
        """All path words from entry (to an exit, unless ``prefixes``) up to a length."""
        out = set()
        frontier = {(self.entry, ())}
        for depth in range(max_len + 1):
            nxt = set()
            for node, w in frontier:
                if prefixes or node in self.exits:
                    out.add(w)
                if depth < max_len:
                    for l, d in self.successors(node):
                        nxt.add((d, w + (l,)))
            frontier = nxt
        return out

    def accepts_prefix(self, word: Sequence) -> bool:
        cur = {self.entry}
        for l in word:
            cur = {d for n in cur for (m, d) in self.successors(n) if m == l}
            if not cur:
                return False
        return True


class _CfaBuilder:
    def __init__(self):
        self.n = 0
        self.edges = []
        self.eps = []

    def node(self) -> int:
        self.n += 1
        return self.n - 1

    def path(self, src: int, letters) -> int:
        cur = src
        for l in letters:
            nxt = self.node()
            self.edges.append((cur, l, nxt))
            cur = nxt
        return cur

    def build(self, stmt, src: int) -> int:
        if isinstance(stmt, Skip):
            return src
        if isinstance(stmt, LETTER_TYPES):
            return self.path(src, [stmt])
        if isinstance(stmt, Seq):
            for s in stmt.items:
                src = self.build(s, src)
            return src
        if isinstance(stmt, Guard):
            join = self.node()
            for alt in nnf_guards(stmt.cond):
                self.eps.append((self.path(src, alt), join))
            return join
        if isinstance(stmt, If):
            join = self.node()
            for alt in nnf_guards(stmt.cond):
                self.eps.append((self.build(stmt.then, self.path(src, alt)), join))
            for alt in nnf_guards(stmt.cond, False):
                self.eps.append((self.build(stmt.orelse, self.path(src, alt)), join))
            return join
        if isinstance(stmt, While):
            head = self.node()
            self.eps.append((src, head))
            for alt in nnf_guards(stmt.cond):
                self.eps.append((self.build(stmt.body, self.path(head, alt)), head))
            out = self.node()
            for alt in nnf_guards(stmt.cond, False):
                self.eps.append((self.path(head, alt), out))
            return out
        raise TypeError(f"unknown statement {stmt!r}")


def lower_to_cfa(program) -> ControlFlowAutomaton:
    """Epsilon-free automaton whose entry-to-exit paths spell the program's executions."""
    body = program.body if hasattr(program, "body") else program
    b = _CfaBuilder()
    entry = b.node()
    final = b.build(body, entry)
    eps = {}
    for s, d in b.eps:
        eps.setdefault(s, []).append(d)

    def closure(u):
        seen = {u}
        stack = [u]
        while stack:
            for v in eps.get(stack.pop(), ()):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen

    out_edges = {}
    for s, l, d in b.edges:
        out_edges.setdefault(s, []).append((l, d))
    # renumber reachable nodes in BFS order
    order = {entry: 0}
    queue = deque([entry])
    edges = []
    exits = set()
    while queue:
        u = queue.popleft()
        cl = closure(u)
        if final in cl:
            exits.add(order[u])
        for v in sorted(cl):
            for l, d in out_edges.get(v, ()):
                if d not in order:
                    order[d] = len(order)
                    queue.append(d)
                edges.append((order[u], l, order[d]))
    return ControlFlowAutomaton(tuple(range(len(order))), tuple(dict.fromkeys(edges)),
                                0, frozenset(exits))


# ---------------------------------------------------------------------------
# printing


def _cond_text(c, top=True) -> str:
    if isinstance(c, Atom):
        return str(c)
    if isinstance(c, Not):
        return f"not {_cond_text(c.cond, False)}"
    op = "and" if isinstance(c, And) else "or"
    s = f"{_cond_text(c.left, False)} {op} {_cond_text(c.right, False)}"
    return s if top else f"({s})"


def pretty_statement(stmt, indent: int = 1) -> str:
    pad = "  " * indent
    if isinstance(stmt, Seq):
        return ";\n".join(pretty_statement(s, indent) for s in stmt.items)
    if isinstance(stmt, Guard):
        return f"{pad}assume({_cond_text(stmt.cond)})"
    if isinstance(stmt, If):
        out = f"{pad}if ({_cond_text(stmt.cond)}) {{\n{pretty_statement(stmt.then, indent + 1)}\n{pad}}}"
        if not isinstance(stmt.orelse, Skip):
            out += f" else {{\n{pretty_statement(stmt.orelse, indent + 1)}\n{pad}}}"
        return out
    if isinstance(stmt, While):
        return (f"{pad}while ({_cond_text(stmt.cond)}) {{\n"
                f"{pretty_statement(stmt.body, indent + 1)}\n{pad}}}")
    return pad + str(stmt)


def pretty(program: Program) -> str:
    sig = program.signature
    lines = []
    if program.expect:
        lines.append(f"@expect {program.expect}")
    for label, names in (("vars loc", sig.loc_vars), ("vars data", sig.data_vars),
                         ("fields loc", sig.loc_fields), ("fields data", sig.data_fields)):
        if names:
            lines.append(f"{label}: {', '.join(names)}")
    if sig.data_funcs:
        lines.append("funcs: " + ", ".join(f"{f}/{k}" for f, k in sig.data_funcs))
    for t in program.spec.triples:
        lines.append(f"@reach {t.name}: start={{{', '.join(t.start)}}} "
                     f"pointers={{{', '.join(t.pointers)}}} stop={{{', '.join(t.stop)}}}")
    lines.append("begin")
    lines.append(pretty_statement(program.body))
    lines.append("end")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# alphabet


def alphabet(sig: Signature, spec: ReachSpec | None = None, *, include_noops: bool = False,
             include_skip: bool = False) -> list:
    """Every well-sorted letter over a signature (reach constants are never written)."""
    consts = set(spec.constants) if spec else set(sig.spec_constants)
    locs, datas = list(sig.loc_vars), list(sig.data_vars)
    out = []
    if include_skip:
        out.append(Skip())
    for vars_, srt in ((locs, LOC), (datas, DATA)):
        for t in vars_:
            if t in consts:
                continue
            for s in vars_:
                if s != t or include_noops:
                    out.append(Assign(t, s, srt))
    for fld in sig.loc_fields:
        for t in locs:
            if t not in consts:
                for b in locs:
                    out.append(Load(t, b, fld, LOC))
    for fld in sig.data_fields:
        for t in datas:
            for b in locs:
                out.append(Load(t, b, fld, DATA))
    for fld in sig.loc_fields:
        for b in locs:
            for s in locs:
                out.append(Store(b, fld, s, LOC))
    for fld in sig.data_fields:
        for b in locs:
            for s in datas:
                out.append(Store(b, fld, s, DATA))
    for f, k in sig.data_funcs:
        for t in datas:
            for args in product(datas, repeat=k):
                out.append(Apply(t, f, tuple(args)))
    for t in locs:
        if t not in consts:
            out.append(Alloc(t))
    for t in locs:
        out.append(Free(t))
    for vars_, srt in ((locs, LOC), (datas, DATA)):
        for i, a in enumerate(vars_):
            for b in vars_[i + 1:] if not include_noops else vars_[i:]:
                out.append(Assume(a, b, True, srt))
                out.append(Assume(a, b, False, srt))
    return out


def letter_sorted_ok(letter, sig: Signature) -> bool:
    """Whether a letter's operands are well-sorted against the signature."""
    vs, fs = sig.var_sort, sig.field_sort
    if isinstance(letter, (Skip, AssertFalse)):
        return True
    if isinstance(letter, Assign):
        return vs(letter.target) == vs(letter.source) == letter.sort
    if isinstance(letter, Load):
        return vs(letter.base) == LOC and fs(letter.field) == vs(letter.target) == letter.sort
    if isinstance(letter, Store):
        return vs(letter.base) == LOC and fs(letter.field) == vs(letter.source) == letter.sort
    if isinstance(letter, Apply):
        return (vs(letter.target) == DATA and sig.arity(letter.func) == len(letter.args)
                and all(vs(a) == DATA for a in letter.args))
    if isinstance(letter, (Alloc, Free)):
        return vs(letter.var) == LOC
    if isinstance(letter, Assume):
        return vs(letter.left) == vs(letter.right) == letter.sort
    return False
