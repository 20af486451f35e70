"""Concrete heaps and a reference interpreter.

Static locations are ``0 .. n_static-1``; the k-th ``alloc`` of a run yields
location ``n_static + k``.  Fresh cells point to themselves on every location
field until written, and carry ``dyn_data[field]`` on data fields.  Data
values are small integers ``0 .. data_size-1``.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from itertools import product
from typing import Iterator

import numpy as np

from .frontend import (DATA, LOC, Alloc, Apply, AssertFalse, Assign, Assume, Free, Load,
                       ReachSpec, Signature, Skip, Store)


@dataclass(frozen=True, eq=True)
class ConcreteForestHeap:
    n_static: int
    data_size: int
    loc_init: dict          # loc var -> static location
    data_init: dict         # data var -> value
    loc_fields: dict        # field -> tuple of targets, one per static location
    data_fields: dict       # field -> tuple of values, one per static location
    funcs: dict = field(default_factory=dict)     # name -> tuple table indexed base data_size
    dyn_data: dict = field(default_factory=dict)  # data field -> value on fresh cells

    def const(self, var: str) -> int:
        return self.loc_init[var]

    def apply(self, func: str, args) -> int:
        idx = 0
        for a in args:
            idx = idx * self.data_size + a
        return self.funcs[func][idx]

    def to_json(self) -> str:
        return json.dumps({
            "n_static": self.n_static, "data_size": self.data_size,
            "loc_init": self.loc_init, "data_init": self.data_init,
            "loc_fields": {k: list(v) for k, v in self.loc_fields.items()},
            "data_fields": {k: list(v) for k, v in self.data_fields.items()},
            "funcs": {k: list(v) for k, v in self.funcs.items()},
            "dyn_data": self.dyn_data}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ConcreteForestHeap":
        d = json.loads(text)
        return cls(d["n_static"], d["data_size"], d["loc_init"], d["data_init"],
                   {k: tuple(v) for k, v in d["loc_fields"].items()},
                   {k: tuple(v) for k, v in d["data_fields"].items()},
                   {k: tuple(v) for k, v in d["funcs"].items()}, d["dyn_data"])


# ---------------------------------------------------------------------------
# forest condition and reach sets


def is_forest(heap: ConcreteForestHeap, spec: ReachSpec) -> bool:
    triples = spec.triples
    if any(len(t.stop) != 1 for t in triples):
        return False
    stops = [heap.const(t.stop_var) for t in triples]
    for s in set(stops):
        if any(tab[s] != s for tab in heap.loc_fields.values()):
            return False
    # every (triple, traversal term) pair, plus the stop constants, by location
    where = {}
    for i, t in enumerate(triples):
        where.setdefault(stops[i], set()).add((i, (t.stop_var,)))
        queue = []
        for c in t.start:
            loc = heap.const(c)
            where.setdefault(loc, set()).add((i, (c,)))
            queue.append(((c,), loc))
        expanded = set()
        while queue:
            term, loc = queue.pop()
            if loc == stops[i]:
                continue
            if loc in expanded:
                return False  # a second traversal term on a non-stop node
            expanded.add(loc)
            for p in t.pointers:
                nxt = heap.loc_fields[p][loc]
                sub = term + (p,)
                where.setdefault(nxt, set()).add((i, sub))
                queue.append((sub, nxt))
    for loc, occ in where.items():
        if len(occ) < 2:
            continue
        occ = sorted(occ)
        for a in range(len(occ)):
            for b in range(a + 1, len(occ)):
                (i, ti), (j, tj) = occ[a], occ[b]
                if loc == stops[i] == stops[j]:
                    continue
                if ti == tj and len(ti) == 1 and ti[0] in triples[i].start and ti[0] in triples[j].start:
                    continue
                return False
    return True


def reach_set(heap: ConcreteForestHeap, spec: ReachSpec) -> set:
    out = set()
    for t in spec.triples:
        stop = {heap.const(c) for c in t.stop}
        todo = [heap.const(c) for c in t.start if heap.const(c) not in stop]
        seen = set()
        while todo:
            e = todo.pop()
            if e in seen:
                continue
            seen.add(e)
            for p in t.pointers:
                n = heap.loc_fields[p][e]
                if n not in stop:
                    todo.append(n)
        out |= seen
    return out


# ---------------------------------------------------------------------------
# interpreter


@dataclass
class ConcreteTrace:
    valuations: list = field(default_factory=list)   # per step: var -> value
    alloc_sets: list = field(default_factory=list)   # per step: frozenset
    feasible_prefix_len: int = 0
    violation: tuple | None = None     # (1-based step, reason)
    infeasible_at: int | None = None
    assert_at: int | None = None       # first assert(false) reached feasibly

    @property
    def outcome(self) -> str:
        if self.violation:
            return "violation"
        if self.infeasible_at:
            return "infeasible"
        return "ok"


class _Machine:
    def __init__(self, heap: ConcreteForestHeap, spec: ReachSpec):
        self.heap = heap
        self.vals = dict(heap.loc_init)
        self.vals.update(heap.data_init)
        self.lf = {f: dict(enumerate(t)) for f, t in heap.loc_fields.items()}
        self.df = {f: dict(enumerate(t)) for f, t in heap.data_fields.items()}
        self.alloc = set(reach_set(heap, spec))
        self.allocations = 0

    def read(self, fld: str, loc: int, sort: str):
        if sort == LOC:
            return self.lf[fld].get(loc, loc)
        return self.df[fld].get(loc, self.heap.dyn_data.get(fld, 0))


def run_execution(heap: ConcreteForestHeap, spec: ReachSpec, execution, record: bool = True) -> ConcreteTrace:
    m = _Machine(heap, spec)
    tr = ConcreteTrace()
    if record:
        tr.valuations.append(dict(m.vals))
        tr.alloc_sets.append(frozenset(m.alloc))
    vals = m.vals
    for k, l in enumerate(execution, 1):
        if isinstance(l, (Load, Store)) and vals[l.base] not in m.alloc:
            tr.violation = (k, "deref-unallocated")
            break
        if isinstance(l, Assign):
            vals[l.target] = vals[l.source]
        elif isinstance(l, Load):
            vals[l.target] = m.read(l.field, vals[l.base], l.sort)
        elif isinstance(l, Store):
            (m.lf if l.sort == LOC else m.df)[l.field][vals[l.base]] = vals[l.source]
        elif isinstance(l, Apply):
            vals[l.target] = heap.apply(l.func, [vals[a] for a in l.args])
        elif isinstance(l, Alloc):
            e = heap.n_static + m.allocations
            m.allocations += 1
            vals[l.var] = e
            m.alloc.add(e)
        elif isinstance(l, Free):
            if vals[l.var] not in m.alloc:
                tr.violation = (k, "free-unallocated")
                break
            m.alloc.discard(vals[l.var])
        elif isinstance(l, Assume):
            if (vals[l.left] == vals[l.right]) != l.equal:
                tr.infeasible_at = k
                break
        elif isinstance(l, AssertFalse):
            if tr.assert_at is None:
                tr.assert_at = k
        elif not isinstance(l, Skip):
            raise TypeError(f"not a letter: {l!r}")
        tr.feasible_prefix_len = k
        if record:
            tr.valuations.append(dict(vals))
            tr.alloc_sets.append(frozenset(m.alloc))
    return tr


def eval_term(heap: ConcreteForestHeap, term, field_sorts: dict | None = None) -> int:
    """Value of a ground term in the initial heap (fresh cells numbered after the static ones)."""
    op = term.op
    if op == "var":
        return heap.loc_init[term.name] if term.name in heap.loc_init else heap.data_init[term.name]
    if op == "dyn":
        return heap.n_static
    if op == "fdyn":
        return eval_term(heap, term.args[0], field_sorts) + 1
    if op == "fld":
        loc = eval_term(heap, term.args[0], field_sorts)
        if term.name in heap.loc_fields:
            tab = heap.loc_fields[term.name]
            return tab[loc] if loc < heap.n_static else loc
        tab = heap.data_fields[term.name]
        return tab[loc] if loc < heap.n_static else heap.dyn_data.get(term.name, 0)
    return heap.apply(term.name, [eval_term(heap, a, field_sorts) for a in term.args])


# ---------------------------------------------------------------------------
# generators


def _pointer_children(spec: ReachSpec):
    return [tuple(t.pointers) for t in spec.triples]


def random_forest(spec: ReachSpec, signature: Signature, max_nodes: int, seed: int,
                  data_size: int = 2) -> ConcreteForestHeap:
    """A random forest heap; deterministic in ``seed``."""
    for attempt in range(64):
        rng = random.Random(f"{seed}:{attempt}")
        heap = _random_heap(spec, signature, max_nodes, rng, data_size, merge_stops=attempt > 8)
        if heap is not None and is_forest(heap, spec):
            return heap
    raise ValueError("could not build a forest for this specification")


def _random_heap(spec, sig, max_nodes, rng, data_size, merge_stops=False):
    consts = spec.constants
    n = max(1, max_nodes)
    free = list(range(n))
    rng.shuffle(free)
    used = []

    def take():
        if not free:
            return None
        loc = free.pop()
        used.append(loc)
        return loc

    const = {}
    stop_locs = []
    for t in spec.triples:
        c = t.stop_var
        if c in const:
            continue
        if stop_locs and (merge_stops or rng.random() < 0.5 or not free):
            const[c] = rng.choice(stop_locs)
        else:
            const[c] = take()
            if const[c] is None:
                return None
            stop_locs.append(const[c])
    stop_of = [const[t.stop_var] for t in spec.triples]
    lf = {f: [None] * n for f in sig.loc_fields}
    for s in stop_locs:
        for f in sig.loc_fields:
            lf[f][s] = s
    owner = {}  # tree node -> set of triple indices
    for i, t in enumerate(spec.triples):
        for c in t.start:
            if c in const:
                if const[c] not in stop_locs:
                    owner.setdefault(const[c], set()).add(i)
                continue
            spare = len(free) - sum(1 for c2 in consts if c2 not in const)
            if rng.random() < 0.2 or spare < 0 or not free:
                const[c] = stop_of[i]
            else:
                const[c] = take()
                owner.setdefault(const[c], set()).add(i)
    # grow the trees breadth first
    queue = sorted(owner)
    seen = set()
    while queue:
        node = queue.pop(0)
        if node in seen:
            continue
        seen.add(node)
        trees = sorted(owner[node])
        for i in trees:
            for p in spec.triples[i].pointers:
                if lf[p][node] is not None:
                    if lf[p][node] != stop_of[i]:
                        return None
                    continue
                shared = sum(1 for j in trees if p in spec.triples[j].pointers) > 1
                if shared or not free or rng.random() < 0.4:
                    lf[p][node] = stop_of[i]
                else:
                    child = take()
                    lf[p][node] = child
                    owner.setdefault(child, set()).add(i)
                    queue.append(child)
    for f in sig.loc_fields:
        for loc in range(n):
            if lf[f][loc] is None:
                lf[f][loc] = rng.randrange(n)
    loc_init = dict(const)
    for v in sig.loc_vars:
        if v not in loc_init:
            loc_init[v] = rng.randrange(n)
    data_init = {a: rng.randrange(data_size) for a in sig.data_vars}
    df = {f: tuple(rng.randrange(data_size) for _ in range(n)) for f in sig.data_fields}
    funcs = {f: tuple(rng.randrange(data_size) for _ in range(data_size ** k))
             for f, k in sig.data_funcs}
    dyn = {f: rng.randrange(data_size) for f in sig.data_fields}
    return ConcreteForestHeap(n, data_size, loc_init, data_init,
                              {f: tuple(v) for f, v in lf.items()}, df, funcs, dyn)


class BudgetExceeded(RuntimeError):
    pass


def _loc_shapes(spec: ReachSpec, sig: Signature, max_nodes: int) -> Iterator[tuple]:
    """Accessible location structures in canonical discovery order.

    Locations are numbered in the order they are first reached: variables in
    signature order, then each discovered location's fields in field order.
    Locations unreachable from every variable are irrelevant to executions
    and are not generated, so each isomorphism class appears exactly once.
    """
    loc_vars = list(sig.loc_vars)
    fields = list(sig.loc_fields)
    stop_vars = {t.stop_var for t in spec.triples}

    def assign_vars(k, init, count):
        if k == len(loc_vars):
            stops = {init[v] for v in stop_vars}
            yield from fill(0, 0, init, {f: {} for f in fields}, count, stops)
            return
        for loc in range(min(count + 1, max_nodes)):
            init[loc_vars[k]] = loc
            yield from assign_vars(k + 1, init, max(count, loc + 1))
        del init[loc_vars[k]]

    def fill(loc, fi, init, tabs, count, stops):
        if loc == count:
            yield count, dict(init), {f: tuple(tabs[f][l] for l in range(count)) for f in fields}
            return
        if fi == len(fields):
            yield from fill(loc + 1, 0, init, tabs, count, stops)
            return
        f = fields[fi]
        if loc in stops:
            tabs[f][loc] = loc
            yield from fill(loc, fi + 1, init, tabs, count, stops)
            return
        for tgt in range(min(count + 1, max_nodes)):
            tabs[f][loc] = tgt
            yield from fill(loc, fi + 1, init, tabs, max(count, tgt + 1), stops)
        tabs[f].pop(loc, None)

    if not loc_vars:
        return
    yield from assign_vars(0, {}, 0)


def enumerate_forests(spec: ReachSpec, signature: Signature, max_nodes: int,
                      data_size: int = 2, cap: int = 5_000_000) -> Iterator[ConcreteForestHeap]:
    """Every forest heap with at most ``max_nodes`` accessible static locations.

    Data values range over ``data_size`` elements with every function table.
    Raises ``BudgetExceeded`` after ``cap`` candidate heaps.
    """
    if max_nodes < max(1, len(set(spec.constants))):
        return
    seen = 0
    data_vars = list(signature.data_vars)
    dfields = list(signature.data_fields)
    funcs = list(signature.data_funcs)
    for n, loc_init, tabs in _loc_shapes(spec, signature, max_nodes):
        probe = ConcreteForestHeap(n, data_size, loc_init, {}, tabs, {}, {}, {})
        if not is_forest(probe, spec):
            continue
        choices = ([range(data_size)] * len(data_vars)
                   + [range(data_size)] * (n * len(dfields))
                   + [range(data_size)] * len(dfields)
                   + [list(product(range(data_size), repeat=data_size ** k)) for _, k in funcs])
        for pick in product(*choices):
            seen += 1
            if seen > cap:
                raise BudgetExceeded(f"more than {cap} heaps with max_nodes={max_nodes}")
            it = iter(pick)
            dinit = {a: next(it) for a in data_vars}
            dft = {f: tuple(next(it) for _ in range(n)) for f in dfields}
            dyn = {f: next(it) for f in dfields}
            ftab = {f: tuple(next(it)) for f, _ in funcs}
            yield ConcreteForestHeap(n, data_size, loc_init, dinit, tabs, dft, ftab, dyn)


# ---------------------------------------------------------------------------
# vectorized evaluation over a pool of heaps

RUNNING, INFEASIBLE, VIOLATION = 0, 1, 2


class HeapPool:
    """Many heaps over one signature, run side by side with numpy.

    Every heap is padded to the largest static size; the k-th allocation of a
    run is location ``width + k`` in every heap of the pool.
    """

    def __init__(self, heaps: list, spec: ReachSpec, signature: Signature, max_allocs: int = 16):
        self.heaps = list(heaps)
        self.spec, self.sig = spec, signature
        H = len(self.heaps)
        self.width = W = max((h.n_static for h in self.heaps), default=1)
        self.total = T = W + max_allocs
        self.sizes = np.array([h.n_static for h in self.heaps], dtype=np.int16)
        self.var_index = {v: i for i, v in enumerate(signature.variables)}
        self.ds = max((h.data_size for h in self.heaps), default=2)
        vals = np.zeros((H, len(self.var_index)), dtype=np.int16)
        lf = np.zeros((len(signature.loc_fields), H, T), dtype=np.int16)
        df = np.zeros((len(signature.data_fields), H, T), dtype=np.int16)
        alloc = np.zeros((H, T), dtype=bool)
        lf[:] = np.arange(T, dtype=np.int16)
        self.funcs = {}
        for f, k in signature.data_funcs:
            self.funcs[f] = np.zeros((H, self.ds ** k), dtype=np.int16)
        for h_i, h in enumerate(self.heaps):
            for v, i in self.var_index.items():
                vals[h_i, i] = h.loc_init[v] if v in h.loc_init else h.data_init[v]
            for fi, f in enumerate(signature.loc_fields):
                lf[fi, h_i, :h.n_static] = h.loc_fields[f]
            for fi, f in enumerate(signature.data_fields):
                df[fi, h_i, :h.n_static] = h.data_fields[f]
                df[fi, h_i, W:] = h.dyn_data.get(f, 0)
            for f, _ in signature.data_funcs:
                self.funcs[f][h_i] = h.funcs[f]
            for e in reach_set(h, spec):
                alloc[h_i, e] = True
        self.lfi = {f: i for i, f in enumerate(signature.loc_fields)}
        self.dfi = {f: i for i, f in enumerate(signature.data_fields)}
        self.initial = PoolConfig(vals, lf, df, alloc, 0,
                                  np.zeros(H, dtype=np.int8), np.zeros(H, dtype=np.int16))

    def step(self, cfg: "PoolConfig", letter, k: int) -> "PoolConfig":
        """Apply a letter (1-based position ``k``) to every running heap."""
        run = cfg.status == RUNNING
        vals, lf, df, alloc = cfg.vals, cfg.lf, cfg.df, cfg.alloc
        status, at = cfg.status, cfg.at
        rows = np.arange(vals.shape[0])
        vi = self.var_index
        allocations = cfg.allocations
        if isinstance(letter, (Load, Store, Free)):
            base = letter.var if isinstance(letter, Free) else letter.base
            bad = run & ~alloc[rows, vals[:, vi[base]]]
            if bad.any():
                status, at = status.copy(), at.copy()
                status[bad] = VIOLATION
                at[bad] = k
                run = run & ~bad
        if isinstance(letter, Assign):
            vals = vals.copy()
            vals[:, vi[letter.target]] = vals[:, vi[letter.source]]
        elif isinstance(letter, Load):
            vals = vals.copy()
            b = vals[:, vi[letter.base]]
            if letter.sort == LOC:
                vals[:, vi[letter.target]] = lf[self.lfi[letter.field], rows, b]
            else:
                vals[:, vi[letter.target]] = df[self.dfi[letter.field], rows, b]
        elif isinstance(letter, Store):
            b = vals[:, vi[letter.base]]
            src = vals[:, vi[letter.source]]
            r = rows[run]
            if letter.sort == LOC:
                lf = lf.copy()
                lf[self.lfi[letter.field], r, b[run]] = src[run]
            else:
                df = df.copy()
                df[self.dfi[letter.field], r, b[run]] = src[run]
        elif isinstance(letter, Apply):
            vals = vals.copy()
            idx = np.zeros(vals.shape[0], dtype=np.int64)
            for a in letter.args:
                idx = idx * self.ds + vals[:, vi[a]]
            vals[:, vi[letter.target]] = self.funcs[letter.func][rows, idx]
        elif isinstance(letter, Alloc):
            e = self.width + allocations
            allocations += 1
            vals = vals.copy()
            vals[:, vi[letter.var]] = e
            alloc = alloc.copy()
            alloc[:, e] = True
        elif isinstance(letter, Free):
            alloc = alloc.copy()
            r = rows[run]
            alloc[r, vals[run, vi[letter.var]]] = False
        elif isinstance(letter, Assume):
            eq = vals[:, vi[letter.left]] == vals[:, vi[letter.right]]
            bad = run & (eq != letter.equal)
            if bad.any():
                status, at = status.copy(), at.copy()
                status[bad] = INFEASIBLE
                at[bad] = k
        return PoolConfig(vals, lf, df, alloc, allocations, status, at)

    def run(self, execution) -> "PoolConfig":
        cfg = self.initial
        for k, l in enumerate(execution, 1):
            cfg = self.step(cfg, l, k)
        return cfg


@dataclass
class PoolConfig:
    vals: np.ndarray
    lf: np.ndarray
    df: np.ndarray
    alloc: np.ndarray
    allocations: int
    status: np.ndarray   # RUNNING / INFEASIBLE / VIOLATION per heap
    at: np.ndarray       # step where a heap stopped

    def digest(self) -> bytes:
        """Fingerprint of the running heaps' configurations (stopped heaps only by status)."""
        import hashlib
        run = self.status == RUNNING
        h = hashlib.blake2b(digest_size=16)
        h.update(self.status.tobytes())
        h.update(np.where(run[:, None], self.vals, -1).tobytes())
        h.update(np.where(run[None, :, None], self.lf, -1).tobytes())
        h.update(np.where(run[None, :, None], self.df, -1).tobytes())
        h.update(np.where(run[:, None], self.alloc, False).tobytes())
        h.update(self.allocations.to_bytes(2, "little"))
        return h.digest()
