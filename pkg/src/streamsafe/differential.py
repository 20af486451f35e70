"""Cross-checks between the automaton, the term-level checkers and concrete heaps.

Three harnesses live here:

* ``checker_agreement`` walks every execution up to a length and compares the
  automaton's coherence flag with the term-level streaming monitor, letter by
  letter.
* ``bounded_completeness`` walks every coherent execution up to a length and,
  whenever the automaton reports an unsafe access, looks for a small forest
  heap on which the access really is unsafe.
* ``random_soundness`` runs random coherent executions on a pool of random
  forest heaps and checks that every concrete violation is predicted and that
  no execution the automaton calls infeasible runs on a heap.

``program_oracle`` applies the last two ideas to the paths of one program.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field

import numpy as np

from .automaton import (AnalysisState, Infeasible, NotStreamingCoherent, Unsafe,
                        initial_state, step, step_with_coherence)
from .fixpoint import shortest_counterexample
from .frontend import (AssertFalse, Free, Load, ReachSpec, Signature, Skip, Store, alphabet,
                       lower_to_cfa)
from .heap import (INFEASIBLE, RUNNING, VIOLATION, BudgetExceeded, HeapPool,
                   enumerate_forests, random_forest)
from .terms import StreamingMonitor, check_streaming_coherent, monitor_key


def _derefs(letter) -> int:
    return int(isinstance(letter, (Load, Store, Free)))


def _show(word) -> str:
    return " ; ".join(map(str, word))


# ---------------------------------------------------------------------------
# automaton vs term-level coherence


@dataclass
class AgreementReport:
    steps: int = 0
    flagged: int = 0
    mismatches: list = field(default_factory=list)  # (word, automaton says, monitor says)
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.mismatches


def checker_agreement(signature: Signature, spec: ReachSpec, max_len: int, *,
                      limit: int = 20) -> AgreementReport:
    """Exhaustive depth-first comparison over all words of length <= ``max_len``.

    A word is extended only while both sides consider it coherent.  Pairs of
    (automaton state, monitor state) already expanded at a shallower depth are
    not expanded again; both sides are deterministic, so the words below them
    behave identically.
    """
    t0 = time.perf_counter()
    rep = AgreementReport()
    letters = alphabet(signature, spec)
    stack = [(initial_state(spec, signature), StreamingMonitor(signature, spec), ())]
    seen = {}
    while stack:
        q, mon, word = stack.pop()
        k = len(word) + 1
        if k > max_len:
            continue
        for l in letters:
            q2 = step_with_coherence(q, l)
            mon2 = mon.copy()
            v = mon2.feed(l, k)
            rep.steps += 1
            flag = isinstance(q2, NotStreamingCoherent)
            rep.flagged += flag
            if flag != (v is not None):
                rep.mismatches.append((word + (l,), str(q2) if flag else "coherent",
                                       str(v) if v else "coherent"))
                if len(rep.mismatches) >= limit:
                    rep.elapsed = time.perf_counter() - t0
                    return rep
                continue
            if not isinstance(q2, AnalysisState):
                continue
            key = (q2, monitor_key(mon2))
            if seen.get(key, max_len + 1) <= k:
                continue
            seen[key] = k
            stack.append((q2, mon2, word + (l,)))
    rep.elapsed = time.perf_counter() - t0
    return rep


# ---------------------------------------------------------------------------
# bounded completeness


@dataclass
class CompletenessReport:
    heaps: int = 0
    nodes: int = 0
    unsafe: int = 0
    misses: list = field(default_factory=list)   # words without a small witness
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.misses


def bounded_completeness(signature: Signature, spec: ReachSpec, max_len: int, *,
                         data_size: int = 2, limit: int = 20) -> CompletenessReport:
    """Every unsafe coherent word of length <= ``max_len`` must have a forest witness.

    The witness must have at most ``#loc vars + derefs + 1`` static locations,
    where ``derefs`` counts the dereferencing letters of the word.  All heaps up
    to the largest such bound are run side by side; words reaching the same
    automaton state, heap-pool configuration and dereference count are
    explored once.
    """
    t0 = time.perf_counter()
    nv = len(signature.loc_vars)
    heaps = list(enumerate_forests(spec, signature, nv + max_len + 1, data_size=data_size))
    pool = HeapPool(heaps, spec, signature, max_allocs=max_len)
    rep = CompletenessReport(heaps=len(heaps))
    letters = alphabet(signature, spec)
    seen = {}
    stack = [(initial_state(spec, signature), pool.initial, ())]
    while stack:
        q, cfg, word = stack.pop()
        k = len(word) + 1
        d = sum(map(_derefs, word))
        for l in letters:
            q2 = step_with_coherence(q, l)
            if not isinstance(q2, (AnalysisState, Unsafe)):
                continue
            cfg2 = pool.step(cfg, l, k)
            rep.nodes += 1
            d2 = d + _derefs(l)
            if isinstance(q2, Unsafe):
                rep.unsafe += 1
                hit = (cfg2.status == VIOLATION) & (pool.sizes <= nv + d2 + 1)
                if not hit.any() and len(rep.misses) < limit:
                    rep.misses.append(word + (l,))
                continue
            if k >= max_len:
                continue
            key = (q2, cfg2.digest(), d2)
            if seen.get(key, max_len + 1) <= k:
                continue
            seen[key] = k
            stack.append((q2, cfg2, word + (l,)))
    rep.elapsed = time.perf_counter() - t0
    return rep


# ---------------------------------------------------------------------------
# random soundness


@dataclass
class SoundnessReport:
    executions: int = 0
    heaps: int = 0
    concrete_violations: int = 0
    unpredicted: list = field(default_factory=list)   # (word, heap index)
    feasible_but_infeasible: list = field(default_factory=list)
    outcomes: dict = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.unpredicted and not self.feasible_but_infeasible


def random_heap_pool(spec: ReachSpec, signature: Signature, count: int, max_nodes: int,
                     seed: int, max_allocs: int = 16) -> HeapPool:
    rng = random.Random(seed)
    low = max(1, len(set(spec.constants)))
    heaps = [random_forest(spec, signature, rng.randint(low, max(low, max_nodes)),
                           seed=rng.randrange(1 << 30))
             for _ in range(count)]
    return HeapPool(heaps, spec, signature, max_allocs=max_allocs)


def random_coherent_word(signature: Signature, spec: ReachSpec, rng: random.Random,
                         max_len: int, *, letters=None, stop_bias: float = 0.05) -> tuple:
    """A random word that the automaton considers coherent at every letter.

    Letters that would end the run (infeasible or unsafe) are kept with
    probability ``stop_bias`` and then end the word.
    """
    letters = letters or alphabet(signature, spec)
    q = initial_state(spec, signature)
    word = []
    length = rng.randint(1, max_len)
    while len(word) < length:
        for _ in range(64):
            l = rng.choice(letters)
            q2 = step_with_coherence(q, l)
            if isinstance(q2, NotStreamingCoherent):
                continue
            if isinstance(q2, AnalysisState) or rng.random() < stop_bias:
                break
        else:
            break
        if isinstance(q2, NotStreamingCoherent):
            break
        word.append(l)
        q = q2
        if not isinstance(q, AnalysisState):
            break
    return tuple(word)


def check_word_on_pool(word, pool: HeapPool, spec: ReachSpec, signature: Signature):
    """Compare the automaton run of ``word`` with its concrete runs on ``pool``.

    Returns ``(final automaton outcome, concrete configuration, unpredicted
    heap indices, heap indices still running past an infeasible point)``.
    """
    q = initial_state(spec, signature)
    first_infeasible = None
    cfg = pool.initial
    for k, l in enumerate(word, 1):
        q = step(q, l)
        if isinstance(q, Infeasible) and first_infeasible is None:
            first_infeasible = k
        cfg = pool.step(cfg, l, k)
    viol = np.flatnonzero(cfg.status == VIOLATION)
    unpredicted = [] if isinstance(q, Unsafe) else viol.tolist()
    escaped = []
    if first_infeasible is not None:
        late = (cfg.status == RUNNING) | (cfg.at > first_infeasible)
        escaped = np.flatnonzero(late).tolist()
    return q, cfg, unpredicted, escaped


def random_soundness(signature: Signature, spec: ReachSpec, *, executions: int,
                     heaps: int = 1000, max_len: int = 12, max_nodes: int = 6,
                     seed: int = 0, limit: int = 20) -> SoundnessReport:
    t0 = time.perf_counter()
    rng = random.Random(seed)
    pool = random_heap_pool(spec, signature, heaps, max_nodes, seed, max_allocs=max_len)
    letters = alphabet(signature, spec)
    rep = SoundnessReport(heaps=len(pool.heaps))
    while rep.executions < executions:
        word = random_coherent_word(signature, spec, rng, max_len, letters=letters)
        if not word or check_streaming_coherent(word, spec, signature) is not None:
            continue
        rep.executions += 1
        q, cfg, unpredicted, escaped = check_word_on_pool(word, pool, spec, signature)
        kind = type(q).__name__ if not isinstance(q, AnalysisState) else "Normal"
        rep.outcomes[kind] = rep.outcomes.get(kind, 0) + 1
        rep.concrete_violations += int((cfg.status == VIOLATION).sum())
        if unpredicted and len(rep.unpredicted) < limit:
            rep.unpredicted.append((word, unpredicted[0]))
        if escaped and len(rep.feasible_but_infeasible) < limit:
            rep.feasible_but_infeasible.append((word, escaped[0]))
    rep.elapsed = time.perf_counter() - t0
    return rep


# ---------------------------------------------------------------------------
# per-program oracle


@dataclass
class OracleReport:
    trials: int = 0
    heaps: int = 0
    coherent: bool = True
    not_sc_trace: list = field(default_factory=list)
    discrepancies: list = field(default_factory=list)   # dicts, one per finding
    unwitnessed: int = 0        # unsafe runs with no violating heap in the pool
    notes: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return self.coherent and not self.discrepancies

    def to_json(self) -> dict:
        return {"trials": self.trials, "heaps": self.heaps, "streaming_coherent": self.coherent,
                "discrepancies": self.discrepancies, "unwitnessed": self.unwitnessed,
                "notes": self.notes, "not_sc_trace": self.not_sc_trace,
                "time_ms": round(self.elapsed * 1000, 3)}


def _program_heaps(spec, sig, max_heap, seed, cap=20000):
    try:
        heaps = []
        for h in enumerate_forests(spec, sig, max_heap, cap=cap):
            heaps.append(h)
        return heaps, None
    except BudgetExceeded:
        rng = random.Random(seed)
        low = max(1, len(set(spec.constants)))
        heaps = [random_forest(spec, sig, rng.randint(low, max(low, max_heap)),
                               seed=rng.randrange(1 << 30)) for _ in range(cap)]
        return heaps, f"more than {cap} heaps up to {max_heap} nodes; sampled {cap} instead"


def _random_path(cfa, q0, rng, max_len):
    """Random walk through the control-flow automaton that avoids infeasible steps."""
    node, q, word = cfa.entry, q0, []
    while len(word) < max_len:
        options = []
        for l, dst in cfa.successors(node):
            if isinstance(l, AssertFalse):
                continue
            q2 = step(q, l)
            if not isinstance(q2, Infeasible):
                options.append((l, dst, q2))
        if not options:
            break
        l, node, q = rng.choice(options)
        word.append(l)
        if not isinstance(q, AnalysisState):
            break
    return word


def program_oracle(program, spec: ReachSpec | None = None, *, max_heap: int = 5,
                   trials: int = 1000, seed: int = 0, max_len: int = 24) -> OracleReport:
    """Differential check of one program's paths against concrete forest heaps."""
    t0 = time.perf_counter()
    spec = spec or program.spec
    sig = program.signature
    rep = OracleReport()
    v = shortest_counterexample(program, spec)
    if v.kind == "not-sc":
        rep.coherent = False
        rep.not_sc_trace = v.trace
        rep.notes.append("program is not streaming-coherent; no differential run")
        rep.elapsed = time.perf_counter() - t0
        return rep
    if trials <= 0:
        rep.notes.append("0 trials")
        rep.elapsed = time.perf_counter() - t0
        return rep
    heaps, note = _program_heaps(spec, sig, max_heap, seed)
    if note:
        rep.notes.append(note)
    rep.heaps = len(heaps)
    pool = HeapPool(heaps, spec, sig, max_allocs=max_len)
    cfa = lower_to_cfa(program)
    rng = random.Random(seed)
    q0 = initial_state(spec, sig)
    for _ in range(trials):
        word = [l for l in _random_path(cfa, q0, rng, max_len) if not isinstance(l, Skip)]
        rep.trials += 1
        q, cfg, unpredicted, escaped = check_word_on_pool(word, pool, spec, sig)
        for kind, idx in (("unpredicted-violation", unpredicted), ("infeasible-but-ran", escaped)):
            if idx:
                best = min(idx, key=lambda i: (pool.heaps[i].n_static, i))
                cut = int(cfg.at[best]) or len(word)
                rep.discrepancies.append({
                    "kind": kind, "trace": [str(l) for l in word[:cut]],
                    "heap": pool.heaps[best].to_json()})
        if isinstance(q, Unsafe) and not (cfg.status == VIOLATION).any():
            rep.unwitnessed += 1
    if rep.unwitnessed:
        rep.notes.append(f"{rep.unwitnessed} unsafe runs had no violating heap "
                         f"with at most {max_heap} nodes")
    rep.elapsed = time.perf_counter() - t0
    return rep
