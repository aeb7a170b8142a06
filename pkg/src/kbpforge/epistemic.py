"""Epistemic formula evaluation over layered systems.

Semantics (clock-based local states): agent ``i``'s local state at a global
state is (time, observation), so two states are indistinguishable to ``i``
exactly when they sit in the same layer and give ``i`` the same observation.

* ``Knows(i, f)``: f holds at every same-layer state with the same
  observation for i (veridical: each state is in its own class).
* ``Believes(i, f)`` = ``Knows(i, InN(i) => f)`` — belief relative to the
  indexical nonfaulty set N; trivially true when i knows it is faulty.
* ``EveryoneN(f)``: every agent in N(s) believes f; vacuously true where
  N(s) is empty.
* ``CommonN(f)``: greatest fixpoint of X ↦ EveryoneN(f ∧ X), computed by
  downward iteration (layers are finite, so it terminates).

Evaluation is vectorized: a formula denotes a boolean vector over one layer.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .exchanges import TRACK_DECIDED as _FIELD_DECIDED
from .exchanges import TRACK_DECISION as _FIELD_DECISION
from .exchanges import TRACK_JD as _FIELD_JD
from .model import LayeredSystem


class FormulaError(ValueError):
    """Malformed formula: unknown atom, bad agent index, parse failure,
    a fixpoint variable under negation, or an unbound variable."""


# ---------------------------------------------------------------------------
# Formula AST.  All nodes are frozen (hashable) so evaluation can memoize
# closed subformulas per layer.


class Formula:
    __slots__ = ()

    def __and__(self, other: "Formula") -> "Formula":
        return conj(self, other)

    def __or__(self, other: "Formula") -> "Formula":
        return disj(self, other)

    def __invert__(self) -> "Formula":
        return Not(self)


@dataclass(frozen=True)
class TrueF(Formula):
    pass


@dataclass(frozen=True)
class FalseF(Formula):
    pass


@dataclass(frozen=True)
class ExistsVote(Formula):
    """Some agent's initial vote is ``value``."""

    value: int


@dataclass(frozen=True)
class VoteIs(Formula):
    agent: int
    value: int


@dataclass(frozen=True)
class InN(Formula):
    """``agent`` belongs to the indexical nonfaulty set."""

    agent: int


@dataclass(frozen=True)
class Decided(Formula):
    """``agent`` has decided (decision-tracking exchanges only)."""

    agent: int


@dataclass(frozen=True)
class DecisionIs(Formula):
    agent: int
    value: int


@dataclass(frozen=True)
class JustDecided(Formula):
    """A decide-``value`` message reached ``agent`` in the round that just
    ended (decision-tracking exchanges; value 0 wins when both arrive)."""

    agent: int
    value: int


@dataclass(frozen=True)
class Deciding(Formula):
    """``agent`` decides ``value`` at the current state, this very round.

    Has no row encoding: it refers to actions being taken *now*, so the
    evaluator needs an external resolver (synthesis supplies the actions it
    has staged for the layer)."""

    agent: int
    value: int


@dataclass(frozen=True)
class Not(Formula):
    sub: Formula


@dataclass(frozen=True)
class And(Formula):
    args: tuple[Formula, ...]


@dataclass(frozen=True)
class Or(Formula):
    args: tuple[Formula, ...]


@dataclass(frozen=True)
class Implies(Formula):
    lhs: Formula
    rhs: Formula


@dataclass(frozen=True)
class Knows(Formula):
    agent: int
    sub: Formula


@dataclass(frozen=True)
class Believes(Formula):
    agent: int
    sub: Formula


@dataclass(frozen=True)
class EveryoneN(Formula):
    sub: Formula


@dataclass(frozen=True)
class CommonN(Formula):
    sub: Formula


@dataclass(frozen=True)
class Var(Formula):
    name: str


@dataclass(frozen=True)
class Gfp(Formula):
    """Greatest fixpoint ``gfp name . body``; ``name`` must occur only
    positively in ``body``."""

    name: str
    body: Formula


TRUE = TrueF()
FALSE = FalseF()


def conj(*args: Formula) -> Formula:
    flat: list[Formula] = []
    for a in args:
        if isinstance(a, And):
            flat.extend(a.args)
        elif isinstance(a, TrueF):
            continue
        else:
            flat.append(a)
    if any(isinstance(a, FalseF) for a in flat):
        return FALSE
    if not flat:
        return TRUE
    if len(flat) == 1:
        return flat[0]
    return And(tuple(flat))


def disj(*args: Formula) -> Formula:
    flat: list[Formula] = []
    for a in args:
        if isinstance(a, Or):
            flat.extend(a.args)
        elif isinstance(a, FalseF):
            continue
        else:
            flat.append(a)
    if any(isinstance(a, TrueF) for a in flat):
        return TRUE
    if not flat:
        return FALSE
    if len(flat) == 1:
        return flat[0]
    return Or(tuple(flat))


_FREE_VARS: dict[Formula, frozenset[str]] = {}


def free_vars(f: Formula) -> frozenset[str]:
    hit = _FREE_VARS.get(f)
    if hit is not None:
        return hit
    if isinstance(f, Var):
        out = frozenset([f.name])
    elif isinstance(f, Gfp):
        out = free_vars(f.body) - {f.name}
    elif isinstance(f, Not):
        out = free_vars(f.sub)
    elif isinstance(f, (And, Or)):
        out = frozenset().union(*(free_vars(a) for a in f.args)) if f.args else frozenset()
    elif isinstance(f, Implies):
        out = free_vars(f.lhs) | free_vars(f.rhs)
    elif isinstance(f, (Knows, Believes, EveryoneN, CommonN)):
        out = free_vars(f.sub)
    else:
        out = frozenset()
    _FREE_VARS[f] = out
    return out


def _check_positive(f: Formula, name: str, positive: bool = True) -> None:
    """Reject fixpoint variables under an odd number of negations; the
    downward iteration is only sound for monotone bodies."""
    if isinstance(f, Var):
        if f.name == name and not positive:
            raise FormulaError(
                f"fixpoint variable {name!r} occurs under a negation"
            )
    elif isinstance(f, Not):
        _check_positive(f.sub, name, not positive)
    elif isinstance(f, (And, Or)):
        for a in f.args:
            _check_positive(a, name, positive)
    elif isinstance(f, Implies):
        _check_positive(f.lhs, name, not positive)
        _check_positive(f.rhs, name, positive)
    elif isinstance(f, (Knows, Believes, EveryoneN, CommonN)):
        _check_positive(f.sub, name, positive)
    elif isinstance(f, Gfp):
        if f.name != name:  # same name shadows the outer binder
            _check_positive(f.body, name, positive)


# ---------------------------------------------------------------------------
# Evaluation


DecidingResolver = Callable[[int, int, int], np.ndarray]


class Evaluator:
    """Evaluates formulas layer by layer over one LayeredSystem.

    ``deciding`` resolves :class:`Deciding` atoms: a callable
    ``(layer, agent, value) -> bool vector`` over the layer's states.
    """

    def __init__(
        self,
        system: LayeredSystem,
        deciding: Optional[DecidingResolver] = None,
    ):
        self.system = system
        self.deciding = deciding
        self._memo: dict[tuple[int, Formula], np.ndarray] = {}

    def eval(
        self,
        formula: Formula,
        m: int,
        env: Optional[dict[str, np.ndarray]] = None,
    ) -> np.ndarray:
        env = env or {}
        closed = not (free_vars(formula) & env.keys()) if env else not free_vars(formula)
        if not env and free_vars(formula):
            missing = sorted(free_vars(formula))
            raise FormulaError(f"unbound fixpoint variable(s): {missing}")
        if closed:
            key = (m, formula)
            hit = self._memo.get(key)
            if hit is not None:
                return hit
            out = self._eval(formula, m, {})
            out.flags.writeable = False
            self._memo[key] = out
            return out
        return self._eval(formula, m, env)

    # -- internals --

    def _check_agent(self, agent: int) -> None:
        if not 0 <= agent < self.system.params.n:
            raise FormulaError(
                f"agent index {agent} out of range for n={self.system.params.n}"
            )

    def _tracked_field(self, m: int, agent: int, field: int) -> np.ndarray:
        if not self.system.params.info.tracks_decisions:
            raise FormulaError(
                "decision atoms need a decision-tracking exchange, not "
                f"{self.system.params.exchange!r}"
            )
        return self.system.obs_matrix(m, agent)[:, field]

    def _class_all(self, m: int, agent: int, vals: np.ndarray) -> np.ndarray:
        """Per state: does ``vals`` hold on the agent's whole class?"""
        inv, ncls = self.system.classes(m, agent)
        bad = np.bincount(inv[~vals], minlength=ncls)
        return (bad == 0)[inv]

    def _believes(self, m: int, agent: int, sub: np.ndarray) -> np.ndarray:
        vals = ~self.system.nonfaulty_masks(m)[:, agent] | sub
        return self._class_all(m, agent, vals)

    def _everyone(self, m: int, sub: np.ndarray) -> np.ndarray:
        inN = self.system.nonfaulty_masks(m)
        out = np.ones(self.system.layer_size(m), dtype=bool)
        for i in range(self.system.params.n):
            out &= ~inN[:, i] | self._believes(m, i, sub)
        return out

    def _eval(self, f: Formula, m: int, env: dict[str, np.ndarray]) -> np.ndarray:
        size = self.system.layer_size(m)
        if isinstance(f, TrueF):
            return np.ones(size, dtype=bool)
        if isinstance(f, FalseF):
            return np.zeros(size, dtype=bool)
        if isinstance(f, ExistsVote):
            return (self.system.votes(m) == f.value).any(axis=1)
        if isinstance(f, VoteIs):
            self._check_agent(f.agent)
            return self.system.votes(m)[:, f.agent] == f.value
        if isinstance(f, InN):
            self._check_agent(f.agent)
            return self.system.nonfaulty_masks(m)[:, f.agent].copy()
        if isinstance(f, Decided):
            self._check_agent(f.agent)
            return self._tracked_field(m, f.agent, _FIELD_DECIDED) == 1
        if isinstance(f, DecisionIs):
            self._check_agent(f.agent)
            decided = self._tracked_field(m, f.agent, _FIELD_DECIDED) == 1
            return decided & (
                self._tracked_field(m, f.agent, _FIELD_DECISION) == f.value
            )
        if isinstance(f, JustDecided):
            self._check_agent(f.agent)
            return self._tracked_field(m, f.agent, _FIELD_JD) == f.value
        if isinstance(f, Deciding):
            self._check_agent(f.agent)
            if self.deciding is None:
                raise FormulaError(
                    "Deciding atoms need an action resolver; this evaluator "
                    "has none"
                )
            out = np.asarray(self.deciding(m, f.agent, f.value), dtype=bool)
            if out.shape != (size,):
                raise FormulaError("Deciding resolver returned a wrong shape")
            return out
        if isinstance(f, Not):
            return ~self.eval(f.sub, m, env)
        if isinstance(f, And):
            out = np.ones(size, dtype=bool)
            for a in f.args:
                out = out & self.eval(a, m, env)
            return out
        if isinstance(f, Or):
            out = np.zeros(size, dtype=bool)
            for a in f.args:
                out = out | self.eval(a, m, env)
            return out
        if isinstance(f, Implies):
            return ~self.eval(f.lhs, m, env) | self.eval(f.rhs, m, env)
        if isinstance(f, Knows):
            self._check_agent(f.agent)
            return self._class_all(m, f.agent, self.eval(f.sub, m, env))
        if isinstance(f, Believes):
            self._check_agent(f.agent)
            return self._believes(m, f.agent, self.eval(f.sub, m, env))
        if isinstance(f, EveryoneN):
            return self._everyone(m, self.eval(f.sub, m, env))
        if isinstance(f, CommonN):
            sub = self.eval(f.sub, m, env)
            x = np.ones(size, dtype=bool)
            while True:
                nxt = self._everyone(m, sub & x)
                if np.array_equal(nxt, x):
                    return x
                x = nxt
        if isinstance(f, Var):
            if f.name not in env:
                raise FormulaError(f"unbound fixpoint variable {f.name!r}")
            return env[f.name]
        if isinstance(f, Gfp):
            _check_positive(f.body, f.name)
            x = np.ones(size, dtype=bool)
            while True:
                nxt = self.eval(f.body, m, {**env, f.name: x})
                if np.array_equal(nxt, x):
                    return x
                x = nxt
        raise FormulaError(f"cannot evaluate node of type {type(f).__name__}")


def evaluate_formula(
    system: LayeredSystem,
    formula: Formula,
    layer: Optional[int] = None,
    deciding: Optional[DecidingResolver] = None,
) -> dict[int, np.ndarray]:
    """Truth vector of ``formula`` per layer (all layers, or just one)."""
    ev = Evaluator(system, deciding=deciding)
    layers = range(system.num_layers) if layer is None else [layer]
    return {m: ev.eval(formula, m) for m in layers}


def holds_everywhere(
    system: LayeredSystem,
    formula: Formula,
    layer: Optional[int] = None,
    deciding: Optional[DecidingResolver] = None,
) -> tuple[bool, list[tuple[int, int]]]:
    """Whether the formula holds at every (selected) state; returns the
    verdict and the failing (layer, state index) pairs."""
    results = evaluate_formula(system, formula, layer=layer, deciding=deciding)
    failures = [
        (m, int(idx)) for m, mask in results.items() for idx in np.flatnonzero(~mask)
    ]
    return (not failures, failures)


# ---------------------------------------------------------------------------
# Independent reachability-based characterization of CommonN.
#
# Put an edge s -> s' (within one layer) when some agent in N(s) cannot
# distinguish s from s' and stays in N(s'); CommonN(f) then holds at s
# exactly when every state reachable in one or more steps satisfies f.
# Computed as a backward worklist from the ~f states, touching each
# (agent, observation class) at most once, so no edge set is materialized.
# The fixpoint evaluator is tested against this on every system in the
# acceptance grids.


def common_belief_oracle(
    system: LayeredSystem, m: int, phi: np.ndarray
) -> np.ndarray:
    phi = np.asarray(phi, dtype=bool)
    size = system.layer_size(m)
    if phi.shape != (size,):
        raise ValueError("phi must be one boolean per state of the layer")
    n = system.params.n
    inN = system.nonfaulty_masks(m)

    members: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    for i in range(n):
        inv, ncls = system.classes(m, i)
        order = np.argsort(inv, kind="stable").astype(np.int64)
        offsets = np.searchsorted(inv[order], np.arange(ncls + 1))
        members.append((inv, order, offsets))

    seen_class = [np.zeros(system.classes(m, i)[1], dtype=bool) for i in range(n)]
    reaches_bad = np.zeros(size, dtype=bool)
    worklist = list(np.flatnonzero(~phi))
    while worklist:
        v = worklist.pop()
        for i in range(n):
            if not inN[v, i]:
                continue
            inv, order, offsets = members[i]
            c = inv[v]
            if seen_class[i][c]:
                continue
            seen_class[i][c] = True
            cls = order[offsets[c] : offsets[c + 1]]
            preds = cls[inN[cls, i]]
            fresh = preds[~reaches_bad[preds]]
            reaches_bad[fresh] = True
            worklist.extend(fresh.tolist())
    return ~reaches_bad


# ---------------------------------------------------------------------------
# Concrete parser for the CLI formula language.
#
#   formula  := imp
#   imp      := or ("=>" imp)?                 (right-associative)
#   or       := and ("|" and)*
#   and      := unary ("&" unary)*
#   unary    := "!" unary | "not" unary
#             | "K[" agent "]" unary | "B[" agent "]" unary
#             | "EN" unary | "CN" unary
#             | "gfp" NAME "." imp
#             | atom
#   atom     := "true" | "false" | NAME
#             | "exists_vote(" v ")" | "vote_is(" i "," v ")"
#             | "in_n(" i ")" | "decided(" i ")" | "decision_is(" i "," v ")"
#             | "just_decided(" i "," v ")" | "deciding(" i "," v ")"
#             | "(" imp ")"


_TOKEN_RE = re.compile(
    r"\s*(=>|[()\[\],.&|!]|[A-Za-z_][A-Za-z_0-9]*|\d+)"
)

_ATOMS_2 = {
    "vote_is": VoteIs,
    "decision_is": DecisionIs,
    "just_decided": JustDecided,
    "deciding": Deciding,
}
_ATOMS_1 = {
    "exists_vote": ExistsVote,
    "in_n": InN,
    "decided": Decided,
}
_KEYWORDS = (
    {"K", "B", "EN", "CN", "gfp", "not", "true", "false"}
    | set(_ATOMS_1)
    | set(_ATOMS_2)
)


def _tokenize(text: str) -> list[str]:
    tokens, pos = [], 0
    while pos < len(text):
        mo = _TOKEN_RE.match(text, pos)
        if mo is None:
            raise FormulaError(f"bad character at position {pos}: {text[pos]!r}")
        tokens.append(mo.group(1))
        pos = mo.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> Optional[str]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, expected: Optional[str] = None) -> str:
        tok = self.peek()
        if tok is None:
            raise FormulaError(f"unexpected end of formula (wanted {expected!r})")
        if expected is not None and tok != expected:
            raise FormulaError(f"expected {expected!r}, got {tok!r}")
        self.pos += 1
        return tok

    def number(self) -> int:
        tok = self.take()
        if not tok.isdigit():
            raise FormulaError(f"expected a number, got {tok!r}")
        return int(tok)

    def parse(self) -> Formula:
        f = self.imp()
        if self.peek() is not None:
            raise FormulaError(f"trailing input at {self.peek()!r}")
        return f

    def imp(self) -> Formula:
        lhs = self.disj()
        if self.peek() == "=>":
            self.take("=>")
            return Implies(lhs, self.imp())
        return lhs

    def disj(self) -> Formula:
        out = self.conj()
        while self.peek() == "|":
            self.take("|")
            out = disj(out, self.conj())
        return out

    def conj(self) -> Formula:
        out = self.unary()
        while self.peek() == "&":
            self.take("&")
            out = conj(out, self.unary())
        return out

    def unary(self) -> Formula:
        tok = self.peek()
        if tok in ("!", "not"):
            self.take()
            return Not(self.unary())
        if tok in ("K", "B"):
            self.take()
            self.take("[")
            agent = self.number()
            self.take("]")
            sub = self.unary()
            return Knows(agent, sub) if tok == "K" else Believes(agent, sub)
        if tok == "EN":
            self.take()
            return EveryoneN(self.unary())
        if tok == "CN":
            self.take()
            return CommonN(self.unary())
        if tok == "gfp":
            self.take()
            name = self.take()
            if not name.isidentifier() or name in _KEYWORDS:
                raise FormulaError(f"bad fixpoint variable name {name!r}")
            self.take(".")
            return Gfp(name, self.imp())
        return self.atom()

    def atom(self) -> Formula:
        tok = self.take()
        if tok == "(":
            f = self.imp()
            self.take(")")
            return f
        if tok == "true":
            return TRUE
        if tok == "false":
            return FALSE
        if tok in _ATOMS_1:
            self.take("(")
            a = self.number()
            self.take(")")
            return _ATOMS_1[tok](a)
        if tok in _ATOMS_2:
            self.take("(")
            a = self.number()
            self.take(",")
            b = self.number()
            self.take(")")
            return _ATOMS_2[tok](a, b)
        if tok.isidentifier() and tok not in _KEYWORDS:
            return Var(tok)
        raise FormulaError(f"unexpected token {tok!r}")


def parse_formula(text: str) -> Formula:
    """Parse the CLI formula language into a Formula AST."""
    return _Parser(text).parse()
