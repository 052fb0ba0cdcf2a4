"""Finite-trace LTL over Boolean predicate streams.

Formulas are built from entity-grounded atoms ``name(e1[,e2])`` with the
operators ``!`` (not), ``&``, ``|``, ``->``, ``G`` (globally), ``F``
(finally) and ``U`` (strong until).  Precedence, tightest to loosest:
``!``/``G``/``F`` > ``U`` > ``&`` > ``|`` > ``->`` with ``->`` and ``U``
right-associative.  Truth is evaluated at frame 1 of a length-T trace;
``p U q`` requires q to eventually hold.

Failed clauses additionally yield a violation witness: a set of
(entity, frame) pairs extracted by template-specific rules for the four
clause families (persistence ``G p``, terminal placement ``F G p``, causal
coupling ``G(p -> q)``, ordering ``p U q``), and by a conservative
polarity-based rule for everything else.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .errors import FormulaSyntaxError, HorizonMismatch, MissingStream

DEFAULT_STABILITY_WINDOW = 3


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Formula:
    def atoms(self):
        """All distinct atoms in the formula."""
        out = []
        seen = set()
        for node in self.walk():
            if isinstance(node, Atom) and node not in seen:
                seen.add(node)
                out.append(node)
        return out

    def entities(self):
        """All entity identifiers referenced by the formula's atoms."""
        out = set()
        for atom in self.atoms():
            out.update(atom.args)
        return out

    def walk(self):
        yield self
        for child in self.children():
            yield from child.walk()

    def children(self):
        return ()


@dataclass(frozen=True)
class Atom(Formula):
    name: str
    args: tuple

    def __str__(self):
        return f"{self.name}({','.join(self.args)})"


@dataclass(frozen=True)
class Not(Formula):
    child: Formula

    def children(self):
        return (self.child,)


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Or(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Implies(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Globally(Formula):
    child: Formula

    def children(self):
        return (self.child,)


@dataclass(frozen=True)
class Finally(Formula):
    child: Formula

    def children(self):
        return (self.child,)


@dataclass(frozen=True)
class Until(Formula):
    left: Formula
    right: Formula

    def children(self):
        return (self.left, self.right)


class TemplateFamily(enum.Enum):
    PERSISTENCE = "persistence"
    TERMINAL_PLACEMENT = "terminal_placement"
    CAUSAL_COUPLING = "causal_coupling"
    ORDERING = "ordering"
    OTHER = "other"


@dataclass(frozen=True)
class Witness:
    """Violation witness: set of (entity id, 1-indexed frame) pairs."""

    pairs: frozenset

    def __bool__(self):
        return bool(self.pairs)

    def frames(self):
        return sorted({t for _, t in self.pairs})

    def entities(self):
        return sorted({e for e, _ in self.pairs})


EMPTY_WITNESS = Witness(frozenset())


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

_RESERVED = {"G", "F", "U"}


class _Tokenizer:
    def __init__(self, src: str):
        self.src = src
        self.pos = 0
        self.tokens = []
        self._scan()
        self.idx = 0

    def _scan(self):
        src, n = self.src, len(self.src)
        i = 0
        while i < n:
            c = src[i]
            if c.isspace():
                i += 1
                continue
            if c in "()!,&|":
                self.tokens.append((c, c, i))
                i += 1
            elif c == "-":
                if i + 1 < n and src[i + 1] == ">":
                    self.tokens.append(("->", "->", i))
                    i += 2
                else:
                    raise FormulaSyntaxError("expected '->'", i)
            elif c.isalpha() or c == "_":
                j = i
                while j < n and (src[j].isalnum() or src[j] == "_"):
                    j += 1
                text = src[i:j]
                kind = text if text in _RESERVED else "ident"
                self.tokens.append((kind, text, i))
                i = j
            else:
                raise FormulaSyntaxError(f"unexpected character {c!r}", i)
        self.tokens.append(("eof", "", n))

    def peek(self):
        return self.tokens[self.idx]

    def next(self):
        tok = self.tokens[self.idx]
        self.idx += 1
        return tok

    def expect(self, kind):
        tok = self.next()
        if tok[0] != kind:
            raise FormulaSyntaxError(f"expected {kind!r}, found {tok[1]!r}", tok[2])
        return tok


class _Parser:
    def __init__(self, src: str):
        self.toks = _Tokenizer(src)

    def parse(self) -> Formula:
        f = self._implies()
        kind, text, off = self.toks.peek()
        if kind != "eof":
            raise FormulaSyntaxError(f"unexpected trailing input {text!r}", off)
        return f

    def _implies(self) -> Formula:
        left = self._or()
        if self.toks.peek()[0] == "->":
            self.toks.next()
            return Implies(left, self._implies())
        return left

    def _or(self) -> Formula:
        f = self._and()
        while self.toks.peek()[0] == "|":
            self.toks.next()
            f = Or(f, self._and())
        return f

    def _and(self) -> Formula:
        f = self._until()
        while self.toks.peek()[0] == "&":
            self.toks.next()
            f = And(f, self._until())
        return f

    def _until(self) -> Formula:
        left = self._unary()
        if self.toks.peek()[0] == "U":
            self.toks.next()
            return Until(left, self._until())
        return left

    def _unary(self) -> Formula:
        kind, text, off = self.toks.peek()
        if kind == "!":
            self.toks.next()
            return Not(self._unary())
        if kind == "G":
            self.toks.next()
            return Globally(self._unary())
        if kind == "F":
            self.toks.next()
            return Finally(self._unary())
        if kind == "(":
            self.toks.next()
            f = self._implies()
            self.toks.expect(")")
            return f
        if kind == "ident":
            return self._atom()
        raise FormulaSyntaxError(f"expected formula, found {text or 'end of input'!r}", off)

    def _atom(self) -> Atom:
        name = self.toks.expect("ident")[1]
        self.toks.expect("(")
        args = [self.toks.expect("ident")[1]]
        if self.toks.peek()[0] == ",":
            self.toks.next()
            args.append(self.toks.expect("ident")[1])
        self.toks.expect(")")
        return Atom(name, tuple(args))


def parse_formula(src: str) -> Formula:
    """Parse formula text into its AST; raises FormulaSyntaxError with offset."""
    return _Parser(src).parse()


_LVL_IMPLIES, _LVL_OR, _LVL_AND, _LVL_UNTIL, _LVL_UNARY, _LVL_ATOM = range(6)


def _level(f: Formula) -> int:
    if isinstance(f, Atom):
        return _LVL_ATOM
    if isinstance(f, (Not, Globally, Finally)):
        return _LVL_UNARY
    if isinstance(f, Until):
        return _LVL_UNTIL
    if isinstance(f, And):
        return _LVL_AND
    if isinstance(f, Or):
        return _LVL_OR
    return _LVL_IMPLIES


def print_formula(f: Formula) -> str:
    """Render a formula; parse_formula(print_formula(f)) is structurally f."""
    return _fmt(f, _LVL_IMPLIES)


def _fmt(f: Formula, min_level: int) -> str:
    if isinstance(f, Atom):
        s = str(f)
    elif isinstance(f, Not):
        s = "!" + _fmt(f.child, _LVL_UNARY)
    elif isinstance(f, Globally):
        s = "G " + _fmt(f.child, _LVL_UNARY)
    elif isinstance(f, Finally):
        s = "F " + _fmt(f.child, _LVL_UNARY)
    elif isinstance(f, Until):
        s = _fmt(f.left, _LVL_UNTIL + 1) + " U " + _fmt(f.right, _LVL_UNTIL)
    elif isinstance(f, And):
        s = _fmt(f.left, _LVL_AND) + " & " + _fmt(f.right, _LVL_AND + 1)
    elif isinstance(f, Or):
        s = _fmt(f.left, _LVL_OR) + " | " + _fmt(f.right, _LVL_OR + 1)
    else:
        s = _fmt(f.left, _LVL_IMPLIES + 1) + " -> " + _fmt(f.right, _LVL_IMPLIES)
    if _level(f) < min_level:
        return "(" + s + ")"
    return s


# --------------------------------------------------------------------------
# Template classification
# --------------------------------------------------------------------------

def _is_literal_prop(f: Formula) -> bool:
    # propositional with negation only directly on atoms
    if isinstance(f, Atom):
        return True
    if isinstance(f, Not):
        return isinstance(f.child, Atom)
    if isinstance(f, (And, Or, Implies)):
        return _is_literal_prop(f.left) and _is_literal_prop(f.right)
    return False


def classify_template(f: Formula) -> TemplateFamily:
    """Total, deterministic mapping of an AST onto its clause family."""
    if isinstance(f, Globally):
        child = f.child
        if isinstance(child, Implies) and _is_literal_prop(child):
            return TemplateFamily.CAUSAL_COUPLING
        if _is_literal_prop(child):
            return TemplateFamily.PERSISTENCE
        return TemplateFamily.OTHER
    if isinstance(f, Finally):
        child = f.child
        if isinstance(child, Globally) and _is_literal_prop(child.child):
            return TemplateFamily.TERMINAL_PLACEMENT
        return TemplateFamily.OTHER
    if isinstance(f, Until):
        if _is_literal_prop(f.left) and _is_literal_prop(f.right):
            return TemplateFamily.ORDERING
        return TemplateFamily.OTHER
    return TemplateFamily.OTHER


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

def _stream_for(atom: Atom, streams, horizon: int) -> np.ndarray:
    if atom not in streams:
        raise MissingStream(f"no stream for atom {atom}")
    values = np.asarray(streams[atom], dtype=bool)
    if values.shape != (horizon,):
        raise HorizonMismatch(
            f"stream for {atom} has length {values.shape}, horizon is {horizon}"
        )
    return values


def _sat(f: Formula, streams, horizon: int) -> np.ndarray:
    """Satisfaction vector: sat[t] is truth of f at frame t+1 (0-indexed)."""
    if isinstance(f, Atom):
        return _stream_for(f, streams, horizon)
    if isinstance(f, Not):
        return ~_sat(f.child, streams, horizon)
    if isinstance(f, And):
        return _sat(f.left, streams, horizon) & _sat(f.right, streams, horizon)
    if isinstance(f, Or):
        return _sat(f.left, streams, horizon) | _sat(f.right, streams, horizon)
    if isinstance(f, Implies):
        return ~_sat(f.left, streams, horizon) | _sat(f.right, streams, horizon)
    if isinstance(f, Globally):
        child = _sat(f.child, streams, horizon)
        return np.logical_and.accumulate(child[::-1])[::-1]
    if isinstance(f, Finally):
        child = _sat(f.child, streams, horizon)
        return np.logical_or.accumulate(child[::-1])[::-1]
    if isinstance(f, Until):
        a = _sat(f.left, streams, horizon)
        b = _sat(f.right, streams, horizon)
        out = np.empty(horizon, dtype=bool)
        out[-1] = b[-1]
        for t in range(horizon - 2, -1, -1):
            out[t] = b[t] or (a[t] and out[t + 1])
        return out
    raise TypeError(f"unknown node {type(f).__name__}")


def eval_bruteforce(f: Formula, streams, horizon: int) -> bool:
    """Independent oracle: recursive expansion of the semantics, no vector ops."""
    atom_values = {a: _stream_for(a, streams, horizon) for a in f.atoms()}
    memo = {}

    def ev(node, t):
        key = (id(node), t)
        if key in memo:
            return memo[key]
        if isinstance(node, Atom):
            res = bool(atom_values[node][t])
        elif isinstance(node, Not):
            res = not ev(node.child, t)
        elif isinstance(node, And):
            res = ev(node.left, t) and ev(node.right, t)
        elif isinstance(node, Or):
            res = ev(node.left, t) or ev(node.right, t)
        elif isinstance(node, Implies):
            res = (not ev(node.left, t)) or ev(node.right, t)
        elif isinstance(node, Globally):
            res = all(ev(node.child, s) for s in range(t, horizon))
        elif isinstance(node, Finally):
            res = any(ev(node.child, s) for s in range(t, horizon))
        elif isinstance(node, Until):
            res = any(
                ev(node.right, j) and all(ev(node.left, i) for i in range(t, j))
                for j in range(t, horizon)
            )
        else:
            raise TypeError(f"unknown node {type(node).__name__}")
        memo[key] = res
        return res

    return ev(f, 0)


# --------------------------------------------------------------------------
# Witness extraction
# --------------------------------------------------------------------------

def _pairs(entities, frames_0idx):
    return frozenset((e, int(t) + 1) for e in entities for t in frames_0idx)


def _polarity_witness(f: Formula, streams, horizon: int) -> frozenset:
    # conservative rule: frames where an atom's value differs from the value
    # its occurrence polarity would need; atoms under both polarities get all frames
    polarities = {}

    def visit(node, pol):
        if isinstance(node, Atom):
            polarities.setdefault(node, set()).add(pol)
        elif isinstance(node, Not):
            visit(node.child, not pol)
        elif isinstance(node, Implies):
            visit(node.left, not pol)
            visit(node.right, pol)
        elif isinstance(node, (And, Or, Until)):
            visit(node.left, pol)
            visit(node.right, pol)
        else:
            visit(node.child, pol)

    visit(f, True)
    pairs = set()
    for atom, pols in polarities.items():
        values = _stream_for(atom, streams, horizon)
        if len(pols) == 2:
            frames = range(horizon)
        elif True in pols:
            frames = np.nonzero(~values)[0]
        else:
            frames = np.nonzero(values)[0]
        pairs.update(_pairs(atom.args, frames))
    return frozenset(pairs)


def _extract_witness(f, family, streams, horizon, stability_window):
    if family is TemplateFamily.PERSISTENCE:
        p = f.child
        bp = _sat(p, streams, horizon)
        return _pairs(sorted(p.entities()), np.nonzero(~bp)[0])
    if family is TemplateFamily.CAUSAL_COUPLING:
        p, q = f.child.left, f.child.right
        bp = _sat(p, streams, horizon)
        bq = _sat(q, streams, horizon)
        ents = sorted(p.entities() | q.entities())
        return _pairs(ents, np.nonzero(bp & ~bq)[0])
    if family is TemplateFamily.TERMINAL_PLACEMENT:
        p = f.child.child
        bp = _sat(p, streams, horizon)
        k = min(stability_window, horizon)
        tail = np.arange(horizon - k, horizon)
        return _pairs(sorted(p.entities()), tail[~bp[tail]])
    if family is TemplateFamily.ORDERING:
        p, q = f.left, f.right
        bp = _sat(p, streams, horizon)
        bq = _sat(q, streams, horizon)
        q_seen = np.maximum.accumulate(bq)
        broken = np.nonzero(~bp & ~q_seen)[0]
        t_break = int(broken[0]) if broken.size else 0
        ents = sorted(p.entities() | q.entities())
        return _pairs(ents, range(t_break, horizon))
    return _polarity_witness(f, streams, horizon)


def eval_clause(
    f: Formula,
    streams,
    horizon: int,
    stability_window: int = DEFAULT_STABILITY_WINDOW,
):
    """Evaluate a clause at frame 1 and extract its violation witness.

    Returns (truth, Witness). Satisfied clauses always return the empty
    witness; for failed ones the witness follows the clause's template
    family (the tail window of a failed terminal placement covers the last
    ``stability_window`` frames, clamped to the horizon).
    """
    if horizon < 1:
        raise HorizonMismatch(f"horizon must be >= 1, got {horizon}")
    truth = bool(_sat(f, streams, horizon)[0])
    if truth:
        return True, EMPTY_WITNESS
    family = classify_template(f)
    return False, Witness(_extract_witness(f, family, streams, horizon, stability_window))
