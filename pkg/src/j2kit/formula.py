"""Bimodal propositional formulas over a fixed finite variable context.

Connectives: T, F, &, |, ~, ->, and two boxes [0], [1].  Diamonds <i> are
surface syntax only and desugar to ~[i]~ at parse time; the AST has no
diamond node.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

VAR = "var"
TOP = "top"
BOT = "bot"
AND = "and"
OR = "or"
NOT = "not"
IMPLIES = "implies"
BOX = "box"


class ParseError(ValueError):
    """Syntax or scoping error; `offset` is the byte position in the input."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class VarContext:
    """Ordered, fixed list of propositional variable names (p1, p2, ...)."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate variable names: {self.names}")
        for name in self.names:
            if not name:
                raise ValueError("empty variable name")

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    @staticmethod
    def of(*names: str) -> "VarContext":
        return VarContext(tuple(names))


@dataclass(frozen=True)
class Formula:
    """Immutable AST node.

    kind       one of var/top/bot/and/or/not/implies/box
    children   0-2 subformulas
    var_index  index into the VarContext (var nodes only)
    modality   0 or 1 (box nodes only)
    """

    kind: str
    children: tuple["Formula", ...] = ()
    var_index: int | None = None
    modality: int | None = None

    def __repr__(self):
        return f"Formula<{render(self)}>"


_TOP = Formula(TOP)
_BOT = Formula(BOT)


def top() -> Formula:
    return _TOP


def bot() -> Formula:
    return _BOT


def var(i: int) -> Formula:
    return Formula(VAR, var_index=i)


def land(a: Formula, b: Formula) -> Formula:
    return Formula(AND, (a, b))


def lor(a: Formula, b: Formula) -> Formula:
    return Formula(OR, (a, b))


def lnot(a: Formula) -> Formula:
    return Formula(NOT, (a,))


def implies(a: Formula, b: Formula) -> Formula:
    return Formula(IMPLIES, (a, b))


def box(i: int, a: Formula) -> Formula:
    if i not in (0, 1):
        raise ValueError(f"modality index must be 0 or 1, got {i}")
    return Formula(BOX, (a,), modality=i)


def diamond(i: int, a: Formula) -> Formula:
    """<i>a, i.e. ~[i]~a."""
    return lnot(box(i, lnot(a)))


def iff(a: Formula, b: Formula) -> Formula:
    return land(implies(a, b), implies(b, a))


def conj(parts) -> Formula:
    """Right-nested conjunction; empty conjunction is T."""
    parts = list(parts)
    if not parts:
        return top()
    out = parts[-1]
    for p in reversed(parts[:-1]):
        out = land(p, out)
    return out


def disj(parts) -> Formula:
    """Right-nested disjunction; empty disjunction is F."""
    parts = list(parts)
    if not parts:
        return bot()
    out = parts[-1]
    for p in reversed(parts[:-1]):
        out = lor(p, out)
    return out


def depth(f: Formula) -> int:
    """Modal depth: 0 on atoms/constants, max over boolean connectives,
    1 + depth under a box."""
    if f.kind in (VAR, TOP, BOT):
        return 0
    if f.kind == BOX:
        return 1 + depth(f.children[0])
    return max(depth(c) for c in f.children)


def size(f: Formula) -> int:
    return 1 + sum(size(c) for c in f.children)


def variables(f: Formula) -> frozenset[int]:
    """Indices of variables occurring in f."""
    if f.kind == VAR:
        return frozenset((f.var_index,))
    out = frozenset()
    for c in f.children:
        out |= variables(c)
    return out


def subformulas(f: Formula) -> set[Formula]:
    out = {f}
    for c in f.children:
        out |= subformulas(c)
    return out


# ---------------------------------------------------------------------------
# Parsing.  Grammar (whitespace insignificant, '->' right-associative):
#   formula := impl
#   impl    := or ("->" impl)?
#   or      := and ("|" and)*
#   and     := unary ("&" unary)*
#   unary   := "~" unary | "[" ("0"|"1") "]" unary | "<" ("0"|"1") ">" unary | atom
#   atom    := "T" | "F" | ident | "(" formula ")"
#   ident   := "p" digits
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str, ctx: VarContext):
        self.text = text
        self.ctx = ctx
        self.pos = 0

    def error(self, message):
        raise ParseError(message, self.pos)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self):
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def eat(self, s: str):
        self.skip_ws()
        if not self.text.startswith(s, self.pos):
            self.error(f"expected {s!r}")
        self.pos += len(s)

    def parse_formula(self) -> Formula:
        lhs = self.parse_or()
        self.skip_ws()
        if self.text.startswith("->", self.pos):
            self.pos += 2
            return implies(lhs, self.parse_formula())
        return lhs

    def parse_or(self) -> Formula:
        out = self.parse_and()
        while self.peek() == "|":
            self.pos += 1
            out = lor(out, self.parse_and())
        return out

    def parse_and(self) -> Formula:
        out = self.parse_unary()
        while self.peek() == "&":
            self.pos += 1
            out = land(out, self.parse_unary())
        return out

    def parse_modality(self, close: str) -> int:
        self.skip_ws()
        ch = self.text[self.pos : self.pos + 1]
        if ch not in ("0", "1"):
            self.error("expected modality index 0 or 1")
        self.pos += 1
        self.eat(close)
        return int(ch)

    def parse_unary(self) -> Formula:
        ch = self.peek()
        if ch == "~":
            self.pos += 1
            return lnot(self.parse_unary())
        if ch == "[":
            self.pos += 1
            i = self.parse_modality("]")
            return box(i, self.parse_unary())
        if ch == "<":
            self.pos += 1
            i = self.parse_modality(">")
            return diamond(i, self.parse_unary())
        return self.parse_atom()

    def parse_atom(self) -> Formula:
        ch = self.peek()
        if ch == "(":
            self.pos += 1
            out = self.parse_formula()
            self.eat(")")
            return out
        if ch == "T":
            self.pos += 1
            return top()
        if ch == "F":
            self.pos += 1
            return bot()
        if ch == "p":
            start = self.pos
            self.pos += 1
            while self.pos < len(self.text) and self.text[self.pos].isdigit():
                self.pos += 1
            name = self.text[start : self.pos]
            if len(name) == 1:
                self.error("expected digits after 'p'")
            if name not in self.ctx.names:
                self.pos = start
                self.error(f"unknown variable {name!r}")
            return var(self.ctx.index(name))
        self.error("expected formula")


def parse(text: str, ctx: VarContext) -> Formula:
    p = _Parser(text, ctx)
    out = p.parse_formula()
    p.skip_ws()
    if p.pos != len(text):
        p.error("trailing input")
    return out


def variable_names_in(text: str) -> list[str]:
    """Variable identifiers occurring in a formula string, in canonical
    (numeric) order.  Used by the CLI to derive a default context."""
    names = set()
    i = 0
    while i < len(text):
        if text[i] == "p" and i + 1 < len(text) and text[i + 1].isdigit():
            j = i + 1
            while j < len(text) and text[j].isdigit():
                j += 1
            names.add(text[i:j])
            i = j
        else:
            i += 1
    return sorted(names, key=lambda s: int(s[1:]))


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_PREC = {IMPLIES: 0, OR: 1, AND: 2, NOT: 3, BOX: 3, VAR: 4, TOP: 4, BOT: 4}


def _diamond_body(f: Formula):
    # matches ~[i]~psi
    if f.kind == NOT and f.children[0].kind == BOX:
        inner = f.children[0].children[0]
        if inner.kind == NOT:
            return f.children[0].modality, inner.children[0]
    return None


def render(f: Formula, ctx: VarContext | None = None, sugar: bool = True,
           full_parens: bool = False) -> str:
    """Formula back to concrete syntax.  With sugar=True, ~[i]~psi prints
    as <i>psi.  With full_parens=True every binary node is parenthesized."""

    def name(i):
        return ctx.names[i] if ctx is not None else f"p{i + 1}"

    def go(g, parent_prec):
        if g.kind == VAR:
            return name(g.var_index)
        if g.kind == TOP:
            return "T"
        if g.kind == BOT:
            return "F"
        if sugar:
            dia = _diamond_body(g)
            if dia is not None:
                i, body = dia
                return f"<{i}>{go(body, _PREC[BOX])}"
        if g.kind == NOT:
            return f"~{go(g.children[0], _PREC[NOT])}"
        if g.kind == BOX:
            return f"[{g.modality}]{go(g.children[0], _PREC[BOX])}"
        if g.kind == AND:
            sym, prec = " & ", _PREC[AND]
            a = go(g.children[0], prec)
            b = go(g.children[1], prec + 1)  # left-assoc chains reparse identically
        elif g.kind == OR:
            sym, prec = " | ", _PREC[OR]
            a = go(g.children[0], prec)
            b = go(g.children[1], prec + 1)
        else:
            sym, prec = " -> ", _PREC[IMPLIES]
            a = go(g.children[0], prec + 1)  # right-assoc
            b = go(g.children[1], prec)
        s = f"{a}{sym}{b}"
        if full_parens or prec < parent_prec:
            return f"({s})"
        return s

    return go(f, 0)


# ---------------------------------------------------------------------------
# Substitutions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Substitution:
    """Total map from context variables to formulas over the same context."""

    ctx: VarContext
    images: tuple[Formula, ...]

    def __post_init__(self):
        if len(self.images) != len(self.ctx):
            raise ValueError("substitution must cover every context variable")
        for img in self.images:
            bad = [i for i in variables(img) if i >= len(self.ctx)]
            if bad:
                raise ValueError(f"image mentions out-of-context variable index {bad[0]}")

    def __call__(self, i: int) -> Formula:
        return self.images[i]

    def as_dict(self) -> dict[str, Formula]:
        return {self.ctx.names[i]: img for i, img in enumerate(self.images)}


def identity_subst(ctx: VarContext) -> Substitution:
    return Substitution(ctx, tuple(var(i) for i in range(len(ctx))))


def apply_subst(s: Substitution, f: Formula) -> Formula:
    """Simultaneous replacement of every variable occurrence."""
    memo: dict[Formula, Formula] = {}

    def go(g):
        got = memo.get(g)
        if got is not None:
            return got
        if g.kind == VAR:
            out = s.images[g.var_index]
        elif not g.children:
            out = g
        else:
            out = Formula(g.kind, tuple(go(c) for c in g.children),
                          modality=g.modality)
        memo[g] = out
        return out

    return go(f)


def compose(t: Substitution, s: Substitution) -> Substitution:
    """Composition ts: maps p to t applied to s(p)."""
    if t.ctx != s.ctx:
        raise ValueError("substitutions must share a context")
    return Substitution(t.ctx, tuple(apply_subst(t, img) for img in s.images))


# ---------------------------------------------------------------------------
# Simplification: pointwise-sound boolean/modal rewrites only.  Semantic
# equivalence of the result is a consequence of each rule being a pointwise
# equivalence; nothing here consults a decision procedure.
# ---------------------------------------------------------------------------


def simplify(f: Formula) -> Formula:
    memo: dict[Formula, Formula] = {}

    def go(g):
        got = memo.get(g)
        if got is not None:
            return got
        if g.children:
            g2 = Formula(g.kind, tuple(go(c) for c in g.children), modality=g.modality)
        else:
            g2 = g
        out = _simpl_node(g2)
        memo[g] = out
        return out

    return go(f)


def _simpl_node(g: Formula) -> Formula:
    k = g.kind
    if k == NOT:
        (a,) = g.children
        if a.kind == TOP:
            return _BOT
        if a.kind == BOT:
            return _TOP
        if a.kind == NOT:
            return a.children[0]
        return g
    if k == BOX:
        if g.children[0].kind == TOP:
            return _TOP
        return g
    if k == AND:
        a, b = g.children
        if a.kind == BOT or b.kind == BOT:
            return _BOT
        if a.kind == TOP:
            return b
        if b.kind == TOP:
            return a
        if a == b:
            return a
        return g
    if k == OR:
        a, b = g.children
        if a.kind == TOP or b.kind == TOP:
            return _TOP
        if a.kind == BOT:
            return b
        if b.kind == BOT:
            return a
        if a == b:
            return a
        # (c & x) | (~c & y) with x == y collapses to x
        if (a.kind == AND and b.kind == AND
                and b.children[0].kind == NOT
                and b.children[0].children[0] == a.children[0]
                and a.children[1] == b.children[1]):
            return a.children[1]
        return g
    if k == IMPLIES:
        a, b = g.children
        if a.kind == BOT or b.kind == TOP:
            return _TOP
        if a.kind == TOP:
            return b
        if b.kind == BOT:
            return _simpl_node(lnot(a))
        if a == b:
            return _TOP
        return g
    return g
