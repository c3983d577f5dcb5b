"""Unimodal GL sub-engine for the per-sheet work: [0]-elimination on a
1-sheet, GL derivability over finite transitive tree models, the extension
property, and projective unifiers in the style of Ghilardi's construction.

A GL model is represented as a stratified model with empty R0 and a single
sheet, so the forcing machinery is shared.
"""

from __future__ import annotations

from dataclasses import dataclass

from ._engine import FastModel, apply_images, eval_mask, globally
from .formula import (BOX, Formula, Substitution, VarContext, apply_subst,
                      bot, box, compose, depth, identity_subst, iff, implies,
                      land, lnot, lor, simplify, top, var)
from .limits import Bounds, DEFAULT_BOUNDS, SearchInconclusive
from .model import (PointedModel, StratifiedModel, force, force_table,
                    _compute_sheets)
from .bisim import _canonical_relabel, _materialize_tree, _tree_shapes
from .decide import Verdict, _minimize_countermodel

import itertools


class ConstancyViolated(ValueError):
    """A [0]-subformula took different truth values across a 1-sheet,
    which signals a non-stratified input."""


class GLNotProjective(Exception):
    """The sheet formula has no GL projective unifier (or the bounded
    search could not produce one); status distinguishes the two."""

    def __init__(self, status):
        super().__init__(f"no GL projective unifier: {status}")
        self.status = status


@dataclass(frozen=True)
class SheetFormula:
    """Pure-[1] residue of a bimodal formula on a 1-sheet, together with
    the constant truth assignment used for its maximal [0]-subformulas."""

    body: Formula
    source: Formula
    assignment: tuple[tuple[Formula, bool], ...]


def _maximal_box0(f: Formula) -> list[Formula]:
    out = []
    seen = set()

    def go(g):
        if g.kind == BOX and g.modality == 0:
            if g not in seen:
                seen.add(g)
                out.append(g)
            return
        for c in g.children:
            go(c)

    go(f)
    return out


def _assert_pure_box1(f: Formula):
    if any(g.kind == BOX and g.modality == 0 for g in _walk(f)):
        raise ValueError("sheet formula must contain only modality [1]")


def _walk(f):
    yield f
    for c in f.children:
        yield from _walk(c)


def eliminate_box0(f: Formula, m: StratifiedModel, sheet: frozenset) -> SheetFormula:
    """Replace every maximal [0]-subformula by its truth value on the
    sheet.  Stratification makes that value constant across the sheet;
    a non-constant value raises ConstancyViolated."""
    assignment = []
    mapping = {}
    for g in _maximal_box0(f):
        table = force_table(m, g)
        values = {table[x] for x in sheet}
        if len(values) != 1:
            raise ConstancyViolated(
                f"[0]-subformula truth differs across sheet {sorted(sheet)}")
        value = values.pop()
        assignment.append((g, value))
        mapping[g] = top() if value else bot()

    def rebuild(g):
        if g in mapping:
            return mapping[g]
        if not g.children:
            return g
        return Formula(g.kind, tuple(rebuild(c) for c in g.children),
                       modality=g.modality)

    body = simplify(rebuild(f))
    return SheetFormula(body=body, source=f, assignment=tuple(assignment))


# ---------------------------------------------------------------------------
# GL model space: rooted transitive trees
# ---------------------------------------------------------------------------

_GL_CACHE: dict = {}


def gl_models(ctx: VarContext, bounds: Bounds = DEFAULT_BOUNDS):
    """All rooted tree models (transitively closed) within gl_max_worlds,
    every valuation.  GL is complete for these, so the bounded search is
    a genuine decision procedure up to the size bound."""
    key = (ctx.names, bounds.gl_max_worlds)
    cached = _GL_CACHE.get(key)
    if cached is not None:
        return cached
    nv = len(ctx)
    out = []
    for n in range(1, bounds.gl_max_worlds + 1):
        for shape in sorted(_tree_shapes(n)):
            root, edges, total = _materialize_tree(shape, 0)
            worlds = tuple(range(total))
            succ = {w: set() for w in worlds}
            for a, b in edges:
                succ[a].add(b)
            changed = True
            while changed:
                changed = False
                for w in worlds:
                    extra = set()
                    for y in succ[w]:
                        extra |= succ[y] - succ[w]
                    if extra:
                        succ[w] |= extra
                        changed = True
            succ1 = {w: frozenset(succ[w]) for w in worlds}
            succ0 = {w: frozenset() for w in worlds}
            sheets = _compute_sheets(worlds, succ1)
            for bits in itertools.product(range(1 << nv), repeat=total):
                val = {w: frozenset(i for i in range(nv) if bits[w] >> i & 1)
                       for w in worlds}
                out.append(StratifiedModel(ctx, worlds, succ0, succ1, val,
                                           root, sheets, frozenset()))
    _GL_CACHE[key] = out
    return out


def _gl_fast(ctx, bounds):
    key = ("fast", ctx.names, bounds.gl_max_worlds)
    cached = _GL_CACHE.get(key)
    if cached is None:
        cached = [FastModel(m, len(ctx)) for m in gl_models(ctx, bounds)]
        _GL_CACHE[key] = cached
    return cached


def _body_of(f) -> Formula:
    body = f.body if isinstance(f, SheetFormula) else f
    _assert_pure_box1(body)
    return body


def gl_is_theorem(f, ctx: VarContext | None = None,
                  bounds: Bounds = DEFAULT_BOUNDS) -> Verdict:
    """GL derivability by finite tree-model search; verdict contract as in
    decide.is_theorem."""
    body = _body_of(f)
    if ctx is None:
        from .decide import infer_ctx
        ctx = infer_ctx(body)
    for fm in _gl_fast(ctx, bounds):
        mask = eval_mask(fm, body)
        if mask != fm.full:
            w = fm.worlds[(mask ^ fm.full).bit_length() - 1]
            cm = _minimize_countermodel(fm.model, w, body)
            return Verdict(False, cm, True, bounds)
    return Verdict(True, None, True, bounds)


def gl_consequence(premise: Formula, conclusion: Formula,
                   ctx: VarContext, bounds: Bounds = DEFAULT_BOUNDS) -> Verdict:
    """Global GL consequence via the transitive deduction prefix."""
    g = implies(land(premise, box(1, premise)), conclusion)
    return gl_is_theorem(g, ctx, bounds)


# ---------------------------------------------------------------------------
# Extension property and projective unifiers
# ---------------------------------------------------------------------------


def gl_extension_violation(f, ctx: VarContext,
                           bounds: Bounds = DEFAULT_BOUNDS) -> StratifiedModel | None:
    """First tree model whose non-root worlds all satisfy f globally while
    no root-valuation variant satisfies f globally; None if the bounded
    space has no such violation."""
    body = _body_of(f)
    nv = len(ctx)
    for fm in _gl_fast(ctx, bounds):
        mask = eval_mask(fm, body)
        nonroot = fm.full & ~(1 << fm.pos[fm.model.root])
        if mask & nonroot != nonroot:
            continue
        rootbit = 1 << fm.pos[fm.model.root]
        found = False
        for bits in range(1 << nv):
            state = tuple((fm.val[i] & ~rootbit) | (rootbit if bits >> i & 1 else 0)
                          for i in range(nv))
            if globally(fm, body, state):
                found = True
                break
        if not found:
            return fm.model
    return None


def gl_extension_property(f, ctx: VarContext | None = None,
                          bounds: Bounds = DEFAULT_BOUNDS) -> bool:
    body = _body_of(f)
    if ctx is None:
        from .decide import infer_ctx
        ctx = infer_ctx(body)
    return gl_extension_violation(body, ctx, bounds) is None


@dataclass
class GlUnifierResult:
    status: str  # "projective" | "not_projective" | "inconclusive"
    substitution: Substitution | None
    violation: StratifiedModel | None

    @property
    def found(self) -> bool:
        return self.status == "projective"


_UNIFIER_CACHE: dict = {}


def gl_projective_unifier(f, ctx: VarContext | None = None,
                          bounds: Bounds = DEFAULT_BOUNDS) -> GlUnifierResult:
    """Search for a GL projective unifier of a pure-[1] formula.

    Candidates are compositions of the per-valuation substitutions
    sigma_v(p) = (f & p) | (~f & v(p)), v over all boolean valuations in
    canonical (all-true-first) order, iterated for up to 2^|ctx| rounds;
    the first candidate whose application makes f globally true on every
    bounded tree model is verified for both unifier conditions and
    returned.  Verification is the correctness guarantee; the candidate
    order is only a search heuristic."""
    body = _body_of(f)
    if ctx is None:
        from .decide import infer_ctx
        ctx = infer_ctx(body)
    key = (body, ctx.names, bounds.gl_max_worlds)
    cached = _UNIFIER_CACHE.get(key)
    if cached is not None:
        return cached
    result = _gl_unifier_search(body, ctx, bounds)
    _UNIFIER_CACHE[key] = result
    return result


def _gl_unifier_search(body, ctx, bounds) -> GlUnifierResult:
    nv = len(ctx)
    fast = _gl_fast(ctx, bounds)

    # A violation refutes projectivity outright, and within one bounded
    # space a violation and a verified unifier cannot coexist, so checking
    # it first only short-circuits hopeless candidate searches.
    violation = gl_extension_violation(body, ctx, bounds)
    if violation is not None:
        return GlUnifierResult("not_projective", None, violation)

    def factors_unify(factors):
        for fm in fast:
            state = fm.val
            for fac in factors:
                state = apply_images(fm, fac.images, state)
            if not globally(fm, body, state):
                return False
        return True

    candidates = [[]]  # identity first
    sigma_vs = []
    for bits in range((1 << nv) - 1, -1, -1):  # all-true valuation first
        images = tuple(
            simplify(lor(land(body, var(i)),
                         land(lnot(body), top() if bits >> i & 1 else bot())))
            for i in range(nv))
        sigma_vs.append(Substitution(ctx, images))
    # Rounds: failures can propagate one frame level per pass, so the
    # bounded tree space needs up to gl_max_worlds passes on top of the
    # per-valuation count; verification keeps any choice here sound.
    rounds = max(1 << nv, bounds.gl_max_worlds + 2)
    chain = []
    for _ in range(rounds):
        for sv in sigma_vs:
            chain = chain + [sv]
            candidates.append(list(chain))
    for factors in candidates:
        if factors_unify(factors):
            subst = identity_subst(ctx)
            for fac in factors:
                subst = Substitution(ctx, tuple(
                    simplify(img) for img in compose(subst, fac).images))
            if _verify_gl_unifier(body, subst, ctx, bounds):
                return GlUnifierResult("projective", subst, None)
    return GlUnifierResult("inconclusive", None, None)


def _verify_gl_unifier(body, subst, ctx, bounds) -> bool:
    if not gl_is_theorem(apply_subst(subst, body), ctx, bounds).theorem:
        return False
    for i in range(len(ctx)):
        if not gl_consequence(body, iff(subst.images[i], var(i)), ctx, bounds).theorem:
            return False
    return True
