"""Bounded derivability, consistency, and global consequence over finite
stratified models, with countermodel extraction.

False verdicts are absolute (they carry an explicit countermodel).  True
verdicts are relative to the recorded bounds: the canonical enumeration
within them was searched to completion.  A bound cut with neither outcome
raises SearchInconclusive, never a silent guess.
"""

from __future__ import annotations

from dataclasses import dataclass

from .formula import (Formula, VarContext, box, conj, depth, implies, lnot,
                      variables)
from .limits import Bounds, DEFAULT_BOUNDS, SearchInconclusive
from .model import (PointedModel, StratifiedModel, force, force_table,
                    generated_submodel, model_to_json)
from .bisim import (_canonical_relabel, _try_delete, enumerate_models_flagged,
                    enumerate_types, type_codes)

# Universe-based search is used up to this depth; deeper formulas are
# evaluated directly on the model stream.
_UNIVERSE_DEPTH_CAP = 3


@dataclass
class Verdict:
    theorem: bool
    countermodel: PointedModel | None
    search_exhausted: bool
    bound_used: Bounds

    def to_json(self) -> dict:
        return {
            "theorem": self.theorem,
            "countermodel": None if self.countermodel is None else {
                **model_to_json(self.countermodel.model),
                "point": self.countermodel.point,
            },
            "search_exhausted": self.search_exhausted,
            "bound": self.bound_used.to_json(),
        }


@dataclass
class SatVerdict:
    satisfiable: bool
    model: PointedModel | None
    search_exhausted: bool
    bound_used: Bounds

    def to_json(self) -> dict:
        return {
            "satisfiable": self.satisfiable,
            "model": None if self.model is None else {
                **model_to_json(self.model.model),
                "point": self.model.point,
            },
            "search_exhausted": self.search_exhausted,
            "bound": self.bound_used.to_json(),
        }


def infer_ctx(f: Formula) -> VarContext:
    hi = max(variables(f), default=-1)
    return VarContext(tuple(f"p{i + 1}" for i in range(hi + 1)))


def _minimize_countermodel(m: StratifiedModel, x: int, f: Formula) -> PointedModel:
    """Greedily delete worlds while the refutation at x survives, then
    relabel canonically."""
    sub = generated_submodel(m, x)
    m = sub.model
    changed = True
    while changed:
        changed = False
        for cand in sorted(m.worlds):
            if cand == m.root:
                continue
            smaller = _try_delete(m, cand)
            if smaller is not None and not force(smaller, smaller.root, f):
                m = smaller
                changed = True
                break
    m = _canonical_relabel(m)
    return PointedModel(m, m.root)


def is_theorem(f: Formula, ctx: VarContext | None = None,
               bounds: Bounds = DEFAULT_BOUNDS) -> Verdict:
    """Search the canonically enumerated rooted stratified models for a
    refuting world.  Shallow formulas are checked once per n-type; deep
    ones against every candidate model."""
    ctx = ctx or infer_ctx(f)
    d = depth(f)
    if d <= _UNIVERSE_DEPTH_CAP:
        universe = enumerate_types(ctx, d, bounds)
        for t in universe.types:
            if not force(t.rep.model, t.rep.point, f):
                cm = _minimize_countermodel(t.rep.model, t.rep.point, f)
                return Verdict(False, cm, True, bounds)
        if universe.truncated:
            raise SearchInconclusive(
                "no countermodel found but type enumeration was truncated", bounds)
        return Verdict(True, None, True, bounds)
    models, truncated = enumerate_models_flagged(ctx, bounds)
    for m in models:
        table = force_table(m, f)
        for w in m.worlds:
            if not table[w]:
                cm = _minimize_countermodel(m, w, f)
                return Verdict(False, cm, True, bounds)
    if truncated:
        raise SearchInconclusive(
            "no countermodel found but model enumeration was truncated", bounds)
    return Verdict(True, None, True, bounds)


def consequence(premise: Formula, conclusion: Formula,
                ctx: VarContext | None = None,
                bounds: Bounds = DEFAULT_BOUNDS) -> Verdict:
    """Global consequence: every stratified model making the premise
    globally true makes the conclusion globally true.  Reduced to
    theoremhood of (premise & [0]premise & [1]premise) -> conclusion,
    which is sound and complete here because any world's generated
    submodel is the world itself plus its direct R0- and R1-successors."""
    if ctx is None:
        hi = max(max(variables(premise), default=-1),
                 max(variables(conclusion), default=-1))
        ctx = VarContext(tuple(f"p{i + 1}" for i in range(hi + 1)))
    g = implies(conj([premise, box(0, premise), box(1, premise)]), conclusion)
    return is_theorem(g, ctx, bounds)


def is_satisfiable(f: Formula, ctx: VarContext | None = None,
                   bounds: Bounds = DEFAULT_BOUNDS) -> SatVerdict:
    """Dual of is_theorem: satisfiable iff the negation is not a theorem;
    the countermodel of the negation is the satisfying pointed model."""
    v = is_theorem(lnot(f), ctx, bounds)
    if v.theorem:
        return SatVerdict(False, None, v.search_exhausted, bounds)
    return SatVerdict(True, v.countermodel, v.search_exhausted, bounds)
