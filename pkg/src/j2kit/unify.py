"""Projective unifiers, projective approximation, unifier bases, and
admissibility for the stratified semantics.

The pipeline: per (n+1)-type class whose representative satisfies the
root-cone hypothesis, a sheet substitution theta_W(p) = (phi & p) | (~phi
& sigma(p)) is built from a GL projective unifier sigma of the
[0]-eliminated sheet formula; their composition theta_bar is iterated
until phi becomes globally true on every bounded candidate model.
Non-projectivity is certified by a concrete 1-sum extension-property
violation; bound exhaustion with neither outcome raises, never guesses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ._engine import FastModel, apply_images, eval_mask, globally
from .formula import (Formula, Substitution, VarContext, apply_subst,
                      compose, depth, identity_subst, iff, implies, land,
                      lnot, lor, render, simplify, size, var, variables)
from .limits import Bounds, DEFAULT_BOUNDS, SearchInconclusive
from .model import (PointedModel, StratifiedModel, _one_sum_trusted, force,
                    force_table, globally_true, model_to_json, residue_key,
                    variant)
from .bisim import (NType, TypeUniverse, class_to_formula,
                    enumerate_models_flagged, enumerate_types, type_codes)
from .decide import Verdict, consequence, infer_ctx, is_theorem
from .gl import GLNotProjective, eliminate_box0, gl_projective_unifier


class HypothesisViolated(ValueError):
    """The model refutes the formula at an R0-successor of its root."""


@dataclass
class SumWitness:
    """Concrete extension-property violation: no root-valuation variant of
    the assembled 1-sum globally satisfies the formula."""

    sum_model: StratifiedModel
    summands: list[StratifiedModel]
    note: str

    def to_json(self) -> dict:
        return {
            "note": self.note,
            "sum_model": model_to_json(self.sum_model),
            "summands": [model_to_json(m) for m in self.summands],
        }


@dataclass
class ProjectivityReport:
    projective: bool
    unifier: Substitution | None
    rounds_used: int
    witness: SumWitness | None
    bounds: Bounds
    skipped_classes: int = 0

    def to_json(self) -> dict:
        return {
            "projective": self.projective,
            "unifier": None if self.unifier is None else
                {name: render(f) for name, f in self.unifier.as_dict().items()},
            "rounds_used": self.rounds_used,
            "witness": None if self.witness is None else self.witness.to_json(),
            "bound": self.bounds.to_json(),
        }


@dataclass
class ApproxMember:
    formula: Formula
    codes: frozenset
    report: ProjectivityReport


@dataclass
class ApproxResult:
    pi: list[Formula]
    s_size: int
    bounds: Bounds
    exhaustive: bool
    members: list[ApproxMember] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "pi": [render(f) for f in self.pi],
            "s_size": self.s_size,
            "exhaustive": self.exhaustive,
            "bound": self.bounds.to_json(),
            "unifiers": [m.report.to_json()["unifier"] for m in self.members],
        }


@dataclass
class RuleVerdict:
    admissible: bool
    derivable: bool
    failing_psi: Formula | None
    exhaustive: bool
    bounds: Bounds

    def to_json(self) -> dict:
        return {
            "admissible": self.admissible,
            "derivable": self.derivable,
            "failing_psi": None if self.failing_psi is None else render(self.failing_psi),
            "exhaustive": self.exhaustive,
            "bound": self.bounds.to_json(),
        }


@dataclass
class RankInfo:
    per_world: dict[int, int]
    mu: int | None
    n: int

    def to_json(self) -> dict:
        return {"per_world": {str(w): r for w, r in sorted(self.per_world.items())},
                "mu": self.mu, "n": self.n}


# ---------------------------------------------------------------------------
# Fast model space (shared with the witness search and the iteration)
# ---------------------------------------------------------------------------

_FAST_CACHE: dict = {}


def _fast_space(ctx: VarContext, bounds: Bounds):
    key = (ctx.names, bounds.key())
    cached = _FAST_CACHE.get(key)
    if cached is None:
        models, truncated = enumerate_models_flagged(ctx, bounds)
        cached = ([FastModel(m, len(ctx)) for m in models], truncated)
        _FAST_CACHE[key] = cached
    return cached


# ---------------------------------------------------------------------------
# theta_W and theta_bar
# ---------------------------------------------------------------------------


def _theta_factor(phi: Formula, sigma: Substitution) -> Substitution:
    ctx = sigma.ctx
    images = tuple(
        simplify(lor(land(phi, var(i)), land(lnot(phi), sigma.images[i])))
        for i in range(len(ctx)))
    return Substitution(ctx, images)


def theta_W(phi: Formula, w: StratifiedModel,
            bounds: Bounds = DEFAULT_BOUNDS) -> Substitution:
    """Lemma substitution for one model: requires phi true at every
    R0-successor of the root; eliminates [0] on the root sheet, takes a GL
    projective unifier sigma of the residue, and returns
    p |-> (phi & p) | (~phi & sigma(p))."""
    tbl = force_table(w, phi)
    bad = [x for x in sorted(w.succ0[w.root]) if not tbl[x]]
    if bad:
        raise HypothesisViolated(
            f"phi false at R0-successor {bad[0]} of the root")
    sheet = w.root_sheet()
    # equivalent phrasing on rooted stratified models: phi holds everywhere
    # outside the root's 1-sheet
    assert all(tbl[x] for x in w.worlds if x not in sheet)
    sf = eliminate_box0(phi, w, sheet)
    res = gl_projective_unifier(sf, w.ctx, bounds)
    if not res.found:
        raise GLNotProjective(res.status)
    return _theta_factor(phi, res.substitution)


def _theta_factors(phi: Formula, universe: TypeUniverse,
                   bounds: Bounds) -> tuple[list[Substitution], int]:
    """Factors of theta_bar in canonical class order.  Classes whose
    representative refutes the hypothesis contribute no factor; classes
    sharing the same [0]-eliminated residue share one factor (the factor
    formula depends only on the residue).  Classes whose residue has no GL
    projective unifier are skipped and counted."""
    ctx = universe.ctx
    factors = []
    seen_bodies = set()
    skipped = 0
    for t in universe.types:
        rep = t.rep.model
        tbl = force_table(rep, phi)
        if not all(tbl[x] for x in rep.succ0[rep.root]):
            continue
        sf = eliminate_box0(phi, rep, rep.root_sheet())
        if sf.body in seen_bodies:
            continue
        seen_bodies.add(sf.body)
        res = gl_projective_unifier(sf, ctx, bounds)
        if not res.found:
            skipped += 1
            continue
        factors.append(_theta_factor(phi, res.substitution))
    return factors, skipped


def _compose_simplified(t: Substitution, s: Substitution) -> Substitution:
    return Substitution(t.ctx, tuple(simplify(img) for img in compose(t, s).images))


def theta_bar(phi: Formula, universe: TypeUniverse,
              bounds: Bounds = DEFAULT_BOUNDS) -> Substitution:
    """Composition of the per-class factors in canonical order (first
    factor acts on models first)."""
    factors, _ = _theta_factors(phi, universe, bounds)
    out = identity_subst(universe.ctx)
    for fac in factors:
        out = _compose_simplified(out, fac)
    return out


def apply_factors_model(factors, m: StratifiedModel) -> StratifiedModel:
    """Model action of a factor sequence (first factor first)."""
    fm = FastModel(m, len(m.ctx))
    state = fm.val
    for fac in factors:
        state = apply_images(fm, fac.images, state)
    return m.with_val(fm.state_to_val(state))


# ---------------------------------------------------------------------------
# 1-sum extension-property witness search (Proposition 7 shape)
# ---------------------------------------------------------------------------


def _sum_violation(phi: Formula, ctx: VarContext,
                   bounds: Bounds) -> SumWitness | None:
    """Search for a family of pairwise 1-congruent models of phi (possibly
    empty, over an admissible residue) whose 1-sum has no variant globally
    satisfying phi."""
    fasts, _ = _fast_space(ctx, bounds)
    nv = len(ctx)

    # Empty family: candidates are models with a trivial root sheet whose
    # non-root worlds all satisfy phi; the candidate itself plays the sum.
    for fm in fasts:
        m = fm.model
        if len(m.root_sheet()) != 1:
            continue
        mask = eval_mask(fm, phi)
        rootbit = 1 << fm.pos[m.root]
        nonroot = fm.full & ~rootbit
        if mask & nonroot != nonroot:
            continue
        if not _variant_exists(fm, phi, nv):
            return SumWitness(m, [], "no variant of the 1-sum over the empty "
                                     "family (fresh root below this residue) "
                                     "satisfies the formula")

    # Nonempty families, grouped by residue, summands deduplicated by the
    # type set of their root sheet at depth d-1 (the sum root's type, hence
    # the variant check, depends only on the union of those sets).
    d = depth(phi)
    groups: dict[bytes, list] = {}
    for fm in fasts:
        if eval_mask(fm, phi) != fm.full:
            continue
        m = fm.model
        if len(m.worlds) > bounds.max_worlds:
            continue
        groups.setdefault(residue_key(m), []).append(m)
    for gkey in sorted(groups):
        members = groups[gkey]
        by_sheet: dict[frozenset, StratifiedModel] = {}
        for m in members:
            codes = type_codes(m, max(d - 1, 0))
            sheet_set = frozenset(codes[x] for x in m.root_sheet())
            by_sheet.setdefault(sheet_set, m)
        keys = sorted(by_sheet, key=sorted)
        seen_unions = set()
        for family_keys in _subsets_upto(keys, bounds.max_summands):
            union = frozenset().union(*family_keys)
            if union in seen_unions:
                continue
            seen_unions.add(union)
            summands = [by_sheet[k] for k in family_keys]
            s = _one_sum_trusted(summands)
            sfm = FastModel(s, nv)
            if not _variant_exists(sfm, phi, nv):
                return SumWitness(s, summands,
                                  f"no variant of the 1-sum of {len(summands)} "
                                  "pairwise 1-congruent models of the formula "
                                  "satisfies it")
    return None


def _variant_exists(fm: FastModel, phi: Formula, nv: int) -> bool:
    rootbit = 1 << fm.pos[fm.model.root]
    for bits in range(1 << nv):
        state = tuple((fm.val[i] & ~rootbit) | (rootbit if bits >> i & 1 else 0)
                      for i in range(nv))
        if globally(fm, phi, state):
            return True
    return False


def _subsets_upto(items, k):
    import itertools
    for r in range(1, min(k, len(items)) + 1):
        yield from itertools.combinations(items, r)


# ---------------------------------------------------------------------------
# Projective unifier decision
# ---------------------------------------------------------------------------


def projective_unifier(phi: Formula, ctx: VarContext | None = None,
                       bounds: Bounds = DEFAULT_BOUNDS) -> ProjectivityReport:
    """Decide projectivity: a found 1-sum violation certifies the negative;
    otherwise theta_bar is iterated (at most one round per type class)
    until phi holds globally on every bounded candidate model, and the
    resulting substitution is verified.  Exhaustion without either outcome
    raises SearchInconclusive."""
    ctx = ctx or infer_ctx(phi)
    if not variables(phi):
        # Ground bypass: substitutions fix phi, so projective iff theorem.
        v = is_theorem(phi, ctx, bounds)
        if v.theorem:
            return ProjectivityReport(True, identity_subst(ctx), 0, None, bounds)
        wit = _sum_violation(phi, ctx, bounds)
        return ProjectivityReport(False, None, 0, wit, bounds)

    wit = _sum_violation(phi, ctx, bounds)
    if wit is not None:
        return ProjectivityReport(False, None, 0, wit, bounds)

    n = depth(phi)
    universe = enumerate_types(ctx, n + 1, bounds)
    factors, skipped = _theta_factors(phi, universe, bounds)
    fasts, truncated = _fast_space(ctx, bounds)

    work = []
    for fm in fasts:
        if eval_mask(fm, phi) != fm.full:
            work.append((fm, fm.val))
    rounds_used = 0
    if work:
        max_rounds = (len(universe.types) if not universe.truncated
                      else bounds.max_rounds)
        done = False
        while rounds_used < max_rounds and work:
            rounds_used += 1
            nxt = []
            progressed = False
            for fm, state in work:
                s = state
                for fac in factors:
                    s = apply_images(fm, fac.images, s)
                if eval_mask(fm, phi, s) == fm.full:
                    progressed = True
                    continue
                if s != state:
                    progressed = True
                nxt.append((fm, s))
            work = nxt
            if not work:
                done = True
                break
            if not progressed:
                break
        if not done:
            raise SearchInconclusive(
                "unifier iteration stalled with neither a verified unifier "
                "nor a 1-sum witness", bounds)
    if truncated:
        raise SearchInconclusive(
            "candidate space truncated; cannot certify the unifier", bounds)

    theta_round = identity_subst(ctx)
    for fac in factors:
        theta_round = _compose_simplified(theta_round, fac)
    theta = identity_subst(ctx)
    for _ in range(max(rounds_used, 0)):
        theta = _compose_simplified(theta, theta_round)
    _verify_unifier(phi, theta, factors, rounds_used, ctx, bounds, fasts)
    return ProjectivityReport(True, theta, rounds_used, None, bounds,
                              skipped_classes=skipped)


def _verify_unifier(phi, theta, factors, rounds, ctx, bounds, fasts):
    """Unifier and condition-(P) checks over the full bounded space via the
    factor sequence (the same bounded quantification decide would run),
    plus an agreement check of the materialized substitution against the
    factor sequence, and the literal decide-based checks when the
    materialized formulas are small enough to afford them."""
    seq = list(factors) * rounds
    sample_cap = 400
    for idx, fm in enumerate(fasts):
        state = fm.val
        for fac in seq:
            state = apply_images(fm, fac.images, state)
        if not globally(fm, phi, state):
            raise AssertionError("unifier failed the bounded theoremhood check")
        if eval_mask(fm, phi) == fm.full and state != fm.val:
            raise AssertionError("condition (P) failed: a global model moved")
        if idx < sample_cap:
            direct = apply_images(fm, theta.images, fm.val)
            if direct != state:
                raise AssertionError("materialized unifier disagrees with the "
                                     "factor sequence")
    if all(size(img) <= 2000 for img in theta.images) and size(phi) <= 2000:
        v = is_theorem(apply_subst(theta, phi), ctx, bounds)
        if not v.theorem:
            raise AssertionError("decide rejected the unifier")
        for i in range(len(ctx)):
            if size(theta.images[i]) <= 2000:
                c = consequence(phi, iff(theta.images[i], var(i)), ctx, bounds)
                if not c.theorem:
                    raise AssertionError("decide rejected condition (P)")


# ---------------------------------------------------------------------------
# Ranks
# ---------------------------------------------------------------------------


def rank_info(phi: Formula, m: StratifiedModel,
              universe: TypeUniverse) -> RankInfo:
    """rk(x): distinct (n+1)-classes among generated submodels at
    R0-successors of x that globally satisfy phi; mu: minimum of rk over
    worlds whose generated submodel refutes phi (absent when none)."""
    n1 = universe.n
    codes = type_codes(m, n1)
    tbl = force_table(m, phi)
    cone_ok = {}
    for x in m.worlds:
        cone = {x} | m.succ0[x] | m.succ1[x]
        cone_ok[x] = all(tbl[z] for z in cone)
    per_world = {x: len({codes[y] for y in m.succ0[x] if cone_ok[y]})
                 for x in m.worlds}
    refuting = [x for x in m.worlds if not cone_ok[x]]
    mu = min((per_world[x] for x in refuting), default=None)
    return RankInfo(per_world, mu, n1)


# ---------------------------------------------------------------------------
# K_n closures and projective approximation
# ---------------------------------------------------------------------------


def kn_closure(ts, n: int, universe: TypeUniverse) -> set[NType]:
    """Types of the least class of the form MOD_S(psi), d(psi) <= n,
    containing the given types: universe types every point of whose
    representative is n-bisimilar to a point of some member."""
    if universe.n != n:
        raise ValueError("universe depth must equal n")
    pts = set()
    for t in ts:
        pts |= set(type_codes(t.rep.model, n).values())
    out = set()
    for u in universe.types:
        if set(type_codes(u.rep.model, n).values()) <= pts:
            out.add(u)
    return out


def projective_approximation(phi: Formula, ctx: VarContext | None = None,
                             bounds: Bounds = DEFAULT_BOUNDS) -> ApproxResult:
    """Maximal projective depth-<=d(phi) consequences entailing phi.

    Candidate classes are the saturated subsets of the pointwise phi-types:
    T is saturated when every member type is realized by a model all of
    whose world types lie in T (so T is stable and MOD-definable), and the
    union closure of the realizable full type sets enumerates exactly the
    distinct MOD classes.  The search walks the lattice top-down, pruning
    anything below an already-projective class."""
    ctx = ctx or infer_ctx(phi)
    if not variables(phi):
        v = is_theorem(phi, ctx, bounds)
        if v.theorem:
            rep = ProjectivityReport(True, identity_subst(ctx), 0, None, bounds)
            return ApproxResult([phi], 1, bounds, True,
                                [ApproxMember(phi, frozenset(), rep)])
        return ApproxResult([], 1, bounds, True, [])

    n = depth(phi)
    universe = enumerate_types(ctx, n, bounds)
    exhaustive = not universe.truncated

    code_list = sorted(t.raw_code for t in universe.types)
    bit_of = {c: i for i, c in enumerate(code_list)}
    type_of_code = universe.by_code()

    pw_mask = 0
    for t in universe.types:
        if force(t.rep.model, t.rep.point, phi):
            pw_mask |= 1 << bit_of[t.raw_code]

    base = sorted({_mask_of(fs, bit_of) for fs in universe.full_sets
                   if _mask_of(fs, bit_of) & ~pw_mask == 0})

    def saturate(mask):
        out = 0
        for b in base:
            if b & ~mask == 0:
                out |= b
        return out

    t_max = saturate(pw_mask)
    survivors: list[tuple[int, Formula, ProjectivityReport]] = []
    visited = set()
    examined = 0
    capped = False

    def formula_of(mask):
        ts = [type_of_code[code_list[i]] for i in range(len(code_list))
              if mask >> i & 1]
        return class_to_formula(ts, n)

    stack = [t_max]
    while stack:
        mask = stack.pop()
        if mask in visited:
            continue
        visited.add(mask)
        if mask == 0:
            continue
        if any(mask & ~s == 0 for s, _, _ in survivors):
            continue
        if examined >= bounds.max_candidates:
            capped = True
            break
        examined += 1
        psi = formula_of(mask)
        try:
            report = projective_unifier(psi, ctx, bounds)
        except SearchInconclusive:
            exhaustive = False
            continue
        if report.projective:
            survivors.append((mask, psi, report))
            continue
        children = set()
        for i in range(len(code_list)):
            if mask >> i & 1:
                child = 0
                for b in base:
                    if b & ~mask == 0 and not b >> i & 1:
                        child |= b
                children.add(child)
        maximal = [c for c in children
                   if not any(c != d and c & ~d == 0 for d in children)]
        for c in sorted(maximal):
            stack.append(c)
    if capped:
        exhaustive = False

    # keep only the subset-maximal survivors (the DFS can reach nested ones
    # through different branches)
    keep = []
    for s, psi, rep in survivors:
        if not any(s != s2 and s & ~s2 == 0 for s2, _, _ in survivors):
            keep.append((s, psi, rep))
    keep.sort(key=lambda entry: (-bin(entry[0]).count("1"), entry[0]))
    members = [ApproxMember(psi, _codes_of(mask, code_list), rep)
               for mask, psi, rep in keep]
    return ApproxResult([m.formula for m in members], examined, bounds,
                        exhaustive, members)


def _mask_of(codes, bit_of):
    out = 0
    for c in codes:
        b = bit_of.get(c)
        if b is None:
            return -1 & 0  # unknown code: treat as not contained anywhere
        out |= 1 << b
    return out


def _codes_of(mask, code_list):
    return frozenset(code_list[i] for i in range(len(code_list)) if mask >> i & 1)


def is_unifiable(phi: Formula, ctx: VarContext | None = None,
                 bounds: Bounds = DEFAULT_BOUNDS) -> bool:
    """Unifiable iff the projective approximation is nonempty; for
    variable-free formulas, iff the formula is a theorem."""
    ctx = ctx or infer_ctx(phi)
    if not variables(phi):
        return is_theorem(phi, ctx, bounds).theorem
    r = projective_approximation(phi, ctx, bounds)
    if r.pi:
        return True
    if r.exhaustive:
        return False
    raise SearchInconclusive("projective approximation truncated", bounds)


def basis_of_unifiers(phi: Formula, ctx: VarContext | None = None,
                      bounds: Bounds = DEFAULT_BOUNDS) -> list[Substitution]:
    """Verified projective unifiers of the approximation members; pairwise
    incomparability mirrors the pairwise non-entailment of the members."""
    r = projective_approximation(phi, ctx or infer_ctx(phi), bounds)
    return [m.report.unifier for m in r.members]


def is_admissible(phi1: Formula, phi2: Formula, ctx: VarContext | None = None,
                  bounds: Bounds = DEFAULT_BOUNDS) -> RuleVerdict:
    """Rule phi1/phi2 is admissible iff every member of the projective
    approximation of phi1 entails phi2 (vacuously so when the premise is
    not unifiable)."""
    if ctx is None:
        hi = max(max(variables(phi1), default=-1), max(variables(phi2), default=-1))
        ctx = VarContext(tuple(f"p{i + 1}" for i in range(hi + 1)))
    approx = projective_approximation(phi1, ctx, bounds)
    derivable = is_theorem(implies(phi1, phi2), ctx, bounds).theorem
    failing = None
    admissible = True
    for member in approx.members:
        if not consequence(member.formula, phi2, ctx, bounds).theorem:
            failing = member.formula
            admissible = False
            break
    if admissible and not approx.exhaustive:
        raise SearchInconclusive(
            "cannot certify admissibility: approximation truncated", bounds)
    return RuleVerdict(admissible, derivable, failing, approx.exhaustive, bounds)
