"""n-bisimulation, characteristic formulas, canonical n-types, and bounded
enumeration of stratified models and type universes.

The model generator is the single engine behind type universes and the
bounded theoremhood search: it produces rooted stratified models layer by
layer (a poset of 1-sheets with a minimal root sheet; the root sheet is the
transitive closure of a tree rooted at the model root, other sheets are
closures of forests; all valuations).  Up to n-bisimulation this scheme
realizes every rooted stratified model type whose minimal realization fits
the bounds; exhaustiveness is certified at small scale by the brute-force
cross-checks in the test suite and reported via the `truncated` flag.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

from .formula import (Formula, VarContext, box, conj, diamond, disj, lnot,
                      top, var)
from .limits import Bounds, DEFAULT_BOUNDS
from .model import (PointedModel, StratifiedModel, _compute_sheets,
                    _sheet_order_of, build_model, generated_submodel,
                    model_to_json)


# ---------------------------------------------------------------------------
# n-bisimulation by the direct three-clause recursion
# ---------------------------------------------------------------------------


def nbisimilar(a: PointedModel, b: PointedModel, n: int) -> bool:
    """Atom agreement at the points plus forth/back matching for both
    relations, to depth n.  Memoized on (world, world, depth)."""
    ma, mb = a.model, b.model
    memo: dict[tuple[int, int, int], bool] = {}

    def go(x, y, k):
        key = (x, y, k)
        got = memo.get(key)
        if got is not None:
            return got
        if ma.val[x] != mb.val[y]:
            memo[key] = False
            return False
        if k == 0:
            memo[key] = True
            return True
        memo[key] = True  # provisional for cycles; relations are well-founded
        ok = True
        for sa, sb in ((ma.succ0, mb.succ0), (ma.succ1, mb.succ1)):
            for xs in sa[x]:
                if not any(go(xs, ys, k - 1) for ys in sb[y]):
                    ok = False
                    break
            if not ok:
                break
            for ys in sb[y]:
                if not any(go(xs, ys, k - 1) for xs in sa[x]):
                    ok = False
                    break
            if not ok:
                break
        memo[key] = ok
        return ok

    return go(a.point, b.point, n)


def nbisimilar_inf(a: PointedModel, b: PointedModel) -> bool:
    """~_inf on finite models: ~_k at the stabilization depth."""
    k = len(a.model.worlds) + len(b.model.worlds)
    return nbisimilar(a, b, k)


# ---------------------------------------------------------------------------
# Type codes: nested successor-type structure, serialized canonically
# ---------------------------------------------------------------------------


def type_codes(m: StratifiedModel, n: int) -> dict[int, str]:
    """Level-n type code of every world.  Codes are model-independent:
    equal codes across models iff the pointed generated submodels are
    n-bisimilar."""
    vbits = {w: "".join("1" if i in m.val[w] else "0" for i in range(len(m.ctx)))
             for w in m.worlds}
    codes = {w: f"v{vbits[w]}" for w in m.worlds}
    for _ in range(n):
        nxt = {}
        for w in m.worlds:
            s0 = ",".join(sorted({codes[y] for y in m.succ0[w]}))
            s1 = ",".join(sorted({codes[y] for y in m.succ1[w]}))
            nxt[w] = f"(v{vbits[w]}|{s0}|{s1})"
        codes = nxt
    return codes


def type_code(w: PointedModel, n: int) -> str:
    return type_codes(w.model, n)[w.point]


# ---------------------------------------------------------------------------
# Characteristic formulas
# ---------------------------------------------------------------------------


def char_formula(w: PointedModel, n: int) -> Formula:
    """Depth-<=n formula true at a point exactly on the models n-bisimilar
    to w: atom conjuncts, a diamond conjunct per successor, and one boxed
    successor-disjunction per relation."""
    m = w.model
    memo: dict[tuple[int, int], Formula] = {}

    def x_of(world, k):
        key = (world, k)
        got = memo.get(key)
        if got is not None:
            return got
        atoms = [var(i) if i in m.val[world] else lnot(var(i))
                 for i in range(len(m.ctx))]
        parts = list(atoms)
        if k > 0:
            for i, succ in ((0, m.succ0), (1, m.succ1)):
                for y in sorted(succ[world]):
                    parts.append(diamond(i, x_of(y, k - 1)))
            for i, succ in ((0, m.succ0), (1, m.succ1)):
                parts.append(box(i, disj(x_of(y, k - 1) for y in sorted(succ[world]))))
        out = conj(parts)
        memo[key] = out
        return out

    return x_of(w.point, n)


# ---------------------------------------------------------------------------
# Canonical minimal representatives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NType:
    """Canonical representative of an n-bisimulation class.  Equality is
    code equality; the rep is a minimal model realizing the class."""

    n: int
    rep: PointedModel
    raw_code: str

    @property
    def code(self) -> str:
        return self.raw_code.encode().hex()

    def __eq__(self, other):
        return isinstance(other, NType) and self.n == other.n and self.raw_code == other.raw_code

    def __hash__(self):
        return hash((self.n, self.raw_code))

    def to_json(self) -> dict:
        return {"n": self.n, "code": self.code,
                "rep": model_to_json(self.rep.model), "point": self.rep.point}


def _bisim_quotient(m: StratifiedModel, root: int) -> StratifiedModel:
    """Quotient by full bisimilarity (coarsest successor-stable partition).
    Legal on stratified models: no relation edge can join bisimilar worlds
    (an edge inside a class would yield an infinite ascending chain)."""
    color = {w: tuple(sorted(m.val[w])) for w in m.worlds}
    while True:
        sig = {w: (color[w],
                   frozenset(color[y] for y in m.succ0[w]),
                   frozenset(color[y] for y in m.succ1[w]))
               for w in m.worlds}
        unique = sorted(set(sig.values()), key=repr)
        index = {s: i for i, s in enumerate(unique)}
        new = {w: index[sig[w]] for w in m.worlds}
        if new == color:
            break
        color = new
    classes = sorted(set(color.values()))
    if len(classes) == len(m.worlds):
        return m
    rep_of = {}
    for w in sorted(m.worlds):
        rep_of.setdefault(color[w], w)
    keep = {color[w]: i for i, w in enumerate(sorted(rep_of.values()))}
    ids = {c: keep[c] for c in classes}
    worlds = tuple(sorted(ids.values()))
    succ0 = {ids[c]: frozenset() for c in classes}
    succ1 = {ids[c]: frozenset() for c in classes}
    val = {}
    for c, w in rep_of.items():
        succ0[ids[c]] = frozenset(ids[color[y]] for y in m.succ0[w])
        succ1[ids[c]] = frozenset(ids[color[y]] for y in m.succ1[w])
        val[ids[c]] = m.val[w]
    sheets = _compute_sheets(worlds, succ1)
    order = _sheet_order_of(sheets, succ0)
    return StratifiedModel(m.ctx, worlds, succ0, succ1, val, ids[color[root]],
                           sheets, order)


def _try_delete(m: StratifiedModel, w: int) -> StratifiedModel | None:
    """Remove one world if the result is still a rooted stratified model
    (transitivity survives deletion; sheet totality may not)."""
    keep = set(m.worlds) - {w}
    worlds = tuple(sorted(keep))
    succ0 = {x: m.succ0[x] & keep for x in worlds}
    succ1 = {x: m.succ1[x] & keep for x in worlds}
    val = {x: m.val[x] for x in worlds}
    try:
        return build_model(m.ctx, worlds,
                           [(x, y) for x in worlds for y in succ0[x]],
                           [(x, y) for x in worlds for y in succ1[x]],
                           val, m.root, close=False, validate=True)
    except Exception:
        return None


def type_of(w: PointedModel, n: int) -> NType:
    """Canonical minimal representative: restrict to the generated
    submodel, collapse bisimilar worlds, then greedily delete worlds while
    the point's level-n code survives, and relabel canonically."""
    sub = generated_submodel(w.model, w.point)
    code = type_code(sub, n)
    m = _bisim_quotient(sub.model, sub.point)
    changed = True
    while changed:
        changed = False
        for cand in sorted(m.worlds):
            if cand == m.root:
                continue
            smaller = _try_delete(m, cand)
            if smaller is not None and type_codes(smaller, n)[smaller.root] == code:
                m = smaller
                changed = True
                break
    m = _canonical_relabel(m)
    return NType(n, PointedModel(m, m.root), code)


def _canonical_relabel(m: StratifiedModel) -> StratifiedModel:
    order = _canonical_order(m)
    pos = {w: i for i, w in enumerate(order)}
    worlds = tuple(range(len(order)))
    succ0 = {pos[w]: frozenset(pos[y] for y in m.succ0[w]) for w in order}
    succ1 = {pos[w]: frozenset(pos[y] for y in m.succ1[w]) for w in order}
    val = {pos[w]: m.val[w] for w in order}
    sheets = _compute_sheets(worlds, succ1)
    sheet_order = _sheet_order_of(sheets, succ0)
    return StratifiedModel(m.ctx, worlds, succ0, succ1, val, pos[m.root],
                           sheets, sheet_order)


def _canonical_order(m: StratifiedModel) -> list[int]:
    """World order realizing the canonical encoding (ties broken by
    minimal encoding search, as in model.key())."""
    from .model import _canonical_key  # shares the labeling machinery
    best = None
    # Individualization-refinement already happens inside _canonical_key;
    # recover an order by trying candidate orders sorted by encoding.
    # Models here are tiny, so derive the order directly by brute refinement:
    ws = list(m.worlds)
    if len(ws) <= 1:
        return ws
    kbest = None
    for perm in _candidate_orders(m):
        enc = _encode_order(m, perm)
        if kbest is None or enc < kbest:
            kbest = enc
            best = perm
    return best


def _encode_order(m, order):
    pos = {w: i for i, w in enumerate(order)}
    return repr([
        len(order), pos[m.root],
        tuple(tuple(sorted(m.val[w])) for w in order),
        tuple(sorted((pos[x], pos[y]) for x in order for y in m.succ0[x])),
        tuple(sorted((pos[x], pos[y]) for x in order for y in m.succ1[x])),
    ]).encode()


def _candidate_orders(m):
    """Orders consistent with a stable color refinement; permutes only
    within color classes (classes are small after refinement)."""
    pred0 = {w: frozenset(x for x in m.worlds if w in m.succ0[x]) for w in m.worlds}
    pred1 = {w: frozenset(x for x in m.worlds if w in m.succ1[x]) for w in m.worlds}
    color = {w: (tuple(sorted(m.val[w])), w == m.root) for w in m.worlds}
    while True:
        sig = {w: (color[w],
                   tuple(sorted(repr(color[y]) for y in m.succ0[w])),
                   tuple(sorted(repr(color[y]) for y in m.succ1[w])),
                   tuple(sorted(repr(color[y]) for y in pred0[w])),
                   tuple(sorted(repr(color[y]) for y in pred1[w])))
               for w in m.worlds}
        unique = sorted(set(sig.values()), key=repr)
        index = {s: i for i, s in enumerate(unique)}
        new = {w: index[sig[w]] for w in m.worlds}
        if new == color:
            break
        color = new
    classes: dict[int, list[int]] = {}
    for w in sorted(m.worlds):
        classes.setdefault(color[w], []).append(w)
    groups = [classes[c] for c in sorted(classes)]
    for perms in itertools.product(*(itertools.permutations(g) for g in groups)):
        yield [w for group in perms for w in group]


# ---------------------------------------------------------------------------
# Bounded canonical model enumeration
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _tree_shapes(n: int) -> frozenset:
    """Rooted tree shapes on n nodes as sorted tuples of child shapes."""
    if n == 1:
        return frozenset({()})
    out = set()
    for forest in _forest_shapes(n - 1):
        out.add(forest)
    return frozenset(out)


@lru_cache(maxsize=None)
def _forest_shapes(n: int) -> frozenset:
    """Multisets of tree shapes totaling n nodes, as sorted tuples."""
    if n == 0:
        return frozenset({()})
    out = set()
    for k in range(1, n + 1):
        for t in _tree_shapes(k):
            for rest in _forest_shapes(n - k):
                out.add(tuple(sorted((t,) + rest)))
    return frozenset(out)


def _shape_size(shape) -> int:
    return 1 + sum(_shape_size(c) for c in shape)


def _materialize_tree(shape, next_id):
    """Tree shape to (root id, child edges, next id)."""
    root = next_id
    next_id += 1
    edges = []
    for child in shape:
        cid, cedges, next_id = _materialize_tree(child, next_id)
        edges.append((root, cid))
        edges.extend(cedges)
    return root, edges, next_id


def _materialize_forest(shapes, next_id):
    nodes_start = next_id
    edges = []
    for t in shapes:
        _, tedges, next_id = _materialize_tree(t, next_id)
        edges.extend(tedges)
    return list(range(nodes_start, next_id)), edges, next_id


@lru_cache(maxsize=None)
def _strict_orders(k: int) -> tuple:
    """All strict partial orders on {0..k-1} as sorted pair tuples."""
    elems = range(k)
    pairs = [(a, b) for a in elems for b in elems if a != b]
    out = []
    for bits in itertools.product((False, True), repeat=len(pairs)):
        rel = {p for p, keep in zip(pairs, bits) if keep}
        ok = True
        for a, b in rel:
            if (b, a) in rel:
                ok = False
                break
            for c, d in rel:
                if b == c and (a, d) not in rel:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            out.append(tuple(sorted(rel)))
    return tuple(out)


def _closure_edges(nodes, edges):
    succ = {w: set() for w in nodes}
    for a, b in edges:
        succ[a].add(b)
    changed = True
    while changed:
        changed = False
        for w in nodes:
            extra = set()
            for y in succ[w]:
                extra |= succ[y] - succ[w]
            if extra:
                succ[w] |= extra
                changed = True
    return succ


def _frames(bounds: Bounds):
    """All frame skeletons within bounds: (worlds, succ0, succ1, root)."""
    for total in range(1, bounds.max_worlds + 1):
        for nsheets in range(1, min(bounds.max_sheets, total) + 1):
            for sizes in _compositions(total, nsheets, bounds.max_sheet_worlds):
                for suborder in _strict_orders(nsheets - 1):
                    root_shapes = sorted(_tree_shapes(sizes[0]))
                    upper_shapes = [sorted(_forest_shapes(s)) for s in sizes[1:]]
                    for root_shape in root_shapes:
                        for uppers in itertools.product(*upper_shapes):
                            yield _assemble_frame(sizes, suborder, root_shape, uppers)


def _compositions(total, parts, cap):
    if parts == 1:
        if total <= cap:
            yield (total,)
        return
    for first in range(1, min(cap, total - parts + 1) + 1):
        for rest in _compositions(total - first, parts - 1, cap):
            yield (first,) + rest


def _assemble_frame(sizes, suborder, root_shape, uppers):
    root, r1_edges, next_id = _materialize_tree(root_shape, 0)
    sheet_members = [list(range(0, next_id))]
    for shapes in uppers:
        nodes, edges, next_id = _materialize_forest(shapes, next_id)
        sheet_members.append(nodes)
        r1_edges.extend(edges)
    worlds = tuple(range(next_id))
    succ1 = {w: frozenset(s) for w, s in _closure_edges(worlds, r1_edges).items()}
    # sheet order: sheet 0 below every other; suborder shifts by one
    order = {(0, j) for j in range(1, len(sizes))}
    order |= {(a + 1, b + 1) for a, b in suborder}
    succ0 = {w: set() for w in worlds}
    for i, j in order:
        for x in sheet_members[i]:
            succ0[x].update(sheet_members[j])
    succ0 = {w: frozenset(s) for w, s in succ0.items()}
    sheets = tuple(frozenset(s) for s in sheet_members)
    return worlds, succ0, succ1, root, sheets, frozenset(order)


def enumerate_models(ctx: VarContext, bounds: Bounds = DEFAULT_BOUNDS):
    """Yield rooted stratified models in deterministic generation order
    (size-major).  Raises nothing on cap: stops after max_candidates and
    the caller sees fewer models; use enumerate_models_flagged to know."""
    yield from _enumerate_models_impl(ctx, bounds)[0]


_MODEL_CACHE: dict = {}


def _enumerate_models_impl(ctx: VarContext, bounds: Bounds):
    key = (ctx.names, bounds.key())
    cached = _MODEL_CACHE.get(key)
    if cached is not None:
        return cached
    models = []
    truncated = False
    nv = len(ctx)
    count = 0
    for worlds, succ0, succ1, root, sheets, order in _frames(bounds):
        valspace = itertools.product(range(1 << nv), repeat=len(worlds))
        for bits in valspace:
            if count >= bounds.max_candidates:
                truncated = True
                break
            val = {w: frozenset(i for i in range(nv) if bits[w] >> i & 1)
                   for w in worlds}
            m = StratifiedModel(ctx, worlds, succ0, succ1, val, root, sheets, order)
            models.append(m)
            count += 1
        if truncated:
            break
    result = (models, truncated)
    if len(models) <= 300_000:
        _MODEL_CACHE[key] = result
    return result


def enumerate_models_flagged(ctx: VarContext, bounds: Bounds = DEFAULT_BOUNDS):
    return _enumerate_models_impl(ctx, bounds)


# ---------------------------------------------------------------------------
# Type universes
# ---------------------------------------------------------------------------


@dataclass
class TypeUniverse:
    """Deterministically ordered, pairwise non-n-bisimilar types, with the
    realizable full type-set family used for stability computations.
    truncated=True records that a generation bound cut the enumeration."""

    n: int
    ctx: VarContext
    types: tuple[NType, ...]
    truncated: bool
    bounds: Bounds
    full_sets: frozenset  # frozensets of raw codes realizable as the
    #                       complete per-world type set of one model

    def by_code(self) -> dict[str, NType]:
        return {t.raw_code: t for t in self.types}

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "vars": list(self.ctx.names),
            "truncated": self.truncated,
            "bounds": self.bounds.to_json(),
            "types": [t.to_json() for t in self.types],
        }


_UNIVERSE_CACHE: dict = {}


def enumerate_types(ctx: VarContext, n: int, bounds: Bounds = DEFAULT_BOUNDS) -> TypeUniverse:
    """Generate candidate models in canonical order and deduplicate by
    level-n code, keeping a canonical minimal representative per class."""
    key = (ctx.names, n, bounds.key())
    cached = _UNIVERSE_CACHE.get(key)
    if cached is not None:
        return cached
    models, truncated = _enumerate_models_impl(ctx, bounds)
    first_model: dict[str, StratifiedModel] = {}
    full_sets = set()
    for m in models:
        codes = type_codes(m, n)
        root_code = codes[m.root]
        if root_code not in first_model:
            first_model[root_code] = m
        full_sets.add(frozenset(codes.values()))
    if not first_model:
        raise ValueError("bound exhausted before any type emitted")
    types = []
    for code in sorted(first_model):
        t = type_of(PointedModel(first_model[code], first_model[code].root), n)
        assert t.raw_code == code
        types.append(t)
    universe = TypeUniverse(n, ctx, tuple(types), truncated, bounds,
                            frozenset(full_sets))
    _UNIVERSE_CACHE[key] = universe
    return universe


def class_to_formula(ts, n: int) -> Formula:
    """Disjunction of the characteristic formulas of the given types
    (empty set yields F)."""
    ordered = sorted(ts, key=lambda t: t.raw_code)
    return disj(char_formula(t.rep, n) for t in ordered)
