"""Finite rooted Kripke models in stratified normal form.

A stratified model decomposes into 1-sheets (equivalence classes of the
symmetric-reflexive-transitive closure of R1), each an irreflexive
transitive R1-model, with a strict partial order on sheets inducing the
world-level R0 as the full relation between comparable sheets.  Relations
are stored transitively closed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .formula import (AND, BOT, BOX, IMPLIES, NOT, OR, TOP, VAR, Formula,
                      Substitution, VarContext)


class UnknownWorld(ValueError):
    pass


class InvalidFrame(ValueError):
    def __init__(self, report):
        super().__init__(f"frame conditions violated: {report.violations}")
        self.report = report


class NotStratified(ValueError):
    pass


class NoRoot(ValueError):
    pass


class NotOneCongruent(ValueError):
    pass


# ---------------------------------------------------------------------------
# Raw import format and frame validation
# ---------------------------------------------------------------------------


@dataclass
class RawModel:
    """Unvalidated model data as imported (relations need not be closed)."""

    worlds: list[int]
    r0: list[tuple[int, int]]
    r1: list[tuple[int, int]]
    val: dict[int, frozenset[int]]
    root: int | None = None
    ctx: VarContext = field(default_factory=lambda: VarContext(()))


@dataclass
class FrameReport:
    """Outcome of the three frame-condition families, each independent.

    ignatiev_ok    both relations irreflexive+transitive, and R1-related
                   worlds share their R0-successors
    j2_ok          composition law x R0 y & y R1 z => x R0 z (the m<n
                   instance; the m=n instances coincide with transitivity,
                   reported under ignatiev_ok)
    stratified_ok  condition z R0 x & y R1 x => z R0 y

    violations holds (tag, witness worlds in clause order), first witness
    per violated condition.
    """

    ignatiev_ok: bool
    j2_ok: bool
    stratified_ok: bool
    violations: list[tuple[str, tuple[int, ...]]]

    @property
    def all_ok(self) -> bool:
        return self.ignatiev_ok and self.j2_ok and self.stratified_ok

    def to_json(self) -> dict:
        return {
            "ignatiev_ok": self.ignatiev_ok,
            "j2_ok": self.j2_ok,
            "stratified_ok": self.stratified_ok,
            "violations": [[tag, list(ws)] for tag, ws in self.violations],
        }


def _succ_map(worlds, pairs):
    succ = {w: set() for w in worlds}
    for x, y in pairs:
        if x not in succ or y not in succ:
            raise UnknownWorld(f"relation mentions unknown world in pair ({x}, {y})")
        succ[x].add(y)
    return succ


def transitive_closure(worlds, pairs):
    succ = _succ_map(worlds, pairs)
    order = sorted(worlds)
    changed = True
    while changed:
        changed = False
        for x in order:
            extra = set()
            for y in succ[x]:
                extra |= succ[y] - succ[x]
            if extra:
                succ[x] |= extra
                changed = True
    return {(x, y) for x in order for y in sorted(succ[x])}


def validate_frame(m: RawModel) -> FrameReport:
    """Check the frame conditions on raw relation data, reporting the first
    witness per violated condition."""
    worlds = sorted(m.worlds)
    succ0 = _succ_map(worlds, m.r0)
    succ1 = _succ_map(worlds, m.r1)
    violations = []
    seen = set()

    def report(tag, witness):
        if tag not in seen:
            seen.add(tag)
            violations.append((tag, witness))

    for i, succ in ((0, succ0), (1, succ1)):
        for x in worlds:
            if x in succ[x]:
                report(f"r{i}-irreflexive", (x,))
        for x in worlds:
            for y in sorted(succ[x]):
                for z in sorted(succ[y]):
                    if z not in succ[x]:
                        report(f"r{i}-transitive", (x, y, z))
    for x in worlds:
        for y in sorted(succ1[x]):
            for z in worlds:
                if (z in succ0[x]) != (z in succ0[y]):
                    report("ignatiev-coherence", (x, y, z))
    for x in worlds:
        for y in sorted(succ0[x]):
            for z in sorted(succ1[y]):
                if z not in succ0[x]:
                    report("j2-composition", (x, y, z))
    for z in worlds:
        for x in sorted(succ0[z]):
            for y in worlds:
                if x in succ1[y] and y not in succ0[z]:
                    report("stratified", (z, x, y))

    tags = {tag for tag, _ in violations}
    ignatiev_ok = not any(
        t in tags for t in ("r0-irreflexive", "r1-irreflexive", "r0-transitive",
                            "r1-transitive", "ignatiev-coherence"))
    return FrameReport(
        ignatiev_ok=ignatiev_ok,
        j2_ok="j2-composition" not in tags,
        stratified_ok="stratified" not in tags,
        violations=violations,
    )


# ---------------------------------------------------------------------------
# Stratified models
# ---------------------------------------------------------------------------


class StratifiedModel:
    """Immutable rooted model in sheet-normal form.  Construct through
    stratify(), build_model(), or the structural operations below."""

    __slots__ = ("ctx", "worlds", "succ0", "succ1", "val", "root",
                 "sheets", "sheet_order", "_key", "_force_cache")

    def __init__(self, ctx, worlds, succ0, succ1, val, root, sheets, sheet_order):
        self.ctx = ctx
        self.worlds = worlds          # sorted tuple of ints
        self.succ0 = succ0            # world -> frozenset of worlds
        self.succ1 = succ1
        self.val = val                # world -> frozenset of var indices
        self.root = root
        self.sheets = sheets          # tuple of frozensets of worlds
        self.sheet_order = sheet_order  # frozenset of (i, j) sheet-index pairs
        self._key = None
        self._force_cache = {}

    def __eq__(self, other):
        return (isinstance(other, StratifiedModel)
                and self.worlds == other.worlds and self.root == other.root
                and self.succ0 == other.succ0 and self.succ1 == other.succ1
                and self.val == other.val)

    def __hash__(self):
        return hash((self.worlds, self.root,
                     tuple(sorted((w, tuple(sorted(v))) for w, v in self.val.items()))))

    def __repr__(self):
        return (f"StratifiedModel(worlds={list(self.worlds)}, root={self.root}, "
                f"sheets={[sorted(s) for s in self.sheets]})")

    def r0_pairs(self):
        return sorted((x, y) for x in self.worlds for y in sorted(self.succ0[x]))

    def r1_pairs(self):
        return sorted((x, y) for x in self.worlds for y in sorted(self.succ1[x]))

    def sheet_of(self, x) -> int:
        for i, s in enumerate(self.sheets):
            if x in s:
                return i
        raise UnknownWorld(f"world {x} not in model")

    def root_sheet(self) -> frozenset:
        return self.sheets[self.sheet_of(self.root)]

    def key(self) -> bytes:
        """Canonical encoding; equal iff models are isomorphic (rooted)."""
        if self._key is None:
            self._key = _canonical_key(self.worlds, self.succ0, self.succ1,
                                       self.val, self.root)
        return self._key

    def with_val(self, val) -> "StratifiedModel":
        """Same frame, new valuation (no revalidation needed)."""
        return StratifiedModel(self.ctx, self.worlds, self.succ0, self.succ1,
                               dict(val), self.root, self.sheets, self.sheet_order)


@dataclass(frozen=True)
class PointedModel:
    model: StratifiedModel
    point: int

    def __post_init__(self):
        if self.point not in self.model.worlds:
            raise UnknownWorld(f"point {self.point} not in model")


def _compute_sheets(worlds, succ1):
    """E1-classes: connected components of the symmetric closure of R1."""
    parent = {w: w for w in worlds}

    def find(w):
        while parent[w] != w:
            parent[w] = parent[parent[w]]
            w = parent[w]
        return w

    for x in worlds:
        for y in succ1[x]:
            parent[find(x)] = find(y)
    groups = {}
    for w in worlds:
        groups.setdefault(find(w), set()).add(w)
    return tuple(frozenset(g) for g in sorted(groups.values(), key=lambda g: min(g)))


def _sheet_order_of(sheets, succ0):
    order = set()
    for i, a in enumerate(sheets):
        for j, b in enumerate(sheets):
            if i != j and any(y in succ0[x] for x in a for y in b):
                order.add((i, j))
    return frozenset(order)


def build_model(ctx, worlds, r0, r1, val, root, *, close=True, validate=True):
    """Assemble a StratifiedModel from relation data.

    Closes the relations transitively (unless close=False), validates all
    frame conditions, verifies the sheet reconstruction of R0, and requires
    the root to generate every world.
    """
    worlds = tuple(sorted(worlds))
    if close:
        r0 = transitive_closure(worlds, r0)
        r1 = transitive_closure(worlds, r1)
    succ0 = {w: frozenset(y for x, y in r0 if x == w) for w in worlds}
    succ1 = {w: frozenset(y for x, y in r1 if x == w) for w in worlds}
    val = {w: frozenset(val.get(w, frozenset())) for w in worlds}
    if validate:
        raw = RawModel(list(worlds), sorted(r0), sorted(r1), val, root, ctx)
        report = validate_frame(raw)
        if not report.all_ok:
            raise InvalidFrame(report)
    sheets = _compute_sheets(worlds, succ1)
    sheet_order = _sheet_order_of(sheets, succ0)
    m = StratifiedModel(ctx, worlds, succ0, succ1, val, root, sheets, sheet_order)
    if validate:
        _check_stratified_shape(m)
    return m


def _check_stratified_shape(m):
    """Reconstruction check: the world-level R0 must be exactly the full
    relation between sheet_order-comparable sheets, and the root must
    generate the model from a minimal sheet."""
    recon = set()
    for i, j in m.sheet_order:
        for x in m.sheets[i]:
            for y in m.sheets[j]:
                recon.add((x, y))
    actual = {(x, y) for x in m.worlds for y in m.succ0[x]}
    if recon != actual:
        raise NotStratified(
            "R0 is not total between comparable 1-sheets; "
            f"missing={sorted(recon - actual)[:3]} extra={sorted(actual - recon)[:3]}")
    if m.root is None:
        raise NoRoot("model has no root")
    if m.root not in m.worlds:
        raise UnknownWorld(f"root {m.root} not a world")
    reach = {m.root} | set(m.succ0[m.root]) | set(m.succ1[m.root])
    changed = True
    while changed:
        changed = False
        for x in list(reach):
            extra = (m.succ0[x] | m.succ1[x]) - reach
            if extra:
                reach |= extra
                changed = True
    if reach != set(m.worlds):
        raise NoRoot(f"root {m.root} does not generate worlds {sorted(set(m.worlds) - reach)}")
    ri = m.sheet_of(m.root)
    if any((j, ri) in m.sheet_order for j in range(len(m.sheets))):
        raise NotStratified("root sheet is not minimal")


def stratify(m: RawModel) -> StratifiedModel:
    """Validate a raw model and convert it to sheet-normal form."""
    report = validate_frame(m)
    if not report.all_ok:
        raise InvalidFrame(report)
    root = m.root
    if root is None:
        root = _find_root(m)
    return build_model(m.ctx, m.worlds, m.r0, m.r1, m.val, root,
                       close=True, validate=True)


def _find_root(m: RawModel):
    worlds = sorted(m.worlds)
    succ0 = _succ_map(worlds, m.r0)
    succ1 = _succ_map(worlds, m.r1)
    for w in worlds:
        reach = {w}
        frontier = [w]
        while frontier:
            x = frontier.pop()
            for y in succ0[x] | succ1[x]:
                if y not in reach:
                    reach.add(y)
                    frontier.append(y)
        if reach == set(worlds):
            return w
    raise NoRoot("no world generates the whole model")


# ---------------------------------------------------------------------------
# Forcing
# ---------------------------------------------------------------------------


def force_table(m: StratifiedModel, f: Formula) -> dict[int, bool]:
    """Truth of f at every world, computed bottom-up and cached per model."""
    cached = m._force_cache.get(f)
    if cached is not None:
        return cached
    # iterative postorder over distinct subformulas
    tables: dict[Formula, dict[int, bool]] = m._force_cache
    stack = [f]
    while stack:
        g = stack[-1]
        if g in tables:
            stack.pop()
            continue
        missing = [c for c in g.children if c not in tables]
        if missing:
            stack.extend(missing)
            continue
        stack.pop()
        k = g.kind
        if k == VAR:
            t = {w: g.var_index in m.val[w] for w in m.worlds}
        elif k == TOP:
            t = {w: True for w in m.worlds}
        elif k == BOT:
            t = {w: False for w in m.worlds}
        elif k == NOT:
            c = tables[g.children[0]]
            t = {w: not c[w] for w in m.worlds}
        elif k == AND:
            a, b = (tables[c] for c in g.children)
            t = {w: a[w] and b[w] for w in m.worlds}
        elif k == OR:
            a, b = (tables[c] for c in g.children)
            t = {w: a[w] or b[w] for w in m.worlds}
        elif k == IMPLIES:
            a, b = (tables[c] for c in g.children)
            t = {w: (not a[w]) or b[w] for w in m.worlds}
        elif k == BOX:
            c = tables[g.children[0]]
            succ = m.succ0 if g.modality == 0 else m.succ1
            t = {w: all(c[y] for y in succ[w]) for w in m.worlds}
        else:  # pragma: no cover
            raise ValueError(f"unknown node kind {k}")
        tables[g] = t
    return tables[f]


def force(m: StratifiedModel, x: int, f: Formula) -> bool:
    if x not in m.worlds:
        raise UnknownWorld(f"world {x} not in model")
    return force_table(m, f)[x]


def globally_true(m: StratifiedModel, f: Formula) -> bool:
    t = force_table(m, f)
    return all(t[w] for w in m.worlds)


# ---------------------------------------------------------------------------
# Structural operations
# ---------------------------------------------------------------------------


def generated_submodel(m: StratifiedModel, x: int) -> PointedModel:
    """Least submodel containing x and closed under both relations,
    rooted at x."""
    if x not in m.worlds:
        raise UnknownWorld(f"world {x} not in model")
    keep = {x}
    frontier = [x]
    while frontier:
        w = frontier.pop()
        for y in m.succ0[w] | m.succ1[w]:
            if y not in keep:
                keep.add(y)
                frontier.append(y)
    if keep == set(m.worlds) and x == m.root:
        return PointedModel(m, x)
    sub = _restrict(m, keep, x)
    return PointedModel(sub, x)


def _restrict(m: StratifiedModel, keep: set, root: int) -> StratifiedModel:
    worlds = tuple(sorted(keep))
    succ0 = {w: m.succ0[w] & keep for w in worlds}
    succ1 = {w: m.succ1[w] & keep for w in worlds}
    val = {w: m.val[w] for w in worlds}
    sheets = _compute_sheets(worlds, succ1)
    order = _sheet_order_of(sheets, succ0)
    return StratifiedModel(m.ctx, worlds, succ0, succ1, val, root, sheets, order)


def variant(m: StratifiedModel, root_val) -> StratifiedModel:
    """Same frame and root; valuation changed only at the root."""
    val = dict(m.val)
    val[m.root] = frozenset(root_val)
    return m.with_val(val)


def residue_key(m: StratifiedModel) -> bytes:
    """Canonical encoding of the unrooted model left after deleting the
    root's 1-sheet."""
    keep = set(m.worlds) - set(m.root_sheet())
    worlds = tuple(sorted(keep))
    succ0 = {w: m.succ0[w] & keep for w in worlds}
    succ1 = {w: m.succ1[w] & keep for w in worlds}
    val = {w: m.val[w] for w in worlds}
    return _canonical_key(worlds, succ0, succ1, val, None)


def one_congruent(a: StratifiedModel, b: StratifiedModel) -> bool:
    """True iff deleting each root's 1-sheet leaves isomorphic residues."""
    return residue_key(a) == residue_key(b)


def one_sum(ms: list[StratifiedModel]) -> StratifiedModel:
    """Merge pairwise 1-congruent rooted models: shared residue kept once,
    root sheets placed side by side in one sheet under a fresh
    empty-valuation root attached by R1."""
    if not ms:
        raise ValueError("one_sum requires at least one summand")
    base = ms[0]
    rk = residue_key(base)
    for other in ms[1:]:
        if residue_key(other) != rk:
            raise NotOneCongruent("summands are not pairwise 1-congruent")
    return _one_sum_trusted(ms)


def _one_sum_trusted(ms) -> StratifiedModel:
    ctx = ms[0].ctx if ms else VarContext(())
    fresh = 0
    worlds = [fresh]
    val = {fresh: frozenset()}
    succ0 = {fresh: set()}
    succ1 = {fresh: set()}
    residue_ids = {}
    if ms:
        base = ms[0]
        res = sorted(set(base.worlds) - set(base.root_sheet()))
        next_id = 1
        for w in res:
            residue_ids[w] = next_id
            worlds.append(next_id)
            val[next_id] = base.val[w]
            succ0[next_id] = set()
            succ1[next_id] = set()
            next_id += 1
        for w in res:
            succ0[residue_ids[w]] = {residue_ids[y] for y in base.succ0[w]}
            succ1[residue_ids[w]] = {residue_ids[y] for y in base.succ1[w]}
        sheet_ids = []
        for summand in ms:
            ids = {}
            for w in sorted(summand.root_sheet()):
                ids[w] = next_id
                worlds.append(next_id)
                val[next_id] = summand.val[w]
                succ0[next_id] = set()
                succ1[next_id] = set()
                sheet_ids.append(next_id)
                next_id += 1
            for w, nw in ids.items():
                succ1[nw] = {ids[y] for y in summand.succ1[w] if y in ids}
        all_res = set(residue_ids.values())
        for nw in sheet_ids + [fresh]:
            succ0[nw] = set(all_res)
        succ1[fresh] = set(sheet_ids)
    worlds = tuple(sorted(worlds))
    succ0 = {w: frozenset(succ0[w]) for w in worlds}
    succ1 = {w: frozenset(succ1[w]) for w in worlds}
    sheets = _compute_sheets(worlds, succ1)
    order = _sheet_order_of(sheets, succ0)
    return StratifiedModel(ctx, worlds, succ0, succ1, val, fresh, sheets, order)


def apply_subst_model(s: Substitution, m: StratifiedModel) -> StratifiedModel:
    """Same frame; p_i becomes true at x iff s(p_i) was true at x."""
    tables = [force_table(m, s.images[i]) for i in range(len(s.ctx))]
    val = {w: frozenset(i for i in range(len(s.ctx)) if tables[i][w])
           for w in m.worlds}
    return m.with_val(val)


# ---------------------------------------------------------------------------
# Canonical labeling (refinement + individualization, minimal encoding)
# ---------------------------------------------------------------------------


def _canonical_key(worlds, succ0, succ1, val, root) -> bytes:
    if not worlds:
        return b"()"
    pred0 = {w: frozenset(x for x in worlds if w in succ0[x]) for w in worlds}
    pred1 = {w: frozenset(x for x in worlds if w in succ1[x]) for w in worlds}

    def refine(color):
        while True:
            sig = {}
            for w in worlds:
                sig[w] = (
                    color[w],
                    tuple(sorted(color[y] for y in succ0[w])),
                    tuple(sorted(color[y] for y in succ1[w])),
                    tuple(sorted(color[y] for y in pred0[w])),
                    tuple(sorted(color[y] for y in pred1[w])),
                )
            unique = sorted(set(sig.values()))
            index = {s: i for i, s in enumerate(unique)}
            new = {w: index[sig[w]] for w in worlds}
            if new == color:
                return color
            color = new

    def init_color():
        sig = {w: (tuple(sorted(val[w])), 1 if w == root else 0,
                   len(succ0[w]), len(succ1[w]), len(pred0[w]), len(pred1[w]))
               for w in worlds}
        unique = sorted(set(sig.values()))
        index = {s: i for i, s in enumerate(unique)}
        return {w: index[sig[w]] for w in worlds}

    def encode(order):
        pos = {w: i for i, w in enumerate(order)}
        parts = [
            len(order),
            pos[root] if root is not None else -1,
            tuple(tuple(sorted(val[w])) for w in order),
            tuple(sorted((pos[x], pos[y]) for x in order for y in succ0[x])),
            tuple(sorted((pos[x], pos[y]) for x in order for y in succ1[x])),
        ]
        return repr(parts).encode()

    best = [None]

    def search(color):
        classes = {}
        for w in worlds:
            classes.setdefault(color[w], []).append(w)
        ordered = [classes[c] for c in sorted(classes)]
        target = next((cl for cl in ordered if len(cl) > 1), None)
        if target is None:
            order = [cl[0] for cl in ordered]
            enc = encode(order)
            if best[0] is None or enc < best[0]:
                best[0] = enc
            return
        n_colors = len(classes)
        for w in sorted(target):
            forked = dict(color)
            forked[w] = n_colors  # individualize
            search(refine(forked))

    search(refine(init_color()))
    return best[0]


def model_key(m: StratifiedModel) -> bytes:
    return m.key()


# ---------------------------------------------------------------------------
# JSON import/export
# ---------------------------------------------------------------------------


def raw_from_json(data: dict, ctx: VarContext | None = None) -> RawModel:
    """Parse the model schema: worlds, r0, r1, val (world -> variable names),
    root.  Unlisted variables are false; relations may be non-closed."""
    worlds = [int(w) for w in data["worlds"]]
    names = set()
    for vs in data.get("val", {}).values():
        names.update(vs)
    if ctx is None:
        ctx = VarContext(tuple(sorted(names, key=lambda s: (len(s), s))))
    else:
        unknown = names - set(ctx.names)
        if unknown:
            raise UnknownWorld(f"valuation mentions unknown variables {sorted(unknown)}")
    val = {}
    for w in worlds:
        listed = data.get("val", {}).get(str(w), [])
        val[w] = frozenset(ctx.index(name) for name in listed)
    r0 = [(int(a), int(b)) for a, b in data.get("r0", [])]
    r1 = [(int(a), int(b)) for a, b in data.get("r1", [])]
    root = data.get("root")
    return RawModel(worlds, r0, r1, val, None if root is None else int(root), ctx)


def model_from_json(data: dict, ctx: VarContext | None = None) -> StratifiedModel:
    return stratify(raw_from_json(data, ctx))


def load_model(path: str, ctx: VarContext | None = None) -> StratifiedModel:
    with open(path) as fh:
        return model_from_json(json.load(fh), ctx)


def model_to_json(m: StratifiedModel) -> dict:
    return {
        "worlds": list(m.worlds),
        "r0": [list(p) for p in m.r0_pairs()],
        "r1": [list(p) for p in m.r1_pairs()],
        "val": {str(w): sorted((m.ctx.names[i] for i in m.val[w]),
                               key=lambda s: (len(s), s))
                for w in m.worlds},
        "root": m.root,
        "sheets": [sorted(s) for s in m.sheets],
        "sheet_order": [list(p) for p in sorted(m.sheet_order)],
    }
