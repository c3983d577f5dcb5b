"""Bitmask forcing engine for the search-heavy paths.

Worlds of a model are packed into an int; a formula compiles once into a
postorder op list and evaluates to a mask of worlds where it holds.  Only
the unifier iteration and witness searches use this; the public force()
in model.py is the reference implementation and the test suite checks the
two against each other.
"""

from __future__ import annotations

from .formula import AND, BOT, BOX, IMPLIES, NOT, OR, TOP, VAR, Formula
from .model import StratifiedModel

_COMPILED: dict[Formula, list] = {}


def compile_formula(f: Formula) -> list:
    """Postorder op list over distinct subformulas: entries
    (kind, left slot, right slot, var_index, modality)."""
    cached = _COMPILED.get(f)
    if cached is not None:
        return cached
    slots: dict[Formula, int] = {}
    ops = []

    def go(g):
        got = slots.get(g)
        if got is not None:
            return got
        kids = [go(c) for c in g.children]
        a = kids[0] if kids else -1
        b = kids[1] if len(kids) > 1 else -1
        idx = len(ops)
        ops.append((g.kind, a, b, g.var_index, g.modality))
        slots[g] = idx
        return idx

    go(f)
    _COMPILED[f] = ops
    return ops


class FastModel:
    """Packed successor masks and valuation masks for one model."""

    __slots__ = ("n", "worlds", "pos", "succ0", "succ1", "full", "val", "model")

    def __init__(self, m: StratifiedModel, nvars: int):
        self.model = m
        self.worlds = list(m.worlds)
        self.n = len(self.worlds)
        self.pos = {w: i for i, w in enumerate(self.worlds)}
        self.full = (1 << self.n) - 1
        self.succ0 = [self._mask(m.succ0[w]) for w in self.worlds]
        self.succ1 = [self._mask(m.succ1[w]) for w in self.worlds]
        self.val = tuple(self._mask({w for w in self.worlds if i in m.val[w]})
                         for i in range(nvars))

    def _mask(self, ws):
        out = 0
        for w in ws:
            out |= 1 << self.pos[w]
        return out

    def state_to_val(self, state):
        """Decode a state (per-variable world masks) back into a valuation
        dict usable by StratifiedModel.with_val."""
        return {w: frozenset(i for i, mask in enumerate(state)
                             if mask >> self.pos[w] & 1)
                for w in self.worlds}


def eval_mask(fm: FastModel, f: Formula, state=None) -> int:
    """Worlds where f holds, as a bitmask; `state` overrides the stored
    valuation (a tuple of per-variable masks)."""
    ops = compile_formula(f)
    val = fm.val if state is None else state
    full = fm.full
    out = [0] * len(ops)
    for i, (kind, a, b, vi, mod) in enumerate(ops):
        if kind == VAR:
            out[i] = val[vi]
        elif kind == TOP:
            out[i] = full
        elif kind == BOT:
            out[i] = 0
        elif kind == NOT:
            out[i] = ~out[a] & full
        elif kind == AND:
            out[i] = out[a] & out[b]
        elif kind == OR:
            out[i] = out[a] | out[b]
        elif kind == IMPLIES:
            out[i] = (~out[a] | out[b]) & full
        else:  # BOX
            succ = fm.succ0 if mod == 0 else fm.succ1
            child = out[a]
            acc = 0
            for w in range(fm.n):
                if succ[w] & ~child == 0:
                    acc |= 1 << w
            out[i] = acc
    return out[-1]


def globally(fm: FastModel, f: Formula, state=None) -> bool:
    return eval_mask(fm, f, state) == fm.full


def apply_images(fm: FastModel, images, state=None) -> tuple:
    """One substitution step on the valuation state: variable i becomes
    true where its image held."""
    return tuple(eval_mask(fm, img, state) for img in images)
