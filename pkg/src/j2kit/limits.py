"""Search bounds shared by the bounded enumeration and decision procedures."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Bounds:
    """Generation limits.  Verdicts record the bounds they were decided under;
    a completed search certifies absence of witnesses only within them.

    max_worlds        total worlds per candidate stratified model
    max_sheets        number of 1-sheets
    max_sheet_worlds  worlds per 1-sheet
    max_candidates    hard cap on generated candidates (hit => truncated)
    max_rounds        unifier-iteration rounds when the type universe is truncated
    max_summands      summand-family size in the 1-sum extension-property search
    gl_max_worlds     worlds per candidate GL tree model
    """

    max_worlds: int = 5
    max_sheets: int = 3
    max_sheet_worlds: int = 3
    max_candidates: int = 400_000
    max_rounds: int = 12
    max_summands: int = 3
    gl_max_worlds: int = 5

    def key(self):
        return (self.max_worlds, self.max_sheets, self.max_sheet_worlds,
                self.max_candidates, self.max_sheet_worlds, self.gl_max_worlds)

    def to_json(self) -> dict:
        return {
            "max_worlds": self.max_worlds,
            "max_sheets": self.max_sheets,
            "max_sheet_worlds": self.max_sheet_worlds,
            "max_candidates": self.max_candidates,
            "max_rounds": self.max_rounds,
            "max_summands": self.max_summands,
            "gl_max_worlds": self.gl_max_worlds,
        }


DEFAULT_BOUNDS = Bounds()

# Rough per-candidate bookkeeping cost used to honor J2KIT_MAX_MEM.
_BYTES_PER_CANDIDATE = 600


def bounds_from_env(bounds: Bounds | None = None) -> Bounds:
    """Apply the J2KIT_MAX_MEM byte cap (if set) to max_candidates."""
    b = bounds or DEFAULT_BOUNDS
    cap = os.environ.get("J2KIT_MAX_MEM")
    if cap:
        try:
            budget = int(cap)
        except ValueError:
            raise ValueError(f"J2KIT_MAX_MEM must be an integer byte count, got {cap!r}")
        b = replace(b, max_candidates=min(b.max_candidates,
                                          max(1, budget // _BYTES_PER_CANDIDATE)))
    return b


class SearchInconclusive(Exception):
    """A bound was exhausted with neither an affirmative verdict nor a witness."""

    def __init__(self, message: str, bounds: Bounds):
        super().__init__(message)
        self.bounds = bounds
