"""Arrangement of imagery sets and filter blocks over the engine ring.

Imagery sets are split into groups of ``ne`` and stored one per engine.
During a pass the ring rotates the resident sets ``ne`` times; engine ``e``
therefore sees, at rotation step ``t``, the set stored in slot
``(e - direction * t) mod ne``.  Engine ``e`` of filter group ``gf`` owns
output filter ``gf * ne + e`` and holds, for every imagery group, a sequence
of ``ne`` coefficient blocks ordered to match the sets as they arrive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

EMPTY = -1


@dataclass(frozen=True)
class LayoutPlan:
    ne: int
    nim: int
    nf: int
    direction: int
    # [imagery group][slot] -> imagery set index or EMPTY
    imagery_groups: tuple
    # [filter group][engine] -> output filter index or EMPTY
    filter_assignment: tuple
    # [filter group][subgroup = imagery group][engine][position] -> (filter, set) or None
    filter_groups: tuple

    @property
    def n_imagery_groups(self) -> int:
        return len(self.imagery_groups)

    @property
    def n_filter_groups(self) -> int:
        return len(self.filter_groups)

    @property
    def rotation_steps(self) -> int:
        """Engine-step iterations a full layer takes on the ring."""
        return self.n_imagery_groups * self.n_filter_groups * self.ne

    def resident_slot(self, engine: int, step: int) -> int:
        return (engine - self.direction * step) % self.ne

    def resident_set(self, group: int, engine: int, step: int) -> int:
        return self.imagery_groups[group][self.resident_slot(engine, step)]


def plan_layout(nim: int, nf: int, ne: int = 16, direction: int = 1) -> LayoutPlan:
    if nim < 1 or nf < 1:
        raise ValueError(f"need at least one imagery set and one filter, got nim={nim}, nf={nf}")
    if ne < 2:
        raise ValueError(f"a ring needs at least two engines, got ne={ne}")
    if direction not in (1, -1):
        raise ValueError("direction must be +1 (downstream) or -1 (upstream)")
    n_img = math.ceil(nim / ne)
    n_filt = math.ceil(nf / ne)

    def occupied(i, n):
        return i if i < n else EMPTY

    imagery = tuple(tuple(occupied(gi * ne + s, nim) for s in range(ne)) for gi in range(n_img))
    assignment = tuple(tuple(occupied(gf * ne + e, nf) for e in range(ne)) for gf in range(n_filt))

    groups = []
    for gf in range(n_filt):
        subgroups = []
        for gi in range(n_img):
            per_engine = []
            for e in range(ne):
                f = assignment[gf][e]
                seq = []
                for t in range(ne):
                    c = imagery[gi][(e - direction * t) % ne]
                    seq.append(None if f == EMPTY or c == EMPTY else (f, c))
                per_engine.append(tuple(seq))
            subgroups.append(tuple(per_engine))
        groups.append(tuple(subgroups))
    return LayoutPlan(ne, nim, nf, direction, imagery, assignment, tuple(groups))


def filter_slot(plan: LayoutPlan, f: int, c: int) -> tuple[int, int, int, int]:
    """Locate the coefficient block for filter ``f`` and imagery set ``c``.

    Returns ``(engine, filter group, subgroup, position)`` where position is
    the rotation step at which set ``c`` reaches the engine owning ``f``.
    """
    if not 0 <= f < plan.nf:
        raise IndexError(f"filter {f} out of range [0, {plan.nf})")
    if not 0 <= c < plan.nim:
        raise IndexError(f"imagery set {c} out of range [0, {plan.nim})")
    engine, group = f % plan.ne, f // plan.ne
    subgroup, home = c // plan.ne, c % plan.ne
    position = (plan.direction * (engine - home)) % plan.ne
    return engine, group, subgroup, position


@dataclass
class CoverageReport:
    violations: list = field(default_factory=list)
    pairs: int = 0
    slot_steps: int = 0
    imagery_utilization: float = 0.0
    filter_utilization: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def utilization(self) -> float:
        """Fraction of engine-steps doing useful MACs."""
        return self.pairs / self.slot_steps if self.slot_steps else 0.0

    def summary(self) -> str:
        lines = [
            f"pairs covered: {self.pairs}",
            f"engine-steps: {self.slot_steps}",
            f"utilization: {self.utilization:.4f}",
            f"imagery slot utilization: {self.imagery_utilization:.4f}",
            f"filter slot utilization: {self.filter_utilization:.4f}",
            f"violations: {len(self.violations)}",
        ]
        lines += [f"  {v}" for v in self.violations]
        return "\n".join(lines)


def coverage_check(plan: LayoutPlan) -> CoverageReport:
    """Audit a plan: every (filter, set) pair scheduled once, coherently."""
    rep = CoverageReport()
    ne = plan.ne
    seen_sets: dict[int, int] = {}
    if plan.n_imagery_groups != math.ceil(plan.nim / ne):
        rep.violations.append(f"{plan.n_imagery_groups} imagery groups, expected {math.ceil(plan.nim / ne)}")
    for gi, group in enumerate(plan.imagery_groups):
        if len(group) != ne:
            rep.violations.append(f"imagery group {gi} has {len(group)} slots, expected {ne}")
        for c in group:
            if c != EMPTY:
                seen_sets[c] = seen_sets.get(c, 0) + 1
    for c in range(plan.nim):
        if seen_sets.get(c, 0) != 1:
            rep.violations.append(f"imagery set {c} stored {seen_sets.get(c, 0)} times")
    for c in seen_sets:
        if not 0 <= c < plan.nim:
            rep.violations.append(f"unknown imagery set {c} stored")

    if plan.n_filter_groups != math.ceil(plan.nf / ne):
        rep.violations.append(f"{plan.n_filter_groups} filter groups, expected {math.ceil(plan.nf / ne)}")
    counts: dict[tuple, int] = {}
    for gf, subgroups in enumerate(plan.filter_groups):
        if len(subgroups) != plan.n_imagery_groups:
            rep.violations.append(f"filter group {gf} has {len(subgroups)} subgroups")
        for gi, per_engine in enumerate(subgroups):
            for e, seq in enumerate(per_engine):
                if len(seq) != ne:
                    rep.violations.append(f"group {gf}/{gi} engine {e}: sequence length {len(seq)}")
                owner = plan.filter_assignment[gf][e]
                for t, block in enumerate(seq):
                    rep.slot_steps += 1
                    if block is None:
                        continue
                    f, c = block
                    resident = plan.resident_set(gi, e, t) if gi < plan.n_imagery_groups else EMPTY
                    if f != owner:
                        rep.violations.append(
                            f"group {gf}/{gi} engine {e} step {t}: block for filter {f} on engine owning {owner}")
                    if c != resident:
                        rep.violations.append(
                            f"group {gf}/{gi} engine {e} step {t}: block for set {c} but set {resident} is resident")
                    counts[block] = counts.get(block, 0) + 1
    for f in range(plan.nf):
        for c in range(plan.nim):
            n = counts.pop((f, c), 0)
            if n != 1:
                rep.violations.append(f"pair (filter {f}, set {c}) scheduled {n} times")
    for block, n in sorted(counts.items()):
        rep.violations.append(f"out-of-range pair {block} scheduled {n} times")
    rep.pairs = sum(1 for _ in _pairs(plan))
    rep.imagery_utilization = plan.nim / (plan.n_imagery_groups * ne) if plan.imagery_groups else 0.0
    rep.filter_utilization = plan.nf / (plan.n_filter_groups * ne) if plan.filter_groups else 0.0
    return rep


def _pairs(plan: LayoutPlan):
    for subgroups in plan.filter_groups:
        for per_engine in subgroups:
            for seq in per_engine:
                for block in seq:
                    if block is not None:
                        yield block


def dump_plan(plan: LayoutPlan) -> str:
    """Deterministic text table: rows are rotation steps, columns engines.

    Each cell reads ``filter/set``; ``--`` marks an idle engine.
    """
    width = max(len(f"{plan.nf - 1}/{plan.nim - 1}"), 5)
    lines = [f"layout ne={plan.ne} nim={plan.nim} nf={plan.nf} direction={plan.direction:+d}"]
    for gi, group in enumerate(plan.imagery_groups):
        cells = " ".join(("--" if c == EMPTY else str(c)).rjust(width) for c in group)
        lines.append(f"imagery group {gi}: {cells}")
    header = "step " + " ".join(f"e{e}".rjust(width) for e in range(plan.ne))
    for gf, subgroups in enumerate(plan.filter_groups):
        for gi, per_engine in enumerate(subgroups):
            lines.append(f"filter group {gf} / subgroup {gi}")
            lines.append(header)
            for t in range(plan.ne):
                cells = []
                for e in range(plan.ne):
                    block = per_engine[e][t]
                    cells.append(("--" if block is None else f"{block[0]}/{block[1]}").rjust(width))
                lines.append(f"{t:4d} " + " ".join(cells))
    return "\n".join(lines) + "\n"
