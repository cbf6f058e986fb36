"""Interval derivation for one missing cell by constraint projection.

Equalities of a record's reduced edit system are removed by substitution,
the remaining inequalities are projected variable by variable (combining
every lower/upper bound pair on the eliminated variable), and the result
is read off as an admissible interval for the target cell.  Every value
inside the interval extends to a full assignment satisfying the original
system, which :func:`back_substitute` reconstructs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .edits import COEFF_EPS, DEFAULT_TOL, Edit, EditKind, ReducedSystem
from .errors import InfeasibleSystemError

NEG_INF = float("-inf")
POS_INF = float("inf")


@dataclass(frozen=True)
class Interval:
    """Closed admissible range for one value; either side may be infinite."""

    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError(f"empty interval [{self.lower}, {self.upper}]")

    def contains(self, x: float, tol: float = DEFAULT_TOL) -> bool:
        slack = tol * max(1.0, abs(x), abs(self.lower) if math.isfinite(self.lower) else 0.0,
                          abs(self.upper) if math.isfinite(self.upper) else 0.0)
        return self.lower - slack <= x <= self.upper + slack

    def clamp(self, x: float) -> float:
        return min(max(x, self.lower), self.upper)

    def is_point(self) -> bool:
        return self.lower == self.upper

    def is_bounded(self) -> bool:
        return math.isfinite(self.lower) and math.isfinite(self.upper)

    def midpoint(self) -> float:
        if not self.is_bounded():
            raise ValueError("midpoint of an unbounded interval")
        return 0.5 * (self.lower + self.upper)


UNBOUNDED = Interval(NEG_INF, POS_INF)


@dataclass(frozen=True)
class LinExpr:
    """Affine expression ``const + sum coeffs[v] * v`` over remaining variables."""

    coeffs: dict[str, float]
    const: float

    def evaluate(self, values: Mapping[str, float]) -> float:
        return math.fsum(c * values[v] for v, c in self.coeffs.items()) + self.const

    def variables(self) -> tuple[str, ...]:
        return tuple(self.coeffs)


#: One equality elimination: the removed variable and its expression in the
#: variables still present at that point.
SubstitutionStack = list[tuple[str, LinExpr]]


@dataclass
class EliminationRecord:
    """Everything needed to complete a record after the target is assigned.

    ``eq_subs`` replays equality eliminations; ``fm_steps`` stores, for each
    projected variable, the inequality system as it stood just before the
    variable was projected out, so its one-dimensional range can be
    recovered once later-eliminated variables are known.
    """

    target: str
    interval: Interval
    eq_subs: SubstitutionStack
    fm_steps: list[tuple[str, list[Edit]]]
    system: tuple[Edit, ...]


ValueRule = Callable[[str, Interval], float]


def default_value_rule(var: str, interval: Interval) -> float:
    """Midpoint for bounded ranges, one unit inside a half-open one, else 0."""
    lo, hi = interval.lower, interval.upper
    if math.isfinite(lo) and math.isfinite(hi):
        return 0.5 * (lo + hi)
    if math.isfinite(lo):
        return lo + 1.0
    if math.isfinite(hi):
        return hi - 1.0
    return 0.0


def _clean_coeffs(coeffs: dict[str, float]) -> dict[str, float]:
    if not coeffs:
        return coeffs
    m = max(abs(c) for c in coeffs.values())
    if m == 0.0:
        return {}
    floor = COEFF_EPS * max(1.0, m)
    return {v: c for v, c in coeffs.items() if abs(c) > floor}


def _substitute(edit: Edit, var: str, expr: LinExpr) -> tuple[dict[str, float], float, float]:
    """Replace ``var`` by ``expr`` in an edit; returns coeffs, const, gross magnitude."""
    cp = edit.coeffs[var]
    coeffs = {v: c for v, c in edit.coeffs.items() if v != var}
    gross = abs(edit.constant) + sum(abs(c) for c in coeffs.values())
    for v, c in expr.coeffs.items():
        coeffs[v] = coeffs.get(v, 0.0) + cp * c
        gross += abs(cp * c)
    const = edit.constant + cp * expr.const
    gross += abs(cp * expr.const)
    return _clean_coeffs(coeffs), const, gross


def _constant_row_ok(const: float, gross: float, kind: EditKind, tol: float) -> bool:
    bound = tol * max(1.0, gross)
    if kind is EditKind.EQUALITY:
        return abs(const) <= bound
    return const >= -bound


def eliminate_equalities(
    edits: Sequence[Edit],
    keep: str | None,
    tol: float = DEFAULT_TOL,
) -> tuple[list[Edit], SubstitutionStack]:
    """Remove every equality by substitution, sparing ``keep``.

    Each equality consumes the variable with the largest-magnitude
    coefficient other than ``keep`` (ties broken by name).  An equality
    whose only variable is ``keep`` is turned into the pair of inequalities
    pinning it.  Returns the inequality-only system and the substitution
    stack in elimination order.
    """
    work = list(edits)
    stack: SubstitutionStack = []
    while True:
        eq_pos = next((i for i, e in enumerate(work) if e.kind is EditKind.EQUALITY), None)
        if eq_pos is None:
            return work, stack
        eq = work.pop(eq_pos)
        candidates = [(v, c) for v, c in eq.coeffs.items() if v != keep]
        if not candidates:
            # Only the kept variable remains: pin it with a bound pair.
            c = eq.coeffs[keep]
            work.insert(eq_pos, Edit(dict(eq.coeffs), eq.constant, EditKind.INEQUALITY))
            work.insert(eq_pos + 1, Edit({keep: -c}, -eq.constant, EditKind.INEQUALITY))
            continue
        pivot, cp = min(candidates, key=lambda item: (-abs(item[1]), item[0]))
        expr = LinExpr(
            {v: -c / cp for v, c in eq.coeffs.items() if v != pivot},
            -eq.constant / cp,
        )
        replaced: list[Edit] = []
        for other in work:
            if pivot not in other.coeffs:
                replaced.append(other)
                continue
            coeffs, const, gross = _substitute(other, pivot, expr)
            if coeffs:
                replaced.append(Edit(coeffs, const, other.kind))
            elif not _constant_row_ok(const, gross, other.kind, tol):
                raise InfeasibleSystemError(
                    f"substituting {pivot} makes edit infeasible (residual {const:.6g})",
                    witness=(eq, other),
                )
        work = replaced
        stack.append((pivot, expr))


def _normalized(edit: Edit) -> Edit:
    m = max(abs(c) for c in edit.coeffs.values())
    if m == 1.0:
        return edit
    return Edit({v: c / m for v, c in edit.coeffs.items()}, edit.constant / m, edit.kind)


def _dedupe(edits: list[Edit]) -> list[Edit]:
    """Fold parallel rows, keeping the tighter of each half-plane pair.

    Rows are normalized to leading magnitude one first, so rows with the
    same coefficient signature are positive multiples of each other and
    the smaller constant is the binding one.
    """
    out: list[Edit] = []
    by_signature: dict[tuple, int] = {}
    for edit in edits:
        norm = _normalized(edit)
        sig = tuple(sorted((v, round(c, 12)) for v, c in norm.coeffs.items()))
        if sig in by_signature:
            k = by_signature[sig]
            if norm.constant < out[k].constant:
                out[k] = norm
            continue
        by_signature[sig] = len(out)
        out.append(norm)
    return out


def fourier_motzkin_eliminate(
    edits: Sequence[Edit],
    var: str,
    tol: float = DEFAULT_TOL,
) -> list[Edit]:
    """Project an inequality-only system onto the variables other than ``var``.

    Every (lower bound, upper bound) pair on ``var`` combines into one
    derived inequality; rows not involving ``var`` pass through.  Derived
    constant rows that fail are reported as infeasible.
    """
    lowers: list[Edit] = []
    uppers: list[Edit] = []
    rest: list[Edit] = []
    for edit in edits:
        if edit.kind is not EditKind.INEQUALITY:
            raise ValueError("fourier_motzkin_eliminate expects an inequality-only system")
        c = edit.coeffs.get(var, 0.0)
        if c > 0:
            lowers.append(edit)
        elif c < 0:
            uppers.append(edit)
        else:
            rest.append(edit)
    out = list(rest)
    for lo in lowers:
        cl = lo.coeffs[var]
        for up in uppers:
            cu = up.coeffs[var]
            m_lo, m_up = -cu, cl  # both positive
            coeffs: dict[str, float] = {}
            gross = 0.0
            for v, c in lo.coeffs.items():
                if v != var:
                    coeffs[v] = coeffs.get(v, 0.0) + m_lo * c
                    gross += abs(m_lo * c)
            for v, c in up.coeffs.items():
                if v != var:
                    coeffs[v] = coeffs.get(v, 0.0) + m_up * c
                    gross += abs(m_up * c)
            const = m_lo * lo.constant + m_up * up.constant
            gross += abs(m_lo * lo.constant) + abs(m_up * up.constant)
            coeffs = _clean_coeffs(coeffs)
            if not coeffs:
                if not _constant_row_ok(const, gross, EditKind.INEQUALITY, tol):
                    raise InfeasibleSystemError(
                        f"eliminating {var} derives the contradiction 0 >= {-const:.6g}",
                        witness=(lo, up),
                    )
                continue
            out.append(Edit(coeffs, const, EditKind.INEQUALITY))
    return _dedupe(out)


def _elimination_order(edits: Sequence[Edit], target: str) -> str | None:
    """Next variable to project: fewest appearances, ties by name."""
    counts: dict[str, int] = {}
    for edit in edits:
        for v in edit.coeffs:
            if v != target:
                counts[v] = counts.get(v, 0) + 1
    if not counts:
        return None
    return min(counts, key=lambda v: (counts[v], v))


def admissible_interval(
    system: ReducedSystem | Sequence[Edit],
    target: str,
    tol: float = DEFAULT_TOL,
) -> tuple[Interval, EliminationRecord]:
    """Exact feasible range of ``target`` under a reduced edit system.

    Returns the interval together with the elimination record needed to
    complete the remaining variables afterwards.  A target not mentioned by
    any edit comes back unbounded.
    """
    edits0 = tuple(system.edits) if isinstance(system, ReducedSystem) else tuple(system)
    ineqs, eq_subs = eliminate_equalities(edits0, keep=target, tol=tol)
    ineqs = _dedupe(ineqs)
    fm_steps: list[tuple[str, list[Edit]]] = []
    while True:
        var = _elimination_order(ineqs, target)
        if var is None:
            break
        fm_steps.append((var, list(ineqs)))
        ineqs = fourier_motzkin_eliminate(ineqs, var, tol=tol)

    lower, upper = NEG_INF, POS_INF
    lo_witness = hi_witness = None
    for edit in ineqs:
        if not edit.coeffs:  # pragma: no cover - constant rows are checked on creation
            continue
        c = edit.coeffs[target]
        bound = -edit.constant / c
        if c > 0:
            if bound > lower:
                lower, lo_witness = bound, edit
        else:
            if bound < upper:
                upper, hi_witness = bound, edit
    if lower > upper:
        slack = tol * max(1.0, abs(lower), abs(upper))
        if lower - upper <= slack:
            mid = 0.5 * (lower + upper)
            lower = upper = mid
        else:
            raise InfeasibleSystemError(
                f"no admissible value for {target}: requires >= {lower:.6g} and <= {upper:.6g}",
                witness=(lo_witness, hi_witness),
            )
    interval = Interval(lower, upper)
    record = EliminationRecord(
        target=target,
        interval=interval,
        eq_subs=eq_subs,
        fm_steps=fm_steps,
        system=edits0,
    )
    return interval, record


def _one_dim_interval(edits: Sequence[Edit], var: str, values: Mapping[str, float], tol: float) -> Interval:
    lower, upper = NEG_INF, POS_INF
    for edit in edits:
        if var not in edit.coeffs:
            continue
        c = edit.coeffs[var]
        rest = math.fsum(cc * values[v] for v, cc in edit.coeffs.items() if v != var) + edit.constant
        bound = -rest / c
        if c > 0:
            lower = max(lower, bound)
        else:
            upper = min(upper, bound)
    if lower > upper:
        slack = tol * max(1.0, abs(lower), abs(upper))
        if lower - upper > slack:
            raise InfeasibleSystemError(
                f"back-substitution range for {var} is empty: [{lower:.6g}, {upper:.6g}]"
            )
        lower = upper = 0.5 * (lower + upper)
    return Interval(lower, upper)


def back_substitute(
    record: EliminationRecord,
    assigned: Mapping[str, float],
    value_rule: ValueRule | None = None,
    tol: float = DEFAULT_TOL,
) -> dict[str, float]:
    """Complete a record from an assigned target value.

    Projected variables are resolved in reverse elimination order: each gets
    its now one-dimensional admissible range and the value rule picks a
    point in it (midpoint by default; samplers substitute their own rule).
    Equality-eliminated variables then follow exactly.  The full assignment
    is validated against the original system before returning.
    """
    if record.target not in assigned:
        raise ValueError(f"assigned values must include the target {record.target!r}")
    if not record.interval.contains(assigned[record.target], tol):
        raise ValueError(
            f"value {assigned[record.target]!r} for {record.target!r} lies outside "
            f"the admissible interval [{record.interval.lower}, {record.interval.upper}]"
        )
    rule = value_rule or default_value_rule
    values = dict(assigned)
    for var, pre_system in reversed(record.fm_steps):
        if var in values:
            continue
        interval = _one_dim_interval(pre_system, var, values, tol)
        values[var] = interval.clamp(rule(var, interval))
    for var, expr in reversed(record.eq_subs):
        # A variable can cancel out of every inequality and resurface only
        # here; such variables are unconstrained and get the free-value rule.
        for v in expr.coeffs:
            if v not in values:
                values[v] = rule(v, UNBOUNDED)
        if var not in values:
            values[var] = expr.evaluate(values)

    scale = max(1.0, max((abs(v) for v in values.values()), default=0.0))
    for edit in record.system:
        if not edit.is_satisfied(values, tol, scale):
            raise InfeasibleSystemError(
                f"back-substituted record violates an original edit (residual {edit.residual(values):.6g})",
                witness=edit,
            )
    return values


def resolve_companions(
    record: EliminationRecord,
    assigned: Mapping[str, float],
) -> dict[str, float]:
    """Values forced through the equality stack by what is assigned so far.

    Walks the substitution stack in reverse and evaluates every expression
    whose variables are already known; anything depending on a variable that
    is still free is left out.
    """
    known = dict(assigned)
    resolved: dict[str, float] = {}
    for var, expr in reversed(record.eq_subs):
        if var in known:
            continue
        if all(v in known for v in expr.coeffs):
            value = expr.evaluate(known)
            known[var] = value
            resolved[var] = value
    return resolved
