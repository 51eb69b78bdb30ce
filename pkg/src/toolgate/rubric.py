"""Runtime-enforceability scoring and control-layer assignment.

Six criteria, each rated 0/1/2 by a human reviewer, say how far a rule can
be enforced at the dispatch boundary: does harm land at action time, is the
event observable before execution, is the rule crisp, how much judgment a
verdict needs, whether effects are reversible, and how clear the evidence
trail is. Scores aggregate to a five-band class. The aggregation (bands and
the observability hard gate) is artifact-defined: pre-action observability
is a necessary condition for any runtime check, so a zero there caps the
class at Low no matter what the other criteria say.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass

from .model import ControlTuple, PolicySet, RubricAnswers

AGGREGATION_NOTE = "artifact-defined aggregation"


@functools.total_ordering
class EnforceabilityClass(enum.Enum):
    LOW = 0
    LOW_TO_MEDIUM = 1
    MEDIUM = 2
    MEDIUM_TO_HIGH = 3
    HIGH = 4

    @property
    def label(self) -> str:
        return _LABELS[self]

    def __lt__(self, other: "EnforceabilityClass") -> bool:
        if not isinstance(other, EnforceabilityClass):
            return NotImplemented
        return self.value < other.value


_LABELS = {
    EnforceabilityClass.LOW: "Low",
    EnforceabilityClass.LOW_TO_MEDIUM: "Low to medium",
    EnforceabilityClass.MEDIUM: "Medium",
    EnforceabilityClass.MEDIUM_TO_HIGH: "Medium to high",
    EnforceabilityClass.HIGH: "High",
}

# total-score bands, applied only after the observability gate passes
_BANDS = (
    (3, EnforceabilityClass.LOW),
    (5, EnforceabilityClass.LOW_TO_MEDIUM),
    (7, EnforceabilityClass.MEDIUM),
    (9, EnforceabilityClass.MEDIUM_TO_HIGH),
    (12, EnforceabilityClass.HIGH),
)


def score_rubric(a: RubricAnswers) -> EnforceabilityClass:
    if a.pre_action_observability == 0:
        return EnforceabilityClass.LOW
    total = a.total
    for upper, cls in _BANDS:
        if total <= upper:
            return cls
    raise AssertionError("unreachable: total bounded by 12")


class Layer(str, enum.Enum):
    GOVERNANCE = "governance"
    DESIGN_TIME = "design_time"
    RUNTIME = "runtime"
    ASSURANCE = "assurance"


@dataclass(frozen=True)
class LayerAssignment:
    layers: frozenset[Layer]
    escalation_default: bool

    def ordered_layers(self) -> tuple[Layer, ...]:
        return tuple(l for l in Layer if l in self.layers)


def assign_layers(c: EnforceabilityClass, a: RubricAnswers) -> LayerAssignment:
    """Which control layers carry this rule.

    Governance, design-time scoping, and assurance review apply to every
    control. The runtime layer joins only when the class reaches Medium.
    Escalation becomes the default destination when the rule is fuzzy or
    judgment-heavy while harm lands at action time.
    """
    layers = {Layer.GOVERNANCE, Layer.DESIGN_TIME, Layer.ASSURANCE}
    if c >= EnforceabilityClass.MEDIUM:
        layers.add(Layer.RUNTIME)
    escalation_default = (
        (a.rule_determinacy <= 1 or a.judgment_load <= 1) and a.timing_of_harm == 2
    )
    return LayerAssignment(frozenset(layers), escalation_default)


@dataclass(frozen=True)
class RubricRow:
    tuple_id: str
    scored: bool
    answers: RubricAnswers | None
    enforceability: EnforceabilityClass | None
    assignment: LayerAssignment | None
    owner_identity: str
    owner_role: str
    evidence_fields: tuple[str, ...]
    review_note: str


@dataclass(frozen=True)
class RubricReport:
    rows: tuple[RubricRow, ...]
    aggregation: str = AGGREGATION_NOTE


def score_tuple(t: ControlTuple) -> RubricRow:
    if t.rubric_answers is None:
        return RubricRow(
            tuple_id=t.id,
            scored=False,
            answers=None,
            enforceability=None,
            assignment=None,
            owner_identity=t.owner.identity,
            owner_role=t.owner.role,
            evidence_fields=t.evidence.ordered_fields(),
            review_note=t.review_note,
        )
    cls = score_rubric(t.rubric_answers)
    return RubricRow(
        tuple_id=t.id,
        scored=True,
        answers=t.rubric_answers,
        enforceability=cls,
        assignment=assign_layers(cls, t.rubric_answers),
        owner_identity=t.owner.identity,
        owner_role=t.owner.role,
        evidence_fields=t.evidence.ordered_fields(),
        review_note=t.review_note,
    )


def rubric_report(ps: PolicySet) -> RubricReport:
    rows = tuple(score_tuple(t) for t in sorted(ps.tuples, key=lambda t: t.id))
    return RubricReport(rows)


def report_to_json(report: RubricReport) -> dict:
    rows = []
    for r in report.rows:
        row: dict = {
            "tuple_id": r.tuple_id,
            "scored": r.scored,
            "owner": {"identity": r.owner_identity, "role": r.owner_role},
            "evidence_fields": list(r.evidence_fields),
            "review_note": r.review_note,
        }
        if r.scored:
            assert r.answers is not None and r.enforceability is not None and r.assignment is not None
            row["answers"] = r.answers.as_dict()
            row["enforceability"] = r.enforceability.label
            row["layers"] = [l.value for l in r.assignment.ordered_layers()]
            row["escalation_default"] = r.assignment.escalation_default
        else:
            row["enforceability"] = "UNSCORED"
        rows.append(row)
    return {"aggregation": report.aggregation, "rows": rows}


def render_report(report: RubricReport) -> str:
    """Fixed-width table for terminals; one row per tuple, sorted by id."""
    headers = ("tuple", "class", "layers", "escalation", "owner", "evidence")
    body: list[tuple[str, ...]] = []
    for r in report.rows:
        if not r.scored:
            body.append((r.tuple_id, "UNSCORED", "-", "-", _owner_cell(r), ",".join(r.evidence_fields)))
            continue
        assert r.enforceability is not None and r.assignment is not None
        body.append(
            (
                r.tuple_id,
                r.enforceability.label,
                "+".join(l.value for l in r.assignment.ordered_layers()),
                "default" if r.assignment.escalation_default else "-",
                _owner_cell(r),
                ",".join(r.evidence_fields),
            )
        )
    widths = [max(len(h), *(len(row[i]) for row in body)) if body else len(h) for i, h in enumerate(headers)]
    lines = [f"# enforceability report ({report.aggregation})"]
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip())
    for row in body:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    return "\n".join(lines) + "\n"


def _owner_cell(r: RubricRow) -> str:
    if not r.owner_identity and not r.owner_role:
        return "-"
    return f"{r.owner_identity}/{r.owner_role}"
