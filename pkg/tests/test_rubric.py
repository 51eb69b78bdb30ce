"""Enforceability scoring: full vector sweep against an independent scorer."""

import itertools
from pathlib import Path

from toolgate.model import RUBRIC_CRITERIA, RubricAnswers
from toolgate.policyfile import parse_policy_file
from toolgate.rubric import (
    EnforceabilityClass,
    Layer,
    assign_layers,
    render_report,
    report_to_json,
    rubric_report,
    score_rubric,
    score_tuple,
)
from toolgate.simulator import bundled_pack_path


def independent_score(v: tuple[int, ...]) -> str:
    """Re-derivation of the class label from the documented rules alone."""
    timing, observability, determinacy, judgment, reversibility, clarity = v
    if observability == 0:
        return "Low"
    total = timing + observability + determinacy + judgment + reversibility + clarity
    if total <= 3:
        return "Low"
    if total <= 5:
        return "Low to medium"
    if total <= 7:
        return "Medium"
    if total <= 9:
        return "Medium to high"
    return "High"


def independent_runtime(v: tuple[int, ...]) -> bool:
    return independent_score(v) in ("Medium", "Medium to high", "High")


def independent_escalation(v: tuple[int, ...]) -> bool:
    timing, _, determinacy, judgment, _, _ = v
    return (determinacy <= 1 or judgment <= 1) and timing == 2


ALL_VECTORS = list(itertools.product((0, 1, 2), repeat=6))


def test_all_729_vectors_score_like_the_independent_rules():
    assert len(ALL_VECTORS) == 729
    for v in ALL_VECTORS:
        answers = RubricAnswers(*v)
        cls = score_rubric(answers)
        assert cls.label == independent_score(v), v
        assignment = assign_layers(cls, answers)
        assert (Layer.RUNTIME in assignment.layers) == independent_runtime(v), v
        assert assignment.escalation_default == independent_escalation(v), v


def test_observability_gate_caps_a_perfect_rest():
    answers = RubricAnswers(2, 0, 2, 2, 2, 2)
    assert score_rubric(answers) == EnforceabilityClass.LOW
    assert Layer.RUNTIME not in assign_layers(score_rubric(answers), answers).layers


def test_band_edges():
    # totals land exactly on each inclusive upper bound
    cases = {
        (0, 1, 0, 0, 1, 1): "Low",             # total 3
        (0, 1, 1, 1, 1, 1): "Low to medium",   # total 5
        (1, 1, 1, 1, 2, 1): "Medium",          # total 7
        (2, 1, 2, 1, 2, 1): "Medium to high",  # total 9
        (1, 2, 2, 1, 2, 2): "High",            # total 10
        (2, 2, 2, 2, 2, 2): "High",            # total 12
    }
    for v, want in cases.items():
        assert score_rubric(RubricAnswers(*v)).label == want, v


def test_non_runtime_layers_are_always_present():
    for v in ((0, 0, 0, 0, 0, 0), (2, 2, 2, 2, 2, 2)):
        answers = RubricAnswers(*v)
        a = assign_layers(score_rubric(answers), answers)
        assert {Layer.GOVERNANCE, Layer.DESIGN_TIME, Layer.ASSURANCE} <= set(a.layers)


def test_class_ordering():
    assert EnforceabilityClass.LOW < EnforceabilityClass.MEDIUM < EnforceabilityClass.HIGH


def test_unscored_tuple_yields_unscored_row():
    ps = parse_policy_file('control "raw" {\n  action: a\n  decision: allow\n  evidence: [args]\n  owner: "x@y" role "r"\n}')
    row = score_tuple(ps.tuples[0])
    assert row.scored is False
    assert row.enforceability is None


class TestBundledPackReport:
    def _report(self, name: str):
        return rubric_report(parse_policy_file(Path(bundled_pack_path(name)).read_text()))

    def test_rows_sorted_by_tuple_id(self):
        report = self._report("procurement.policy")
        ids = [r.tuple_id for r in report.rows]
        assert ids == sorted(ids)

    def test_procurement_labels(self):
        report = self._report("procurement.policy")
        labels = {r.tuple_id: r.enforceability.label for r in report.rows}
        assert labels == {
            "catalog-read-scope": "Medium to high",
            "create-telemetry": "Medium to high",
            "fair-ranking-review": "Low",
            "po-threshold": "High",
            "po-vendor-allowlist": "High",
        }

    def test_escalation_default_flags(self):
        report = self._report("procurement.policy")
        flags = {r.tuple_id: r.assignment.escalation_default for r in report.rows}
        assert flags["po-threshold"] is True
        assert sum(flags.values()) == 1

    def test_json_projection_carries_owner_and_layers(self):
        report = self._report("procurement.policy")
        doc = report_to_json(report)
        by_id = {r["tuple_id"]: r for r in doc["rows"]}
        row = by_id["po-vendor-allowlist"]
        assert row["owner"]["identity"] == "procurement-lead@example.test"
        assert "runtime" in row["layers"]

    def test_rendered_table_mentions_every_tuple(self):
        report = self._report("procurement.policy")
        text = render_report(report)
        for r in report.rows:
            assert r.tuple_id in text
