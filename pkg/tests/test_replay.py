"""Replaying a ledger reproduces its decisions; edits and swaps show up."""

import json

import pytest

from toolgate.ledger import canonical_json
from toolgate.model import DecisionKind
from toolgate.policyfile import parse_policy_file, policy_hash
from toolgate.replay import ReplayError, replay_file, replay_records
from toolgate.simulator import bundled_pack_path, load_pack, run_scenario_file

from pathlib import Path

SCENARIO_DIR = Path(bundled_pack_path("")).parent / "scenarios"
GOLDEN = str(SCENARIO_DIR / "golden_procurement.json")
CUMULATIVE = str(SCENARIO_DIR / "cumulative_spend.json")


@pytest.fixture
def golden_ledger(tmp_path):
    path = str(tmp_path / "g.jsonl")
    run_scenario_file(GOLDEN, path)
    return path


class TestFaithfulReplay:
    def test_same_pack_matches_every_decision(self, golden_ledger):
        ps = load_pack(bundled_pack_path("procurement.policy"))
        report = replay_file(golden_ledger, ps)
        assert report.ok
        assert report.decisions_total == 5
        assert report.matched == 5
        assert report.pack_matches_recording
        assert report.recorded_pack_hashes == [policy_hash(ps)]

    def test_accumulator_history_is_rebuilt_from_the_trail(self, tmp_path):
        # the cumulative scenario only escalates on step 3 because of the
        # first two executed orders; a replay that lost that state would
        # mismatch there
        path = str(tmp_path / "c.jsonl")
        run_scenario_file(CUMULATIVE, path)
        ps = load_pack(bundled_pack_path("procurement_cumulative.policy"))
        report = replay_file(path, ps)
        assert report.ok
        assert report.decisions_total == 3

    def test_replay_is_deterministic(self, golden_ledger):
        ps = load_pack(bundled_pack_path("procurement.policy"))
        first = replay_file(golden_ledger, ps).to_json()
        second = replay_file(golden_ledger, ps).to_json()
        assert first == second


class TestCounterfactual:
    def test_tightened_pack_flags_exactly_the_borderline_call(self, golden_ledger):
        text = open(bundled_pack_path("procurement.policy")).read()
        tightened = parse_policy_file(text.replace("> 5000", "> 4000"))
        report = replay_file(golden_ledger, tightened)
        assert not report.pack_matches_recording
        assert report.decisions_total == 5
        # the 4800 order now escalates instead of passing
        assert len(report.mismatches) == 1
        m = report.mismatches[0]
        assert m.request_id == "po-0001"
        assert m.recorded == DecisionKind.ALLOW
        assert m.replayed == DecisionKind.ESCALATE

    def test_mismatch_report_shape(self, golden_ledger):
        text = open(bundled_pack_path("procurement.policy")).read()
        tightened = parse_policy_file(text.replace("> 5000", "> 4000"))
        data = replay_file(golden_ledger, tightened).to_json()
        assert data["ok"] is False
        assert data["mismatched"] == 1
        entry = data["mismatches"][0]
        assert {"seq", "request_id", "recorded", "replayed"} <= set(entry)


class TestRefusals:
    def test_broken_chain_refuses_to_replay(self, golden_ledger):
        lines = open(golden_ledger).read().splitlines()
        record = json.loads(lines[1])
        assert record["kind"] == "decision"
        record["body"]["request"]["args"]["amount"] = "9999.0000"
        lines[1] = canonical_json(record)
        open(golden_ledger, "w").write("\n".join(lines) + "\n")
        ps = load_pack(bundled_pack_path("procurement.policy"))
        with pytest.raises(ReplayError, match="refusing to replay"):
            replay_file(golden_ledger, ps)

    def test_records_can_be_replayed_without_a_file(self, golden_ledger):
        from toolgate.ledger import read_records

        ps = load_pack(bundled_pack_path("procurement.policy"))
        report = replay_records(read_records(golden_ledger), ps)
        assert report.ok
