"""Operator command line.

Exit codes are part of the contract: 0 clean, 1 when the requested check
found problems (lint violations, verification failure, simulation or
replay mismatches), 2 for usage and IO errors. CI gates on them.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
import tempfile

import click

from .ledger import signing_key_from_env, verify_file
from .model import ModelError, RubricAnswers, validate_policy_set
from .policyfile import PolicyParseError, parse_policy_file, policy_hash
from .replay import ReplayError, replay_file
from .rubric import render_report, report_to_json, rubric_report
from .simulator import ScenarioError, compute_metrics_file, load_pack, load_scenario, resolve_pack_ref, run_scenario


class CliInputError(click.ClickException):
    """Unusable input (missing file, unparseable policy): exit 2, not 1."""

    exit_code = 2


def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise CliInputError(str(exc)) from exc


def _load_policy(path: str):
    text = _read_text(path)
    try:
        return parse_policy_file(text)
    except PolicyParseError as exc:
        raise CliInputError(
            "policy does not parse:\n  " + "\n  ".join(str(e) for e in exc.errors)
        ) from exc


@click.group()
def main() -> None:
    """Runtime guardrails for agent tool calls."""


@main.command()
@click.argument("policy", type=click.Path())
@click.option("--json", "as_json", is_flag=True, help="machine-readable output")
def lint(policy: str, as_json: bool) -> None:
    """Parse and validate a policy pack."""
    text = _read_text(policy)
    try:
        ps = parse_policy_file(text)
    except PolicyParseError as exc:
        if as_json:
            click.echo(json.dumps({
                "ok": False,
                "parse_errors": [
                    {"line": e.line, "col": e.col, "message": e.message} for e in exc.errors
                ],
                "violations": [],
            }))
        else:
            for e in exc.errors:
                click.echo(f"{policy}:{e.line}:{e.col}: {e.message}")
        sys.exit(1)
    report = validate_policy_set(ps)
    if as_json:
        click.echo(json.dumps({
            "ok": report.ok,
            "parse_errors": [],
            "policy_hash": policy_hash(ps),
            "violations": [
                {"tuple_id": v.tuple_id, "code": v.code, "message": v.message}
                for v in report.violations
            ],
        }))
    else:
        for v in report.violations:
            click.echo(f"{v.tuple_id}: {v.code}: {v.message}")
        if report.ok:
            click.echo(f"ok: {len(ps.tuples)} controls, hash {policy_hash(ps)}")
    sys.exit(0 if report.ok else 1)


@main.command()
@click.argument("policy", type=click.Path())
@click.option("--answers", type=click.Path(), default=None,
              help="JSON file of {tuple_id: {criterion: 0|1|2}} overriding pack rubric clauses")
@click.option("--json", "as_json", is_flag=True, help="machine-readable output")
def rubric(policy: str, answers: str | None, as_json: bool) -> None:
    """Score enforceability and assign layers for each control."""
    ps = _load_policy(policy)
    if answers:
        try:
            overrides = json.loads(_read_text(answers))
            new_tuples = tuple(
                dataclasses.replace(t, rubric_answers=RubricAnswers(**overrides[t.id]))
                if t.id in overrides
                else t
                for t in ps.tuples
            )
        except (TypeError, ModelError, json.JSONDecodeError) as exc:
            raise CliInputError(f"bad answers file: {exc}") from exc
        ps = dataclasses.replace(ps, tuples=new_tuples)
    report = rubric_report(ps)
    if as_json:
        click.echo(json.dumps(report_to_json(report)))
    else:
        click.echo(render_report(report), nl=False)
    sys.exit(0)


@main.command()
@click.argument("scenario", type=click.Path())
@click.option("--policy", "policy", type=click.Path(), default=None,
              help="policy pack; defaults to the scenario's own reference")
@click.option("--ledger", "ledger_path", type=click.Path(), default=None,
              help="where to write the evidence ledger (default: a temp file)")
@click.option("--json", "as_json", is_flag=True, help="machine-readable output")
def simulate(scenario: str, policy: str | None, ledger_path: str | None, as_json: bool) -> None:
    """Run a scripted scenario and compare decisions against expectations."""
    try:
        s = load_scenario(scenario)
    except (OSError, ScenarioError, json.JSONDecodeError) as exc:
        raise CliInputError(f"bad scenario: {exc}") from exc
    pack_path = policy or resolve_pack_ref(s.pack_ref, os.path.dirname(os.path.abspath(scenario)))
    try:
        ps = load_pack(pack_path)
    except OSError as exc:
        raise CliInputError(str(exc)) from exc
    except PolicyParseError as exc:
        raise CliInputError(f"policy does not parse: {exc}") from exc
    if ledger_path is None:
        fd, ledger_path = tempfile.mkstemp(prefix="toolgate-sim-", suffix=".jsonl")
        os.close(fd)
        os.unlink(ledger_path)
    report = run_scenario(s, ps, ledger_path, signing_key=signing_key_from_env())
    metrics = compute_metrics_file(report.labels(), ledger_path, report.decision_timings)
    if as_json:
        out = report.to_json()
        out["metrics"] = metrics.to_json()
        click.echo(json.dumps(out))
    else:
        for step in report.steps:
            mark = "ok " if step.matched else "XX "
            click.echo(
                f"{mark} step {step.step_index} {step.request_id}: "
                f"expected {step.expected.value}, got {step.actual.value} "
                f"({step.final_outcome})"
            )
        click.echo(
            f"precision {metrics.precision.value} recall {metrics.recall.value} "
            f"false-block {metrics.false_block_rate.value} "
            f"burden {metrics.escalation_burden.value}"
        )
        click.echo(f"ledger: {ledger_path} sha256 {report.ledger_sha256()}")
    sys.exit(0 if report.all_matched else 1)


@main.group()
def ledger() -> None:
    """Evidence ledger inspection."""


@ledger.command()
@click.argument("path", type=click.Path())
@click.option("--json", "as_json", is_flag=True, help="machine-readable output")
def verify(path: str, as_json: bool) -> None:
    """Check the hash chain (and signatures when GUARDRAIL_SIGNING_KEY is set)."""
    report = verify_file(path, signing_key_from_env())
    if as_json:
        click.echo(json.dumps(report.to_json()))
    elif report.ok:
        click.echo(f"ok: {report.total} records")
    else:
        click.echo(f"BROKEN at seq {report.first_broken_seq}: {report.detail}")
    sys.exit(0 if report.ok else 1)


@ledger.command()
@click.argument("path", type=click.Path())
@click.option("--policy", "policy", type=click.Path(), required=True)
@click.option("--json", "as_json", is_flag=True, help="machine-readable output")
def replay(path: str, policy: str, as_json: bool) -> None:
    """Re-decide every recorded request and report divergences."""
    ps = _load_policy(policy)
    try:
        report = replay_file(path, ps, signing_key_from_env())
    except ReplayError as exc:
        # broken chain is a finding, not a usage error
        click.echo(str(exc), err=True)
        sys.exit(1)
    if as_json:
        click.echo(json.dumps(report.to_json()))
    else:
        click.echo(
            f"{report.matched}/{report.decisions_total} decisions match "
            f"(pack {'matches' if report.pack_matches_recording else 'DIFFERS FROM'} recording)"
        )
        for m in report.mismatches:
            click.echo(
                f"  seq {m.seq} {m.request_id}: recorded {m.recorded.value}, "
                f"replayed {m.replayed.value}"
            )
    sys.exit(0 if report.ok else 1)


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=True)
def serve(config_path: str) -> None:
    """Start the HTTP gateway."""
    from .gateway import GatewayConfig, GatewayStartupError
    from .gateway import serve as serve_gateway

    try:
        config = GatewayConfig.from_file(config_path)
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CliInputError(f"bad config: {exc}") from exc
    try:
        serve_gateway(config)
    except GatewayStartupError as exc:
        raise CliInputError(str(exc)) from exc


if __name__ == "__main__":
    main()
