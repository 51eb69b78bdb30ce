"""Per-trajectory accumulated state for path-dependent preconditions.

A single request can look harmless while the run it belongs to crosses a
line: three small purchase orders clear a per-step threshold and still blow
a cumulative budget. Accumulators (sum / count / distinct_count over arg
fields of executed steps) give preconditions a window onto that path.

Only executed steps count. Blocked and failed steps had no external effect;
pending steps (escalated, awaiting a human) contribute nothing until their
outcome is reported. At decide time the mediator evaluates prospectively:
the candidate request is folded in as if it executed, so a rule like
`trajectory.total_spend > 5000` fires on the step that would cross the
budget, not one step late.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass
from decimal import Decimal

from .expr import Scalar, quantize
from .model import (
    AccumulatorDecl,
    AccumulatorKind,
    ActionRequest,
    DecisionKind,
    ModelError,
    PolicySet,
    Principal,
    ScalarType,
    glob_match,
)


class StepOutcome(str, enum.Enum):
    EXECUTED = "executed"
    BLOCKED = "blocked"
    PENDING = "pending"
    FAILED = "failed"


@dataclass(frozen=True)
class TrajectoryStep:
    request: ActionRequest
    decision_kind: DecisionKind
    outcome: StepOutcome


class TrajectoryError(ModelError):
    pass


@dataclass(frozen=True)
class Trajectory:
    trajectory_id: str
    root_principal: Principal
    steps: tuple[TrajectoryStep, ...] = ()

    @property
    def last_step_index(self) -> int:
        return self.steps[-1].request.step_index if self.steps else -1

    def step_for(self, request_id: str) -> TrajectoryStep | None:
        for step in self.steps:
            if step.request.request_id == request_id:
                return step
        return None


def _zero(ps: PolicySet, decl: AccumulatorDecl) -> Scalar:
    if decl.kind == AccumulatorKind.SUM:
        return Decimal("0.0000") if ps.accumulator_type(decl) == ScalarType.DECIMAL else 0
    return 0


def _fold_request(ps: PolicySet, decl: AccumulatorDecl, state, req: ActionRequest):
    """One executed request folded into one accumulator's internal state."""
    if not glob_match(decl.action_glob, req.action):
        return state
    if decl.kind == AccumulatorKind.COUNT:
        return state + 1
    value = req.args.get(decl.source_field or "")
    if value is None:
        # absent source field contributes nothing
        return state
    if decl.kind == AccumulatorKind.SUM:
        if isinstance(value, bool) or not isinstance(value, (int, Decimal)):
            return state
        if isinstance(state, Decimal) or isinstance(value, Decimal):
            return quantize(Decimal(state) + Decimal(value))
        return state + value
    # distinct_count: state is a frozenset of seen values
    return state | {value}


def _initial_states(ps: PolicySet) -> dict[str, object]:
    states: dict[str, object] = {}
    for decl in ps.accumulators:
        states[decl.name] = frozenset() if decl.kind == AccumulatorKind.DISTINCT_COUNT else _zero(ps, decl)
    return states


def _externalize(decl: AccumulatorDecl, state) -> Scalar:
    if decl.kind == AccumulatorKind.DISTINCT_COUNT:
        return len(state)
    return state


def accumulator_values(ps: PolicySet, traj: Trajectory) -> dict[str, Scalar]:
    """Recompute every accumulator from scratch over executed steps.

    This fold is the definition; incremental bookkeeping elsewhere must agree
    with it bit for bit.
    """
    states = _initial_states(ps)
    for step in traj.steps:
        if step.outcome != StepOutcome.EXECUTED:
            continue
        for decl in ps.accumulators:
            states[decl.name] = _fold_request(ps, decl, states[decl.name], step.request)
    return {decl.name: _externalize(decl, states[decl.name]) for decl in ps.accumulators}


def prospective_values(ps: PolicySet, traj: Trajectory, candidate: ActionRequest) -> dict[str, Scalar]:
    """Accumulators as they would stand if the candidate executed."""
    states = _initial_states(ps)
    for step in traj.steps:
        if step.outcome != StepOutcome.EXECUTED:
            continue
        for decl in ps.accumulators:
            states[decl.name] = _fold_request(ps, decl, states[decl.name], step.request)
    for decl in ps.accumulators:
        states[decl.name] = _fold_request(ps, decl, states[decl.name], candidate)
    return {decl.name: _externalize(decl, states[decl.name]) for decl in ps.accumulators}


class TrajectoryStore:
    """All live trajectories; thread-safe, single-writer per trajectory."""

    def __init__(self, ps: PolicySet):
        self._ps = ps
        self._lock = threading.RLock()
        self._trajectories: dict[str, Trajectory] = {}

    def begin(self, trajectory_id: str, principal: Principal) -> Trajectory:
        if not trajectory_id:
            raise TrajectoryError("trajectory id must be non-empty")
        with self._lock:
            if trajectory_id in self._trajectories:
                raise TrajectoryError(f"trajectory {trajectory_id!r} already exists")
            traj = Trajectory(trajectory_id, principal)
            self._trajectories[trajectory_id] = traj
            return traj

    def get(self, trajectory_id: str) -> Trajectory | None:
        with self._lock:
            return self._trajectories.get(trajectory_id)

    def rebind_policy(self, ps: PolicySet) -> None:
        """Swap the accumulator definitions; recorded steps are kept as-is."""
        with self._lock:
            self._ps = ps

    def get_or_begin(self, trajectory_id: str, principal: Principal) -> Trajectory:
        with self._lock:
            existing = self._trajectories.get(trajectory_id)
            if existing is not None:
                return existing
            return self.begin(trajectory_id, principal)

    def record_step(
        self, req: ActionRequest, decision_kind: DecisionKind, outcome: StepOutcome
    ) -> Trajectory:
        with self._lock:
            traj = self._trajectories.get(req.trajectory_id)
            if traj is None:
                raise TrajectoryError(f"unknown trajectory {req.trajectory_id!r}")
            expected = traj.last_step_index + 1
            if req.step_index != expected:
                raise TrajectoryError(
                    f"out-of-order step_index {req.step_index} in trajectory "
                    f"{req.trajectory_id!r} (expected {expected})"
                )
            updated = Trajectory(
                traj.trajectory_id,
                traj.root_principal,
                traj.steps + (TrajectoryStep(req, decision_kind, outcome),),
            )
            self._trajectories[req.trajectory_id] = updated
            return updated

    def update_outcome(self, trajectory_id: str, request_id: str, outcome: StepOutcome) -> Trajectory:
        if outcome == StepOutcome.PENDING:
            raise TrajectoryError("cannot update a step back to pending")
        with self._lock:
            traj = self._trajectories.get(trajectory_id)
            if traj is None:
                raise TrajectoryError(f"unknown trajectory {trajectory_id!r}")
            steps = list(traj.steps)
            for i, step in enumerate(steps):
                if step.request.request_id != request_id:
                    continue
                if step.outcome != StepOutcome.PENDING:
                    raise TrajectoryError(
                        f"step {request_id!r} already has outcome {step.outcome.value}"
                    )
                steps[i] = TrajectoryStep(step.request, step.decision_kind, outcome)
                updated = Trajectory(traj.trajectory_id, traj.root_principal, tuple(steps))
                self._trajectories[trajectory_id] = updated
                return updated
            raise TrajectoryError(f"no step with request_id {request_id!r} in {trajectory_id!r}")

    def snapshot(self, trajectory_id: str) -> dict[str, Scalar]:
        with self._lock:
            traj = self._trajectories.get(trajectory_id)
            if traj is None:
                states = _initial_states(self._ps)
                return {d.name: _externalize(d, states[d.name]) for d in self._ps.accumulators}
            return accumulator_values(self._ps, traj)

    def prospective(self, trajectory_id: str, candidate: ActionRequest) -> dict[str, Scalar]:
        with self._lock:
            traj = self._trajectories.get(trajectory_id)
            if traj is None:
                traj = Trajectory(trajectory_id or "?", candidate.principal)
            return prospective_values(self._ps, traj, candidate)
