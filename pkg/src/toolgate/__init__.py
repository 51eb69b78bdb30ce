"""Runtime guardrails for agent tool calls.

Policies are sets of control tuples: who may do what to which resource,
under what precondition, with what decision, leaving what evidence, owned
by whom. A mediation engine sits at the tool-dispatch boundary, scores
every proposed call against the active pack (including accumulated
trajectory state), escalates to humans when the policy says so, and writes
every verdict to a hash-chained, replayable evidence ledger.
"""

from .escalation import (
    EscalationTicket,
    TicketError,
    TicketStatus,
    TicketStore,
    ticket_id_for,
)
from .expr import (
    ContextSchema,
    EvalContext,
    EvalOutcome,
    Expr,
    ExprSyntaxError,
    ExprTypeError,
    Scalar,
    ScalarType,
    TypedExpr,
    evaluate,
    parse_expr,
    print_expr,
    typecheck,
)
from .gateway import GatewayConfig, GatewayStartupError, build_engine, create_app, serve
from .ledger import (
    EvidenceLedger,
    LedgerError,
    VerificationReport,
    canonical_json,
    read_records,
    signing_key_from_env,
    verify_file,
    verify_records,
)
from .mediator import (
    CoreDecision,
    DuplicateRequest,
    EngineError,
    LedgerUnavailable,
    MediationEngine,
    MediationResult,
    OutcomeNotPermitted,
    PolicyRejected,
    StepOrderError,
    TupleEvaluation,
    UnknownRequest,
    decide_core,
)
from .model import (
    ActionRequest,
    ControlTuple,
    DecisionKind,
    DecisionSpec,
    EscalateParams,
    EvidenceSpec,
    GuardDecl,
    ModelError,
    OwnerRef,
    PolicySet,
    Principal,
    PrincipalKind,
    RubricAnswers,
    ValidationReport,
    Violation,
    combine,
    glob_match,
    match_tuples,
    request_from_json,
    request_to_json,
    validate_policy_set,
    validate_tuple,
)
from .policyfile import (
    ParseError,
    PolicyParseError,
    parse_policy_file,
    policy_hash,
    print_policy_set,
)
from .replay import ReplayError, ReplayReport, replay_file, replay_records
from .rubric import (
    EnforceabilityClass,
    Layer,
    LayerAssignment,
    RubricReport,
    assign_layers,
    rubric_report,
    score_rubric,
)
from .simulator import (
    Metrics,
    Scenario,
    SimulationReport,
    compute_metrics,
    compute_metrics_file,
    load_scenario,
    run_scenario,
    run_scenario_file,
)
from .trajectory import StepOutcome, Trajectory, TrajectoryStore, accumulator_values, prospective_values

__version__ = "0.1.0"
