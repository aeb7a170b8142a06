"""Knowledge-based synthesis and verification of synchronous agreement
protocols over finite layered systems.

The pipeline: pick an information exchange and a failure model
(:mod:`kbpforge.exchanges`, :mod:`kbpforge.failures`), build the layered
system of reachable global states (:mod:`kbpforge.model`), evaluate
epistemic conditions over it (:mod:`kbpforge.epistemic`), synthesize the
unique decision table implementing a knowledge-based program
(:mod:`kbpforge.kbp`), and check agreement properties or compare decision
times (:mod:`kbpforge.verify`).
"""

from .epistemic import (
    Believes,
    CommonN,
    Deciding,
    Decided,
    DecisionIs,
    EveryoneN,
    Evaluator,
    ExistsVote,
    FALSE,
    FormulaError,
    Formula,
    Gfp,
    InN,
    Implies,
    JustDecided,
    Knows,
    Not,
    TRUE,
    Var,
    VoteIs,
    common_belief_oracle,
    conj,
    disj,
    evaluate_formula,
    holds_everywhere,
    parse_formula,
)
from .exchanges import (
    COUNT,
    DIFF,
    DWORKMOSES,
    EBASIC,
    EMIN,
    EXCHANGE_NAMES,
    FLOODSET,
    ExchangeInfo,
    exchange_info,
)
from .failures import CRASH, FAILURE_MODELS, SOMISSIONS
from .kbp import (
    BASELINES,
    DecisionTable,
    EBA0,
    KbpError,
    KbpSpec,
    NOOP,
    SBA,
    SynthesisResult,
    TableDomainError,
    action_value,
    as_table,
    condition_report,
    decide,
    kbp_by_name,
    noop_table,
    prescribed_actions,
    render_action,
    synthesize,
)
from .kernels import active_implementation
from .model import (
    GlobalState,
    InstanceParams,
    LayeredSystem,
    ParameterError,
    build_system,
    initial_states,
    nonfaulty_set,
)
from .verify import (
    AuditReport,
    Counterexample,
    EBA_SUITE,
    HypothesisReport,
    OrderResult,
    PropertyResult,
    SBA_SUITE,
    SpecSuite,
    VerificationReport,
    VerifyError,
    check_suite,
    compare,
    decide_time_hypothesis,
    earliest_knowledge_audit,
    render_state,
    suite_by_name,
)

__version__ = "0.1.0"

__all__ = [
    "AuditReport",
    "BASELINES",
    "Believes",
    "COUNT",
    "CRASH",
    "CommonN",
    "Counterexample",
    "DIFF",
    "DWORKMOSES",
    "Decided",
    "Deciding",
    "DecisionIs",
    "DecisionTable",
    "EBA0",
    "EBASIC",
    "EBA_SUITE",
    "EMIN",
    "EXCHANGE_NAMES",
    "EveryoneN",
    "Evaluator",
    "ExchangeInfo",
    "ExistsVote",
    "FAILURE_MODELS",
    "FALSE",
    "FLOODSET",
    "Formula",
    "FormulaError",
    "Gfp",
    "GlobalState",
    "HypothesisReport",
    "Implies",
    "InN",
    "InstanceParams",
    "JustDecided",
    "KbpError",
    "KbpSpec",
    "Knows",
    "LayeredSystem",
    "NOOP",
    "Not",
    "OrderResult",
    "ParameterError",
    "PropertyResult",
    "SBA",
    "SBA_SUITE",
    "SOMISSIONS",
    "SpecSuite",
    "SynthesisResult",
    "TRUE",
    "TableDomainError",
    "Var",
    "VerificationReport",
    "VerifyError",
    "VoteIs",
    "action_value",
    "active_implementation",
    "as_table",
    "build_system",
    "check_suite",
    "common_belief_oracle",
    "compare",
    "condition_report",
    "conj",
    "decide",
    "decide_time_hypothesis",
    "disj",
    "earliest_knowledge_audit",
    "evaluate_formula",
    "exchange_info",
    "holds_everywhere",
    "initial_states",
    "kbp_by_name",
    "nonfaulty_set",
    "noop_table",
    "parse_formula",
    "prescribed_actions",
    "render_state",
    "render_action",
    "suite_by_name",
    "synthesize",
]
