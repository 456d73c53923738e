"""SLA monitoring contracts generated from declarative agreements, run on a simulated ledger."""

from .catalog import VocabularyCatalog, default_catalog, load_catalog
from .contract import MethodKind, MonitorContract, generate_contract, render_documentation, render_source_listing
from .emulator import EmulationReport, EmulatorConfig, gen_payload, plan_iteration, run_emulation
from .ledger import (
    Block,
    EndorsementRejected,
    Ledger,
    LedgerConfig,
    LoadError,
    LogicalClock,
    Transaction,
    VerificationReport,
    get_history,
    load,
    persist,
    verify_chain,
    verify_file,
)
from .model import (
    RelationalOperator,
    Rule,
    RuleOutcome,
    SlaDocument,
    TargetKind,
    TargetSpec,
    UnitKind,
    WorkflowActivity,
    evaluate_rule,
    normalize_value,
)
from .parser import ParseIssue, SlaParseError, load_sla, parse_sla, serialize_sla, validate_against_catalog
from .runtime import InvokeResponse, MemoryState, StateUpdatePayload, ViolationRecord, invoke

__version__ = "0.1.0"

__all__ = [
    "Block", "EmulationReport", "EmulatorConfig", "EndorsementRejected", "InvokeResponse", "Ledger",
    "LedgerConfig", "LoadError", "LogicalClock", "MemoryState", "MethodKind", "MonitorContract", "ParseIssue",
    "RelationalOperator", "Rule", "RuleOutcome", "SlaDocument", "SlaParseError", "StateUpdatePayload",
    "TargetKind", "TargetSpec", "Transaction", "UnitKind", "VerificationReport", "ViolationRecord",
    "VocabularyCatalog", "WorkflowActivity", "default_catalog", "evaluate_rule", "gen_payload",
    "generate_contract", "get_history", "invoke", "load", "load_catalog", "load_sla", "normalize_value",
    "parse_sla", "persist", "plan_iteration", "render_documentation", "render_source_listing",
    "run_emulation", "serialize_sla", "validate_against_catalog", "verify_chain", "verify_file",
]
