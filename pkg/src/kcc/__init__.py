"""Kill-chain correlation engine.

Ingests network/host sensor events and threat intelligence into a typed
knowledge-graph fact store, forward-chains inference rules that map evidence
onto cyber kill-chain phases, and emits per-host attack alerts.
"""

from kcc.vocab import KillChainPhase, EventKind, IndicatorKind, Vocabulary
from kcc.facts import Fact, FactStore, Pattern, Asserted, Derived
from kcc.rules import Rule, RuleSet, parse_ruleset, run_to_fixpoint
from kcc.correlator import Alert, IndicatorConfig

__all__ = [
    "KillChainPhase",
    "EventKind",
    "IndicatorKind",
    "Vocabulary",
    "Fact",
    "FactStore",
    "Pattern",
    "Asserted",
    "Derived",
    "Rule",
    "RuleSet",
    "parse_ruleset",
    "run_to_fixpoint",
    "Alert",
    "IndicatorConfig",
]

__version__ = "0.1.0"
