"""Static detection of uninitialized stack-variable reads in lifted code."""

from .engine import Engine, RuleSet, evaluate, evaluate_naive, incremental_add, parse_rules
from .facts import FactBase, emit_facts, extract_edb, load_facts
from .il import Program, parse_il, pretty_print
from .interproc import AnalysisConfig, KnowledgeBase, analyze_to_fixpoint, group_warnings, monitor_loop
from .pipeline import prepare, solve
from .pointsto import pointsto_rules, query_indirect, run_pointsto
from .safezones import AccessSet, StackVar, classify_accesses, compute_safe_zones, reaching_defs_oracle
from .x86 import lift_x86_mini

__version__ = "0.1.0"
