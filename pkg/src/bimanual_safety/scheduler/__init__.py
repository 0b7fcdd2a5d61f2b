"""Stage tracking and cost scheduling (rule engine and remote protocol)."""
from .patterns import CostMask, UnsafePattern
from .remote import MockSchedulerServer, RemoteScheduler, guidance_document, parse_guidance
from .rules import RuleConfig, StageSpec, StageTracker, identify_pattern_rules, rule_schedule, schedule_costs

__all__ = [
    "CostMask", "MockSchedulerServer", "RemoteScheduler", "RuleConfig", "StageSpec", "StageTracker",
    "UnsafePattern", "guidance_document", "identify_pattern_rules", "parse_guidance", "rule_schedule",
    "schedule_costs",
]
