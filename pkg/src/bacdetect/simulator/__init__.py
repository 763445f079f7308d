from .execution import (Account, Credentials, HttpExecutor, Verdict, execute_sequence,
                        filter_hallucinations, resolved_plan)
from .generation import GenerationConfig, GenerationReport, generate_with_llm
from .llm import ChatClient
from .planning import (PlannedSequence, PlanStep, assign_role, build_prompt, describe_behavior,
                       generate_plan, parse_plan)
from .synth import SynthConfig, synth_generate

__all__ = [
    "Account", "Credentials", "HttpExecutor", "Verdict", "execute_sequence", "filter_hallucinations",
    "resolved_plan", "GenerationConfig", "GenerationReport", "generate_with_llm", "ChatClient",
    "PlannedSequence", "PlanStep", "assign_role", "build_prompt", "describe_behavior", "generate_plan",
    "parse_plan", "SynthConfig", "synth_generate",
]
