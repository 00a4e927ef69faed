"""Fault-tolerant multiparty session types: parsing, projection, type
checking, failure-aware execution, and trace-level verification."""

from . import syntax
from .coherence import coherence_witness, env_apply, env_step, initial_env
from .oracles import (chaotic_oracle, condition1_oracle, diamond_s_oracle,
                      make_oracle, reliable_oracle)
from .parser import ParseError, parse_expr, parse_global, parse_local, parse_process
from .pretty import pretty_global, pretty_local, pretty_process
from .projection import MergeUndefined, NotProjectable, merge, project, project_all
from .runner import Program, read_trace, replay, run, write_trace
from .semantics import (SystemState, apply_redex, congruent_normal_form,
                        enabled_redexes, eval_expr)
from .typing import (GlobalEnv, SessionEnv, TypeRejection, expr_sort,
                     make_global_env, typecheck)
from .verifier import (check_error_freedom, check_linearity, detect_stuck,
                       fuzz, run_verified)
from .wellformed import check_global_wf, check_local_wf

__version__ = "0.1.0"

__all__ = [
    "syntax", "parse_global", "parse_local", "parse_process", "parse_expr",
    "ParseError", "pretty_global", "pretty_local", "pretty_process",
    "check_global_wf", "check_local_wf", "merge", "project", "project_all",
    "MergeUndefined", "NotProjectable", "GlobalEnv", "SessionEnv",
    "make_global_env", "typecheck", "TypeRejection", "expr_sort",
    "initial_env", "env_step", "env_apply", "coherence_witness",
    "SystemState", "enabled_redexes", "apply_redex", "eval_expr",
    "congruent_normal_form", "reliable_oracle", "chaotic_oracle",
    "condition1_oracle", "diamond_s_oracle", "make_oracle", "Program",
    "run", "replay", "read_trace", "write_trace", "run_verified", "fuzz",
    "check_linearity", "check_error_freedom", "detect_stuck",
]
