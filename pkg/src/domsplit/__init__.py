"""Distributed constraint solving by splitting models.

A budgeted solver that can stop anywhere, write the explored search out as
restart nogoods, split what is left into independent model files, and a
spool-backed coordinator that farms those files out to worker processes.
"""

from .dominion import DominionSyntaxError, load_model, parse_model, serialize_model
from .engine import (
    Branching,
    Budget,
    BudgetExhausted,
    Exhausted,
    Mode,
    SolutionFound,
    propagate,
    solve,
    solve_streaming,
)
from .model import Assignment, Constraint, Domain, Model, ModelError, VarRef, add_constraints, domain_partition, eval_constraint
from .nogoods import Nogood, SplitSet, SplitUnavailable, extract_restart_nogoods, split_model

__version__ = "0.1.0"
