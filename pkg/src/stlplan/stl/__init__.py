"""Signal temporal logic: formulas, text syntax, exact and smooth robustness."""
from .formula import (And, Always, Eventually, HorizonError, Interval, IntervalError, Next,
                      Not, Or, Pred, Predicate, PredicateTable, Signal, StlError, TrueF,
                      UnknownPredicateError, Until, conj, depth, disj, implies,
                      interval_to_samples, predicate_ids, required_horizon, window_offsets)
from .parser import StlSyntaxError, parse_formula, unparse
from .semantics import (TOP, argument_count, evaluate, robustness, satisfied, smooth_max,
                        smooth_min, smooth_robustness)

__all__ = [
    "And", "Always", "Eventually", "HorizonError", "Interval", "IntervalError", "Next", "Not",
    "Or", "Pred", "Predicate", "PredicateTable", "Signal", "StlError", "StlSyntaxError", "TOP",
    "TrueF", "UnknownPredicateError", "Until", "argument_count", "conj", "depth", "disj",
    "evaluate", "implies", "interval_to_samples", "parse_formula", "predicate_ids",
    "required_horizon", "robustness", "satisfied", "smooth_max", "smooth_min",
    "smooth_robustness", "unparse", "window_offsets",
]
