"""Primes of the form floor(y * p#): stage engine, genealogy and heuristics."""
from .engine import StageState, VariantRule, run, seed, step
from .genealogy import GenealogyForest
from .ntcore import is_probable_prime, nth_prime, primorial

__version__ = "0.1.0"

__all__ = [
    "GenealogyForest",
    "StageState",
    "VariantRule",
    "is_probable_prime",
    "nth_prime",
    "primorial",
    "run",
    "seed",
    "step",
]
