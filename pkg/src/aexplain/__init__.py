"""Explain constraint violations in multivariate sensor data with event knowledge.

Pipeline: parse series -> detect violation features against a constraint
catalog -> match features to event knowledge -> choose a cheap set of
events covering every explicable feature -> propose knowledge updates for
whatever stayed unexplained.
"""

from .constraints import ConstraintCatalog, ViolationFeature, detect_violations, load_catalog
from .explainer import Problem, Solution, explain, solve_aec
from .knowledge import Explanation, KnowledgeSet, Representation, load_knowledge
from .matching import MatchConfig, anomaly_distance, interval_distance
from .series import SeriesBundle, parse_series
from .update import explanation_update

__version__ = "0.1.0"

__all__ = [
    "ConstraintCatalog",
    "Explanation",
    "KnowledgeSet",
    "MatchConfig",
    "Problem",
    "Representation",
    "SeriesBundle",
    "Solution",
    "ViolationFeature",
    "anomaly_distance",
    "detect_violations",
    "explain",
    "explanation_update",
    "interval_distance",
    "load_catalog",
    "load_knowledge",
    "parse_series",
    "solve_aec",
]
