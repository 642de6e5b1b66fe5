"""Event-level precision and recall."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable


@dataclass
class ScoreCard:
    precision: float
    recall: float
    f1: float
    hits: list[str] = field(default_factory=list)
    false_alarms: list[str] = field(default_factory=list)
    missed: list[str] = field(default_factory=list)
    ae_time_ms: float = 0.0
    up_time_ms: float = 0.0

    def to_dict(self) -> dict:
        return dict(vars(self))


def f1_score(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def precision_recall(identified: Iterable[str], actual: Iterable[str]) -> ScoreCard:
    """P = |I & A| / |I|, R = |I & A| / |A|.

    An empty identification scores P = 1 only when nothing happened; an
    empty ground truth gives R = 1.
    """
    ident, act = set(identified), set(actual)
    hit = ident & act
    if ident:
        p = len(hit) / len(ident)
    else:
        p = 1.0 if not act else 0.0
    r = len(hit) / len(act) if act else 1.0
    if not ident and act:
        r = 0.0
    return ScoreCard(p, r, f1_score(p, r), sorted(hit), sorted(ident - act), sorted(act - ident))
