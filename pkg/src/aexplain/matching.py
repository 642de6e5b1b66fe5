"""Distances and cover relations between detected features and knowledge.

Quantitative degrees are compared with an interval Jaccard distance
``1 - |I & J| / |I | J|`` over lengths (after clamping both intervals to a
finite domain); qualitative degrees with ``|F_r - F|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .constraints import ViolationFeature
from .errors import ConstraintMismatch
from .knowledge import KnowledgeSet, Representation


@dataclass(frozen=True)
class MatchConfig:
    theta: float = 0.9
    clamp: tuple[float, float] = (-10.0, 10.0)

    def __post_init__(self) -> None:
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        if not self.clamp[0] < self.clamp[1]:
            raise ValueError("clamp domain is empty")


DEFAULT_CONFIG = MatchConfig()
_TINY = math.ulp(0.0)


def clamp_interval(iv: tuple[float, float], domain: tuple[float, float]) -> tuple[float, float]:
    lo, hi = domain
    d = min(max(iv[0], lo), hi)
    u = min(max(iv[1], lo), hi)
    return d, u


def interval_distance(
    a: tuple[float, float],
    b: tuple[float, float],
    domain: tuple[float, float] = DEFAULT_CONFIG.clamp,
) -> float:
    """Jaccard distance of two closed intervals, clamped to ``domain``.

    Identical (clamped) intervals are at distance 0, including identical
    points; otherwise a zero-length union or intersection gives 1.
    """
    d1, u1 = clamp_interval(a, domain)
    d2, u2 = clamp_interval(b, domain)
    if d1 > u1 or d2 > u2:
        raise ValueError(f"malformed interval {a} or {b}")
    if d1 == d2 and u1 == u2:
        return 0.0
    inter = max(0.0, min(u1, u2) - max(d1, d2))
    union = (u1 - d1) + (u2 - d2) - inter
    if union <= 0.0:
        return 1.0
    # distinct intervals never collapse to 0 through rounding
    return min(1.0, max(_TINY, 1.0 - inter / union))


def anomaly_distance(v: ViolationFeature, r: Representation, cfg: MatchConfig = DEFAULT_CONFIG) -> float:
    if v.constraint_id != r.constraint_id:
        raise ConstraintMismatch(f"feature on {v.constraint_id} vs representation on {r.constraint_id}")
    if isinstance(v.F, tuple) != isinstance(r.F_r, tuple):
        raise ConstraintMismatch(f"{v.constraint_id}: qualitative/quantitative degree mismatch")
    if isinstance(v.F, tuple):
        return interval_distance(v.F, r.F_r, cfg.clamp)
    return float(abs(r.F_r - v.F))


def is_consistent(v: ViolationFeature, r: Representation, cfg: MatchConfig = DEFAULT_CONFIG) -> bool:
    d = anomaly_distance(v, r, cfg)
    if isinstance(v.F, tuple):
        return d < cfg.theta
    return d == 0.0


def is_explicable(v: ViolationFeature, ks: KnowledgeSet, index: dict | None = None) -> bool:
    """Some representation anywhere in ``ks`` has v's constraint and sequences."""
    if index is not None:
        return v.signature in index
    return any(v.signature == r.signature for e in ks.events() for r in e.representations)


@dataclass(frozen=True)
class RepMatch:
    """A representation of one event and its best detected counterpart."""

    rep: Representation
    exact: bool
    w: float  # 1.0 for exact representations
    feature: ViolationFeature | None
    dist: float  # 1.0 when no feature carries the signature
    consistent: tuple[str, ...]  # fids of all features consistent with rep


@dataclass
class CoverMap:
    """Cover relations between events and the detected features.

    ``cover[e]`` holds the fids consistent with some representation of
    ``e``; ``cover_ae[fid]`` the events covering that feature.  Features are
    partitioned into ``explicable`` (Set A) and ``set_c``; ``set_b`` lists
    representations for which nothing was detected.
    """

    features: dict[str, ViolationFeature]
    matches: dict[str, list[RepMatch]]
    cover: dict[str, frozenset[str]]
    cover_ae: dict[str, frozenset[str]]
    explicable: list[str]
    set_c: list[str]
    set_b: list[tuple[str, Representation]] = field(default_factory=list)

    def restrict(self, events: Iterable[str]) -> "CoverMap":
        """Cover map over a subset of events (same feature partition)."""
        keep = list(events)
        cover = {e: self.cover[e] for e in keep}
        ae: dict[str, set[str]] = {f: set() for f in self.features}
        for e, fs in cover.items():
            for f in fs:
                ae[f].add(e)
        return CoverMap(
            self.features,
            {e: self.matches[e] for e in keep},
            cover,
            {f: frozenset(s) for f, s in ae.items()},
            self.explicable,
            self.set_c,
            [b for b in self.set_b if b[0] in cover],
        )


def build_cover_map(
    features: Sequence[ViolationFeature],
    ks: KnowledgeSet,
    cfg: MatchConfig = DEFAULT_CONFIG,
) -> CoverMap:
    by_fid: dict[str, ViolationFeature] = {}
    by_sig: dict = {}
    for v in features:
        by_fid[v.fid] = v
        by_sig.setdefault(v.signature, []).append(v)
    index = ks.signature_index()

    matches: dict[str, list[RepMatch]] = {}
    cover: dict[str, frozenset[str]] = {}
    ae: dict[str, set[str]] = {f: set() for f in by_fid}
    set_b: list[tuple[str, Representation]] = []
    for e in ks.events():
        rows: list[RepMatch] = []
        covered: set[str] = set()
        reps = [(r, True, 1.0) for r in e.exact] + [(p.rep, False, p.w) for p in e.possible]
        for r, exact, w in reps:
            cands = by_sig.get(r.signature, ())
            best, best_d, cons = None, 1.0, []
            for v in cands:
                d = anomaly_distance(v, r, cfg)
                if best is None or d < best_d:
                    best, best_d = v, d
                if (d < cfg.theta) if isinstance(v.F, tuple) else d == 0.0:
                    cons.append(v.fid)
            if not cands:
                set_b.append((e.event_id, r))
            covered.update(cons)
            rows.append(RepMatch(r, exact, w, best, best_d, tuple(cons)))
        matches[e.event_id] = rows
        cover[e.event_id] = frozenset(covered)
        for f in covered:
            ae[f].add(e.event_id)

    explicable = [v.fid for v in features if v.signature in index]
    set_c = [v.fid for v in features if v.signature not in index]
    return CoverMap(by_fid, matches, cover, {f: frozenset(s) for f, s in ae.items()}, explicable, set_c, set_b)
