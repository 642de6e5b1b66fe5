"""Minimum-cost covering explanations of detected violations.

Pipeline: candidate events (every exact representation observed), per-event
cost, dominance pruning and forced picks, then the constraint-type-sensitive
greedy cover (multi-sequence features first, cheapest coverer each; then
best coverage-per-cost on the residue).  ``brute_force_cover`` is the
exhaustive reference used by the tests; ``run_baseline`` implements the
comparison selectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .constraints import ViolationFeature
from .errors import Infeasible, InstanceTooLarge, NotACandidate, UnknownBaseline
from .knowledge import Explanation, KnowledgeSet
from .matching import DEFAULT_CONFIG, CoverMap, MatchConfig, RepMatch, build_cover_map

BASELINES = ("greedyC", "greedynC", "MFnC", "TopK", "AE")
SPLIT_METHODS = ("greedynC", "MFnC")
DEFAULT_LAMBDA = 0.4
_TIE = 1e-12


@dataclass(frozen=True)
class Candidate:
    event_id: str
    cover: frozenset[str]
    cost: float


@dataclass(frozen=True)
class Chosen:
    event_id: str
    cost: float
    covered: tuple[str, ...]
    phase: str  # forced | multi | greedy | baseline


@dataclass
class Solution:
    chosen: list[Chosen]
    uncovered: tuple[str, ...] = ()
    provenance: list[tuple[str, str, str | None]] = field(default_factory=list)

    @property
    def event_ids(self) -> list[str]:
        return [c.event_id for c in self.chosen]

    @property
    def total_cost(self) -> float:
        return float(sum(c.cost for c in self.chosen))

    @property
    def covered(self) -> frozenset[str]:
        return frozenset(f for c in self.chosen for f in c.covered)

    @property
    def complete(self) -> bool:
        return not self.uncovered

    def to_dict(self) -> dict:
        return {
            "chosen": [
                {"event_id": c.event_id, "cost": c.cost, "covered": list(c.covered), "phase": c.phase}
                for c in self.chosen
            ],
            "uncovered": list(self.uncovered),
            "total_cost": self.total_cost,
        }


# -- candidates and costs ------------------------------------------------------------


def _is_candidate(rows: Sequence[RepMatch]) -> bool:
    return all(m.feature is not None and m.dist < 1.0 for m in rows if m.exact)


def _cost(rows: Sequence[RepMatch]) -> float:
    total = 0.0
    for m in rows:
        # an unmatched possible representation counts as maximally distant
        total += m.w * m.dist / m.rep.n_sequences
    return total


def candidate_explanations(
    features: Sequence[ViolationFeature],
    ks: KnowledgeSet,
    cfg: MatchConfig = DEFAULT_CONFIG,
    cover_map: CoverMap | None = None,
) -> list[Candidate]:
    """Events whose every exact representation is observed at distance < 1."""
    cm = cover_map or build_cover_map(features, ks, cfg)
    out = []
    for eid in sorted(cm.matches):
        rows = cm.matches[eid]
        if _is_candidate(rows):
            out.append(Candidate(eid, cm.cover[eid], _cost(rows)))
    return out


def explanation_cost(
    event: Explanation,
    features: Sequence[ViolationFeature],
    cfg: MatchConfig = DEFAULT_CONFIG,
) -> float:
    cm = build_cover_map(features, KnowledgeSet.of([event]), cfg)
    rows = cm.matches[event.event_id]
    if not _is_candidate(rows):
        raise NotACandidate(f"event {event.event_id!r} has an exact representation with no matching feature")
    return _cost(rows)


# -- global optimization -----------------------------------------------------------------


def prune_and_force(
    candidates: Sequence[Candidate],
    vstar: Iterable[str],
) -> tuple[list[Candidate], list[Candidate], frozenset[str]]:
    """Drop dominated candidates, then take every sole coverer of a feature.

    Returns ``(remaining, forced, residue)`` where ``residue`` is ``vstar``
    minus what the forced events cover.
    """
    vstar = frozenset(vstar)
    cands = sorted(candidates, key=lambda c: c.event_id)
    kept = [
        ci
        for ci in cands
        if not any(cj is not ci and ci.cover <= cj.cover and ci.cost > cj.cost for cj in cands)
    ]
    coverers: dict[str, list[Candidate]] = {v: [] for v in vstar}
    for c in kept:
        for v in c.cover & vstar:
            coverers[v].append(c)
    forced_ids = sorted({cs[0].event_id for cs in coverers.values() if len(cs) == 1})
    forced = [c for c in kept if c.event_id in forced_ids]
    remaining = [c for c in kept if c.event_id not in forced_ids]
    covered = frozenset().union(*(c.cover for c in forced)) if forced else frozenset()
    return remaining, forced, vstar - covered


def _ratio_key(c: Candidate, residue: frozenset[str]) -> tuple[float, int]:
    gain = len(c.cover & residue)
    if gain == 0:
        return (0.0, 0)
    return (math.inf if c.cost <= 0 else gain / c.cost, gain)


def _greedy(
    pool: Sequence[Candidate],
    residue: set[str],
    chosen: dict[str, Chosen],
    provenance: list,
    vstar: frozenset[str],
    phase: str,
) -> None:
    """Repeatedly take the candidate with most residue covered per unit cost."""
    pool = sorted(pool, key=lambda c: c.event_id)
    while residue:
        best, best_key = None, (0.0, 0)
        frozen = frozenset(residue)
        for c in pool:
            key = _ratio_key(c, frozen)
            if key[1] == 0:
                continue
            if best is None or key[0] > best_key[0] * (1 + _TIE) or (
                key[0] == math.inf and best_key[0] != math.inf
            ):
                best, best_key = c, key
        if best is None:
            break
        _take(best, chosen, vstar, phase)
        provenance.append((best.event_id, phase, None))
        residue -= best.cover


def _take(c: Candidate, chosen: dict[str, Chosen], vstar: frozenset[str], phase: str) -> None:
    if c.event_id not in chosen:
        chosen[c.event_id] = Chosen(c.event_id, c.cost, tuple(sorted(c.cover & vstar)), phase)


def solve_aec(
    candidates: Sequence[Candidate],
    vstar: Iterable[str],
    features: Mapping[str, ViolationFeature],
) -> Solution:
    """Three-phase covering of ``vstar``; residue left uncovered is reported."""
    vstar = frozenset(vstar)
    chosen: dict[str, Chosen] = {}
    provenance: list[tuple[str, str, str | None]] = []
    if not vstar:
        return Solution([], ())

    remaining, forced, residue = prune_and_force(candidates, vstar)
    for c in forced:
        _take(c, chosen, vstar, "forced")
        provenance.append((c.event_id, "forced", None))

    multi = sorted((f for f in residue if features[f].K > 1), key=lambda f: (-features[f].K, f))
    for f in multi:
        covering = [c for c in remaining if f in c.cover]
        if not covering:
            continue
        best = min(covering, key=lambda c: (c.cost, c.event_id))
        _take(best, chosen, vstar, "multi")
        provenance.append((best.event_id, "multi", f))

    covered = frozenset().union(*(c.cover for c in remaining if c.event_id in chosen)) if chosen else frozenset()
    un = set(residue - covered)
    _greedy(remaining, un, chosen, provenance, vstar, "greedy")
    return Solution(list(chosen.values()), tuple(sorted(un)), provenance)


# -- exhaustive reference ---------------------------------------------------------------------


def brute_force_cover(
    candidates: Sequence[Candidate],
    vstar: Iterable[str],
    max_candidates: int = 20,
) -> Solution:
    """Minimum-total-cost subset of ``candidates`` covering ``vstar``.

    Enumerates all subsets; ties go to the lexicographically smallest sorted
    list of event ids.
    """
    cands = sorted(candidates, key=lambda c: c.event_id)
    n = len(cands)
    if n > max_candidates:
        raise InstanceTooLarge(f"{n} candidates exceeds the exhaustive limit of {max_candidates}")
    elems = sorted(frozenset(vstar))
    if not elems:
        return Solution([], ())
    pos = {f: i for i, f in enumerate(elems)}
    masks = [sum(1 << pos[f] for f in c.cover if f in pos) for c in cands]
    full = (1 << len(elems)) - 1
    if (0 if not masks else np.bitwise_or.reduce(np.array(masks, dtype=object))) != full:
        raise Infeasible("some feature has no covering candidate")

    dtype = np.int64 if len(elems) <= 62 else object
    cov = np.zeros(1 << n, dtype=dtype)
    cost = np.zeros(1 << n)
    for i, c in enumerate(cands):
        lo, hi = 1 << i, 1 << (i + 1)
        cov[lo:hi] = cov[:lo] | masks[i]
        cost[lo:hi] = cost[:lo] + c.cost
    feasible = np.flatnonzero(cov == full)
    best_cost = cost[feasible].min()
    ties = feasible[cost[feasible] <= best_cost + _TIE * max(1.0, abs(best_cost))]

    def ids(mask: int) -> list[str]:
        return [cands[i].event_id for i in range(n) if mask >> i & 1]

    best = min((int(m) for m in ties), key=ids)
    vs = frozenset(elems)
    chosen = [Chosen(cands[i].event_id, cands[i].cost, tuple(sorted(cands[i].cover & vs)), "optimal") for i in range(n) if best >> i & 1]
    return Solution(chosen, ())


# -- baselines ---------------------------------------------------------------------------------


def topk_k(n_events: int, n_violated: int, n_constraints: int) -> int:
    if n_constraints <= 0:
        return 1
    return max(1, int(math.floor(n_events * n_violated / n_constraints + 0.5)))


def run_baseline(
    name: str,
    candidates: Sequence[Candidate],
    vstar: Iterable[str],
    features: Mapping[str, ViolationFeature],
    *,
    n_events: int = 0,
    n_constraints: int = 0,
    lam: float = DEFAULT_LAMBDA,
) -> Solution:
    """Apply one comparison selector.

    greedynC and MFnC expect features and knowledge already split per
    sequence (see ``detect_violations(split=True)`` and
    ``knowledge.split_knowledge``); they then run greedyC and AEC unchanged.
    """
    vstar = frozenset(vstar)
    if name not in BASELINES:
        raise UnknownBaseline(f"unknown baseline {name!r}; expected one of {BASELINES}")
    if name in SPLIT_METHODS and any(len(features[f].sequences) > 1 for f in vstar):
        raise ValueError(f"{name} needs feature-splitting detection")
    if name == "MFnC":
        return solve_aec(candidates, vstar, features)
    if name in ("greedyC", "greedynC"):
        chosen: dict[str, Chosen] = {}
        prov: list = []
        un = set(vstar)
        _greedy(candidates, un, chosen, prov, vstar, "greedy")
        return Solution(list(chosen.values()), tuple(sorted(un)), prov)

    if name == "TopK":
        n_violated = len({v.constraint_id for v in features.values()})
        k = topk_k(n_events, n_violated, n_constraints)
        picked = sorted(candidates, key=lambda c: (c.cost, c.event_id))[:k]
    else:  # AE
        if not 0.0 < lam < 1.0:
            raise ValueError("lambda must lie in (0, 1)")
        picked = [c for c in sorted(candidates, key=lambda c: c.event_id) if c.cover and c.cost / len(c.cover) <= lam]
    chosen_list = [Chosen(c.event_id, c.cost, tuple(sorted(c.cover & vstar)), "baseline") for c in picked]
    covered = frozenset(f for c in chosen_list for f in c.covered)
    return Solution(chosen_list, tuple(sorted(vstar - covered)), [(c.event_id, "baseline", None) for c in picked])


# -- one-call front end -------------------------------------------------------------------------


@dataclass
class Problem:
    """Everything the selectors need, computed once from features + knowledge."""

    features: dict[str, ViolationFeature]
    cover_map: CoverMap
    candidates: list[Candidate]
    vstar: frozenset[str]

    @classmethod
    def build(cls, features: Sequence[ViolationFeature], ks: KnowledgeSet, cfg: MatchConfig = DEFAULT_CONFIG) -> "Problem":
        cm = build_cover_map(features, ks, cfg)
        cands = candidate_explanations(features, ks, cfg, cm)
        return cls(dict(cm.features), cm, cands, frozenset(cm.explicable))

    @property
    def set_c(self) -> list[str]:
        return list(self.cover_map.set_c)


def explain(
    problem: Problem,
    method: str = "AEC",
    *,
    n_events: int = 0,
    n_constraints: int = 0,
    lam: float = DEFAULT_LAMBDA,
) -> Solution:
    if method == "AEC":
        return solve_aec(problem.candidates, problem.vstar, problem.features)
    return run_baseline(
        method,
        problem.candidates,
        problem.vstar,
        problem.features,
        n_events=n_events,
        n_constraints=n_constraints,
        lam=lam,
    )


def explanation_report(
    problem: Problem,
    solution: Solution,
    ks: KnowledgeSet,
    config: Mapping | None = None,
) -> dict:
    """The explanation report JSON document."""
    return {
        "solution": [
            {"event_id": c.event_id, "label": ks[c.event_id].label, "cost": c.cost, "covered": list(c.covered)}
            for c in solution.chosen
        ],
        "uncovered": list(solution.uncovered),
        "set_b": [{"event_id": e, **r.to_dict()} for e, r in problem.cover_map.set_b],
        "set_c": list(problem.set_c),
        "unmatched_knowledge": [{"event_id": e, **r.to_dict()} for e, r in problem.cover_map.set_b],
        "inexplicable_features": list(problem.set_c),
        "total_cost": solution.total_cost,
        "config": dict(config or {}),
    }
