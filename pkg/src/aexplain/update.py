"""Learning from unexplained violations.

Features left uncovered by a solution are attached to the events that
explain related features (same sequence with another constraint, or the
same multi-sequence constraint on other sequences), or seed a brand-new
event when nothing related is explained.  Changes are emitted as proposals
which can be reviewed before they are committed to a new knowledge version.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .constraints import ConstraintCatalog, ViolationFeature
from .errors import KindMismatch, KnowledgeError
from .explainer import Solution
from .knowledge import Explanation, KnowledgeSet, PossibleRep, Representation
from .matching import DEFAULT_CONFIG, CoverMap, MatchConfig, build_cover_map, interval_distance

W0 = 0.5
EPS = 1e-3
PENDING, ACCEPTED, REJECTED = "pending", "accepted", "rejected"
STATUSES = (PENDING, ACCEPTED, REJECTED)


# -- relevance graph --------------------------------------------------------------------


@dataclass
class RelevanceGraph:
    vertices: list[str]
    adjacency: dict[str, tuple[str, ...]]

    def neighbours(self, fid: str) -> tuple[str, ...]:
        return self.adjacency[fid]

    @property
    def edges(self) -> set[frozenset[str]]:
        return {frozenset((a, b)) for a, ns in self.adjacency.items() for b in ns}


def _multi(v: ViolationFeature, catalog: ConstraintCatalog | None) -> tuple[bool, frozenset[str]]:
    if catalog is not None and v.constraint_id in catalog:
        dom = catalog[v.constraint_id].domain
        return len(dom) > 1, frozenset(dom)
    # K carries the domain size even for split features
    return v.K > 1, frozenset(v.sequences) if v.K == len(v.sequences) else frozenset()


def related(a: ViolationFeature, b: ViolationFeature, catalog: ConstraintCatalog | None = None) -> bool:
    """Relevance: shared sequence under different constraints, or the same
    multi-sequence constraint seen on different sequences of its domain."""
    sa, sb = set(a.sequences), set(b.sequences)
    if a.constraint_id != b.constraint_id:
        return bool(sa & sb)
    if sa == sb:
        return False
    is_multi, dom = _multi(a, catalog)
    if not is_multi:
        return False
    return not dom or (sa <= dom and sb <= dom)


def build_relevance_graph(
    features: Sequence[ViolationFeature],
    catalog: ConstraintCatalog | None = None,
) -> RelevanceGraph:
    by_seq: dict[str, list[ViolationFeature]] = {}
    by_con: dict[str, list[ViolationFeature]] = {}
    for v in features:
        for s in v.sequences:
            by_seq.setdefault(s, []).append(v)
        by_con.setdefault(v.constraint_id, []).append(v)
    adj: dict[str, set[str]] = {v.fid: set() for v in features}
    for v in features:
        pool = {u.fid: u for s in v.sequences for u in by_seq[s]}
        pool.update((u.fid, u) for u in by_con[v.constraint_id])
        for fid, u in pool.items():
            if fid != v.fid and related(v, u, catalog):
                adj[v.fid].add(fid)
                adj[fid].add(v.fid)
    return RelevanceGraph([v.fid for v in features], {k: tuple(sorted(s)) for k, s in adj.items()})


# -- FindUp ------------------------------------------------------------------------------------


def find_up(
    v: str,
    graph: RelevanceGraph,
    cover_ae: Mapping[str, Iterable[str]],
    flags: dict[str, bool],
    strict_flags: bool = False,
) -> tuple[set[str], set[str]]:
    """Uncovered features reachable from ``v`` and the events to extend.

    A feature explained by some event stops the search and contributes
    those events.  With ``strict_flags`` an explained feature, once visited,
    is never consulted again; by default explained features are always
    consulted so that separate seeds sharing an explained neighbour reach
    the same events.
    """
    candr: set[str] = set()
    upset: set[str] = set()
    stack = [v]
    flags[v] = True
    if cover_ae.get(v):
        return set(), set(cover_ae[v])
    while stack:
        cur = stack.pop()
        candr.add(cur)
        for n in graph.neighbours(cur):
            covered = bool(cover_ae.get(n))
            if covered and (not flags.get(n) or not strict_flags):
                flags[n] = True
                upset.update(cover_ae[n])
            elif not covered and not flags.get(n):
                flags[n] = True
                stack.append(n)
    return candr, upset


# -- proposals ---------------------------------------------------------------------------------


@dataclass
class ManualReview:
    event_id: str
    rep: Representation
    observed: tuple[float, float] | int
    reason: str


@dataclass
class UpdateProposal:
    """One knowledge change.

    ``action`` is ``create`` (new event; first rep exact, rest possible),
    ``insert`` (new possible reps on ``target``), ``modify`` (averaged
    degree for an existing possible rep) or ``review`` (needs an expert).
    """

    action: str
    target: str
    new_reps: list[Representation]
    provenance: list[str]
    w0: float = W0
    status: str = PENDING
    label: str = ""
    id: str = ""

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise KnowledgeError(f"unknown proposal status {self.status!r}")
        if not self.id:
            blob = json.dumps([self.action, self.target, [r.to_dict() for r in self.new_reps]], sort_keys=True)
            self.id = f"{self.action}-{hashlib.sha1(blob.encode()).hexdigest()[:12]}"

    def set_status(self, status: str) -> None:
        if self.status != PENDING or status not in (ACCEPTED, REJECTED):
            raise KnowledgeError(f"proposal {self.id}: cannot move from {self.status} to {status}")
        self.status = status

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "action": self.action,
            "target": self.target,
            "label": self.label,
            "new_reps": [r.to_dict() for r in self.new_reps],
            "provenance": list(self.provenance),
            "w0": self.w0,
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "UpdateProposal":
        return cls(
            d["action"],
            d["target"],
            [Representation.from_dict(r) for r in d["new_reps"]],
            list(d.get("provenance", ())),
            float(d.get("w0", W0)),
            d.get("status", PENDING),
            d.get("label", ""),
            d.get("id", ""),
        )


def new_event_id(features: Iterable[ViolationFeature]) -> str:
    sigs = sorted(json.dumps([v.constraint_id, sorted(v.sequences)]) for v in features)
    return "auto-" + hashlib.sha1("|".join(sigs).encode()).hexdigest()[:10]


def _rep_of(v: ViolationFeature) -> Representation:
    return Representation(v.constraint_id, tuple(sorted(v.sequences)), v.F)


def _raw_distance(a, b, cfg: MatchConfig) -> float:
    finite = all(math.isfinite(x) for x in (*a, *b))
    return interval_distance(a, b, (-math.inf, math.inf) if finite else cfg.clamp)


def modify_degree_function(
    rep: Representation,
    observed: tuple[float, float],
    k: int,
    cfg: MatchConfig = DEFAULT_CONFIG,
    event_id: str = "",
) -> Representation | ManualReview:
    """Running average of a quantitative degree over ``k`` prior updates.

    Disjoint observations are sent back for manual review instead.
    """
    if not isinstance(rep.F_r, tuple) or not isinstance(observed, tuple):
        raise KindMismatch(f"{rep.constraint_id}: degree averaging needs quantitative degrees")
    if k < 1:
        raise ValueError("k counts prior updates and must be >= 1")
    (d1, u1), (d, u) = rep.F_r, observed
    if _raw_distance(rep.F_r, observed, cfg) >= 1.0:
        return ManualReview(event_id, rep, observed, "observed degree disjoint from the stored one")
    return replace(rep, F_r=((k * d1 + d) / (k + 1), (k * u1 + u) / (k + 1)))


@dataclass
class UpdateConfig:
    w0: float = W0
    auto_accept: bool = True
    strict_flags: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.w0 < 1.0:
            raise ValueError("w0 must lie in (0, 1)")


def explanation_update(
    ks: KnowledgeSet,
    features: Sequence[ViolationFeature],
    uncovered: Iterable[str],
    cfg: MatchConfig = DEFAULT_CONFIG,
    ucfg: UpdateConfig | None = None,
    catalog: ConstraintCatalog | None = None,
    cover_map: CoverMap | None = None,
) -> tuple[KnowledgeSet, list[UpdateProposal]]:
    """Attach uncovered features to related explained events or new events.

    Returns the (possibly unchanged) knowledge set and the proposals; with
    ``auto_accept`` all proposals are accepted and committed.
    """
    ucfg = ucfg or UpdateConfig()
    by_fid = {v.fid: v for v in features}
    graph = build_relevance_graph(features, catalog)
    cm = cover_map or build_cover_map(features, ks, cfg)
    cover_ae: dict[str, set[str]] = {f: set(es) for f, es in cm.cover_ae.items()}
    flags = {f: False for f in by_fid}
    pending = [f for f in sorted(set(uncovered)) if f in by_fid]
    remaining = set(pending)

    proposals: list[UpdateProposal] = []
    for seed in pending:
        if seed not in remaining or flags[seed]:
            continue
        candr, upset = find_up(seed, graph, cover_ae, flags, ucfg.strict_flags)
        if not candr:
            continue
        cfeat = [by_fid[f] for f in sorted(candr, key=lambda f: (f != seed, f))]
        if not upset:
            reps = _dedupe([_rep_of(v) for v in cfeat])
            eid = new_event_id(cfeat)
            if eid not in ks:
                proposals.append(UpdateProposal("create", eid, reps, sorted(candr), ucfg.w0, label=f"unknown event {eid}"))
            upset = {eid}
        else:
            for eid in sorted(upset):
                proposals.extend(_extend_event(ks[eid], cfeat, candr, cfg, ucfg))
        for f in candr:
            cover_ae[f] = set(upset)
        remaining -= candr

    if ucfg.auto_accept:
        for p in proposals:
            if p.action != "review":
                p.status = ACCEPTED
        ks = apply_proposals(ks, proposals)
    return ks, proposals


def _dedupe(reps: list[Representation]) -> list[Representation]:
    seen: set = set()
    out = []
    for r in reps:
        if r.signature not in seen:
            seen.add(r.signature)
            out.append(r)
    return out


def _extend_event(
    e: Explanation,
    cfeat: list[ViolationFeature],
    candr: set[str],
    cfg: MatchConfig,
    ucfg: UpdateConfig,
) -> list[UpdateProposal]:
    exact_sigs = {r.signature for r in e.exact}
    possible = {p.rep.signature: p for p in e.possible}
    fresh, out = [], []
    for v in cfeat:
        r = _rep_of(v)
        if r.signature in exact_sigs:
            out.append(UpdateProposal("review", e.event_id, [r], [v.fid], ucfg.w0, label="conflicts with an exact representation"))
        elif r.signature in possible:
            old = possible[r.signature]
            if not isinstance(r.F_r, tuple) or not isinstance(old.rep.F_r, tuple):
                continue  # qualitative: nothing to average
            m = modify_degree_function(old.rep, r.F_r, max(old.k, 1), cfg, e.event_id)
            if isinstance(m, ManualReview):
                out.append(UpdateProposal("review", e.event_id, [r], [v.fid], ucfg.w0, label=m.reason))
            elif m != old.rep:
                out.append(UpdateProposal("modify", e.event_id, [m], [v.fid], ucfg.w0))
        else:
            fresh.append(r)
    fresh = _dedupe(fresh)
    if fresh:
        out.insert(0, UpdateProposal("insert", e.event_id, fresh, sorted(candr), ucfg.w0))
    return out


def apply_proposals(ks: KnowledgeSet, proposals: Iterable[UpdateProposal]) -> KnowledgeSet:
    """Commit accepted proposals; the version moves only if something changed."""
    events: dict[str, Explanation] = {}

    def current(eid: str) -> Explanation:
        return events.get(eid) or ks[eid]

    for p in proposals:
        if p.status != ACCEPTED or p.action == "review":
            continue
        if p.action == "create":
            if p.target in ks or p.target in events:
                continue
            exact, *rest = p.new_reps
            events[p.target] = Explanation(p.target, p.label or p.target, (exact,), tuple(PossibleRep(r, p.w0) for r in rest))
        elif p.action == "insert":
            e = current(p.target)
            have = e.signatures()
            add = tuple(PossibleRep(r, p.w0) for r in p.new_reps if r.signature not in have)
            if add:
                events[p.target] = replace(e, possible=e.possible + add)
        elif p.action == "modify":
            e = current(p.target)
            (r,) = p.new_reps
            poss = tuple(
                replace(q, rep=r, k=q.k + 1) if q.rep.signature == r.signature else q for q in e.possible
            )
            if poss != e.possible:
                events[p.target] = replace(e, possible=poss)
        else:
            raise KnowledgeError(f"unknown proposal action {p.action!r}")
    if not events:
        return ks
    return ks.with_events(events.values(), bump=True)


def save_proposals(proposals: Sequence[UpdateProposal], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([p.to_dict() for p in proposals], fh, indent=1)


def load_proposals(path) -> list[UpdateProposal]:
    with open(path, encoding="utf-8") as fh:
        return [UpdateProposal.from_dict(d) for d in json.load(fh)]


# -- weights -------------------------------------------------------------------------------------


def count_solution(ks: KnowledgeSet, solution: Solution, cover_map: CoverMap) -> KnowledgeSet:
    """Bump appearance counters for the events in ``solution``.

    Each chosen event's ``n_pos`` grows by one, and so does that of every
    possible representation matched by a consistent feature in this run.
    """
    events = []
    for eid in dict.fromkeys(solution.event_ids):
        e = ks[eid]
        rows = {m.rep.signature: m for m in cover_map.matches.get(eid, ()) if not m.exact}
        poss = tuple(
            replace(p, n_pos=p.n_pos + 1) if rows.get(p.rep.signature) and rows[p.rep.signature].consistent else p
            for p in e.possible
        )
        events.append(replace(e, possible=poss, n_pos=e.n_pos + 1))
    return ks.with_events(events, bump=False) if events else ks


def estimate_weight(n_pos_rep: int, n_pos_event: int, current: float, eps: float = EPS) -> float:
    if n_pos_event <= 0:
        return current
    return min(max(n_pos_rep / n_pos_event, eps), 1.0 - eps)


def reestimate_weights(ks: KnowledgeSet, history: Iterable[tuple[Solution, CoverMap]] = ()) -> KnowledgeSet:
    """Conditional-frequency weights from the appearance counters.

    ``history`` is counted first (see :func:`count_solution`).
    """
    for sol, cm in history:
        ks = count_solution(ks, sol, cm)
    events = []
    for e in ks.events():
        poss = tuple(replace(p, w=estimate_weight(p.n_pos, e.n_pos, p.w)) for p in e.possible)
        if poss != e.possible:
            events.append(replace(e, possible=poss))
    return ks.with_events(events, bump=True) if events else ks
