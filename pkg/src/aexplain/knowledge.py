"""Fault-event knowledge: representations, explanations and the knowledge set.

An event's explanation is split into *exact* representations (always
produced by the event) and *possible* ones (produced with probability ``w``).
The exact set is never empty and never overlaps the possible set; two
representations overlap when they describe the same constraint on the same
sequences.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping, Union

import numpy as np

from .constraints import QUALITATIVE, QUANTITATIVE, ConstraintCatalog
from .errors import DanglingConstraint, EmptyExactSet, KnowledgeError, OverlapError

Degree = Union[int, tuple[float, float]]


def _parse_bound(v) -> float:
    if isinstance(v, str):
        return float(v.replace("∞", "inf"))
    return float(v)


def _dump_bound(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


@dataclass(frozen=True)
class Representation:
    """How an event shows up on one constraint over a set of sequences."""

    constraint_id: str
    sequences: tuple[str, ...]
    F_r: Degree

    def __post_init__(self) -> None:
        object.__setattr__(self, "sequences", tuple(self.sequences))
        if isinstance(self.F_r, (tuple, list)):
            d, u = (float(x) for x in self.F_r)
            object.__setattr__(self, "F_r", (d, u))
        else:
            object.__setattr__(self, "F_r", int(self.F_r))

    @property
    def kind(self) -> str:
        return QUANTITATIVE if isinstance(self.F_r, tuple) else QUALITATIVE

    @property
    def signature(self) -> tuple[str, tuple[str, ...]]:
        return self.constraint_id, tuple(sorted(self.sequences))

    @property
    def n_sequences(self) -> int:
        return len(self.sequences)

    def to_dict(self) -> dict:
        F = [_dump_bound(x) for x in self.F_r] if isinstance(self.F_r, tuple) else self.F_r
        return {"constraint_id": self.constraint_id, "sequences": list(self.sequences), "F_r": F}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Representation":
        F = d["F_r"]
        if isinstance(F, (list, tuple)):
            if len(F) != 2:
                raise KnowledgeError(f"F_r interval must have two bounds, got {F!r}")
            F = (_parse_bound(F[0]), _parse_bound(F[1]))
        elif isinstance(F, bool):
            F = int(F)
        return cls(str(d["constraint_id"]), tuple(d["sequences"]), F)


@dataclass(frozen=True)
class PossibleRep:
    """A possible representation with weight ``w``, update count ``k`` and
    ``n_pos``: solutions containing the event in which this representation
    was matched by a consistent feature."""

    rep: Representation
    w: float
    k: int = 1
    n_pos: int = 0

    def to_dict(self) -> dict:
        return {"rep": self.rep.to_dict(), "w": self.w, "k": self.k, "n_pos": self.n_pos}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PossibleRep":
        return cls(Representation.from_dict(d["rep"]), float(d["w"]), int(d.get("k", 1)), int(d.get("n_pos", 0)))


@dataclass(frozen=True)
class Explanation:
    event_id: str
    label: str
    exact: tuple[Representation, ...]
    possible: tuple[PossibleRep, ...] = ()
    n_pos: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "exact", tuple(self.exact))
        object.__setattr__(self, "possible", tuple(self.possible))
        if not self.exact:
            raise EmptyExactSet(f"event {self.event_id!r}: exact explanation is empty")
        seen: set = set()
        for r in self.exact:
            if r.signature in seen:
                raise OverlapError(f"event {self.event_id!r}: {r.signature} listed twice in the exact set")
            seen.add(r.signature)
        for p in self.possible:
            if p.rep.signature in seen:
                raise OverlapError(f"event {self.event_id!r}: {p.rep.signature} is both exact and possible, or repeated")
            seen.add(p.rep.signature)

    @property
    def representations(self) -> list[Representation]:
        return list(self.exact) + [p.rep for p in self.possible]

    def signatures(self) -> set:
        return {r.signature for r in self.representations}

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "label": self.label,
            "exact": [r.to_dict() for r in self.exact],
            "possible": [p.to_dict() for p in self.possible],
            "n_pos": self.n_pos,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Explanation":
        return cls(
            str(d["event_id"]),
            str(d.get("label", d["event_id"])),
            tuple(Representation.from_dict(r) for r in d.get("exact", ())),
            tuple(PossibleRep.from_dict(p) for p in d.get("possible", ())),
            int(d.get("n_pos", 0)),
        )


@dataclass(frozen=True)
class KnowledgeSet(Mapping[str, Explanation]):
    """Immutable snapshot of all event explanations; updates build new snapshots."""

    explanations: Mapping[str, Explanation]
    version: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "explanations", dict(self.explanations))

    @classmethod
    def of(cls, events: Iterable[Explanation], version: int = 1) -> "KnowledgeSet":
        out: dict[str, Explanation] = {}
        for e in events:
            if e.event_id in out:
                raise KnowledgeError(f"duplicate event id {e.event_id!r}")
            out[e.event_id] = e
        return cls(out, version)

    def __getitem__(self, key: str) -> Explanation:
        return self.explanations[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self.explanations)

    def __len__(self) -> int:
        return len(self.explanations)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeSet):
            return NotImplemented
        return self.version == other.version and self.explanations == other.explanations

    __hash__ = None  # type: ignore[assignment]

    def events(self) -> list[Explanation]:
        return list(self.explanations.values())

    def with_events(self, events: Iterable[Explanation], bump: bool = True) -> "KnowledgeSet":
        """New snapshot with ``events`` replacing or adding by id."""
        merged = dict(self.explanations)
        for e in events:
            merged[e.event_id] = e
        return KnowledgeSet(merged, self.version + 1 if bump else self.version)

    @property
    def n_possible(self) -> int:
        return sum(len(e.possible) for e in self.explanations.values())

    def signature_index(self) -> dict:
        """Signature -> list of (event_id, Representation) over the whole set."""
        idx: dict = {}
        for e in self.explanations.values():
            for r in e.representations:
                idx.setdefault(r.signature, []).append((e.event_id, r))
        return idx

    def to_json(self) -> dict:
        return {"version": self.version, "events": [e.to_dict() for e in self.explanations.values()]}


def load_knowledge(source, catalog: ConstraintCatalog | None = None) -> KnowledgeSet:
    """Load a knowledge file (path, JSON text, or parsed dict).

    Raises :class:`EmptyExactSet` / :class:`OverlapError` on invariant
    violations; unknown constraint ids only warn (:class:`DanglingConstraint`).
    """
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source, encoding="utf-8") as fh:
            data = json.load(fh)
    elif isinstance(source, (str, bytes)):
        data = json.loads(source)
    else:
        data = source
    if isinstance(data, list):
        data = {"version": 1, "events": data}
    try:
        events = [Explanation.from_dict(d) for d in data["events"]]
    except KeyError as exc:
        raise KnowledgeError(f"knowledge file missing field {exc}") from None
    ks = KnowledgeSet.of(events, int(data.get("version", 1)))
    if catalog is not None:
        for e in ks.events():
            for r in e.representations:
                if r.constraint_id not in catalog:
                    warnings.warn(f"event {e.event_id!r}: unknown constraint {r.constraint_id!r}", DanglingConstraint, stacklevel=2)
    return ks


def save_knowledge(ks: KnowledgeSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ks.to_json(), fh, indent=1)


@dataclass
class KnowledgeReport:
    defects: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.defects

    def to_dict(self) -> dict:
        return {"ok": self.ok, "defects": self.defects, "warnings": self.warnings}


def validate_knowledge(ks: KnowledgeSet, catalog: ConstraintCatalog | None = None) -> KnowledgeReport:
    """Cross-check a knowledge set against itself and, optionally, a catalog."""
    rep = KnowledgeReport()
    for e in ks.events():
        where = f"event {e.event_id}"
        if e.n_pos < 0:
            rep.defects.append(f"{where}: negative n_pos")
        for p in e.possible:
            if not 0.0 < p.w < 1.0:
                rep.defects.append(f"{where}: weight out of (0,1): {p.w} on {p.rep.constraint_id}")
            if p.k < 0 or p.n_pos < 0:
                rep.defects.append(f"{where}: negative counter on {p.rep.constraint_id}")
            if p.n_pos > e.n_pos:
                rep.warnings.append(f"{where}: n_pos of {p.rep.constraint_id} exceeds the event's n_pos")
        for r in e.representations:
            if isinstance(r.F_r, tuple):
                if math.isnan(r.F_r[0]) or math.isnan(r.F_r[1]) or r.F_r[0] > r.F_r[1]:
                    rep.defects.append(f"{where}: bad interval {r.F_r} on {r.constraint_id}")
            elif r.F_r not in (0, 1):
                rep.defects.append(f"{where}: qualitative degree must be 0 or 1 on {r.constraint_id}")
            if catalog is None:
                continue
            c = catalog.get(r.constraint_id)
            if c is None:
                rep.defects.append(f"{where}: dangling constraint {r.constraint_id}")
                continue
            if c.kind != r.kind:
                rep.defects.append(f"{where}: {r.constraint_id} is {c.kind} but representation is {r.kind}")
            if not set(r.sequences) <= set(c.domain) or not r.sequences:
                rep.defects.append(f"{where}: sequences {list(r.sequences)} outside domain of {r.constraint_id}")
            elif len(r.sequences) not in (1, len(c.domain)):
                rep.defects.append(f"{where}: {r.constraint_id} must be described on its whole domain or one sequence")
    return rep


def degrade_knowledge(ks: KnowledgeSet, inr_percent: float, rng_seed: int) -> KnowledgeSet:
    """Delete ``ceil(inr% * total)`` possible representations, chosen uniformly.

    Removal sets are nested in ``inr_percent`` for a fixed seed (the seed fixes
    a permutation and larger rates take a longer prefix).  Exact sets are
    never touched.
    """
    if not 0 <= inr_percent <= 100:
        raise ValueError("inr_percent must lie in [0, 100]")
    slots = [(e.event_id, i) for e in ks.events() for i in range(len(e.possible))]
    n_remove = math.ceil(inr_percent * len(slots) / 100.0 - 1e-9)
    if n_remove <= 0:
        return ks
    order = np.random.default_rng(rng_seed).permutation(len(slots))
    doomed = {slots[i] for i in order[:n_remove]}
    events = []
    for e in ks.events():
        keep = tuple(p for i, p in enumerate(e.possible) if (e.event_id, i) not in doomed)
        events.append(replace(e, possible=keep) if len(keep) != len(e.possible) else e)
    return KnowledgeSet.of(events, ks.version)


def split_knowledge(ks: KnowledgeSet) -> KnowledgeSet:
    """Rewrite every multi-sequence representation as one per sequence.

    Counterpart of feature-splitting detection, used by greedynC and MFnC.
    """

    def split(r: Representation) -> list[Representation]:
        if len(r.sequences) == 1:
            return [r]
        return [Representation(r.constraint_id, (s,), r.F_r) for s in r.sequences]

    events = []
    for e in ks.events():
        exact = [s for r in e.exact for s in split(r)]
        possible = [replace(p, rep=s) for p in e.possible for s in split(p.rep)]
        events.append(Explanation(e.event_id, e.label, tuple(exact), tuple(possible), e.n_pos))
    return KnowledgeSet.of(events, ks.version)
