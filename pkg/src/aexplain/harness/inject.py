"""Labeled anomaly injection driven by knowledge representations.

Each representation is produced by rewriting its sequences inside the
event interval so that the constraint's violation metric sweeps a band
inside ``F_r``.  By default the band is centred on the middle of ``F_r``
(``magnitude`` 0.5) and spans 60% of it; ``magnitude`` 0.9 pushes it
towards the upper bound.  A representation that is already violated in
the interval (a side effect of an earlier one) is left alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..constraints import (
    Constraint,
    ConstraintCatalog,
    Mechanism,
    Similarity,
    Speed,
    ValueDomain,
    Variance,
    evaluate_constraint,
)
from ..errors import UnknownEvent
from ..knowledge import KnowledgeSet, Representation
from ..matching import interval_distance
from ..series import SeriesBundle

WINDOW = 30
DEFAULT_LENGTH = 180
BAND = 0.6  # injected band width as a share of F_r
QUALITATIVE_BAND = (0.5, 1.5)


def _scale(v: float) -> float:
    return abs(v) if v != 0 else 1.0


def target_band(rep: Representation, c: Constraint, magnitude: float) -> tuple[float, float] | None:
    if not isinstance(rep.F_r, tuple):
        return QUALITATIVE_BAND
    lo_m, hi_m = c.metric_domain
    d, u = max(rep.F_r[0], lo_m), min(rep.F_r[1], hi_m)
    d = max(d, 1e-3 * max(u, 1e-3))  # violation needs a positive metric
    if u <= d:
        return None if u <= 0 else (u, u)
    w = u - d
    centre = d + magnitude * w
    half = BAND * w / 2
    return max(d, centre - half), min(u, centre + half)


# -- per-check rewriters (in place on a (T, M) matrix) -------------------------------


def _value_domain(x: np.ndarray, chk: ValueDomain, m: np.ndarray, upper: bool) -> None:
    x[:] = chk.hi + _scale(chk.hi) * m if upper else chk.lo - _scale(chk.lo) * m


def _speed(x: np.ndarray, prev: float, dt: np.ndarray, chk: Speed, m: np.ndarray) -> None:
    orig = x.copy()
    cur = prev
    for i in range(x.size):
        step = (chk.max_rate + m[i] * _scale(chk.max_rate)) * dt[i]
        cur = cur + step if cur < orig[i] else cur - step
        x[i] = cur


def _windows(n: int, W: int) -> list[slice]:
    return [slice(k, k + W) for k in range(0, n - W + 1, W)]


def _variance(x: np.ndarray, chk: Variance, m: np.ndarray) -> None:
    for j, w in enumerate(_windows(x.size, chk.window_len)):
        seg = x[w]
        mu, v = seg.mean(), seg.var()
        target = chk.max_var + m[j] * _scale(chk.max_var)
        if v <= 1e-12:
            alt = np.where(np.arange(seg.size) % 2 == 0, 1.0, -1.0)
            x[w] = mu + np.sqrt(target / alt.var()) * (alt - alt.mean())
        else:
            x[w] = mu + np.sqrt(target / v) * (seg - mu)


def _mechanism(X: np.ndarray, chk: Mechanism, m: np.ndarray) -> None:
    a = np.asarray(chk.coeffs)
    res = X @ a + chk.offset
    sign = np.where(res >= 0, 1.0, -1.0)
    target = sign * (chk.tol + m * _scale(chk.tol))
    X += np.outer(target - res, a / (a @ a))


def _similarity(X: np.ndarray, chk: Similarity, m: np.ndarray, rng: np.random.Generator) -> None:
    for j, w in enumerate(_windows(X.shape[0], chk.window_len)):
        rho = float(np.clip(chk.min_corr - m[j] * (1.0 + abs(chk.min_corr)), -1.0, 1.0))
        a, b = X[w, 0], X[w, 1]
        da, db = a - a.mean(), b - b.mean()
        na, nb = np.linalg.norm(da), np.linalg.norm(db)
        if na <= 1e-12:
            continue
        za = da / na
        u = db - (db @ za) * za
        if np.linalg.norm(u) <= 1e-9 * max(nb, 1.0):
            u = rng.standard_normal(za.size)
            u -= u.mean()
            u -= (u @ za) * za
        u /= np.linalg.norm(u)
        scale = nb if nb > 1e-12 else na
        X[w, 1] = b.mean() + scale * (rho * za + np.sqrt(1.0 - rho * rho) * u)


def rewrite(
    mat: np.ndarray,
    axis: np.ndarray,
    cols: list[int],
    c: Constraint,
    r0: int,
    r1: int,
    band: tuple[float, float],
    rng: np.random.Generator,
) -> None:
    """Rewrite rows ``r0..r1`` of ``cols`` so ``c`` is violated within ``band``."""
    chk = c.check
    rows = slice(r0, r1 + 1)
    n = r1 - r0 + 1
    if isinstance(chk, (Variance, Similarity)):
        nw = max(1, n // chk.window_len)
        m = np.linspace(band[0], band[1], nw)
    else:
        m = np.linspace(band[0], band[1], n)
        m = rng.permutation(m) if isinstance(chk, Speed) else m
    if isinstance(chk, ValueDomain):
        x = mat[rows, cols[0]]
        _value_domain(x, chk, m, bool(rng.random() < 0.5))
        mat[rows, cols[0]] = x
    elif isinstance(chk, Speed):
        x = mat[rows, cols[0]].copy()
        prev = mat[r0 - 1, cols[0]] if r0 > 0 else x[0]
        t = axis[max(r0 - 1, 0) : r1 + 1].astype(float) / 1000.0
        dt = np.diff(t) if r0 > 0 else np.concatenate([[np.diff(t)[0] if t.size > 1 else 1.0], np.diff(t)])
        _speed(x, prev, dt, chk, m)
        mat[rows, cols[0]] = x
    elif isinstance(chk, Variance):
        x = mat[rows, cols[0]].copy()
        _variance(x, chk, m)
        mat[rows, cols[0]] = x
    elif isinstance(chk, Mechanism):
        X = mat[rows][:, cols].copy()
        _mechanism(X, chk, m)
        mat[rows, cols] = X
    else:
        X = mat[rows][:, cols].copy()
        _similarity(X, chk, m, rng)
        mat[rows, cols] = X


def local_distance(
    mat: np.ndarray,
    axis: np.ndarray,
    cols: list[int],
    c: Constraint,
    rep: Representation,
    r0: int,
    r1: int,
) -> float:
    """Distance between ``rep`` and what ``c`` shows on rows ``r0..r1`` (1 if silent)."""
    sub = SeriesBundle.from_matrix(axis[r0 : r1 + 1], mat[r0 : r1 + 1][:, cols], c.domain)
    v = evaluate_constraint(c, sub)
    if v is None:
        return 1.0
    if isinstance(rep.F_r, tuple) and isinstance(v.F, tuple):
        return interval_distance(v.F, rep.F_r, c.metric_domain)
    return float(abs(rep.F_r - v.F)) if not isinstance(v.F, tuple) else 1.0


def inject_reps(
    mat: np.ndarray,
    axis: np.ndarray,
    sensors: Sequence[str],
    catalog: ConstraintCatalog,
    reps: Sequence[Representation],
    r0: int,
    r1: int,
    magnitude: float,
    rng: np.random.Generator,
) -> list[Representation]:
    """Produce each representation on rows ``r0..r1``; returns those rewritten."""
    index = {s: j for j, s in enumerate(sensors)}
    done = []
    for rep in reps:
        c = catalog.get(rep.constraint_id)
        if c is None or any(s not in index for s in c.domain):
            continue
        cols = [index[s] for s in c.domain]
        if local_distance(mat, axis, cols, c, rep, r0, r1) < 1.0:
            continue
        band = target_band(rep, c, magnitude)
        if band is None:
            continue
        rewrite(mat, axis, cols, c, r0, r1, band, rng)
        done.append(rep)
    return done


# -- plans ------------------------------------------------------------------------------------


@dataclass(frozen=True)
class PlannedEvent:
    event_id: str
    interval: tuple[int, int]  # inclusive, ms
    magnitude: float = 0.5

    def __post_init__(self) -> None:
        if not self.magnitude > 0:
            raise ValueError("injection magnitude must be > 0")


@dataclass
class InjectionPlan:
    events: list[PlannedEvent]
    seed: int = 0
    bundle_id: str = ""

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "bundle_id": self.bundle_id,
            "events": [{"event_id": e.event_id, "interval": list(e.interval), "magnitude": e.magnitude} for e in self.events],
        }


def make_plan(
    bundle: SeriesBundle,
    ks: KnowledgeSet,
    n_events: int,
    seed: int,
    *,
    length: int = DEFAULT_LENGTH,
    magnitude: float = 0.5,
    near_boundary: bool = False,
) -> InjectionPlan:
    """``n_events`` distinct events on evenly spaced, window-aligned intervals."""
    rng = np.random.default_rng([seed, 0x91A])
    T = bundle.time_axis.size
    n_events = min(n_events, len(ks))
    if n_events <= 0:
        return InjectionPlan([], seed, bundle.equipment_id)
    slot = T // n_events
    L = min(length, (slot - 2 * WINDOW) // WINDOW * WINDOW)
    if L < WINDOW:
        raise ValueError(f"{T} points cannot hold {n_events} events")
    ids = sorted(ks)
    chosen = [ids[i] for i in rng.choice(len(ids), n_events, replace=False)]
    mag = 0.9 if near_boundary else magnitude
    events = []
    for k, eid in enumerate(chosen):
        lo = -(-(k * slot + WINDOW) // WINDOW) * WINDOW
        hi_start = (k + 1) * slot - WINDOW - L
        starts = np.arange(lo, hi_start + 1, WINDOW)
        s = int(rng.choice(starts)) if starts.size else lo
        events.append(PlannedEvent(eid, (int(bundle.time_axis[s]), int(bundle.time_axis[s + L - 1])), mag))
    return InjectionPlan(events, seed, bundle.equipment_id)


@dataclass
class Label:
    event_id: str
    interval: tuple[int, int]
    magnitude: float
    injected: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"event_id": self.event_id, "interval": list(self.interval), "magnitude": self.magnitude, "injected": self.injected}


def inject_anomalies(
    bundle: SeriesBundle,
    plan: InjectionPlan,
    ks: KnowledgeSet,
    catalog: ConstraintCatalog,
) -> tuple[SeriesBundle, list[Label]]:
    """Dirty copy of ``bundle`` plus one ground-truth label per planned event.

    Exact representations are always produced; possible ones with their
    weight.  The input bundle is not modified.
    """
    for e in plan.events:
        if e.event_id not in ks:
            raise UnknownEvent(f"plan names event {e.event_id!r} which is not in the knowledge set")
    if not plan.events:
        return bundle, []
    rng = np.random.default_rng([plan.seed, 0x1E7])
    mat = bundle.matrix.copy()
    axis = bundle.time_axis
    labels = []
    for pe in plan.events:
        r0 = int(np.searchsorted(axis, pe.interval[0], side="left"))
        r1 = int(np.searchsorted(axis, pe.interval[1], side="right")) - 1
        if r1 < r0:
            raise ValueError(f"event {pe.event_id}: interval {pe.interval} holds no samples")
        e = ks[pe.event_id]
        reps = list(e.exact) + [p.rep for p in e.possible if rng.random() < p.w]
        done = inject_reps(mat, axis, bundle.sensors, catalog, reps, r0, r1, pe.magnitude, rng)
        # a later rewrite can undo an earlier one; give the exact set a second pass
        done += inject_reps(mat, axis, bundle.sensors, catalog, list(e.exact), r0, r1, pe.magnitude, rng)
        labels.append(Label(pe.event_id, pe.interval, pe.magnitude, [r.to_dict() for r in done]))
    return bundle.with_matrix(mat), labels
