"""Experiment grid: detect -> explain (-> update) on injected fixtures.

One *scenario* (seed, #constraints, #points, #events) builds a world,
a clean bundle and its dirty copy once; every method and incomplete
rate is then scored on that same data.  Methods:

    AEC, greedyC, greedynC, MFnC, TopK, AE   explain with the full knowledge
    rRemove                                  AEC with inr% of possible reps deleted
    Update                                   rRemove, one update cycle, AEC again
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..constraints import detect_violations
from ..explainer import BASELINES, SPLIT_METHODS, Problem, explain
from ..knowledge import degrade_knowledge, split_knowledge
from ..matching import DEFAULT_CONFIG, MatchConfig
from ..update import UpdateConfig, explanation_update
from .inject import inject_anomalies, make_plan
from .scoring import precision_recall
from .world import build_world, generate_clean

log = logging.getLogger(__name__)

METHODS = ("AEC",) + BASELINES + ("rRemove", "Update")
DEGRADED = ("rRemove", "Update")
CSV_FIELDS = ("method", "constraints", "points", "ae", "inr", "seed", "precision", "recall", "f1", "ae_time_ms", "up_time_ms")


@dataclass
class Row:
    method: str
    constraints: int
    points: int
    ae: int
    inr: float
    seed: int
    precision: float = float("nan")
    recall: float = float("nan")
    f1: float = float("nan")
    ae_time_ms: float = float("nan")
    up_time_ms: float = 0.0
    status: str = "ok"
    identified: list[str] = field(default_factory=list)
    uncovered: int = 0


@dataclass
class ResultTable:
    rows: list[Row]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_FIELDS)
            for r in self.rows:
                w.writerow([getattr(r, k) for k in CSV_FIELDS])

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"rows": [asdict(r) for r in self.rows], "summary": self.summary()}, fh, indent=1)

    def failed(self) -> list[Row]:
        return [r for r in self.rows if r.status != "ok"]

    def select(self, **kw) -> list[Row]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())]

    def mean(self, metric: str, **kw) -> float:
        vals = [getattr(r, metric) for r in self.select(**kw) if r.status == "ok"]
        return float(np.mean(vals)) if vals else float("nan")

    def summary(self) -> list[dict]:
        """Per-cell mean and standard deviation over seeds."""
        keyf = lambda r: (r.method, r.constraints, r.points, r.ae, r.inr)  # noqa: E731
        out = []
        for key, grp in itertools.groupby(sorted(self.rows, key=keyf), key=keyf):
            ok = [r for r in grp if r.status == "ok"]
            cell = dict(zip(("method", "constraints", "points", "ae", "inr"), key))
            cell["seeds"] = len(ok)
            for m in ("precision", "recall", "f1", "ae_time_ms", "up_time_ms"):
                vals = [getattr(r, m) for r in ok]
                cell[m] = float(np.mean(vals)) if vals else None
                cell[m + "_std"] = float(np.std(vals)) if vals else None
            out.append(cell)
        return out


@dataclass
class Scenario:
    seed: int
    constraints: int = 210
    points: int = 10_800
    ae: int = 20
    sensors: int = 64
    events: int = 60


def _grid_list(grid: dict, key: str, default) -> list:
    v = grid.get(key, default)
    return list(v) if isinstance(v, (list, tuple)) else [v]


def run_scenario(
    sc: Scenario,
    methods: Sequence[str],
    inrs: Sequence[float],
    cfg: MatchConfig = DEFAULT_CONFIG,
    lam: float = 0.4,
    w0: float = 0.5,
) -> list[Row]:
    base = dict(constraints=sc.constraints, points=sc.points, ae=sc.ae, seed=sc.seed)
    try:
        world = build_world(sc.sensors, sc.constraints, sc.events, seed=sc.seed)
        clean = generate_clean(sc.sensors, sc.points, sc.seed, world)
        plan = make_plan(clean, world.knowledge, sc.ae, sc.seed)
        dirty, labels = inject_anomalies(clean, plan, world.knowledge, world.catalog)
    except Exception as exc:  # whole scenario unusable: mark every cell
        msg = f"failed: {type(exc).__name__}: {exc}"
        log.warning("scenario %s %s", sc, msg)
        return [Row(m, inr=(i if m in DEGRADED else 0), status=msg, **base) for m in methods for i in (inrs if m in DEGRADED else [0])]

    actual = [lab.event_id for lab in labels]
    ks = world.knowledge
    n_events = len(ks)
    n_cons = len(world.catalog)
    cache: dict = {}

    def timed_problem(split: bool, knowledge):
        t = time.perf_counter()
        feats = detect_violations(world.catalog, dirty, split=split).features
        prob = Problem.build(feats, knowledge, cfg)
        return prob, feats, (time.perf_counter() - t) * 1000

    def score(method, inr, fn) -> Row:
        try:
            sol, ae_ms, up_ms = fn()
            card = precision_recall(sol.event_ids, actual)
            return Row(method, inr=inr, precision=card.precision, recall=card.recall, f1=card.f1,
                       ae_time_ms=ae_ms, up_time_ms=up_ms, identified=sol.event_ids, uncovered=len(sol.uncovered), **base)
        except Exception as exc:
            log.warning("cell %s inr=%s seed=%s failed: %s", method, inr, sc.seed, exc)
            return Row(method, inr=inr, status=f"failed: {type(exc).__name__}: {exc}", **base)

    def plain(method):
        split = method in SPLIT_METHODS

        def fn():
            key = ("split" if split else "whole")
            if key not in cache:
                cache[key] = timed_problem(split, split_knowledge(ks) if split else ks)
            prob, _, prep_ms = cache[key]
            t = time.perf_counter()
            sol = explain(prob, method, n_events=n_events, n_constraints=n_cons, lam=lam)
            return sol, prep_ms + (time.perf_counter() - t) * 1000, 0.0

        return fn

    def degraded(method, inr):
        def fn():
            ksd = degrade_knowledge(ks, inr, sc.seed)
            t = time.perf_counter()
            prob, feats, _ = timed_problem(False, ksd)
            sol = explain(prob, "AEC")
            ae_ms = (time.perf_counter() - t) * 1000
            if method == "rRemove":
                return sol, ae_ms, 0.0
            t = time.perf_counter()
            uncovered = set(prob.features) - sol.covered
            ksu, _ = explanation_update(ksd, feats, uncovered, cfg, UpdateConfig(w0=w0), world.catalog, prob.cover_map)
            up_ms = (time.perf_counter() - t) * 1000
            t = time.perf_counter()
            sol2 = explain(Problem.build(feats, ksu, cfg), "AEC")
            return sol2, (time.perf_counter() - t) * 1000, up_ms

        return fn

    rows = []
    for m in methods:
        if m in DEGRADED:
            rows.extend(score(m, inr, degraded(m, inr)) for inr in inrs)
        elif m == "AEC" or m in BASELINES:
            rows.append(score(m, 0, plain(m)))
        else:
            rows.append(Row(m, inr=0, status=f"failed: unknown method {m!r}", **base))
    return rows


def run_experiment(
    grid: dict,
    seeds: Iterable[int],
    *,
    cfg: MatchConfig = DEFAULT_CONFIG,
    lam: float = 0.4,
    w0: float = 0.5,
    sensors: int = 64,
    events: int = 60,
    workers: int = 1,
    out_dir=None,
) -> ResultTable:
    """Run every grid cell for every seed.

    ``grid`` maps ``constraints``, ``points``, ``ae``, ``inr`` and
    ``method`` to a value or list of values.  A failing cell is recorded
    with its error and the run continues.
    """
    methods = _grid_list(grid, "method", METHODS)
    inrs = _grid_list(grid, "inr", [15])
    for key in ("constraints", "points", "ae"):
        if any(v <= 0 for v in _grid_list(grid, key, [1])):
            raise ValueError(f"grid values for {key} must be positive")
    scenarios = [
        Scenario(s, c, p, a, sensors, events)
        for c in _grid_list(grid, "constraints", [210])
        for p in _grid_list(grid, "points", [10_800])
        for a in _grid_list(grid, "ae", [20])
        for s in seeds
    ]
    args = [(sc, methods, inrs, cfg, lam, w0) for sc in scenarios]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_star, args))
    else:
        chunks = [run_scenario(*a) for a in args]
    table = ResultTable([r for ch in chunks for r in ch])
    if out_dir is not None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table.to_csv(out / "results.csv")
        table.to_json(out / "results.json")
    return table


def _run_star(a):
    return run_scenario(*a)
