"""Synthetic plant, constraint catalog and fault knowledge.

Sensors come in groups of four driven by two latent factors each
(reflected random walks in [-1, 1]):

    s0 = b0 + k0*f0            s1 = b1 + k1*f1
    s2 = b2 + ka*f0 + kb*f1    s3 = b3 + k3*f0          (+ uniform noise)

so every group carries exact linear couplings (mechanisms) and one
strongly correlated twin pair (s0, s3).  Thresholds are set from the
model with margins, or from a long reference run where no closed form is
useful (window variance, window correlation).

Fault events are drawn as one or two *core* violations in a group (a
second group for compound events) plus optional possible ones.  Their
knowledge is learned by injecting them into short clean stretches many
times and recording everything the detector reports.  Cores that show up
reliably become exact representations; every other feature seen often
enough becomes a possible one, weighted by how often it appeared.  A
second round replays the learned knowledge the same way the benchmark
injects it, so the degree hulls match what evaluation will produce.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..constraints import (
    QUALITATIVE,
    QUANTITATIVE,
    Constraint,
    ConstraintCatalog,
    Mechanism,
    Similarity,
    Speed,
    ValueDomain,
    Variance,
    ViolationFeature,
    detect_violations,
)
from ..errors import GenerationFailure
from ..knowledge import Explanation, KnowledgeSet, PossibleRep, Representation
from ..matching import interval_distance
from ..series import SeriesBundle
from . import inject as inj

log = logging.getLogger(__name__)

GROUP = 4
WINDOW = inj.WINDOW
SAMPLING_MS = 60_000
T0_MS = 1_600_000_000_000
STEP = 0.02  # latent walk increment bound per sample
MECH_SLACK = 0.05

# share of the pool per constraint family, used when selecting a catalog
FAMILY_OF = {ValueDomain: "vd", Speed: "sp", Variance: "va", Mechanism: "me", Similarity: "si"}


@dataclass
class PlantGroup:
    sensors: tuple[str, ...]
    base: np.ndarray
    load: np.ndarray  # (m, 2)
    noise: np.ndarray  # half-width of uniform measurement noise


@dataclass
class PlantModel:
    groups: list[PlantGroup]
    step: float = STEP
    sampling_ms: int = SAMPLING_MS

    @property
    def sensors(self) -> tuple[str, ...]:
        return tuple(s for g in self.groups for s in g.sensors)

    def group_of(self, sensor: str) -> int:
        for i, g in enumerate(self.groups):
            if sensor in g.sensors:
                return i
        raise KeyError(sensor)

    def simulate(self, n_points: int, rng: np.random.Generator, groups: list[int] | None = None) -> np.ndarray:
        idx = range(len(self.groups)) if groups is None else groups
        cols = []
        for gi in idx:
            g = self.groups[gi]
            walk = rng.uniform(-1, 1, 2) + np.cumsum(rng.uniform(-self.step, self.step, (n_points, 2)), axis=0)
            z = np.mod(walk + 1.0, 4.0)
            f = np.where(z <= 2.0, z - 1.0, 3.0 - z)  # fold = reflect at +-1
            x = g.base + f @ g.load.T + rng.uniform(-1, 1, (n_points, len(g.sensors))) * g.noise
            cols.append(x)
        return np.hstack(cols) if cols else np.empty((n_points, 0))

    def time_axis(self, n_points: int) -> np.ndarray:
        return T0_MS + np.arange(n_points, dtype=np.int64) * self.sampling_ms


def build_plant(n_sensors: int, rng: np.random.Generator) -> PlantModel:
    groups = []
    for g0 in range(0, n_sensors, GROUP):
        m = min(GROUP, n_sensors - g0)
        names = tuple(f"s{i:02d}" for i in range(g0, g0 + m))
        k = rng.uniform(5.0, 15.0, (GROUP, 2))
        load = np.array([[k[0, 0], 0.0], [0.0, k[1, 1]], [k[2, 0], k[2, 1]], [k[3, 0], 0.0]])[:m]
        base = rng.uniform(40.0, 80.0, m)
        groups.append(PlantGroup(names, base, load, 0.002 * base))
    return PlantModel(groups)


# -- catalog ------------------------------------------------------------------------------


def _null_vector(load: np.ndarray) -> np.ndarray:
    _, _, vt = np.linalg.svd(load.T)
    a = vt[-1]
    a = a / a[np.argmax(np.abs(a))]
    a[np.abs(a) < 1e-12] = 0.0
    return a


def constraint_pool(plant: PlantModel, rng: np.random.Generator, ref_points: int = 20_000) -> list[Constraint]:
    """Every constraint the plant supports, thresholds set with margins."""
    ref = plant.simulate(ref_points, rng)
    dt = plant.sampling_ms / 1000.0
    out: list[Constraint] = []
    col = 0
    for gi, g in enumerate(plant.groups):
        m = len(g.sensors)
        block = ref[:, col : col + m]
        col += m
        amp = np.abs(g.load).sum(axis=1)
        nw = ref_points // WINDOW
        for j, s in enumerate(g.sensors):
            pad = g.noise[j] + 0.02 * amp[j]
            out.append(Constraint(f"vd.{s}", "T1", QUANTITATIVE, (s,), ValueDomain(float(g.base[j] - amp[j] - pad), float(g.base[j] + amp[j] + pad))))
            vmax = amp[j] * plant.step + 2 * g.noise[j]
            out.append(Constraint(f"sp.{s}", "T3", QUANTITATIVE, (s,), Speed(float(2.0 * vmax / dt))))
            wv = block[: nw * WINDOW, j].reshape(nw, WINDOW).var(axis=1).max()
            out.append(Constraint(f"va.{s}", "T3", QUANTITATIVE, (s,), Variance(WINDOW, float(2.0 * wv)), window=WINDOW))
        if m < GROUP:
            continue
        tag = f"g{gi:02d}"
        for name, idx in (("a", [0, 1, 2]), ("b", [1, 2, 3]), ("c", [0, 3])):
            a = _null_vector(g.load[idx])
            offset = -float(a @ g.base[idx])
            # noise bound plus a modelling slack proportional to the signal range
            tol = 1.5 * float(np.abs(a) @ g.noise[idx]) + MECH_SLACK * float(np.abs(a) @ amp[idx])
            dom = tuple(g.sensors[i] for i in idx)
            out.append(Constraint(f"me.{tag}{name}", "T2", QUANTITATIVE, dom, Mechanism(tuple(float(v) for v in a), offset, tol)))
        pair = block[: nw * WINDOW, [0, 3]]
        a_ = pair[:, 0].reshape(nw, WINDOW)
        b_ = pair[:, 1].reshape(nw, WINDOW)
        a_ = a_ - a_.mean(axis=1, keepdims=True)
        b_ = b_ - b_.mean(axis=1, keepdims=True)
        corr = (a_ * b_).sum(axis=1) / np.sqrt((a_ * a_).sum(axis=1) * (b_ * b_).sum(axis=1))
        # margin below the weakest reference window, never a fixed floor
        min_corr = float(np.clip(np.nanmin(corr) - 0.2, -0.9, 0.8))
        out.append(Constraint(f"si.{tag}", "T4", QUALITATIVE, (g.sensors[0], g.sensors[3]), Similarity(WINDOW, round(min_corr, 3)), window=WINDOW))
    return out


def select_constraints(pool: list[Constraint], n: int, rng: np.random.Generator) -> list[Constraint]:
    """``n`` constraints keeping each family's share of the pool."""
    if n >= len(pool):
        return list(pool)
    fams: dict[str, list[Constraint]] = {}
    for c in pool:
        fams.setdefault(FAMILY_OF[type(c.check)], []).append(c)
    names = sorted(fams)
    quota = np.array([len(fams[f]) * n / len(pool) for f in names])
    take = np.floor(quota).astype(int)
    for i in np.argsort(-(quota - take), kind="stable")[: n - take.sum()]:
        take[i] += 1
    chosen = []
    for f, k in zip(names, take):
        idx = rng.choice(len(fams[f]), size=int(k), replace=False)
        chosen.extend(fams[f][i] for i in sorted(idx))
    return sorted(chosen, key=lambda c: c.id)


# -- events ---------------------------------------------------------------------------------

# initial metric bands for core violations, per family: (start range, width range)
CORE_BANDS = {
    "vd": ((0.01, 0.04), (0.03, 0.10)),
    "sp": ((0.5, 2.0), (1.0, 3.0)),
    "va": ((2.0, 6.0), (4.0, 12.0)),
    "me": ((2.0, 4.0), (2.0, 4.0)),
}
CORE_WEIGHTS = {"vd": 0.3, "sp": 0.2, "va": 0.2, "me": 0.2, "si": 0.1}


@dataclass
class EventRecipe:
    event_id: str
    label: str
    core: list[Representation]
    possible: list[tuple[Representation, float]] = field(default_factory=list)

    @property
    def sensors(self) -> set[str]:
        return {s for r in self.core for s in r.sequences} | {s for r, _ in self.possible for s in r.sequences}


def _core_rep(c: Constraint, rng: np.random.Generator) -> Representation:
    fam = FAMILY_OF[type(c.check)]
    if c.kind == QUALITATIVE:
        return Representation(c.id, c.domain, 1)
    (d0, d1), (w0, w1) = CORE_BANDS[fam]
    d = float(rng.uniform(d0, d1))
    return Representation(c.id, c.domain, (d, d + float(rng.uniform(w0, w1))))


def _pick(
    by_group: dict[int, list[Constraint]],
    g: int,
    rng: np.random.Generator,
    exclude: set[str],
    taken: set[str] = frozenset(),
) -> Constraint | None:
    """Weighted draw from group ``g``, avoiding cores other events already own."""
    cands = [c for c in by_group.get(g, []) if c.id not in exclude]
    fresh = [c for c in cands if c.id not in taken]
    cands = fresh or cands
    if not cands:
        return None
    w = np.array([CORE_WEIGHTS[FAMILY_OF[type(c.check)]] for c in cands])
    return cands[int(rng.choice(len(cands), p=w / w.sum()))]


def draw_recipes(plant: PlantModel, catalog: ConstraintCatalog, n_events: int, rng: np.random.Generator) -> list[EventRecipe]:
    by_group: dict[int, list[Constraint]] = {}
    for c in catalog.constraints():
        by_group.setdefault(plant.group_of(c.domain[0]), []).append(c)
    groups = sorted(by_group)
    if not groups:
        return []
    order = list(rng.permutation(groups))
    recipes = []
    taken: set[str] = set()
    for i in range(n_events):
        g = int(order[i % len(order)])
        used: set[str] = set()
        core = []
        n_core = 1 if rng.random() < 0.6 else 2
        for j in range(n_core):
            gg = g
            if j == 1 and len(groups) > 1 and rng.random() < 0.25:
                gg = int(rng.choice([x for x in groups if x != g]))
            c = _pick(by_group, gg, rng, used, taken)
            if c is not None:
                used.add(c.id)
                taken.add(c.id)
                core.append(_core_rep(c, rng))
        possible = []
        for _ in range(int(rng.integers(0, 3))):
            c = _pick(by_group, g, rng, used)
            if c is not None:
                used.add(c.id)
                possible.append((_core_rep(c, rng), float(rng.uniform(0.3, 0.8))))
        eid = f"E{i + 1:02d}"
        label = "fault " + eid + ": " + ", ".join(f"{r.constraint_id}" for r in core)
        recipes.append(EventRecipe(eid, label, core, possible))
    return recipes


def _degree_hull(degs: list, widen: float = 0.05):
    if isinstance(degs[0], int):
        return 1
    d = min(x[0] for x in degs)
    u = max(x[1] for x in degs)
    pad = widen * (u - d)
    return (d - pad, u + pad)


def calibrate(
    recipe: EventRecipe,
    plant: PlantModel,
    catalog: ConstraintCatalog,
    rng: np.random.Generator,
    trials: int = 12,
    length: int = inj.DEFAULT_LENGTH,
    exact_freq: float = 0.9,
    min_freq: float = 0.05,
    rounds: int = 2,
) -> Explanation:
    """Learn an event's representations by injecting it repeatedly.

    The first round injects the recipe's cores; later rounds replay the
    knowledge learned so far the way a labeled injection would, so side
    effects of injected side effects end up in the knowledge too.
    """
    groups = sorted({plant.group_of(s) for s in recipe.sensors})
    sensors = tuple(s for gi in groups for s in plant.groups[gi].sensors)
    sub = ConstraintCatalog(c for c in catalog.constraints() if set(c.domain) <= set(sensors))
    pad = 2 * WINDOW
    n = pad + length + pad
    axis = plant.time_axis(n)
    r0, r1 = pad, pad + length - 1
    core_sigs = [r.signature for r in recipe.core]
    event = None
    for _round in range(rounds):
        seen: dict = {}
        for _ in range(trials):
            for _attempt in range(20):
                clean = SeriesBundle.from_matrix(axis, plant.simulate(n, rng, groups), sensors)
                if not len(detect_violations(sub, clean)):
                    break
            mat = clean.matrix.copy()
            if event is None:
                mag = float(rng.uniform(0.3, 0.7))
                reps = list(recipe.core) + [r for r, w in recipe.possible if rng.random() < w]
                inj.inject_reps(mat, axis, sensors, sub, reps, r0, r1, mag, rng)
            else:
                reps = list(event.exact) + [p.rep for p in event.possible if rng.random() < p.w]
                inj.inject_reps(mat, axis, sensors, sub, reps, r0, r1, 0.5, rng)
                inj.inject_reps(mat, axis, sensors, sub, list(event.exact), r0, r1, 0.5, rng)
            for v in detect_violations(sub, clean.with_matrix(mat)):
                seen.setdefault(v.signature, []).append(v)
        event = _learn(recipe, seen, core_sigs, trials, exact_freq, min_freq)
    return event


def _learn(recipe, seen, core_sigs, trials, exact_freq, min_freq) -> Explanation:
    exact, possible = [], []
    for sig in core_sigs + sorted(set(seen) - set(core_sigs)):
        feats = seen.get(sig, [])
        if not feats:
            continue
        F = _degree_hull([v.F for v in feats])
        rep = Representation(sig[0], sig[1], F)
        hits = sum(1 for v in feats if _dist(v, F) < 1.0)
        freq = hits / trials
        if freq >= exact_freq and sig in core_sigs:
            exact.append(rep)
        elif freq >= min_freq:
            possible.append(PossibleRep(rep, float(np.clip(freq, 0.05, 0.95))))
    if not exact:
        # keep the event usable: its most frequent feature becomes exact
        if not possible:
            raise GenerationFailure(f"event {recipe.event_id}: injection produced no violation")
        best = max(possible, key=lambda p: (p.w, p.rep.constraint_id))
        possible.remove(best)
        exact.append(best.rep)
    return Explanation(recipe.event_id, recipe.label, tuple(exact), tuple(possible))


def _dist(v: ViolationFeature, F) -> float:
    if isinstance(F, int):
        return float(abs(F - v.F))
    return interval_distance(v.F, F)


# -- world --------------------------------------------------------------------------------------


@dataclass
class World:
    plant: PlantModel
    catalog: ConstraintCatalog
    knowledge: KnowledgeSet
    recipes: list[EventRecipe]
    seed: int

    @property
    def sensors(self) -> tuple[str, ...]:
        return self.plant.sensors


def build_world(
    n_sensors: int = 64,
    n_constraints: int = 210,
    n_events: int = 60,
    seed: int = 0,
    trials: int = 12,
) -> World:
    """Plant, catalog of ``n_constraints`` and ``n_events`` calibrated events."""
    if n_sensors < 1:
        raise ValueError("need at least one sensor")
    rng = np.random.default_rng([seed, 0xA11])
    plant = build_plant(n_sensors, rng)
    pool = constraint_pool(plant, rng)
    catalog = ConstraintCatalog(select_constraints(pool, n_constraints, rng))
    recipes = draw_recipes(plant, catalog, n_events, rng)
    events = [calibrate(r, plant, catalog, rng, trials) for r in recipes]
    return World(plant, catalog, KnowledgeSet.of(events), recipes, seed)


def generate_clean(
    n_sensors: int,
    n_points: int,
    seed: int,
    world: World | None = None,
    max_tries: int = 25,
) -> SeriesBundle:
    """Constraint-satisfying bundle; resampled until the detector finds nothing."""
    if n_points < 1:
        raise ValueError("need at least one point")
    world = world or build_world(n_sensors, n_constraints=10**9, n_events=0, seed=seed)
    if len(world.sensors) != n_sensors:
        raise ValueError(f"world has {len(world.sensors)} sensors, asked for {n_sensors}")
    rng = np.random.default_rng([seed, 0xC1EA])
    axis = world.plant.time_axis(n_points)
    for attempt in range(max_tries):
        b = SeriesBundle.from_matrix(axis, world.plant.simulate(n_points, rng), world.sensors, f"plant-{world.seed}")
        rep = detect_violations(world.catalog, b)
        if not len(rep):
            return b
        log.debug("clean attempt %d rejected: %d violations", attempt, len(rep))
    raise GenerationFailure(f"no clean bundle after {max_tries} attempts")
