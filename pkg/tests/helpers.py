"""Instance generators shared by the explainer and acceptance tests."""

from fractions import Fraction

import numpy as np

from aexplain.constraints import ViolationFeature
from aexplain.explainer import Candidate

SENSORS = ("a", "b", "c", "d")


def feature(fid: str, K: int = 1) -> ViolationFeature:
    return ViolationFeature(fid, SENSORS[:K], (0.1, 0.2), (0, 1), K)


def random_instance(rng: np.random.Generator, max_candidates: int = 12, max_features: int = 15, multi: bool = True):
    """Random feasible covering instance: (candidates, vstar, features).

    Every feature gets at least one coverer; further cover entries are
    sprinkled with probability 1/4.  Costs are drawn from [0, 3].
    """
    nf = int(rng.integers(1, max_features + 1))
    ng = int(rng.integers(1, max_candidates + 1))
    fids = [f"f{i:02d}" for i in range(nf)]
    covers = [set() for _ in range(ng)]
    for f in fids:
        covers[int(rng.integers(ng))].add(f)
    for c in covers:
        c.update(f for f in fids if rng.random() < 0.25)
    cands = [Candidate(f"E{i:02d}", frozenset(c), float(np.round(rng.uniform(0.0, 3.0), 3))) for i, c in enumerate(covers)]
    feats = {f: feature(f, int(rng.choice([1, 1, 2, 3, 4])) if multi else 1) for f in fids}
    return cands, frozenset(fids), feats


def harmonic(n: int) -> float:
    return sum(1.0 / i for i in range(1, n + 1))


def jaccard_oracle(a, b, lo=-10, hi=10):
    """Exact rational Jaccard distance on clamped closed intervals."""
    def clamp(iv):
        return tuple(min(max(Fraction(x), Fraction(lo)), Fraction(hi)) for x in iv)

    (a0, a1), (b0, b1) = clamp(a), clamp(b)
    if (a0, a1) == (b0, b1):
        return Fraction(0)
    inter = max(Fraction(0), min(a1, b1) - max(a0, b0))
    union = (a1 - a0) + (b1 - b0) - inter
    if union == 0:
        return Fraction(1)
    return 1 - inter / union
