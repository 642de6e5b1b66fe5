"""Constraint catalog (Type 1-4 rules) and violation detection.

Every check is reduced to a per-point *violation metric*: a unit-free
normalized excess that is positive exactly where the rule is broken.
A violated quantitative constraint yields the degree interval
``[min, max]`` of that metric over the violating points (clamped to the
constraint's metric domain); a violated qualitative constraint yields 1.

Metrics by check::

    value_domain  (x - hi)/|hi| above,  (lo - x)/|lo| below
    speed         (|dx/dt| - max_rate)/max_rate            dt in seconds
    variance      (var - max_var)/max_var                  tumbling windows
    mechanism     (|sum a_i*S_i + b| - tol)/tol            pointwise
    similarity    (min_corr - corr)/(1 + |min_corr|)       tumbling windows

A zero denominator is replaced by 1.  Tumbling windows are laid on a grid
anchored at the first row of the bundle; only windows that fit inside the
analysis interval are evaluated.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping, Union

import numpy as np

from .errors import DomainArityError, MissingSensor, SchemaError
from .series import SeriesBundle, full_interval

log = logging.getLogger(__name__)

QUALITATIVE = "qualitative"
QUANTITATIVE = "quantitative"
KINDS = (QUALITATIVE, QUANTITATIVE)
CTYPES = ("T1", "T2", "T3", "T4")
DEFAULT_METRIC_DOMAIN = (-10.0, 10.0)


def _scale(v: float) -> float:
    return abs(v) if v != 0 else 1.0


# -- measurement specs ----------------------------------------------------------


@dataclass(frozen=True)
class ValueDomain:
    lo: float
    hi: float
    variant = "value_domain"
    ctype = "T1"


@dataclass(frozen=True)
class Mechanism:
    coeffs: tuple[float, ...]
    offset: float
    tol: float
    variant = "mechanism"
    ctype = "T2"


@dataclass(frozen=True)
class Speed:
    max_rate: float  # sensor units per second
    variant = "speed"
    ctype = "T3"


@dataclass(frozen=True)
class Variance:
    window_len: int
    max_var: float
    variant = "variance"
    ctype = "T3"


@dataclass(frozen=True)
class Similarity:
    window_len: int
    min_corr: float
    variant = "similarity"
    ctype = "T4"


MeasurementSpec = Union[ValueDomain, Mechanism, Speed, Variance, Similarity]
VARIANTS: dict[str, type] = {c.variant: c for c in (ValueDomain, Mechanism, Speed, Variance, Similarity)}


@dataclass(frozen=True)
class Constraint:
    id: str
    ctype: str
    kind: str
    domain: tuple[str, ...]
    check: MeasurementSpec
    window: int | None = None
    metric_domain: tuple[float, float] = DEFAULT_METRIC_DOMAIN

    def __post_init__(self) -> None:
        object.__setattr__(self, "domain", tuple(self.domain))
        object.__setattr__(self, "metric_domain", tuple(float(v) for v in self.metric_domain))
        _validate_constraint(self)

    @property
    def multi_sequence(self) -> bool:
        return len(self.domain) > 1

    @property
    def quantitative(self) -> bool:
        return self.kind == QUANTITATIVE

    def to_dict(self) -> dict:
        check = {"variant": self.check.variant}
        for k, v in vars(self.check).items():
            check[k] = list(v) if isinstance(v, tuple) else v
        d = {
            "id": self.id,
            "ctype": self.ctype,
            "kind": self.kind,
            "domain": list(self.domain),
            "check": check,
        }
        if self.window is not None:
            d["window"] = self.window
        if self.metric_domain != DEFAULT_METRIC_DOMAIN:
            d["metric_domain"] = list(self.metric_domain)
        return d


def _finite(name: str, *vals: float) -> None:
    for v in vals:
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            raise SchemaError(f"{name}: parameters must be finite numbers, got {v!r}")


def _validate_constraint(c: Constraint) -> None:
    where = f"constraint {c.id!r}"
    if c.ctype not in CTYPES:
        raise SchemaError(f"{where}: unknown ctype {c.ctype!r}")
    if c.kind not in KINDS:
        raise SchemaError(f"{where}: kind must be one of {KINDS}")
    chk = c.check
    if type(chk) not in VARIANTS.values():
        raise SchemaError(f"{where}: unknown check {chk!r}")
    if chk.ctype != c.ctype:
        raise SchemaError(f"{where}: {chk.variant} is a {chk.ctype} check, not {c.ctype}")
    n = len(c.domain)
    if len(set(c.domain)) != n:
        raise DomainArityError(f"{where}: repeated sensor in domain")
    if c.ctype in ("T1", "T3") and n != 1:
        raise DomainArityError(f"{where}: {c.ctype} needs exactly one sensor, got {n}")
    if c.ctype in ("T2", "T4") and n < 2:
        raise DomainArityError(f"{where}: {c.ctype} needs at least two sensors, got {n}")
    m_lo, m_hi = c.metric_domain
    _finite(where, m_lo, m_hi)
    if not m_lo < m_hi:
        raise SchemaError(f"{where}: empty metric domain")
    if isinstance(chk, ValueDomain):
        _finite(where, chk.lo, chk.hi)
        if chk.lo > chk.hi:
            raise SchemaError(f"{where}: lo > hi")
    elif isinstance(chk, Mechanism):
        _finite(where, *chk.coeffs, chk.offset, chk.tol)
        if len(chk.coeffs) != n:
            raise SchemaError(f"{where}: {len(chk.coeffs)} coefficients for {n} sensors")
        if chk.tol < 0:
            raise SchemaError(f"{where}: tol must be >= 0")
    elif isinstance(chk, Speed):
        _finite(where, chk.max_rate)
        if chk.max_rate < 0:
            raise SchemaError(f"{where}: max_rate must be >= 0")
    elif isinstance(chk, (Variance, Similarity)):
        if not isinstance(chk.window_len, int) or isinstance(chk.window_len, bool) or chk.window_len < 2:
            raise SchemaError(f"{where}: window_len must be an integer >= 2")
        if c.window is not None and c.window != chk.window_len:
            raise SchemaError(f"{where}: window {c.window} disagrees with window_len {chk.window_len}")
        if isinstance(chk, Variance):
            _finite(where, chk.max_var)
            if chk.max_var < 0:
                raise SchemaError(f"{where}: max_var must be >= 0")
        else:
            _finite(where, chk.min_corr)
            if not -1.0 <= chk.min_corr <= 1.0:
                raise SchemaError(f"{where}: min_corr outside [-1, 1]")
            if n != 2:
                raise DomainArityError(f"{where}: similarity is defined over a sensor pair")


class ConstraintCatalog(Mapping[str, Constraint]):
    """Ordered, id-unique collection of constraints."""

    def __init__(self, constraints: Iterable[Constraint] = ()) -> None:
        self._by_id: dict[str, Constraint] = {}
        for c in constraints:
            if c.id in self._by_id:
                raise SchemaError(f"duplicate constraint id {c.id!r}")
            self._by_id[c.id] = c

    def __getitem__(self, key: str) -> Constraint:
        return self._by_id[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._by_id)

    def __len__(self) -> int:
        return len(self._by_id)

    def constraints(self) -> list[Constraint]:
        return list(self._by_id.values())

    def subset(self, ids: Iterable[str]) -> "ConstraintCatalog":
        return ConstraintCatalog(self._by_id[i] for i in ids)

    def to_json(self) -> list[dict]:
        return [c.to_dict() for c in self._by_id.values()]

    def __repr__(self) -> str:
        return f"ConstraintCatalog({len(self)} constraints)"


def constraint_from_dict(d: Mapping) -> Constraint:
    try:
        chk = dict(d["check"])
        variant = chk.pop("variant")
        cls = VARIANTS[variant]
    except KeyError as exc:
        raise SchemaError(f"constraint {d.get('id')!r}: missing or unknown field {exc}") from None
    try:
        if cls is Mechanism:
            chk["coeffs"] = tuple(chk["coeffs"])
        spec = cls(**chk)
        return Constraint(
            id=str(d["id"]),
            ctype=d["ctype"],
            kind=d["kind"],
            domain=tuple(d["domain"]),
            check=spec,
            window=d.get("window"),
            metric_domain=tuple(d.get("metric_domain", DEFAULT_METRIC_DOMAIN)),
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"constraint {d.get('id')!r}: {exc}") from None


def load_catalog(source) -> ConstraintCatalog:
    """Load a catalog from a path, JSON text, or an already-parsed list."""
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source, encoding="utf-8") as fh:
            data = json.load(fh)
    elif isinstance(source, (str, bytes)):
        data = json.loads(source)
    else:
        data = source
    if not isinstance(data, list):
        raise SchemaError("catalog must be a JSON array of constraint objects")
    return ConstraintCatalog(constraint_from_dict(d) for d in data)


def save_catalog(catalog: ConstraintCatalog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(catalog.to_json(), fh, indent=1)


# -- violation features ----------------------------------------------------------

Degree = Union[int, tuple[float, float]]


@dataclass(frozen=True)
class ViolationFeature:
    """One violated constraint in one analysis interval.

    ``F`` is 1 for a qualitative constraint and ``(d, u)`` otherwise.
    ``interval`` is the span ``[t_a, t_b]`` (ms) where violating points were
    seen.  ``K`` counts the sequences involved in the violation; in
    feature-splitting mode each per-sequence feature keeps the K of the
    violation it was split from.
    """

    constraint_id: str
    sequences: tuple[str, ...]
    F: Degree
    interval: tuple[int, int]
    K: int
    kind: str = QUANTITATIVE

    @property
    def fid(self) -> str:
        return f"{self.constraint_id}[{'+'.join(self.sequences)}]"

    @property
    def signature(self) -> tuple[str, tuple[str, ...]]:
        return self.constraint_id, tuple(sorted(self.sequences))

    def to_dict(self) -> dict:
        return {
            "id": self.fid,
            "constraint_id": self.constraint_id,
            "sequences": list(self.sequences),
            "F": self.F if isinstance(self.F, int) else list(self.F),
            "interval": list(self.interval),
            "K": self.K,
            "kind": self.kind,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ViolationFeature":
        F = d["F"]
        F = tuple(float(v) for v in F) if isinstance(F, (list, tuple)) else int(F)
        return cls(d["constraint_id"], tuple(d["sequences"]), F, tuple(d["interval"]), int(d["K"]), d.get("kind", QUANTITATIVE))


# -- metric evaluation --------------------------------------------------------------


def _rows(bundle: SeriesBundle, interval: tuple[int, int] | None) -> slice:
    if interval is None:
        return slice(0, bundle.time_axis.shape[0])
    axis = bundle.time_axis
    lo = int(np.searchsorted(axis, interval[0], side="left"))
    hi = int(np.searchsorted(axis, interval[1], side="right"))
    return slice(lo, hi)


def _columns(c: Constraint, bundle: SeriesBundle) -> list[int]:
    idx = bundle.column_index
    missing = [s for s in c.domain if s not in idx]
    if missing:
        raise MissingSensor(f"constraint {c.id!r}: sensors {missing} not in bundle")
    return [idx[s] for s in c.domain]


def violation_metric(c: Constraint, bundle: SeriesBundle, interval: tuple[int, int] | None = None):
    """Per-point metric and start/end timestamps of every evaluated point.

    Returns ``(metric, t_start, t_end)`` arrays, or ``None`` when a windowed
    check has fewer samples than its window.
    """
    rows = _rows(bundle, interval)
    t = bundle.time_axis[rows]
    cols = _columns(c, bundle)
    block = bundle.matrix[rows, cols]
    chk = c.check

    if isinstance(chk, ValueDomain):
        x = block[:, 0]
        ok = ~np.isnan(x)
        x, tt = x[ok], t[ok]
        m = np.maximum((x - chk.hi) / _scale(chk.hi), (chk.lo - x) / _scale(chk.lo))
        return m, tt, tt

    if isinstance(chk, Speed):
        x = block[:, 0]
        ok = ~np.isnan(x)
        x, tt = x[ok], t[ok]
        if x.size < 2:
            return np.empty(0), np.empty(0, np.int64), np.empty(0, np.int64)
        rate = np.abs(np.diff(x)) / (np.diff(tt) / 1000.0)
        return (rate - chk.max_rate) / _scale(chk.max_rate), tt[:-1], tt[1:]

    if isinstance(chk, Mechanism):
        ok = ~np.isnan(block).any(axis=1)
        res = block[ok] @ np.asarray(chk.coeffs) + chk.offset
        tt = t[ok]
        return (np.abs(res) - chk.tol) / _scale(chk.tol), tt, tt

    # tumbling windows sit on a grid anchored at the start of the bundle, so a
    # larger interval always contains every window of a smaller one
    W = chk.window_len
    first = -(-rows.start // W) * W
    nw = (rows.stop - first) // W
    if nw <= 0:
        return None
    grid = bundle.matrix[first : first + nw * W, cols]
    tw = bundle.time_axis[first : first + nw * W].reshape(nw, W)
    full = ~np.isnan(grid).any(axis=1).reshape(nw, W).any(axis=1)
    if isinstance(chk, Variance):
        win = grid[:, 0].reshape(nw, W)[full]
        m = (win.var(axis=1) - chk.max_var) / _scale(chk.max_var)
        return m, tw[full, 0], tw[full, -1]

    # Similarity
    a = grid[:, 0].reshape(nw, W)[full]
    b = grid[:, 1].reshape(nw, W)[full]
    tw = tw[full]
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    den = np.sqrt((a * a).sum(axis=1) * (b * b).sum(axis=1))
    valid = den > 0
    corr = np.where(valid, (a * b).sum(axis=1) / np.where(valid, den, 1.0), np.nan)
    m = (chk.min_corr - corr[valid]) / (1.0 + abs(chk.min_corr))
    return m, tw[valid, 0], tw[valid, -1]


def evaluate_constraint(
    c: Constraint,
    bundle: SeriesBundle,
    interval: tuple[int, int] | None = None,
) -> ViolationFeature | None:
    """Feature for ``c`` over ``interval`` if any point/window violates it."""
    out = violation_metric(c, bundle, interval)
    if out is None:
        log.info("constraint %s: fewer samples than window_len, skipped", c.id)
        return None
    m, t0, t1 = out
    bad = m > 0
    if not np.any(bad):
        return None
    mb = m[bad]
    span = (int(t0[bad].min()), int(t1[bad].max()))
    if c.quantitative:
        lo, hi = c.metric_domain
        F: Degree = (float(np.clip(mb.min(), lo, hi)), float(np.clip(mb.max(), lo, hi)))
    else:
        F = 1
    return ViolationFeature(c.id, c.domain, F, span, len(c.domain), c.kind)


def split_feature(v: ViolationFeature) -> list[ViolationFeature]:
    """One feature per involved sequence (the greedynC/MFnC representation)."""
    if len(v.sequences) == 1:
        return [v]
    return [replace(v, sequences=(s,)) for s in v.sequences]


@dataclass
class DetectionReport:
    """Detected features (sorted by constraint id) plus per-constraint errors."""

    features: list[ViolationFeature]
    errors: dict[str, str] = field(default_factory=dict)
    interval: tuple[int, int] | None = None

    def __iter__(self) -> Iterator[ViolationFeature]:
        return iter(self.features)

    def __len__(self) -> int:
        return len(self.features)

    @property
    def violated_constraints(self) -> set[str]:
        return {v.constraint_id for v in self.features}

    def to_json(self) -> dict:
        return {
            "interval": list(self.interval) if self.interval else None,
            "features": [v.to_dict() for v in self.features],
            "errors": dict(self.errors),
        }


def detect_violations(
    catalog: ConstraintCatalog,
    bundle: SeriesBundle,
    interval: tuple[int, int] | None = None,
    *,
    split: bool = False,
    threads: int = 1,
) -> DetectionReport:
    """Evaluate every constraint; one feature per violated constraint.

    With ``split=True`` a multi-sequence violation is reported as one
    feature per involved sequence instead.  A failing constraint is recorded
    in ``errors`` and does not stop the run.
    """
    if interval is None:
        interval = full_interval(bundle)
    errors: dict[str, str] = {}

    def run(c: Constraint):
        try:
            return evaluate_constraint(c, bundle, interval)
        except Exception as exc:  # report, never abort the sweep
            errors[c.id] = f"{type(exc).__name__}: {exc}"
            return None

    cons = sorted(catalog.constraints(), key=lambda c: c.id)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, cons))
    else:
        results = [run(c) for c in cons]
    feats: list[ViolationFeature] = []
    for v in results:
        if v is None:
            continue
        feats.extend(split_feature(v) if split else [v])
    return DetectionReport(feats, dict(sorted(errors.items())), interval)
