"""Command line front end: detect, explain, update, evaluate, inject, validate.

Exit status is 0 on success, 1 when a domain error stops the run (the
error is printed as JSON on stderr) and 2 on usage errors.  Settings
resolve as flags > config file > defaults; ``AEXPLAIN_THREADS`` stands
in for ``--threads`` when the flag is absent.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

from .constraints import ConstraintCatalog, ViolationFeature, detect_violations, load_catalog, save_catalog, split_feature
from .errors import AExplainError
from .explainer import BASELINES, SPLIT_METHODS, Problem, explain, explanation_report
from .knowledge import KnowledgeSet, load_knowledge, save_knowledge, split_knowledge, validate_knowledge
from .matching import MatchConfig
from .series import parse_series, serialize_series, validate_series
from .update import ACCEPTED, PENDING, UpdateConfig, apply_proposals, explanation_update, load_proposals, save_proposals

log = logging.getLogger("aexplain")

METHOD_CHOICES = ("AEC",) + BASELINES
COMMANDS = ("detect", "explain", "update", "evaluate", "inject", "validate")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    data: str | None = None
    catalog: str | None = None
    knowledge: str | None = None
    out: str = "."
    theta: float = 0.9
    lam: float = 0.4
    w0: float = 0.5
    auto_accept: bool = False
    seed: int = 0
    method: str = "AEC"
    threads: int = 1

    def __post_init__(self) -> None:
        for name in ("theta", "lam", "w0"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not 0.0 < v < 1.0:
                raise UsageError(f"{name} must lie strictly between 0 and 1, got {v!r}")
        if self.method not in METHOD_CHOICES:
            raise UsageError(f"unknown method {self.method!r}; choose from {', '.join(METHOD_CHOICES)}")
        if not isinstance(self.threads, int) or self.threads < 1:
            raise UsageError(f"threads must be a positive integer, got {self.threads!r}")

    @property
    def match(self) -> MatchConfig:
        return MatchConfig(theta=self.theta)


CONFIG_KEYS = tuple(f.name for f in fields(RunConfig))


# -- argument types --------------------------------------------------------------------


def open_unit(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"{v} is outside (0, 1)")
    return v


def positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"{v} must be >= 1")
    return v


def int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text!r}") from None


def float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from None


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default settings")
    common.add_argument("--out", default=S, help="output directory (default: current)")
    common.add_argument("--seed", type=int, default=S)
    common.add_argument("--threads", type=positive_int, default=S, help="worker cap (env AEXPLAIN_THREADS)")
    common.add_argument("--print-config", action="store_true", help="print the effective settings and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    inputs = argparse.ArgumentParser(add_help=False)
    inputs.add_argument("--data", default=S, help="series CSV")
    inputs.add_argument("--catalog", default=S, help="constraint catalog JSON")
    inputs.add_argument("--knowledge", default=S, help="knowledge JSON")

    matching = argparse.ArgumentParser(add_help=False)
    matching.add_argument("--theta", type=open_unit, default=S, help="consistency threshold in (0,1)")

    parser = argparse.ArgumentParser(prog="aexplain", description="Explain constraint violations in sensor data.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("detect", parents=[common, inputs], help="violation features of a series")
    p.add_argument("--interval", type=int, nargs=2, metavar=("T_A", "T_B"), help="analysis interval in ms")
    p.add_argument("--split", action="store_true", help="one feature per sequence of a multi-sequence violation")

    p = sub.add_parser("explain", parents=[common, inputs, matching], help="choose events explaining the violations")
    p.add_argument("--report", help="violation report from 'detect' (skips detection)")
    p.add_argument("--method", choices=METHOD_CHOICES, default=S)
    p.add_argument("--lambda", dest="lam", type=open_unit, default=S, help="AE cost threshold in (0,1)")
    p.add_argument("--interval", type=int, nargs=2, metavar=("T_A", "T_B"))

    p = sub.add_parser("update", parents=[common, inputs, matching], help="propose or apply knowledge updates")
    p.add_argument("--report", help="violation report from 'detect' (skips detection)")
    p.add_argument("--w0", type=open_unit, default=S, help="weight of newly learned representations")
    p.add_argument("--auto-accept", dest="auto_accept", action="store_true", default=S)
    p.add_argument("--proposals", help="proposal file to apply instead of running an update")
    p.add_argument("--apply", choices=("accepted", "all"), help="which proposals in --proposals to commit")

    p = sub.add_parser("evaluate", parents=[common, matching], help="run the experiment grid")
    p.add_argument("--seeds", type=int_list, default=[0, 1, 2], help="comma-separated seeds (default 0,1,2)")
    p.add_argument("--constraints", type=int_list, default=[210])
    p.add_argument("--points", type=int_list, default=[10_800])
    p.add_argument("--ae", type=int_list, default=[20], help="injected events per bundle")
    p.add_argument("--inr", type=float_list, default=[15.0], help="incomplete rates in percent")
    p.add_argument("--methods", default=None, help="comma-separated methods (default: all)")
    p.add_argument("--sensors", type=positive_int, default=64)
    p.add_argument("--events", type=positive_int, default=60, help="events in the knowledge base")
    p.add_argument("--lambda", dest="lam", type=open_unit, default=S)
    p.add_argument("--w0", type=open_unit, default=S)

    p = sub.add_parser("inject", parents=[common, inputs], help="inject labeled anomalies")
    p.add_argument("--ae", type=positive_int, default=20, help="events to inject")
    p.add_argument("--magnitude", type=float, default=0.5, help="position of the injected band inside F_r")
    p.add_argument("--near-boundary", action="store_true", help="push degrees towards the upper bound of F_r")
    p.add_argument("--length", type=positive_int, default=180, help="event length in samples")
    p.add_argument("--sensors", type=positive_int, default=64, help="sensors of a generated world")
    p.add_argument("--points", type=positive_int, default=10_800, help="points of a generated clean series")
    p.add_argument("--constraints", type=positive_int, default=210, help="constraints of a generated world")
    p.add_argument("--events", type=positive_int, default=60, help="events of a generated world")

    sub.add_parser("validate", parents=[common, inputs], help="structural checks of the inputs")
    return parser


# -- config resolution -----------------------------------------------------------------


def resolve_config(ns: argparse.Namespace, environ=os.environ) -> RunConfig:
    values: dict = {}
    if getattr(ns, "config", None):
        path = Path(ns.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        if "lambda" in loaded:
            loaded["lam"] = loaded.pop("lambda")
        unknown = sorted(set(loaded) - set(CONFIG_KEYS))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        values.update(loaded)
    env = environ.get("AEXPLAIN_THREADS")
    if env and "threads" not in vars(ns):
        try:
            values["threads"] = int(env)
        except ValueError:
            raise UsageError(f"AEXPLAIN_THREADS must be an integer, got {env!r}") from None
    for key in CONFIG_KEYS:
        if key in vars(ns):
            values[key] = getattr(ns, key)
    return RunConfig(**values)


def _need(cfg: RunConfig, *names: str) -> None:
    for name in names:
        path = getattr(cfg, name)
        if path is None:
            raise UsageError(f"--{name} is required")
        if not Path(path).is_file():
            raise UsageError(f"--{name}: no such file: {path}")


def _need_file(flag: str, path: str | None) -> None:
    if path is None:
        raise UsageError(f"{flag} is required")
    if not Path(path).is_file():
        raise UsageError(f"{flag}: no such file: {path}")


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


# -- shared steps ----------------------------------------------------------------------


def _features(cfg: RunConfig, ns, catalog: ConstraintCatalog | None, split: bool) -> list[ViolationFeature]:
    """Features from ``--report`` or from running detection on ``--data``."""
    if getattr(ns, "report", None):
        _need_file("--report", ns.report)
        with open(ns.report, encoding="utf-8") as fh:
            doc = json.load(fh)
        try:
            feats = [ViolationFeature.from_dict(d) for d in doc["features"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"--report is not a violation report: {exc}") from None
        return [s for v in feats for s in split_feature(v)] if split else feats
    _need(cfg, "data")
    if catalog is None:
        raise UsageError("--catalog is required to run detection")
    bundle = parse_series(cfg.data)
    interval = tuple(ns.interval) if getattr(ns, "interval", None) else None
    rep = detect_violations(catalog, bundle, interval, split=split, threads=cfg.threads)
    for cid, err in rep.errors.items():
        log.warning("constraint %s not evaluated: %s", cid, err)
    return rep.features


def _catalog(cfg: RunConfig, required: bool) -> ConstraintCatalog | None:
    if cfg.catalog is None and not required:
        return None
    _need(cfg, "catalog")
    return load_catalog(cfg.catalog)


def _knowledge(cfg: RunConfig, catalog: ConstraintCatalog | None) -> KnowledgeSet:
    _need(cfg, "knowledge")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ks = load_knowledge(cfg.knowledge, catalog)
    for w in caught:
        log.warning("%s", w.message)
    return ks


# -- commands --------------------------------------------------------------------------


def cmd_detect(cfg: RunConfig, ns) -> int:
    _need(cfg, "data")
    catalog = _catalog(cfg, required=True)
    bundle = parse_series(cfg.data)
    interval = tuple(ns.interval) if ns.interval else None
    rep = detect_violations(catalog, bundle, interval, split=ns.split, threads=cfg.threads)
    out = _out(cfg) / "violations.json"
    _write_json(out, rep.to_json())
    print(f"{len(rep)} violation feature(s) -> {out}")
    return 0


def cmd_explain(cfg: RunConfig, ns) -> int:
    catalog = _catalog(cfg, required=not ns.report or cfg.method == "TopK")
    ks = _knowledge(cfg, catalog)
    split = cfg.method in SPLIT_METHODS
    feats = _features(cfg, ns, catalog, split)
    kn = split_knowledge(ks) if split else ks
    prob = Problem.build(feats, kn, cfg.match)
    sol = explain(
        prob,
        cfg.method,
        n_events=len(ks),
        n_constraints=len(catalog) if catalog is not None else 0,
        lam=cfg.lam,
    )
    doc = explanation_report(prob, sol, kn, {"method": cfg.method, "theta": cfg.theta, "lambda": cfg.lam})
    out = _out(cfg) / "explanation.json"
    _write_json(out, doc)
    print(f"{len(sol.chosen)} event(s), {len(sol.uncovered)} uncovered feature(s) -> {out}")
    return 0


def cmd_update(cfg: RunConfig, ns) -> int:
    if ns.proposals or ns.apply:
        return _apply_file(cfg, ns)
    catalog = _catalog(cfg, required=not ns.report)
    ks = _knowledge(cfg, catalog)
    feats = _features(cfg, ns, catalog, split=False)
    prob = Problem.build(feats, ks, cfg.match)
    sol = explain(prob, "AEC")
    uncovered = set(prob.features) - sol.covered
    ucfg = UpdateConfig(w0=cfg.w0, auto_accept=cfg.auto_accept)
    new_ks, proposals = explanation_update(ks, feats, uncovered, cfg.match, ucfg, catalog, prob.cover_map)
    out = _out(cfg)
    save_proposals(proposals, out / "proposals.json")
    msg = f"{len(proposals)} proposal(s) -> {out / 'proposals.json'}"
    if cfg.auto_accept:
        save_knowledge(new_ks, out / "knowledge.json")
        msg += f"; knowledge v{new_ks.version} -> {out / 'knowledge.json'}"
    print(msg)
    return 0


def _apply_file(cfg: RunConfig, ns) -> int:
    if not (ns.proposals and ns.apply):
        raise UsageError("--proposals and --apply go together")
    _need_file("--proposals", ns.proposals)
    catalog = _catalog(cfg, required=False)
    ks = _knowledge(cfg, catalog)
    try:
        proposals = load_proposals(ns.proposals)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"--proposals is not a proposal file: {exc}") from None
    if ns.apply == "all":
        for p in proposals:
            if p.status == PENDING and p.action != "review":
                p.status = ACCEPTED
    new_ks = apply_proposals(ks, proposals)
    out = _out(cfg) / "knowledge.json"
    save_knowledge(new_ks, out)
    n = sum(p.status == ACCEPTED and p.action != "review" for p in proposals)
    print(f"{n} proposal(s) applied; knowledge v{new_ks.version} -> {out}")
    return 0


def cmd_evaluate(cfg: RunConfig, ns) -> int:
    from .harness.experiment import METHODS, run_experiment

    methods = [m.strip() for m in ns.methods.split(",")] if ns.methods else list(METHODS)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
    if not ns.seeds:
        raise UsageError("--seeds needs at least one seed")
    grid = {"constraints": ns.constraints, "points": ns.points, "ae": ns.ae, "inr": ns.inr, "method": methods}
    table = run_experiment(
        grid,
        ns.seeds,
        cfg=cfg.match,
        lam=cfg.lam,
        w0=cfg.w0,
        sensors=ns.sensors,
        events=ns.events,
        workers=cfg.threads,
        out_dir=_out(cfg),
    )
    for cell in table.summary():
        print(
            f"{cell['method']:9s} C={cell['constraints']} N={cell['points']} AE={cell['ae']} inr={cell['inr']:g}"
            f"  F1={_fmt(cell['f1'])} P={_fmt(cell['precision'])} R={_fmt(cell['recall'])}"
        )
    for r in table.failed():
        log.warning("failed cell %s seed=%s: %s", r.method, r.seed, r.status)
    return 0


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.3f}"


def cmd_inject(cfg: RunConfig, ns) -> int:
    from .harness.inject import inject_anomalies, make_plan
    from .harness.world import build_world, generate_clean

    out = _out(cfg)
    if cfg.data is None:
        world = build_world(ns.sensors, ns.constraints, ns.events, seed=cfg.seed)
        clean = generate_clean(ns.sensors, ns.points, cfg.seed, world)
        catalog, ks = world.catalog, world.knowledge
        save_catalog(catalog, out / "catalog.json")
        save_knowledge(ks, out / "knowledge.json")
        (out / "clean.csv").write_text(serialize_series(clean), encoding="utf-8")
    else:
        _need(cfg, "data")
        catalog = _catalog(cfg, required=True)
        ks = _knowledge(cfg, catalog)
        clean = parse_series(cfg.data)
    if ns.magnitude <= 0:
        raise UsageError("--magnitude must be > 0")
    plan = make_plan(clean, ks, ns.ae, cfg.seed, length=ns.length, magnitude=ns.magnitude, near_boundary=ns.near_boundary)
    dirty, labels = inject_anomalies(clean, plan, ks, catalog)
    (out / "dirty.csv").write_text(serialize_series(dirty), encoding="utf-8")
    _write_json(out / "plan.json", plan.to_dict())
    _write_json(out / "labels.json", [lab.to_dict() for lab in labels])
    print(f"{len(labels)} event(s) injected -> {out / 'dirty.csv'}")
    return 0


def cmd_validate(cfg: RunConfig, ns) -> int:
    if cfg.data is None and cfg.catalog is None and cfg.knowledge is None:
        raise UsageError("give at least one of --data, --catalog, --knowledge")
    doc: dict = {}
    ok = True
    catalog = None
    if cfg.data is not None:
        _need(cfg, "data")
        rep = validate_series(parse_series(cfg.data))
        doc["data"] = rep.to_dict()
        ok &= rep.ok
    if cfg.catalog is not None:
        catalog = _catalog(cfg, required=True)
        doc["catalog"] = {"ok": True, "constraints": len(catalog)}
    if cfg.knowledge is not None:
        ks = _knowledge(cfg, catalog)
        rep = validate_knowledge(ks, catalog)
        doc["knowledge"] = {**rep.to_dict(), "events": len(ks), "version": ks.version}
        ok &= rep.ok
    out = _out(cfg) / "validation.json"
    _write_json(out, doc)
    print(("ok" if ok else "defects found") + f" -> {out}")
    return 0 if ok else 1


HANDLERS = {
    "detect": cmd_detect,
    "explain": cmd_explain,
    "update": cmd_update,
    "evaluate": cmd_evaluate,
    "inject": cmd_inject,
    "validate": cmd_validate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the usage line
        return int(exc.code or 0)
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(ns)
        if ns.print_config:
            print(json.dumps(asdict(cfg), indent=1))
            return 0
        return HANDLERS[ns.command](cfg, ns)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"aexplain {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    except AExplainError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
