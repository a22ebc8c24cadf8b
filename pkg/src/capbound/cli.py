"""Command-line front end.

Every subcommand reads a scene file, writes CSV (and SVG) artifacts and a
JSON manifest next to them.  CSVs are deterministic: identical scene, seed and
flags give byte-identical files.  Wall times only go to the manifest unless
``--timings`` asks for them in the CSV as well.

Exit status: 0 on success, 2 on invalid input (scene, flags, geometry
preconditions), 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, boundary as bd, capmetric, maps, scene as scn, sobolev_trace as st, svg
from .capacity import condenser_capacity
from .errors import (
    BudgetExceeded, CapboundError, GeometryError, PreconditionError, SceneError,
)
from .geometry import Point

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(CapboundError):
    """Missing scene section or unusable flag combination."""

    module = "cli"


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "inf" if v == math.inf else repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    if v is None:
        return ""
    return str(v)


class Run:
    """Collects the artifacts and timings of one invocation and writes the manifest."""

    def __init__(self, command: str, scene: scn.Scene | None, manifest: Path):
        self.command = command
        self.scene = scene
        self.manifest = manifest
        self.files: list[str] = []
        self.times: dict[str, float] = {}
        self.extra: dict = {}

    def timed(self, name: str, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        finally:
            self.times[name] = self.times.get(name, 0.0) + time.perf_counter() - t0

    def csv(self, path: Path, header: list[str], rows) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        ref = self.manifest.name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header + ["manifest"])
            for r in rows:
                w.writerow([_fmt(v) for v in r] + [ref])
        self.files.append(path.name)
        return path

    def add(self, path: Path) -> None:
        self.files.append(path.name)

    def write_manifest(self) -> None:
        s = self.scene
        data = {
            "tool": "capbound",
            "version": __version__,
            "command": self.command,
            "scene": s.name if s else None,
            "scene_hash": s.hash if s else None,
            "seed": s.seed if s else None,
            "wall_times": {k: round(v, 4) for k, v in sorted(self.times.items())},
            "files": sorted(set(self.files)),
            **self.extra,
        }
        self.manifest.parent.mkdir(parents=True, exist_ok=True)
        self.manifest.write_text(json.dumps(data, indent=2) + "\n")


def _manifest_for(out: Path) -> Path:
    return out.with_name(out.stem + ".manifest.json")


def _jobs(args) -> int:
    if args.jobs is not None:
        return max(1, args.jobs)
    env = os.environ.get("CAPBOUND_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InputError(f"CAPBOUND_JOBS must be an integer, got {env!r}")
    return 1


def _load_scene(args) -> scn.Scene:
    if not args.scene:
        raise InputError("--scene is required")
    s = scn.load(args.scene)
    over = {}
    if getattr(args, "h", None) is not None:
        over["h"] = args.h
    if getattr(args, "refine", None) is not None:
        over["refine"] = args.refine
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    return s.with_overrides(**over) if over else s


def _need(value, what: str):
    if value is None:
        raise InputError(f"scene has no {what} section")
    return value


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_capacity(args) -> int:
    s = _load_scene(args)
    cond = _need(s.condenser, "condenser")
    out = Path(args.out or "capacity.csv")
    run = Run("capacity", s, _manifest_for(out))
    est, _ = run.timed("capacity", condenser_capacity, cond, s.h, s.refine)
    header = ["value", "h_list", "error_indicator", "iterations", "extrapolated", "raw_values"]
    row = [est.value, list(est.resolutions_used), est.error_indicator, est.iterations, est.extrapolated,
           list(est.raw_values)]
    if args.timings:
        header.append("wall_time")
        row.append(est.wall_time)
    run.csv(out, header, [row])
    run.write_manifest()
    return EXIT_OK


def _read_pairs(path: str) -> list[tuple[Point, Point]]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        missing = {"x1", "y1", "x2", "y2"} - set(rd.fieldnames or ())
        if missing:
            raise InputError(f"{path}: pair CSV lacks columns {sorted(missing)}")
        try:
            return [(Point(float(r["x1"]), float(r["y1"])), Point(float(r["x2"]), float(r["y2"]))) for r in rd]
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from exc


def _rho_job(job):
    x, y, config = job
    return capmetric.rho(x, y, config)


def cmd_distance(args) -> int:
    s = _load_scene(args)
    config = _need(s.metric, "metric")
    pairs = _read_pairs(args.pairs) if args.pairs else s.pairs
    if not pairs:
        raise InputError("no pairs given (use --pairs or a 'pairs' scene entry)")
    out = Path(args.out or "distance.csv")
    run = Run("distance", s, _manifest_for(out))
    jobs = [(x, y, config) for x, y in pairs]

    def work():
        n = _jobs(args)
        if n > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=n) as ex:
                return list(ex.map(_rho_job, jobs))
        return [_rho_job(j) for j in jobs]

    ests = run.timed("distance", work)
    rows, curves = [], []
    for k, ((x, y), e) in enumerate(zip(pairs, ests)):
        rows.append([x.x, x.y, y.x, y.y, e.value, e.term_F, e.term_boundary, f"c{k:03d}"])
        curves.append(e.curve)
    run.csv(out, ["x1", "y1", "x2", "y2", "value", "term_F", "term_boundary", "curve_id"], rows)
    crow = [[f"c{k:03d}", i, v.x, v.y] for k, c in enumerate(curves) for i, v in enumerate(c.vertices)]
    run.csv(out.with_name(out.stem + "_curves.csv"), ["curve_id", "vertex", "x", "y"], crow)
    if args.svg:
        d = Path(args.svg)
        d.mkdir(parents=True, exist_ok=True)
        run.add(svg.curves_svg(d / f"distance_{s.name}.svg", config.domain, config.h, curves,
                               f"optimizing curves, scene {s.name}"))
    run.write_manifest()
    return EXIT_OK


def cmd_boundary(args) -> int:
    s = _load_scene(args)
    sec = s.section("boundary")
    suite = args.suite or sec.get("suite")
    if suite is None:
        raise InputError("no suite given (use --suite or boundary.suite in the scene)")
    if suite not in ("disk", "slit", "comb", "fan"):
        raise InputError(f"unknown suite {suite!r}")
    defaults = bd.suite_settings(suite, s.h if s.metric is None else None)
    config = s.metric or defaults.config
    tol = sec.get("tol", defaults.tol)
    eps = sec.get("eps", defaults.eps)
    out = Path(args.out or f"boundary_{suite}")
    out.mkdir(parents=True, exist_ok=True)
    run = Run("boundary", s, out / "manifest.json")
    res = run.timed(f"suite_{suite}", bd.run_suite, suite, config, tol, eps)

    run.csv(out / "verdicts.csv", ["a", "b", "role", "verdict", "tol", "depths", "cross"],
            [[p.a, p.b, p.role, p.verdict.verdict, p.verdict.tol, list(p.verdict.depths), list(p.verdict.cross)]
             for p in res.pairs])
    prow = []
    for tag, prof in res.profiles:
        for d, v in zip(prof.depths, prof.values):
            prow.append([tag, d, v, prof.decreasing])
    run.csv(out / "profiles.csv", ["sequence", "depth", "value", "decreasing"], prow)
    rrow = []
    for tag, r in res.realizations:
        for e, cells in zip(r.eps_list, r.per_eps):
            rrow.append([tag, e, cells.size, bd.cell_diameter(cells, r.mask), r.anchor.x, r.anchor.y])
    run.csv(out / "realizations.csv", ["sequence", "eps", "n_cells", "diameter", "anchor_x", "anchor_y"], rrow)
    if res.collapse:
        run.csv(out / "collapse.csv", ["level", "y", "rho"], [[c.level, c.y, c.rho] for c in res.collapse])
    run.csv(out / "checks.csv", ["suite", "check", "passed"], [[suite, k, v] for k, v in res.checks.items()])

    elements = {"suite": suite, "h": config.h, "tol": tol,
                "elements": [{"tag": "+".join(m.tag for m in g), "members": [bd.sequence_to_dict(m) for m in g]}
                             for g in res.groups]}
    (out / "elements.json").write_text(json.dumps(elements, indent=2) + "\n")
    run.add(out / "elements.json")

    mask = capmetric.level_for(config).mask
    pts = [p for g in res.groups for m in g for p in bd.resolved(m, config).points]
    run.add(svg.cells_svg(out / f"{suite}_impressions.svg", config.domain, mask,
                          [r.cells for _, r in res.realizations], pts, f"{suite} suite impressions"))
    run.extra["checks"] = res.checks
    run.write_manifest()
    return EXIT_OK


def _load_elements(d: str) -> tuple[list[bd.BoundaryElementEstimate], dict]:
    p = Path(d) / "elements.json"
    if not p.exists():
        raise InputError(f"{p} not found (run the boundary subcommand first)")
    data = json.loads(p.read_text())
    els = []
    for e in data["elements"]:
        members = tuple(bd.sequence_from_dict(m) for m in e["members"])
        els.append(bd.BoundaryElementEstimate(members, np.zeros((len(members), len(members))), (),
                                              float(data.get("tol", 0.0)), None, float(data.get("h", 0.0))))
    return els, data


def cmd_trace(args) -> int:
    s = _load_scene(args)
    sec = s.section("function")
    tag = args.function or sec.get("tag")
    if tag is None:
        raise InputError("no function given (use --function or function.tag in the scene)")
    if tag not in st.CATALOG:
        raise InputError(f"unknown function {tag!r}; catalog: {', '.join(st.CATALOG)}")
    fh = float(sec.get("h", s.h))
    out = Path(args.out or "trace.csv")
    run = Run("trace", s, _manifest_for(out))
    u = run.timed("function", st.make_function, s.domain, tag, fh, sec.get("z0"))

    if args.elements:
        els, _ = _load_elements(args.elements)
        rep = run.timed("trace", st.trace, u, els, s.metric)
        rows = []
        for e in rep.elements:
            for m, v in zip(e.tag.split("+"), e.values):
                rows.append([e.tag, m, v, e.spread, e.verdict, e.trapping_capacity])
        run.csv(out, ["element", "member", "limit", "spread", "verdict", "trapping_capacity"], rows)

    eps_list = args.eps if args.eps else sec.get("eps", [])
    lrows, sets = [], []
    for eps in eps_list:
        try:
            r = run.timed("luzin", st.weak_luzin, u, float(eps))
            status = "ok"
        except BudgetExceeded as exc:
            r, status = exc.report, "budget_exceeded"
        lrows.append([float(eps), status, r.U_cells.size, r.cap_U, r.error_indicator, r.threshold, r.metric_kind,
                      r.h])
        sets.append((float(eps), r))
    if eps_list:
        lout = out.with_name(out.stem + "_luzin.csv")
        run.csv(lout, ["epsilon", "status", "n_cells", "cap_U", "error_indicator", "threshold", "metric_kind",
                       "h"], lrows)
        for k, (eps, r) in enumerate(sets):
            run.add(svg.cells_svg(out.with_name(f"trace_{tag}-luzin{k}.svg"), s.domain, u.mask, [r.U_cells],
                                  [], f"{tag}: exceptional set for eps={eps:g}"))
    if not args.elements and not eps_list:
        raise InputError("nothing to do: give --elements and/or Luzin budgets (--eps or function.eps)")
    run.write_manifest()
    return EXIT_OK


def _parse_map(spec: str | None, s: scn.Scene) -> maps.AnalyticMap:
    if spec is None:
        if "map" not in s.data:
            raise InputError("no map given (use --map or a 'map' scene entry)")
        return maps.map_from_dict(s.data["map"])
    p = Path(spec)
    text = p.read_text() if p.exists() else spec
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"--map is neither a JSON map nor a file: {exc}") from exc
    try:
        scn.jsonschema.validate(d, {**scn.SCHEMA["$defs"]["map"], "$defs": scn.SCHEMA["$defs"]})
    except scn.jsonschema.ValidationError as exc:
        raise SceneError(exc.message, "$.map") from exc
    return maps.map_from_dict(d)


def cmd_invariance(args) -> int:
    s = _load_scene(args)
    cond = _need(s.condenser, "condenser")
    f = _parse_map(args.map, s)
    out = Path(args.out or "invariance.csv")
    run = Run("invariance", s, _manifest_for(out))
    rep = run.timed("invariance", maps.invariance_check, f, cond, s.h, max(s.refine, 0))
    run.csv(out, ["map", "K", "conformal", "source_value", "image_value", "ratio", "delta", "lower", "upper",
                  "within"],
            [[json.dumps(f.to_dict(), sort_keys=True), f.K, f.conformal, rep.source.value, rep.image.value,
              rep.ratio, rep.delta, rep.lower, rep.upper, rep.within]])
    run.write_manifest()
    return EXIT_OK


def cmd_report(args) -> int:
    roots = [Path(r) for r in (args.results or ["."])]
    out = Path(args.out or "report.md")
    manifests = sorted({m for r in roots for m in r.rglob("*manifest.json")})
    if not manifests:
        raise InputError("no manifests found under " + ", ".join(map(str, roots)))
    lines = ["# capbound report", ""]
    failed = 0
    for m in manifests:
        data = json.loads(m.read_text())
        lines += [f"## {data.get('command')} — {data.get('scene')} ({m.parent})", "",
                  f"scene hash `{data.get('scene_hash')}`, seed {data.get('seed')}, tool {data.get('version')}", ""]
        for k, v in data.get("wall_times", {}).items():
            lines.append(f"- {k}: {v:.2f} s")
        for name, ok in data.get("checks", {}).items():
            lines.append(f"- check {name}: {'PASS' if ok else 'FAIL'}")
            failed += not ok
        lines.append("")
        for f in data.get("files", []):
            p = m.parent / f
            if p.suffix != ".csv" or not p.exists():
                continue
            with open(p, newline="") as fh:
                rows = list(csv.reader(fh))
            if not rows:
                continue
            head = [c for c in rows[0] if c != "manifest"]
            n = len(head)
            lines += [f"### {f}", "", "| " + " | ".join(head) + " |", "|" + "---|" * n]
            for r in rows[1:41]:
                lines.append("| " + " | ".join(r[:n]) + " |")
            if len(rows) > 41:
                lines.append(f"| ... {len(rows) - 41} more rows |" + " |" * (n - 1))
            lines.append("")
    lines.append(f"{len(manifests)} runs, {failed} failed checks.")
    out.write_text("\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="capbound", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"capbound {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--scene", help="scene JSON file")
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--h", type=float, help="override the scene grid spacing")
        sp.add_argument("--refine", type=int, help="override the number of refinements")
        sp.add_argument("--seed", type=int, help="override the scene seed")
        sp.add_argument("--jobs", type=int, help="worker processes (default: $CAPBOUND_JOBS or 1)")
        sp.add_argument("--timings", action="store_true", help="add wall times to the CSV (breaks byte identity)")
        return sp

    common(sub.add_parser("capacity", help="condenser capacity"), "output CSV")
    sp = common(sub.add_parser("distance", help="capacitary distances"), "output CSV")
    sp.add_argument("--pairs", help="CSV with columns x1,y1,x2,y2")
    sp.add_argument("--svg", help="directory for curve overlays")
    sp = common(sub.add_parser("boundary", help="boundary suite"), "output directory")
    sp.add_argument("--suite", choices=["disk", "slit", "comb", "fan"])
    sp = common(sub.add_parser("trace", help="boundary traces and Luzin sets"), "output CSV")
    sp.add_argument("--function", help=f"catalog function ({', '.join(st.CATALOG)})")
    sp.add_argument("--elements", help="output directory of a boundary run")
    sp.add_argument("--eps", type=float, nargs="*", help="weak Luzin capacity budgets")
    sp = common(sub.add_parser("invariance", help="capacity ratio under a map"), "output CSV")
    sp.add_argument("--map", help="map as JSON text or a JSON file")
    sp = common(sub.add_parser("report", help="summarize result directories"), "output Markdown file")
    sp.add_argument("results", nargs="*", help="result directories (default: .)")
    return p


COMMANDS = {"capacity": cmd_capacity, "distance": cmd_distance, "boundary": cmd_boundary,
            "trace": cmd_trace, "invariance": cmd_invariance, "report": cmd_report}


def _exit_code(exc: CapboundError) -> int:
    if isinstance(exc, (SceneError, InputError, GeometryError, PreconditionError)):
        return EXIT_INPUT
    return EXIT_NUMERIC


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CapboundError as exc:
        print(f"capbound: {exc.name} ({exc.module}): {exc}", file=sys.stderr)
        return _exit_code(exc)
    except (OSError, ValueError) as exc:
        print(f"capbound: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
