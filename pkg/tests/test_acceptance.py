"""Acceptance suite: one test group per criterion, summarized as PASS/FAIL lines.

Run alone with ``pytest tests/test_acceptance.py -v``; the per-criterion
summary is printed at the end of the session.
"""

import json
import math
import time

import numpy as np
import pytest

from capbound import boundary as bd
from capbound import cli, maps, solver
from capbound import scene as scn
from capbound import sobolev_trace as st
from capbound.capacity import (
    Condenser, annulus_condenser, asymptotic_lower_suite, asymptotic_upper_suite, concentric_disk_capacity,
    condenser_capacity, set_capacity, solve_cells, spread,
)
from capbound.capmetric import (
    Budget, MetricConfig, asymptotic_ratio, default_disk_config, equivalence_check, rho, triangle_check,
)
from capbound.errors import BudgetExceeded
from capbound.geometry import (
    Comb, Disk, DiskRegion, PlateSpec, Point, Rectangle, SlitDisk, build_mask,
)

T0 = time.perf_counter()
EPS = (0.05, 0.1, 0.2)
DELTA = 0.10  # tolerance band for empirical metric ratios


def criterion(n, title):
    return pytest.mark.criterion(n, title)


def _disk_points(rng, n, avoid=(), rmax=0.85):
    out = []
    while len(out) < n:
        r = rmax * math.sqrt(rng.uniform())
        a = rng.uniform(0, 2 * math.pi)
        p = Point(r * math.cos(a), r * math.sin(a))
        if all(math.dist(p, c) > rad for c, rad in avoid):
            out.append(p)
    return out


# ---------------------------------------------------------------------------
# 1-4: capacity and solver
# ---------------------------------------------------------------------------

ANNULUS_H = 4 * 1.2 * 0.25 * math.e / 512  # finest grid (h/2) spans 512 cells across the domain


@criterion(1, "annulus capacity oracle")
def test_c01_annulus(record_property):
    c = annulus_condenser()
    est, field = condenser_capacity(c, ANNULUS_H, refine=1)
    err = abs(est.value / (2 * math.pi) - 1)
    record_property("detail", f"value {est.value:.4f}, rel err {err:.2%}")
    assert est.extrapolated and err <= 0.02
    # a single solve on the finest (512 x 512) grid
    mask = field.mask
    assert max(mask.shape) >= 512
    t = time.perf_counter()
    solve_cells(mask, field.plate0, field.plate1)
    dt = time.perf_counter() - t
    record_property("detail", f"512^2 solve {dt:.2f} s")
    assert dt < 10.0


@criterion(2, "concentric-disk set capacity")
@pytest.mark.parametrize("eps", [0.2, 0.1, 0.05])
def test_c02_concentric(eps, record_property):
    est = set_capacity(DiskRegion(Point(0, 0), eps), Disk(), 1 / 64, refine=1)
    exact = concentric_disk_capacity(eps)
    err = abs(est.value / exact - 1)
    record_property("detail", f"eps {eps}: {err:.2%}")
    assert err <= 0.05


def _random_system(rng):
    dom = [Disk(), Rectangle(-1, -0.5, 1, 0.5), SlitDisk()][rng.integers(3)]
    h = float(rng.choice([1 / 12, 1 / 16, 1 / 20]))
    m = build_mask(dom, h)
    cells = m.interior_flat
    n1 = int(rng.integers(1, 20))
    p1 = rng.choice(cells, n1, replace=False)
    if rng.random() < 0.5:
        p0 = m.boundary_flat
    else:
        p0 = rng.choice(np.setdiff1d(cells, p1), int(rng.integers(1, 20)), replace=False)
    return solver.assemble(m, [(p0, 0.0), (p1, 1.0)])


@criterion(3, "iterative vs dense solver equivalence")
def test_c03_solver_equivalence(record_property):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        system = _random_system(rng)
        assert system.n_free <= solver.DENSE_CAP
        u, _ = solver.solve(system, tol=1e-12)
        ref = solver.dense_oracle(system)
        worst = max(worst, float(np.max(np.abs(u[system.nodes] - ref[system.nodes]))))
    record_property("detail", f"max-norm difference {worst:.2e}")
    assert worst <= 1e-8


@criterion(4, "capacity property suite")
def test_c04_capacity_properties(record_property):
    rng = np.random.default_rng(7)
    violations = []
    for k in range(50):
        dom = [Disk(), Rectangle(-1, -0.5, 1, 0.5)][k % 2]
        m = build_mask(dom, 1 / 20)
        cells = m.interior_flat
        if rng.random() < 0.5:
            c0 = m.boundary_flat
            pool = cells
        else:
            c0 = np.unique(rng.choice(cells, int(rng.integers(1, 15)), replace=False))
            pool = np.setdiff1d(cells, c0)
        pick = rng.choice(pool, int(rng.integers(2, 30)), replace=False)
        cut = int(rng.integers(1, pick.size))
        A, B = np.unique(pick[:cut]), np.unique(pick[cut:])
        AB = np.union1d(A, B)
        cA = solve_cells(m, c0, A, tol=1e-10)[0]
        cB = solve_cells(m, c0, B, tol=1e-10)[0]
        cAB = solve_cells(m, c0, AB, tol=1e-10)[0]
        swapped = solve_cells(m, AB, c0, tol=1e-10)[0]
        if min(cA, cB, cAB) < 0:
            violations.append((k, "nonnegativity"))
        if not (cA <= cAB * (1 + 1e-9) and cB <= cAB * (1 + 1e-9)):
            violations.append((k, "monotonicity"))
        if swapped != cAB:
            violations.append((k, "swap"))
        if math.sqrt(cAB) > 1.05 * (math.sqrt(cA) + math.sqrt(cB)):
            violations.append((k, "subadditivity"))
    record_property("detail", f"{len(violations)} violations over 50 condensers")
    assert not violations


# ---------------------------------------------------------------------------
# 5-7: metric
# ---------------------------------------------------------------------------


@criterion(5, "asymptotic ratio columns")
def test_c05_lower(record_property):
    rows = asymptotic_lower_suite(EPS, h=1 / 64, refine=1)
    s = spread([r.ratio for r in rows])
    record_property("detail", f"cp/ln(1+eps) spread {s:.3f}")
    assert s <= 3


@criterion(5, "asymptotic ratio columns")
def test_c05_upper(record_property):
    rows = asymptotic_upper_suite(EPS, h=1 / 64, refine=1)
    s = spread([r.ratio for r in rows])
    record_property("detail", f"cp*ln(1/eps) spread {s:.3f}")
    assert s <= 3


@criterion(5, "asymptotic ratio columns")
def test_c05_rho(record_property):
    rows = asymptotic_ratio(EPS)
    s = spread([r.ratio for r in rows])
    record_property("detail", f"rho/eps spread {s:.3f}")
    assert s <= 4
    assert rows[2].rho > rows[1].rho


@pytest.fixture(scope="module")
def disk_metric():
    return default_disk_config()


@criterion(6, "metric axioms")
def test_c06_metric_axioms(disk_metric, record_property):
    cfg = disk_metric
    rng = np.random.default_rng(6)
    P = _disk_points(rng, 60, [((0.0, 0.0), 0.3)])
    triples = [tuple(P[3 * k:3 * k + 3]) for k in range(20)]
    rep = triangle_check(triples, cfg, slack=1.10)
    record_property("detail", f"worst triangle ratio {rep.worst:.3f}")
    assert rep.passed
    for (x, y, z), (xy, xz, zy) in zip(triples, rep.rows):
        for (a, b), v in (((x, y), xy), ((x, z), xz), ((z, y), zy)):
            if math.dist(a, b) >= 4 * cfg.h:
                assert v > 0
        assert rho(x, x, cfg).value == 0.0
    for x, y, _ in triples[:5]:
        assert rho(x, y, cfg).value == rho(y, x, cfg).value


@criterion(7, "metric equivalence stability")
def test_c07_equivalence(disk_metric, record_property):
    c2 = MetricConfig(Disk(), PlateSpec.of(DiskRegion(Point(0.45, -0.3), 0.08)),
                      DiskRegion(Point(0.45, -0.3), 0.2), disk_metric.h)
    avoid = [((0.0, 0.0), 0.3), ((0.45, -0.3), 0.25)]
    Ks = []
    for seed in (101, 102):
        P = _disk_points(np.random.default_rng(seed), 20, avoid)
        rep = equivalence_check(disk_metric, c2, [(P[2 * k], P[2 * k + 1]) for k in range(10)])
        assert math.isfinite(rep.K)
        Ks.append(rep.K)
    stab = max(Ks) / min(Ks)
    record_property("detail", f"K = {Ks[0]:.3f}, {Ks[1]:.3f} on resample")
    assert stab <= 1.20


# ---------------------------------------------------------------------------
# 8: boundary suites
# ---------------------------------------------------------------------------

_SUITES: dict = {}


def suite(name):
    if name not in _SUITES:
        _SUITES[name] = bd.run_suite(name)
    return _SUITES[name]


@criterion(8, "boundary suites")
def test_c08_disk(record_property):
    res = suite("disk")
    h = res.config.h
    els = [p for p in res.pairs if p.role == "element"]
    assert len(els) == 28 and all(p.verdict.verdict == bd.DISTINCT for p in els)
    diams = [r.diameter for _, r in res.realizations]
    record_property("detail", f"disk: max impression diameter {max(diams) / h:.2f}h")
    assert len(diams) == 8 and max(diams) <= 4 * h + 1e-12


@criterion(8, "boundary suites")
def test_c08_slit():
    res = suite("slit")
    (pair,) = [p for p in res.pairs if p.role == "element"]
    assert pair.verdict.verdict == bd.DISTINCT
    up, dn = bd.suite_sequences("slit", res.config)["elements"]
    assert math.dist(up.deepest, dn.deepest) < math.dist(up.points[0], dn.points[0])
    assert res.checks["euclidean_limits_coincide"]


@criterion(8, "boundary suites")
def test_c08_comb(record_property):
    res = suite("comb")
    r = [c.rho for c in res.collapse]
    x, _ = res.realizations[0][1].mask.centers(res.realizations[0][1].cells)
    extent = float(x.max() - x.min())
    record_property("detail", "comb: collapse " + ", ".join(f"{v:.3f}" for v in r) + f"; x-extent {extent:.2f}")
    assert res.config.h == 1 / 81 and res.config.domain.levels <= 3
    assert all(b < a for a, b in zip(r, r[1:]))
    assert extent >= 1.5


@criterion(8, "boundary suites")
def test_c08_fan():
    res = suite("fan")
    assert res.config.domain.depth == 2
    els = [p for p in res.pairs if p.role == "element"]
    assert len(els) == 6 and all(p.verdict.verdict == bd.DISTINCT for p in els)
    assert len(res.realizations) == 4
    assert all(r.contains_point(Point(0.0, 0.0)) for _, r in res.realizations)


# ---------------------------------------------------------------------------
# 9: invariance under maps
# ---------------------------------------------------------------------------


@criterion(9, "conformal invariance and quasiconformal distortion")
def test_c09_mobius(record_property):
    s = scn.load(scn.shipped("invariance"))
    f = maps.map_from_dict(s.data["map"])
    rep = maps.invariance_check(f, s.condenser, s.h, s.refine)
    rep2 = maps.invariance_check(maps.disk_automorphism(0.4j, 0.5), s.condenser, s.h, s.refine)
    record_property("detail", f"Mobius ratios {rep.ratio:.4f}, {rep2.ratio:.4f}")
    for r in (rep, rep2):
        assert abs(r.ratio - 1) <= 0.05


@criterion(9, "conformal invariance and quasiconformal distortion")
def test_c09_stretch_capacity(record_property):
    s = scn.load(scn.shipped("invariance"))
    rep = maps.invariance_check(maps.affine_stretch(2.0), s.condenser, s.h, s.refine)
    record_property("detail", f"stretch capacity ratio {rep.ratio:.4f}")
    assert 0.25 * (1 - DELTA) <= rep.ratio <= 4 * (1 + DELTA)


@criterion(9, "conformal invariance and quasiconformal distortion")
def test_c09_stretch_metric(disk_metric, record_property):
    P = _disk_points(np.random.default_rng(9), 20, [((0.0, 0.0), 0.3)], rmax=0.8)
    rep = maps.quasi_isometry_check(maps.affine_stretch(2.0), [(P[2 * k], P[2 * k + 1]) for k in range(10)],
                                    disk_metric)
    record_property("detail", f"stretch metric constant {rep.constant:.3f}")
    assert rep.constant <= 2 * (1 + DELTA)


# ---------------------------------------------------------------------------
# 10: traces
# ---------------------------------------------------------------------------


@criterion(10, "trace suite")
def test_c10_disk_trace(record_property):
    res = suite("disk")
    assert all(p.verdict.verdict == bd.SAME for p in res.pairs if p.role == "control")
    els = [bd.BoundaryElementEstimate(tuple(g), np.zeros((len(g), len(g))), (), res.tol, None, res.config.h)
           for g in res.groups]
    u = st.make_function(Disk(), "harmonic_re_z", 1 / 512)
    rep = st.trace(u, els, res.config)
    errs = []
    for k, e in enumerate(rep.elements):
        errs.append(abs(e.value - math.cos(k * math.pi / 4)))
    record_property("detail", f"disk trace max |tr - cos| {max(errs):.4f}")
    assert len(rep.elements) == 8 and rep.all_consistent
    assert max(errs) <= 1e-2


@criterion(10, "trace suite")
def test_c10_comb_trace(record_property):
    caps = []
    for L in (1, 2, 3):
        cfg = MetricConfig(Comb(L), PlateSpec.of(DiskRegion(Point(0, 0.83), 0.05)),
                           DiskRegion(Point(0, 0.83), 0.12), 1 / 81, Budget(rounds=3))
        el = bd.element([bd.comb_channel(-0.5, L), bd.comb_channel(0.5, L)], cfg, 0.3, check_profiles=False)
        u = st.make_function(Comb(L), "coordinate_x", 1 / 81)
        e = st.trace(u, [el], cfg).elements[0]
        assert e.verdict == st.INCONSISTENT and e.spread >= 0.9
        caps.append(e.trapping_capacity)
    record_property("detail", "comb trapping capacities " + ", ".join(f"{c:.4g}" for c in caps))
    assert caps[0] > caps[1] > caps[2]


@criterion(10, "trace suite")
def test_c10_weak_luzin(record_property):
    u = st.make_function(Disk(), "sqrt_singularity", 1 / 64)
    ok = 0
    for eps in (5.0, 10.0, 20.0, 40.0):
        try:
            rep = st.weak_luzin(u, eps)
        except BudgetExceeded as exc:
            assert exc.report.cap_U > eps
            continue
        ok += 1
        assert rep.cap_U <= eps + rep.error_indicator
    record_property("detail", f"weak Luzin: {ok}/4 budgets met")
    assert ok >= 1


# ---------------------------------------------------------------------------
# 11: reproducibility and runtime
# ---------------------------------------------------------------------------


@criterion(11, "reproducibility and runtime")
def test_c11_byte_identical(tmp_path):
    for sub, name, extra in (("capacity", "annulus", []), ("distance", "disk_distance", []),
                             ("invariance", "invariance", ["--h", str(1 / 64)])):
        outs = []
        for k in range(2):
            out = tmp_path / f"run{k}" / f"{sub}.csv"
            assert cli.main([sub, "--scene", str(scn.shipped(name)), "--out", str(out), *extra]) == 0
            outs.append(out.read_bytes())
            man = json.loads(out.with_name(f"{sub}.manifest.json").read_text())
            assert man["seed"] is not None and man["scene_hash"]
        assert outs[0] == outs[1], sub


@criterion(11, "reproducibility and runtime")
def test_c11_runtime(record_property):
    elapsed = time.perf_counter() - T0
    record_property("detail", f"acceptance wall time {elapsed / 60:.1f} min")
    assert elapsed < 30 * 60
