import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from capbound.capmetric import (
    Budget, MetricConfig, default_disk_config, equivalence_check, objective, rho, topology_check,
    triangle_check,
)
from capbound.errors import CurveEscapesDomain, PreconditionError
from capbound.geometry import BoxRegion, Disk, DiskRegion, PlateSpec, Point, Polyline, Segment

H = 1 / 32


@pytest.fixture(scope="module")
def cfg():
    return default_disk_config(H, budget=Budget(rounds=2))


def test_identical_points_zero(cfg):
    est = rho((0.5, 0.1), (0.5, 0.1), cfg)
    assert est.value == 0.0 and est.curve.degenerate


def test_symmetry_exact(cfg):
    a = rho((0.6, 0.0), (-0.3, 0.5), cfg)
    b = rho((-0.3, 0.5), (0.6, 0.0), cfg)
    assert a.value == b.value
    assert a.curve.vertices == b.curve.reversed().vertices


def test_estimate_invariants(cfg):
    x, y = Point(0.6, 0.0), Point(-0.5, -0.4)
    est = rho(x, y, cfg)
    assert est.bound_kind == "upper"
    assert est.value == est.term_F + est.term_boundary
    assert est.value > 0
    assert est.curve.vertices[0] == x and est.curve.vertices[-1] == y
    # the returned curve reproduces the value exactly
    assert objective(est.curve, cfg).value == est.value


def test_deterministic(cfg):
    a = rho((0.6, 0.0), (0.0, -0.6), cfg)
    b = rho((0.6, 0.0), (0.0, -0.6), cfg)
    assert a.value == b.value and a.curve == b.curve


def test_small_positive_and_decreasing():
    cfg = default_disk_config(1 / 64, budget=Budget(rounds=2))
    x = (0.6, 0.0)
    vals = [rho(x, (0.6, d), cfg).value for d in (0.1, 0.05)]
    assert 0 < vals[1] < vals[0]


def test_upper_bound_semantics(cfg):
    x, y = Point(0.5, 0.3), Point(-0.5, 0.3)
    arc = Polyline((x, Point(0.0, 0.8), y))
    ext = objective(arc, cfg).value
    assert rho(x, y, cfg, extra_curves=[arc]).value <= ext


def test_budget_monotone():
    base = default_disk_config(H)
    x, y = (0.6, -0.2), (-0.4, 0.55)
    vals = [rho(x, y, base.with_budget(rounds=r)).value for r in (1, 2, 4)]
    assert vals[0] >= vals[1] >= vals[2]


def test_identity_of_indiscernibles(cfg):
    # |x - y| >= 4h gives a strictly positive value
    rng = np.random.default_rng(3)
    for _ in range(3):
        a = rng.uniform(0, 2 * math.pi)
        x = Point(0.6 * math.cos(a), 0.6 * math.sin(a))
        y = Point(x.x + 4 * H, x.y)
        assert rho(x, y, cfg).value > 0


def test_triangle_degenerate(cfg):
    p = Point(0.4, 0.4)
    rep = triangle_check([(p, p, p)], cfg)
    assert rep.passed and rep.worst == 0.0


def test_triangle_collinear_midpoint(cfg):
    x, y = Point(0.7, 0.0), Point(0.3, 0.0)
    z = Point(0.5, 0.0)
    rep = triangle_check([(x, y, z)], cfg)
    assert rep.worst <= 1.10


def test_equivalence_self(cfg):
    rep = equivalence_check(cfg, cfg, [((0.6, 0.0), (0.0, 0.6))])
    assert rep.K == 1.0 and rep.excluded == 0


def test_equivalence_noise_floor_excluded():
    cfg = default_disk_config(H, budget=Budget(rounds=1), noise_floor=1e3)
    rep = equivalence_check(cfg, cfg, [((0.6, 0.0), (0.0, 0.6))])
    assert rep.excluded == 1 and math.isnan(rep.K)


def test_equivalence_requires_same_domain(cfg):
    other = MetricConfig(Disk(Point(0, 0), 1.5), cfg.F, cfg.V, H)
    with pytest.raises(PreconditionError):
        equivalence_check(cfg, other, [])


def test_topology_small():
    cfg = default_disk_config(H, budget=Budget(rounds=1))
    rep = topology_check((0.6, 0.0), [0.0, 0.2, 0.1], cfg, n_angles=4)
    assert rep.min_rho[0] == 0.0
    assert all(m > 0 for m in rep.min_rho[1:])
    assert rep.all_positive


def test_containment_chain_enforced():
    with pytest.raises(PreconditionError):
        MetricConfig(Disk(), PlateSpec.of(DiskRegion(Point(0, 0), 0.3)), DiskRegion(Point(0, 0), 0.2), H)
    with pytest.raises(PreconditionError):
        MetricConfig(Disk(), PlateSpec.of(DiskRegion(Point(0, 0), 0.1)), DiskRegion(Point(0, 0), 1.0), H)
    with pytest.raises(PreconditionError):
        MetricConfig(Disk(), PlateSpec.boundary(), DiskRegion(Point(0, 0), 0.5), H)
    with pytest.raises(PreconditionError):
        MetricConfig(Disk(), PlateSpec.of(DiskRegion(Point(-0.3, 0), 0.05), DiskRegion(Point(0.3, 0), 0.05)),
                     BoxRegion(-0.5, -0.2, 0.5, 0.2), H)


def test_exterior_point_rejected(cfg):
    with pytest.raises(CurveEscapesDomain):
        rho((0.0, 0.0), (1.5, 0.0), cfg)


def test_objective_partition(cfg):
    # a curve inside V contributes only the boundary term; far from V only the F term
    inside = objective(Polyline((Point(-0.15, 0.15), Point(0.15, 0.15))), cfg)
    assert inside.term_F == 0.0 and inside.term_boundary > 0
    outside = objective(Polyline((Point(0.5, 0.0), Point(0.6, 0.0))), cfg)
    assert outside.term_boundary == 0.0 and outside.term_F > 0


@settings(max_examples=8)
@given(st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi), st.floats(0.35, 0.8), st.floats(0.35, 0.8))
def test_symmetry_property(cfg, a, b, r1, r2):
    x = (r1 * math.cos(a), r1 * math.sin(a))
    y = (r2 * math.cos(b), r2 * math.sin(b))
    assert rho(x, y, cfg).value == rho(y, x, cfg).value
