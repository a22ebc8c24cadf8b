import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from capbound import boundary as bd
from capbound import sobolev_trace as st_
from capbound.capmetric import Budget, default_disk_config
from capbound.errors import BudgetExceeded, InfiniteEnergy, PreconditionError
from capbound.geometry import Disk, Point


@pytest.fixture(scope="module")
def cfg():
    return default_disk_config(1 / 32, budget=Budget(rounds=1))


def test_coordinate_x_energy_is_area():
    u = st_.make_function(Disk(), "coordinate_x", 1 / 64)
    assert u.energy == pytest.approx(math.pi, rel=0.03)


def test_constant_energy_zero():
    u = st_.make_function(Disk(), "constant", 1 / 32)
    assert u.energy == 0.0


def test_sqrt_singularity_finite_and_stable():
    u = st_.make_function(Disk(), "sqrt_singularity", 1 / 64)
    trend = [e for _, e in st_.energy_trend(Disk(), "sqrt_singularity", 1 / 64)]
    assert len(trend) == 3
    assert all(b / a < 1.5 for a, b in zip(trend, trend[1:]))
    assert math.isfinite(u.energy) and u.energy > 0


def test_radial_log_rejected():
    with pytest.raises(InfiniteEnergy):
        st_.make_function(Disk(), "radial_log", 1 / 64)


def test_unknown_tag():
    with pytest.raises(ValueError):
        st_.make_function(Disk(), "bessel", 1 / 32)


def test_values_nan_off_interior():
    u = st_.make_function(Disk(), "coordinate_x", 1 / 16)
    assert np.isnan(u.values[~u.mask.interior]).all()
    assert np.isfinite(u.values[u.mask.interior]).all()
    with pytest.raises(PreconditionError):
        u.at((2.0, 0.0))


def test_energy_scaling_exact_power_of_two():
    u = st_.make_function(Disk(), "sqrt_singularity", 1 / 32)
    assert u.scaled(2.0).energy == 4.0 * u.energy


@given(st.floats(-5, 5))
def test_energy_scaling(alpha):
    u = st_.sample(Disk(), "sqrt_singularity", 1 / 16)
    assert u.scaled(alpha).energy == pytest.approx(alpha ** 2 * u.energy, rel=1e-12, abs=1e-300)


def test_weak_luzin_smooth_empty():
    rep = st_.weak_luzin(st_.make_function(Disk(), "coordinate_x", 1 / 32), 0.1)
    assert rep.empty and rep.cap_U == 0.0
    assert rep.metric_kind == "euclidean"
    assert all(math.isfinite(m) for _, m in rep.modulus)


def test_weak_luzin_sqrt_small_set_near_singularity():
    u = st_.make_function(Disk(), "sqrt_singularity", 1 / 32)
    rep = st_.weak_luzin(u, 50.0)
    assert not rep.empty
    x, y = u.mask.centers(rep.U_cells)
    assert np.hypot(x - 1.0, y).max() < 0.3
    assert rep.cap_U <= rep.epsilon + rep.error_indicator


def test_weak_luzin_zero_budget():
    u = st_.make_function(Disk(), "sqrt_singularity", 1 / 32)
    with pytest.raises(BudgetExceeded) as exc:
        st_.weak_luzin(u, 0.0)
    assert exc.value.report.cap_U > 0


def test_strong_luzin_smooth_and_constant():
    # F must hug the boundary for rho to separate boundary points above the grid floor
    suite = bd.suite_settings("disk", h=1 / 64, budget=Budget(rounds=1)).config
    for tag in ("coordinate_x", "constant"):
        rep = st_.strong_luzin(st_.make_function(Disk(), tag, 1 / 64), 0.1, suite)
        assert rep.empty and rep.metric_kind == "capacitary"
        assert all(math.isfinite(m) for _, m in rep.modulus)


def test_strong_luzin_comb_excises_channels():
    suite = bd.suite_settings("comb", budget=Budget(rounds=1)).config
    u = st_.make_function(suite.domain, "coordinate_x", suite.h, check=False)
    rep = st_.strong_luzin(u, 100.0, suite)
    assert not rep.empty
    _, y = u.mask.centers(rep.U_cells)
    assert y.min() < 1 / 9  # reaches the deep channels
    with pytest.raises(BudgetExceeded):
        st_.strong_luzin(u, 0.0, suite)


def _elements(cfg):
    return [bd.element([bd.radial(k * math.pi / 2, range(1, 5))], cfg, 1.0, check_profiles=False)
            for k in range(4)]


def test_trace_constant(cfg):
    rep = st_.trace(st_.make_function(Disk(), "constant", 1 / 32), _elements(cfg), cfg)
    assert rep.all_consistent
    assert all(e.spread == 0.0 and e.value == 1.0 for e in rep.elements)


def test_trace_linearity(cfg):
    els = _elements(cfg)
    u = st_.make_function(Disk(), "coordinate_x", 1 / 32)
    v = st_.make_function(Disk(), "sqrt_singularity", 1 / 32).scaled(0.1)
    v = st_.GridFunction(v.values, u.mask, "v")
    tu, tv, tw = (st_.trace(f, els, cfg) for f in (u, v, u + v))
    for a, b, c in zip(tu.elements, tv.elements, tw.elements):
        if a.verdict == b.verdict == "CONSISTENT":
            assert c.value == pytest.approx(a.value + b.value, abs=tu.tol + tv.tol)


def test_trace_inconsistent_records_trapping(cfg):
    a = bd.BoundarySequence((Point(0.5, 0.5), Point(0.6, 0.6), Point(0.65, 0.65)), "a")
    b = bd.BoundarySequence((Point(-0.5, 0.5), Point(-0.6, 0.6), Point(-0.65, 0.65)), "b")
    el = bd.BoundaryElementEstimate((a, b), np.zeros((2, 2)), (), 1.0)
    rep = st_.trace(st_.make_function(Disk(), "coordinate_x", 1 / 32), [el], cfg)
    e = rep.elements[0]
    assert e.verdict == "INCONSISTENT"
    # limit = mean of the last three samples: 2 * (0.5 + 0.6 + 0.65) / 3
    assert e.spread == pytest.approx(2 * 1.75 / 3, abs=2 / 32)
    assert e.trapping_capacity > 0


def test_trapping_capacity_shrinks_toward_boundary(cfg):
    caps = [st_.trapping_capacity(cfg, Point(r, 0.0)) for r in (0.5, 0.75, 0.9)]
    assert caps[0] > caps[1] > caps[2] > 0
