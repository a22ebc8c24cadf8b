import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from capbound.errors import CurveEscapesDomain, EmptyPlate, UnresolvedFeature
from capbound.geometry import (
    BOUNDARY, INTERIOR, PLATE0, PLATE1, BoxRegion, CantorFan, Comb, Disk, DiskRegion, PlateSpec, Point,
    PolygonDomain, Polyline, Rectangle, Segment, SlitDisk, Snowflake, build_mask, covering_cells,
    domain_from_dict, is_grid_connected, plate_from_dict, rasterize_curve, rasterize_plate,
    shape_from_dict, symmetric_difference_area,
)
from scipy import ndimage

SHIPPED = [Disk(), Rectangle(), SlitDisk(), Comb(2), CantorFan(2), Snowflake(2),
           PolygonDomain(((0, 0), (1, 0), (1, 1), (0, 1)))]


def test_disk_coarse_mask_containment():
    m = build_mask(Disk(), 0.5)
    x, y = m.centers(m.interior_flat)
    assert m.interior_flat.size > 0
    assert np.all(np.hypot(x, y) <= 1 + 0.5)


def test_comb_level3_channel_spans_three_cells():
    comb = Comb(3)
    h = 1 / 81
    assert comb.channel_width(3) / h == pytest.approx(3.0)
    m = build_mask(comb, h)
    # the column x = 0.5 crosses the level-3 channel between the teeth at 1/27 and 2/27
    i = int(round((0.5 - m.origin.x) / h))
    col = m.interior[i]
    ys = m.ys
    inside = ys[col & (ys > 1 / 27 - 1e-9) & (ys < 2 / 27 + 1e-9)]
    assert inside.size == 2  # open channel of width 3h between tooth rows: 2 interior centres
    assert np.allclose(np.diff(inside), h)


def test_comb_level5_unresolved():
    with pytest.raises(UnresolvedFeature):
        build_mask(Comb(5), 1 / 81)


def test_comb_tooth_count():
    for n in (1, 2, 3, 4):
        assert len(Comb(n).teeth()) == 2 * n


def test_segment_plate_cells():
    m = build_mask(Disk(), 0.01)
    cells = rasterize_plate(PlateSpec.of(Segment(Point(0, 0), Point(0.1, 0))), m)
    assert cells.size == 11
    assert is_grid_connected(cells, m, connectivity=1)
    _, y = m.centers(cells)
    assert np.allclose(y, 0.0)


def test_boundary_plate_is_boundary_cells():
    m = build_mask(Disk(), 1 / 32)
    cells = rasterize_plate(PlateSpec.boundary(), m)
    assert np.array_equal(cells, np.flatnonzero(m.cells == BOUNDARY))


def test_point_plate_single_cell():
    m = build_mask(Disk(), 1 / 32)
    p = Point(0.2 + 1e-3, 0.1 - 1e-3)
    assert rasterize_plate(PlateSpec.of(Segment(p, p)), m).size == 1


def test_plate_outside_domain_is_empty():
    m = build_mask(Disk(), 1 / 16)
    with pytest.raises(EmptyPlate):
        rasterize_plate(PlateSpec.of(DiskRegion(Point(3, 3), 0.1)), m)


def test_rasterize_curve_partitions():
    m = build_mask(Disk(), 1 / 32)
    V = DiskRegion(Point(0, 0), 0.25)
    diam = Polyline((Point(-0.9, 0), Point(0.9, 0)))
    inside, outside = rasterize_curve(diam, m, V)
    assert inside.size and outside.size
    assert np.array_equal(np.union1d(inside, outside), covering_cells(diam, m))
    far = Polyline((Point(0.5, 0.5), Point(0.6, 0.5)))
    assert rasterize_curve(far, m, V)[0].size == 0
    near = Polyline((Point(-0.1, 0), Point(0.1, 0)))
    assert rasterize_curve(near, m, V)[1].size == 0


def test_curve_escaping_domain():
    m = build_mask(Disk(), 1 / 32)
    with pytest.raises(CurveEscapesDomain):
        rasterize_curve(Polyline((Point(0, 0), Point(1.2, 0))), m)


def test_slit_blocks_crossing():
    m = build_mask(SlitDisk(), 1 / 32)
    with pytest.raises(CurveEscapesDomain):
        rasterize_curve(Polyline((Point(0.5, 0.2), Point(0.5, -0.2))), m)


def test_fan_sectors_and_slits():
    fan = CantorFan(2)
    assert len(fan.sector_angles()) == 4
    assert len(fan.slits()) == 1 + 1 + 2


@pytest.mark.parametrize("dom", SHIPPED, ids=lambda d: d.kind)
def test_mask_invariants(dom):
    h = 1 / 32 if dom.kind != "comb" else 1 / 27
    m = build_mask(dom, h)
    _, n = ndimage.label(m.interior)
    assert n == 1
    ring = ndimage.binary_dilation(m.interior) & ~m.interior
    assert np.array_equal(ring, m.boundary)
    assert np.array_equal(build_mask.__wrapped__(dom, h).cells, m.cells)  # deterministic


@pytest.mark.parametrize("dom", SHIPPED, ids=lambda d: d.kind)
def test_refinement_stability(dom):
    h = 1 / 32 if dom.kind != "comb" else 1 / 27
    a, b = build_mask(dom, h), build_mask(dom, h / 2)
    assert symmetric_difference_area(a, b) <= 4 * h * dom.perimeter()


def test_with_plates_labels():
    m = build_mask(Disk(), 1 / 16)
    c0 = rasterize_plate(PlateSpec.boundary(), m)
    c1 = rasterize_plate(PlateSpec.of(DiskRegion(Point(0, 0), 0.2)), m)
    mp = m.with_plates(c0, c1)
    assert np.all(mp.cells.flat[c0] == PLATE0) and np.all(mp.cells.flat[c1] == PLATE1)
    assert np.array_equal(mp.base, m.base)


@pytest.mark.parametrize("dom", SHIPPED, ids=lambda d: d.kind)
def test_domain_dict_round_trip(dom):
    assert domain_from_dict(dom.to_dict()) == dom


def test_shape_and_plate_round_trip():
    for s in (Segment(Point(0, 0), Point(1, 0)), DiskRegion(Point(0.1, 0.2), 0.3), BoxRegion(0, 0, 1, 2)):
        assert shape_from_dict(s.to_dict()) == s
    p = PlateSpec.of(DiskRegion(Point(0, 0), 0.2))
    assert plate_from_dict(p.to_dict()) == p


def test_polyline_rejects_repeated_vertices():
    with pytest.raises(ValueError):
        Polyline((Point(0, 0), Point(0, 0), Point(1, 0)))


@given(st.floats(-0.95, 0.95), st.floats(-0.95, 0.95))
def test_cell_of_round_trip(x, y):
    m = build_mask(Disk(), 1 / 32)
    c = m.cell_of([(x, y)])[0]
    cx, cy = m.centers(np.array([c]))
    assert abs(cx[0] - x) <= m.h / 2 + 1e-12 and abs(cy[0] - y) <= m.h / 2 + 1e-12


@given(st.floats(0.0, 2 * math.pi), st.floats(0.05, 0.9))
def test_interior_cells_inside_disk(t, r):
    m = build_mask(Disk(), 1 / 16)
    p = (r * math.cos(t), r * math.sin(t))
    if m.is_interior_point(p):
        x, y = m.centers(m.cell_of([p]))
        assert math.hypot(x[0], y[0]) < 1.0
