import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dispgrid.errors import ExtentError, GeometryError, InputError
from dispgrid.grid import (
    AdminLevel,
    AdminLocator,
    AdminUnit,
    GeoPoint,
    GridCellId,
    GridSpec,
    cells_intersecting,
    intersection_areas,
    load_admin_units,
    point_in_admin,
    point_to_cell,
    unit_to_feature,
)

from .conftest import make_unit
from .oracles import winding_inside


def test_origin_corner_is_grid_0(grid):
    assert str(point_to_cell(GeoPoint(-180.0, -90.0), grid)) == "grid_0"


def test_indexing_formula(grid):
    cell = point_to_cell(GeoPoint(39.1, 7.9), grid)
    assert grid.cell_row_col(cell) == (195, 438)
    assert str(cell) == "grid_140838"


def test_east_edge_is_exclusive(grid):
    assert str(point_to_cell(GeoPoint(-179.5, -90.0), grid)) == "grid_1"


def test_north_edge_is_exclusive(local_grid):
    assert point_to_cell(GeoPoint(0.1, 0.5), local_grid) == GridCellId(10)


def test_out_of_extent_names_the_coordinate(local_grid):
    with pytest.raises(ExtentError) as err:
        point_to_cell(GeoPoint(5.0, 1.0), local_grid)
    assert err.value.lon == 5.0 and "5.0" in str(err.value)


@pytest.mark.parametrize("kwargs", [
    {"cell_size": 0},
    {"origin_lon": 180.0},
    {"origin_lat": -91.0},
    {"n_cols": 722},
    {"n_rows": 362},
])
def test_gridspec_invariants(kwargs):
    with pytest.raises(ValueError):
        GridSpec(**kwargs)


def test_cell_id_parse_round_trip():
    assert GridCellId.parse("grid_10673") == GridCellId(10673)
    with pytest.raises(InputError):
        GridCellId.parse("cell_3")


@given(st.integers(0, 359), st.integers(0, 719))
def test_cell_id_round_trip(row, col):
    g = GridSpec()
    cell = g.cell(row, col)
    assert g.cell_row_col(GridCellId.parse(str(cell))) == (row, col)


@given(st.floats(-180, 179.999, allow_nan=False), st.floats(-90, 89.999, allow_nan=False))
def test_every_point_in_exactly_one_cell(lon, lat):
    g = GridSpec()
    cell = point_to_cell(GeoPoint(lon, lat), g)
    west, south, east, north = g.cell_bounds(cell)
    assert west <= lon < east and south <= lat < north
    assert point_to_cell(GeoPoint(lon, lat), g) == cell


def test_point_in_lone_square():
    unit = make_unit("A", 0, 0, 1, 1)
    assert point_in_admin(GeoPoint(0.5, 0.5), [unit]) == "A"


def test_point_outside_all_polygons():
    assert point_in_admin(GeoPoint(5, 5), [make_unit("A", 0, 0, 1, 1)]) is None


def test_shared_edge_goes_to_smallest_id():
    a = make_unit("B", 0, 0, 1, 1)
    b = make_unit("A", 1, 0, 2, 1)
    assert point_in_admin(GeoPoint(1.0, 0.5), [a, b]) == "A"
    assert point_in_admin(GeoPoint(1.0, 0.5), [b, a]) == "A"


def test_hole_is_outside():
    outer = ((0, 0), (4, 0), (4, 4), (0, 4), (0, 0))
    hole = ((1, 1), (1, 3), (3, 3), (3, 1), (1, 1))
    unit = AdminUnit("TST", AdminLevel.ADMIN2, "donut", "D", "P", ((outer, hole),))
    assert point_in_admin(GeoPoint(2, 2), [unit]) is None
    assert point_in_admin(GeoPoint(0.5, 2), [unit]) == "D"


def test_degenerate_polygon_raises():
    ring = ((0, 0), (1, 1), (0, 0), (0, 0))
    unit = AdminUnit("TST", AdminLevel.ADMIN2, "flat", "F", "P", ((ring,),))
    with pytest.raises(GeometryError):
        point_in_admin(GeoPoint(0.5, 0.5), [unit])


def test_unclosed_ring_rejected():
    with pytest.raises(GeometryError):
        AdminUnit("TST", AdminLevel.ADMIN2, "open", "O", "P", ((((0, 0), (1, 0), (1, 1)),),))


def test_parent_required_below_admin0():
    with pytest.raises(GeometryError):
        make_unit("X", 0, 0, 1, 1, parent=None)


def test_locator_rejects_mixed_levels():
    with pytest.raises(GeometryError):
        AdminLocator([make_unit("A", 0, 0, 1, 1), make_unit("B", 1, 0, 2, 1, level=AdminLevel.ADMIN1)])


def test_locator_matches_linear_scan():
    units = [make_unit(f"U{i}", i * 0.7, 0, i * 0.7 + 0.7, 1) for i in range(6)]
    locator = AdminLocator(units)
    rng = np.random.default_rng(3)
    for lon, lat in rng.uniform([-0.2, -0.2], [4.5, 1.2], size=(300, 2)):
        p = GeoPoint(float(lon), float(lat))
        assert locator.locate(p) == point_in_admin(p, units)


def test_unit_inside_one_cell(local_grid):
    unit = make_unit("A", 0.1, 0.1, 0.3, 0.4)
    assert cells_intersecting(unit, local_grid) == {GridCellId(0)}


def test_rectangle_spanning_two_cells(local_grid):
    unit = make_unit("A", 0.0, 0.0, 1.0, 0.5)
    assert cells_intersecting(unit, local_grid) == {GridCellId(0), GridCellId(1)}


IRREGULAR = ((0.13, 0.07), (1.37, 0.21), (1.62, 0.93), (1.12, 1.33), (0.71, 0.88), (0.22, 1.41), (0.13, 0.07))


def test_irregular_polygon_matches_dense_rasterisation(local_grid):
    unit = AdminUnit("TST", AdminLevel.ADMIN2, "odd", "ODD", "P", ((IRREGULAR,),))
    # oracle: sample every 0.01 deg at cell-interior offsets, winding-number containment
    xs = np.arange(0.005, 2.0, 0.01)
    ys = np.arange(0.005, 2.0, 0.01)
    expected = set()
    for x in xs:
        for y in ys:
            if winding_inside(float(x), float(y), IRREGULAR):
                expected.add(GridCellId(int(y // 0.5) * local_grid.n_cols + int(x // 0.5)))
    assert cells_intersecting(unit, local_grid) == expected
    assert len(expected) > 4


def test_intersection_areas_sum_to_polygon_area(local_grid):
    unit = AdminUnit("TST", AdminLevel.ADMIN2, "odd", "ODD", "P", ((IRREGULAR,),))
    shoelace = 0.5 * abs(sum(x1 * y2 - x2 * y1 for (x1, y1), (x2, y2) in zip(IRREGULAR, IRREGULAR[1:])))
    assert math.isclose(sum(intersection_areas(unit, local_grid).values()), shoelace, rel_tol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 3.99), st.floats(0.01, 3.99))
def test_point_cell_within_unit_cells(lon, lat):
    g = GridSpec(origin_lon=0.0, origin_lat=0.0, n_cols=10, n_rows=10)
    unit = AdminUnit("TST", AdminLevel.ADMIN2, "odd", "ODD", "P", ((IRREGULAR,),))
    p = GeoPoint(lon, lat)
    if point_in_admin(p, [unit]) == "ODD":
        assert point_to_cell(p, g) in cells_intersecting(unit, g)


def test_geojson_round_trip(tmp_path):
    units = [
        make_unit("ETH", 38, 7, 40, 9, level=AdminLevel.ADMIN0, parent=None),
        make_unit("ETH-OR", 38, 7, 40, 9, level=AdminLevel.ADMIN1, parent="ETH"),
        make_unit("ETH-ARSI", 38.5, 7.5, 39.5, 8.5, parent="ETH-OR", name="Arsi"),
    ]
    path = tmp_path / "admin.geojson"
    path.write_text(json.dumps({"type": "FeatureCollection", "features": [unit_to_feature(u) for u in units]}))
    loaded = load_admin_units(path)
    assert [u.canonical_id for u in loaded] == ["ETH", "ETH-OR", "ETH-ARSI"]
    assert loaded[2].name == "Arsi" and loaded[2].parent_id == "ETH-OR"
    assert loaded[2].geometry == units[2].geometry


def test_geojson_polygon_and_duplicates(tmp_path):
    feature = {
        "type": "Feature",
        "properties": {"country": "TST", "level": "admin2", "name": "x", "id": "X", "parent_id": "P"},
        "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 0]]]},
    }
    path = tmp_path / "a.geojson"
    path.write_text(json.dumps({"type": "FeatureCollection", "features": [feature]}))
    assert load_admin_units(path)[0].level is AdminLevel.ADMIN2
    path.write_text(json.dumps({"type": "FeatureCollection", "features": [feature, feature]}))
    with pytest.raises(InputError):
        load_admin_units(path)
