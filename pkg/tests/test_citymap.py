import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridloc.channel import UavPose
from hybridloc.citymap import (Building, _segment_blocked, CityMap, GeometryError, classify,
                               generate_city, is_los, los_matrix, sample_street_points)
from oracles import sampled_los


def wall_map(height):
    return CityMap((-10.0, -10.0), (110.0, 10.0), (Building((40.0, -5.0), (60.0, 5.0), height),))


def test_overhead_uav_is_los():
    city = generate_city(((0, 0), (200, 200)), 16, rng_seed=3)
    user = sample_street_points(city, 1, np.random.default_rng(0))[0]
    assert is_los(city, (user[0], user[1], 100.0), user)


def test_wall_blocks_low_link():
    # segment height at x=40 is 6 m, below the 20 m roof
    assert not is_los(wall_map(20.0), (0.0, 0.0, 10.0), (100.0, 0.0))
    assert not sampled_los(wall_map(20.0).boxes, (0.0, 0.0, 10.0), (100.0, 0.0))[0]


def test_low_wall_is_cleared():
    # segment stays at >= 4 m over the footprint
    assert is_los(wall_map(3.0), (0.0, 0.0, 10.0), (100.0, 0.0))
    assert sampled_los(wall_map(3.0).boxes, (0.0, 0.0, 10.0), (100.0, 0.0))[0]


def test_roofline_touch_counts_as_los():
    # the segment enters the footprint (x=60) at exactly 4 m
    assert is_los(wall_map(4.0), (0.0, 0.0, 10.0), (100.0, 0.0))
    assert not is_los(wall_map(4.0 + 1e-9), (0.0, 0.0, 10.0), (100.0, 0.0))


def test_edge_graze_counts_as_los():
    city = CityMap((0, 0), (100, 100), (Building((40, 40), (60, 60), 30.0),))
    # runs exactly along the y=40 face
    assert is_los(city, (10.0, 40.0, 5.0), (90.0, 40.0))
    assert not is_los(city, (10.0, 40.5, 5.0), (90.0, 40.5))


def test_out_of_extent_raises():
    with pytest.raises(GeometryError):
        is_los(wall_map(3.0), (0.0, 0.0, 10.0), (200.0, 0.0))
    with pytest.raises(GeometryError):
        is_los(wall_map(3.0), (0.0, 0.0, -1.0), (50.0, 0.0))


def test_classify_empty_and_overhead():
    city = wall_map(20.0)
    assert classify(city, [], (100.0, 0.0)).shape == (0,)
    poses = [UavPose((100.0, 0.0, z), 0.3) for z in (20.0, 50.0, 80.0)]
    assert classify(city, poses, (100.0, 0.0)).tolist() == [1, 1, 1]


def test_classify_matches_per_pose_oracle():
    city = wall_map(20.0)
    poses = [UavPose((0.0, 0.0, 10.0)), UavPose((100.0, 0.0, 30.0)), UavPose((0.0, 0.0, 90.0)),
             UavPose((50.0, 8.0, 15.0))]
    expected = [int(sampled_los(city.boxes, p.position, (100.0, 0.0))[0]) for p in poses]
    assert classify(city, poses, (100.0, 0.0)).tolist() == expected
    assert expected == [0, 1, 1, 1]


def test_generate_city_empty():
    city = generate_city(((0, 0), (50, 50)), 0, rng_seed=1)
    assert city.buildings == ()
    rng = np.random.default_rng(0)
    uav = np.column_stack([rng.uniform(0, 50, 50), rng.uniform(0, 50, 50), rng.uniform(1, 100, 50)])
    assert los_matrix(city, uav, rng.uniform(0, 50, (20, 2))).all()


def test_generate_city_deterministic():
    a = generate_city(((0, 0), (300, 300)), 30, rng_seed=7)
    b = generate_city(((0, 0), (300, 300)), 30, rng_seed=7)
    c = generate_city(((0, 0), (300, 300)), 30, rng_seed=8)
    assert a == b
    assert a != c


def test_generated_heights_clamped():
    city = generate_city(((0, 0), (4000, 4000)), 1000, rng_seed=2)
    h = np.array([b.height for b in city.buildings])
    assert len(h) == 1000
    assert h.min() >= 5.0 and h.max() <= 40.0
    assert h.min() == 5.0  # lower clamp is active for the default scale


def test_generated_buildings_disjoint_and_inside():
    city = generate_city(((0, 0), (300, 200)), 40, rng_seed=11)
    assert city.overlapping_pairs() == []
    for b in city.buildings:
        assert 0 <= b.footprint_min[0] < b.footprint_max[0] <= 300
        assert 0 <= b.footprint_min[1] < b.footprint_max[1] <= 200


def test_infeasible_building_count():
    with pytest.raises(GeometryError):
        generate_city(((0, 0), (50, 50)), 100, rng_seed=0)


def test_map_json_round_trip(tmp_path):
    city = generate_city(((0, 0), (200, 200)), 9, rng_seed=4)
    path = tmp_path / "map.json"
    city.save(path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"extent", "buildings"}
    assert set(doc["buildings"][0]) == {"min", "max", "height"}
    assert CityMap.load(path) == city


def test_loader_validates(tmp_path):
    bad = {"extent": [[0, 0], [10, 10]], "buildings": [{"min": [5, 5], "max": [20, 8], "height": 3}]}
    with pytest.raises(GeometryError):
        CityMap.from_dict(bad)
    with pytest.raises(GeometryError):
        CityMap.from_dict({"buildings": []})


def test_loader_warns_on_overlap(caplog):
    doc = {"extent": [[0, 0], [10, 10]], "buildings": [
        {"min": [1, 1], "max": [5, 5], "height": 3}, {"min": [4, 4], "max": [8, 8], "height": 6}]}
    CityMap.from_dict(doc)
    assert "overlapping" in caplog.text


def test_nonzero_receiver_height():
    city = CityMap((-10.0, -10.0), (110.0, 10.0), (Building((40.0, -5.0), (60.0, 5.0), 7.0),),
                   receiver_height=2.0)
    # with the receiver lifted to 2 m the segment enters the footprint at 2 + 0.4*8 = 5.2 m
    assert not is_los(city, (0.0, 0.0, 10.0), (100.0, 0.0))
    assert sampled_los(city.boxes, (0.0, 0.0, 10.0), (100.0, 0.0), user_z=2.0)[0] is False


segment_strategy = st.tuples(
    st.floats(0, 200), st.floats(0, 200), st.floats(1, 120),
    st.floats(0, 200), st.floats(0, 200),
)
CITY = generate_city(((0, 0), (200, 200)), 16, rng_seed=5)


@settings(max_examples=300, deadline=None)
@given(segment_strategy)
def test_los_symmetric_in_endpoint_roles(seg):
    x, y, z, ux, uy = seg
    b = CITY.boxes
    assert _segment_blocked(ux, uy, 0.0, x, y, z, b) == _segment_blocked(x, y, z, ux, uy, 0.0, b)


@settings(max_examples=200, deadline=None)
@given(segment_strategy, st.floats(0.1, 100))
def test_los_monotone_in_altitude(seg, dz):
    x, y, z, ux, uy = seg
    if is_los(CITY, (x, y, z), (ux, uy)):
        assert is_los(CITY, (x, y, z + dz), (ux, uy))
