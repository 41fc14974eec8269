"""Trip parsing, spatial/temporal aggregation, and synthetic generation."""

import datetime

import numpy as np
import pytest

from robust_dispatch.ingest import (
    DemandSample,
    GeneratorComponent,
    GeneratorConfig,
    OutOfBoundsError,
    RegionGrid,
    SampleSet,
    TimeDiscretization,
    TripRecord,
    aggregate_demand,
    assign_region,
    build_weight_matrix,
    estimate_transition,
    generator_config_from_json,
    generator_config_to_json,
    group_samples,
    parse_trips,
    partition,
    read_sample_archive,
    synth_generate,
    trips_to_csv,
    write_sample_archive,
)

GRID = RegionGrid(bbox=(0.0, 0.0, 2.0, 1.0), rows=1, cols=2)
HOURLY = TimeDiscretization(slot_seconds=3600)

GOOD_CSV = """date,pickup_time,dropoff_time,pickup_lon,pickup_lat,dropoff_lon,dropoff_lat
2024-03-01,00:10:00,00:25:00,0.5,0.5,1.5,0.5
2024-03-01,00:40:00,01:05:00,1.5,0.5,0.5,0.5
2024-03-01,01:10:00,01:20:00,1.5,0.5,1.5,0.5
2024-03-02,00:30:00,00:45:00,0.5,0.5,0.5,0.5
"""


# ---------------------------------------------------------------------------
# parsing


def test_parse_trips_happy_path():
    result = parse_trips(GOOD_CSV)
    assert len(result.trips) == 4
    assert result.skipped == 0
    first = result.trips[0]
    assert first.date == datetime.date(2024, 3, 1)
    assert first.pickup_time == 600
    assert first.dropoff_time == 1500
    assert first.pickup_pos == (0.5, 0.5)


def test_parse_trips_skips_bad_rows():
    text = GOOD_CSV + (
        "not-a-date,00:10:00,00:20:00,0.5,0.5,0.5,0.5\n"  # bad date
        "2024-03-03,27:00:00,27:10:00,0.5,0.5,0.5,0.5\n"  # bad hour
        "2024-03-03,10:00:00,09:00:00,0.5,0.5,0.5,0.5\n"  # dropoff precedes pickup
        "2024-03-03,10:00:00,10:10:00,400.0,0.5,0.5,0.5\n"  # longitude range
    )
    result = parse_trips(text)
    assert len(result.trips) == 4
    assert result.skipped == 4
    assert sum(result.skip_reasons.values()) == 4


def test_parse_trips_missing_column_is_hard_error():
    with pytest.raises(ValueError, match="missing"):
        parse_trips("date,pickup_time\n2024-03-01,00:10:00\n")


def test_parse_trips_schema_remap():
    text = (
        "day,pu,do,plon,plat,dlon,dlat\n"
        "2024-03-01,00:10:00,00:20:00,0.5,0.5,1.5,0.5\n"
    )
    schema = {
        "date": "day",
        "pickup_time": "pu",
        "dropoff_time": "do",
        "pickup_lon": "plon",
        "pickup_lat": "plat",
        "dropoff_lon": "dlon",
        "dropoff_lat": "dlat",
    }
    result = parse_trips(text, schema=schema)
    assert len(result.trips) == 1 and result.skipped == 0


def test_trips_round_trip_through_csv():
    trips = parse_trips(GOOD_CSV).trips
    again = parse_trips(trips_to_csv(trips)).trips
    assert again == trips


def test_trip_record_validation():
    kwargs = dict(
        date=datetime.date(2024, 1, 1),
        pickup_time=100,
        dropoff_time=200,
        pickup_pos=(0.5, 0.5),
        dropoff_pos=(0.5, 0.5),
    )
    TripRecord(**kwargs)
    with pytest.raises(ValueError):
        TripRecord(**{**kwargs, "pickup_time": -1})
    with pytest.raises(ValueError):
        TripRecord(**{**kwargs, "dropoff_time": 50})
    with pytest.raises(ValueError):
        TripRecord(**{**kwargs, "pickup_pos": (0.5, 99.0 + 1.0e3)})


# ---------------------------------------------------------------------------
# spatial grid


def test_assign_region_interior_and_edges():
    grid = RegionGrid(bbox=(0.0, 0.0, 2.0, 2.0), rows=2, cols=2)
    assert assign_region((0.5, 0.5), grid) == 0
    assert assign_region((1.5, 0.5), grid) == 1
    assert assign_region((0.5, 1.5), grid) == 2
    assert assign_region((1.5, 1.5), grid) == 3
    # interior boundaries belong to the upper cell (half-open [lo, hi))
    assert assign_region((1.0, 0.5), grid) == 1
    assert assign_region((0.5, 1.0), grid) == 2
    # the closed top/right bbox edges fold into the last row/column
    assert assign_region((2.0, 2.0), grid) == 3
    assert assign_region((2.0, 0.0), grid) == 1
    with pytest.raises(OutOfBoundsError):
        assign_region((2.0001, 1.0), grid)


def test_grid_validation_and_centers():
    with pytest.raises(ValueError):
        RegionGrid(bbox=(0.0, 0.0, 0.0, 1.0), rows=1, cols=1)
    with pytest.raises(ValueError):
        RegionGrid(bbox=(0.0, 0.0, 1.0, 1.0), rows=0, cols=1)
    assert GRID.n == 2
    assert GRID.cell_center(0) == (0.5, 0.5)
    assert GRID.cell_center(1) == (1.5, 0.5)


def test_time_discretization():
    assert HOURLY.slots_per_day == 24
    assert HOURLY.slot_of(0) == 0
    assert HOURLY.slot_of(3599) == 0
    assert HOURLY.slot_of(3600) == 1
    with pytest.raises(ValueError):
        TimeDiscretization(slot_seconds=7000)  # does not divide the day


# ---------------------------------------------------------------------------
# aggregation


def test_aggregate_demand_hand_count():
    trips = parse_trips(GOOD_CSV).trips
    samples = aggregate_demand(trips, GRID, HOURLY, tau=1)
    by_key = {(s.date.isoformat(), s.t): s.r_c for s in samples}
    # 2024-03-01 slot 0: one pickup in region 0 (lon .5) + one in region 1
    np.testing.assert_array_equal(by_key[("2024-03-01", 0)], [1.0, 1.0])
    # slot 1: one pickup in region 1
    np.testing.assert_array_equal(by_key[("2024-03-01", 1)], [0.0, 1.0])
    np.testing.assert_array_equal(by_key[("2024-03-02", 0)], [1.0, 0.0])
    # every (date, slot) window is emitted, most of them zero
    assert len(samples) == 2 * 24


def test_aggregate_demand_tau_windows():
    trips = parse_trips(GOOD_CSV).trips
    samples = aggregate_demand(trips, GRID, HOURLY, tau=2)
    # windows per date: slots_per_day - tau + 1
    assert len(samples) == 2 * 23
    first = next(
        s for s in samples if s.date == datetime.date(2024, 3, 1) and s.t == 0
    )
    np.testing.assert_array_equal(first.r_c, [1.0, 1.0, 0.0, 1.0])
    assert first.dim == 4


def test_estimate_transition_counts_and_uniform_fallback():
    trips = parse_trips(GOOD_CSV).trips
    # slot 0 on both dates: region0 -> region1, region1 -> region0,
    # region0 -> region0
    tm = estimate_transition(trips, GRID, HOURLY, slot=0)
    np.testing.assert_allclose(tm.P, [[0.5, 0.5], [1.0, 0.0]])
    # a slot with no trips falls back to uniform rows
    tm_empty = estimate_transition(trips, GRID, HOURLY, slot=5)
    np.testing.assert_allclose(tm_empty.P, np.full((2, 2), 0.5))


def test_build_weight_matrix_structure():
    grid = RegionGrid(bbox=(0.0, 0.0, 2.0, 2.0), rows=2, cols=2)
    W = build_weight_matrix(grid, scale=2.0)
    assert W.shape == (4, 4)
    np.testing.assert_array_equal(np.diag(W), np.zeros(4))
    np.testing.assert_array_equal(W, W.T)
    # neighboring cells are one unit apart, diagonal cells two
    assert W[0, 1] == pytest.approx(2.0)
    assert W[0, 3] == pytest.approx(4.0)
    with pytest.raises(ValueError):
        build_weight_matrix(grid, scale=0.0)


# ---------------------------------------------------------------------------
# sample containers


def test_sample_set_validation():
    d = datetime.date(2024, 1, 1)
    good = DemandSample(date=d, t=3, label="wd", r_c=np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        DemandSample(date=d, t=3, label="wd", r_c=np.array([-1.0, 2.0]))
    with pytest.raises(ValueError):
        SampleSet(t=4, label="wd", samples=[good])  # t mismatch
    with pytest.raises(ValueError):
        SampleSet(
            t=3,
            label="wd",
            samples=[good, DemandSample(date=d, t=3, label="wd", r_c=np.ones(3))],
        )
    sset = SampleSet(t=3, label="wd", samples=[good, good])
    assert len(sset) == 2
    assert sset.matrix().shape == (2, 2)


def test_partition_by_weekday():
    trips = parse_trips(GOOD_CSV).trips
    samples = aggregate_demand(trips, GRID, HOURLY, tau=1)
    sets = partition(
        samples, lambda d: "weekend" if d.weekday() >= 5 else "weekday"
    )
    # 2024-03-01 is a Friday, 2024-03-02 a Saturday
    assert (0, "weekday") in sets and (0, "weekend") in sets
    assert all(s.label == "weekday" for s in sets[(0, "weekday")].samples)


def test_group_samples_keys():
    trips = parse_trips(GOOD_CSV).trips
    samples = aggregate_demand(trips, GRID, HOURLY, tau=1, label="all")
    sets = group_samples(samples)
    assert set(sets) == {(t, "all") for t in range(24)}
    assert len(sets[(0, "all")]) == 2


def test_sample_archive_round_trip(tmp_path):
    trips = parse_trips(GOOD_CSV).trips
    sets = group_samples(aggregate_demand(trips, GRID, HOURLY, tau=2))
    written = write_sample_archive(tmp_path, sets)
    assert len(written) == len(sets)
    back = read_sample_archive(tmp_path)
    assert set(back) == set(sets)
    for key in sets:
        np.testing.assert_array_equal(back[key].matrix(), sets[key].matrix())
        assert [s.date for s in back[key].samples] == [
            s.date for s in sets[key].samples
        ]


# ---------------------------------------------------------------------------
# synthetic generation


def make_config(**overrides):
    base = dict(
        n=2,
        tau=1,
        t=0,
        n_samples=40,
        components=(
            GeneratorComponent(
                label="calm",
                weight=0.7,
                mean=np.array([3.0, 4.0]),
                cov=0.25 * np.eye(2),
            ),
            GeneratorComponent(
                label="surge",
                weight=0.3,
                mean=np.array([9.0, 2.0]),
                cov=np.diag([1.0, 0.04]),
            ),
        ),
    )
    base.update(overrides)
    return GeneratorConfig(**base)


def test_synth_deterministic_and_labeled():
    cfg = make_config()
    a = synth_generate(cfg, seed=7)
    b = synth_generate(cfg, seed=7)
    assert len(a) == 40
    assert all(x.r_c.tolist() == y.r_c.tolist() for x, y in zip(a, b))
    assert all(x.label == y.label for x, y in zip(a, b))
    assert {s.label for s in a} <= {"calm", "surge"}
    c = synth_generate(cfg, seed=8)
    assert any(x.r_c.tolist() != y.r_c.tolist() for x, y in zip(a, c))


def test_synth_truncates_at_zero():
    cfg = make_config(
        n_samples=200,
        components=(
            GeneratorComponent(
                label="all",
                weight=1.0,
                mean=np.array([0.1, 0.1]),
                cov=4.0 * np.eye(2),
            ),
        ),
    )
    samples = synth_generate(cfg, seed=3)
    mat = np.array([s.r_c for s in samples])
    assert mat.min() == 0.0  # truncation visibly active
    assert np.all(mat >= 0)


def test_generator_component_validation():
    with pytest.raises(ValueError):
        GeneratorComponent(
            label="x", weight=-1.0, mean=np.zeros(2), cov=np.eye(2)
        )
    with pytest.raises(ValueError):
        GeneratorComponent(
            label="x", weight=1.0, mean=np.zeros(2), cov=np.eye(3)
        )
    with pytest.raises(ValueError):
        GeneratorComponent(
            label="x",
            weight=1.0,
            mean=np.zeros(2),
            cov=np.array([[1.0, 0.5], [0.4, 1.0]]),
        )
    with pytest.raises(ValueError):
        GeneratorComponent(
            label="x",
            weight=1.0,
            mean=np.zeros(2),
            cov=np.array([[1.0, 2.0], [2.0, 1.0]]),  # eigenvalue -1
        )


def test_generator_json_round_trip():
    cfg = make_config()
    text = generator_config_to_json(cfg)
    back = generator_config_from_json(text)
    assert back.n == cfg.n and back.tau == cfg.tau
    assert back.start_date == cfg.start_date
    assert len(back.components) == 2
    for ours, theirs in zip(cfg.components, back.components):
        assert theirs.label == ours.label
        np.testing.assert_array_equal(theirs.mean, ours.mean)
        np.testing.assert_array_equal(theirs.cov, ours.cov)
    # same samples from the round-tripped config
    a = synth_generate(cfg, seed=9)
    b = synth_generate(back, seed=9)
    assert all(x.r_c.tolist() == y.r_c.tolist() for x, y in zip(a, b))


def test_generator_json_cov_shorthands():
    doc = """
    {"n": 2, "tau": 1, "t": 0, "n_samples": 5,
     "components": [
       {"label": "iso", "weight": 1.0, "mean": [1.0, 2.0], "cov": 0.25},
       {"label": "diag", "weight": 1.0, "mean": [1.0, 2.0], "cov": [0.1, 0.2]},
       {"label": "full", "weight": 1.0, "mean": [1.0, 2.0],
        "cov": [[0.2, 0.05], [0.05, 0.3]]}
     ]}
    """
    cfg = generator_config_from_json(doc)
    np.testing.assert_array_equal(cfg.components[0].cov, 0.25 * np.eye(2))
    np.testing.assert_array_equal(cfg.components[1].cov, np.diag([0.1, 0.2]))
    assert cfg.components[2].cov[0, 1] == 0.05
