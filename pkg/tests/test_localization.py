import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homesniff.errors import (
    DegenerateLayout,
    DuplicateLabel,
    InsufficientData,
    InvalidParameter,
    NoComparableReference,
    UndefinedDirection,
)
from homesniff.localization import (
    Mobility,
    PathLossParams,
    PositionEstimate,
    RssiFingerprint,
    SnifferLayout,
    ZoneModel,
    build_fingerprints,
    check_layout,
    classify_stationarity,
    direction_vector,
    fingerprint_distance,
    format_layout,
    format_zone_model,
    learn_reference_points,
    linearized_position,
    match_zone,
    match_zones_batch,
    parse_layout,
    parse_zone_model,
    refine_position,
    rssi_to_distance,
    trilaterate,
    trilaterate_batch,
)
from homesniff.mac import MacAddress
from homesniff.wire.records import (
    Direction,
    FrameRecord,
    FrameType,
    RadiotapMeta,
    ResolvedAddresses,
    make_frame_control,
)

LAYOUT = SnifferLayout.of([("s1", 0.0, 0.0), ("s2", 10.0, 0.0), ("s3", 4.0, 8.0)])
PARAMS = PathLossParams(-40.0, 3.0)
DEV = MacAddress.parse("02:00:00:00:00:01")


def rssi_at(p, layout=LAYOUT, params=PARAMS):
    d = np.linalg.norm(layout.positions() - np.asarray(p), axis=1)
    return params.p0_dbm - 10 * params.n * np.log10(d)


def fp(values, w=0):
    return RssiFingerprint(DEV, w, tuple(values), tuple(1 if v is not None else 0 for v in values))


# --- path loss -------------------------------------------------------------------

def test_path_loss_inversion_reference_points():
    assert rssi_to_distance(-40, PARAMS) == pytest.approx(1.0)
    assert rssi_to_distance(-70, PARAMS) == pytest.approx(10.0)
    got = rssi_to_distance(np.array([-40.0, -100.0]), PathLossParams(-40, 2))
    assert got.tolist() == pytest.approx([1.0, 1000.0])


def test_path_loss_params_validation():
    with pytest.raises(InvalidParameter):
        PathLossParams(-40, 0)


# --- layout ----------------------------------------------------------------------

def test_layout_checks_and_text_roundtrip():
    check_layout(LAYOUT)
    assert parse_layout(format_layout(LAYOUT)) == LAYOUT
    with pytest.raises(DegenerateLayout):
        check_layout(SnifferLayout.of([("a", 0, 0), ("b", 1, 1)]))
    with pytest.raises(DegenerateLayout):
        check_layout(SnifferLayout.of([("a", 0, 0), ("b", 1, 1), ("c", 2, 2)]))
    with pytest.raises(InvalidParameter):
        SnifferLayout.of([("a", 0, 0), ("a", 1, 0)])


# --- fingerprints ------------------------------------------------------------------

def _frame(ts, sniffer, rssi):
    return FrameRecord(sniffer, RadiotapMeta(ts, rssi), make_frame_control(FrameType.DATA, 0, 1),
                       ResolvedAddresses(DEV, DEV, DEV, DEV, None), Direction.UPLINK, 10)


def test_fingerprints_take_per_sniffer_medians():
    frames = [_frame(1, "s1", -50), _frame(2, "s1", -60), _frame(3, "s1", -52),
              _frame(4, "s2", -70), _frame(5, "s2", -71), _frame(11_000_000, "s3", -80),
              _frame(6, "unknown", -10), _frame(7, "s1", None)]
    out = build_fingerprints(frames, LAYOUT, 10, start_us=0)
    first, second = out[DEV]
    assert first.values == (-52.0, -70.5, None)
    assert first.support == (3, 2, 0)
    assert not first.usable
    assert second.window_start_us == 10_000_000 and second.values == (None, None, -80.0)
    with pytest.raises(InvalidParameter):
        build_fingerprints(frames, LAYOUT, 0)


# --- trilateration ----------------------------------------------------------------------

@given(st.floats(0.5, 9.5), st.floats(0.5, 7.5))
def test_noiseless_trilateration_recovers_position(x, y):
    est = trilaterate(fp(rssi_at((x, y))), LAYOUT, PARAMS)
    assert est.usable
    assert math.hypot(est.x - x, est.y - y) < 1e-6
    assert est.residual < 1e-6


def test_trilateration_with_two_readings_is_unusable():
    est = trilaterate(fp([-50.0, None, -60.0]), LAYOUT, PARAMS)
    assert not est.usable and math.isnan(est.x)


def test_refinement_never_increases_range_error():
    rng = np.random.default_rng(3)
    anchors = LAYOUT.positions()
    for _ in range(50):
        p = rng.uniform([0, 0], [10, 8])
        d = np.linalg.norm(anchors - p, axis=1) * np.exp(rng.normal(0, 0.2, 3))
        lin = linearized_position(anchors, d)
        ref = refine_position(anchors, d, lin.copy())
        cost = lambda q: float(((np.linalg.norm(anchors - q, axis=1) - d) ** 2).sum())  # noqa: E731
        assert cost(ref) <= cost(lin) + 1e-12


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(-90, -35), st.floats(-90, -35), st.floats(-90, -35),
                          st.booleans()), min_size=1, max_size=12))
def test_batch_trilateration_matches_scalar(rows):
    values = np.array([[a, b, np.nan if drop else c] for a, b, c, drop in rows])
    xy, resid, lin = trilaterate_batch(values, LAYOUT, PARAMS)
    for i, (a, b, c, drop) in enumerate(rows):
        est = trilaterate(fp([a, b, None if drop else c]), LAYOUT, PARAMS)
        if not est.usable:
            assert np.isnan(xy[i]).all()
            continue
        assert xy[i] == pytest.approx([est.x, est.y], abs=1e-6)
        assert lin[i] == pytest.approx(list(est.linear_xy), abs=1e-9)
        assert resid[i] == pytest.approx(est.residual, abs=1e-6)


def test_direction_vector():
    est = PositionEstimate(10.0, 8 / 3, None, 0.0, True)
    assert direction_vector(est, LAYOUT) == pytest.approx((1.0, 0.0))
    with pytest.raises(UndefinedDirection):
        direction_vector(PositionEstimate.unusable(), LAYOUT)
    with pytest.raises(UndefinedDirection):
        direction_vector(PositionEstimate(14 / 3, 8 / 3, None, 0.0, True), LAYOUT)


# --- stationarity ------------------------------------------------------------------------

def test_stationarity_by_rssi_spread():
    rng = np.random.default_rng(0)
    still = [fp(rssi_at((3, 3)) + rng.normal(0, 1, 3), w) for w in range(100)]
    res = classify_stationarity(still)
    assert res.mobility is Mobility.STATIONARY and res.fingerprints == 100
    walk = [fp(rssi_at((1 + 8 * (w % 10) / 10, 2))) for w in range(100)]
    assert classify_stationarity(walk).mobility is Mobility.MOBILE
    with pytest.raises(InsufficientData):
        classify_stationarity(still[:10])


# --- zones ----------------------------------------------------------------------------

def test_fingerprint_distance_is_rms_over_shared():
    assert fingerprint_distance([1.0, None, 5.0], [4.0, 2.0, 1.0]) == (pytest.approx(math.sqrt(12.5)), 2)
    assert fingerprint_distance([None], [1.0]) == (math.inf, 0)


def test_reference_learning_and_matching():
    kitchen = [fp(rssi_at((1, 1)) + d, w) for w, d in enumerate(np.linspace(-1, 1, 12))]
    bedroom = [fp(rssi_at((8, 1)) + d, w) for w, d in enumerate(np.linspace(-1, 1, 12))]
    model = learn_reference_points({"kitchen": kitchen, "bedroom": bedroom}, LAYOUT.ids)
    assert model.labels == ["kitchen", "bedroom"]
    assert model.references[0][1] == pytest.approx(tuple(rssi_at((1, 1))))
    assert match_zone(model, fp(rssi_at((1.5, 1))))[0] == "kitchen"
    assert match_zone(model, fp(list(rssi_at((7.5, 1.5)))[:2] + [None]))[0] == "bedroom"
    with pytest.raises(NoComparableReference):
        match_zone(model, fp([-50.0, None, None]))
    with pytest.raises(DuplicateLabel):
        learn_reference_points([("a", kitchen), ("a", bedroom)], LAYOUT.ids)
    with pytest.raises(InsufficientData):
        learn_reference_points({"a": kitchen[:3]}, LAYOUT.ids)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(-95, -30), st.none() | st.floats(-95, -30),
                          st.none() | st.floats(-95, -30)), min_size=1, max_size=10))
def test_batch_zone_matching_matches_scalar(rows):
    model = ZoneModel(("s1", "s2", "s3"), (("a", (-50.0, -60.0, None)), ("b", (-70.0, -45.0, -60.0)),
                                           ("c", (-60.0, -60.0, -60.0))))
    values = np.array([[np.nan if v is None else v for v in r] for r in rows])
    labels, dists = match_zones_batch(model, values)
    for i, r in enumerate(rows):
        try:
            lab, d = match_zone(model, fp(list(r)))
        except NoComparableReference:
            assert labels[i] is None and np.isinf(dists[i])
            continue
        assert dists[i] == pytest.approx(d)
        if labels[i] != lab:
            # exact ties resolve to the first label in name order in both paths
            pytest.fail(f"row {r}: batch {labels[i]} scalar {lab}")


def test_zone_model_text_roundtrip():
    model = ZoneModel(("s1", "s2"), (("a", (-50.25, None)), ("b", (-1e-3, -77.0))))
    assert parse_zone_model(format_zone_model(model)) == model
    with pytest.raises(InvalidParameter):
        parse_zone_model("zone\ts1\n")
    with pytest.raises(InvalidParameter):
        parse_zone_model("label\ts1\na\t1\t2\n")
    with pytest.raises(DuplicateLabel):
        parse_zone_model("label\ts1\na\t1\na\t2\n")
