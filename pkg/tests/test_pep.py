import math
from datetime import datetime, timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exacml import corpus
from exacml.datastore import Distance, Schema, Store, parse_predicate
from exacml.demo import WEATHER_SCHEMA, demo_datasets, weather_store
from exacml.direct import direct_windows, execute_direct
from exacml.errors import ApproximationColumnsNotSubset, InvalidWindow
from exacml.pdp import PdpState
from exacml.pep import (
    QueryPlan,
    SlidingWindowSpec,
    compile_obligations,
    execute_plan,
    fulfill_request,
    window_bounds,
    window_count,
)
from exacml.policy import (
    AGGREGATION,
    APPROXIMATION,
    SLIDING_WINDOW,
    Decision,
    Policy,
    Rule,
    make_obligation,
    make_request,
    parse_policy,
)
from exacml.values import format_time

DAY = datetime(2011, 6, 6)


def spec(span, size, step, unit="hours", start=DAY):
    delta = timedelta(hours=1) if unit == "hours" else timedelta(minutes=1)
    return SlidingWindowSpec("SamplingTime", start, start + span * delta, size, step, unit)


def as_window(s):
    return {"column": s.column, "start": format_time(s.start), "end": format_time(s.end),
            "size": s.size, "step": s.step, "unit": s.unit}


# -- window arithmetic -------------------------------------------------------

def test_window_window_count():
    policy = parse_policy(corpus.text("window_policy"))
    window = next(o for o in policy.obligations if o.obligation_id == SLIDING_WINDOW)
    assert window_count(SlidingWindowSpec.from_obligation(window)) == 5


def test_single_window_when_span_equals_size():
    for step in (2, 3, 7):
        assert window_count(spec(5, 5, step)) == 1


def test_span_equals_size_with_unit_step_counts_trailing_window():
    # floor((5 - 5 + 1) / 1) + 1: the end point itself starts a second window
    assert window_count(spec(5, 5, 1)) == 2
    assert len(direct_windows(as_window(spec(5, 5, 1)))) == 2


def test_span_ten_size_five_step_two():
    s = spec(10, 5, 2)
    assert window_count(s) == 4
    assert [lo for lo, _ in window_bounds(s)] == [DAY + timedelta(hours=h) for h in (0, 2, 4, 6)]


def test_window_shorter_than_size_is_invalid():
    with pytest.raises(InvalidWindow):
        window_count(spec(2, 5, 1))


@settings(max_examples=500, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 500), st.integers(1, 500), st.sampled_from(["hours", "minutes"]))
def test_window_count_matches_enumeration(span, size, step, unit):
    s = spec(span, size, step, unit)
    expected = direct_windows(as_window(s))
    if span - size + 1 < 0:
        assert expected == []
        return
    assert window_count(s) == len(expected)
    assert window_bounds(s) == expected


# -- compilation -------------------------------------------------------------

def test_window_plan():
    policy = parse_policy(corpus.text("window_policy"))
    request = make_request(role="government", database="weather_data", columns=["samplingtime"])
    plan = compile_obligations(policy.obligations, request, "WeatherInfo", ["samplingtime", "rainrate"])
    assert plan.f == "avg" and plan.where is None
    assert plan.windows == [(DAY + timedelta(hours=h), DAY + timedelta(hours=h + 5)) for h in (0, 5, 10, 15, 20)]


def test_region_plan():
    policy = parse_policy(corpus.text("region_policy"))
    request = make_request(role="researcher", database="taxi_data", columns=["Speed"])
    plan = compile_obligations(policy.obligations, request, "VehicleInfo", ["Speed"])
    assert plan.f == "identity" and plan.windows is None
    assert plan.where == parse_predicate(
        "longitude >= 103.80 and longitude <= 103.90 and latitude >= 1.30 and latitude <= 1.40")


def test_approximation_clause():
    obligation = make_obligation(APPROXIMATION, columns=["temperature"], distance=0.35)
    request = make_request(role="r", database="d", columns=["temperature"], data_values={"temperature": "27.0"})
    plan = compile_obligations([obligation], request, "WeatherInfo", ["temperature"])
    assert plan.where == Distance(("temperature",), (27.0,), "<", 0.35)
    rows, _ = execute_plan(plan, weather_store())
    expected = [r[1] for r in weather_store().rows("WeatherInfo") if abs(r[1] - 27.0) < 0.35]
    assert [r[0] for r in rows.rows] == expected


def test_approximation_needs_subset_of_columns():
    obligation = make_obligation(APPROXIMATION, columns=["temperature"], distance=1)
    request = make_request(role="r", database="d", columns=["humidity"], data_values={"humidity": "70"})
    with pytest.raises(ApproximationColumnsNotSubset):
        compile_obligations([obligation], request, "WeatherInfo", ["humidity"])
    with pytest.raises(ApproximationColumnsNotSubset):
        compile_obligations([obligation], make_request(role="r", database="d"), "WeatherInfo", ["humidity"])


# -- execution ---------------------------------------------------------------

def test_minute_windows_over_weather_sample():
    window = make_obligation(SLIDING_WINDOW, column="SamplingTime", start="2011-06-06 10:00:00",
                             end="2011-06-06 10:10:00", size=5, step=5, unit="minutes")
    request = make_request(role="r", database="d", columns=["RainRate"])
    plan = compile_obligations([make_obligation(AGGREGATION, function="avg"), window], request,
                               "WeatherInfo", ["RainRate"])
    rows, labels = execute_plan(plan, weather_store())
    values = [r[0] for r in rows.rows]
    assert len(values) == 2
    assert values[0] == pytest.approx(0.0, abs=1e-9)
    assert values[1] == pytest.approx((0.0 + 0.1 + 5.0 + 14.0 + 20.0) / 5, abs=1e-9)
    assert values[1] == pytest.approx(7.82, abs=1e-9)
    assert labels == ["2011-06-06 10:00:00", "2011-06-06 10:05:00"]


def test_identity_plan_with_where():
    plan = QueryPlan("WeatherInfo", ["RainRate"], where=parse_predicate("RainRate > 10"))
    rows, labels = execute_plan(plan, weather_store())
    assert len(rows.rows) == 3 and labels is None


def test_count_over_empty_table():
    store = Store()
    store.create_table(WEATHER_SCHEMA)
    rows, _ = execute_plan(QueryPlan("WeatherInfo", ["Humidity"], f="count"), store)
    assert rows.rows == [(0,)]


# -- fulfil ------------------------------------------------------------------------

def pdp_with(*names):
    state = PdpState("weather1")
    for name in names:
        state.load_policy(parse_policy(corpus.text(name)))
    return state


def test_fulfill_government_raw_temperature():
    response = fulfill_request(make_request(role="government", database="weather_data", columns=["temperature"]),
                               pdp_with("government_policy"), weather_store())
    assert response.decision is Decision.PERMIT
    assert [r[0] for r in response.rows.rows] == [r[1] for r in weather_store().rows("WeatherInfo")]


def test_fulfill_taxi_denied():
    response = fulfill_request(make_request(role="taxi", database="weather_data", columns=["temperature"]),
                               pdp_with("government_policy"), weather_store())
    assert response.decision is Decision.DENY and response.rows.rows == []


def test_fulfill_window_policy_matches_window_oracle():
    (weather, _) = demo_datasets(days=1)
    store = weather.to_store()
    request = make_request(role="government", database="weather_data", table="WeatherInfo",
                           columns=["temperature"])
    response = fulfill_request(request, pdp_with("window_policy"), store)
    assert response.decision is Decision.PERMIT and len(response.rows.rows) == 5
    expected = execute_direct({"table": "WeatherInfo", "columns": ["temperature"], "f": "avg", "where": None,
                               "window": {"column": "SamplingTime", "start": "2011-06-06 00:00:00",
                                          "end": "2011-06-07 00:00:00", "size": 5, "step": 5}}, store)
    assert [list(r) for r in response.rows.rows] == expected["rows"]
    assert response.window_labels == expected["window_labels"]


def test_compile_failure_becomes_deny():
    policy = Policy(rules=(Rule("r", Decision.PERMIT),),
                    obligations=(make_obligation(APPROXIMATION, columns=["Temperature"], distance=1),))
    state = PdpState("d")
    state.load_policy(policy)
    response = fulfill_request(make_request(role="x", database="d", columns=["Temperature"]), state, weather_store())
    assert response.decision is Decision.DENY and response.rows.rows == [] and response.error


# -- properties ------------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10), st.integers(0, 12), st.integers(1, 6), st.integers(1, 6),
       st.sampled_from(["avg", "min", "max", "count", "sum", "identity"]),
       st.sampled_from([None, "RainRate > 1", "Temperature >= 27.3"]))
def test_windowed_plan_equals_per_window_oracle(offset, span, size, step, f, where):
    start = datetime(2011, 6, 6, 9, 58) + timedelta(minutes=offset)
    s = spec(span, size, step, "minutes", start=start)
    if span - size + 1 < 0:
        return
    store = weather_store()
    plan = QueryPlan("WeatherInfo", ["RainRate", "Humidity"], f, parse_predicate(where), "SamplingTime",
                     window_bounds(s))
    rows, labels = execute_plan(plan, store)
    expected_rows, expected_labels = [], []
    for lo, hi in direct_windows(as_window(s)):
        clause = f"SamplingTime >= '{format_time(lo)}' and SamplingTime < '{format_time(hi)}'"
        text = f"({where}) and ({clause})" if where else clause
        got = store.select("WeatherInfo", ["RainRate", "Humidity"], f, text).rows
        expected_rows += got
        expected_labels += [format_time(lo)] * len(got)
    assert rows.rows == expected_rows and labels == expected_labels


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), max_size=500),
       st.integers(-50, 50), st.integers(-50, 50), st.integers(1, 60))
def test_approximation_is_strict_euclidean_ball(points, cx, cy, delta):
    store = Store()
    store.create_table(Schema("P", (("x", "Double"), ("y", "Double"))))
    store.insert_values("P", [(float(x), float(y)) for x, y in points])
    obligation = make_obligation(APPROXIMATION, columns=["x", "y"], distance=delta)
    request = make_request(role="r", database="d", columns=["x", "y"], data_values={"x": str(cx), "y": str(cy)})
    rows, _ = execute_plan(compile_obligations([obligation], request, "P", ["x", "y"]), store)
    expected = [(float(x), float(y)) for x, y in points if math.hypot(x - cx, y - cy) < delta]
    assert rows.rows == expected


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from([Decision.PERMIT, Decision.DENY]), min_size=1, max_size=4),
       st.sampled_from(["government", "taxi"]))
def test_no_rows_unless_permit(effects, role):
    base = parse_policy(corpus.text("government_policy"))
    state = PdpState("d")
    for effect in effects:
        state.load_policy(Policy(rules=(Rule("r", effect),), target=base.target))
    response = fulfill_request(make_request(role=role, database="weather_data", columns=["temperature"]),
                               state, weather_store())
    permitted = role == "government" and Decision.PERMIT in effects
    assert (response.decision is Decision.PERMIT) == permitted
    if not permitted:
        assert response.rows.rows == []
