"""Policy enforcement point: obligations in, query results out.

A permitted request is answered by compiling the returned obligations into
a :class:`QueryPlan` and running it on the dataset's store:

* column aggregation supplies the aggregate function,
* simple selection and approximation are conjoined into the WHERE clause,
* a sliding window expands into one query per window, each adding
  ``c >= start + step*i AND c < start + step*i + size``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import timedelta
from fractions import Fraction
from typing import Optional

from .datastore import DATETIME, Comparison, Distance, ResultSet, compile_predicate, conjoin, parse_predicate
from .errors import (
    ApproximationColumnsNotSubset,
    ExacmlError,
    InvalidWindow,
    MissingObligationAttribute,
    UnknownColumn,
    UnknownTable,
)
from .policy import (
    AGGREGATION,
    AGGREGATION_FN,
    APPROX_DISTANCE,
    APPROXIMATION,
    SELECTION,
    SELECTION_EXPR,
    SLIDING_WINDOW,
    WINDOW_COLUMN,
    WINDOW_END,
    WINDOW_SIZE,
    WINDOW_START,
    WINDOW_STEP,
    WINDOW_UNIT,
    Decision,
    approximation_columns,
    validate_obligations,
)
from .values import format_time, parse_time

UNIT_SECONDS = {"hours": 3600, "minutes": 60}


@dataclass(frozen=True)
class SlidingWindowSpec:
    column: str
    start: object  # datetime
    end: object
    size: int
    step: int
    unit: str = "hours"

    @property
    def unit_delta(self):
        return timedelta(seconds=UNIT_SECONDS[self.unit])

    @property
    def span(self):
        """``end - start`` measured in the spec's unit (exact rational)."""
        return Fraction(int((self.end - self.start).total_seconds()), UNIT_SECONDS[self.unit])

    @classmethod
    def from_obligation(cls, obligation):
        try:
            spec = cls(
                column=obligation.get(WINDOW_COLUMN).strip(),
                start=parse_time(obligation.get(WINDOW_START)),
                end=parse_time(obligation.get(WINDOW_END)),
                size=int(obligation.get(WINDOW_SIZE)),
                step=int(obligation.get(WINDOW_STEP)),
                unit=obligation.get(WINDOW_UNIT, "hours").strip().lower(),
            )
        except (AttributeError, TypeError, ValueError) as exc:
            raise MissingObligationAttribute(f"bad sliding-window obligation: {exc}") from None
        if spec.unit not in UNIT_SECONDS:
            raise MissingObligationAttribute(f"unknown window unit {spec.unit!r}")
        if spec.size <= 0 or spec.step <= 0:
            raise InvalidWindow("window size and step must be positive")
        if spec.start > spec.end:
            raise InvalidWindow("window start is after its end")
        return spec


@dataclass(frozen=True)
class ApproximationSpec:
    columns: tuple
    request_values: tuple
    delta: float

    def predicate(self):
        return Distance(self.columns, self.request_values, "<", self.delta)


@dataclass
class QueryPlan:
    table: str
    columns: list
    f: str = "identity"
    where: object = None
    window_column: Optional[str] = None
    windows: Optional[list] = None  # [(lo, hi)], lo inclusive, hi exclusive


@dataclass
class DataResponse:
    decision: Decision
    rows: ResultSet
    matching_policy_ids: list = field(default_factory=list)
    window_labels: Optional[list] = None
    error: Optional[str] = None

    def to_wire(self):
        return {
            "decision": self.decision.value,
            "header": list(self.rows.header),
            "rows": [list(r) for r in self.rows.rows],
            "window_labels": self.window_labels,
            "matching_policy_ids": list(self.matching_policy_ids),
            "error": self.error,
        }

    @classmethod
    def from_wire(cls, data):
        return cls(
            decision=Decision.parse(data["decision"]),
            rows=ResultSet(list(data["header"]), [tuple(r) for r in data["rows"]]),
            matching_policy_ids=list(data.get("matching_policy_ids", [])),
            window_labels=data.get("window_labels"),
            error=data.get("error"),
        )


# -- windows ------------------------------------------------------------------

def window_count(spec):
    """Number of windows: floor((end - start - size + 1) / step) + 1."""
    numerator = spec.span - spec.size + 1
    if numerator < 0:
        raise InvalidWindow(f"span {spec.span} {spec.unit} is shorter than window size {spec.size} - 1")
    return math.floor(numerator / spec.step) + 1


def window_bounds(spec):
    """``[(lo, hi)]`` for every window, lo inclusive and hi exclusive."""
    unit = spec.unit_delta
    return [
        (spec.start + unit * (spec.step * i), spec.start + unit * (spec.step * i + spec.size))
        for i in range(window_count(spec))
    ]


# -- compilation --------------------------------------------------------------

def approximation_spec(obligation, request):
    allowed = {c.lower(): c for c in approximation_columns(obligation)}
    supplied = request.data_values
    if not supplied:
        raise ApproximationColumnsNotSubset("request supplies no data values for the approximation policy")
    extra = [c for c in supplied if c.lower() not in allowed]
    if extra:
        raise ApproximationColumnsNotSubset(f"columns {extra} are not covered by the approximation policy")
    try:
        values = tuple(float(v) for v in supplied.values())
    except ValueError:
        raise ApproximationColumnsNotSubset("approximation values must be numeric") from None
    return ApproximationSpec(tuple(supplied), values, float(obligation.get(APPROX_DISTANCE)))


def compile_obligations(obligations, request, table, columns, schema=None):
    """Turn PDP obligations plus the requested columns into a query plan.

    With ``schema`` the plan is also checked against the table: unknown
    columns and ill-typed predicates fail here rather than mid-execution.
    """
    validate_obligations(obligations)
    by_kind = {o.obligation_id: o for o in obligations}
    plan = QueryPlan(table=table, columns=list(columns))
    if AGGREGATION in by_kind:
        plan.f = by_kind[AGGREGATION].get(AGGREGATION_FN).strip().lower()
    selection = approximation = None
    if SELECTION in by_kind:
        selection = parse_predicate(by_kind[SELECTION].get(SELECTION_EXPR))
    if APPROXIMATION in by_kind:
        approximation = approximation_spec(by_kind[APPROXIMATION], request).predicate()
    plan.where = conjoin(selection, approximation)
    if SLIDING_WINDOW in by_kind:
        spec = SlidingWindowSpec.from_obligation(by_kind[SLIDING_WINDOW])
        plan.window_column = spec.column
        plan.windows = window_bounds(spec)
    if schema is not None:
        check_plan(plan, schema)
    return plan


def check_plan(plan, schema):
    if not plan.columns:
        raise UnknownColumn("request names no columns")
    for column in plan.columns:
        schema.index(column)
    compile_predicate(plan.where, schema)
    if plan.window_column is not None:
        if schema.type_of(plan.window_column) != DATETIME:
            raise UnknownColumn(f"window column {plan.window_column!r} is not a DateTime column")


# -- execution ----------------------------------------------------------------

def execute_plan(plan, store):
    """Run a plan; return ``(ResultSet, window_labels or None)``.

    Windows run as separate, sequential selects and their rows are
    concatenated in window order, each labelled with its window start.
    """
    if plan.windows is None:
        return store.select(plan.table, plan.columns, plan.f, plan.where), None
    rows = []
    labels = []
    header = None
    for lo, hi in plan.windows:
        where = conjoin(
            plan.where,
            Comparison(plan.window_column, ">=", format_time(lo)),
            Comparison(plan.window_column, "<", format_time(hi)),
        )
        result = store.select(plan.table, plan.columns, plan.f, where)
        header = result.header
        rows.extend(result.rows)
        labels.extend([format_time(lo)] * len(result.rows))
    return ResultSet(header or list(plan.columns), rows), labels


def resolve_table(request, store):
    if request.table_id:
        return store.schema(request.table_id).table_name
    tables = store.tables()
    if len(tables) == 1:
        return tables[0]
    raise UnknownTable("request names no table and the dataset has several")


def fulfill_request(request, pdp_state, store):
    """Decide, and on Permit compile and run the obligations.

    Anything short of Permit, or any failure while compiling or executing,
    comes back as Deny with no rows.
    """
    response = pdp_state.evaluate_request(request)
    ids = response.matching_policy_ids
    if response.decision is not Decision.PERMIT:
        return DataResponse(Decision.DENY, ResultSet([], []), ids)
    try:
        table = resolve_table(request, store)
        plan = compile_obligations(response.obligations, request, table, request.columns,
                                   schema=store.schema(table))
        rows, labels = execute_plan(plan, store)
    except ExacmlError as exc:
        return DataResponse(Decision.DENY, ResultSet([], []), ids, error=f"{exc.code}: {exc.message}")
    return DataResponse(Decision.PERMIT, rows, ids, labels)
