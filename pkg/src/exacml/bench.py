"""Workload generation and the benchmark runner.

A workload is a list of :class:`WorkloadItem`.  Each non-joining item pairs
a direct query with the policy granting it, one request the policy matches
and one it does not.  Joining items combine two earlier items held by
different servers and carry no policy of their own.
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
import statistics
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from datetime import timedelta

from .cluster import Cluster
from .datastore import DATETIME
from .demo import START, demo_datasets
from .direct import execute_direct, nested_loop_join, with_window_column
from .errors import ExacmlError, InvalidParams
from .policy import (
    AGGREGATE_FUNCTIONS,
    AGGREGATION,
    APPROXIMATION,
    DATABASE_ID,
    SELECTION,
    SLIDING_WINDOW,
    SUBJECT_ROLE,
    TABLE_ID,
    Decision,
    Policy,
    Rule,
    Target,
    action_match,
    column_subset_condition,
    make_obligation,
    policy_to_xml,
    resource_match,
    subject_match,
)
from .proxy import WINDOW_COLUMN
from .values import format_time

TYPES = ("selection", "approximation", "aggregation", "sliding_window", "joining")
PERCENTILES = (10, 25, 50, 75, 90, 95, 99)
REPORT_FIELDS = ("request_id", "type", "mode", "cache", "join", "micros", "decision", "rows", "server_calls")


@dataclass(frozen=True)
class WorkloadParams:
    n_direct_queries: int = 1000
    direct_query_dist: tuple = (248, 248, 248, 156, 100)
    n_policies: int = 900
    n_requests: int = 1500
    alpha: float = 0.223
    max_rank: int = 300
    days: int = 2
    data_seed: int = 2011

    def validate(self):
        if len(self.direct_query_dist) != len(TYPES) or any(c < 0 for c in self.direct_query_dist):
            raise InvalidParams("directQueryDist needs five non-negative counts")
        if sum(self.direct_query_dist) != self.n_direct_queries:
            raise InvalidParams(f"directQueryDist sums to {sum(self.direct_query_dist)}, "
                                f"not {self.n_direct_queries}")
        if self.n_policies != self.n_direct_queries - self.direct_query_dist[-1]:
            raise InvalidParams("nPolicies must equal the number of non-joining queries")
        if not 1 <= self.max_rank <= self.n_direct_queries:
            raise InvalidParams("maxRank must lie in 1..nDirectQueries")
        if self.n_requests < 0 or self.alpha < 0 or self.days < 1:
            raise InvalidParams("nRequests, alpha and days must be non-negative (days >= 1)")
        if self.direct_query_dist[-1] and not (self.direct_query_dist[0] + self.direct_query_dist[1]
                                               or self.direct_query_dist[3]):
            raise InvalidParams("joining queries need selection, approximation or window queries")
        return self

    def scaled(self, n_direct_queries):
        """Same type ratios at a different size (largest-remainder rounding)."""
        total = sum(self.direct_query_dist)
        exact = [c * n_direct_queries / total for c in self.direct_query_dist]
        counts = [math.floor(x) for x in exact]
        order = sorted(range(len(exact)), key=lambda i: (counts[i] - exact[i], i))
        for i in order[:n_direct_queries - sum(counts)]:
            counts[i] += 1
        return replace(self, n_direct_queries=n_direct_queries, direct_query_dist=tuple(counts),
                       n_policies=n_direct_queries - counts[-1],
                       max_rank=min(self.max_rank, n_direct_queries))


@dataclass
class WorkloadItem:
    item_id: str
    type: str
    direct_query: dict
    policy: dict = None  # {"data_id", "xml"}; None for joining items
    matching_request: dict = field(default_factory=dict)
    non_matching_request: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line):
        return cls(**json.loads(line))


def write_workload(items, path):
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(item.to_json() + "\n")


def read_workload(path):
    with open(path, encoding="utf-8") as fh:
        return [WorkloadItem.from_json(line) for line in fh if line.strip()]


# -- zipf ---------------------------------------------------------------------

def zipf_sample(max_rank, alpha, seed, n):
    """``n`` ranks in 1..max_rank with P(r) proportional to r ** -alpha."""
    if max_rank < 1:
        raise InvalidParams("maxRank must be at least 1")
    ranks = range(1, max_rank + 1)
    weights = [r ** -alpha for r in ranks]
    return random.Random(seed).choices(ranks, weights=weights, k=n)


# -- generation ---------------------------------------------------------------

@dataclass
class _TableInfo:
    data_id: str
    database: str
    table: str
    columns: list
    numeric: list
    values: dict  # column -> sorted values
    rows: list


def catalog_from_datasets(datasets):
    """Table facts the generator draws parameters from, plus the stores."""
    tables, stores = [], {}
    for dataset in datasets:
        store = dataset.to_store()
        stores[dataset.data_id] = store
        for schema, _ in dataset.tables:
            rows = store.rows(schema.table_name)
            numeric = [name for name, type_ in schema.columns if type_ != DATETIME]
            values = {c: sorted(r[schema.index(c)] for r in rows) for c in numeric}
            tables.append(_TableInfo(dataset.data_id, dataset.database_name, schema.table_name,
                                     list(schema.names), numeric, values, rows))
    return tables, stores


def _time_range(rng, days, min_hours, max_hours):
    hours = rng.randint(min_hours, max_hours)
    start = START + timedelta(days=rng.randrange(days), hours=rng.randint(0, 24 - hours))
    return start, start + timedelta(hours=hours)


def _time_clause(lo, hi):
    return f"SamplingTime >= '{format_time(lo)}' and SamplingTime < '{format_time(hi)}'"


def _value_range(rng, info, column):
    values = info.values[column]
    a, b = sorted(rng.sample(range(len(values)), 2))
    return values[a], values[b]


def _selection(rng, info, days):
    columns = ["SamplingTime"] + rng.sample(info.numeric, rng.randint(1, min(2, len(info.numeric))))
    lo, hi = _time_range(rng, days, 1, 6)
    column = rng.choice(info.numeric)
    a, b = _value_range(rng, info, column)
    expression = f"{_time_clause(lo, hi)} and {column} >= {a!r} and {column} <= {b!r}"
    query = {"table": info.table, "columns": columns, "f": "identity", "where": expression, "window": None}
    return query, [make_obligation(SELECTION, expression=expression)], {}


def _approximation(rng, info, days):
    approx = rng.sample(info.numeric, min(2, len(info.numeric)))
    lo, hi = _time_range(rng, days, 2, 12)
    centre = rng.choice(info.rows)
    values = {c: float(centre[info.columns.index(c)]) for c in approx}
    spread = math.sqrt(sum((info.values[c][-1] - info.values[c][0]) ** 2 for c in approx))
    delta = round(rng.uniform(0.1, 0.3) * spread, 3) or 1.0
    squares = " + ".join(f"({c} - {v!r})*({c} - {v!r})" for c, v in values.items())
    where = f"({_time_clause(lo, hi)}) and (sqrt({squares}) < {delta!r})"
    query = {"table": info.table, "columns": ["SamplingTime"] + approx, "f": "identity",
             "where": where, "window": None}
    obligations = [make_obligation(SELECTION, expression=_time_clause(lo, hi)),
                   make_obligation(APPROXIMATION, columns=approx, distance=delta)]
    return query, obligations, {c: repr(v) for c, v in values.items()}


def _aggregation(rng, info, days):
    f = rng.choice(AGGREGATE_FUNCTIONS)
    columns = rng.sample(info.numeric, rng.randint(1, min(2, len(info.numeric))))
    lo, hi = _time_range(rng, days, 1, 24)
    expression = _time_clause(lo, hi)
    query = {"table": info.table, "columns": columns, "f": f, "where": expression, "window": None}
    obligations = [make_obligation(AGGREGATION, function=f),
                   make_obligation(SELECTION, expression=expression)]
    return query, obligations, {}


def _sliding_window(rng, info, days):
    f = rng.choice(AGGREGATE_FUNCTIONS)
    columns = [rng.choice(info.numeric)]
    start, end = _time_range(rng, days, 3, 12)
    window = {"column": "SamplingTime", "start": format_time(start), "end": format_time(end),
              "size": rng.randint(1, 3), "step": rng.randint(1, 3), "unit": "hours"}
    query = {"table": info.table, "columns": columns, "f": f, "where": None, "window": window}
    obligations = [make_obligation(AGGREGATION, function=f),
                   make_obligation(SLIDING_WINDOW, column=window["column"], start=window["start"],
                                   end=window["end"], size=window["size"], step=window["step"],
                                   unit=window["unit"])]
    return query, obligations, {}


_BUILDERS = {
    "selection": _selection,
    "approximation": _approximation,
    "aggregation": _aggregation,
    "sliding_window": _sliding_window,
}


def build_policy(role, database, table, columns, obligations, policy_id=""):
    target = Target(
        subjects=((subject_match(SUBJECT_ROLE, role),),),
        resources=((resource_match(DATABASE_ID, database), resource_match(TABLE_ID, table)),),
        actions=((action_match("read"),),),
    )
    rule = Rule("grant", Decision.PERMIT, condition=column_subset_condition(columns))
    return Policy(rules=(rule,), target=target, obligations=tuple(obligations), policy_id=policy_id)


def _resource(data_id, table, columns, role, values, database=None):
    out = {"data_id": data_id, "table": table, "columns": list(columns), "actions": ["read"],
           "values": dict(values), "credentials": {"name": f"user-{role}", "role": role}}
    if database is not None:
        out["database"] = database
    return out


def _join_keys(result, column):
    table = with_window_column(result)
    index = table["header"].index(column)
    return {(type(r[index]), r[index]) for r in table["rows"]}


def _join_column(item):
    return WINDOW_COLUMN if item.type == "sliding_window" else "SamplingTime"


def generate_workload(params=None, seed=0, datasets=None):
    """Deterministic workload for ``params`` over the demo datasets."""
    params = (params or WorkloadParams()).validate()
    if datasets is None:
        datasets = demo_datasets(params.days, params.data_seed)
    tables, stores = catalog_from_datasets(datasets)
    rng = random.Random(seed)
    kinds = [t for t, count in zip(TYPES[:-1], params.direct_query_dist) for _ in range(count)]
    rng.shuffle(kinds)
    items, results = [], []
    for n, kind in enumerate(kinds):
        info = rng.choice(tables)
        query, obligations, values = _BUILDERS[kind](rng, info, params.days)
        role = f"role-{n}"
        policy = build_policy(role, info.database, info.table, query["columns"], obligations)
        item = WorkloadItem(
            item_id=f"q{n:04d}",
            type=kind,
            direct_query={"data_id": info.data_id, "query": query},
            policy={"data_id": info.data_id, "xml": policy_to_xml(policy)},
            matching_request={"resources": [_resource(info.data_id, info.table, query["columns"],
                                                      role, values)], "join": None},
            non_matching_request={"resources": [_resource(info.data_id, info.table, query["columns"],
                                                          role, values, database=f"foreign-{n}")],
                                  "join": None},
        )
        items.append(item)
        results.append(execute_direct(query, stores[info.data_id]))
    pools = {
        "SamplingTime": [i for i, it in enumerate(items) if it.type in ("selection", "approximation")],
        WINDOW_COLUMN: [i for i, it in enumerate(items) if it.type == "sliding_window"],
    }
    # keep only pools spanning two servers, so every first pick has a partner
    pools = {k: v for k, v in pools.items() if len({items[i].direct_query["data_id"] for i in v}) > 1}
    if params.direct_query_dist[-1] and not pools:
        raise InvalidParams("joining queries need compatible sub-queries on two different servers")
    joins, join_results = [], []
    for n in range(params.direct_query_dist[-1]):
        column = rng.choice(sorted(pools))
        first = rng.choice(pools[column])
        a = items[first]
        others = [i for i in pools[column]
                  if items[i].direct_query["data_id"] != a.direct_query["data_id"]]
        overlapping = [i for i in others
                       if _join_keys(results[first], column) & _join_keys(results[i], column)]
        second = rng.choice(overlapping or others)
        b = items[second]
        on = [_join_column(a), _join_column(b)]
        k = len(items) + n
        matching = [a.matching_request["resources"][0], b.matching_request["resources"][0]]
        foreign = [dict(r, database=f"foreign-{k}") for r in matching]
        joins.append(WorkloadItem(
            item_id=f"q{k:04d}",
            type="joining",
            direct_query={"join": [a.direct_query, b.direct_query], "on": on},
            policy=None,
            matching_request={"resources": matching, "join": on},
            non_matching_request={"resources": foreign, "join": on},
        ))
        join_results.append(nested_loop_join([with_window_column(results[first]),
                                              with_window_column(results[second])], on))
    workload = items + joins
    # Interleave joining items with the rest so Zipf ranks cover every type.
    order = list(range(len(workload)))
    rng.shuffle(order)
    sizes = [len(r["rows"]) for r in results] + [len(r["rows"]) for r in join_results]
    if workload and sum(1 for s in sizes if s) * 2 < len(sizes):
        raise InvalidParams("fewer than half of the generated queries return data")
    return [workload[i] for i in order]


def type_counts(workload):
    counts = Counter(item.type for item in workload)
    return {t: counts.get(t, 0) for t in TYPES}


def zipf_requests(workload, params, seed=0):
    """``(request_id, item, "matching")`` triples for a Zipf request stream."""
    if params.max_rank > len(workload):
        raise InvalidParams("maxRank exceeds the workload size")
    ranks = zipf_sample(params.max_rank, params.alpha, seed, params.n_requests)
    return [(f"z{n:05d}", workload[r - 1], "matching") for n, r in enumerate(ranks)]


# -- execution ----------------------------------------------------------------

@dataclass
class Outcome:
    decision: str
    header: list
    rows: list
    server_calls: int = 0
    error: str = ""
    matching_policy_ids: list = field(default_factory=list)
    conflict: str = None


def setup_cluster(workload, params=None, datasets=None, **cluster_kwargs):
    """Start servers and a proxy, install the demo data and load every policy."""
    params = params or WorkloadParams()
    if datasets is None:
        datasets = demo_datasets(params.days, params.data_seed)
    cluster = Cluster(**cluster_kwargs)
    owners = {}
    for dataset in datasets:
        cluster.install(dataset)
        owners[dataset.data_id] = dataset.credentials
    for item in workload:
        if item.policy is not None:
            data_id = item.policy["data_id"]
            cluster.client.load_policy(data_id, item.policy["xml"], owners[data_id])
    return cluster


def _exacml(cluster, request, join_enabled):
    proxy = cluster.proxy
    before = proxy.server_calls
    resources, on = request["resources"], request.get("join")
    reply = cluster.client.query_data(resources, on if join_enabled else None)
    calls = proxy.server_calls - before
    results = reply["results"]
    ids = reply.get("matching_policy_ids", [])
    if on is None:
        r = results[0]
        table = with_window_column(r) if r["decision"] == "Permit" else {"header": [], "rows": []}
        return Outcome(r["decision"], table["header"], table["rows"], calls, r.get("error") or "", ids)
    if any(r["decision"] != "Permit" for r in results):
        return Outcome("Deny", [], [], calls, "", ids, "deny")
    if join_enabled:
        joined = reply["joined"]
    else:
        joined = nested_loop_join([with_window_column(r) for r in results], on)
    return Outcome("Permit", list(joined["header"]), [list(r) for r in joined["rows"]], calls, "", ids,
                   None if joined["rows"] else "empty_join")


def _direct_one(cluster, direct):
    link = cluster.server_link(direct["data_id"])
    try:
        return with_window_column(link.call("direct_query", {"data_id": direct["data_id"],
                                                             "query": direct["query"]}))
    finally:
        if cluster.tcp:
            link.close()


def _direct(cluster, direct_query):
    if "join" not in direct_query:
        table = _direct_one(cluster, direct_query)
        return Outcome("Permit", table["header"], table["rows"], 1)
    parts = [_direct_one(cluster, d) for d in direct_query["join"]]
    joined = nested_loop_join(parts, direct_query["on"])
    return Outcome("Permit", joined["header"], joined["rows"], len(parts))


def execute_item(cluster, item, which="matching", mode="exacml", join=True):
    """Run one request; transport and protocol failures become an ``Error`` outcome."""
    try:
        if mode == "direct":
            return _direct(cluster, item.direct_query)
        if mode != "exacml":
            raise InvalidParams(f"unknown mode {mode!r}")
        request = item.matching_request if which == "matching" else item.non_matching_request
        return _exacml(cluster, request, join)
    except ExacmlError as exc:
        if isinstance(exc, InvalidParams):
            raise
        return Outcome("Error", [], [], 0, f"{exc.code}: {exc.message}")


def row_multiset(rows):
    return Counter(tuple(r) for r in rows)


@dataclass
class Sample:
    request_id: str
    type: str
    mode: str
    cache: bool
    join: bool
    micros: int
    decision: str
    rows: int
    server_calls: int


@dataclass
class BenchReport:
    samples: list = field(default_factory=list)
    outcomes: dict = field(default_factory=dict)  # request_id -> Outcome

    def to_csv(self):
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(REPORT_FIELDS)
        for s in self.samples:
            writer.writerow([getattr(s, f) for f in REPORT_FIELDS])
        return out.getvalue()

    def percentiles(self, by_type=True):
        groups = {}
        for s in self.samples:
            groups.setdefault(s.type if by_type else "all", []).append(s.micros)
        return {k: percentile_row(v) for k, v in sorted(groups.items())}

    def percentile_table(self, by_type=True):
        head = ["type", "n"] + [f"p{p}" for p in PERCENTILES]
        lines = ["  ".join(f"{h:>14}" for h in head)]
        for key, row in self.percentiles(by_type).items():
            n = sum(1 for s in self.samples if not by_type or s.type == key)
            lines.append("  ".join(f"{c:>14}" for c in [key, n] + [f"{row[p]:.0f}" for p in PERCENTILES]))
        return "\n".join(lines)

    def decisions(self):
        return Counter(s.decision for s in self.samples)

    def server_calls(self):
        return sum(s.server_calls for s in self.samples)


def percentile_row(values):
    """``{p: value}`` for the reported percentiles (microseconds)."""
    if len(values) == 1:
        return {p: float(values[0]) for p in PERCENTILES}
    cuts = statistics.quantiles(values, n=100, method="inclusive")
    return {p: cuts[p - 1] for p in PERCENTILES}


def default_requests(workload):
    out = []
    for item in workload:
        out.append((f"{item.item_id}-m", item, "matching"))
        out.append((f"{item.item_id}-n", item, "non_matching"))
    return out


def run_benchmark(workload, cluster, mode="exacml", cache=True, join=True, requests=None):
    """Issue ``requests`` (default: every matching and non-matching request) in sequence."""
    if requests is None:
        requests = default_requests(workload)
        if mode == "direct":
            requests = [r for r in requests if r[2] == "matching"]
    cluster.proxy.cache_enabled = cache
    cluster.proxy.join_enabled = join
    cluster.proxy.cache.purge()
    report = BenchReport()
    for request_id, item, which in requests:
        began = time.perf_counter()
        outcome = execute_item(cluster, item, which, mode, join)
        micros = int((time.perf_counter() - began) * 1e6)
        report.samples.append(Sample(request_id, item.type, mode, cache, join, micros,
                                     outcome.decision, len(outcome.rows), outcome.server_calls))
        report.outcomes[request_id] = outcome
    return report
