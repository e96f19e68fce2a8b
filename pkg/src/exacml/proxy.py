"""The single proxy between clients and data servers.

It resolves dataIDs to servers, turns each requested resource into an
access request, serves repeats from a cache, filters rows by client
constraints and equi-joins results across datasets.

Cache coherence is coarse: any policy load or removal on any dataset
purges the whole cache.  Each purge also advances an epoch, and a response
fetched under an older epoch is never inserted, so a request racing with a
purge cannot re-populate the cache with a stale grant.
"""

from __future__ import annotations

import logging
import random
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .datastore import And, Comparison, ResultSet, COMPARISON_OPS, parse_predicate
from .errors import (
    AlreadyInitialized,
    ConstraintColumnUnknown,
    ExacmlError,
    MissingJoinColumn,
    ProtocolError,
    TypeMismatch,
    UnknownDataId,
)
from .policy import canonical_request_key, make_request, request_to_xml
from .protocol import reply_for, tcp_connect

log = logging.getLogger(__name__)

DEFAULT_CAPACITY = 1024
WINDOW_COLUMN = "window"


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int
    database: str


class DataIdMapping:
    def __init__(self):
        self._entries = {}
        self._lock = threading.Lock()

    def register(self, data_id, host, port, database):
        with self._lock:
            self._entries[data_id] = Endpoint(host, int(port), database)

    def resolve(self, data_id):
        with self._lock:
            try:
                return self._entries[data_id]
            except KeyError:
                raise UnknownDataId(f"unknown dataID {data_id!r}") from None

    def __contains__(self, data_id):
        with self._lock:
            return data_id in self._entries

    def items(self):
        with self._lock:
            return list(self._entries.items())


class Cache:
    """Bounded map with uniformly random eviction and epoch-guarded inserts."""

    def __init__(self, capacity=DEFAULT_CAPACITY, seed=None):
        if capacity < 1:
            raise ValueError("cache capacity must be positive")
        self.capacity = capacity
        self.epoch = 0
        self._entries = {}
        self._rng = random.Random(seed)
        self._lock = threading.Lock()

    def get(self, key):
        """Return ``(value, epoch)`` or ``None``."""
        with self._lock:
            return self._entries.get(key)

    def put(self, key, value, epoch=None):
        """Insert unless a purge happened since ``epoch``; returns whether it did."""
        with self._lock:
            if epoch is not None and epoch != self.epoch:
                return False
            if key not in self._entries and len(self._entries) >= self.capacity:
                self.evict()
            self._entries[key] = (value, self.epoch)
            return True

    def evict(self):
        # caller holds the lock
        victim = self._rng.choice(list(self._entries))
        del self._entries[victim]

    def purge(self):
        with self._lock:
            self._entries.clear()
            self.epoch += 1
            return self.epoch

    def __len__(self):
        with self._lock:
            return len(self._entries)


# -- constraints and joins ----------------------------------------------------

def parse_constraints(texts):
    """Parse constraint strings into a flat list of comparisons (conjunction)."""
    out = []
    for text in texts or []:
        node = parse_predicate(text)
        parts = node.parts if isinstance(node, And) else (node,)
        for part in parts:
            if not isinstance(part, Comparison):
                raise ProtocolError(f"constraint {text!r} must be a conjunction of column comparisons")
            out.append(part)
    return out


def _column_index(header, column, error):
    key = column.strip().lower()
    for i, name in enumerate(header):
        if name.lower() == key:
            return i
    raise error(f"column {column!r} not in {list(header)}")


def apply_constraints(result, constraints):
    """Keep rows satisfying every ``column OP literal`` constraint."""
    if isinstance(constraints, (list, tuple)) and constraints and isinstance(constraints[0], str):
        constraints = parse_constraints(constraints)
    checks = []
    for c in constraints or []:
        i = _column_index(result.header, c.column, ConstraintColumnUnknown)
        checks.append((i, COMPARISON_OPS[c.op], c.literal))

    def keep(row):
        for i, op, literal in checks:
            value = row[i]
            if isinstance(value, str) != isinstance(literal, str):
                raise TypeMismatch(f"cannot compare {value!r} with {literal!r}")
            if not op(value, literal):
                return False
        return True

    return ResultSet(list(result.header), [r for r in result.rows if keep(r)])


def join_results(results, columns):
    """Inner equi-join, folded left to right.

    The output header is the first join column once, followed by the other
    columns of each input in order.  Rows follow left order, then right
    match order.  Values join only when equal and of the same type.
    """
    if len(results) != len(columns):
        raise ProtocolError(f"{len(columns)} join columns for {len(results)} results")
    first = results[0]
    k = _column_index(first.header, columns[0], MissingJoinColumn)
    header = [first.header[k]] + [h for i, h in enumerate(first.header) if i != k]
    rows = [(r[k],) + tuple(v for i, v in enumerate(r) if i != k) for r in first.rows]
    for result, column in zip(results[1:], columns[1:]):
        j = _column_index(result.header, column, MissingJoinColumn)
        index = {}
        for r in result.rows:
            index.setdefault((type(r[j]), r[j]), []).append(tuple(v for i, v in enumerate(r) if i != j))
        joined = []
        for left in rows:
            for rest in index.get((type(left[0]), left[0]), ()):
                joined.append(left + rest)
        header = header + [h for i, h in enumerate(result.header) if i != j]
        rows = joined
    return ResultSet(header, rows)


def labelled(result):
    """ResultSet of a data response, with window labels as a leading column."""
    rows = [tuple(r) for r in result["rows"]]
    labels = result.get("window_labels")
    if labels is None:
        return ResultSet(list(result["header"]), rows)
    return ResultSet([WINDOW_COLUMN] + list(result["header"]),
                     [(label,) + r for label, r in zip(labels, rows)])


def unlabelled(result_set, had_labels):
    if not had_labels:
        return list(result_set.header), [list(r) for r in result_set.rows], None
    return (list(result_set.header[1:]), [list(r[1:]) for r in result_set.rows],
            [r[0] for r in result_set.rows])


# -- the proxy ---------------------------------------------------------------------

class Proxy:
    """Message handler for the proxy.

    ``connect(host, port)`` returns a link with ``call(kind, payload)``;
    ``address`` is the ``(host, port)`` servers use to send purge
    notifications back.
    """

    def __init__(self, connect=tcp_connect, address=None, cache_capacity=DEFAULT_CAPACITY,
                 cache_enabled=True, join_enabled=True, seed=None, max_workers=8):
        self.connect = connect
        self.address = address
        self.mapping = DataIdMapping()
        self.cache = Cache(cache_capacity, seed)
        self.cache_enabled = cache_enabled
        self.join_enabled = join_enabled
        self.server_calls = 0
        self.message_log = []
        self._links = {}
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=max_workers)

    def handle_message(self, envelope):
        return reply_for(envelope, self.dispatch)

    def dispatch(self, kind, payload):
        handler = _HANDLERS.get(kind)
        if handler is None:
            raise ProtocolError(f"unknown message kind {kind!r}")
        return handler(self, payload)

    def _log(self, *event):
        with self._lock:
            self.message_log.append(event)

    def link(self, endpoint):
        key = (endpoint.host, endpoint.port)
        with self._lock:
            link = self._links.get(key)
        if link is None:
            link = self.connect(endpoint.host, endpoint.port)
            with self._lock:
                link = self._links.setdefault(key, link)
        return link

    def resolve(self, data_id):
        return self.mapping.resolve(data_id)

    def _forward(self, kind, payload):
        endpoint = self.resolve(payload.get("data_id"))
        return self.link(endpoint).call(kind, payload)

    # -- management -----------------------------------------------------------

    def handle_init(self, payload):
        data_id = payload.get("data_id")
        if data_id in self.mapping:
            raise AlreadyInitialized(f"dataID {data_id!r} is already registered")
        host, port = payload.get("host"), payload.get("port")
        if not host or port is None:
            raise ProtocolError("init needs the server host and port")
        forward = {k: v for k, v in payload.items() if k not in ("host", "port")}
        if self.address is not None:
            forward["proxy"] = {"host": self.address[0], "port": self.address[1]}
        result = self.connect(host, port).call("init", forward)
        self.mapping.register(data_id, host, port, result.get("database_name", data_id))
        return result

    def handle_register_mapping(self, payload):
        try:
            self.mapping.register(payload["data_id"], payload["host"], payload["port"],
                                  payload.get("database") or payload["data_id"])
        except KeyError as exc:
            raise ProtocolError(f"register_mapping lacks {exc}") from None
        return {}

    def handle_purge_notify(self, payload):
        epoch = self.cache.purge()
        self._log("purge", payload.get("data_id"), epoch, len(self.cache))
        return {"epoch": epoch}

    # -- queries ----------------------------------------------------------------

    def _fetch(self, resource):
        """Decision and data for one requested resource (from cache or server)."""
        data_id = resource.get("data_id")
        endpoint = self.resolve(data_id)
        creds = resource.get("credentials") or {}
        request = make_request(
            name=creds.get("name"),
            role=creds.get("role"),
            database=resource.get("database") or endpoint.database,
            table=resource.get("table"),
            columns=resource.get("columns") or [],
            actions=resource.get("actions") or ["read"],
            data_values=resource.get("values") or {},
        )
        key = f"{data_id}|{canonical_request_key(request)}"
        if self.cache_enabled:
            hit = self.cache.get(key)
            if hit is not None:
                value, epoch = hit
                return dict(value, cached=True, cache_epoch=epoch)
        epoch = self.cache.epoch
        try:
            value = self.link(endpoint).call("data_request", {"data_id": data_id,
                                                              "request": request_to_xml(request)})
        except ExacmlError as exc:
            return {"decision": "Deny", "header": [], "rows": [], "window_labels": None,
                    "matching_policy_ids": [], "error": f"{exc.code}: {exc.message}",
                    "cached": False, "transport_error": True}
        with self._lock:
            self.server_calls += 1
        if self.cache_enabled and value.get("decision") == "Permit":
            self.cache.put(key, value, epoch)
        return dict(value, cached=False)

    def fanout_query(self, resources, join=None):
        if not resources:
            raise ProtocolError("no resources requested")
        if join is not None:
            if not self.join_enabled:
                raise ProtocolError("data joining is disabled at this proxy")
            if len(join) != len(resources):
                raise ProtocolError(f"{len(join)} join columns for {len(resources)} resources")
        for r in resources:
            self.resolve(r.get("data_id"))
        constraints = [parse_constraints(r.get("constraints")) for r in resources]
        if len(resources) == 1:
            fetched = [self._fetch(resources[0])]
        else:
            fetched = list(self._pool.map(self._fetch, resources))
        results = []
        for resource, value, cons in zip(resources, fetched, constraints):
            result = dict(value, data_id=resource.get("data_id"))
            if result["decision"] == "Permit" and result["rows"] and cons:
                had_labels = result.get("window_labels") is not None
                filtered = apply_constraints(labelled(result), cons)
                result["header"], result["rows"], result["window_labels"] = unlabelled(filtered, had_labels)
            results.append(result)
        response = {
            "results": results,
            "joined": None,
            "conflict": None,
            "matching_policy_ids": [i for r in results for i in r.get("matching_policy_ids", [])],
        }
        if join is not None:
            denied = [r for r in results if r["decision"] != "Permit"]
            if denied:
                response["conflict"] = "deny"
                response["deny_policy_ids"] = [i for r in denied for i in r.get("matching_policy_ids", [])]
            else:
                joined = join_results([labelled(r) for r in results], join)
                response["joined"] = joined.to_wire()
                if not joined.rows:
                    response["conflict"] = "empty_join"
        return response

    def handle_client_query_data(self, payload):
        return self.fanout_query(payload.get("resources") or [], payload.get("join"))

    def close(self):
        self._pool.shutdown(wait=False)
        for link in self._links.values():
            link.close()


def _forwarder(kind):
    def handler(proxy, payload):
        return proxy._forward(kind, payload)
    return handler


_HANDLERS = {
    "init": Proxy.handle_init,
    "register_mapping": Proxy.handle_register_mapping,
    "purge_notify": Proxy.handle_purge_notify,
    "client_query_data": Proxy.handle_client_query_data,
}
for _kind in ("add_data_1", "add_data_2", "remove_data_1", "remove_data_2",
              "load_policy", "remove_policy", "query_policy", "meta_query"):
    _HANDLERS[_kind] = _forwarder(_kind)
