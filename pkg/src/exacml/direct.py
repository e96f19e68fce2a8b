"""Direct-query baseline: run a query with no access-control layer.

A direct query is a plain dict::

    {"table": ..., "columns": [...], "f": "avg" | ... | "identity",
     "where": "<predicate text>" | None,
     "window": {"column", "start", "end", "size", "step", "unit"} | None}

Windows are enumerated by stepping the window start from ``start`` while
``start + size <= end + 1`` (in the window unit), with no reference to the
enforcement point's window arithmetic, so the two paths check each other.
"""

from datetime import timedelta

from .values import parse_time

_UNIT = {"hours": timedelta(hours=1), "minutes": timedelta(minutes=1)}


def direct_windows(window):
    unit = _UNIT[window.get("unit", "hours")]
    start = parse_time(window["start"])
    end = parse_time(window["end"])
    size = int(window["size"])
    step = int(window["step"])
    lo = start
    out = []
    while lo + size * unit <= end + unit:
        out.append((lo, lo + size * unit))
        lo += step * unit
    return out


def _where_text(*clauses):
    parts = [f"({c})" for c in clauses if c]
    return " and ".join(parts) if parts else None


def execute_direct(query, store):
    """Return ``{"header", "rows", "window_labels"}`` for a direct query."""
    f = query.get("f") or "identity"
    window = query.get("window")
    if not window:
        result = store.select(query["table"], query["columns"], f, query.get("where"))
        return {"header": result.header, "rows": [list(r) for r in result.rows], "window_labels": None}
    column = window["column"]
    rows, labels, header = [], [], list(query["columns"])
    for lo, hi in direct_windows(window):
        text = _where_text(query.get("where"),
                           f"{column} >= '{lo:%Y-%m-%d %H:%M:%S}' and {column} < '{hi:%Y-%m-%d %H:%M:%S}'")
        result = store.select(query["table"], query["columns"], f, text)
        header = result.header
        rows.extend(list(r) for r in result.rows)
        labels.extend(f"{lo:%Y-%m-%d %H:%M:%S}" for _ in result.rows)
    return {"header": header, "rows": rows, "window_labels": labels}


def nested_loop_join(tables, columns):
    """Client-side equi-join used by the baseline (``tables``: header/rows dicts)."""
    header = list(tables[0]["header"])
    rows = [list(r) for r in tables[0]["rows"]]
    key = header.index(columns[0])
    header = [header[key]] + [h for i, h in enumerate(header) if i != key]
    rows = [[r[key]] + [v for i, v in enumerate(r) if i != key] for r in rows]
    for table, column in zip(tables[1:], columns[1:]):
        other = table["header"].index(column)
        joined = []
        for left in rows:
            for right in table["rows"]:
                if type(left[0]) is type(right[other]) and left[0] == right[other]:
                    joined.append(left + [v for i, v in enumerate(right) if i != other])
        header = header + [h for i, h in enumerate(table["header"]) if i != other]
        rows = joined
    return {"header": header, "rows": rows}


def with_window_column(result):
    """Prepend the window label as a ``window`` column when labels exist."""
    labels = result.get("window_labels")
    if labels is None:
        return {"header": list(result["header"]), "rows": [list(r) for r in result["rows"]]}
    return {"header": ["window"] + list(result["header"]),
            "rows": [[label] + list(r) for label, r in zip(labels, result["rows"])]}
