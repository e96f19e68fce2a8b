"""Embedded relational store for time-indexed tables.

The executor covers exactly the query shape the enforcement point emits::

    select f(c1), ..., f(cn) from T where <predicate>

with ``f`` one of ``avg``, ``min``, ``max``, ``count``, ``sum`` or the raw
projection (``identity``).  Column names resolve case-insensitively, the way
SQL identifiers do.

Predicates are written in a small SQL-like grammar::

    expr      := and_expr ("or" and_expr)*
    and_expr  := not_expr ("and" not_expr)*
    not_expr  := "not" not_expr | "(" expr ")" | "true" | "false"
               | column OP literal | literal OP column
               | "sqrt" "(" square ("+" square)* ")" OP literal
    square    := "(" column "-" number ")" "*" "(" column "-" number ")"
    OP        := = | == | != | <> | < | <= | > | >=

String and timestamp literals are single-quoted.
"""

from __future__ import annotations

import csv
import io
import math
import operator
import re
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Optional

from ._sync import RWLock
from .errors import (
    DuplicateTable,
    PredicateSyntaxError,
    RowTypeError,
    SchemaError,
    TypeMismatch,
    UnknownColumn,
    UnknownTable,
)
from .values import format_time, parse_time

DATETIME = "DateTime"
DOUBLE = "Double"
INTEGER = "Integer"
TEXT = "Text"
COLUMN_TYPES = (DATETIME, DOUBLE, INTEGER, TEXT)
NUMERIC = (DOUBLE, INTEGER)

AGGREGATES = ("avg", "min", "max", "count", "sum", "identity")


# -- schema -------------------------------------------------------------------

@dataclass(frozen=True)
class Schema:
    table_name: str
    columns: tuple

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple((n, t) for n, t in self.columns))
        if not self.table_name or not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", self.table_name):
            raise SchemaError(f"bad table name {self.table_name!r}")
        if not self.columns:
            raise SchemaError(f"table {self.table_name} has no columns")
        seen = set()
        for name, type_ in self.columns:
            if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
                raise SchemaError(f"bad column name {name!r}")
            if type_ not in COLUMN_TYPES:
                raise SchemaError(f"column {name}: unknown type {type_!r}")
            if name.lower() in seen:
                raise SchemaError(f"duplicate column {name!r}")
            seen.add(name.lower())

    @property
    def names(self):
        return [n for n, _ in self.columns]

    def index(self, column):
        key = column.strip().lower()
        for i, (name, _) in enumerate(self.columns):
            if name.lower() == key:
                return i
        raise UnknownColumn(f"{self.table_name} has no column {column!r}")

    def type_of(self, column):
        return self.columns[self.index(column)][1]

    def to_text(self):
        return "".join(f"{n}:{t}\n" for n, t in self.columns)

    @classmethod
    def from_text(cls, table_name, text):
        columns = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            name, sep, type_ = line.partition(":")
            if not sep:
                raise SchemaError(f"schema line {line!r} is not name:type")
            columns.append((name.strip(), type_.strip()))
        return cls(table_name, tuple(columns))


def parse_cell(type_, text):
    """Convert CSV text to the column's Python value; ``ValueError`` on failure."""
    if type_ == DOUBLE:
        value = float(text)
        if not math.isfinite(value):
            raise ValueError("non-finite double")
        return value
    if type_ == INTEGER:
        return int(text)
    if type_ == DATETIME:
        return parse_time(text)
    return text


def render_value(value):
    """Wire form of a stored value: timestamps become canonical strings."""
    if isinstance(value, datetime):
        return format_time(value)
    return value


def render_cell(value):
    """CSV text of a stored value, readable back by :func:`parse_cell`."""
    if isinstance(value, datetime):
        return format_time(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class ResultSet:
    header: list
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def to_wire(self):
        return {"header": list(self.header), "rows": [list(r) for r in self.rows]}

    @classmethod
    def from_wire(cls, data):
        return cls(list(data["header"]), [tuple(r) for r in data["rows"]])


# -- predicates ---------------------------------------------------------------

@dataclass(frozen=True)
class Comparison:
    column: str
    op: str
    literal: object  # float, int or str


@dataclass(frozen=True)
class And:
    parts: tuple


@dataclass(frozen=True)
class Or:
    parts: tuple


@dataclass(frozen=True)
class Not:
    part: object


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class Distance:
    """``sqrt(sum((c_i - x_i)^2)) OP threshold`` over numeric columns."""

    columns: tuple
    values: tuple
    op: str
    threshold: float


Predicate = object

COMPARISON_OPS = {
    "=": operator.eq, "==": operator.eq, "!=": operator.ne, "<>": operator.ne,
    "<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge,
}
_FLIP = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "=": "=", "==": "==", "!=": "!=", "<>": "<>"}

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<number>\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)
  | (?P<string>'(?:[^']|'')*')
  | (?P<op><=|>=|!=|<>|==|=|<|>)
  | (?P<punct>[()*+\-])
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
""", re.X)

_KEYWORDS = {"and", "or", "not", "true", "false", "sqrt"}


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise PredicateSyntaxError(f"unexpected character {text[pos]!r}", location=f"offset {pos}")
        kind = m.lastgroup
        value = m.group()
        if kind == "ident" and value.lower() in _KEYWORDS:
            kind, value = "kw", value.lower()
        if kind != "ws":
            tokens.append((kind, value, pos))
        pos = m.end()
    tokens.append(("end", "", pos))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self, offset=0):
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def take(self, kind=None, value=None):
        tok = self.peek()
        if (kind and tok[0] != kind) or (value is not None and tok[1] != value):
            want = value or kind
            found = tok[1] or "end of input"
            raise PredicateSyntaxError(f"expected {want!r}, found {found!r}", location=f"offset {tok[2]}")
        self.i += 1
        return tok

    def accept(self, kind, value=None):
        tok = self.peek()
        if tok[0] == kind and (value is None or tok[1] == value):
            self.i += 1
            return tok
        return None

    def parse(self):
        node = self.expr()
        self.take("end")
        return node

    def expr(self):
        parts = [self.and_expr()]
        while self.accept("kw", "or"):
            parts.append(self.and_expr())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def and_expr(self):
        parts = [self.not_expr()]
        while self.accept("kw", "and"):
            parts.append(self.not_expr())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def not_expr(self):
        if self.accept("kw", "not"):
            return Not(self.not_expr())
        if self.accept("punct", "("):
            node = self.expr()
            self.take("punct", ")")
            return node
        if self.accept("kw", "true"):
            return Const(True)
        if self.accept("kw", "false"):
            return Const(False)
        if self.accept("kw", "sqrt"):
            return self.distance()
        if self.peek()[0] == "ident":
            column = self.take("ident")[1]
            op = self.take("op")[1]
            return Comparison(column, op, self.literal())
        literal = self.literal()
        op = self.take("op")[1]
        column = self.take("ident")[1]
        return Comparison(column, _FLIP[op], literal)

    def literal(self):
        tok = self.peek()
        if tok[0] == "string":
            self.i += 1
            return tok[1][1:-1].replace("''", "'")
        return self.number()

    def number(self):
        negative = bool(self.accept("punct", "-"))
        if not negative:
            self.accept("punct", "+")
        text = self.take("number")[1]
        value = float(text) if re.search(r"[.eE]", text) else int(text)
        return -value if negative else value

    def square(self):
        self.take("punct", "(")
        column = self.take("ident")[1]
        self.take("punct", "-")
        value = self.number()
        self.take("punct", ")")
        self.take("punct", "*")
        self.take("punct", "(")
        column2 = self.take("ident")[1]
        self.take("punct", "-")
        value2 = self.number()
        self.take("punct", ")")
        if column2.lower() != column.lower() or value2 != value:
            raise PredicateSyntaxError("distance terms must square a single difference")
        return column, float(value)

    def distance(self):
        self.take("punct", "(")
        terms = [self.square()]
        while self.accept("punct", "+"):
            terms.append(self.square())
        self.take("punct", ")")
        op = self.take("op")[1]
        threshold = self.number()
        return Distance(tuple(c for c, _ in terms), tuple(v for _, v in terms), op, float(threshold))


def parse_predicate(text):
    """Parse predicate text into an expression tree."""
    if isinstance(text, str):
        return _Parser(text).parse()
    return text


def conjoin(*predicates):
    """AND together the non-None predicates (``None`` if there are none)."""
    parts = []
    for p in predicates:
        if p is None:
            continue
        if isinstance(p, And):
            parts.extend(p.parts)
        else:
            parts.append(p)
    if not parts:
        return None
    return parts[0] if len(parts) == 1 else And(tuple(parts))


def _literal_text(value):
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    if isinstance(value, datetime):
        return "'" + format_time(value) + "'"
    return repr(value)


def render_predicate(node):
    """Text form of a predicate; ``parse_predicate`` reads it back."""
    if isinstance(node, Comparison):
        return f"{node.column} {node.op} {_literal_text(node.literal)}"
    if isinstance(node, Const):
        return "true" if node.value else "false"
    if isinstance(node, Not):
        return f"not ({render_predicate(node.part)})"
    if isinstance(node, (And, Or)):
        joiner = " and " if isinstance(node, And) else " or "
        return joiner.join(f"({render_predicate(p)})" for p in node.parts)
    if isinstance(node, Distance):
        terms = " + ".join(f"({c} - {_literal_text(v)})*({c} - {_literal_text(v)})"
                           for c, v in zip(node.columns, node.values))
        return f"sqrt({terms}) {node.op} {_literal_text(node.threshold)}"
    raise TypeError(f"not a predicate: {node!r}")


def _coerce_literal(schema, column, literal):
    type_ = schema.type_of(column)
    if type_ == DOUBLE and isinstance(literal, (int, float)) and not isinstance(literal, bool):
        return float(literal)
    if type_ == INTEGER and isinstance(literal, int):
        return literal
    if type_ == INTEGER and isinstance(literal, float):
        return int(literal) if literal.is_integer() else literal
    if type_ == DATETIME and isinstance(literal, str):
        try:
            return parse_time(literal)
        except ValueError:
            pass
    if type_ == DATETIME and isinstance(literal, datetime):
        return literal
    if type_ == TEXT and isinstance(literal, str):
        return literal
    raise TypeMismatch(f"literal {literal!r} does not match {type_} column {column!r}")


def compile_predicate(node, schema):
    """Bind a predicate to a schema, returning ``row -> bool``.

    Unknown columns and literals of the wrong type fail here, before any
    row is touched.
    """
    if node is None:
        return lambda row: True
    if isinstance(node, Const):
        value = node.value
        return lambda row: value
    if isinstance(node, Comparison):
        i = schema.index(node.column)
        literal = _coerce_literal(schema, node.column, node.literal)
        op = COMPARISON_OPS[node.op]
        return lambda row: op(row[i], literal)
    if isinstance(node, Not):
        inner = compile_predicate(node.part, schema)
        return lambda row: not inner(row)
    if isinstance(node, And):
        parts = [compile_predicate(p, schema) for p in node.parts]
        return lambda row: all(p(row) for p in parts)
    if isinstance(node, Or):
        parts = [compile_predicate(p, schema) for p in node.parts]
        return lambda row: any(p(row) for p in parts)
    if isinstance(node, Distance):
        indexes = []
        for column in node.columns:
            if schema.type_of(column) not in NUMERIC:
                raise TypeMismatch(f"distance over non-numeric column {column!r}")
            indexes.append(schema.index(column))
        pairs = list(zip(indexes, node.values))
        op = COMPARISON_OPS[node.op]
        threshold = node.threshold
        return lambda row: op(math.sqrt(sum((row[i] - x) * (row[i] - x) for i, x in pairs)), threshold)
    raise TypeError(f"not a predicate: {node!r}")


# -- tables -------------------------------------------------------------------

class Table:
    def __init__(self, schema):
        self.schema = schema
        self.rows = []


def _aggregate(fn, type_, values):
    if fn == "count":
        return len(values)
    if not values:
        return None
    if fn == "min":
        return min(values)
    if fn == "max":
        return max(values)
    if fn == "sum":
        return sum(values) if type_ == INTEGER else math.fsum(values)
    return math.fsum(values) / len(values)  # avg


class Store:
    """In-memory tables of one dataset, guarded by a readers-writer lock."""

    def __init__(self):
        self._tables = OrderedDict()
        self._lock = RWLock()

    def _table(self, name):
        try:
            return self._tables[name.strip().lower()]
        except KeyError:
            raise UnknownTable(f"no table {name!r}") from None

    # -- DDL / DML ------------------------------------------------------------

    def create_table(self, schema):
        with self._lock.write():
            key = schema.table_name.lower()
            if key in self._tables:
                raise DuplicateTable(f"table {schema.table_name!r} exists")
            self._tables[key] = Table(schema)

    def insert_rows(self, table, csv_text):
        """Append rows from CSV text (header line first); return the count."""
        reader = csv.reader(io.StringIO(csv_text))
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("CSV body has no header line") from None
        with self._lock.write():
            t = self._table(table)
            schema = t.schema
            header = [h.strip() for h in header]
            if sorted(h.lower() for h in header) != sorted(n.lower() for n in schema.names):
                raise SchemaError(f"CSV header {header} does not match {schema.names}")
            order = [header.index(next(h for h in header if h.lower() == n.lower()))
                     for n in schema.names]
            parsed = []
            for number, record in enumerate(reader, start=1):
                if not record or all(not cell.strip() for cell in record):
                    continue
                if len(record) != len(header):
                    raise RowTypeError(number, None, f"row {number}: expected {len(header)} fields")
                row = []
                for (name, type_), j in zip(schema.columns, order):
                    cell = record[j] if type_ == TEXT else record[j].strip()
                    try:
                        row.append(parse_cell(type_, cell))
                    except ValueError:
                        raise RowTypeError(number, name) from None
                parsed.append(tuple(row))
            t.rows.extend(parsed)
            return len(parsed)

    def insert_values(self, table, rows):
        """Append already-typed rows (tuples aligned to the schema)."""
        with self._lock.write():
            t = self._table(table)
            rows = [tuple(r) for r in rows]
            t.rows.extend(rows)
            return len(rows)

    def delete_rows(self, table, predicate):
        with self._lock.write():
            t = self._table(table)
            test = compile_predicate(parse_predicate(predicate), t.schema)
            kept = [r for r in t.rows if not test(r)]
            removed = len(t.rows) - len(kept)
            t.rows = kept
            return removed

    # -- queries --------------------------------------------------------------

    def select(self, table, columns, f="identity", predicate=None):
        """Run ``select f(columns) from table where predicate``."""
        f = (f or "identity").lower()
        if f not in AGGREGATES:
            raise TypeMismatch(f"unknown aggregate function {f!r}")
        with self._lock.read():
            t = self._table(table)
            schema = t.schema
            if not columns:
                raise UnknownColumn("no columns requested")
            indexes = [schema.index(c) for c in columns]
            header = [schema.columns[i][0] for i in indexes]
            types = [schema.columns[i][1] for i in indexes]
            if f in ("avg", "sum"):
                bad = [h for h, ty in zip(header, types) if ty not in NUMERIC]
            elif f in ("min", "max"):
                bad = [h for h, ty in zip(header, types) if ty == TEXT]
            else:
                bad = []
            if bad:
                raise TypeMismatch(f"{f} over non-numeric column(s) {bad}")
            test = compile_predicate(parse_predicate(predicate), schema)
            matched = [r for r in t.rows if test(r)]
        if f == "identity":
            return ResultSet(header, [tuple(render_value(r[i]) for i in indexes) for r in matched])
        if f != "count" and not matched:
            return ResultSet(header, [])
        row = tuple(render_value(_aggregate(f, ty, [r[i] for r in matched]))
                    for i, ty in zip(indexes, types))
        return ResultSet(header, [row])

    def tables(self):
        with self._lock.read():
            return [t.schema.table_name for t in self._tables.values()]

    def describe(self, table):
        with self._lock.read():
            return list(self._table(table).schema.columns)

    def schema(self, table):
        with self._lock.read():
            return self._table(table).schema

    def row_count(self, table):
        with self._lock.read():
            return len(self._table(table).rows)

    def rows(self, table):
        with self._lock.read():
            return list(self._table(table).rows)

    # -- persistence ----------------------------------------------------------

    def save(self, directory):
        """Write one ``<table>.csv`` and ``<table>.schema`` per table."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with self._lock.read():
            for t in self._tables.values():
                self._save_table(directory, t)
            (directory / "tables").write_text(
                "".join(t.schema.table_name + "\n" for t in self._tables.values()))

    def save_table(self, directory, table):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with self._lock.read():
            self._save_table(directory, self._table(table))
            (directory / "tables").write_text(
                "".join(t.schema.table_name + "\n" for t in self._tables.values()))

    @staticmethod
    def _save_table(directory, t):
        name = t.schema.table_name
        (directory / f"{name}.schema").write_text(t.schema.to_text())
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(t.schema.names)
        for row in t.rows:
            writer.writerow([render_cell(v) for v in row])
        (directory / f"{name}.csv").write_text(buf.getvalue())

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        store = cls()
        index = directory / "tables"
        if not index.exists():
            return store
        for name in index.read_text().split():
            schema = Schema.from_text(name, (directory / f"{name}.schema").read_text())
            store.create_table(schema)
            data = directory / f"{name}.csv"
            if data.exists():
                store.insert_rows(name, data.read_text())
        return store


def table_csv(header, rows):
    """Render rows as CSV text with a header line (DateTime as canonical text)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([render_cell(v) for v in row])
    return buf.getvalue()
