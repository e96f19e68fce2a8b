"""Command-line client.

Every data and policy command is one message to the proxy named by
``--proxy`` or ``EXACML_PROXY``.  Exit codes: 0 success, 2 denied,
3 transport, parse or server error, 4 usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import shlex
import sys
from pathlib import Path

from .client import Client
from .datastore import Schema
from .errors import AccessDenied, ExacmlError
from .protocol import serve, tcp_connect

EXIT_OK, EXIT_DENY, EXIT_ERROR, EXIT_USAGE = 0, 2, 3, 4
DEFAULT_PROXY = "127.0.0.1:7000"
FORMATS = ("table", "csv", "json")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_endpoint(text):
    host, sep, port = (text or "").rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 < int(port) < 65536:
        raise UsageError(f"endpoint {text!r} is not host:port")
    return host, int(port)


def parse_resource(text):
    """``"dataID table cols=a,b actions=read [value=col:x] [db=name]"`` -> resource dict."""
    try:
        words = shlex.split(text)
    except ValueError as exc:
        raise UsageError(f"resource {text!r}: {exc}") from None
    if len(words) < 2:
        raise UsageError(f"resource {text!r} needs a dataID and a table")
    resource = {"data_id": words[0], "table": words[1], "columns": [], "actions": ["read"], "values": {}}
    for word in words[2:]:
        key, sep, value = word.partition("=")
        if not sep or not value:
            raise UsageError(f"resource option {word!r} is not key=value")
        if key in ("cols", "columns"):
            resource["columns"] = [c for c in value.split(",") if c]
        elif key == "actions":
            resource["actions"] = [a for a in value.split(",") if a]
        elif key == "value":
            column, sep, literal = value.partition(":")
            if not sep or not column:
                raise UsageError(f"value {value!r} is not column:value")
            resource["values"][column] = literal
        elif key == "db":
            resource["database"] = value
        else:
            raise UsageError(f"unknown resource option {key!r}")
    if not resource["columns"]:
        raise UsageError(f"resource {text!r} names no columns (cols=a,b)")
    return resource


def parse_constraint(text, n_resources):
    """``"[N:]expression"`` -> (0-based resource index, expression)."""
    head, sep, rest = text.partition(":")
    if sep and head.strip().isdigit():
        index = int(head) - 1
        if not 0 <= index < n_resources:
            raise UsageError(f"constraint {text!r} refers to resource {head}, not 1..{n_resources}")
        return index, rest.strip()
    if n_resources != 1:
        raise UsageError(f"constraint {text!r} must name its resource as N:expression")
    return 0, text.strip()


def load_config(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None


# -- rendering ----------------------------------------------------------------

def _cell(value):
    return "" if value is None else str(value)


def render_rows(header, rows, fmt, out):
    if fmt == "csv":
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return
    cells = [list(map(_cell, header))] + [list(map(_cell, r)) for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    for n, row in enumerate(cells):
        out.write("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() + "\n")
        if n == 0:
            out.write("  ".join("-" * w for w in widths) + "\n")
    out.write(f"({len(rows)} rows)\n")


def _ids(ids):
    return " ".join(ids) if ids else "(none)"


def _with_labels(result):
    if result.get("window_labels") is None:
        return list(result["header"]), result["rows"]
    return ["window"] + list(result["header"]), [[l] + list(r) for l, r in zip(result["window_labels"],
                                                                                result["rows"])]


def render_query_data(reply, fmt, out):
    """Print a query-data reply; return the exit code."""
    results = reply["results"]
    denied = [r for r in results if r["decision"] != "Permit"]
    code = EXIT_DENY if denied else EXIT_OK
    if fmt == "json":
        if denied:
            reply = dict(reply, joined=None,
                         results=[dict(r, rows=[]) if r["decision"] != "Permit" else r for r in results])
        out.write(json.dumps(reply) + "\n")
        return code
    for r in results:
        verdict = "PERMIT" if r["decision"] == "Permit" else "DENY"
        out.write(f"# {r['data_id']}: {verdict}  matching policy ids: {_ids(r.get('matching_policy_ids'))}\n")
        if r.get("error"):
            out.write(f"#   note: {r['error']}\n")
    if denied:
        if reply.get("conflict"):
            out.write(f"# conflict: {reply['conflict']}\n")
        return code
    if reply.get("joined") is not None:
        render_rows(reply["joined"]["header"], reply["joined"]["rows"], fmt, out)
    else:
        for r in results:
            header, rows = _with_labels(r)
            if len(results) > 1:
                out.write(f"# {r['data_id']}\n")
            render_rows(header, rows, fmt, out)
    if reply.get("conflict"):
        out.write(f"# conflict: {reply['conflict']}\n")
        for r in results:
            out.write(f"#   {r['data_id']} policy ids: {_ids(r.get('matching_policy_ids'))}\n")
    return code


def _emit(payload, fmt, out, text):
    if fmt == "json":
        out.write(json.dumps(payload) + "\n")
    else:
        out.write(text + "\n")


# -- commands -----------------------------------------------------------------

def _schemas(paths):
    schemas = []
    for path in paths:
        path = Path(path)
        try:
            schemas.append(Schema.from_text(path.stem, path.read_text()))
        except OSError as exc:
            raise UsageError(f"cannot read schema {path}: {exc}") from None
    return schemas


def _read(path):
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None


def cmd_init_db(args, client, creds, out):
    host, port = parse_endpoint(args.server)
    reply = client.init_database(host, port, args.data_id, creds, _schemas(args.schema),
                                 args.database_type, args.database_name)
    _emit(reply, args.format, out, f"initialised {args.data_id} at {host}:{port}")
    return EXIT_OK


def cmd_add_data(args, client, creds, out):
    count = client.add_data(args.data_id, args.table, _read(args.csv), creds)
    _emit({"inserted": count}, args.format, out, f"inserted {count} rows into {args.table}")
    return EXIT_OK


def cmd_remove_data(args, client, creds, out):
    count = client.remove_data(args.data_id, args.table, args.predicate, creds)
    _emit({"removed": count}, args.format, out, f"removed {count} rows from {args.table}")
    return EXIT_OK


def cmd_load_policy(args, client, creds, out):
    policy_id = client.load_policy(args.data_id, _read(args.policy), creds)
    _emit({"policy_id": policy_id}, args.format, out, policy_id)
    return EXIT_OK


def cmd_remove_policy(args, client, creds, out):
    client.remove_policy(args.data_id, args.policy_id, creds)
    _emit({"policy_id": args.policy_id}, args.format, out, f"removed {args.policy_id}")
    return EXIT_OK


def cmd_query_policy(args, client, creds, out):
    reply = client.call("query_policy", {"data_id": args.data_id, "credentials": creds})
    if args.format == "json":
        _emit(reply, "json", out, "")
    else:
        render_rows(["policy_id", "description"], reply["policies"], args.format, out)
    return EXIT_OK


def _meta(reply, key, args, out):
    if args.format == "json":
        _emit(reply, "json", out, "")
    elif reply["decision"] != "Permit":
        out.write(f"DENY  matching policy ids: {_ids(reply.get('matching_policy_ids'))}\n")
    elif key == "tables":
        render_rows(["table"], [[t] for t in reply["tables"]], args.format, out)
    else:
        render_rows(["column", "type"], reply["columns"], args.format, out)
    return EXIT_OK if reply["decision"] == "Permit" else EXIT_DENY


def cmd_query_tables(args, client, creds, out):
    return _meta(client.query_tables(args.data_id, creds), "tables", args, out)


def cmd_query_columns(args, client, creds, out):
    return _meta(client.query_columns(args.data_id, args.table, creds), "columns", args, out)


def cmd_query_data(args, client, creds, out):
    resources = [parse_resource(text) for text in args.resource]
    for resource in resources:
        resource["credentials"] = creds
        resource["constraints"] = []
    for text in args.constraint or []:
        index, expression = parse_constraint(text, len(resources))
        resources[index]["constraints"].append(expression)
    join = None
    if args.join:
        join = args.join if len(args.join) == len(resources) else args.join * len(resources)
        if len(join) != len(resources):
            raise UsageError("give one --join column, or one per resource")
    return render_query_data(client.query_data(resources, join), args.format, out)


def cmd_register(args, client, creds, out):
    host, port = parse_endpoint(args.server)
    client.register_mapping(args.data_id, host, port, args.database)
    _emit({}, args.format, out, f"{args.data_id} -> {host}:{port}")
    return EXIT_OK


def _serve_forever(target, host, port, out):
    server = serve(target, host, port, background=False)
    bound = server.server_address
    out.write(f"listening on {bound[0]}:{bound[1]}\n")
    out.flush()
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_serve_server(args, out):
    from .server import ExacmlServer
    return _serve_forever(ExacmlServer(state_dir=args.state_dir), args.host, args.port, out)


def cmd_serve_proxy(args, out):
    from .proxy import Proxy
    address = (args.advertise or args.host, args.port)
    proxy = Proxy(address=address, cache_capacity=args.cache_capacity,
                  cache_enabled=not args.no_cache, join_enabled=not args.no_join)
    return _serve_forever(proxy, args.host, args.port, out)


def cmd_demo_data(args, out):
    from .demo import write_demo
    for path in write_demo(args.directory, args.days, args.seed):
        out.write(f"{path}\n")
    return EXIT_OK


def cmd_bench(args, out):
    from . import bench
    params = bench.WorkloadParams(days=args.days)
    if args.queries != params.n_direct_queries:
        params = params.scaled(args.queries)
    params = dataclasses.replace(params, n_requests=args.requests if args.requests is not None else params.n_requests)
    workload = bench.read_workload(args.workload) if args.workload else bench.generate_workload(params, args.seed)
    if args.save_workload:
        bench.write_workload(workload, args.save_workload)
    out.write(f"workload: {bench.type_counts(workload)}\n")
    runs = [("exacml", True, True), ("exacml", False, True), ("exacml", True, False), ("direct", False, False)]
    samples = []
    with bench.setup_cluster(workload, params, tcp=args.tcp, cache_capacity=args.cache_capacity) as cluster:
        direct = None
        for mode, cache, join in runs:
            requests = bench.zipf_requests(workload, params, args.seed) if args.zipf else None
            report = bench.run_benchmark(workload, cluster, mode, cache, join, requests)
            samples.extend(report.samples)
            out.write(f"\n== mode={mode} cache={cache} join={join}: {dict(report.decisions())}, "
                      f"server calls {report.server_calls()}\n")
            out.write(report.percentile_table() + "\n")
            if mode == "direct":
                direct = report
        base = bench.run_benchmark(workload, cluster, "exacml", False, True)
        mismatched = sum(
            1 for item in workload
            if bench.row_multiset(base.outcomes[f"{item.item_id}-m"].rows)
            != bench.row_multiset(direct.outcomes[f"{item.item_id}-m"].rows)
        ) if not args.zipf else None
        leaked = sum(1 for s in base.samples if s.request_id.endswith("-n") and (s.decision != "Deny" or s.rows))
    if mismatched is not None:
        out.write(f"\nequivalence: {len(workload) - mismatched}/{len(workload)} matching requests equal the "
                  f"direct query\n")
    out.write(f"non-matching requests leaking data: {leaked}\n")
    if args.out:
        Path(args.out).write_text(bench.BenchReport(samples).to_csv())
        out.write(f"samples written to {args.out}\n")
    return EXIT_OK if not mismatched and not leaked else EXIT_ERROR


# -- argument parsing ---------------------------------------------------------

def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--proxy", help="proxy host:port (default: $EXACML_PROXY or %s)" % DEFAULT_PROXY)
    common.add_argument("--config", help="JSON file with proxy, name, role and format defaults")
    common.add_argument("--name", help="subject name credential")
    common.add_argument("--role", help="subject role credential")
    common.add_argument("--format", choices=FORMATS, help="output format (default table)")

    parser = _Parser(prog="exacml", description="Client for the eXACML proxy and servers.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("init-db", parents=[common], help="create a dataset on a data server")
    p.add_argument("data_id")
    p.add_argument("--server", required=True, help="data server host:port")
    p.add_argument("--schema", action="append", default=[], help="schema file (name:type lines; table = file stem)")
    p.add_argument("--database-name")
    p.add_argument("--database-type", default="embedded")
    p.set_defaults(run=cmd_init_db)

    p = sub.add_parser("add-data", parents=[common], help="upload CSV rows (two-phase)")
    p.add_argument("data_id")
    p.add_argument("table")
    p.add_argument("csv")
    p.set_defaults(run=cmd_add_data)

    p = sub.add_parser("remove-data", parents=[common], help="delete rows matching a predicate (two-phase)")
    p.add_argument("data_id")
    p.add_argument("table")
    p.add_argument("predicate")
    p.set_defaults(run=cmd_remove_data)

    p = sub.add_parser("load-policy", parents=[common], help="load a policy file")
    p.add_argument("data_id")
    p.add_argument("policy")
    p.set_defaults(run=cmd_load_policy)

    p = sub.add_parser("remove-policy", parents=[common], help="remove a loaded policy")
    p.add_argument("data_id")
    p.add_argument("policy_id")
    p.set_defaults(run=cmd_remove_policy)

    p = sub.add_parser("query-policy", parents=[common], help="list policies of a dataset")
    p.add_argument("data_id")
    p.set_defaults(run=cmd_query_policy)

    p = sub.add_parser("query-tables", parents=[common], help="list tables you may see")
    p.add_argument("data_id")
    p.set_defaults(run=cmd_query_tables)

    p = sub.add_parser("query-columns", parents=[common], help="list columns of a table")
    p.add_argument("data_id")
    p.add_argument("table")
    p.set_defaults(run=cmd_query_columns)

    p = sub.add_parser("query-data", parents=[common], help="request data from one or more datasets")
    p.add_argument("--resource", action="append", required=True,
                   help='"dataID table cols=a,b actions=read [value=col:x] [db=name]"')
    p.add_argument("--join", action="append", help="join column (once, or once per resource)")
    p.add_argument("--constraint", action="append", help='"[N:]expression" applied to resource N')
    p.set_defaults(run=cmd_query_data)

    p = sub.add_parser("register-mapping", parents=[common], help="map a dataID to a server")
    p.add_argument("data_id")
    p.add_argument("server", help="host:port")
    p.add_argument("--database")
    p.set_defaults(run=cmd_register)

    p = sub.add_parser("serve-server", help="run a data server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7001)
    p.add_argument("--state-dir")
    p.set_defaults(local=cmd_serve_server)

    p = sub.add_parser("serve-proxy", help="run the proxy")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7000)
    p.add_argument("--advertise", help="host servers use to reach this proxy")
    p.add_argument("--cache-capacity", type=int, default=1024)
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--no-join", action="store_true")
    p.set_defaults(local=cmd_serve_proxy)

    p = sub.add_parser("demo-data", help="write the demo weather and traffic tables")
    p.add_argument("directory")
    p.add_argument("--days", type=int, default=5)
    p.add_argument("--seed", type=int, default=2011)
    p.set_defaults(local=cmd_demo_data)

    p = sub.add_parser("bench", help="generate a workload and run the benchmark")
    p.add_argument("--queries", type=int, default=100, help="number of direct queries (type ratios kept)")
    p.add_argument("--requests", type=int, help="Zipf request count")
    p.add_argument("--days", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zipf", action="store_true", help="issue a Zipf request stream instead of every item")
    p.add_argument("--tcp", action="store_true", help="run components on loopback TCP ports")
    p.add_argument("--cache-capacity", type=int, default=1024)
    p.add_argument("--workload", help="read the workload from a JSON lines file")
    p.add_argument("--save-workload", help="write the generated workload as JSON lines")
    p.add_argument("--out", help="write raw samples as CSV")
    p.set_defaults(local=cmd_bench)
    return parser


def run_command(argv, out=None, err=None, connect=tcp_connect, env=None):
    """Run one command; return its exit code."""
    out = out or sys.stdout
    err = err or sys.stderr
    env = os.environ if env is None else env
    try:
        args = build_parser().parse_args(argv)
        if hasattr(args, "local"):
            return args.local(args, out)
        config = load_config(args.config)
        args.format = args.format or config.get("format", "table")
        if args.format not in FORMATS:
            raise UsageError(f"unknown format {args.format!r}")
        endpoint = parse_endpoint(args.proxy or env.get("EXACML_PROXY") or config.get("proxy") or DEFAULT_PROXY)
        creds = {k: v for k, v in (("name", args.name or config.get("name")),
                                   ("role", args.role or config.get("role"))) if v}
        client = Client(connect(*endpoint))
        try:
            return args.run(args, client, creds, out)
        finally:
            close = getattr(client.link, "close", None)
            if close is not None:
                close()
    except UsageError as exc:
        err.write(f"{exc}\n")
        return EXIT_USAGE
    except AccessDenied as exc:
        out.write(f"DENY  {exc.message}\n")
        return EXIT_DENY
    except ExacmlError as exc:
        err.write(f"error: {exc.code}: {exc.message}\n")
        return EXIT_ERROR
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE


def main(argv=None):
    sys.exit(run_command(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
