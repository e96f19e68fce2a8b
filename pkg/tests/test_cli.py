import io
import json

import pytest

from conftest import LTA, NEA
from exacml import corpus
from exacml.cli import EXIT_DENY, EXIT_ERROR, EXIT_OK, EXIT_USAGE, parse_resource, run_command
from exacml.protocol import LocalLink
from helpers import window_policy_xml


class Recorder:
    """Link that keeps every reply payload, for the json round-trip check."""

    def __init__(self, target):
        self.inner = LocalLink(target)
        self.replies = []

    def call(self, kind, payload):
        reply = self.inner.call(kind, payload)
        self.replies.append(reply)
        return reply


@pytest.fixture
def cli(cluster):
    recorder = Recorder(cluster.proxy)

    def run(*argv, env=None):
        out, err = io.StringIO(), io.StringIO()
        code = run_command(list(argv), out=out, err=err, connect=lambda host, port: recorder,
                           env=env if env is not None else {"EXACML_PROXY": "proxy:7000"})
        return code, out.getvalue(), err.getvalue()

    run.recorder = recorder
    run.cluster = cluster
    return run


def owner(creds):
    return ["--name", creds["name"], "--role", creds["role"]]


def test_parse_resource_grammar():
    r = parse_resource("weather1 WeatherInfo cols=a,b actions=read value=a:27.0 db=other")
    assert r == {"data_id": "weather1", "table": "WeatherInfo", "columns": ["a", "b"], "actions": ["read"],
                 "values": {"a": "27.0"}, "database": "other"}


@pytest.mark.parametrize("text", ["weather1", "w T", "w T cols=", "w T cols=a bogus=1", "w T cols=a value=x"])
def test_bad_resource_is_usage_error(cli, text):
    code, out, err = cli("query-data", "--resource", text)
    assert code == EXIT_USAGE and out == "" and err


def test_unknown_subcommand_and_bad_endpoint(cli):
    assert cli("frobnicate")[0] == EXIT_USAGE
    assert cli("query-tables", "weather1", env={"EXACML_PROXY": "nohostport"})[0] == EXIT_USAGE


def test_query_tables_permitted(cli, tmp_path):
    policy = tmp_path / "p.xml"
    policy.write_text(corpus.text("government_policy"))
    code, out, _ = cli("load-policy", "weather1", str(policy), *owner(NEA))
    assert (code, out.strip()) == (EXIT_OK, "weather1:0")
    code, out, _ = cli("query-tables", "weather1", "--role", "government")
    assert code == EXIT_OK and "WeatherInfo" in out


def test_query_tables_denied(cli):
    code, out, _ = cli("query-tables", "weather1", "--role", "government")
    assert code == EXIT_DENY and out.startswith("DENY")


def test_admin_denied_exit_code(cli, tmp_path):
    policy = tmp_path / "p.xml"
    policy.write_text(corpus.text("government_policy"))
    code, out, _ = cli("load-policy", "weather1", str(policy), "--role", "government")
    assert code == EXIT_DENY and "DENY" in out


def test_foreign_database_denied(cli, tmp_path):
    policy = tmp_path / "p.xml"
    policy.write_text(corpus.text("government_policy"))
    cli("load-policy", "weather1", str(policy), *owner(NEA))
    code, out, _ = cli("query-data", "--resource", "weather1 WeatherInfo cols=temperature db=foreign_db",
                       "--role", "government")
    assert code == EXIT_DENY
    assert "DENY" in out and "matching policy ids: (none)" in out
    assert "rows)" not in out


def test_deny_never_prints_rows_in_any_format(cli):
    for fmt in ("table", "csv", "json"):
        code, out, _ = cli("query-data", "--resource", "weather1 WeatherInfo cols=Temperature",
                           "--role", "nobody", "--format", fmt)
        assert code == EXIT_DENY
        if fmt == "json":
            assert all(r["rows"] == [] for r in json.loads(out)["results"])
        else:
            assert "Temperature" not in out


def test_conflict_case_two_prints_both_id_lists(cli, tmp_path):
    w = tmp_path / "w.xml"
    w.write_text(window_policy_xml("analyst", "weather_data", "WeatherInfo", ["Temperature"],
                                   "2011-06-06 00:00:00", "2011-06-06 11:00:00"))
    t = tmp_path / "t.xml"
    t.write_text(window_policy_xml("analyst", "traffic_data", "TrafficInfo", ["TrafficVolume"],
                                   "2011-06-06 12:00:00", "2011-06-06 23:00:00"))
    assert cli("load-policy", "weather1", str(w), *owner(NEA))[1].strip() == "weather1:0"
    assert cli("load-policy", "traffic1", str(t), *owner(LTA))[1].strip() == "traffic1:0"
    code, out, _ = cli("query-data", "--resource", "weather1 WeatherInfo cols=Temperature",
                       "--resource", "traffic1 TrafficInfo cols=TrafficVolume", "--join", "window",
                       "--role", "analyst")
    assert code == EXIT_OK
    assert "(0 rows)" in out and "conflict: empty_join" in out
    assert "weather1 policy ids: weather1:0" in out and "traffic1 policy ids: traffic1:0" in out


@pytest.mark.parametrize("argv,creds", [
    (["query-policy", "weather1"], None),
    (["query-tables", "weather1"], {"role": "government"}),
    (["query-columns", "weather1", "WeatherInfo"], {"role": "government"}),
    (["query-data", "--resource", "weather1 WeatherInfo cols=temperature"], {"role": "government"}),
    (["query-data", "--resource", "weather1 WeatherInfo cols=temperature", "--constraint", "temperature > 29"],
     {"role": "government"}),
])
def test_json_output_round_trips_wire_payload(cli, tmp_path, argv, creds):
    policy = tmp_path / "p.xml"
    policy.write_text(corpus.text("window_policy"))
    cli("load-policy", "weather1", str(policy), *owner(NEA))
    flags = [f for k, v in (creds or {}).items() for f in (f"--{k}", v)]
    code, out, _ = cli(*argv, *flags, "--format", "json")
    assert code == EXIT_OK
    assert json.loads(out) == cli.recorder.replies[-1]


def test_data_management_round_trip(cli, tmp_path):
    body = tmp_path / "rows.csv"
    body.write_text("SamplingTime,Temperature,Humidity,RainRate\n2011-06-08 00:00:00,1,2,3\n")
    code, out, _ = cli("add-data", "weather1", "WeatherInfo", str(body), *owner(NEA), "--format", "json")
    assert code == EXIT_OK and json.loads(out) == cli.recorder.replies[-1] == {"inserted": 1}
    code, out, _ = cli("remove-data", "weather1", "WeatherInfo", "SamplingTime >= '2011-06-08 00:00:00'",
                       *owner(NEA), "--format", "json")
    assert json.loads(out) == {"removed": 1}
    code, out, _ = cli("remove-policy", "weather1", "weather1:root", *owner(NEA))
    assert code == EXIT_ERROR


def test_init_db_and_register(cli, tmp_path):
    from exacml.server import ExacmlServer
    cli.cluster.network.register("fresh", 9, ExacmlServer())
    schema = tmp_path / "Notes.schema"
    schema.write_text("SamplingTime:DateTime\nValue:Double\n")
    code, out, _ = cli("init-db", "notes1", "--server", "fresh:9", "--schema", str(schema),
                       "--name", "me", "--role", "owner", "--format", "json")
    assert code == EXIT_OK and json.loads(out)["root_policy_id"] == "notes1:root"
    code, out, _ = cli("query-policy", "notes1", "--format", "csv")
    assert out.splitlines() == ["policy_id,description", "notes1:root,root policy of notes1"]
    assert cli("register-mapping", "alias1", "fresh:9", "--database", "notes1")[0] == EXIT_OK


def test_config_file_supplies_credentials(cli, tmp_path):
    config = tmp_path / "exacml.json"
    config.write_text(json.dumps({"name": "NEA", "role": "owner", "format": "json"}))
    policy = tmp_path / "p.xml"
    policy.write_text(corpus.text("government_policy"))
    code, out, _ = cli("load-policy", "weather1", str(policy), "--config", str(config))
    assert code == EXIT_OK and json.loads(out) == {"policy_id": "weather1:0"}


def test_transport_error_exit_code():
    out, err = io.StringIO(), io.StringIO()
    code = run_command(["query-tables", "weather1", "--proxy", "127.0.0.1:1"], out=out, err=err, env={})
    assert code == EXIT_ERROR and "TransportError" in err.getvalue()


def test_demo_data_writes_tables(tmp_path):
    out = io.StringIO()
    assert run_command(["demo-data", str(tmp_path), "--days", "1"], out=out) == EXIT_OK
    assert (tmp_path / "weather1" / "WeatherInfo.csv").exists()
    assert (tmp_path / "traffic1" / "VehicleInfo.schema").read_text().startswith("SamplingTime:DateTime")
