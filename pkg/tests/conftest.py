import pytest

from exacml.client import Client, schema_payload
from exacml.cluster import Cluster
from exacml.demo import WEATHER_CSV, WEATHER_SCHEMA, demo_datasets
from exacml.protocol import LocalLink
from exacml.server import ExacmlServer, content_hash

NEA = {"name": "NEA", "role": "owner"}
LTA = {"name": "LTA", "role": "owner"}
GOV = {"name": "alice", "role": "government"}


class ServerDriver:
    """Talks to a bare server over a JSON round-trip link, without a proxy."""

    def __init__(self, server):
        self.server = server
        self.link = LocalLink(server)

    def call(self, kind, payload):
        return self.link.call(kind, dict(payload, data_id=payload.get("data_id", "weather1")))

    def init(self, creds=NEA, data_id="weather1"):
        return self.call("init", {"data_id": data_id, "database_type": "embedded", "database_name": "weather_data",
                                  "schemas": [schema_payload(WEATHER_SCHEMA)], "credentials": creds})

    def add(self, csv_text, creds=NEA, table="WeatherInfo"):
        digest = content_hash(csv_text)
        self.call("add_data_1", {"table": table, "credentials": creds, "content_hash": digest})
        return self.call("add_data_2", {"content_hash": digest, "csv": csv_text})["inserted"]

    def load(self, xml, creds=NEA):
        return self.call("load_policy", {"policy": xml, "credentials": creds})["policy_id"]


@pytest.fixture
def driver(tmp_path):
    d = ServerDriver(ExacmlServer(state_dir=tmp_path / "server"))
    d.init()
    d.add(WEATHER_CSV)
    return d


@pytest.fixture(scope="session")
def small_datasets():
    return demo_datasets(days=1)


@pytest.fixture
def cluster(small_datasets):
    with Cluster(seed=7) as c:
        for dataset in small_datasets:
            c.install(dataset)
        yield c
