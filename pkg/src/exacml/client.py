"""Client interface: one method per framework invocation.

Every call goes to the proxy.  Adding and removing data use the two-step
protocol: the content hash is sent first, and the body follows only after
the server has granted the action.
"""

from __future__ import annotations

from .protocol import tcp_connect
from .server import content_hash


def schema_payload(schema):
    return {"table": schema.table_name, "columns": [list(c) for c in schema.columns]}


class Client:
    def __init__(self, link):
        self.link = link

    @classmethod
    def connect(cls, host, port):
        return cls(tcp_connect(host, port))

    def call(self, kind, payload):
        return self.link.call(kind, payload)

    def init_database(self, host, port, data_id, credentials, schemas=(), database_type="embedded",
                      database_name=None):
        payload = {
            "host": host,
            "port": port,
            "data_id": data_id,
            "database_type": database_type,
            "schemas": [schema_payload(s) if hasattr(s, "columns") else s for s in schemas],
            "credentials": credentials,
        }
        if database_name:
            payload["database_name"] = database_name
        return self.call("init", payload)

    def add_data(self, data_id, table, csv_text, credentials):
        digest = content_hash(csv_text)
        self.call("add_data_1", {"data_id": data_id, "table": table, "credentials": credentials,
                                 "content_hash": digest})
        return self.call("add_data_2", {"data_id": data_id, "content_hash": digest, "csv": csv_text})["inserted"]

    def remove_data(self, data_id, table, predicate, credentials):
        digest = content_hash(predicate)
        self.call("remove_data_1", {"data_id": data_id, "table": table, "credentials": credentials,
                                    "content_hash": digest})
        return self.call("remove_data_2", {"data_id": data_id, "content_hash": digest,
                                           "predicate": predicate})["removed"]

    def load_policy(self, data_id, policy_xml, credentials):
        return self.call("load_policy", {"data_id": data_id, "policy": policy_xml,
                                         "credentials": credentials})["policy_id"]

    def remove_policy(self, data_id, policy_id, credentials):
        self.call("remove_policy", {"data_id": data_id, "policy_id": policy_id, "credentials": credentials})

    def query_policy(self, data_id, credentials=None):
        reply = self.call("query_policy", {"data_id": data_id, "credentials": credentials or {}})
        return [tuple(p) for p in reply["policies"]]

    def query_tables(self, data_id, credentials):
        return self.call("meta_query", {"data_id": data_id, "kind": "show_table", "credentials": credentials})

    def query_columns(self, data_id, table, credentials):
        return self.call("meta_query", {"data_id": data_id, "kind": "show_column", "table": table,
                                        "credentials": credentials})

    def query_data(self, resources, join=None):
        return self.call("client_query_data", {"resources": list(resources), "join": join})

    def register_mapping(self, data_id, host, port, database=None):
        return self.call("register_mapping", {"data_id": data_id, "host": host, "port": port,
                                              "database": database or data_id})
