"""Wire a proxy and per-dataset servers together on one host.

``tcp=False`` connects everything through :class:`LocalNetwork` (messages
still JSON round-trip); ``tcp=True`` runs each component on its own
loopback TCP port.
"""

from __future__ import annotations

from pathlib import Path

from .client import Client
from .protocol import LocalLink, LocalNetwork, serve, tcp_connect
from .proxy import DEFAULT_CAPACITY, Proxy
from .server import ExacmlServer


class Cluster:
    def __init__(self, tcp=False, cache_capacity=DEFAULT_CAPACITY, cache_enabled=True,
                 join_enabled=True, seed=0, state_root=None):
        self.tcp = tcp
        self.state_root = Path(state_root) if state_root is not None else None
        self.servers = {}  # data_id -> ExacmlServer
        self.endpoints = {}  # data_id -> (host, port)
        self._tcp_servers = []
        if tcp:
            self.proxy = Proxy(connect=tcp_connect, cache_capacity=cache_capacity,
                               cache_enabled=cache_enabled, join_enabled=join_enabled, seed=seed)
            srv = serve(self.proxy)
            self._tcp_servers.append(srv)
            self.proxy.address = srv.server_address[:2]
            self.client = Client(tcp_connect(*self.proxy.address))
        else:
            self.network = LocalNetwork()
            self.proxy = Proxy(connect=self.network.connect, address=("proxy", 7000),
                               cache_capacity=cache_capacity, cache_enabled=cache_enabled,
                               join_enabled=join_enabled, seed=seed)
            self.network.register("proxy", 7000, self.proxy)
            self.client = Client(LocalLink(self.proxy))

    def add_server(self, data_id):
        """Start an empty server meant to hold ``data_id``; return its address."""
        state_dir = self.state_root / data_id if self.state_root is not None else None
        if self.tcp:
            server = ExacmlServer(state_dir=state_dir, connect=tcp_connect)
            srv = serve(server)
            self._tcp_servers.append(srv)
            host, port = srv.server_address[:2]
        else:
            server = ExacmlServer(state_dir=state_dir, connect=self.network.connect)
            host, port = f"server-{data_id}", 7001 + len(self.servers)
            self.network.register(host, port, server)
        self.servers[data_id] = server
        self.endpoints[data_id] = (host, port)
        return host, port

    def server_link(self, data_id):
        """Direct link to a server, bypassing the proxy (baseline queries)."""
        host, port = self.endpoints[data_id]
        if self.tcp:
            return tcp_connect(host, port)
        return LocalLink(self.servers[data_id])

    def install(self, dataset):
        """Create ``dataset`` on a fresh server through the proxy and upload its rows."""
        host, port = self.add_server(dataset.data_id)
        creds = dataset.credentials
        self.client.init_database(host, port, dataset.data_id, creds,
                                  schemas=[s for s, _ in dataset.tables],
                                  database_name=dataset.database_name)
        for schema, body in dataset.tables:
            self.client.add_data(dataset.data_id, schema.table_name, body, creds)
        return self.servers[dataset.data_id]

    def data_executions(self):
        return sum(s.data_executions for s in self.servers.values())

    def close(self):
        for srv in self._tcp_servers:
            srv.shutdown()
            srv.server_close()
        self.proxy.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
