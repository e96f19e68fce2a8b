"""Per-dataset cloud server.

One server owns exactly one dataset: a datastore, a PDP holding the
owner's policies, and the root policy installed at initialisation.  It
answers wire messages for data and policy management and data requests.

Mutating actions (``add_data``, ``remove_data``, ``load_policy``,
``remove_policy``) are authorised against the root policy alone, so a data
policy with ``AnyAction`` cannot accidentally grant administration.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .datastore import Schema, Store
from .direct import execute_direct
from .errors import (
    AccessDenied,
    AlreadyInitialized,
    ExacmlError,
    HashMismatch,
    NoPendingToken,
    NotFound,
    NotInitialized,
    ProtocolError,
    PurgeFailed,
    RootPolicyProtected,
    SchemaError,
    UnknownDataId,
)
from .pdp import PdpState
from .pep import fulfill_request
from .policy import (
    DATABASE_ID,
    SUBJECT_NAME,
    SUBJECT_ROLE,
    Decision,
    Policy,
    Rule,
    Target,
    action_match,
    evaluate_policy,
    make_request,
    parse_policy,
    parse_request,
    resource_match,
    subject_match,
)
from .protocol import reply_for, tcp_connect

log = logging.getLogger(__name__)

ADMIN_ACTIONS = ("add_data", "remove_data", "load_policy", "remove_policy")
META_ACTIONS = ("show_table", "show_column")
DATABASE_TYPES = ("embedded",)
TOKEN_TTL = 600.0
_HEX64 = re.compile(r"[0-9a-f]{64}")


def content_hash(text):
    """SHA-256 over the exact UTF-8 bytes, hex encoded."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def root_policy(data_id, database_name, owner_name, owner_role):
    """Policy letting only the owner (name and role) mutate data and policies."""
    return Policy(
        rules=(Rule("owner-administers", Decision.PERMIT),),
        target=Target(
            subjects=((subject_match(SUBJECT_NAME, owner_name), subject_match(SUBJECT_ROLE, owner_role)),),
            resources=((resource_match(DATABASE_ID, database_name),),),
            actions=tuple((action_match(a),) for a in ADMIN_ACTIONS),
        ),
        description=f"root policy of {data_id}",
        policy_id=f"{data_id}:root",
    )


@dataclass
class PendingAdd:
    table: str
    expires: float


@dataclass
class PendingRemove:
    table: str
    expires: float


@dataclass
class ServerState:
    data_id: str
    database_name: str
    database_type: str
    owner: dict
    pdp: PdpState
    store: Store
    root: Policy
    proxy: Optional[dict] = None
    pending: dict = field(default_factory=dict)

    @property
    def root_id(self):
        return f"{self.data_id}:root"


def _credentials(payload):
    creds = payload.get("credentials") or {}
    if not isinstance(creds, dict):
        raise ProtocolError("credentials must be an object")
    return creds.get("name"), creds.get("role")


class ExacmlServer:
    """Message handler for one dataset.

    ``connect(host, port)`` opens a link to the proxy for purge
    notifications; ``clock`` supplies monotonic time for token expiry.
    """

    def __init__(self, state_dir=None, connect=tcp_connect, clock=time.monotonic, token_ttl=TOKEN_TTL):
        self.state_dir = Path(state_dir) if state_dir is not None else None
        self.connect = connect
        self.clock = clock
        self.token_ttl = token_ttl
        self.state = None
        self.data_executions = 0
        self.message_log = []
        self._init_lock = threading.Lock()
        self._tokens_lock = threading.Lock()
        self._log_lock = threading.Lock()
        self._proxy_link = None
        if self.state_dir is not None and (self.state_dir / "server.json").exists():
            self._restore()

    # -- plumbing -------------------------------------------------------------

    def handle_message(self, envelope):
        reply = reply_for(envelope, self.dispatch)
        self._log("reply", envelope.get("kind"), reply.get("ok"))
        return reply

    def dispatch(self, kind, payload):
        handler = getattr(self, f"handle_{kind}", None)
        if handler is None or kind not in _KINDS:
            raise ProtocolError(f"unknown message kind {kind!r}")
        return handler(payload)

    def _log(self, *event):
        with self._log_lock:
            self.message_log.append(event)

    def _require_state(self, payload=None):
        if self.state is None:
            raise NotInitialized("server holds no dataset yet")
        data_id = (payload or {}).get("data_id")
        if data_id is not None and data_id != self.state.data_id:
            raise UnknownDataId(f"this server holds {self.state.data_id!r}, not {data_id!r}")
        return self.state

    def _authorize_admin(self, state, payload, action):
        name, role = _credentials(payload)
        request = make_request(name=name, role=role, database=state.database_name, actions=[action])
        decision, _ = evaluate_policy(state.root, request)
        if decision is not Decision.PERMIT:
            raise AccessDenied(f"{action} on {state.data_id} denied")

    # -- initialisation -------------------------------------------------------

    def handle_init(self, payload):
        with self._init_lock:
            data_id = payload.get("data_id")
            if self.state is not None:
                raise AlreadyInitialized(f"server already holds {self.state.data_id!r}")
            if not data_id or not isinstance(data_id, str) or ":" in data_id:
                raise SchemaError("data_id must be a non-empty string without ':'")
            database_type = (payload.get("database_type") or "embedded").lower()
            if database_type not in DATABASE_TYPES:
                raise SchemaError(f"unsupported database type {database_type!r}")
            name, role = _credentials(payload)
            if not name or not role:
                raise SchemaError("owner credentials need a name and a role")
            schemas = [Schema(s["table"], tuple(tuple(c) for c in s["columns"]))
                       for s in payload.get("schemas") or []]
            store = Store()
            for schema in schemas:
                store.create_table(schema)
            database_name = payload.get("database_name") or data_id
            policy_dir = self.state_dir / "policies" if self.state_dir is not None else None
            state = ServerState(
                data_id=data_id,
                database_name=database_name,
                database_type=database_type,
                owner={"name": name, "role": role},
                pdp=PdpState(data_id, directory=policy_dir),
                store=store,
                root=root_policy(data_id, database_name, name, role),
                proxy=payload.get("proxy"),
            )
            self.state = state
            self._save_meta()
            if self.state_dir is not None:
                store.save(self.state_dir / "tables")
            log.info("initialised dataset %s", data_id)
            return {"data_id": data_id, "database_name": database_name, "root_policy_id": state.root_id}

    def _save_meta(self):
        if self.state_dir is None:
            return
        self.state_dir.mkdir(parents=True, exist_ok=True)
        s = self.state
        meta = {"data_id": s.data_id, "database_name": s.database_name, "database_type": s.database_type,
                "owner": s.owner, "proxy": s.proxy}
        (self.state_dir / "server.json").write_text(json.dumps(meta, indent=2))

    def _restore(self):
        meta = json.loads((self.state_dir / "server.json").read_text())
        self.state = ServerState(
            data_id=meta["data_id"],
            database_name=meta["database_name"],
            database_type=meta["database_type"],
            owner=meta["owner"],
            pdp=PdpState.restore(meta["data_id"], self.state_dir / "policies"),
            store=Store.load(self.state_dir / "tables"),
            root=root_policy(meta["data_id"], meta["database_name"], meta["owner"]["name"], meta["owner"]["role"]),
            proxy=meta.get("proxy"),
        )

    # -- two-phase data mutation -----------------------------------------------

    def _expire_tokens(self, state):
        now = self.clock()
        for token in [t for t, p in state.pending.items() if p.expires <= now]:
            del state.pending[token]

    def _phase_one(self, payload, action, pending_cls):
        state = self._require_state(payload)
        table = payload.get("table")
        token = (payload.get("content_hash") or "").lower()
        if not _HEX64.fullmatch(token):
            raise ProtocolError("content_hash must be a hex SHA-256 digest")
        self._authorize_admin(state, payload, action)
        table = state.store.schema(table).table_name
        with self._tokens_lock:
            self._expire_tokens(state)
            state.pending[token] = pending_cls(table, self.clock() + self.token_ttl)
        return {"token": token}

    def _phase_two(self, payload, body_key, pending_cls):
        state = self._require_state(payload)
        token = (payload.get("content_hash") or "").lower()
        body = payload.get(body_key)
        if not isinstance(body, str):
            raise ProtocolError(f"{body_key} must be a string")
        with self._tokens_lock:
            self._expire_tokens(state)
            pending = state.pending.get(token)
            if not isinstance(pending, pending_cls):
                raise NoPendingToken("no pending token for this content hash")
            if content_hash(body) != token:
                raise HashMismatch("content does not match the pending token")
            del state.pending[token]
        return state, pending, body, token

    def _restore_token(self, state, token, pending):
        with self._tokens_lock:
            state.pending.setdefault(token, pending)

    def handle_add_data_1(self, payload):
        return self._phase_one(payload, "add_data", PendingAdd)

    def handle_add_data_2(self, payload):
        state, pending, body, token = self._phase_two(payload, "csv", PendingAdd)
        try:
            count = state.store.insert_rows(pending.table, body)
        except ExacmlError:
            self._restore_token(state, token, pending)
            raise
        if self.state_dir is not None:
            state.store.save_table(self.state_dir / "tables", pending.table)
        return {"inserted": count}

    def handle_remove_data_1(self, payload):
        return self._phase_one(payload, "remove_data", PendingRemove)

    def handle_remove_data_2(self, payload):
        state, pending, body, token = self._phase_two(payload, "predicate", PendingRemove)
        try:
            count = state.store.delete_rows(pending.table, body)
        except ExacmlError:
            self._restore_token(state, token, pending)
            raise
        if self.state_dir is not None:
            state.store.save_table(self.state_dir / "tables", pending.table)
        return {"removed": count}

    # -- policy administration ------------------------------------------------

    def _notify_purge(self, state):
        if not state.proxy:
            return
        self._log("purge_notify", state.data_id)
        try:
            if self._proxy_link is None:
                self._proxy_link = self.connect(state.proxy["host"], state.proxy["port"])
            self._proxy_link.call("purge_notify", {"data_id": state.data_id})
        except ExacmlError as exc:
            self._proxy_link = None
            raise PurgeFailed(f"policy changed but the proxy cache was not purged: {exc.message}") from None
        self._log("purge_notify_ack", state.data_id)

    def handle_load_policy(self, payload):
        state = self._require_state(payload)
        self._authorize_admin(state, payload, "load_policy")
        policy = parse_policy(payload.get("policy") or "")
        policy_id = state.pdp.load_policy(policy)
        self._notify_purge(state)
        return {"policy_id": policy_id}

    def handle_remove_policy(self, payload):
        state = self._require_state(payload)
        self._authorize_admin(state, payload, "remove_policy")
        policy_id = payload.get("policy_id")
        if policy_id == state.root_id:
            raise RootPolicyProtected("the root policy cannot be removed")
        state.pdp.remove_policy(policy_id)
        self._notify_purge(state)
        return {"policy_id": policy_id}

    def handle_query_policy(self, payload):
        state = self._require_state(payload)
        listing = [(state.root_id, state.root.description)] + state.pdp.list_policies()
        return {"policies": [list(p) for p in listing]}

    # -- queries ----------------------------------------------------------------

    def handle_meta_query(self, payload):
        state = self._require_state(payload)
        kind = payload.get("kind")
        if kind not in META_ACTIONS:
            raise ProtocolError(f"meta query kind must be one of {META_ACTIONS}")
        name, role = _credentials(payload)
        table = payload.get("table")
        if kind == "show_column" and not table:
            raise ProtocolError("show_column needs a table")
        request = make_request(name=name, role=role, database=state.database_name, table=table, actions=[kind])
        response = state.pdp.evaluate_request(request)
        out = {"decision": Decision.DENY.value, "matching_policy_ids": response.matching_policy_ids}
        if response.decision is not Decision.PERMIT:
            return out
        out["decision"] = Decision.PERMIT.value
        if kind == "show_table":
            out["tables"] = state.store.tables()
        else:
            out["columns"] = [list(c) for c in state.store.describe(table)]
        return out

    def handle_data_request(self, payload):
        state = self._require_state(payload)
        request = parse_request(payload.get("request") or "")
        with self._log_lock:
            self.data_executions += 1
        return fulfill_request(request, state.pdp, state.store).to_wire()

    def handle_direct_query(self, payload):
        state = self._require_state(payload)
        return execute_direct(payload["query"], state.store)

    def handle_purge_notify_ack(self, payload):
        return {}


_KINDS = {
    "init", "add_data_1", "add_data_2", "remove_data_1", "remove_data_2",
    "load_policy", "remove_policy", "query_policy", "meta_query", "data_request",
    "direct_query", "purge_notify_ack",
}
