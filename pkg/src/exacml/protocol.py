"""Newline-delimited JSON request/response messaging over TCP.

Every message is one JSON object on one line.  Requests look like
``{"id": 7, "kind": "load_policy", "payload": {...}}``; the reply echoes
the id and carries either ``"ok": true`` with a payload or ``"ok": false``
with ``{"error": {"code", "message"}}``.
"""

from __future__ import annotations

import itertools
import json
import logging
import socket
import socketserver
import threading

from .errors import ExacmlError, ProtocolError, TransportError, from_wire

log = logging.getLogger(__name__)

REPLY_KIND = {"purge_notify": "purge_notify_ack"}


def encode(message):
    return (json.dumps(message, separators=(",", ":")) + "\n").encode("utf-8")


def decode(line):
    try:
        message = json.loads(line)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"malformed message: {exc}") from None
    if not isinstance(message, dict):
        raise ProtocolError("message is not a JSON object")
    return message


def reply_for(envelope, dispatch):
    """Run ``dispatch(kind, payload)`` and wrap the outcome as a reply envelope."""
    msg_id = envelope.get("id")
    kind = envelope.get("kind")
    reply_kind = REPLY_KIND.get(kind, kind)
    try:
        if not isinstance(kind, str):
            raise ProtocolError("message has no kind")
        payload = envelope.get("payload") or {}
        if not isinstance(payload, dict):
            raise ProtocolError("payload is not an object")
        result = dispatch(kind, payload)
    except ExacmlError as exc:
        return {"id": msg_id, "kind": reply_kind, "ok": False, "error": exc.to_wire()}
    except Exception as exc:  # noqa: BLE001 - a handler bug must not kill the connection
        log.exception("unhandled error for %s", kind)
        return {"id": msg_id, "kind": reply_kind, "ok": False,
                "error": {"code": "InternalError", "message": str(exc)}}
    return {"id": msg_id, "kind": reply_kind, "ok": True, "payload": result}


def unwrap(reply):
    if not reply.get("ok"):
        raise from_wire(reply.get("error") or {})
    return reply.get("payload") or {}


class Connection:
    """Client side of the protocol, with a small pool of sockets.

    Concurrent callers each get their own socket, so one slow request does
    not block the others.
    """

    def __init__(self, host, port, timeout=60.0):
        self.host = host
        self.port = int(port)
        self.timeout = timeout
        self._ids = itertools.count(1)
        self._idle = []
        self._lock = threading.Lock()

    def _checkout(self):
        with self._lock:
            if self._idle:
                return self._idle.pop()
        try:
            sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        except OSError as exc:
            raise TransportError(f"cannot reach {self.host}:{self.port}: {exc}") from None
        return sock, sock.makefile("rb")

    def call(self, kind, payload):
        msg_id = next(self._ids)
        conn = self._checkout()
        sock, reader = conn
        try:
            sock.sendall(encode({"id": msg_id, "kind": kind, "payload": payload}))
            line = reader.readline()
        except OSError as exc:
            sock.close()
            raise TransportError(f"{self.host}:{self.port}: {exc}") from None
        if not line:
            sock.close()
            raise TransportError(f"{self.host}:{self.port} closed the connection")
        reply = decode(line)
        if reply.get("id") != msg_id:
            sock.close()
            raise ProtocolError(f"reply id {reply.get('id')} does not match request {msg_id}")
        with self._lock:
            self._idle.append(conn)
        return unwrap(reply)

    def close(self):
        with self._lock:
            idle, self._idle = self._idle, []
        for sock, reader in idle:
            reader.close()
            sock.close()


class LocalLink:
    """In-process stand-in for :class:`Connection`.

    Messages still pass through JSON encoding, so the in-process and TCP
    paths exchange byte-identical payloads.
    """

    def __init__(self, handler):
        self.handler = handler
        self._ids = itertools.count(1)

    def call(self, kind, payload):
        envelope = decode(encode({"id": next(self._ids), "kind": kind, "payload": payload}))
        reply = decode(encode(self.handler.handle_message(envelope)))
        return unwrap(reply)

    def close(self):
        pass


class LocalNetwork:
    """Address book mapping ``(host, port)`` to in-process handlers."""

    def __init__(self):
        self.handlers = {}

    def register(self, host, port, handler):
        self.handlers[(host, int(port))] = handler

    def connect(self, host, port):
        try:
            return LocalLink(self.handlers[(host, int(port))])
        except KeyError:
            raise TransportError(f"nothing listening at {host}:{port}") from None


def tcp_connect(host, port):
    return Connection(host, port)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        target = self.server.target
        for line in self.rfile:
            if not line.strip():
                continue
            try:
                envelope = decode(line)
            except ProtocolError as exc:
                reply = {"id": None, "ok": False, "error": exc.to_wire()}
            else:
                reply = target.handle_message(envelope)
            try:
                self.wfile.write(encode(reply))
                self.wfile.flush()
            except OSError:
                return


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


def serve(target, host="127.0.0.1", port=0, background=True):
    """Serve ``target.handle_message`` over TCP.

    Returns the socketserver; ``server.server_address`` holds the bound
    address.  With ``background`` the accept loop runs in a daemon thread.
    """
    server = _TCPServer((host, port), _Handler)
    server.target = target
    if background:
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
    return server
