"""Channels between the mediator and services.

Both transports move the NDJSON wire encoding, so the in-process channel
exercises exactly the bytes a TCP peer would see.
"""

from __future__ import annotations

import socket
import socketserver
import threading
from typing import Mapping

from . import wire
from .service import DataService
from .wire import ProtocolMessage


class Transport:
    def request(self, service: str, msg: ProtocolMessage) -> ProtocolMessage:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InProcessTransport(Transport):
    def __init__(self, services: Mapping[str, DataService], serialize: bool = True):
        self.services = dict(services)
        self.serialize = serialize

    def request(self, service: str, msg: ProtocolMessage) -> ProtocolMessage:
        target = self.services[service]
        if not self.serialize:
            return target.handle(msg)
        return wire.decode(target.handle_line(wire.encode(msg)))


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        service: DataService = self.server.service  # type: ignore[attr-defined]
        for raw in self.rfile:
            line = raw.decode("utf-8").strip()
            if not line:
                continue
            self.wfile.write((service.handle_line(line) + "\n").encode("utf-8"))
            self.wfile.flush()


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class ServiceServer:
    """Serves one data service over TCP, one message per line."""

    def __init__(self, service: DataService, host: str = "127.0.0.1", port: int = 0):
        self._server = _Server((host, port), _Handler)
        self._server.service = service  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def start(self) -> ServiceServer:
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> ServiceServer:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


class TcpTransport(Transport):
    def __init__(self, addresses: Mapping[str, tuple[str, int]], timeout: float = 30.0):
        self.addresses = dict(addresses)
        self.timeout = timeout
        self._conns: dict[str, tuple[socket.socket, object]] = {}
        self._lock = threading.Lock()

    def _conn(self, service: str):
        conn = self._conns.get(service)
        if conn is None:
            sock = socket.create_connection(self.addresses[service], timeout=self.timeout)
            conn = (sock, sock.makefile("rwb"))
            self._conns[service] = conn
        return conn

    def request(self, service: str, msg: ProtocolMessage) -> ProtocolMessage:
        with self._lock:
            _, fh = self._conn(service)
            fh.write((wire.encode(msg) + "\n").encode("utf-8"))
            fh.flush()
            line = fh.readline()
        if not line:
            raise ConnectionError(f"service {service} closed the connection")
        return wire.decode(line.decode("utf-8"))

    def close(self) -> None:
        for sock, fh in self._conns.values():
            fh.close()
            sock.close()
        self._conns.clear()
