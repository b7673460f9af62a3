"""Scenario-scripted mock HTTP source plus a disk-full filesystem.

A scenario is an ordered list of steps served one per request::

    [{"type": "respond", "body": "<sites/>", "format": "xml", "delay_ms": 0},
     {"type": "fail", "http_status": 503},
     {"type": "drop"},
     {"type": "hang", "ms": 5000}]

``repeat`` decides what happens once the steps run out: ``loop_last``
replays the final step, ``cycle`` starts over, ``once`` answers 410.

Control routes: ``GET /_count/{route}`` and ``POST /_reset``.

Run standalone::

    python -m viewcache.simulator --port 8081 --route /ggus=ggus.json
"""

from __future__ import annotations

import argparse
import errno
import json
import logging
import socket
import struct
import sys
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Union

from .adapters import LocalFs
from .errors import PortInUse, UnknownRoute

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Respond:
    body: Union[str, Callable[[int], str]] = ""
    format: str = "xml"
    delay_ms: int = 0


@dataclass(frozen=True)
class Fail:
    http_status: int = 500


@dataclass(frozen=True)
class Drop:
    pass


@dataclass(frozen=True)
class Hang:
    ms: int = 1000


REPEAT_MODES = ("once", "loop_last", "cycle")


@dataclass
class Scenario:
    steps: list
    repeat: str = "loop_last"
    count: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if not self.steps:
            raise ValueError("scenario needs at least one step")
        if self.repeat not in REPEAT_MODES:
            raise ValueError(f"repeat must be one of {REPEAT_MODES}")

    def next_step(self):
        """Consume one step; returns (request number, step or None when exhausted)."""
        with self._lock:
            i = self.count
            self.count += 1
        n = len(self.steps)
        if i < n:
            return i + 1, self.steps[i]
        if self.repeat == "loop_last":
            return i + 1, self.steps[-1]
        if self.repeat == "cycle":
            return i + 1, self.steps[i % n]
        return i + 1, None

    def reset(self):
        with self._lock:
            self.count = 0


def step_from_json(obj) -> object:
    kind = obj.get("type")
    if kind == "respond":
        return Respond(obj.get("body", ""), obj.get("format", "xml"), int(obj.get("delay_ms", 0)))
    if kind == "fail":
        return Fail(int(obj.get("http_status", 500)))
    if kind == "drop":
        return Drop()
    if kind == "hang":
        return Hang(int(obj.get("ms", 1000)))
    raise ValueError(f"unknown step type {kind!r}")


def load_scenario(text: str, repeat: str = "loop_last") -> Scenario:
    steps = json.loads(text)
    if not isinstance(steps, list):
        raise ValueError("scenario file must be a JSON array of steps")
    return Scenario([step_from_json(s) for s in steps], repeat)


_CTYPES = {"xml": "application/xml", "json": "application/json", "csv": "text/csv"}


class _SimHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug(fmt, *args)

    def _plain(self, status: int, body: str, ctype="application/json"):
        data = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _drop(self):
        # RST instead of FIN so the client sees a reset connection
        self.connection.setsockopt(socket.SOL_SOCKET, socket.SO_LINGER, struct.pack("ii", 1, 0))
        self.close_connection = True
        try:
            self.connection.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass

    def do_GET(self):
        path = self.path.split("?", 1)[0]
        if path.startswith("/_count/"):
            route = "/" + path[len("/_count/"):]
            sc = self.server.scenarios.get(route)
            if sc is None:
                return self._plain(404, json.dumps({"error": "unknown route", "route": route}))
            return self._plain(200, json.dumps({"route": route, "count": sc.count}))
        sc = self.server.scenarios.get(path)
        if sc is None:
            return self._plain(404, json.dumps({"error": "unknown route"}))
        n, step = sc.next_step()
        if step is None:
            return self._plain(410, json.dumps({"error": "scenario exhausted"}))
        if isinstance(step, Respond):
            if step.delay_ms:
                time.sleep(step.delay_ms / 1000.0)
            body = step.body(n) if callable(step.body) else step.body
            try:
                self._plain(200, body, _CTYPES.get(step.format, "application/octet-stream"))
            except (BrokenPipeError, ConnectionResetError):
                pass
        elif isinstance(step, Fail):
            self._plain(step.http_status, json.dumps({"error": "scripted failure"}))
        elif isinstance(step, Drop):
            self._drop()
        elif isinstance(step, Hang):
            time.sleep(step.ms / 1000.0)
            self._drop()

    def do_POST(self):
        if self.path == "/_reset":
            for sc in self.server.scenarios.values():
                sc.reset()
            return self._plain(200, json.dumps({"reset": True}))
        return self._plain(404, json.dumps({"error": "unknown route"}))


class SimulatorHandle(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 128
    allow_reuse_address = False

    def __init__(self, scenarios: dict, host: str = "127.0.0.1", port: int = 0):
        self.scenarios = dict(scenarios)
        try:
            super().__init__((host, port), _SimHandler)
        except OSError as exc:
            if exc.errno == errno.EADDRINUSE:
                raise PortInUse(f"port {port} is in use") from None
            raise
        self._thread = threading.Thread(target=self.serve_forever, args=(0.05,), name="viewcache-sim", daemon=True)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def url(self, route: str = "") -> str:
        return f"http://{self.server_address[0]}:{self.port}{route}"

    def counts(self, route: str) -> int:
        return sim_counts(self, route)

    def reset(self) -> None:
        for sc in self.scenarios.values():
            sc.reset()

    def set_scenario(self, route: str, scenario: Scenario) -> None:
        self.scenarios[route] = scenario

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def sim_start(scenarios: dict, port: int = 0, host: str = "127.0.0.1") -> SimulatorHandle:
    handle = SimulatorHandle(scenarios, host, port)
    handle._thread.start()
    return handle


def sim_counts(handle: SimulatorHandle, route: str) -> int:
    sc = handle.scenarios.get(route)
    if sc is None:
        raise UnknownRoute(route)
    return sc.count


# -- filesystem faults -------------------------------------------------------

class _LimitedWriter:
    def __init__(self, fh, limit: int):
        self._fh = fh
        self._left = limit

    def write(self, data: bytes) -> int:
        if len(data) > self._left:
            self._fh.write(data[:self._left])
            self._left = 0
            raise OSError(errno.ENOSPC, "No space left on device")
        self._left -= len(data)
        return self._fh.write(data)

    def __getattr__(self, name):
        return getattr(self._fh, name)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self._fh.close()


class DiskFullFs(LocalFs):
    """Temp files accept at most ``limit`` bytes, then fail with ENOSPC."""

    def __init__(self, limit: int = 0):
        self.limit = limit

    def open_temp(self, path: str):
        return _LimitedWriter(open(path, "wb"), self.limit)


# -- executable --------------------------------------------------------------

def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="viewcache-sim", description="Scenario-scripted mock HTTP source")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8081)
    p.add_argument("--route", action="append", default=[], metavar="ROUTE=FILE",
                   help="serve ROUTE from the scenario in FILE (repeatable)")
    p.add_argument("--repeat", choices=REPEAT_MODES, default="loop_last")
    args = p.parse_args(argv)
    scenarios = {}
    for spec in args.route:
        route, sep, path = spec.partition("=")
        if not sep:
            p.error(f"--route expects ROUTE=FILE, got {spec!r}")
        with open(path, encoding="utf-8") as fh:
            scenarios["/" + route.lstrip("/")] = load_scenario(fh.read(), args.repeat)
    try:
        handle = SimulatorHandle(scenarios, args.host, args.port)
    except PortInUse as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"simulator listening on {handle.url()}", file=sys.stderr)
    try:
        handle.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        handle.server_close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
