"""Command line entry points.

Exit codes: 0 ok, 1 source failure, 2 configuration error, 3 cannot bind,
4 unknown view, 5 transform error.
"""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading

from .api import ApiServer
from .config import load_file
from .document import serialize_text
from .engine import CacheEngine, Scheduler, build_view
from .errors import ConfigError, ConfigSemanticError, TransformError, UnknownView, ViewCacheError
from .query import TransformTemplate

EXIT_OK, EXIT_SOURCE, EXIT_CONFIG, EXIT_BIND, EXIT_UNKNOWN_VIEW, EXIT_TRANSFORM = range(6)


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load(path: str):
    try:
        return load_file(path)
    except ConfigSemanticError as exc:
        for e in exc.errors:
            _err(f"{path}: {e}")
    except ConfigError as exc:
        _err(f"{path}: {exc}")
    except OSError as exc:
        _err(f"{path}: {exc.strerror}")
    return None


def cmd_check(args) -> int:
    cfg = _load(args.config)
    if cfg is None:
        return EXIT_CONFIG
    print(f"OK: {len(cfg.all_views())} views, {len(cfg.joins)} joins")
    return EXIT_OK


def _build(args):
    cfg = _load(args.config)
    if cfg is None:
        return None, EXIT_CONFIG
    engine = CacheEngine(cfg, persist=False)
    try:
        return build_view(engine, args.view), EXIT_OK
    except UnknownView as exc:
        _err(str(exc))
        return None, EXIT_UNKNOWN_VIEW
    except ViewCacheError as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return None, EXIT_SOURCE


def _emit(doc, fmt: str) -> None:
    sys.stdout.buffer.write(serialize_text(doc, fmt).encode("utf-8"))
    sys.stdout.buffer.flush()


def cmd_get(args) -> int:
    doc, code = _build(args)
    if doc is not None:
        _emit(doc, args.format)
    return code


def cmd_render(args) -> int:
    cfg = _load(args.config)
    if cfg is None:
        return EXIT_CONFIG
    try:
        with open(args.transform, "rb") as fh:
            tpl = TransformTemplate.parse(fh.read())
    except OSError as exc:
        _err(f"{args.transform}: {exc.strerror}")
        return EXIT_TRANSFORM
    except TransformError as exc:
        _err(f"{args.transform}: {exc}")
        return EXIT_TRANSFORM
    doc, code = _build(args)
    if doc is None:
        return code
    try:
        out = tpl.apply(doc)
    except TransformError as exc:
        _err(str(exc))
        return EXIT_TRANSFORM
    _emit(out, args.format)
    return EXIT_OK


def cmd_serve(args) -> int:
    cfg = _load(args.config)
    if cfg is None:
        return EXIT_CONFIG
    host, port = cfg.host_port
    if args.port is not None:
        port = args.port
    engine = CacheEngine(cfg)
    try:
        server = ApiServer(engine, host, port)
    except OSError as exc:
        _err(f"cannot listen on {host}:{port}: {exc.strerror}")
        return EXIT_BIND
    scheduler = Scheduler(engine, args.tick_ms / 1000.0).start()
    stop = threading.Event()

    def on_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGTERM, on_signal)
    signal.signal(signal.SIGINT, on_signal)
    server.start()
    _err(f"serving {len(engine.views)} views on {server.url}")
    stop.wait()
    scheduler.stop()
    server.stop()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="viewcache", description="Data view composition and caching service")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--config", required=True)
    s.add_argument("--port", type=int, help="override the configured listen port")
    s.add_argument("--tick-ms", type=int, default=50, help="scheduler tick period")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("check", help="validate a configuration")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_check)

    for name, func, help_ in (("get", cmd_get, "print one view"),
                              ("render", cmd_render, "print one view through a transform")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True)
        s.add_argument("view")
        s.add_argument("--format", choices=("xml", "json"), default="xml")
        if name == "render":
            s.add_argument("--transform", required=True, metavar="FILE")
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
