"""Per-view cache state machine.

Exposed content lives in one immutable mapping ``view -> Exposure`` that
is replaced wholesale on every exposure.  A reader grabs the mapping
once, so a multi-view snapshot always sees a single instant, and a
consistency group swap (all members replaced in one assignment) is
never observed half done.

Refreshes are serialized per unit (a view, or a whole consistency
group).  Triggers arriving while a unit refreshes coalesce into one
follow-up run; readers never wait on a refresh except for the two
synchronous cases (``cache_type=none`` and an ``on_read`` view without
usable content).
"""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass
from typing import Optional

from . import adapters
from .adapters import GenerationContext, LocalFs
from .clock import SystemClock, parse_rfc3339, rfc3339
from .composition import Unavailable
from .config import ServiceConfig, ViewConfig
from .document import Document, doc_parse, doc_serialize
from .errors import (GroupPrepareFailed, OutdatedCache, SnapshotUnavailable, UnknownView,
                     ViewCacheError, ViewEmpty, ViewInError, error_class_of)
from .schema import validate_content

log = logging.getLogger(__name__)

# timestamps near 1.7e9 s carry ~0.2 us of float error; ages are compared with 1 us slack
_SLACK_MS = 1e-3


def age_to_ms(seconds: float) -> int:
    return max(0, math.floor(seconds * 1000 + _SLACK_MS))


CAUSES = ("manual", "interval", "notification", "read", "write", "expiry", "dependency")


@dataclass(frozen=True)
class Exposure:
    content: Optional[Document]
    generation: int
    generated_at: float
    epoch: int
    poisoned: bool = False


@dataclass(frozen=True)
class RefreshOutcome:
    kind: str                     # refreshed | served_stale_kept | failed
    generation: int = 0
    error_class: Optional[str] = None
    detail: str = ""

    @classmethod
    def refreshed(cls, generation):
        return cls("refreshed", generation)

    @property
    def ok(self) -> bool:
        return self.kind == "refreshed"


@dataclass(frozen=True)
class ReadMeta:
    generation: int
    generated_at: float
    age: float
    epoch: int = 0

    @property
    def age_ms(self) -> int:
        return age_to_ms(self.age)


@dataclass
class ViewRuntime:
    name: str
    consecutive_failures: int = 0
    last_error: Optional[tuple] = None       # (error class, timestamp)
    adapter_calls: int = 0
    refresh_in_flight: bool = False


class _RefreshUnit:
    """Single-flight runner: callers arriving mid-run share one follow-up run."""

    def __init__(self):
        self.cond = threading.Condition()
        self.running = False
        self.pending = False
        self.completed = 0
        self.results = {}

    def run(self, fn):
        with self.cond:
            if self.running:
                target = self.completed + 2
                self.pending = True
                while self.completed < target:
                    self.cond.wait()
                result = self.results[target]
                if isinstance(result, BaseException):
                    raise result
                return result
            self.running = True
        own = None
        first = True
        while True:
            try:
                result = fn()
            except BaseException as exc:  # handed to waiters, re-raised below
                result = exc
            if first:
                own, first = result, False
            with self.cond:
                self.completed += 1
                self.results[self.completed] = result
                self.results.pop(self.completed - 8, None)
                self.cond.notify_all()
                if self.pending:
                    self.pending = False
                    continue
                self.running = False
                break
        if isinstance(own, BaseException):
            raise own
        return own


class _Failure(Exception):
    def __init__(self, action, exc):
        self.action = action
        self.exc = exc


class CacheEngine:
    def __init__(self, cfg: ServiceConfig, clock=None, fs: Optional[LocalFs] = None,
                 persist: bool = True, start_time: Optional[float] = None):
        self.cfg = cfg
        self.clock = clock or SystemClock()
        self.fs = fs or LocalFs()
        self.persist = persist
        self.views = {v.name: v for v in cfg.all_views()}
        self.runtimes = {n: ViewRuntime(n) for n in self.views}
        self._state_lock = threading.Lock()
        self._swap_lock = threading.Lock()
        self._tick_lock = threading.Lock()
        self._exposed = {}
        self._units = {}
        self._units_lock = threading.Lock()

        self.order = self._topological_order()
        self.groups = {}
        for name in self.order:
            g = self.views[name].policy.group
            if g:
                self.groups.setdefault(g, []).append(name)
        self._epochs = {g: 0 for g in self.groups}
        self._dependents = {n: [] for n in self.views}
        for v in self.views.values():
            for t in v.triggers:
                if t.kind == "on_dependency" and t.source in self._dependents:
                    self._dependents[t.source].append(v.name)

        self.start_time = self.clock.now() if start_time is None else start_time
        self._next_due = {}
        self._expiry_fired = {}
        for v in self.views.values():
            for i, t in enumerate(v.triggers):
                if t.kind == "interval":
                    self._next_due[(v.name, i)] = self.start_time
        if persist:
            self._restore_disk()

    # -- lookup --------------------------------------------------------------

    def _config(self, name: str) -> ViewConfig:
        try:
            return self.views[name]
        except KeyError:
            raise UnknownView(name) from None

    def _topological_order(self) -> list:
        order, state = [], {}

        def visit(n):
            stack = [(n, iter(self.views[n].dependencies))]
            state[n] = 1
            while stack:
                node, it = stack[-1]
                for d in it:
                    if d in self.views and d not in state:
                        state[d] = 1
                        stack.append((d, iter(self.views[d].dependencies)))
                        break
                else:
                    stack.pop()
                    order.append(node)

        for n in self.views:
            if n not in state:
                visit(n)
        return order

    def unit_of(self, name: str) -> str:
        g = self._config(name).policy.group
        return f"group:{g}" if g else f"view:{name}"

    def _unit(self, key: str) -> _RefreshUnit:
        with self._units_lock:
            if key not in self._units:
                self._units[key] = _RefreshUnit()
            return self._units[key]

    def _members(self, key: str) -> list:
        kind, _, name = key.partition(":")
        return list(self.groups[name]) if kind == "group" else [name]

    def runtime(self, name: str) -> ViewRuntime:
        self._config(name)
        return self.runtimes[name]

    def exposure(self, name: str) -> Optional[Exposure]:
        return self._exposed.get(name)

    def group_epoch(self, group: str) -> int:
        return self._epochs[group]

    # -- disk persistence ----------------------------------------------------

    def _disk_paths(self, v: ViewConfig):
        path = self.cfg.resolve_path(v.policy.disk_path)
        return path, path + ".meta.json"

    def _persist(self, v: ViewConfig, exp: Exposure) -> None:
        if not self.persist or v.policy.cache_type != "disk":
            return
        path, meta = self._disk_paths(v)
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        adapters.write_atomic(path, doc_serialize(exp.content, "xml"), self.fs)
        record = {"generation": exp.generation, "generated_at": rfc3339(exp.generated_at),
                  "epoch": exp.epoch}
        adapters.write_atomic(meta, (json.dumps(record) + "\n").encode("utf-8"), self.fs)

    def _restore_disk(self) -> None:
        restored = {}
        for v in self.views.values():
            if v.policy.cache_type != "disk":
                continue
            path, meta = self._disk_paths(v)
            if not (os.path.exists(path) and os.path.exists(meta)):
                continue
            try:
                with open(path, "rb") as fh:
                    doc = doc_parse(fh.read(), "xml")
                with open(meta, "rb") as fh:
                    record = json.loads(fh.read())
                exp = Exposure(doc, int(record["generation"]), parse_rfc3339(record["generated_at"]),
                               int(record.get("epoch", record["generation"])))
            except (OSError, ValueError, KeyError, TypeError, ViewCacheError) as exc:
                log.warning("ignoring unreadable disk cache for %s: %s", v.name, exc)
                continue
            restored[v.name] = exp
            if v.policy.group:
                self._epochs[v.policy.group] = max(self._epochs[v.policy.group], exp.epoch)
        self._exposed = restored

    # -- generation ----------------------------------------------------------

    def _expired(self, v: ViewConfig, exp: Exposure, now: float) -> bool:
        return v.policy.ttl_ms is not None and (now - exp.generated_at) * 1000 - v.policy.ttl_ms > _SLACK_MS

    def _base_value(self, name: str, for_join: bool, now: float):
        v = self.views[name]
        if v.policy.cache_type == "none":
            try:
                return self._generate(v, {})
            except Exception:
                return Unavailable()
        exp = self._exposed.get(name)
        if exp is None or exp.content is None or exp.poisoned or self._expired(v, exp, now):
            return Unavailable()
        if for_join and self.runtimes[name].consecutive_failures:
            return Unavailable(exp.content, now - exp.generated_at)
        return exp.content

    def _generate(self, v: ViewConfig, prepared: dict) -> Document:
        bases = {}
        if v.adapter.kind == "derived":
            now = self.clock.now()
            for b in v.adapter.base_views:
                bases[b] = prepared[b] if b in prepared else \
                    self._base_value(b, v.adapter.join is not None, now)
        ctx = GenerationContext(bases, time.monotonic() + v.policy.timeout_ms / 1000.0,
                                self.cfg.resolve_path)
        with self._state_lock:
            self.runtimes[v.name].adapter_calls += 1
        doc = adapters.adapter_generate(v.adapter, ctx)
        schema = self.cfg.schemas.get(v.policy.schema_ref) if v.policy.schema_ref else None
        validate_content(doc, v.policy.validation, schema)
        return doc

    def _attempt(self, v: ViewConfig, prepared: dict) -> Document:
        """Generate with fallback rules applied; raises _Failure(ignore|error)."""
        used = {}
        while True:
            try:
                return self._generate(v, prepared)
            except Exception as exc:
                rule = v.fallback_for(exc)
                if rule.action != "retry":
                    raise _Failure(rule.action, exc) from exc
                n = used.get(id(rule), 0)
                if n >= rule.retries:
                    raise _Failure(rule.final, exc) from exc
                used[id(rule)] = n + 1
                self.clock.sleep(rule.backoff_ms / 1000.0)

    # -- exposure ------------------------------------------------------------

    def _replace(self, updates: dict) -> None:
        with self._swap_lock:
            new = dict(self._exposed)
            new.update(updates)
            self._exposed = new

    def _record_failure(self, name: str, f: _Failure, poison: bool) -> RefreshOutcome:
        now = self.clock.now()
        cls = error_class_of(f.exc)
        with self._state_lock:
            rt = self.runtimes[name]
            rt.consecutive_failures += 1
            rt.last_error = (cls, now)
        cur = self._exposed.get(name)
        gen = cur.generation if cur else 0
        if poison:
            if cur is None:
                cur = Exposure(None, 0, now, 0)
            if not cur.poisoned:
                self._replace({name: Exposure(cur.content, cur.generation, cur.generated_at,
                                              cur.epoch, poisoned=True)})
            return RefreshOutcome("failed", gen, cls, str(f.exc))
        return RefreshOutcome("served_stale_kept", gen, cls, str(f.exc))

    def _record_success(self, names) -> None:
        with self._state_lock:
            for n in names:
                self.runtimes[n].consecutive_failures = 0

    def swap_group(self, group: str, prepared: dict) -> int:
        """Expose every member's prepared ``(document, generation)`` at one instant.

        Returns the new group epoch.
        """
        members = self.groups.get(group)
        if members is None:
            raise ValueError(f"unknown group {group!r}")
        for m in members:
            if m not in prepared:
                raise GroupPrepareFailed(m, "NotPrepared", "member missing from prepared set")
        now = self.clock.now()
        epoch = self._epochs[group] + 1
        updates = {m: Exposure(prepared[m][0], prepared[m][1], now, epoch) for m in members}
        for m in members:
            self._persist(self.views[m], updates[m])
        with self._swap_lock:
            self._epochs[group] = epoch
            new = dict(self._exposed)
            new.update(updates)
            self._exposed = new
        self._record_success(members)
        return epoch

    def _run_unit(self, key: str, cause: str) -> dict:
        members = self._members(key)
        for m in members:
            self.runtimes[m].refresh_in_flight = True
        try:
            if self.views[members[0]].policy.cache_type == "none":
                return {m: RefreshOutcome.refreshed(0) for m in members}
            prepared = {}
            for m in members:
                try:
                    prepared[m] = self._attempt(self.views[m], prepared)
                except _Failure as f:
                    outcome = self._record_failure(m, f, poison=f.action == "error")
                    if not key.startswith("group:"):
                        return {m: outcome}
                    log.info("group %s not exposed: %s", key, GroupPrepareFailed(m, outcome.error_class))
                    others = {o: RefreshOutcome(outcome.kind, self._gen(o), outcome.error_class,
                                                outcome.detail) for o in members}
                    others[m] = outcome
                    return others
            if not key.startswith("group:"):
                m = members[0]
                gen = self._gen(m) + 1
                exp = Exposure(prepared[m], gen, self.clock.now(), gen)
                try:
                    self._persist(self.views[m], exp)
                except ViewCacheError as exc:
                    return {m: self._record_failure(m, _Failure("error", exc), poison=True)}
                self._replace({m: exp})
                self._record_success(members)
                return {m: RefreshOutcome.refreshed(gen)}
            group = key.partition(":")[2]
            try:
                self.swap_group(group, {m: (prepared[m], self._gen(m) + 1) for m in members})
            except ViewCacheError as exc:
                out = {o: RefreshOutcome("failed", self._gen(o), error_class_of(exc), str(exc))
                       for o in members}
                return out
            return {m: RefreshOutcome.refreshed(self._gen(m)) for m in members}
        finally:
            for m in members:
                self.runtimes[m].refresh_in_flight = False

    def _gen(self, name: str) -> int:
        exp = self._exposed.get(name)
        return exp.generation if exp else 0

    # -- refresh -------------------------------------------------------------

    def _refresh_unit(self, key: str, cause: str, cascade: bool) -> dict:
        def run():
            out = self._run_unit(key, cause)
            if cascade:
                self._cascade([n for n, o in out.items() if o.ok])
            return out
        return self._unit(key).run(run)

    def refresh_view(self, name: str, cause: str = "manual") -> RefreshOutcome:
        self._config(name)
        if cause not in CAUSES:
            raise ValueError(f"unknown refresh cause {cause!r}")
        out = self._refresh_unit(self.unit_of(name), cause, cascade=cause != "dependency")
        return out[name]

    def plan_dependents(self, name) -> list:
        """Views transitively triggered by ``name`` (or a list of names), in topological order."""
        roots = [name] if isinstance(name, str) else list(name)
        seen = set()
        stack = list(roots)
        while stack:
            n = stack.pop()
            for d in self._dependents.get(n, ()):
                if d not in seen:
                    seen.add(d)
                    stack.append(d)
        seen.difference_update(roots)
        return [n for n in self.order if n in seen]

    def _cascade(self, roots) -> None:
        if not roots:
            return
        changed = set(roots)
        done = set(roots)
        for d in self.plan_dependents(roots):
            if d in done:
                continue
            sources = {t.source for t in self.views[d].triggers if t.kind == "on_dependency"}
            if not sources & changed:
                continue
            key = self.unit_of(d)
            out = self._refresh_unit(key, "dependency", cascade=False)
            done.update(out)
            changed.update(n for n, o in out.items() if o.ok)

    def notify(self, event: str) -> list:
        names = [n for n in self.order
                 if any(t.kind == "notification" and t.event == event for t in self.views[n].triggers)]
        for key in dict.fromkeys(self.unit_of(n) for n in names):
            self._refresh_unit(key, "notification", cascade=True)
        return names

    def scheduler_tick(self, now: Optional[float] = None) -> list:
        now = self.clock.now() if now is None else now
        fired = []
        with self._tick_lock:
            for v in self.views.values():
                for i, t in enumerate(v.triggers):
                    if t.kind == "interval":
                        due = self._next_due[(v.name, i)]
                        if now >= due:
                            step = t.every_ms / 1000.0
                            while due <= now:
                                due += step
                            self._next_due[(v.name, i)] = due
                            fired.append((v.name, "interval"))
                    elif t.kind == "on_expiry":
                        exp = self._exposed.get(v.name)
                        if exp is None or exp.content is None or not self._expired(v, exp, now):
                            continue
                        if self._expiry_fired.get(v.name) == now:
                            continue
                        self._expiry_fired[v.name] = now
                        fired.append((v.name, "expiry"))
        for key, cause in dict.fromkeys((self.unit_of(n), c) for n, c in fired):
            self._refresh_unit(key, cause, cascade=True)
        return list(dict.fromkeys(fired))

    # -- reads ---------------------------------------------------------------

    def read_view(self, name: str):
        """Return ``(document, ReadMeta)``; never serves content older than the TTL."""
        v = self._config(name)
        if v.policy.cache_type == "none":
            doc = self._generate(v, {})
            now = self.clock.now()
            return doc, ReadMeta(0, now, 0.0, 0)
        exp = self._exposed.get(name)
        if any(t.kind == "on_read" for t in v.triggers):
            if exp is None or exp.content is None or self._expired(v, exp, self.clock.now()):
                self.refresh_view(name, "read")
                exp = self._exposed.get(name)
        if exp is None or exp.content is None:
            if exp is not None and exp.poisoned:
                raise ViewInError(f"view {name!r} is in error")
            raise ViewEmpty(f"view {name!r} has no content yet")
        now = self.clock.now()
        age = now - exp.generated_at
        if self._expired(v, exp, now):
            raise OutdatedCache(f"view {name!r} content is {age_to_ms(age)} ms old, ttl {v.policy.ttl_ms} ms")
        if exp.poisoned:
            raise ViewInError(f"view {name!r} is in error after a failed refresh")
        return exp.content, ReadMeta(exp.generation, exp.generated_at, age, exp.epoch)

    def read_snapshot(self, names) -> dict:
        names = list(names)
        for n in names:
            self._config(n)
        exposed = self._exposed
        now = self.clock.now()
        out = {}
        for n in names:
            v = self.views[n]
            if v.policy.cache_type == "none":
                raise SnapshotUnavailable(f"view {n!r} is not cached")
            exp = exposed.get(n)
            if exp is None or exp.content is None:
                raise SnapshotUnavailable(f"view {n!r} is empty")
            if exp.poisoned:
                raise SnapshotUnavailable(f"view {n!r} is in error")
            if self._expired(v, exp, now):
                raise SnapshotUnavailable(f"view {n!r} is outdated")
            out[n] = (exp.content, ReadMeta(exp.generation, exp.generated_at, now - exp.generated_at,
                                            exp.epoch))
        return out

    # -- writes --------------------------------------------------------------

    def write_view(self, name: str, doc: Document) -> list:
        """Write through a writable view, then fire its on_write triggers."""
        v = self._config(name)
        fired = []

        def on_write():
            if any(t.kind == "on_write" for t in v.triggers):
                fired.append(self.refresh_view(name, "write"))

        adapters.write_view(v.adapter, doc, self.cfg.resolve_path, self.fs, on_write)
        return fired

    # -- listing -------------------------------------------------------------

    def listing(self) -> list:
        exposed = self._exposed
        now = self.clock.now()
        out = []
        for name, v in self.views.items():
            exp = exposed.get(name)
            if exp is None or (exp.content is None and not exp.poisoned):
                state, gen, age = "empty", 0, None
            else:
                state = "error" if exp.poisoned else "exposed"
                gen = exp.generation
                age = age_to_ms(now - exp.generated_at) if exp.content is not None else None
            out.append({"name": name, "cache_type": v.policy.cache_type, "state": state,
                        "generation": gen, "age_ms": age, "group": v.policy.group})
        return out


class Scheduler:
    """Background thread calling :meth:`CacheEngine.scheduler_tick` periodically."""

    def __init__(self, engine: CacheEngine, period: float = 0.05):
        self.engine = engine
        self.period = period
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, name="viewcache-scheduler", daemon=True)

    def start(self):
        self._thread.start()
        return self

    def _loop(self):
        while not self._stop.is_set():
            try:
                self.engine.scheduler_tick()
            except Exception:
                log.exception("scheduler tick failed")
            self._stop.wait(self.period)

    def stop(self):
        self._stop.set()
        self._thread.join(timeout=5)


def build_view(engine: CacheEngine, name: str) -> Document:
    """Regenerate ``name`` and its transitive bases, bases first, ignoring cached state."""
    v = engine._config(name)
    needed, stack = set(), [name]
    while stack:
        n = stack.pop()
        for d in engine.views[n].dependencies:
            if d not in needed and d in engine.views:
                needed.add(d)
                stack.append(d)
    done = set()
    for n in engine.order:
        if n not in needed or n in done:
            continue
        key = engine.unit_of(n)
        done.update(engine._members(key))
        engine._refresh_unit(key, "manual", cascade=False)
    if v.policy.cache_type == "none":
        return engine.read_view(name)[0]
    outcome = engine._refresh_unit(engine.unit_of(name), "manual", cascade=False)[name]
    exp = engine.exposure(name)
    if not outcome.ok or exp is None or exp.content is None:
        raise ViewInError(f"view {name!r} could not be generated: {outcome.error_class}: {outcome.detail}")
    return exp.content
