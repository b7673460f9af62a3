import json
import random

import pytest

from viewcache.config import (FallbackRule, config_dump, config_load, config_parse, config_validate,
                              load_file)
from viewcache.errors import (ConfigError, ConfigSemanticError, ConfigSyntaxError, HttpStatus,
                              SourceTimeout)

from conftest import EXAMPLE_DIR
from oracles import damage_text, mutate_config

EXAMPLE_TEXT = (EXAMPLE_DIR / "config.json").read_text()


def _cfg(views, joins=()):
    return json.dumps({"views": views, "joins": list(joins)})


def _file_view(name, **cache):
    return {"name": name, "adapter": {"kind": "file", "path": f"{name}.xml"}, "cache": cache or {"type": "memory"}}


def _derived(name, bases, **extra):
    return {"name": name, "adapter": {"kind": "derived", "base_views": bases, "transform": "<x/>"}, **extra}


def test_example_loads_four_views():
    cfg = load_file(str(EXAMPLE_DIR / "config.json"))
    assert [v.name for v in cfg.all_views()] == ["sites", "downtimes", "monitoring", "outages"]
    dt = cfg.view("downtimes")
    assert dt.policy.cache_type == "disk"
    assert [f.action for f in dt.fallbacks] == ["error", "retry"]
    assert dt.fallbacks[1].retries == 2 and dt.fallbacks[1].final == "ignore"
    assert cfg.view("monitoring").policy.timeout_ms == 2000
    assert cfg.resolve_path(dt.policy.disk_path) == str(EXAMPLE_DIR / "cache" / "downtimes.xml")


def test_disk_without_path():
    with pytest.raises(ConfigSemanticError) as info:
        config_load(_cfg([_file_view("a", type="disk")]))
    assert info.value.errors == ["view 'a': cache type disk requires disk_path"]


def test_cycle_is_named():
    with pytest.raises(ConfigSemanticError) as info:
        config_load(_cfg([_derived("a", ["b"]), _derived("b", ["a"])]))
    assert len(info.value.errors) == 1
    assert info.value.errors[0] in ("dependency cycle: a -> b -> a", "dependency cycle: b -> a -> b")


def test_self_cycle():
    errors = config_validate(config_parse(_cfg([_derived("a", ["a"])])))
    assert errors == ["dependency cycle: a -> a"]


def test_diamond_is_fine():
    config_load(_cfg([_file_view("a"), _derived("b", ["a"]), _derived("c", ["a"]), _derived("d", ["b", "c"])]))


def test_dangling_join_reference():
    joins = [{"name": "j", "sources": [{"view": "ghost", "key_path": "@k", "record_path": "/r/x"}]}]
    with pytest.raises(ConfigSemanticError) as info:
        config_load(_cfg([_file_view("a")], joins))
    assert len(info.value.errors) == 1 and "ghost" in info.value.errors[0]


def test_semantic_checks():
    cases = [
        ([_file_view("a"), _file_view("a")], "duplicate view name"),
        ([_file_view("a", type="memory", validation="schema")], "requires a schema"),
        ([_file_view("a", type="memory", schema="nope")], "unknown schema"),
        ([_file_view("a", type="none", ttl_ms=5)], "forbids ttl"),
        ([_file_view("a", type="none", group="g")], "forbids consistency group"),
        ([_derived("a", ["zz"])], "not declared"),
        ([dict(_file_view("a"), triggers=[{"kind": "on_dependency", "source": "b"}]), _file_view("b")],
         "not a declared dependency"),
        ([dict(_file_view("a", type="memory", group="g"), triggers=[{"kind": "interval", "every_ms": 10}]),
          dict(_file_view("b", type="memory", group="g"), triggers=[{"kind": "interval", "every_ms": 20}])],
         "conflicting interval periods"),
    ]
    for views, needle in cases:
        errors = config_validate(config_parse(_cfg(views)))
        assert any(needle in e for e in errors), (needle, errors)


@pytest.mark.parametrize("text, where", [
    ("{", "line 1"),
    ('{"views": {}}', "$.views"),
    ('{"views": [{"name": "a", "adapter": {"kind": "file", "path": "x", "bogus": 1}}]}', "$.views[0].adapter"),
    ('{"views": [{"name": "a", "adapter": {"kind": "ftp"}}]}', "$.views[0].adapter"),
    ('{"views": [{"name": "a", "adapter": {"kind": "file", "path": "x"}, "cache": {"ttl_ms": -1}}]}',
     "$.views[0].cache"),
    ('{"views": [{"name": "a", "adapter": {"kind": "derived", "base_views": ["b"], "transform": "<r vf:x=\\"1\\"/>"}}]}',
     "$.views[0].adapter"),
    ('{"listen": "nowhere"}', "$.listen"),
    ('{"surprise": 1}', "$"),
])
def test_syntax_errors_carry_location(text, where):
    with pytest.raises(ConfigSyntaxError) as info:
        config_parse(text)
    assert info.value.location.startswith(where)


def test_dump_load_fixpoint():
    cfg = config_load(EXAMPLE_TEXT)
    again = config_load(config_dump(cfg))
    assert again == cfg
    assert config_dump(again) == config_dump(cfg)


def test_dump_load_fixpoint_with_join():
    raw = json.loads(EXAMPLE_TEXT)
    raw["joins"] = [{"name": "summary", "sources": [
        {"view": "downtimes", "key_path": "@site", "record_path": "/downtimes/downtime"},
        {"view": "monitoring", "key_path": "@site", "record_path": "/probes/probe"}],
        "cache": {"type": "memory", "ttl_ms": 500}}]
    cfg = config_load(json.dumps(raw))
    assert config_load(config_dump(cfg)) == cfg


def test_fallback_matching():
    assert FallbackRule("HttpStatus(500-599)", "retry").matches(HttpStatus(503))
    assert not FallbackRule("HttpStatus(500-599)", "retry").matches(HttpStatus(404))
    assert FallbackRule("HttpStatus(404)", "ignore").matches(HttpStatus(404))
    assert FallbackRule("HttpStatus", "ignore").matches(HttpStatus(418))
    assert not FallbackRule("HttpStatus", "ignore").matches(SourceTimeout("t"))
    assert FallbackRule("Any", "error").matches(ValueError())


def test_mutated_configs_only_raise_config_errors():
    raw = json.loads(EXAMPLE_TEXT)
    rng = random.Random(31)
    outcomes = {"ok": 0, "error": 0}
    for i in range(1000):
        if i % 4 == 0:
            text = damage_text(rng, EXAMPLE_TEXT)
        else:
            text = json.dumps(mutate_config(rng, raw))
        try:
            config_load(text)
            outcomes["ok"] += 1
        except ConfigError:
            outcomes["error"] += 1
    assert outcomes["error"] > 500 and outcomes["ok"] > 0
