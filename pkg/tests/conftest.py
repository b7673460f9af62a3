import json
import shutil
from importlib import resources
from pathlib import Path

import pytest

from viewcache.clock import ManualClock
from viewcache.simulator import Respond, Scenario, sim_start

EXAMPLE_DIR = Path(str(resources.files("viewcache") / "fixtures" / "grid_example"))

MONITORING_BODY = '<probes><probe site="CERN-PROD" status="OK"/><probe site="IN2P3-CC" status="CRITICAL"/></probes>'


@pytest.fixture
def clock():
    return ManualClock()


@pytest.fixture
def sim():
    handle = sim_start({})
    yield handle
    handle.stop()


@pytest.fixture
def example_config(tmp_path, sim):
    """The shipped four-view configuration, copied to tmp and pointed at the simulator."""
    for f in EXAMPLE_DIR.iterdir():
        shutil.copy(f, tmp_path / f.name)
    sim.set_scenario("/sam", Scenario([Respond(MONITORING_BODY)]))
    raw = json.loads((tmp_path / "config.json").read_text())
    for v in raw["views"]:
        if v["adapter"]["kind"] == "http":
            v["adapter"]["url"] = sim.url("/sam")
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw, indent=2))
    return path


# -- acceptance reporting ------------------------------------------------------

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
