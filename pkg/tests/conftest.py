import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from cslq import config as cfgmod  # noqa: E402
from cslq.cli import run_mpc, run_plan  # noqa: E402

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", max_examples=300, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@dataclass
class TaskRun:
    config: object
    result: object
    out: object
    elapsed: float


@dataclass
class TaskRunner:
    """Runs each bundled task once per session and remembers the outcome."""

    root: object
    runs: dict = field(default_factory=dict)

    def _run(self, key, fn):
        if key not in self.runs:
            out = self.root / "-".join(str(k) for k in key)
            start = time.perf_counter()
            result = fn(out)
            self.runs[key] = TaskRun(None, result, out, time.perf_counter() - start)
        return self.runs[key]

    def plan(self, name, tag="a"):
        cfg = cfgmod.load(name)
        run = self._run(("plan", name, tag), lambda out: run_plan(cfg, out))
        run.config = cfg
        return run

    def mpc(self, name, replan=True, tag="a"):
        cfg = cfgmod.load(name)
        run = self._run(("mpc", name, replan, tag), lambda out: run_mpc(cfg, out, replan=replan)[0])
        run.config = cfg
        return run


@pytest.fixture(scope="session")
def task_runner(tmp_path_factory):
    return TaskRunner(tmp_path_factory.mktemp("tasks"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
