import math
import time

import pytest
from hypothesis import HealthCheck, settings

from obftunnel.graph_core import BuildParams, obfuscate

settings.register_profile(
    "repo",
    deadline=None,
    derandomize=True,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def small_instance():
    """m=2, k=2, ell=7, unconditioned expanders: 58 vertices."""
    p = BuildParams(m=2, k=2, ell=7, rounds=0, expander_threshold=math.inf, seed=11)
    return p, *obfuscate(p)


@pytest.fixture(scope="session")
def separation_pair():
    from obftunnel.experiments import InstanceCache, separation_params

    cache = InstanceCache()
    p = separation_params()
    return {r: cache.get(p.with_rounds(r)) for r in (0, 1)}


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Records one PASS/FAIL line per acceptance criterion for the summary."""
    log = request.config.stash.setdefault(ACCEPTANCE, {})
    state = {}

    def start(number: int, title: str):
        state.update(number=number, title=title, t0=time.perf_counter())
        return state

    yield start
    if "number" not in state:
        return
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    took = time.perf_counter() - state["t0"]
    note = state.get("note", "")
    log[state["number"]] = f"criterion {state['number']:>2} {'PASS' if ok else 'FAIL'}  {state['title']}  ({took:.1f}s){'  ' + note if note else ''}"


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    if rep.when == "call":
        item.rep_call = rep
    return rep


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(ACCEPTANCE, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(log):
        terminalreporter.write_line(log[n])
