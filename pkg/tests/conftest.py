import numpy as np
import pytest

from canvi.models import MixtureDensityNetwork, train_favi
from canvi.stats import RngStream
from canvi.tasks import make_task

# FAVI budgets per task: (steps, batch).  SIR pays for its ODE solves, so it
# gets fewer, smaller batches; coverage does not depend on model quality.
TRAIN_BUDGET = {
    "two_moons": (3000, 256),
    "gaussian_mixture": (3000, 256),
    "sir": (1000, 128),
    "gaussian_linear_uniform": (2000, 256),
    "arch": (1000, 256),
}

# criterion number -> list of (label, passed, detail), filled by the acceptance suite
CRITERIA: dict = {}


def record(number: int, label: str, passed: bool, detail: str) -> bool:
    """Log one acceptance check and echo it; returns ``passed`` for chaining."""
    CRITERIA.setdefault(number, []).append((label, bool(passed), detail))
    print(f"criterion {number} [{label}]: {'PASS' if passed else 'FAIL'} ({detail})")
    return passed


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        rows = CRITERIA[number]
        ok = all(passed for _, passed, _ in rows)
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}")
        for label, passed, detail in rows:
            terminalreporter.write_line(f"    {'pass' if passed else 'FAIL'}  {label}: {detail}")


@pytest.fixture(scope="session")
def favi_runs():
    """Lazily trained MDNs, one per task, with step-0 and final checkpoints."""
    cache = {}

    def get(name):
        if name not in cache:
            steps, batch = TRAIN_BUDGET[name]
            task = make_task(name)
            model = MixtureDensityNetwork.for_task(task, RngStream(0, (1,)))
            cache[name] = train_favi(model, task, steps, RngStream(0, (2,)), batch=batch, checkpoint_every=steps)
        return cache[name]

    return get


@pytest.fixture
def rng():
    return RngStream(12345, (0,))


@pytest.fixture
def small_mdn():
    """Untrained two-dimensional MDN with non-trivial random weights."""
    task = make_task("two_moons")
    model = MixtureDensityNetwork.for_task(task, RngStream(3, (1,)), n_components=3, hidden=(8, 8), n_pilot=2000)
    flat = model.get_flat()
    model.set_flat(flat + 0.3 * np.random.default_rng(0).standard_normal(flat.size))
    return model
