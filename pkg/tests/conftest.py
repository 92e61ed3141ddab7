import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cgfn import autodiff as ad

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def record_acceptance(number, title, ok, detail):
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def directional_fd(loss_fn, params, rng, h=1e-5):
    """(analytic, numeric) directional derivative of ``loss_fn()`` along a random unit direction."""
    with ad.Tape() as tape:
        loss = loss_fn()
    grads = ad.backprop(tape, loss, params)
    dirs = [rng.standard_normal(p.shape) for p in params]
    norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
    dirs = [d / norm for d in dirs]
    analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
    base = [p.value.copy() for p in params]
    vals = []
    for sign in (1.0, -1.0):
        for p, b, d in zip(params, base, dirs):
            p.value = b + sign * h * d
        vals.append(loss_fn().item())
    for p, b in zip(params, base):
        p.value = b
    numeric = (vals[0] - vals[1]) / (2 * h)
    return analytic, numeric


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)
