import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_difference_grad(fn, tensor: torch.Tensor, h: float = 1e-6) -> torch.Tensor:
    """Numerical gradient of scalar ``fn()`` w.r.t. every element of ``tensor``
    by central differences, perturbing in place.
    """
    grad = torch.zeros_like(tensor)
    flat, gflat = tensor.data.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        plus = fn().item()
        flat[i] = orig - h
        minus = fn().item()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * h)
    return grad


def kink_safe_difference(fn, flat: torch.Tensor, i: int, h: float = 1e-6, floor: float = 1e-8) -> float:
    """Central difference of ``fn()`` in element ``i`` of ``flat``.

    When the one-sided differences disagree, a ReLU kink lies inside the
    stencil; the step shrinks tenfold until they agree or ``floor`` is hit.
    """
    orig = flat[i].item()
    base = fn().item()
    while True:
        flat[i] = orig + h
        plus = fn().item()
        flat[i] = orig - h
        minus = fn().item()
        flat[i] = orig
        forward, backward = (plus - base) / h, (base - minus) / h
        if abs(forward - backward) <= 1e-4 * max(abs(forward), abs(backward), 1e-8) or h <= floor:
            return (plus - minus) / (2 * h)
        h /= 10


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    num = (a - b).norm().item()
    den = max(a.norm().item(), b.norm().item(), 1e-300)
    return num / den


# -- acceptance summary: one line per criterion -----------------------------

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "outcomes": [], "details": []})
    entry["outcomes"].append(rep.outcome)
    entry["details"].extend(f"{k}={v}" for k, v in item.user_properties)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        if "failed" in entry["outcomes"]:
            status = "FAIL"
        elif "passed" in entry["outcomes"]:
            status = "PASS"
        else:
            status = "SKIP"
        detail = f" ({', '.join(entry['details'])})" if entry["details"] else ""
        terminalreporter.write_line(f"[{status}] criterion {number}: {entry['title']}{detail}")
