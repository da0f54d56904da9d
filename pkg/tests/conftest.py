import numpy as np
import pytest


def random_densities(rng, n_pairs, n_bins):
    """Normalized uniform draws; a simple Dirichlet-like family of histograms."""
    raw = rng.random((n_pairs, n_bins))
    return raw / raw.sum(axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report: criterion -> list of (ok, detail)
_ACCEPTANCE = {}


@pytest.fixture
def record():
    def add(criterion: str, ok: bool, detail: str) -> bool:
        _ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
        return bool(ok)
    return add


def _criterion_key(name):
    head = name.split()[0]
    return (0, int(head[1:])) if head[1:].isdigit() else (1, name)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=_criterion_key):
        parts = _ACCEPTANCE[name]
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        details = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"{status} {name}: {details}")
