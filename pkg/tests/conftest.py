import pytest

from fedsim.config import FedConfig


@pytest.fixture
def small_cfg():
    """A fast classification run: 12 workers, 4 per round, 20 rounds."""
    return FedConfig(workers=12, selected=4, rounds=20, n_samples=600, n_features=6, n_classes=4,
                     beta=0.5, stepsize=0.05)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one acceptance criterion's verdict, then assert it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, title, passed, detail, seconds):
        lines.append((number, f"{'PASS' if passed else 'FAIL'}  [{number}] {title}: {detail} ({seconds:.1f}s)"))
        assert passed, detail

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
