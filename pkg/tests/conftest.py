from pathlib import Path

import pytest

from hadamard_cnn import datasets


def real_data_dir(name: str) -> Path | None:
    """Directory holding the real ``name`` files, or None when they are absent."""
    for path in (datasets.default_data_dir() / name, Path.home() / "data" / name):
        if datasets.is_cached(name, path):
            return path
    return None


@pytest.fixture(scope="session")
def mnist_dir():
    path = real_data_dir("mnist")
    if path is None:
        pytest.skip("MNIST files not present; run `hadamard-cnn fetch mnist`")
    return path


@pytest.fixture(scope="session")
def mnist(mnist_dir):
    return datasets.load_mnist(mnist_dir)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def real_cifar_dir():
    return real_data_dir("cifar10")


@pytest.fixture
def record():
    """Print and keep one ``PASS``/``FAIL``/``SKIP`` line per acceptance criterion."""

    def _record(criterion: str, status, detail: str) -> None:
        if isinstance(status, bool):
            status = "PASS" if status else "FAIL"
        line = f"[{status}] {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
