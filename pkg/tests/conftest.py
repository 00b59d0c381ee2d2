import os
from pathlib import Path

import numpy as np
import pytest
import torch

from layered_jscc.data import DATA_ROOT_ENV, TEST_FILES, load_cifar10


def _find_cifar_root():
    candidates = [os.environ.get(DATA_ROOT_ENV), Path.cwd() / "data", Path.home() / "data"]
    for c in candidates:
        if not c:
            continue
        for p in (Path(c), Path(c) / "cifar-10-batches-bin"):
            if (p / TEST_FILES[0]).exists():
                return p
    return None


CIFAR_ROOT = _find_cifar_root()
if CIFAR_ROOT is not None:
    os.environ.setdefault(DATA_ROOT_ENV, str(CIFAR_ROOT))

needs_cifar = pytest.mark.skipif(CIFAR_ROOT is None, reason=f"set ${DATA_ROOT_ENV} to the CIFAR-10 binary batches")


@pytest.fixture(scope="session")
def cifar_root():
    if CIFAR_ROOT is None:
        pytest.skip(f"set ${DATA_ROOT_ENV} to the CIFAR-10 binary batches")
    return CIFAR_ROOT


@pytest.fixture(scope="session")
def cifar_test(cifar_root):
    return load_cifar10(cifar_root, "test")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def images(rng):
    """A small random uint8 batch in NHWC."""
    return rng.integers(0, 256, size=(4, 32, 32, 3), dtype=np.uint8)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


# acceptance criteria report: one line per criterion at the end of the run
CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, checks: list[tuple[str, bool]]) -> bool:
    ok = all(passed for _, passed in checks)
    detail = "; ".join(f"{name} [{'ok' if passed else 'FAIL'}]" for name, passed in checks)
    CRITERIA[number] = (ok, detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
