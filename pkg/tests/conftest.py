import time
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
DEMO_DIR = REPO_ROOT / "demo"

SUITE_BUDGET_S = 60.0


@pytest.fixture(scope="session")
def demo_dir() -> Path:
    return DEMO_DIR


def pytest_configure(config):
    config._suite_start = time.monotonic()


def pytest_sessionfinish(session, exitstatus):
    start = getattr(session.config, "_suite_start", None)
    if start is None:
        return
    elapsed = time.monotonic() - start
    ok = elapsed < SUITE_BUDGET_S
    print(
        f"\n[acceptance] whole-suite runtime {elapsed:.1f}s "
        f"< {SUITE_BUDGET_S:.0f}s: {'PASS' if ok else 'FAIL'}"
    )
    if not ok and exitstatus == 0:
        session.exitstatus = 1
