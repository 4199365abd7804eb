import importlib

import pytest

from plr import _fallback


def _available_backends():
    mods = [_fallback]
    try:
        mods.append(importlib.import_module("plr._kernels"))
    except ImportError:
        pass
    return mods


BACKENDS = _available_backends()


@pytest.fixture(params=BACKENDS, ids=lambda m: m.NAME)
def backend(request):
    return request.param


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
