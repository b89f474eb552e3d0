import zlib

import numpy as np
import pytest

from dsa_forge import _kernels
from dsa_forge.testing import seeded_rng


@pytest.fixture
def rng(request):
    # distinct, reproducible stream per test
    return seeded_rng(zlib.crc32(request.node.name.encode()) % 10_000)


@pytest.fixture(params=sorted(_kernels.available_backends()))
def backend(request):
    return _kernels.available_backends()[request.param]


def naive_conv_int(src, kernels):
    """Quadruple-loop valid correlation on Python ints."""
    c, h, w = src.shape
    f = kernels.shape[0]
    out = np.zeros((f, h - 2, w - 2), dtype=object)
    s = src.astype(object)
    k = kernels.astype(object)
    for o in range(f):
        for y in range(h - 2):
            for x in range(w - 2):
                acc = 0
                for i in range(c):
                    for r in range(3):
                        for q in range(3):
                            acc += k[o, i, r, q] * s[i, y + r, x + q]
                out[o, y, x] = acc
    return out


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(mod._line(number, ok, detail))
    terminalreporter.write_line("criterion 9: NOT REPRODUCIBLE (hardware and dataset figures; reported as notes)")
