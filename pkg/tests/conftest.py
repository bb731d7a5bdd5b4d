import numpy as np
import pytest


def loop_spt1(t, d):
    k1, k2 = t.shape[:2]
    out = np.zeros((k1, k1))
    for i in range(k1):
        for k in range(k1):
            for j in range(k2 - d):
                out[i, k] += t[i, j, k, j + d]
    return out


def loop_spt2(t, d):
    k1, k2 = t.shape[:2]
    out = np.zeros((k2, k2))
    for j in range(k2):
        for l in range(k2):
            for i in range(k1 - d):
                out[j, l] += t[i, j, i + d, l]
    return out


def loop_strace(t, d):
    k1, k2 = t.shape[:2]
    return sum(t[i, j, i + d, j + d] for i in range(k1 - d) for j in range(k2 - d))


def loop_outer(x):
    k1, k2 = x.shape
    t = np.zeros((k1, k2, k1, k2))
    for i in range(k1):
        for j in range(k2):
            for k in range(k1):
                for l in range(k2):
                    t[i, j, k, l] = x[i, j] * x[k, l]
    return t


def loop_topavg(t, divisor=None):
    """Lag average s(h,l) = (1/div) sum_{i,j} T[i+h, j+l, i, j] over valid cells."""
    k1, k2 = t.shape[:2]
    div = k1 * k2 if divisor is None else divisor
    s = np.zeros((2 * k1 - 1, 2 * k2 - 1))
    for h in range(-(k1 - 1), k1):
        for l in range(-(k2 - 1), k2):
            acc = 0.0
            for i in range(k1):
                for j in range(k2):
                    if 0 <= i + h < k1 and 0 <= j + l < k2:
                        acc += t[i + h, j + l, i, j]
            s[h + k1 - 1, l + k2 - 1] = acc / div
    return s


def loop_apply_symbol(s, x):
    k1, k2 = x.shape
    y = np.zeros_like(x)
    for i in range(k1):
        for j in range(k2):
            for k in range(k1):
                for l in range(k2):
                    y[i, j] += s[i - k + k1 - 1, j - l + k2 - 1] * x[k, l]
    return y


def random_spd(rng, k, shift=0.1):
    g = rng.standard_normal((k, k))
    return g @ g.T / k + shift * np.eye(k)


def random_symbol(rng, k1, k2, band=None):
    s = rng.standard_normal((2 * k1 - 1, 2 * k2 - 1))
    s = 0.5 * (s + s[::-1, ::-1])
    if band is not None:
        h = np.abs(np.arange(-(k1 - 1), k1))[:, None]
        l = np.abs(np.arange(-(k2 - 1), k2))[None, :]
        s = np.where(np.maximum(h, l) < band, s, 0.0)
    return s


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance results, printed once per criterion at the end of the run
ACCEPTANCE = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"CRITERION {criterion}: {'PASS' if passed else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[c]
        terminalreporter.write_line(f"CRITERION {c:>2}: {'PASS' if ok else 'FAIL'} | {detail}")
