import math

import numpy as np
import pytest

from mwl.morse_circle import MorseSequence, PeriodicFunction

M3_COEFFS = [(-1.59, -1.62), (-2.44, 0.32), (-0.29, -1.23)]
M3_SELECT = [(0, 1, 0), (1, 2, 1), (2, 3, 0), (0, 3, 0)]

_acceptance: dict[int, str] = {}


def cosine_triple() -> MorseSequence:
    return MorseSequence([
        PeriodicFunction(0.0),
        PeriodicFunction(0.0, (1.0,)),
        PeriodicFunction(0.0, (math.cos(2.0),), (math.sin(2.0),)),
    ])


def cosine_triple_q(seq):
    return tuple(seq.crit(i, j, {"rank": 0, "index": 0}) for i, j in ((0, 1), (1, 2), (0, 2)))


def m3_sequence() -> MorseSequence:
    return MorseSequence([PeriodicFunction(0.0)] + [PeriodicFunction(0.0, (a,), (b,)) for a, b in M3_COEFFS])


def m3_q(seq):
    return tuple(seq.crit(i, j, {"rank": 0, "index": x}) for i, j, x in M3_SELECT)


@pytest.fixture
def triple():
    seq = cosine_triple()
    return seq, cosine_triple_q(seq)


@pytest.fixture(scope="session")
def m3():
    seq = m3_sequence()
    return seq, m3_q(seq)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def record():
    def put(n: int, ok: bool, detail: str):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _acceptance[n] = line
        print(line)
    return put


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        terminalreporter.write_line(_acceptance[n])
