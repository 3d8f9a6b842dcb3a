import numpy as np
import pytest
from hypothesis import settings, strategies as st

from gap_forge.probability import Alphabet, Mechanism, validate_joint

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

CANONICAL = [[0.4, 0.1], [0.1, 0.4]]


@pytest.fixture
def canonical():
    return validate_joint(CANONICAL)


def random_joint(rng, nx=None, ny=None, zeros=False):
    nx = nx or int(rng.integers(1, 5))
    ny = ny or int(rng.integers(1, 5))
    p = rng.dirichlet(np.ones(nx * ny)).reshape(nx, ny)
    if zeros and p.size > 1:
        p.ravel()[rng.integers(0, p.size)] = 0.0
        p /= p.sum()
    return validate_joint(p)


def random_mechanism(rng, j, k=None):
    nx, ny = j.shape
    k = k or nx
    q = rng.dirichlet(np.ones(k), size=(nx, ny))
    xa = j.x_alphabet if k == nx else Alphabet.of_size(k)
    return Mechanism(j.x_alphabet, j.y_alphabet, xa, q)


@st.composite
def joints(draw, max_x=4, max_y=4):
    nx = draw(st.integers(1, max_x))
    ny = draw(st.integers(1, max_y))
    w = draw(st.lists(st.floats(0.0, 1.0), min_size=nx * ny, max_size=nx * ny))
    w = np.array(w) + 1e-3
    return validate_joint((w / w.sum()).reshape(nx, ny))


@st.composite
def joint_and_mechanism(draw, max_x=4, max_y=4, max_k=4):
    j = draw(joints(max_x, max_y))
    nx, ny = j.shape
    k = draw(st.integers(1, max_k))
    w = draw(st.lists(st.floats(0.0, 1.0), min_size=nx * ny * k, max_size=nx * ny * k))
    q = np.array(w).reshape(nx, ny, k) + 1e-3
    q /= q.sum(axis=2, keepdims=True)
    return j, Mechanism(j.x_alphabet, j.y_alphabet, Alphabet.of_size(k, "h"), q)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
