import numpy as np
import pytest

from cmidebias.data import Dataset, InteractionRecord


def coin_dataset(case: str, n: int, seed: int = 0, noise_dim: int = 4) -> Dataset:
    """Binary exposure/click pairs with analytically known I(E; C | X).

    ``independent``: fair coins, standard-normal noise features (I = 0).
    ``identical``: C = E, noise features (I = ln 2).
    ``mixture``: x in {0, 1}; independent when x = 0, C = E when x = 1
    (I = ln 2 / 2).
    """
    rng = np.random.default_rng(seed)
    if case == "mixture":
        x = rng.integers(0, 2, (n, 1)).astype(float)
        e = rng.integers(0, 2, n)
        c = np.where(x[:, 0] == 1, e, rng.integers(0, 2, n))
    else:
        x = rng.standard_normal((n, noise_dim))
        e = rng.integers(0, 2, n)
        c = rng.integers(0, 2, n) if case == "independent" else e.copy()
    return Dataset.from_arrays(x, np.zeros(n), e, c)


def coin_oracle_counts(case: str) -> np.ndarray:
    """Exact [x, e, c] probability table of ``coin_dataset(case)``, scaled to counts."""
    t = np.zeros((2, 2, 2))
    if case == "independent":
        t[0] = 0.25
    elif case == "identical":
        t[0] = [[0.5, 0.0], [0.0, 0.5]]
    else:
        t[0] = 0.125
        t[1] = [[0.25, 0.0], [0.0, 0.25]]
    return t * 1000


def make_dataset(n=50, d=3, seed=0, continuous=True, click_rate=0.5):
    rng = np.random.default_rng(seed)
    x_r = rng.standard_normal((n, d))
    x_nr = rng.random(n) if continuous else rng.choice(["a", "b", "c"], n)
    exposure = np.ones(n, dtype=int)
    click = (rng.random(n) < click_rate).astype(int)
    return Dataset.from_arrays(x_r, x_nr, exposure, click, user_id=np.arange(n) % 7, item_id=np.arange(n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_dataset():
    return make_dataset()


@pytest.fixture
def three_records():
    return [
        InteractionRecord(1, 10, (0.5, -1.0), 0.25, 1, 1),
        InteractionRecord(1, 11, (1.5, 2.0), 0.75, 1, 0),
        InteractionRecord(2, 10, (-0.5, 0.0), 0.5, 0, 0),
    ]


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(criterion: str, passed, detail: str) -> str:
    status = {True: "PASS", False: "FAIL"}.get(passed, str(passed))
    line = f"[{status}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
