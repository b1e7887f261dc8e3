import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from ctreach.models import Ctmc, Ctmdp, full_generator

EXAMPLE2_TEXT = """
# 4 transient states, good absorbing
ctmc 5
good 4
rate 0 2 2
rate 0 4 2
rate 1 2 1
rate 1 3 1
rate 1 4 2
rate 2 0 1
rate 2 1 1
rate 3 1 2
"""

EXAMPLE2_PERTURBED_TEXT = """
ctmc 5
good 4
rate 0 2 1.95
rate 0 4 2
rate 1 2 1.05
rate 1 3 1
rate 1 4 2
rate 2 0 1
rate 2 1 1
rate 3 1 2
"""

EXAMPLE4_TEXT = """
ctmdp 5 2
good 4
rate 0 0 1 1
rate 0 1 0 0.01
rate 0 1 2 0.5
rate 0 1 3 0.5
rate 0 1 4 2
rate 0 2 1 0.01
rate 0 2 4 1
rate 0 3 1 0.01
rate 0 3 2 0.05
rate 0 3 4 1
rate 1 0 2 0.75
rate 1 0 3 0.75
rate 1 1 0 0.01
rate 1 1 2 0.5
rate 1 1 3 0.5
rate 1 1 4 2
rate 1 2 1 0.01
rate 1 2 4 1
rate 1 3 1 0.01
rate 1 3 2 0.05
rate 1 3 4 1
"""


@pytest.fixture
def example2():
    from ctreach.models import parse_model

    return parse_model(EXAMPLE2_TEXT)


@pytest.fixture
def example2_perturbed():
    from ctreach.models import parse_model

    return parse_model(EXAMPLE2_PERTURBED_TEXT)


@pytest.fixture
def example4():
    from ctreach.models import parse_model

    return parse_model(EXAMPLE4_TEXT)


def random_irreducible_ctmc(rng: np.random.Generator, n: int, with_bad: bool = False) -> Ctmc:
    """Dense random chain: every off-diagonal positive, so H is irreducible."""
    mat = rng.uniform(0.2, 1.0, size=(n, n))
    np.fill_diagonal(mat, 0.0)
    good = n - 1
    bad = n - 2 if with_bad else None
    targets = tuple(i for i in range(n) if i not in {good, bad})
    return Ctmc(
        n_states=n,
        rates=sp.csr_matrix(mat),
        good=good,
        bad=bad,
        target_rows=targets[:1],
    )


def oracle_reach(model: Ctmc, times) -> np.ndarray:
    """Reference reachability values via the dense matrix exponential."""
    q = full_generator(model)
    ind = np.zeros(model.n_states)
    ind[model.good] = 1.0
    rows = list(model.target_rows)
    out = np.empty((len(rows), len(times)))
    for k, t in enumerate(times):
        z = sla.expm(q * float(t)) @ ind
        out[:, k] = z[rows]
    return out


def oracle_state_gap(system, reduced, times) -> np.ndarray:
    """||C_S X(t) - C_S P Xbar(t)||_2 with both sides via expm."""
    x0 = system.x0()
    gaps = np.empty(len(times))
    for k, t in enumerate(times):
        xt = sla.expm(system.a * float(t)) @ x0
        xbt = sla.expm(reduced.a_bar * float(t)) @ reduced.x_bar0
        gaps[k] = np.linalg.norm(system.c_s @ xt - system.c_s @ (reduced.p @ xbt))
    return gaps
