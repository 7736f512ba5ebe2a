import numpy as np
import pytest

from mbadmm import problems
from mbadmm.core import ProblemInstance


@pytest.fixture(scope="session")
def toy():
    inst = problems.generate_toy_qp(problems.ToyQpSpec(seed=0))
    return inst, problems.reference_toy_qp(inst)


@pytest.fixture(scope="session")
def mini_toy():
    inst = problems.generate_toy_qp(problems.ToyQpSpec(n1=2, n2=3, n3=2, seed=3))
    return inst, problems.reference_toy_qp(inst)


@pytest.fixture(scope="session")
def quad():
    inst = problems.generate_quadratic_blocks(problems.QuadraticBlocksSpec(seed=0))
    return inst, problems.reference_quadratic(inst)


@pytest.fixture(scope="session")
def small_bp():
    inst, x = problems.generate_basis_pursuit(problems.BasisPursuitSpec(p=20, n=60, s=4, seed=1))
    return inst, problems.reference_basis_pursuit(inst, x)


def unit_instance(N, sigma=1.0):
    """``N`` scalar blocks ``f(x) = sigma/2 x^2`` with unit coupling: every constant is one."""
    return ProblemInstance(
        [problems.quadratic_block([sigma / 2], [0.0], np.eye(1)) for _ in range(N)], np.zeros(1)
    )


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        terminalreporter.write_line(results[key])
