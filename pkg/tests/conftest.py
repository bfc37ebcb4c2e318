import pytest

from offloadrl.dataset import GeneratorConfig, generate
from offloadrl.domain import ConstraintBudget, RewardWeights
from offloadrl.env import make_env_factory

_ACCEPTANCE: list[tuple[int, bool, str]] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    _ACCEPTANCE.append((number, passed, line))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_data():
    return generate(GeneratorConfig(seed=5, conversations=120))


@pytest.fixture(scope="session")
def small_factory(small_data):
    return make_env_factory(small_data, RewardWeights(), ConstraintBudget(), k=5)
