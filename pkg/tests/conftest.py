import pytest

from drefc.harness import ExperimentConfig, build_artifacts


@pytest.fixture(scope="session")
def cfg():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def artifacts(cfg):
    """Default-seed model, shortfall samples, reference mixture, radius and joint mixture."""
    return build_artifacts(cfg, with_joint=True)
