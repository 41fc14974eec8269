import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from robust_dispatch.ingest import (
    GeneratorComponent,
    GeneratorConfig,
    SampleSet,
    synth_generate,
)
from robust_dispatch.model import DispatchInstance

settings.register_profile(
    "suite",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    """Collect criterion verdicts; printed in the terminal summary."""
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def inst2() -> DispatchInstance:
    """Two regions, one stage, everything reachable."""
    return DispatchInstance(
        n=2,
        tau=1,
        W=np.array([[0.0, 1.0], [1.3, 0.0]]),
        P=(),
        L1=np.array([6.0, 4.0]),
        m=3.0,
    )


@pytest.fixture
def inst2_t2() -> DispatchInstance:
    """Two regions, two stages, mixing transition."""
    return DispatchInstance(
        n=2,
        tau=2,
        W=np.array([[0.0, 1.0], [1.3, 0.0]]),
        P=(np.array([[0.7, 0.3], [0.4, 0.6]]),),
        L1=np.array([6.0, 4.0]),
        m=3.0,
    )


@pytest.fixture
def inst3() -> DispatchInstance:
    """Three regions, one stage."""
    return DispatchInstance(
        n=3,
        tau=1,
        W=np.array([[0.0, 1.0, 2.1], [1.1, 0.0, 1.2], [2.0, 1.4, 0.0]]),
        P=(),
        L1=np.array([5.0, 4.0, 3.0]),
        m=3.0,
    )


def make_samples(
    mean,
    cov_scale: float,
    n_samples: int,
    seed: int,
    tau: int = 1,
    label: str = "all",
) -> SampleSet:
    """Gaussian sample set around `mean` with isotropic covariance."""
    mean = np.asarray(mean, dtype=float)
    n = mean.size // tau
    comp = (
        GeneratorComponent(
            label=label, weight=1.0, mean=mean, cov=cov_scale * np.eye(mean.size)
        ),
    )
    cfg = GeneratorConfig(
        n=n, tau=tau, t=0, n_samples=n_samples, components=comp
    )
    return SampleSet(t=0, label=label, samples=synth_generate(cfg, seed=seed))
