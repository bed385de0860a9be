import numpy as np
import pytest

from hsbnn.model import NetworkSpec
from hsbnn.trainer import TrainConfig, init_state

ACCEPTANCE_LINES = []


def record(criterion: int, ok: bool, detail: str) -> None:
    """Keep a one-line verdict for the end-of-run summary."""
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def small_posterior(family="structured", widths=(2, 4, 1), prior="reg_hs", seed=0, **spec_kw):
    spec = NetworkSpec(widths, prior=prior, **spec_kw)
    return init_state(spec, family, TrainConfig(seed=seed)).posterior


def perturb(post, rng, scale=0.3):
    """Move every parameter off its initial value so oracles see generic states."""
    for k, v in post.params.items():
        post.params[k] = v + scale * rng.standard_normal(np.shape(v))
    return post
