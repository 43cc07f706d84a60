import sys
from datetime import timedelta

import numpy as np
import pytest
from hypothesis import settings

from cfdp.harness import load_model
from cfdp.scm import Dataset, sample_dataset

settings.register_profile("default", max_examples=50, deadline=timedelta(seconds=10))
settings.load_profile("default")


def linear_gaussian_data(n, loadings, noise_var, offsets=None, seed=0, n_groups=2):
    """Data drawn exactly from the scalar latent model EM assumes."""
    rng = np.random.default_rng(seed)
    loadings = np.asarray(loadings, dtype=float)
    noise_var = np.asarray(noise_var, dtype=float)
    g = rng.integers(0, n_groups, size=n)
    u = rng.standard_normal(n)
    offsets = np.zeros((len(loadings), n_groups)) if offsets is None else np.asarray(offsets, dtype=float)
    x = offsets[:, g].T + np.outer(u, loadings) + rng.standard_normal((n, len(loadings))) * np.sqrt(noise_var)
    return Dataset(
        groups=[f"g{k}" for k in g],
        features=x,
        outcome=u + 0.1 * rng.standard_normal(n),
        feature_names=tuple(f"x{j}" for j in range(len(loadings))),
        latent={"u": u},
    )


@pytest.fixture(scope="session")
def law_school_model():
    return load_model("law_school")


@pytest.fixture(scope="session")
def law_school_data(law_school_model):
    return sample_dataset(law_school_model, 5000, 7)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
