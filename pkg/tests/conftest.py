import numpy as np
import pytest

from optithresh.histograms import Domain, EmpiricalSample, Histogram


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_histogram(rng, n_bins=6, domain=Domain(0.0, 1.0), positive=True, subject_id=None):
    """Histogram with random cutoffs and Dirichlet masses on the given domain."""
    cuts = np.sort(rng.uniform(domain.lower, domain.upper, size=n_bins - 1))
    while np.any(np.diff(cuts) <= 1e-6):
        cuts = np.sort(rng.uniform(domain.lower, domain.upper, size=n_bins - 1))
    masses = rng.dirichlet(np.ones(n_bins))
    if positive:
        masses = (masses + 0.01) / (1.0 + 0.01 * n_bins)
    masses = masses / masses.sum()
    return Histogram(domain, cuts, masses, subject_id=subject_id)


def random_sample(rng, n=50, domain=Domain(0.0, 1.0), subject_id=None):
    values = rng.uniform(domain.lower, domain.upper, size=n)
    return EmpiricalSample(domain, values, subject_id=subject_id)
