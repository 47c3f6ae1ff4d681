import numpy as np
import pytest

from dcfo import ExactLOF, detect_outliers, sample_gaussian

MICRO_1D = np.array([[0.0], [1.0], [2.0], [10.0]])


@pytest.fixture
def micro_model():
    """1D set {0, 1, 2, 10} with k=2: every value known by hand."""
    return ExactLOF(k=2).fit(MICRO_1D)


@pytest.fixture(scope="session")
def gauss_suite():
    """Ten seeded standard-normal datasets (n=500, mixed 2D/5D, k in 10/15/20)
    with fitted models and detected outliers, shared across the expensive
    end-to-end tests."""
    ks = [10, 15, 20]
    suite = []
    for s in range(10):
        dim = 2 if s % 2 == 0 else 5
        k = ks[s % 3]
        ds = sample_gaussian(500, dim, seed=100 + s)
        model = ExactLOF(k=k).fit(ds.points)
        t, outliers = detect_outliers(model)
        suite.append({
            "seed": 100 + s,
            "dim": dim,
            "k": k,
            "model": model,
            "threshold": t,
            "outliers": [int(i) for i in outliers],
        })
    return suite
