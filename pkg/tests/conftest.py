import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from covbounds.barrier import LinearObjective
from covbounds.data_model import IdentifiabilityMask, build_design, mask_from_var_sets

settings.register_profile(
    "default", deadline=None, max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def three_by_three(a, b, c=0.0):
    """Sigma for (U, V, W) with corr(U,V)=a, corr(V,W)=b and the free entry c."""
    sigma = np.array([[1.0, a, c], [a, 1.0, b], [c, b, 1.0]])
    return sigma, mask_from_var_sets([[0, 1], [1, 2]], 3)


def c_objective(p=3, a=0, b=2):
    """LinearObjective whose value is Sigma[a, b]."""
    C = np.zeros((p, p))
    C[a, b] = C[b, a] = 0.5
    return LinearObjective(C)


def random_spd(rng, p, floor=0.2):
    A = rng.standard_normal((p, p))
    S = A @ A.T / p + floor * np.eye(p)
    return (S + S.T) / 2


def random_mask(rng, p, K, size):
    """Variable sets of the given size that jointly cover all p variables."""
    while True:
        sets = [sorted(rng.choice(p, size, replace=False)) for _ in range(K)]
        if len(set().union(*map(set, sets))) == p:
            return sets, mask_from_var_sets(sets, p)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def fig2_design():
    # rows (1),(2); vars (1,2),(2,3) in 1-based terms
    return build_design([[0], [1]], [[0, 1], [1, 2]], 2, 3)
