import numpy as np
import pytest

from nefshrink import default_tau, make_family


@pytest.fixture()
def rng():
    return np.random.default_rng(42)


def family_case(kind: str, n: int, p: int, rng: np.random.Generator):
    """A family spec with a random interior mean matrix and canonical tau."""
    if kind == "normal":
        spec = make_family("normal")
        theta = rng.uniform(-2.0, 2.0, (n, p))
    elif kind == "poisson":
        spec = make_family("poisson")
        theta = rng.uniform(0.5, 3.0, (n, p))
    elif kind == "gamma":
        spec = make_family("gamma", shape=2.0)
        theta = rng.uniform(0.5, 3.0, (n, p))
    elif kind == "multinomial":
        spec = make_family("multinomial", trials=4)
        theta = rng.uniform(0.02, 0.8 / p, (n, p))
    elif kind == "negmultinomial":
        spec = make_family("negmultinomial", trials=4)
        theta = rng.uniform(0.5, 3.0, (n, p))
    else:
        raise ValueError(kind)
    return spec, theta, default_tau(spec, n, p)


ALL_FAMILIES = ("normal", "poisson", "gamma", "multinomial", "negmultinomial")
