import numpy as np
import pytest

from stiefel_opt.linalg import make_rng, orthogonal_init, skew_part


def random_frame(n, m, seed=0):
    return orthogonal_init(n, m, make_rng(seed))


def random_skew(m, seed=0, scale=1.0):
    w = skew_part(make_rng(seed).standard_normal((m, m)))
    return scale * w / np.linalg.norm(w)


def random_perp(x, seed=0, scale=1.0):
    rng = make_rng(seed)
    v = rng.standard_normal(x.shape)
    v -= x @ (x.T @ v)
    return scale * v / np.linalg.norm(v)


def random_tangent(x, seed=0):
    m = x.shape[1]
    return x @ random_skew(m, seed) + random_perp(x, seed + 1)


@pytest.fixture
def rng():
    return make_rng(1234)
