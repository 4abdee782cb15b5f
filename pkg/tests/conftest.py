import numpy as np
import pytest

from mmsep import tensor as T


def finite_difference_check(fn, tensors, h=1e-5, n_samples=10, seed=0):
    """Max relative error between autodiff and central differences.

    ``fn`` rebuilds the scalar loss from the given leaf tensors on every
    call (and must clear their grads itself if reused).
    """
    for t in tensors:
        t.grad = None
    loss = fn()
    T.backward(loss)
    grads = [t.grad.copy() for t in tensors]
    rng = np.random.default_rng(seed)
    max_rel = 0.0
    for t, g in zip(tensors, grads):
        flat = t.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(n_samples, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            lp = float(fn().data)
            flat[i] = orig - h
            lm = float(fn().data)
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            ga = float(g.reshape(-1)[i])
            rel = abs(fd - ga) / max(1e-8, abs(fd) + abs(ga))
            max_rel = max(max_rel, rel)
    return max_rel


@pytest.fixture
def gradcheck():
    return finite_difference_check
