"""Shared helpers: finite-difference oracles and tiny agent factories."""

import numpy as np

from parse_dfl import model as mdl
from parse_dfl import seeds

FD_H = 1e-5
TEST_DOMAIN = 97  # RNG domain reserved for test fixtures


def finite_difference(f, x, h=FD_H):
    """Central finite-difference gradient of scalar f at array x.

    Perturbs x in place coordinate by coordinate, so f may close over x.
    """
    x = np.asarray(x)
    grad = np.zeros_like(x)
    flat, gflat = x.ravel(), grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def rel_error(analytic, numeric):
    """Norm-relative gradient error used by every oracle check."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    b = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def fd_check_params(agent, loss_fn, names=None, h=FD_H):
    """Max rel_error between analytic grads and FD over parameter blocks.

    ``loss_fn`` -> (loss value, grads dict); it is re-evaluated under
    in-place parameter perturbations for the FD side.
    """
    blocks = agent.param_blocks()
    _, grads = loss_fn()
    worst = 0.0
    for name in (names if names is not None else sorted(blocks)):
        fd = finite_difference(lambda: loss_fn()[0], blocks[name], h)
        analytic = grads.get(name, np.zeros_like(blocks[name]))
        worst = max(worst, rel_error(analytic, fd))
    return worst


def make_agent(seed, modalities=(0, 1), strategy="parse", input_dim=3,
               hidden=4, split=(2, 2, 2), n_classes=3, fusion="mean"):
    rng = seeds.stream(seed, TEST_DOMAIN)
    input_dims = {m: input_dim for m in modalities}
    return mdl.init_agent(0, modalities, strategy, input_dims, hidden,
                          split, n_classes, fusion, rng)


def make_batch(seed, agent, n=4, input_dim=3, n_classes=3):
    rng = seeds.stream(seed, TEST_DOMAIN, 1)
    features = {m: rng.normal(size=(n, input_dim)) for m in agent.modalities}
    labels = rng.integers(0, n_classes, size=n)
    return features, labels


def zero_params(agent):
    for name, arr in agent.param_blocks().items():
        arr[...] = 0.0
    return agent
