import numpy as np
import pytest

from poelr.data import gen_quadratic
from poelr.models import ModelSpec, analytic_smoothness
from poelr.optim import Schedule, TrainConfig, train


def quadratic_problem(dim, L, seed=0, n=256):
    ds = gen_quadratic(n, dim, L, seed=seed)
    spec = ModelSpec((dim, 1), "identity", "mse", seed, bias=False)
    return ds, spec


def exact_star(ds):
    sol, *_ = np.linalg.lstsq(ds.inputs, ds.targets, rcond=None)
    return sol.ravel()


def gd_log(dim, L, eta_mult, epochs, seed=0, divergence_factor=1e8):
    """Full-batch GD on a quadratic with step ``eta_mult / L``."""
    ds, spec = quadratic_problem(dim, L, seed)
    L_true = analytic_smoothness(spec, ds.inputs)
    res = train(spec, ds, Schedule("constant", eta_mult / L_true), TrainConfig(epochs=epochs, seed=seed,
                                                                                divergence_factor=divergence_factor))
    return ds, spec, res, L_true


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    pytest.importorskip("mlxtend")
    from poelr.data import export_mnist_idx

    d = tmp_path_factory.mktemp("mnist")
    export_mnist_idx(str(d))
    return str(d)
