"""l-infinity FGSM and PGD attacks on the models in :mod:`poelr.models`.

Inputs live in ``[0, 1]``. After every step the perturbation is clipped to
``[-epsilon, epsilon]`` first and the perturbed input to ``[0, 1]`` second.
``sign(0) = 0``, so a coordinate with a zero input gradient is left alone.
Attacks maximize the training loss of the model.
"""
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import InvalidInput
from .models import input_grad, predict
from .numcore import make_rng


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 1.0 / 255
    step_size: float = 0.1 / 255
    steps: int = 20
    random_init: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidInput("epsilon must lie in [0, 1]")
        if not self.step_size > 0:
            raise InvalidInput("step_size must be positive")
        if self.steps < 1:
            raise InvalidInput("steps must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _check_box(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise InvalidInput("attack inputs must lie in [0, 1]")
    return x


def _project(x_adv, x, epsilon):
    return np.clip(x + np.clip(x_adv - x, -epsilon, epsilon), 0.0, 1.0)


def fgsm(spec, theta, x, y, epsilon):
    """One signed-gradient step of size ``epsilon``."""
    x = _check_box(x)
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidInput("epsilon must lie in [0, 1]")
    _, g = input_grad(spec, theta, x, y)
    return np.clip(x + epsilon * np.sign(g), 0.0, 1.0)


def init_delta(cfg, n, dim, first_index=0):
    """Starting perturbations; row ``i`` uses the stream ``(seed, "pgd", first_index + i)``."""
    if not cfg.random_init or cfg.epsilon == 0.0:
        return np.zeros((n, dim))
    return np.array([make_rng(cfg.seed, "pgd", first_index + i).uniform(-cfg.epsilon, cfg.epsilon, size=dim)
                     for i in range(n)])


def pgd(spec, theta, x, y, cfg, first_index=0):
    """``cfg.steps`` projected signed-gradient ascent steps from a random or zero start.

    ``first_index`` is the global index of row 0, so the random start of an
    example does not depend on how a dataset is cut into batches.
    """
    x = _check_box(x)
    x_adv = _project(x + init_delta(cfg, x.shape[0], x.shape[1], first_index), x, cfg.epsilon)
    for _ in range(cfg.steps):
        _, g = input_grad(spec, theta, x_adv, y)
        x_adv = _project(x_adv + cfg.step_size * np.sign(g), x, cfg.epsilon)
    return x_adv


def evaluate(spec, theta, ds, cfg=None, batch_size=500):
    """Clean accuracy and accuracy under :func:`pgd` (default :class:`AttackConfig` when ``cfg`` is None)."""
    cfg = AttackConfig() if cfg is None else cfg
    if ds.dim != spec.in_dim:
        raise InvalidInput(f"dataset width {ds.dim} does not match model input {spec.in_dim}")
    clean = robust = 0
    for start in range(0, len(ds), batch_size):
        x = ds.inputs[start:start + batch_size]
        y = ds.labels[start:start + batch_size]
        clean += int(np.sum(predict(spec, theta, x) == y))
        x_adv = pgd(spec, theta, x, y, cfg, first_index=start)
        robust += int(np.sum(predict(spec, theta, x_adv) == y))
    return clean / len(ds), robust / len(ds)
