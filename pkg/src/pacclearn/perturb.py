"""Input transformations: PGD attacks, perturbation-size priors, and
counterfactual flips of protected attributes."""

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ConfigError, DataError, ShapeError
from .losses import NLL
from .models import forward


@dataclass(frozen=True)
class FixedEpsilon:
    epsilon: float

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ConfigError("epsilon must be nonnegative", "adversarial.epsilon")

    @property
    def mean(self):
        return self.epsilon


@dataclass(frozen=True)
class ScaledBeta:
    """Perturbation size ``scale * Beta(a, b)``."""

    a: float
    b: float
    scale: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ConfigError("Beta parameters must be positive", "adversarial.prior")
        if not self.scale >= 0:
            raise ConfigError("Beta scale must be nonnegative", "adversarial.prior")

    @property
    def mean(self):
        return self.scale * self.a / (self.a + self.b)


def sample_epsilon(prior, rng, size=None):
    """Draw perturbation magnitude(s) from ``prior``."""
    if isinstance(prior, FixedEpsilon):
        return prior.epsilon if size is None else np.full(size, prior.epsilon)
    if isinstance(prior, ScaledBeta):
        return prior.scale * rng.beta(prior.a, prior.b, size=size)
    raise ConfigError(f"unknown epsilon prior {prior!r}", "adversarial.prior")


@dataclass(frozen=True)
class AdversarialConfig:
    """PGD settings.

    The step is ``step_size`` when given, otherwise ``step_fraction * eps``
    (the form used when eps itself is random).
    """

    prior: object = FixedEpsilon(0.1)
    steps: int = 5
    step_fraction: float = 1.0 / 3.0
    step_size: float = None
    restarts: int = 1
    random_start: bool = None
    low: object = 0.0
    high: object = 1.0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("PGD needs at least one step", "adversarial.steps")
        if self.restarts < 1:
            raise ConfigError("PGD needs at least one restart", "adversarial.restarts")
        alpha = self.step_size if self.step_size is not None else self.step_fraction
        if not alpha > 0:
            raise ConfigError("PGD step size must be positive", "adversarial.step")
        if np.any(np.asarray(self.low) > np.asarray(self.high)):
            raise ConfigError("input box has low > high", "adversarial.box")

    @classmethod
    def training(cls, prior=FixedEpsilon(0.1), **kw):
        """Weak attack used inside the training loop: 5 steps of eps/3, one start."""
        return cls(prior=prior, **{"steps": 5, "step_fraction": 1.0 / 3.0, "restarts": 1, **kw})

    @classmethod
    def evaluation(cls, prior=FixedEpsilon(0.1), **kw):
        """Strong attack used for reporting: 50 steps of eps/30, 10 restarts."""
        return cls(prior=prior, **{"steps": 50, "step_fraction": 1.0 / 30.0, "restarts": 10, **kw})

    @property
    def uses_random_start(self):
        if self.random_start is None:
            return self.restarts > 1
        return self.random_start


def _input_grad(model, theta, X, y, loss):
    xv = nc.Var(X, op="input")
    out = forward(model, theta, xv)
    per = loss(out, y)
    (g,) = nc.backward(nc.sum(per), [xv])
    return per.value, g


def _losses(model, theta, X, y, loss):
    return loss(forward(model, theta, X).value, y)


def pgd_attack(model, theta, x, y, eps, config, loss=NLL, rng=None, on_iterate=None):
    """L-infinity PGD against ``loss``; returns the worst candidate per sample.

    ``x`` is one sample (d,) with scalar ``y`` or a batch (N, d); ``eps`` is a
    scalar or one radius per sample. The clean input always takes part in
    the final comparison, so the returned loss is never below the clean one.
    ``on_iterate(x_k, lower, upper)`` is called after every projected step.
    """
    single = np.ndim(x) == 1
    X0 = np.atleast_2d(nc.as_array(x, "x"))
    y = np.atleast_1d(np.asarray(y))
    n, d = X0.shape
    eps = np.asarray(eps, dtype=np.float64)
    if np.any(eps < 0):
        raise ConfigError("epsilon must be nonnegative", "epsilon")
    eps_col = np.broadcast_to(eps.reshape(-1, 1) if eps.ndim else eps, (n, 1))
    low = np.broadcast_to(np.asarray(config.low, dtype=np.float64), (d,))
    high = np.broadcast_to(np.asarray(config.high, dtype=np.float64), (d,))
    if np.any(X0 < low) or np.any(X0 > high):
        raise DataError("PGD input lies outside the input box")
    lower = np.maximum(X0 - eps_col, low)
    upper = np.minimum(X0 + eps_col, high)
    alpha = config.step_size if config.step_size is not None else config.step_fraction * eps_col
    rng = np.random.default_rng(rng)

    best_x = X0.copy()
    best_loss = _losses(model, theta, X0, y, loss)
    for r in range(config.restarts):
        if r > 0 and config.uses_random_start:
            X = X0 + rng.uniform(-1.0, 1.0, size=X0.shape) * eps_col
            X = np.clip(X, lower, upper)
        else:
            X = X0.copy()
        for _ in range(config.steps):
            _, g = _input_grad(model, theta, X, y, loss)
            X = np.clip(X + alpha * np.sign(g), lower, upper)
            if on_iterate is not None:
                on_iterate(X, lower, upper)
        cand = _losses(model, theta, X, y, loss)
        better = cand > best_loss
        best_x[better] = X[better]
        best_loss = np.where(better, cand, best_loss)
    return best_x[0] if single else best_x


BINARY_SWAP = "binary_swap"
ONEHOT_PERMUTE = "onehot_permute"


@dataclass(frozen=True)
class CounterfactualMap:
    """Flip of a protected attribute.

    ``binary_swap`` maps v -> 1 - v on each listed column. ``onehot_permute``
    treats ``columns`` as one one-hot group and moves level i to level
    ``permutation[i]``.
    """

    columns: tuple
    rule: str = BINARY_SWAP
    permutation: tuple = None
    strict: bool = True

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(int(c) for c in self.columns))
        if not self.columns:
            raise ConfigError("counterfactual map needs at least one column", "counterfactual")
        if self.rule == ONEHOT_PERMUTE:
            perm = tuple(int(p) for p in self.permutation) if self.permutation is not None else None
            if perm is None or sorted(perm) != list(range(len(self.columns))):
                raise ConfigError(
                    "permutation must reorder the one-hot group", "counterfactual.permutation"
                )
            object.__setattr__(self, "permutation", perm)
        elif self.rule != BINARY_SWAP:
            raise ConfigError(f"unknown flip rule {self.rule!r}", "counterfactual.rule")

    @classmethod
    def binary(cls, column):
        return cls((column,), BINARY_SWAP)

    @classmethod
    def swap_levels(cls, columns, i, j, strict=True):
        perm = list(range(len(columns)))
        perm[i], perm[j] = perm[j], perm[i]
        return cls(tuple(columns), ONEHOT_PERMUTE, tuple(perm), strict)

    def inverse(self):
        if self.rule == BINARY_SWAP:
            return self
        inv = [0] * len(self.permutation)
        for i, p in enumerate(self.permutation):
            inv[p] = i
        return CounterfactualMap(self.columns, ONEHOT_PERMUTE, tuple(inv), self.strict)


def counterfactual(x, cmap):
    """Apply ``cmap`` to one sample or a batch; untouched columns are copied bit for bit."""
    X = np.array(x, dtype=np.float64, copy=True)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    cols = list(cmap.columns)
    if max(cols) >= X.shape[1] or min(cols) < -X.shape[1]:
        raise ShapeError(f"counterfactual columns {cols} out of range for width {X.shape[1]}")
    block = X[:, cols]
    if cmap.rule == BINARY_SWAP:
        if cmap.strict and not np.all((block == 0) | (block == 1)):
            raise DataError("binary swap applied to a non-binary column")
        X[:, cols] = 1.0 - block
    else:
        if cmap.strict:
            ok = np.all((block == 0) | (block == 1), axis=1) & (block.sum(axis=1) == 1)
            if not np.all(ok):
                bad = int(np.flatnonzero(~ok)[0])
                raise DataError(f"row {bad}: malformed one-hot group in columns {cols}")
        new = np.empty_like(block)
        new[:, list(cmap.permutation)] = block
        X[:, cols] = new
    return X[0] if single else X
