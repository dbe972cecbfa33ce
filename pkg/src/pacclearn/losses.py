"""Performance metrics: negative log-likelihood, KL divergence, 0-1 loss.

All losses work row-wise on batches of model outputs and return one value
per row. Inputs may be arrays or autodiff ``Var``s; arrays in give arrays
(or floats for single rows) out.
"""

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ConfigError, LabelError, ShapeError

NLL_FLOOR = 1e-6
KL_FLOOR = 1e-12
DEFAULT_BOUND = 10.0

LOSS_KINDS = ("nll", "kl", "zero_one")


@dataclass(frozen=True)
class LossMetadata:
    """Range bound B and Lipschitz constant M of a loss."""

    B: float = DEFAULT_BOUND
    M: float = 1.0

    def __post_init__(self):
        if not (self.B > 0 and self.M > 0):
            raise ConfigError("loss metadata needs B > 0 and M > 0", "loss")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "nll"
    metadata: LossMetadata = LossMetadata()
    clamp: bool = True

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}", "loss.kind")

    @property
    def B(self):
        return self.metadata.B

    @property
    def differentiable(self):
        return self.kind != "zero_one"

    @property
    def pairwise(self):
        """True when the loss compares two model outputs instead of output vs label."""
        return self.kind == "kl"

    def __call__(self, outputs, target):
        """Per-sample loss. ``target`` is labels, or the paired outputs for KL."""
        if self.kind == "nll":
            return nll_loss(outputs, target, B=self.B, clamp=self.clamp)
        if self.kind == "kl":
            return kl_div(outputs, target, B=self.B, clamp=self.clamp)
        return zero_one(outputs, target)


NLL = LossSpec("nll")
KL = LossSpec("kl")
ZERO_ONE = LossSpec("zero_one")


def _lift(p):
    is_var = isinstance(p, nc.Var)
    pv = p.value if is_var else np.asarray(p, dtype=np.float64)
    single = pv.ndim == 1
    if pv.ndim not in (1, 2):
        raise ShapeError(f"expected a simplex vector or a batch of them, got shape {pv.shape}")
    return is_var, single


def _finish(out, is_var, single):
    if is_var:
        return out[0] if single else out
    v = out.value
    return float(v[0]) if single else v


def _labels(y, n, k):
    y = np.atleast_1d(np.asarray(y))
    if y.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {y.shape}")
    if not np.all(np.equal(np.mod(y, 1), 0)) or np.any(y < 0) or np.any(y >= k):
        raise LabelError(f"labels must be integers in [0, {k - 1}]")
    return y.astype(np.intp)


def nll_loss(p, y, B=DEFAULT_BOUND, clamp=True, floor=NLL_FLOOR):
    """-log(max(p_y, floor)), clamped to [0, B]."""
    is_var, single = _lift(p)
    P = nc.constant(p)
    if single:
        P = P.reshape((1, P.shape[0]))
    labels = _labels(y, P.shape[0], P.shape[1])
    out = -nc.log(nc.maximum(nc.take_labels(P, labels), floor))
    if clamp:
        out = nc.clip(out, 0.0, B)
    return _finish(out, is_var, single)


def kl_div(p, q, B=DEFAULT_BOUND, clamp=True, floor=KL_FLOOR):
    """sum_i p_i log(p_i / q_i) per row, entries floored before the logs."""
    is_var, single = _lift(p)
    is_var = is_var or isinstance(q, nc.Var)
    P, Q = nc.constant(p), nc.constant(q)
    if P.shape != Q.shape:
        raise ShapeError(f"kl_div: shapes {P.shape} and {Q.shape} differ")
    if single:
        P = P.reshape((1, P.shape[0]))
        Q = Q.reshape((1, Q.shape[0]))
    Pf = nc.maximum(P, floor)
    Qf = nc.maximum(Q, floor)
    out = nc.sum(P * (nc.log(Pf) - nc.log(Qf)), axis=1)
    if clamp:
        out = nc.clip(out, 0.0, B)
    return _finish(out, is_var, single)


def zero_one(p, y):
    """0 when argmax(p) == y, else 1. Ties go to the smallest index."""
    pv = p.value if isinstance(p, nc.Var) else np.asarray(p, dtype=np.float64)
    single = pv.ndim == 1
    P = np.atleast_2d(pv)
    labels = _labels(y, P.shape[0], P.shape[1])
    out = (np.argmax(P, axis=1) != labels).astype(np.float64)
    return float(out[0]) if single else out
