"""Constraint sets: sample sources, average/pointwise requirements, slacks,
and the dual variables attached to them."""

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .errors import ConfigError, DataError, ShapeError
from .losses import NLL, LossSpec
from .models import forward
from .perturb import AdversarialConfig, CounterfactualMap, counterfactual, pgd_attack, sample_epsilon

AVERAGE = "average"
POINTWISE = "pointwise"


@dataclass(frozen=True, eq=False)
class SampleSet:
    features: np.ndarray
    labels: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        X = nc.as_array(self.features, "features")
        if X.ndim != 2:
            raise ShapeError(f"features must be N x d, got shape {X.shape}")
        y = np.asarray(self.labels)
        if y.shape != (X.shape[0],):
            raise ShapeError(f"{X.shape[0]} feature rows but labels have shape {y.shape}")
        if X.shape[0] < 1:
            raise DataError("a sample set needs at least one sample")
        if np.issubdtype(y.dtype, np.floating):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise DataError("labels must be integral class indices")
            y = y.astype(np.int64)
        X.setflags(write=False)
        y = np.array(y, copy=True)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, idx, source_id=None):
        return SampleSet(self.features[idx], self.labels[idx], source_id or self.source_id)

    def with_features(self, features, source_id=None):
        return SampleSet(features, self.labels, source_id or self.source_id)


@dataclass(frozen=True, eq=False)
class RawSource:
    data: SampleSet

    @property
    def base(self):
        return self.data


@dataclass(frozen=True, eq=False)
class CounterfactualSource:
    base: SampleSet
    cmap: CounterfactualMap


@dataclass(frozen=True, eq=False)
class AdversarialSource:
    """Samples of an adversarial distribution, regenerated against the current model.

    ``refresh_every`` counts primal epochs (alternating mode) or outer
    iterations (oracle mode) between regenerations.
    """

    base: SampleSet
    config: AdversarialConfig
    loss: LossSpec = NLL
    refresh_every: int = 1

    def __post_init__(self):
        if self.refresh_every < 1:
            raise ConfigError("refresh_every must be >= 1", "constraint.refresh_every")


def resolve_source(source, model=None, theta=None, seed=0):
    """Materialize the SampleSet behind ``source``."""
    if isinstance(source, SampleSet):
        return source
    if isinstance(source, RawSource):
        return source.data
    if isinstance(source, CounterfactualSource):
        return source.base.with_features(counterfactual(source.base.features, source.cmap))
    if isinstance(source, AdversarialSource):
        if model is None or theta is None:
            raise ConfigError("adversarial sources need a model and parameters to resolve")
        rng = np.random.default_rng(seed)
        base = source.base
        eps = sample_epsilon(source.config.prior, rng, size=len(base))
        X = pgd_attack(model, theta, base.features, base.labels, eps, source.config, source.loss, rng)
        return base.with_features(X)
    raise ConfigError(f"unknown sample source {source!r}")


@dataclass(frozen=True)
class InvariancePair:
    """Compare f(x) against f(rho(x)) instead of f(x) against the label."""

    cmap: CounterfactualMap


@dataclass(frozen=True, eq=False)
class ConstraintSpec:
    id: str
    kind: str
    loss: LossSpec
    threshold: float
    source: object
    pairing: InvariancePair = None

    def __post_init__(self):
        if self.kind not in (AVERAGE, POINTWISE):
            raise ConfigError(f"constraint kind must be average or pointwise, got {self.kind!r}", "constraint.kind")
        if not np.isfinite(self.threshold):
            raise ConfigError(f"constraint {self.id!r}: threshold must be finite", "constraint.threshold")
        if self.loss.pairwise and self.pairing is None:
            raise ConfigError(f"constraint {self.id!r}: KL loss needs an invariance pairing", "constraint.pairing")

    @property
    def base(self):
        src = self.source
        return src if isinstance(src, SampleSet) else src.base


def per_sample_losses(spec_or_loss, model, theta, data, pairing=None):
    """Per-sample loss values as a Var of shape (N,)."""
    if isinstance(spec_or_loss, ConstraintSpec):
        loss, pairing = spec_or_loss.loss, spec_or_loss.pairing
    else:
        loss = spec_or_loss
    out = forward(model, theta, data.features)
    if pairing is not None:
        flipped = forward(model, theta, counterfactual(data.features, pairing.cmap))
        if loss.kind == "zero_one":
            return nc.Var(loss(out, np.argmax(flipped.value, axis=1)))
        if loss.pairwise:
            return loss(out, flipped)
        return loss(out, np.argmax(flipped.value, axis=1))
    if loss.kind == "zero_one":
        return nc.Var(loss(out, data.labels))
    return loss(out, data.labels)


@dataclass
class SlackEntry:
    id: str
    kind: str
    value: float
    per_sample: np.ndarray = None
    violation_fraction: float = 0.0


@dataclass
class SlackReport:
    entries: list = field(default_factory=list)

    @property
    def average(self):
        return np.array([e.value for e in self.entries if e.kind == AVERAGE])

    @property
    def pointwise(self):
        return [e.per_sample for e in self.entries if e.kind == POINTWISE]

    def __getitem__(self, cid):
        for e in self.entries:
            if e.id == cid:
                return e
        raise KeyError(cid)

    def __iter__(self):
        return iter(self.entries)


def slack_from_losses(spec, losses):
    losses = np.asarray(losses, dtype=np.float64)
    if spec.kind == AVERAGE:
        return SlackEntry(spec.id, AVERAGE, float(np.mean(losses)) - spec.threshold)
    s = losses - spec.threshold
    return SlackEntry(spec.id, POINTWISE, float(np.mean(s)), s, float(np.mean(s > 0)))


def eval_slack(spec, model, theta, data=None, seed=0):
    """Slack of one constraint: mean loss minus c, or per-sample loss minus c."""
    if data is None:
        data = resolve_source(spec.source, model, theta, seed)
    return slack_from_losses(spec, per_sample_losses(spec, model, theta, data).value)


def eval_slacks(specs, model, theta, datasets=None, seed=0):
    entries = []
    for i, spec in enumerate(specs):
        data = None if datasets is None else datasets[i]
        entries.append(eval_slack(spec, model, theta, data, seed))
    return SlackReport(entries)


@dataclass
class DualState:
    mu: np.ndarray
    lam: list
    average_ids: tuple = ()
    pointwise_ids: tuple = ()

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        self.lam = [np.asarray(v, dtype=np.float64).reshape(-1) for v in self.lam]
        if len(self.average_ids) != self.mu.size:
            self.average_ids = tuple(f"avg{i}" for i in range(self.mu.size))
        if len(self.pointwise_ids) != len(self.lam):
            self.pointwise_ids = tuple(f"pw{j}" for j in range(len(self.lam)))
        self.check()

    def check(self):
        if np.any(self.mu < 0) or any(np.any(v < 0) for v in self.lam):
            raise AssertionError("dual variables must stay nonnegative")
        if not np.all(np.isfinite(self.mu)) or not all(np.all(np.isfinite(v)) for v in self.lam):
            raise AssertionError("dual variables must stay finite")

    def copy(self):
        return DualState(self.mu.copy(), [v.copy() for v in self.lam], self.average_ids, self.pointwise_ids)

    @property
    def m(self):
        return self.mu.size

    @property
    def q(self):
        return len(self.lam)

    def lam_l1(self):
        """Empirical L1 norm of the pointwise duals: sum_j mean_n lambda_{j,n}."""
        return float(sum(np.mean(v) for v in self.lam)) if self.lam else 0.0

    def by_id(self):
        out = {cid: float(v) for cid, v in zip(self.average_ids, self.mu)}
        out.update({cid: v for cid, v in zip(self.pointwise_ids, self.lam)})
        return out

    def flat(self):
        return np.concatenate([self.mu] + self.lam) if (self.m or self.q) else np.zeros(0)


def init_duals(specs, sizes=None):
    """All-ones duals: one mu per average constraint, one lambda per pointwise sample.

    ``sizes`` overrides the pointwise sample counts (defaults to each source's N).
    """
    avg = [s for s in specs if s.kind == AVERAGE]
    pw = [s for s in specs if s.kind == POINTWISE]
    if sizes is None:
        sizes = [len(s.base) for s in pw]
    return DualState(
        np.ones(len(avg)),
        [np.ones(int(n)) for n in sizes],
        tuple(s.id for s in avg),
        tuple(s.id for s in pw),
    )
