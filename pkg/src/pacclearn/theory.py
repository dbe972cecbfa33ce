"""Learning-theoretic instruments: sample complexity, the VC-style deviation
bound, PACC certificates, the approximation-error estimate, brute-force
constrained ERM over finite classes, and complementary-slackness checks."""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .constraints import AVERAGE, POINTWISE, per_sample_losses, resolve_source, slack_from_losses
from .errors import ConfigError, DataError, InfeasibilityError
from .models import predict
from .perturb import counterfactual


@dataclass(frozen=True)
class PaccQuery:
    epsilon: float
    delta: float
    d: float
    C: float = 1.0
    m: int = 0
    q: int = 0

    def __post_init__(self):
        if not (0 < self.epsilon < 1 and 0 < self.delta < 1):
            raise ConfigError("epsilon and delta must lie in (0, 1)", "pacc")
        if not self.d >= 1:
            raise ConfigError("VC dimension surrogate d must be >= 1", "pacc.d")
        if not self.C > 0:
            raise ConfigError("constant C must be positive", "pacc.C")


def sample_complexity(query):
    """ceil(C * (d + ln(1/delta)) / epsilon^2)."""
    q = query
    return int(math.ceil(q.C * (q.d + math.log(1.0 / q.delta)) / q.epsilon**2))


def zeta_bound(N, delta, d, m=0, q=0):
    """sqrt((1 + log(4 (m+q+2) (2N)^d / delta)) / N), computed in log space."""
    if N < 1:
        raise ConfigError("N must be >= 1", "N")
    log_term = math.log(4 * (m + q + 2)) + d * math.log(2 * N) - math.log(delta)
    return math.sqrt((1.0 + log_term) / N)


class FiniteHypothesisClass:
    """A finite list of predictors mapping an (N, d) batch to (N, k) outputs.

    Build it from callables directly, or from parameter vectors of a model
    with :meth:`from_parameters`.
    """

    def __init__(self, predictors):
        self.predictors = list(predictors)
        if not self.predictors:
            raise ConfigError("hypothesis class must be nonempty", "hypotheses")

    @classmethod
    def from_parameters(cls, model, thetas):
        return cls([lambda X, t=np.asarray(t, dtype=np.float64): predict(model, t, X) for t in thetas])

    def __len__(self):
        return len(self.predictors)

    def __getitem__(self, i):
        return self.predictors[i]


def _hypothesis_losses(h, loss, data, pairing=None):
    out = np.atleast_2d(h(data.features))
    if pairing is not None:
        flipped = np.atleast_2d(h(counterfactual(data.features, pairing.cmap)))
        if loss.pairwise:
            return np.asarray(loss(out, flipped), dtype=np.float64)
        return np.asarray(loss(out, np.argmax(flipped, axis=1)), dtype=np.float64)
    return np.asarray(loss(out, data.labels), dtype=np.float64)


@dataclass
class EcrmResult:
    index: int
    objective: float
    objectives: np.ndarray
    feasible: np.ndarray


def ecrm_bruteforce(hclass, objective_loss, specs, objective_data, datasets=None):
    """Exact constrained ERM over a finite class.

    Keeps hypotheses meeting every empirical constraint (average means <= c,
    every pointwise loss <= c) and returns the one with the smallest
    objective; ties go to the lowest index.
    """
    if datasets is None:
        datasets = [resolve_source(s.source) for s in specs]
    n = len(hclass)
    objectives = np.empty(n)
    worst = np.full(n, -np.inf)
    for i, h in enumerate(hclass.predictors):
        objectives[i] = float(np.mean(_hypothesis_losses(h, objective_loss, objective_data)))
        for spec, data in zip(specs, datasets):
            losses = _hypothesis_losses(h, spec.loss, data, spec.pairing)
            if spec.kind == AVERAGE:
                v = float(np.mean(losses)) - spec.threshold
            else:
                v = float(np.max(losses - spec.threshold))
            worst[i] = max(worst[i], v)
    feasible = worst <= 0 if specs else np.ones(n, dtype=bool)
    if not np.any(feasible):
        raise InfeasibilityError(
            "no hypothesis in the class satisfies every empirical constraint",
            details={"worst_violation": worst.tolist()},
        )
    masked = np.where(feasible, objectives, np.inf)
    best = int(np.argmin(masked))
    return EcrmResult(best, float(objectives[best]), objectives, feasible)


@dataclass
class ConstraintCheck:
    id: str
    kind: str
    value: float
    bound: float
    passed: bool


@dataclass
class PaccCertificate:
    epsilon: float
    objective: float
    reference_objective: float
    objective_passed: bool
    constraints: list = field(default_factory=list)

    @property
    def verdict(self):
        return self.objective_passed and all(c.passed for c in self.constraints)

    def to_dict(self):
        d = asdict(self)
        d["verdict"] = self.verdict
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def certificate_from_values(epsilon, objective, reference, averages=(), pointwise_violation=()):
    """Assemble a certificate from measured held-out quantities.

    ``averages`` holds (id, mean loss, c) triples; ``pointwise_violation``
    holds (id, fraction of samples with loss > c) pairs.
    """
    checks = [ConstraintCheck(cid, AVERAGE, v, c + epsilon, v <= c + epsilon) for cid, v, c in averages]
    for cid, frac in pointwise_violation:
        sat = 1.0 - frac
        checks.append(ConstraintCheck(cid, POINTWISE, sat, 1.0 - epsilon, sat >= 1.0 - epsilon))
    return PaccCertificate(epsilon, objective, reference, objective <= reference + epsilon, checks)


def pacc_certificate(model, theta, objective, specs, heldout, epsilon, reference_objective, objective_heldout=None):
    """Check epsilon-optimality and epsilon-feasibility on held-out data.

    ``heldout`` maps constraint id -> SampleSet drawn from that constraint's
    distribution; ``objective_heldout`` is the held-out objective set. Held-out
    sets must be disjoint from training data; that is not checked here.
    """
    if objective_heldout is None:
        objective_heldout = heldout.get("__objective__")
    if objective_heldout is None or len(objective_heldout) == 0:
        raise DataError("empty held-out set for the objective")
    obj = float(np.mean(per_sample_losses(objective.loss, model, theta, objective_heldout).value))
    avgs, pws = [], []
    for spec in specs:
        data = heldout.get(spec.id)
        if data is None or len(data) == 0:
            raise DataError(f"empty held-out set for constraint {spec.id!r}")
        entry = slack_from_losses(spec, per_sample_losses(spec, model, theta, data).value)
        if spec.kind == AVERAGE:
            avgs.append((spec.id, entry.value + spec.threshold, spec.threshold))
        else:
            pws.append((spec.id, entry.violation_fraction))
    return certificate_from_values(epsilon, obj, reference_objective, avgs, pws)


@dataclass(frozen=True)
class NearPaccEstimate:
    epsilon0: float
    mu_l1: float
    lam_l1: float
    M: float
    nu: float


def epsilon0_estimate(mu, lam, M, nu):
    """(1 + ||mu||_1 + sum_j mean_n lam_jn) * M * nu.

    ``lam`` is a list of per-sample dual vectors or an already-computed
    empirical L1 norm.
    """
    if not (M > 0 and nu > 0):
        raise ConfigError("M and nu must be positive", "epsilon0")
    mu_l1 = float(np.sum(np.abs(np.asarray(mu, dtype=np.float64))))
    if np.isscalar(lam):
        lam_l1 = float(lam)
    else:
        lam_l1 = float(sum(np.mean(np.abs(np.asarray(v, dtype=np.float64))) for v in lam))
    return NearPaccEstimate((1.0 + mu_l1 + lam_l1) * M * nu, mu_l1, lam_l1, M, nu)


def comp_slackness_check(duals, slacks, tol):
    """Per-constraint check that |dual * slack| <= tol (every sample for pointwise)."""
    if not tol > 0:
        raise ConfigError("tolerance must be positive", "tol")
    out = {}
    for cid, mu, s in zip(duals.average_ids, duals.mu, slacks.average):
        out[cid] = bool(abs(mu * s) <= tol)
    for cid, lam, s in zip(duals.pointwise_ids, duals.lam, slacks.pointwise):
        out[cid] = bool(np.all(np.abs(lam * s) <= tol))
    return out
