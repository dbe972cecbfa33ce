"""Primal-dual training on the empirical Lagrangian.

The Lagrangian of a constrained problem with average constraints i and
pointwise constraints j is

    L(theta, mu, lam) = mean_n l0(f(x_n), y_n)
                        + sum_i mu_i * (mean_n l_i(...) - c_i)
                        + sum_j mean_n lam_jn * (l_j(...) - c_j)

Training alternates (approximate) minimization over theta with projected
ascent on the duals, either with an inner oracle run per dual update or
with minibatch primal steps and one dual update per epoch.
"""

import csv
import io
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .constraints import (
    AVERAGE,
    POINTWISE,
    AdversarialSource,
    DualState,
    SlackReport,
    init_duals,
    per_sample_losses,
    resolve_source,
    slack_from_losses,
)
from .errors import ConfigError, InfeasibilityError, NumericOverflowError
from .losses import LossSpec
from .models import init_theta

ORACLE = "oracle"
ALTERNATING = "alternating"


@dataclass(frozen=True, eq=False)
class Objective:
    loss: LossSpec
    data: object


@dataclass
class SolverConfig:
    dual_step: float = 0.01
    primal_step: float = 0.1
    primal_optimizer: str = "adam"
    dual_optimizer: str = "subgradient"
    mode: str = ALTERNATING
    iterations: int = 100
    oracle_steps: int = 100
    rho: float = 0.0
    beta: float = 0.01
    batch_size: int = 128
    seed: int = 0
    dual_cap: float = 1e6
    zero_init: bool = False
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    report_path: str = None

    def __post_init__(self):
        checks = [
            (self.dual_step > 0, "dual_step", "dual step size must be positive"),
            (self.primal_step > 0, "primal_step", "primal step size must be positive"),
            (self.iterations >= 1, "iterations", "need at least one outer iteration"),
            (self.oracle_steps >= 1, "oracle_steps", "oracle budget must be >= 1"),
            (self.rho >= 0, "rho", "oracle gap target must be nonnegative"),
            (self.beta > 0, "beta", "convergence tolerance must be positive"),
            (self.batch_size >= 1, "batch_size", "batch size must be >= 1"),
            (self.dual_cap > 0, "dual_cap", "dual cap must be positive"),
            (self.primal_optimizer in ("gd", "adam"), "primal_optimizer", "primal optimizer must be gd or adam"),
            (self.dual_optimizer in ("subgradient", "adam"), "dual_optimizer", "dual optimizer must be subgradient or adam"),
            (self.mode in (ORACLE, ALTERNATING), "mode", "mode must be oracle or alternating"),
        ]
        for ok, name, msg in checks:
            if not ok:
                raise ConfigError(msg, f"solver.{name}")


class GradientDescent:
    def __init__(self, lr):
        self.lr = lr

    def step(self, x, g):
        return x - self.lr * g


class Adam:
    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, x, g):
        if self.m is None:
            self.m = np.zeros_like(g)
            self.v = np.zeros_like(g)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return x - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_primal_optimizer(config):
    if config.primal_optimizer == "adam":
        return Adam(config.primal_step, config.adam_betas, config.adam_eps)
    return GradientDescent(config.primal_step)


def _split(specs):
    avg = [k for k, s in enumerate(specs) if s.kind == AVERAGE]
    pw = [k for k, s in enumerate(specs) if s.kind == POINTWISE]
    return avg, pw


def lagrangian_from_slacks(objective_mean, duals, slacks):
    """Lagrangian value from an objective mean and a SlackReport."""
    value = objective_mean
    if duals.m:
        value += float(np.dot(duals.mu, slacks.average))
    for lam, s in zip(duals.lam, slacks.pointwise):
        value += float(np.mean(lam * s))
    return value


def _lagrangian_var(model, theta, duals, specs, objective, datasets, batch=None):
    """Differentiable Lagrangian. ``batch`` maps set index -> row indices (None = full)."""
    if batch is None:
        obj_rows, rows = None, [None] * len(specs)
    else:
        obj_rows, rows = batch
    obj_data = objective.data if obj_rows is None else objective.data.subset(obj_rows)
    L = nc.mean(per_sample_losses(objective.loss, model, theta, obj_data))
    ai = pi = 0
    for k, spec in enumerate(specs):
        r = rows[k]
        if spec.kind == AVERAGE:
            mu = duals.mu[ai]
            ai += 1
            if mu == 0 or (r is not None and len(r) == 0):
                continue
            data = datasets[k] if r is None else datasets[k].subset(r)
            L = L + mu * (nc.mean(per_sample_losses(spec, model, theta, data)) - spec.threshold)
        else:
            lam = duals.lam[pi]
            pi += 1
            if r is not None:
                lam = lam[r]
                if len(r) == 0:
                    continue
            if not np.any(lam):
                continue
            data = datasets[k] if r is None else datasets[k].subset(r)
            losses = per_sample_losses(spec, model, theta, data)
            L = L + nc.mean(lam * (losses - spec.threshold))
    return L


def _resolve_all(specs, model, theta, seed):
    return [resolve_source(s.source, model, theta, seed + 7919 * k) for k, s in enumerate(specs)]


def empirical_lagrangian(model, theta, duals, specs, objective, datasets=None):
    """Value of the empirical Lagrangian at (theta, duals)."""
    if datasets is None:
        datasets = _resolve_all(specs, model, theta, 0)
    return float(_lagrangian_var(model, theta, duals, specs, objective, datasets).value)


def evaluate(model, theta, duals, specs, objective, datasets):
    """Objective mean, SlackReport and Lagrangian value at ``theta``."""
    obj = float(np.mean(per_sample_losses(objective.loss, model, theta, objective.data).value))
    slacks = SlackReport(
        [slack_from_losses(s, per_sample_losses(s, model, theta, d).value) for s, d in zip(specs, datasets)]
    )
    return obj, slacks, lagrangian_from_slacks(obj, duals, slacks)


@dataclass
class OracleResult:
    theta: np.ndarray
    value: float
    steps: int
    gap: float = None


def primal_oracle(model, theta, duals, specs, objective, config, datasets=None, steps=None, reference_min=None):
    """Approximately minimize the Lagrangian over theta, warm-started at ``theta``.

    Runs ``steps`` (default ``config.oracle_steps``) full-batch first-order
    steps and returns the best iterate seen. When ``reference_min`` is given
    the achieved gap to it is reported.
    """
    steps = config.oracle_steps if steps is None else steps
    if steps < 1:
        raise ConfigError("oracle budget must be >= 1", "solver.oracle_steps")
    if datasets is None:
        datasets = _resolve_all(specs, model, theta, config.seed)
    opt = make_primal_optimizer(config)

    def f(t):
        return _lagrangian_var(model, t, duals, specs, objective, datasets)

    x = np.array(theta, dtype=np.float64)
    best_x, best_v = x, math.inf
    for k in range(steps + 1):
        try:
            if k < steps:
                v, g = nc.value_and_grad(f, x)
            else:
                v = float(f(x).value)
        except NumericOverflowError as exc:
            raise NumericOverflowError("primal_oracle", f"iteration {k}: {exc}") from exc
        if v < best_v:
            best_x, best_v = x, v
        if k < steps:
            x = opt.step(x, g)
    gap = None if reference_min is None else best_v - reference_min
    return OracleResult(best_x, best_v, steps, gap)


def dual_ascent_step(duals, slacks, eta):
    """Projected dual (sub)gradient ascent step.

    mu_i <- [mu_i + eta * slack_i]_+ and lam_jn <- [lam_jn + (eta / N_j) * slack_jn]_+.
    """
    if not eta > 0:
        raise ConfigError("dual step size must be positive", "solver.dual_step")
    mu = np.maximum(0.0, duals.mu + eta * np.asarray(slacks.average, dtype=np.float64))
    lam = []
    for v, s in zip(duals.lam, slacks.pointwise):
        lam.append(np.maximum(0.0, v + (eta / v.size) * s))
    out = DualState(mu, lam, duals.average_ids, duals.pointwise_ids)
    out.check()
    return out


class AdamDualAscent:
    """Projected Adam ascent on the duals; gradients are the same as for
    :func:`dual_ascent_step`."""

    def __init__(self, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.opt = None

    def __call__(self, duals, slacks, eta=None):
        g = np.concatenate(
            [np.asarray(slacks.average, dtype=np.float64)]
            + [s / s.size for s in slacks.pointwise]
        )
        if self.opt is None:
            self.opt = Adam(self.lr, self.betas, self.eps)
        flat = np.maximum(0.0, self.opt.step(duals.flat(), -g))
        m = duals.m
        mu, lam, pos = flat[:m], [], m
        for v in duals.lam:
            lam.append(flat[pos : pos + v.size])
            pos += v.size
        out = DualState(mu, lam, duals.average_ids, duals.pointwise_ids)
        out.check()
        return out


def estimate_S(B, average_thresholds=(), pointwise=()):
    """sum_i (B - c_i)^2 + sum_j (B - c_j)^2 / N_j; ``pointwise`` holds (c_j, N_j) pairs."""
    cs = list(average_thresholds) + [c for c, _ in pointwise]
    if cs and B <= max(cs):
        warnings.warn("B <= some threshold: the neighborhood bound is vacuous", stacklevel=2)
    S = sum((B - c) ** 2 for c in average_thresholds)
    S += sum((B - c) ** 2 / n for c, n in pointwise)
    return float(S)


def estimate_S_for(specs, datasets=None):
    B = max((s.loss.B for s in specs), default=0.0)
    avg = [s.threshold for s in specs if s.kind == AVERAGE]
    pw = [
        (s.threshold, len(datasets[k]) if datasets is not None else len(s.base))
        for k, s in enumerate(specs)
        if s.kind == POINTWISE
    ]
    if not specs:
        return 0.0
    return estimate_S(B, avg, pw)


def neighborhood_bounds(P, rho, beta, eta, S, eps0=0.0, eps=0.0):
    """Interval [P - rho - eta*S/2 - beta - eps, P + rho + eps0 + eps]."""
    for name, v in (("rho", rho), ("beta", beta), ("eta", eta), ("S", S), ("eps0", eps0), ("eps", eps)):
        if v < 0:
            raise ConfigError(f"{name} must be nonnegative", name)
    return (P - rho - 0.5 * eta * S - beta - eps, P + rho + eps0 + eps)


def dual_distance(mu_star, lam_star=()):
    """U0 = ||mu*||^2 + sum_j ||lam_j*||^2 (distance from the all-ones start is not used)."""
    return float(np.sum(np.square(mu_star)) + sum(np.sum(np.square(v)) for v in lam_star))


def iteration_bound(U0, eta, beta):
    return U0 / (2.0 * eta * beta) + 1.0


def _fmt(v):
    return repr(float(v))


@dataclass
class ConvergenceReport:
    columns: list
    rows: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)
    final_lagrangian: float = None
    final_objective: float = None
    final_slacks: SlackReport = None
    S: float = 0.0
    eta: float = 0.0

    def __len__(self):
        return len(self.rows)

    @property
    def lagrangian(self):
        return np.array([r["lagrangian"] for r in self.rows])

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def to_csv(self, include_timing=False):
        buf = io.StringIO()
        cols = self.columns + (["wall_clock"] if include_timing else [])
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r, t in zip(self.rows, self.wall_clock):
            vals = [r[c] for c in self.columns] + ([t] if include_timing else [])
            w.writerow([v if isinstance(v, int) else _fmt(v) for v in vals])
        return buf.getvalue()

    def neighborhood(self, P, rho, beta, eps0=0.0, eps=0.0):
        return neighborhood_bounds(P, rho, beta, self.eta, self.S, eps0, eps)


def _report_columns(specs):
    cols = ["iteration", "lagrangian", "objective"]
    for s in specs:
        cols.append(f"slack.{s.id}")
        if s.kind == POINTWISE:
            cols.append(f"violation.{s.id}")
        cols.append(f"dual_l1.{s.id}")
    return cols


def _row(t, lag, obj, specs, slacks, duals):
    row = {"iteration": t, "lagrangian": lag, "objective": obj}
    ai = pi = 0
    for s, e in zip(specs, slacks):
        row[f"slack.{s.id}"] = e.value
        if s.kind == POINTWISE:
            row[f"violation.{s.id}"] = e.violation_fraction
            row[f"dual_l1.{s.id}"] = float(np.mean(duals.lam[pi]))
            pi += 1
        else:
            row[f"dual_l1.{s.id}"] = float(duals.mu[ai])
            ai += 1
    return row


def _check_cap(duals, cap):
    for cid, v in zip(duals.average_ids, duals.mu):
        if v > cap:
            raise InfeasibilityError(
                f"dual variable of constraint {cid!r} exceeded {cap:g}: constraint is likely infeasible", cid
            )
    for cid, v in zip(duals.pointwise_ids, duals.lam):
        if v.size and v.max() > cap:
            raise InfeasibilityError(
                f"a dual variable of constraint {cid!r} exceeded {cap:g}: constraint is likely infeasible", cid
            )


@dataclass
class TrainResult:
    theta: np.ndarray
    duals: DualState
    report: ConvergenceReport
    datasets: list


def _batches(rng, n, n_batches):
    return np.array_split(rng.permutation(n), n_batches)


def train(specs, model, objective, config, mode=None, theta0=None, duals0=None):
    """Primal-dual training.

    ``mode="oracle"`` runs ``config.iterations`` rounds of (primal oracle,
    dual step) and one last oracle call at the final duals.
    ``mode="alternating"`` takes minibatch primal steps for an epoch, then
    one dual step, ``config.iterations`` times.
    """
    mode = mode or config.mode
    if mode not in (ORACLE, ALTERNATING):
        raise ConfigError("mode must be oracle or alternating", "solver.mode")
    specs = list(specs)
    for s in specs:
        if not s.loss.differentiable:
            raise ConfigError(f"constraint {s.id!r}: 0-1 loss cannot be trained on", "constraint.loss")
    if not objective.loss.differentiable:
        raise ConfigError("objective loss must be differentiable", "objective.loss")
    if len(objective.data) == 0:
        raise ConfigError("objective data set is empty")
    ids = [s.id for s in specs]
    if len(set(ids)) != len(ids):
        raise ConfigError("constraint ids must be unique", "constraints")

    rng = np.random.default_rng(config.seed)
    theta = init_theta(model, rng, zeros=config.zero_init) if theta0 is None else np.array(theta0, dtype=np.float64)
    datasets = _resolve_all(specs, model, theta, config.seed)
    duals = init_duals(specs, [len(datasets[k]) for k, s in enumerate(specs) if s.kind == POINTWISE])
    if duals0 is not None:
        duals = duals0.copy()
    dual_update = (
        AdamDualAscent(config.dual_step, config.adam_betas, config.adam_eps)
        if config.dual_optimizer == "adam"
        else dual_ascent_step
    )

    report = ConvergenceReport(_report_columns(specs), S=estimate_S_for(specs, datasets), eta=config.dual_step)
    stream = open(config.report_path, "w", newline="") if config.report_path else None
    writer = None
    if stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(report.columns)

    def refresh(t):
        for k, s in enumerate(specs):
            if isinstance(s.source, AdversarialSource) and t % s.source.refresh_every == 0:
                datasets[k] = resolve_source(s.source, model, theta, config.seed + 7919 * k + 104729 * t)

    def record(t, start, obj, slacks, lag):
        row = _row(t, lag, obj, specs, slacks, duals)
        report.rows.append(row)
        report.wall_clock.append(time.perf_counter() - start)
        if writer:
            writer.writerow([row[c] if isinstance(row[c], int) else _fmt(row[c]) for c in report.columns])
            stream.flush()

    try:
        if mode == ORACLE:
            for t in range(config.iterations):
                start = time.perf_counter()
                if t > 0:
                    refresh(t)
                res = primal_oracle(model, theta, duals, specs, objective, config, datasets)
                theta = res.theta
                obj, slacks, lag = evaluate(model, theta, duals, specs, objective, datasets)
                record(t, start, obj, slacks, lag)
                duals = dual_update(duals, slacks, config.dual_step)
                _check_cap(duals, config.dual_cap)
            theta = primal_oracle(model, theta, duals, specs, objective, config, datasets).theta
        else:
            opt = make_primal_optimizer(config)
            n0 = len(objective.data)
            n_batches = max(1, math.ceil(n0 / config.batch_size))
            for t in range(config.iterations):
                start = time.perf_counter()
                if t > 0:
                    refresh(t)
                obj_b = _batches(rng, n0, n_batches)
                con_b = [_batches(rng, len(d), n_batches) for d in datasets]
                for b in range(n_batches):
                    batch = (obj_b[b], [cb[b] for cb in con_b])

                    def f(x, batch=batch):
                        return _lagrangian_var(model, x, duals, specs, objective, datasets, batch)

                    try:
                        _, g = nc.value_and_grad(f, theta)
                    except NumericOverflowError as exc:
                        raise NumericOverflowError("train", f"epoch {t}, batch {b}: {exc}") from exc
                    theta = opt.step(theta, g)
                obj, slacks, lag = evaluate(model, theta, duals, specs, objective, datasets)
                record(t, start, obj, slacks, lag)
                duals = dual_update(duals, slacks, config.dual_step)
                _check_cap(duals, config.dual_cap)
    finally:
        if stream:
            stream.close()

    obj, slacks, lag = evaluate(model, theta, duals, specs, objective, datasets)
    report.final_lagrangian = lag
    report.final_objective = obj
    report.final_slacks = slacks
    return TrainResult(theta, duals, report, datasets)
