"""Command-line entry point: train, certify, attack-sweep, sensitivity and
ecrm-oracle subcommands driven by one JSON run configuration."""

import argparse
import csv
import json
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import reports
from .config import RunConfig
from .constraints import POINTWISE, AdversarialSource, CounterfactualSource, DualState, RawSource, resolve_source
from .data import DatasetSchema, load_dataset, split
from .errors import ConfigError, DataError, InfeasibilityError, NumericOverflowError, PaccError, SchemaError
from .models import ModelSpec, init_theta
from .solver import train
from .theory import FiniteHypothesisClass, ecrm_bruteforce, pacc_certificate

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_CERTIFICATE = 3


class CertificateFailed(Exception):
    pass


def _write_json(path, doc):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_text(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


class Run:
    """Data, split and constraint objects shared by every subcommand."""

    def __init__(self, cfg):
        self.cfg = cfg
        data_path, schema_path = cfg.dataset_paths()
        self.data, self.meta = load_dataset(data_path, DatasetSchema.load(schema_path))
        self.split = split(self.data, cfg.fractions, cfg["seed"])
        if self.split.train is None:
            raise ConfigError("training split is empty", "split.fractions")
        self.test = self.split.test if self.split.test is not None else self.split.train
        k = max(len(self.meta.label_levels), int(self.data.labels.max()) + 1)
        self.model = cfg.model_spec(self.data.dim, k)
        self.objective = cfg.objective(self.split.train)
        self.specs = cfg.constraints(self.split.train, self.meta)

    def train_table(self):
        idx = self.split.indices[0]
        return {c: v[idx] for c, v in self.meta.categorical.items()}

    def save_model(self, path, theta, duals, train_objective):
        info = {
            "model": {
                "kind": self.model.kind,
                "input_dim": self.model.input_dim,
                "output_dim": self.model.output_dim,
                "hidden": list(self.model.hidden),
                "output_map": self.model.output_map,
                "activation": self.model.activation,
            },
            "train_objective": train_objective,
            "average_ids": list(duals.average_ids),
            "pointwise_ids": list(duals.pointwise_ids),
        }
        arrays = {"theta": theta, "mu": duals.mu}
        for j, v in enumerate(duals.lam):
            arrays[f"lam{j}"] = v
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            np.savez(fh, info=np.array(json.dumps(info, sort_keys=True)), **arrays)

    def load_model(self, path):
        if not path.is_file():
            raise ConfigError(f"model file not found: {path}; run train first", "output.model")
        with np.load(path, allow_pickle=False) as z:
            info = json.loads(str(z["info"]))
            theta = z["theta"]
            lam = [z[f"lam{j}"] for j in range(len(info["pointwise_ids"]))]
            duals = DualState(z["mu"], lam, tuple(info["average_ids"]), tuple(info["pointwise_ids"]))
        m = info["model"]
        spec = ModelSpec(m["kind"], m["input_dim"], m["output_dim"], tuple(m["hidden"]), m["output_map"], m["activation"])
        if spec != self.model:
            raise ConfigError("saved model does not match the configured model", "model")
        return theta, duals, info


def _sweep(run, theta):
    grid = run.cfg["evaluation"].get("eps_grid") or []
    if not grid:
        return []
    return reports.robust_accuracy_sweep(run.model, theta, run.test, grid, run.cfg.eval_attack(), seed=run.cfg["seed"])


def cmd_train(cfg):
    run = Run(cfg)
    solver_cfg = cfg.solver_config()
    report_path = cfg.output_path("report")
    report_path.parent.mkdir(parents=True, exist_ok=True)
    solver_cfg.report_path = str(report_path)
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    res = train(run.specs, run.model, run.objective, solver_cfg)

    metrics = {"clean_accuracy": reports.accuracy(run.model, res.theta, run.test)}
    for e in res.report.final_slacks:
        metrics[f"slack.{e.id}"] = e.value
        if e.kind == POINTWISE:
            metrics[f"violation.{e.id}"] = e.violation_fraction
    for cid, v in res.duals.by_id().items():
        metrics[f"dual_l1.{cid}"] = float(v) if np.isscalar(v) else float(np.mean(v))
    cmap = cfg.sensitivity_map(run.meta)
    if cmap is not None:
        metrics["sensitivity_rate"] = reports.sensitivity_rate(run.model, res.theta, run.test, cmap)
    for eps, acc in _sweep(run, res.theta):
        metrics[f"robust_accuracy.{eps!r}"] = acc
    metrics["train_objective"] = res.report.final_objective
    metrics["final_lagrangian"] = res.report.final_lagrangian

    run.save_model(cfg.output_path("model"), res.theta, res.duals, res.report.final_objective)
    if res.duals.lam:
        q = float(cfg["evaluation"].get("dual_quantile", 0.2))
        dual = reports.dual_sensitivity_report(res.duals.lam[0], run.train_table(), quantile=q)
        _write_text(cfg.output_path("dual_histogram"), dual.histogram_csv())
        _write_text(cfg.output_path("prevalence"), dual.prevalence_csv())
    _write_json(cfg.output_path("metrics"), metrics)
    _write_json(
        cfg.output_path("timing"),
        {"started": started, "wall_clock_seconds": time.perf_counter() - t0, "epochs": len(res.report)},
    )
    return metrics


def _heldout(run, theta):
    out = {"__objective__": run.test}
    for k, spec in enumerate(run.specs):
        src = spec.source
        if isinstance(src, AdversarialSource):
            src = AdversarialSource(run.test, src.config, src.loss, src.refresh_every)
        elif isinstance(src, CounterfactualSource):
            src = CounterfactualSource(run.test, src.cmap)
        else:
            src = RawSource(run.test)
        out[spec.id] = resolve_source(src, run.model, theta, run.cfg["seed"] + k)
    return out


def cmd_certify(cfg):
    run = Run(cfg)
    theta, _, info = run.load_model(cfg.output_path("model"))
    c = cfg["certify"]
    ref = c.get("reference_objective")
    ref = info["train_objective"] if ref is None else float(ref)
    held = _heldout(run, theta)
    cert = pacc_certificate(run.model, theta, run.objective, run.specs, held, float(c["epsilon"]), ref)
    doc = cert.to_dict()
    _write_json(cfg.output_path("certificate"), doc)
    if not cert.verdict:
        raise CertificateFailed(doc)
    return doc


def cmd_attack_sweep(cfg):
    run = Run(cfg)
    theta, _, _ = run.load_model(cfg.output_path("model"))
    rows = _sweep(run, theta)
    if not rows:
        raise ConfigError("evaluation.eps_grid is empty", "evaluation.eps_grid")
    path = cfg.output_path("sweep")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "robust_accuracy"])
        for eps, acc in rows:
            w.writerow([repr(eps), repr(acc)])
    return {f"robust_accuracy.{eps!r}": acc for eps, acc in rows}


def cmd_sensitivity(cfg):
    run = Run(cfg)
    theta, duals, _ = run.load_model(cfg.output_path("model"))
    cmap = cfg.sensitivity_map(run.meta)
    if cmap is None:
        raise ConfigError("evaluation.sensitivity names no column", "evaluation.sensitivity")
    out = {"sensitivity_rate": reports.sensitivity_rate(run.model, theta, run.test, cmap)}
    if duals.lam:
        q = float(cfg["evaluation"].get("dual_quantile", 0.2))
        dual = reports.dual_sensitivity_report(duals.lam[0], run.train_table(), quantile=q)
        _write_text(cfg.output_path("dual_histogram"), dual.histogram_csv())
        _write_text(cfg.output_path("prevalence"), dual.prevalence_csv())
        out["dual_zero_fraction"] = dual.zero_fraction
        out["dual_degenerate"] = dual.degenerate
    return out


def cmd_ecrm_oracle(cfg):
    run = Run(cfg)
    if any(isinstance(s.source, AdversarialSource) for s in run.specs):
        raise ConfigError("ecrm-oracle needs fixed data sources, not adversarial ones", "constraints")
    n = int(cfg["ecrm"].get("hypotheses", 50))
    if n < 1:
        raise ConfigError("need at least one hypothesis", "ecrm.hypotheses")
    rng = np.random.default_rng(cfg["seed"])
    thetas = [init_theta(run.model, rng) for _ in range(n)]
    res = ecrm_bruteforce(
        FiniteHypothesisClass.from_parameters(run.model, thetas),
        run.objective.loss,
        run.specs,
        run.split.train,
    )
    doc = {
        "index": res.index,
        "objective": res.objective,
        "feasible_count": int(np.sum(res.feasible)),
        "hypotheses": n,
    }
    _write_json(cfg.output_path("ecrm"), doc)
    return doc


COMMANDS = {
    "train": cmd_train,
    "certify": cmd_certify,
    "attack-sweep": cmd_attack_sweep,
    "sensitivity": cmd_sensitivity,
    "ecrm-oracle": cmd_ecrm_oracle,
}


class _Parser(argparse.ArgumentParser):
    # usage errors are config errors (exit 1); argparse would otherwise use 2
    def error(self, message):
        _error("UsageError", message)
        sys.exit(EXIT_CONFIG)


def build_parser():
    p = _Parser(prog="pacclearn", description="Constrained learning via primal-dual training.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="path to the JSON run configuration")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config entry (dotted key)")
    return p


def _error(kind, message, **extra):
    doc = {"error": kind, "message": message}
    doc.update({k: v for k, v in extra.items() if v is not None})
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args.set)
        out = COMMANDS[args.command](cfg)
    except CertificateFailed as exc:
        _error("CertificateFailed", "held-out checks failed", certificate=exc.args[0])
        return EXIT_CERTIFICATE
    except (NumericOverflowError, InfeasibilityError) as exc:
        _error(type(exc).__name__, str(exc), constraint=getattr(exc, "constraint_id", None))
        return EXIT_NUMERIC
    except ConfigError as exc:
        _error("ConfigError", str(exc), field=exc.field)
        return EXIT_CONFIG
    except (SchemaError, DataError, PaccError, ValueError, KeyError, OSError) as exc:
        _error(type(exc).__name__, str(exc))
        return EXIT_CONFIG
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
