"""Run configuration: a versioned JSON document, dotted ``--set`` overrides,
and construction of the model, objective and constraint objects it names."""

import copy
import json
import math
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .constraints import (
    AVERAGE,
    POINTWISE,
    AdversarialSource,
    ConstraintSpec,
    CounterfactualSource,
    InvariancePair,
    RawSource,
)
from .errors import ConfigError
from .losses import KL, NLL, ZERO_ONE
from .models import ModelSpec
from .perturb import AdversarialConfig, FixedEpsilon, ScaledBeta
from .solver import Objective, SolverConfig

CONFIG_VERSION = 1
BUILTIN = "builtin:"
SEED_ENV = "PACC_SEED"

LOSSES = {"nll": NLL, "kl": KL, "zero_one": ZERO_ONE}
SOURCES = ("train", "counterfactual", "adversarial")

DEFAULTS = {
    "config_version": CONFIG_VERSION,
    "seed": 0,
    "dataset": {},
    "split": {"fractions": [0.7, 0.0, 0.3]},
    "model": {"kind": "mlp", "hidden": [64], "activation": "sigmoid"},
    "objective": {"loss": "nll"},
    "constraints": [],
    "adversarial": None,
    "solver": {},
    "evaluation": {"sensitivity": None, "eps_grid": [], "attack": None, "dual_quantile": 0.2},
    "certify": {"epsilon": 0.05, "reference_objective": None},
    "ecrm": {"hypotheses": 50},
    "output": {"dir": "out"},
}

OUTPUT_FILES = {
    "metrics": "metrics.json",
    "timing": "timing.json",
    "model": "model.npz",
    "report": "convergence.csv",
    "dual_histogram": "dual_histogram.csv",
    "prevalence": "prevalence.csv",
    "certificate": "certificate.json",
    "sweep": "robust_accuracy.csv",
    "ecrm": "ecrm.json",
}


def builtin_path(name):
    """Path of a file shipped in the package data directory."""
    p = resources.files("pacclearn") / "data" / name
    if not p.is_file():
        raise ConfigError(f"no bundled file named {name!r}", "dataset")
    return Path(str(p))


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text):
    """``a.b.c=value`` -> (["a", "b", "c"], value); the value is JSON when it parses."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value", "--set")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key", "--set")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def apply_override(doc, path, value):
    node = doc
    for part in path[:-1]:
        if isinstance(node, list):
            node = node[_index(part, path)]
            continue
        if node.get(part) is None:
            node[part] = {}
        node = node[part]
    last = path[-1]
    if isinstance(node, list):
        node[_index(last, path)] = value
    else:
        node[last] = value


def _index(part, path):
    try:
        return int(part)
    except ValueError:
        raise ConfigError(f"list index expected at {part!r}", ".".join(path)) from None


def _resolve_file(value, base_dir, field):
    if value is None:
        raise ConfigError("path is required", field)
    if isinstance(value, str) and value.startswith(BUILTIN):
        return builtin_path(value[len(BUILTIN):])
    p = Path(value)
    if not p.is_absolute():
        p = Path(base_dir) / p
    if not p.is_file():
        raise ConfigError(f"file not found: {p}", field)
    return p


def _prior(d, field):
    if d is None:
        return FixedEpsilon(0.1)
    if isinstance(d, (int, float)):
        return FixedEpsilon(float(d))
    kind = d.get("type", "fixed")
    if kind == "fixed":
        return FixedEpsilon(float(d["epsilon"]))
    if kind == "scaled_beta":
        return ScaledBeta(float(d["a"]), float(d["b"]), float(d["scale"]))
    raise ConfigError(f"unknown epsilon prior {kind!r}", field)


def attack_config(d, field, evaluation=False):
    """AdversarialConfig from a config section (training or evaluation preset)."""
    d = dict(d or {})
    prior = _prior(d.pop("prior", None), f"{field}.prior")
    preset = AdversarialConfig.evaluation if evaluation else AdversarialConfig.training
    try:
        return preset(prior, **d)
    except TypeError as exc:
        raise ConfigError(str(exc), field) from None


@dataclass
class RunConfig:
    doc: dict
    base_dir: Path

    @classmethod
    def from_dict(cls, doc, base_dir=".", overrides=(), env=None):
        env = os.environ if env is None else env
        merged = _merge(DEFAULTS, doc)
        if env.get(SEED_ENV) not in (None, ""):
            try:
                merged["seed"] = int(env[SEED_ENV])
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer", SEED_ENV) from None
        for text in overrides:
            apply_override(merged, *parse_override(text))
        cfg = cls(merged, Path(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, overrides=(), env=None):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}", "--config")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}", "--config") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object", "--config")
        return cls.from_dict(doc, path.parent, overrides, env)

    def __getitem__(self, key):
        return self.doc[key]

    def validate(self):
        d = self.doc
        if d.get("config_version") != CONFIG_VERSION:
            raise ConfigError(f"unsupported config_version {d.get('config_version')!r}", "config_version")
        if not isinstance(d["seed"], int):
            raise ConfigError("seed must be an integer", "seed")
        fr = d["split"].get("fractions")
        if not isinstance(fr, list) or len(fr) not in (2, 3) or any(not isinstance(f, (int, float)) for f in fr):
            raise ConfigError("fractions must be a list of 2 or 3 numbers", "split.fractions")
        if any(f < 0 for f in fr):
            raise ConfigError("fractions must be nonnegative", "split.fractions")
        if abs(math.fsum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"fractions sum to {math.fsum(fr)}, expected 1", "split.fractions")
        self.dataset_paths()
        if d["objective"].get("loss") not in ("nll", "kl"):
            raise ConfigError("objective loss must be nll", "objective.loss")
        ids = set()
        for k, c in enumerate(d["constraints"]):
            field = f"constraints.{k}"
            for key in ("id", "kind", "loss", "threshold"):
                if key not in c:
                    raise ConfigError(f"missing {key!r}", f"{field}.{key}")
            if c["id"] in ids:
                raise ConfigError(f"duplicate constraint id {c['id']!r}", f"{field}.id")
            ids.add(c["id"])
            if c["kind"] not in (AVERAGE, POINTWISE):
                raise ConfigError("kind must be average or pointwise", f"{field}.kind")
            if c["loss"] not in LOSSES:
                raise ConfigError(f"unknown loss {c['loss']!r}", f"{field}.loss")
            if c.get("source", "train") not in SOURCES:
                raise ConfigError(f"source must be one of {SOURCES}", f"{field}.source")
            if c["loss"] == "kl" and not c.get("invariance"):
                raise ConfigError("KL constraints need an invariance column", f"{field}.invariance")
        self.solver_config()
        self.model_options()

    def dataset_paths(self):
        ds = self.doc["dataset"]
        return (
            _resolve_file(ds.get("path"), self.base_dir, "dataset.path"),
            _resolve_file(ds.get("schema"), self.base_dir, "dataset.schema"),
        )

    @property
    def fractions(self):
        fr = [float(f) for f in self.doc["split"]["fractions"]]
        return tuple(fr if len(fr) == 3 else [fr[0], 0.0, fr[1]])

    def solver_config(self):
        s = dict(self.doc["solver"])
        s.setdefault("seed", self.doc["seed"])
        if "adam_betas" in s:
            s["adam_betas"] = tuple(s["adam_betas"])
        try:
            return SolverConfig(**s)
        except TypeError as exc:
            raise ConfigError(str(exc), "solver") from None

    def model_options(self):
        m = dict(self.doc["model"])
        kind = m.get("kind", "mlp")
        if kind not in ("linear", "mlp"):
            raise ConfigError("model kind must be linear or mlp", "model.kind")
        return m

    def model_spec(self, input_dim, output_dim):
        m = self.model_options()
        if m.get("kind", "mlp") == "linear":
            return ModelSpec.linear(input_dim, output_dim)
        hidden = m.get("hidden", [64])
        hidden = tuple(hidden) if isinstance(hidden, list) else (int(hidden),)
        return ModelSpec.mlp(input_dim, hidden, output_dim, activation=m.get("activation", "sigmoid"))

    def objective(self, train):
        return Objective(LOSSES[self.doc["objective"]["loss"]], train)

    def constraints(self, train, meta):
        """ConstraintSpec list over the training split."""
        specs = []
        for k, c in enumerate(self.doc["constraints"]):
            field = f"constraints.{k}"
            loss = LOSSES[c["loss"]]
            src = c.get("source", "train")
            cmap = None
            if c.get("invariance"):
                cmap = _cmap(meta, c["invariance"], f"{field}.invariance")
            if src == "train":
                source = RawSource(train)
            elif src == "counterfactual":
                if cmap is None:
                    raise ConfigError("counterfactual source needs an invariance column", f"{field}.invariance")
                source, cmap = CounterfactualSource(train, cmap), None
            else:
                att = c.get("attack", self.doc.get("adversarial"))
                source = AdversarialSource(train, attack_config(att, f"{field}.attack"), loss=NLL)
            pairing = InvariancePair(cmap) if cmap is not None else None
            specs.append(ConstraintSpec(str(c["id"]), c["kind"], loss, float(c["threshold"]), source, pairing))
        return specs

    def sensitivity_map(self, meta):
        inv = self.doc["evaluation"].get("sensitivity")
        return None if not inv else _cmap(meta, inv, "evaluation.sensitivity")

    def eval_attack(self):
        ev = self.doc["evaluation"]
        return attack_config(ev.get("attack"), "evaluation.attack", evaluation=True)

    def output_path(self, name):
        out = self.doc["output"]
        if out.get(name):
            p = Path(out[name])
        else:
            p = Path(out.get("dir", "out")) / OUTPUT_FILES[name]
        return p if p.is_absolute() else self.base_dir / p


def _cmap(meta, inv, field):
    if isinstance(inv, str):
        inv = {"column": inv}
    col = inv.get("column")
    if col not in meta.groups:
        raise ConfigError(f"{col!r} is not a categorical feature", field)
    try:
        return meta.counterfactual_map(col, inv.get("swap"))
    except ValueError as exc:
        raise ConfigError(str(exc), field) from None
