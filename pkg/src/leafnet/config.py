"""Run configuration: YAML/JSON file validated against ``config_schema.json``.

Precedence is command-line flag > file value > built-in default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import jsonschema
import yaml

from .augment import AugmentConfig
from .errors import ConfigError
from .models import ModelSpec
from .training import TrainConfig


def load_schema():
    with resources.files("leafnet").joinpath("config_schema.json").open() as fh:
        return json.load(fh)


def schema_keys(schema=None, prefix=""):
    """Dotted paths and descriptions of every leaf key in the schema."""
    schema = schema or load_schema()
    out = []
    for name, sub in schema.get("properties", {}).items():
        path = f"{prefix}{name}"
        if sub.get("type") == "object" and "properties" in sub:
            out.extend(schema_keys(sub, path + "."))
        else:
            out.append((path, sub.get("description", "")))
    return out


def _unknown_keys(doc, schema, prefix=""):
    bad = []
    props = schema.get("properties", {})
    for key, value in doc.items():
        path = f"{prefix}{key}"
        if key not in props:
            bad.append(path)
        elif isinstance(value, dict) and props[key].get("type") == "object":
            bad.extend(_unknown_keys(value, props[key], path + "."))
    return bad


def validate(doc):
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a mapping")
    schema = load_schema()
    unknown = _unknown_keys(doc, schema)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "(root)"
        raise ConfigError(f"invalid value for {where}: {exc.message}") from None
    return doc


def read_config(path):
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return validate(doc)


def set_key(doc, dotted, value):
    node = doc
    *parents, leaf = dotted.split(".")
    for p in parents:
        node = node.setdefault(p, {})
    node[leaf] = value


@dataclass
class RunConfig:
    train: TrainConfig
    data_root: str = None
    synthetic: dict = None
    balance: bool = False
    out_dir: str = "runs/latest"
    raw: dict = None


def build_run_config(doc, num_classes=None):
    """Turn a validated document into a RunConfig (``num_classes`` fills a missing model key)."""
    data = doc.get("data", {})
    m = doc.get("model", {})
    o = doc.get("optimizer", {})
    s = doc.get("schedule", {})
    t = doc.get("train", {})
    es = t.get("early_stopping", {})
    a = doc.get("augment", {})
    k = m.get("num_classes", num_classes)
    if k is None:
        k = data.get("synthetic", {}).get("classes", 10) if "synthetic" in data else 10
    try:
        spec = ModelSpec(
            name=m.get("name", "dmcnn"),
            num_classes=k,
            input_scales=m.get("scales"),
            width_multiplier=m.get("width_multiplier", 1.0),
            dropout=m.get("dropout"),
            in_channels=m.get("in_channels", 3),
            seed=t.get("seed", 0),
        )
        augment = None
        if a.get("enabled", False):
            augment = AugmentConfig(**{key: v for key, v in a.items() if key != "enabled"})
        cfg = TrainConfig(
            model=spec,
            optimizer=o.get("name", "adam"),
            lr=o.get("lr", 1e-3),
            weight_decay=o.get("weight_decay", 0.0),
            momentum=o.get("momentum", 0.0),
            beta1=o.get("beta1", 0.9),
            beta2=o.get("beta2", 0.999),
            eps=o.get("eps", 1e-8),
            rho=o.get("rho", 0.9),
            schedule=s.get("kind", "constant"),
            lr_min=s.get("lr_min", 0.0),
            batch_size=t.get("batch_size", 32),
            epochs=t.get("epochs", 100),
            monitor=es.get("metric", "val_loss"),
            patience=es.get("patience", 3),
            early_stopping=es.get("enabled", True),
            augment=augment,
            split=tuple(data.get("split", (0.8, 0.1, 0.1))),
            kfold=t.get("kfold"),
            seed=t.get("seed", 0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(cfg, data.get("root"), data.get("synthetic"), data.get("balance", False),
                     doc.get("output", {}).get("dir", "runs/latest"), doc)
