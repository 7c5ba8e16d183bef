"""Run configuration: defaults, strict JSON merging and ``--set`` overrides."""

import json
from dataclasses import fields

from .datasets import SyntheticSpec
from .errors import ConfigError
from .experiments import DEFAULT_SUITE, EvalConfig, VariantSpec
from .losses import LossConfig
from .model import TrainConfig

MANIFEST_VERSION = 1


def _dataclass_defaults(cls, skip=()):
    return {f.name: f.default for f in fields(cls) if f.name not in skip}


def default_config():
    train = _dataclass_defaults(TrainConfig, skip=("loss", "seed", "record_angles"))
    train["lr_decay_points"] = list(train["lr_decay_points"])
    train["hidden_dims"] = list(train["hidden_dims"])
    ev = _dataclass_defaults(EvalConfig)
    ev.update(checkpoint=None, dataset=None, pairs=None, distractors=None)
    return {
        "seed": 0,
        "output_dir": "runs/default",
        "data": _dataclass_defaults(SyntheticSpec, skip=("seed",)),
        "train": train,
        "loss": {"variant": "CCL"},
        "eval": ev,
        "compare": {"variants": [variant_to_dict(v) for v in DEFAULT_SUITE], "seeds": None},
        "diagnose": {"d_values": None, "d_min": 10, "d_max": 500, "d_step": 10, "mc_samples": 20000},
        "gradcheck": {"instances": 100, "h": 1e-5},
    }


# Sections whose keys are free-form rather than checked against the defaults.
_OPEN_KEYS = {("loss",)}


def _merge(base, override, path=()):
    for key, value in override.items():
        here = path + (key,)
        if key not in base and path not in _OPEN_KEYS:
            raise ConfigError(f"unknown config key {'.'.join(here)!r}")
        if isinstance(base.get(key), dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{'.'.join(here)} must be an object")
            _merge(base[key], value, here)
        else:
            base[key] = value


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg, assignment):
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, text = assignment.split("=", 1)
    parts = key.strip().split(".")
    nested = {}
    node = nested
    for p in parts[:-1]:
        node[p] = {}
        node = node[p]
    node[parts[-1]] = _parse_value(text)
    _merge(cfg, nested)


def load_config(path=None, overrides=()):
    """Defaults, then the JSON file (a run manifest is accepted too), then
    ``key=value`` overrides. Unknown keys raise :class:`ConfigError`."""
    cfg = default_config()
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON (line {exc.lineno})") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        if "manifest_version" in doc:
            doc = doc["config"]
        _merge(cfg, doc)
    for assignment in overrides:
        apply_override(cfg, assignment)
    return cfg


def data_spec(cfg, seed=None):
    try:
        return SyntheticSpec(**cfg["data"], seed=cfg["seed"] if seed is None else seed)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def loss_config(d):
    try:
        return LossConfig.from_dict(d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def train_config(cfg, seed=None, loss=None):
    t = dict(cfg["train"])
    t["lr_decay_points"] = tuple(t["lr_decay_points"])
    t["hidden_dims"] = tuple(t["hidden_dims"])
    try:
        return TrainConfig(
            loss=loss or loss_config(cfg["loss"]), seed=cfg["seed"] if seed is None else seed, **t
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def eval_config(cfg):
    ev = {k: v for k, v in cfg["eval"].items() if k in {f.name for f in fields(EvalConfig)}}
    return EvalConfig(**ev)


def variant_to_dict(v):
    return {"name": v.name, "loss": v.loss.to_dict(), "bn_affine": v.bn_affine}


def variant_from_dict(d):
    unknown = set(d) - {"name", "loss", "bn_affine"}
    if unknown:
        raise ConfigError(f"unknown variant keys: {sorted(unknown)}")
    if "loss" not in d:
        raise ConfigError("each compare variant needs a loss")
    loss = loss_config(d["loss"])
    return VariantSpec(d.get("name", loss.variant.value), loss, d.get("bn_affine", "none"))
