"""Run configuration: one flat dataclass, mirrored to an INI-style config file.

The file format is "key = value" lines under "[section]" headers; sections
mirror the package modules. Unknown sections or keys are rejected. Flag
overrides use "section.key=value" strings.
"""

import configparser
import hashlib
import json
from dataclasses import dataclass, fields

from .backbone import BackboneKind
from .causal import DebiasParams
from .contrast import ClConfig, TemperatureRule
from .corpus import BehaviorSchema
from .fusion import FusionParams, MoeGate


class ConfigError(ValueError):
    """Bad config file, unknown key, or invalid value."""


@dataclass
class RunConfig:
    # [corpus]
    behaviors: tuple = ("view", "cart", "buy")
    target: str = "buy"
    jaccard_eps: float = 1e-8
    # [backbone]
    d: int = 64
    backbone: str = "lightprop"
    layers: int = 2
    # [causal]
    gamma_u: float = 0.1
    gamma_i: float = 0.01
    eps_b: float = 1e-3
    user_bias: bool = True
    item_bias: bool = True
    # [fusion]
    n_experts: int = 4
    expert_hidden: int = 64
    lambda_j_init: float = 0.5
    lambda_m_init: float = 0.5
    jaccard: bool = True
    moe: bool = True
    agg: bool = True
    # [contrast]
    tau0: float = 0.2
    alpha: float = 0.5
    temp_rule: str = "bias_aware"
    temp_fixed: float = 0.1
    temp_lo: float = 0.1
    temp_hi: float = 0.5
    tau_min: float = 0.01
    beta: float = 1.0
    lambda_cl: float = 0.1
    cl: bool = True
    cl_min_interactions: bool = True
    cl_in_batch: bool = True
    # [train]
    lr: float = 1e-3
    l2: float = 1e-5
    epochs: int = 100
    batch_size: int = 1024
    neg_per_pos: int = 1
    patience: int = 10
    seed: int = 42
    workers: int = 1
    freeze_backbone: bool = False
    aux_bpr: bool = False
    # [eval]
    eval_ks: tuple = (10, 50)
    group_fraction: float = 0.2

    # ---- derived module configs ------------------------------------------

    def schema(self):
        if self.target not in self.behaviors:
            raise ConfigError("target %r not among behaviors %r" % (self.target, self.behaviors))
        return BehaviorSchema(tuple(self.behaviors), self.behaviors.index(self.target))

    def backbone_kind(self):
        return BackboneKind(self.backbone, self.layers)

    def debias_params(self):
        return DebiasParams(self.gamma_u, self.gamma_i, self.eps_b,
                            self.user_bias, self.item_bias)

    def fusion_params(self):
        return FusionParams(self.lambda_j_init, self.lambda_m_init,
                            self.jaccard, self.moe, self.agg)

    def moe_gate(self):
        return MoeGate(2 * self.d + 2, self.n_experts, self.expert_hidden)

    def temperature_rule(self):
        return TemperatureRule(variant=self.temp_rule, tau0=self.tau0, alpha=self.alpha,
                               tau=self.temp_fixed, init=self.tau0, lo=self.temp_lo,
                               hi=self.temp_hi, tau_min=self.tau_min)

    def cl_config(self):
        return ClConfig(self.beta, self.lambda_cl, self.cl_min_interactions,
                        self.cl, self.cl_in_batch)

    # ---- (de)serialization -------------------------------------------------

    def resolved(self):
        """Flat {"section.key": value} echo of every setting."""
        out = {}
        for section, keys in _SECTIONS.items():
            for key in keys:
                v = getattr(self, key)
                if isinstance(v, tuple):
                    v = ",".join(str(x) for x in v)
                out["%s.%s" % (section, key)] = v
        return out

    def sha256(self):
        doc = json.dumps(self.resolved(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(doc).hexdigest()


_SECTIONS = {
    "corpus": ("behaviors", "target", "jaccard_eps"),
    "backbone": ("d", "backbone", "layers"),
    "causal": ("gamma_u", "gamma_i", "eps_b", "user_bias", "item_bias"),
    "fusion": ("n_experts", "expert_hidden", "lambda_j_init", "lambda_m_init",
               "jaccard", "moe", "agg"),
    "contrast": ("tau0", "alpha", "temp_rule", "temp_fixed", "temp_lo", "temp_hi",
                 "tau_min", "beta", "lambda_cl", "cl", "cl_min_interactions",
                 "cl_in_batch"),
    "train": ("lr", "l2", "epochs", "batch_size", "neg_per_pos", "patience",
              "seed", "workers", "freeze_backbone", "aux_bpr"),
    "eval": ("eval_ks", "group_fraction"),
}

_KEY_SECTION = {k: s for s, keys in _SECTIONS.items() for k in keys}
_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key, raw):
    raw = raw.strip()
    ftype = _FIELD_TYPES[key]
    try:
        if ftype is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError("not a boolean: %r" % raw)
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
        if ftype is tuple:
            parts = tuple(p.strip() for p in raw.split(",") if p.strip())
            if key == "eval_ks":
                return tuple(int(p) for p in parts)
            return parts
        return raw
    except ValueError as e:
        raise ConfigError("bad value for %s: %s" % (key, e)) from e


def load_config(path=None, overrides=()):
    """Build a RunConfig from an optional INI file plus "key=value" overrides.

    Override keys may be bare ("lr") or section-qualified ("train.lr").
    """
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as e:
            raise ConfigError("cannot read config %s: %s" % (path, e)) from e
        except configparser.Error as e:
            raise ConfigError("cannot parse config %s: %s" % (path, e)) from e
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError("unknown config section [%s]" % section)
            for key, raw in parser.items(section):
                if key not in _SECTIONS[section]:
                    raise ConfigError("unknown key %r in section [%s]" % (key, section))
                setattr(cfg, key, _parse_value(key, raw))
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError("override must look like key=value: %r" % ov)
        key, raw = ov.split("=", 1)
        key = key.strip()
        if "." in key:
            section, key = key.split(".", 1)
            if _KEY_SECTION.get(key) != section:
                raise ConfigError("unknown key %r" % ov)
        elif key not in _KEY_SECTION:
            raise ConfigError("unknown key %r" % key)
        setattr(cfg, key, _parse_value(key, raw))
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    if cfg.lr <= 0:
        raise ConfigError("lr must be > 0")
    if cfg.epochs < 1:
        raise ConfigError("epochs must be >= 1")
    if cfg.batch_size < 1 or cfg.neg_per_pos < 1:
        raise ConfigError("batch_size and neg_per_pos must be >= 1")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.d < 1:
        raise ConfigError("d must be >= 1")
    cfg.schema()
    cfg.backbone_kind()
    cfg.debias_params()
    cfg.temperature_rule()
    return cfg
