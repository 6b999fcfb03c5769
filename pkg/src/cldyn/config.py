"""Experiment configuration: a flat text file of dotted ``key = value`` lines.

Example::

    # sine.cfg
    dataset.name = sine
    model.variant = cddp_target
    train.epochs = 300
    run.reps = 10

Blank lines and ``#`` comments are ignored.  Unknown keys are errors, and
all missing required keys are reported together.
"""
from __future__ import annotations

import ast
import math
from dataclasses import asdict, dataclass, fields

from .continual import VARIANTS
from .datagen import PRESETS, SYSTEMS


class ConfigError(ValueError):
    """Bad, missing or unknown configuration keys."""


# per-dataset training defaults
DATASET_DEFAULTS = {
    "sine": dict(memory_size=20, epochs=300, learning_rate=0.005, batch_size=9),
    "lotka_volterra": dict(memory_size=10, epochs=750, learning_rate=0.001, batch_size=9),
    "lorenz": dict(memory_size=15, epochs=500, learning_rate=0.0005, batch_size=9,
                   encoder_hidden=(90, 90), decoder_hidden=(90, 90), transition_hidden=90),
    "libras": dict(memory_size=20, epochs=300, learning_rate=0.001, batch_size=9),
    "char_trajectories": dict(memory_size=30, epochs=2000, learning_rate=0.001, batch_size=64,
                              encoder_hidden=(90, 90), decoder_hidden=(90, 90),
                              transition_hidden=90),
}

REQUIRED = ("dataset.name", "model.variant")


@dataclass
class ExperimentConfig:
    dataset: str
    variant: str
    data_path: str | None = None
    context_len: int | None = None
    latent_dim: int = 8
    encoder_hidden: tuple = ()
    decoder_hidden: tuple = ()
    transition_hidden: int = 40
    transition_var: float = 0.1
    obs_var: float = 0.1
    learn_obs_var: bool = False
    transition_residual: bool = True
    posterior_logvar_init: float = -6.0
    memory_size: int = 20
    alpha0: float = 1.0
    similarity: str = "dot"
    gibbs: str = "mixture"
    kl_x0_mode: str = "weighted"
    epochs: int = 300
    batch_size: int = 9
    learning_rate: float = 0.005
    mc_samples: int = 8
    reset_optimizer: bool = True
    eval_samples: int = 30
    pooling: str = "sequences"
    reps: int = 1
    seed: int = 0
    out: str = "results"
    parallel: int = 1

    def __post_init__(self):
        if self.dataset not in SYSTEMS:
            raise ConfigError(f"unknown dataset {self.dataset!r}; choose from {list(SYSTEMS)}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {list(VARIANTS)}")
        self.encoder_hidden = tuple(int(h) for h in self.encoder_hidden)
        self.decoder_hidden = tuple(int(h) for h in self.decoder_hidden)
        for name in ("memory_size", "epochs", "batch_size", "mc_samples", "eval_samples",
                     "reps", "parallel", "latent_dim", "transition_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.pooling not in ("sequences", "tasks"):
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        if self.context_len is None:
            self.context_len = PRESETS[self.dataset].context_len
        if self.context_len < 1 or self.context_len >= PRESETS[self.dataset].T:
            raise ConfigError("context_len must lie in [1, T)")

    @classmethod
    def for_dataset(cls, dataset, variant, **overrides):
        """Config with the per-dataset defaults applied before ``overrides``."""
        if dataset not in DATASET_DEFAULTS:
            raise ConfigError(f"unknown dataset {dataset!r}")
        return cls(dataset=dataset, variant=variant,
                   **{**DATASET_DEFAULTS[dataset], **overrides})

    def estimator_params(self):
        """Keyword arguments shared by every forecaster variant."""
        keys = ("latent_dim", "context_len", "encoder_hidden", "decoder_hidden",
                "transition_hidden", "transition_var", "obs_var", "learn_obs_var",
                "transition_residual", "posterior_logvar_init", "memory_size", "alpha0",
                "similarity", "gibbs", "kl_x0_mode", "epochs", "batch_size", "learning_rate",
                "mc_samples", "eval_samples", "reset_optimizer")
        return {k: getattr(self, k) for k in keys}

    def to_dict(self):
        d = asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["decoder_hidden"] = list(self.decoder_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# dotted key -> ExperimentConfig field
KEYMAP = {
    "dataset.name": "dataset",
    "dataset.path": "data_path",
    "dataset.context_len": "context_len",
    "model.variant": "variant",
    "model.latent_dim": "latent_dim",
    "model.encoder_hidden": "encoder_hidden",
    "model.decoder_hidden": "decoder_hidden",
    "model.transition_hidden": "transition_hidden",
    "model.transition_var": "transition_var",
    "model.obs_var": "obs_var",
    "model.learn_obs_var": "learn_obs_var",
    "model.transition_residual": "transition_residual",
    "model.posterior_logvar_init": "posterior_logvar_init",
    "model.similarity": "similarity",
    "model.gibbs": "gibbs",
    "model.kl_x0_mode": "kl_x0_mode",
    "memory.size": "memory_size",
    "memory.alpha0": "alpha0",
    "train.epochs": "epochs",
    "train.batch_size": "batch_size",
    "train.learning_rate": "learning_rate",
    "train.mc_samples": "mc_samples",
    "train.reset_optimizer": "reset_optimizer",
    "eval.n_samples": "eval_samples",
    "eval.pooling": "pooling",
    "run.reps": "reps",
    "run.seed": "seed",
    "run.out": "out",
    "run.parallel": "parallel",
}


def _parse_value(text):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        pass
    if "," in text:
        return tuple(_parse_value(t.strip()) for t in text.split(",") if t.strip())
    return text


def parse_config_text(text, source="<config>"):
    """Dotted-key mapping from config text; syntax errors name the line."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = _parse_value(value)
    return out


def config_from_mapping(mapping, overrides=None):
    """Validate dotted keys and build an ``ExperimentConfig``.

    ``overrides`` (dotted keys too, e.g. from CLI flags) win over the file.
    Dataset defaults fill anything neither sets.
    """
    mapping = {**mapping, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    unknown = sorted(set(mapping) - set(KEYMAP))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = [k for k in REQUIRED if mapping.get(k) is None]
    if missing:
        raise ConfigError(f"missing config keys: {', '.join(missing)}")
    kwargs = {KEYMAP[k]: v for k, v in mapping.items()}
    for key in ("encoder_hidden", "decoder_hidden"):
        v = kwargs.get(key)
        if isinstance(v, int):
            kwargs[key] = (v,)
    dataset = kwargs.pop("dataset")
    variant = kwargs.pop("variant")
    try:
        return ExperimentConfig.for_dataset(dataset, variant, **kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, overrides=None):
    with open(path) as fh:
        text = fh.read()
    return config_from_mapping(parse_config_text(text, str(path)), overrides)


def format_config(cfg: ExperimentConfig):
    """Config text that ``load_config`` reads back to an equal config."""
    inv = {v: k for k, v in KEYMAP.items()}
    lines = []
    for name, key in inv.items():
        value = getattr(cfg, name)
        if value is None:
            continue
        if isinstance(value, tuple):
            text = ", ".join(str(v) for v in value) + ("," if len(value) == 1 else "")
            text = text or "()"
        elif isinstance(value, float) and math.isfinite(value):
            text = repr(value)
        else:
            text = str(value).lower() if isinstance(value, bool) else str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
