"""Flat ``key = value`` run configuration, ablation presets and ``config.lock``."""
import math
from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigError

PRESETS = ("model1", "model2", "model3")
DEFAULT_LENGTHSCALES = (0.16, 0.32, 0.64)


@dataclass(frozen=True)
class RunConfig:
    # model
    hidden: int = 32
    factors: tuple = (16,)
    encoder_lengthscales: tuple = ()
    decoder_lengthscales: tuple = DEFAULT_LENGTHSCALES
    mp_per_fine_block: int = 2
    mp_per_coarse_block: int = 1
    layer_norm: bool = True
    augment_pooled_adjacency: bool = False
    # training
    batch_size: int = 8
    lr0: float = 1e-3
    lr_decay: float = 0.5
    patience: int = 10
    rel_improvement: float = 1e-3
    max_epochs: int = 100
    seed: int = 0
    checkpoint_every: int = 1
    grad_clip: float = 1.0
    micro_batch: int = 0
    val_fraction: float = 0.10
    deterministic: bool = False
    # data and run bookkeeping
    data: str = ""
    run_dir: str = ""
    preset: str = ""


_FIELDS = {f.name: f for f in fields(RunConfig)}
_TUPLE_KINDS = {"factors": int, "encoder_lengthscales": float, "decoder_lengthscales": float}


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(key, text):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    default = _FIELDS[key].default
    try:
        if key in _TUPLE_KINDS:
            parts = [p for p in text.replace(" ", "").split(",") if p]
            return tuple(_TUPLE_KINDS[key](p) for p in parts)
        if isinstance(default, bool):
            return _parse_bool(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            v = float(text)
            if math.isnan(v):
                raise ValueError("NaN")
            return v
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for config key {key!r}: {exc}") from None


def parse_config_text(text, source="<config>"):
    """Key/value pairs from ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{ln}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{source}:{ln}: duplicate config key {key!r}")
        out[key] = _convert(key, value)
    return out


def load_config(path=None, overrides=None):
    """Defaults, then the file, then ``overrides`` (already-typed or string values)."""
    values = {}
    if path:
        try:
            with open(path, encoding="utf-8") as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
        values.update(parse_config_text(text, path))
    for key, value in (overrides or {}).items():
        values[key] = _convert(key, value) if isinstance(value, str) else value
    unknown = [k for k in values if k not in _FIELDS]
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    cfg = RunConfig(**values)
    return apply_preset(cfg, cfg.preset) if cfg.preset else cfg


def apply_preset(cfg, preset):
    """Coarsening on/off per the three ablation models.

    model1: neither encoder nor decoder coarsens; model2: decoder only;
    model3: both. Enabled sides keep configured lengthscales, falling back to
    the defaults when none are configured.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    enc = cfg.encoder_lengthscales or DEFAULT_LENGTHSCALES
    dec = cfg.decoder_lengthscales or DEFAULT_LENGTHSCALES
    if preset == "model1":
        enc, dec = (), ()
    elif preset == "model2":
        enc = ()
    return replace(cfg, encoder_lengthscales=enc, decoder_lengthscales=dec, preset=preset)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dumps_config(cfg, extra=None):
    lines = [f"{k} = {_fmt(v)}" for k, v in asdict(cfg).items()]
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {_fmt(v)}")
    return "\n".join(lines) + "\n"


def read_lock(path):
    """Parse ``config.lock`` into ``(RunConfig, extra)``; extra keys hold
    normalisation statistics and data widths."""
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    known, extra = {}, {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in _FIELDS:
            known[key] = _convert(key, value)
        else:
            extra[key] = value
    return RunConfig(**known), extra


def model_config(cfg, input_features, edge_features=2):
    from .model import ModelConfig
    from .mp import MmpSpec
    from .pool import ReductionPlan

    return ModelConfig(
        hidden=cfg.hidden,
        plan=ReductionPlan(cfg.factors),
        encoder_mmp=MmpSpec(cfg.encoder_lengthscales, cfg.mp_per_fine_block, cfg.mp_per_coarse_block),
        decoder_mmp=MmpSpec(cfg.decoder_lengthscales, cfg.mp_per_fine_block, cfg.mp_per_coarse_block),
        input_features=input_features, edge_features=edge_features,
        layer_norm=cfg.layer_norm, augment_pooled_adjacency=cfg.augment_pooled_adjacency)


def train_config(cfg):
    from .train import TrainConfig

    return TrainConfig(batch_size=cfg.batch_size, lr0=cfg.lr0, lr_decay=cfg.lr_decay,
                       patience=cfg.patience, rel_improvement=cfg.rel_improvement,
                       max_epochs=cfg.max_epochs, seed=cfg.seed,
                       checkpoint_every=cfg.checkpoint_every, grad_clip=cfg.grad_clip,
                       micro_batch=cfg.micro_batch)
