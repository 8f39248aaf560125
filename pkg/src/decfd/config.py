"""Flat ``key = value`` run configuration with environment and CLI overrides.

Precedence: defaults < config file < ``DECFD_<KEY>`` environment < CLI flags.
Unknown keys are rejected before any work starts.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from typing import Any, Mapping


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # topic model
    n_topics: int = 15
    ntm_hidden: int = 256
    decoder_relu: bool = True
    gamma_max: float = 0.25
    warmup_steps: int = 1000
    eps_cos: float = 1e-6
    # encoder
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_len: int = 128
    ln_eps: float = 1e-5
    # head and loss
    lambda_ntm: float = 0.5
    momentum: float = 0.9
    threshold: float = 0.5
    # optimization
    batch_size: int = 16
    epochs: int = 50
    lr: float = 1e-5
    lr_warmup: int = 0
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # data
    min_count: int = 1
    max_vocab: int = 0
    stopwords: bool = False
    # ablations
    no_ntm: bool = False
    no_deconf_tm: bool = False
    no_debias_cfd: bool = False
    # runtime
    seed: int = 0
    dtype: str = "float64"
    debug: bool = False

    def __post_init__(self):
        checks = [
            (self.n_topics >= 1, "n_topics must be >= 1"),
            (self.ntm_hidden >= 1, "ntm_hidden must be >= 1"),
            (self.gamma_max >= 0, "gamma_max must be >= 0"),
            (self.warmup_steps >= 0, "warmup_steps must be >= 0"),
            (0 < self.eps_cos < 1, "eps_cos must lie in (0, 1)"),
            (self.d_model >= 1 and self.n_heads >= 1, "d_model and n_heads must be positive"),
            (self.d_model % self.n_heads == 0, "d_model must be divisible by n_heads"),
            (self.n_layers >= 0, "n_layers must be >= 0"),
            (self.max_len >= 2, "max_len must be >= 2"),
            (self.lambda_ntm >= 0, "lambda_ntm must be >= 0"),
            (0 <= self.momentum < 1, "momentum must lie in [0, 1)"),
            (0 <= self.threshold <= 1, "threshold must lie in [0, 1]"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.lr > 0, "lr must be > 0"),
            (self.lr_warmup >= 0, "lr_warmup must be >= 0"),
            (self.weight_decay >= 0, "weight_decay must be >= 0"),
            (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "Adam betas must lie in [0, 1)"),
            (self.min_count >= 1, "min_count must be >= 1"),
            (self.max_vocab >= 0, "max_vocab must be >= 0 (0 = unlimited)"),
            (self.dtype in ("float32", "float64"), "dtype must be float32 or float64"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def gamma_target(self) -> float:
        return 0.0 if self.no_deconf_tm else self.gamma_max

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)

    def to_manifest(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in dataclasses.asdict(self).items())

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> RunConfig:
        return build(cls, values)


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(name: str, typ, raw):
    if not isinstance(raw, str):
        if typ is bool and not isinstance(raw, bool):
            raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
        try:
            return typ(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: cannot interpret {raw!r} as {typ.__name__}") from None
    s = raw.strip()
    if typ is bool:
        low = s.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if typ is int:
            return int(s)
        if typ is float:
            return float(s)
    except ValueError:
        raise ConfigError(f"{name}: cannot interpret {raw!r} as {typ.__name__}") from None
    return s


def _types(cls) -> dict[str, type]:
    hints = {"int": int, "float": float, "bool": bool, "str": str}
    return {f.name: hints[f.type] if isinstance(f.type, str) else f.type for f in fields(cls)}


def build(cls, values: Mapping[str, Any]):
    types = _types(cls)
    unknown = sorted(set(values) - set(types))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {k: _coerce(k, types[k], v) for k, v in values.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        values[key] = value
    return values


def read_file(path: str | os.PathLike) -> dict[str, str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_text(fh.read(), os.fspath(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def env_overrides(cls, environ: Mapping[str, str] | None = None, prefix: str = "DECFD_") -> dict[str, str]:
    environ = os.environ if environ is None else environ
    names = {f.name for f in fields(cls)}
    out = {}
    for key, value in environ.items():
        if key.startswith(prefix):
            name = key[len(prefix):].lower()
            if name in names:
                out[name] = value
    return out


def load(
    cls,
    path: str | os.PathLike | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
):
    values: dict[str, Any] = {}
    if path is not None:
        values.update(read_file(path))
    values.update(env_overrides(cls, environ))
    if overrides:
        values.update(overrides)
    return build(cls, values)
