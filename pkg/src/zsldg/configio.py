"""Flat key=value run configs with section prefixes.

A config file holds lines like

    bench.n_classes = 30
    train.mode = M3
    hyper.lam = 10.0
    protocol = rotation
    seeds = 0,1,2

Sections map onto BenchConfig (bench.*), TrainConfig (train.*) and Hyper
(hyper.*).  Top-level keys select the protocol and ablation seeds.
Unknown keys and unknown sections are rejected with the offending line.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .losses import Hyper
from .synth import BenchConfig, BenchmarkError
from .training import TrainConfig

TOP_KEYS = ("protocol", "seeds")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    bench: BenchConfig = field(default_factory=BenchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    hyper: Hyper = field(default_factory=Hyper)
    protocol: str = "rotation"
    seeds: tuple = (0, 1, 2, 3, 4)


def _coerce(raw, kind, key, lineno):
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError("line %d: key %r needs a %s, got %r"
                          % (lineno, key, kind.__name__, raw)) from None


def parse_config(text, path="<config>"):
    """Parse config text into a RunConfig.  Raises ConfigError naming the
    line for unknown keys, bad values, or malformed lines."""
    sections = {"bench": {}, "train": {}, "hyper": {}}
    types = {name: {f.name: f.type for f in fields(cls)}
             for name, cls in (("bench", BenchConfig), ("train", TrainConfig),
                               ("hyper", Hyper))}
    # dataclass field types arrive as strings under `from __future__ import
    # annotations`; resolve the handful we use
    named = {"int": int, "float": float, "str": str, "bool": bool}
    top = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("%s line %d: expected key = value, got %r"
                              % (path, lineno, line))
        key, raw = (s.strip() for s in line.split("=", 1))
        if "." in key:
            section, name = key.split(".", 1)
            if section not in sections:
                raise ConfigError("%s line %d: unknown section %r"
                                  % (path, lineno, section))
            if name not in types[section]:
                raise ConfigError("%s line %d: unknown key %r"
                                  % (path, lineno, key))
            t = types[section][name]
            kind = t if isinstance(t, type) else named.get(str(t), str)
            sections[section][name] = _coerce(raw, kind, key, lineno)
        elif key == "protocol":
            top["protocol"] = raw
        elif key == "seeds":
            try:
                top["seeds"] = tuple(int(s) for s in raw.split(",") if s.strip())
            except ValueError:
                raise ConfigError("%s line %d: seeds must be a comma list of "
                                  "ints, got %r" % (path, lineno, raw)) from None
        else:
            raise ConfigError("%s line %d: unknown key %r" % (path, lineno, key))
    try:
        return RunConfig(bench=BenchConfig(**sections["bench"]),
                         train=TrainConfig(**sections["train"]),
                         hyper=Hyper(**sections["hyper"]), **top)
    except (ValueError, BenchmarkError) as exc:
        raise ConfigError("%s: %s" % (path, exc)) from exc


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc)) from exc
    return parse_config(text, path=str(path))


def dump_config(cfg):
    """Serialize a RunConfig back to config-file text."""
    lines = []
    for section, obj in (("bench", cfg.bench), ("train", cfg.train),
                         ("hyper", cfg.hyper)):
        for f in fields(obj):
            lines.append("%s.%s = %s" % (section, f.name, getattr(obj, f.name)))
    lines.append("protocol = %s" % cfg.protocol)
    lines.append("seeds = %s" % ",".join(str(s) for s in cfg.seeds))
    return "\n".join(lines) + "\n"
