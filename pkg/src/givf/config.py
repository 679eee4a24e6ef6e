"""Run configuration shared by every CLI command.

Values resolve in precedence order: command-line flags beat GIVF_* environment
variables, which beat keys from a config file (flat `key = value` lines), which
beat the built-in defaults. This module deliberately avoids numpy so thread
limits can be applied before numpy first loads.
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError

ENV_PREFIX = "GIVF_"

_INT_TUPLES = {"r_values", "nprobe_grid", "candidates_grid"}
_FLOAT_TUPLES = {"tau_grid"}


@dataclass
class RunConfig:
    # input and output paths
    base: str | None = None
    learn: str | None = None
    query: str | None = None
    gt: str | None = None
    index: str | None = None
    out_dir: str | None = None
    # dataset handling
    normalize: bool = False
    gt_k: int = 100
    # coarse codebook and assignment graph
    k: int = 4096
    kmeans_iters: int = 20
    assigner: str = "auto"
    max_links: int = 32
    ef_construction: int = 256
    # grouping and compression
    l: int = 64
    m: int = 16
    grouping: bool = True
    rotation: bool = False
    pq_iters: int = 25
    rotation_rounds: int = 4
    # single-query search
    nprobe: int = 32
    tau: float = 1.0
    candidates: int = 10_000
    ef_search: int = 128
    rerank: bool = True
    prune: bool = True
    top: int = 10
    # evaluation sweeps
    r_values: tuple = (1, 10, 100)
    nprobe_grid: tuple = (4, 8, 16, 32, 64)
    tau_grid: tuple = (1.0,)
    candidates_grid: tuple = (10_000,)
    latency_runs: int = 1
    plot: bool = False
    # misc
    seed: int = 0
    threads: int = 0  # 0 leaves BLAS thread settings alone


_DEFAULTS = RunConfig()
FIELD_NAMES = tuple(f.name for f in fields(RunConfig))


def _parse_bool(name, text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{name}: expected a boolean, got {text!r}")


def _parse_tuple(name, text, elem):
    items = [p.strip() for p in text.split(",") if p.strip()]
    if not items:
        raise ConfigError(f"{name}: expected a comma-separated list, got {text!r}")
    try:
        return tuple(elem(p) for p in items)
    except ValueError:
        raise ConfigError(f"{name}: bad list element in {text!r}") from None


def parse_value(name, text):
    """Parse one config value from text using the field's default type."""
    if name not in FIELD_NAMES:
        raise ConfigError(f"unknown config key {name!r}")
    if name in _INT_TUPLES:
        return _parse_tuple(name, text, int)
    if name in _FLOAT_TUPLES:
        return _parse_tuple(name, text, float)
    default = getattr(_DEFAULTS, name)
    if isinstance(default, bool):
        return _parse_bool(name, text)
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: expected a number, got {text!r}") from None
    return text


def load_config_file(path):
    """Flat `key = value` file; # comments and blank lines are skipped."""
    out = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            for ln, raw in enumerate(f, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{ln}: expected key = value")
                key, _, val = line.partition("=")
                out[key.strip()] = parse_value(key.strip(), val.strip())
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    return out


def env_overrides(environ=None):
    environ = os.environ if environ is None else environ
    out = {}
    for name in FIELD_NAMES:
        key = ENV_PREFIX + name.upper()
        if key in environ:
            out[name] = parse_value(name, environ[key])
    return out


def resolve_config(file_path=None, environ=None, flags=None):
    """Merge defaults < config file < environment < flags into a RunConfig."""
    merged = asdict(_DEFAULTS)
    if file_path:
        merged.update(load_config_file(file_path))
    merged.update(env_overrides(environ))
    for name, value in (flags or {}).items():
        if value is None:
            continue
        if name not in FIELD_NAMES:
            raise ConfigError(f"unknown config key {name!r}")
        merged[name] = value
    return RunConfig(**merged)


def config_hash(cfg) -> str:
    """Stable hash of the fully resolved configuration."""
    blob = json.dumps(asdict(cfg), sort_keys=True, default=list).encode()
    return hashlib.blake2b(blob, digest_size=16).hexdigest()


def sample_file_info(path):
    """Cheap content fingerprint: size plus a hash of the head and tail."""
    size = os.path.getsize(path)
    h = hashlib.blake2b(digest_size=8)
    h.update(str(size).encode())
    window = 1 << 20
    with open(path, "rb") as f:
        h.update(f.read(window))
        if size > 2 * window:
            f.seek(size - window)
            h.update(f.read(window))
    return {"path": os.fspath(path), "size": size, "sample_hash": h.hexdigest()}


def write_manifest(path, command, cfg, inputs, outputs):
    """Deterministic JSON manifest describing one command run (no timestamps)."""
    doc = {
        "command": command,
        "config": asdict(cfg),
        "config_hash": config_hash(cfg),
        "inputs": {name: sample_file_info(p) for name, p in sorted(inputs.items())},
        "outputs": {name: sample_file_info(p) for name, p in sorted(outputs.items())},
    }
    text = json.dumps(doc, sort_keys=True, indent=2, default=list) + "\n"
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)
    return text
