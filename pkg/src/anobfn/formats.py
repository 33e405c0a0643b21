"""File encodings and the unified run configuration.

Owns three things: the little-endian ``.abfn`` tensor container used for all
image/tensor files, 8-bit PGM previews, and the strict-keyed JSON run config
with its master-seed cascade.  Writers are atomic (temp file + rename).
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct

import numpy as np

from .seeds import derive_seed

ABFN_MAGIC = b"ABFN"
ABFN_VERSION = 1
_DTYPE_F32 = 0


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


class FormatError(ValueError):
    """Malformed tensor or preview file."""


# --------------------------------------------------------------------------
# .abfn tensor container


def write_abfn(path: str | os.PathLike, array: np.ndarray) -> None:
    """magic 'ABFN', u32 version, u32 ndim, u32 dims..., u32 dtype, f32 payload."""
    arr = np.ascontiguousarray(np.asarray(array, dtype=np.float32))
    if arr.ndim < 1:
        arr = arr.reshape(1)
    header = ABFN_MAGIC + struct.pack("<II", ABFN_VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    header += struct.pack("<I", _DTYPE_F32)
    payload = arr.astype("<f4").tobytes(order="C")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)


def read_abfn(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != ABFN_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header")
    version, ndim = struct.unpack_from("<II", data, 4)
    if version != ABFN_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if not (1 <= ndim <= 8):
        raise FormatError(f"{path}: implausible ndim {ndim}")
    off = 12
    if len(data) < off + 4 * ndim + 4:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndim}I", data, off)
    off += 4 * ndim
    (dtype_code,) = struct.unpack_from("<I", data, off)
    off += 4
    if dtype_code != _DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype_code}")
    count = int(np.prod(dims, dtype=np.int64))
    expected = off + 4 * count
    if len(data) != expected:
        raise FormatError(f"{path}: payload size {len(data) - off}, expected {4 * count}")
    return np.frombuffer(data, dtype="<f4", offset=off, count=count).reshape(dims).copy()


# --------------------------------------------------------------------------
# PGM previews


def to_u8(img: np.ndarray, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    scaled = (np.asarray(img, dtype=np.float64) - lo) / (hi - lo)
    return np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path: str | os.PathLike, img_u8: np.ndarray) -> None:
    img_u8 = np.asarray(img_u8)
    if img_u8.dtype != np.uint8 or img_u8.ndim != 2:
        raise FormatError("write_pgm expects a 2-D uint8 array")
    h, w = img_u8.shape
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img_u8.tobytes(order="C"))
    os.replace(tmp, path)


def write_json_atomic(path: str | os.PathLike, obj) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(canonical_json(obj))
    os.replace(tmp, path)


def canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# run configuration


def _section_types():
    # local imports keep this module free of package-level import cycles
    from .denoiser import DenoiserConfig, TrainConfig
    from .inference import InferenceConfig
    from .metrics import MetricsConfig
    from .noise import NoiseConfig
    from .phantom import PhantomConfig
    from .schedule import ScheduleConfig

    return {
        "schedule": ScheduleConfig,
        "noise": NoiseConfig,
        "denoiser": DenoiserConfig,
        "train": TrainConfig,
        "phantom": PhantomConfig,
        "inference": InferenceConfig,
        "metrics": MetricsConfig,
    }


# sections whose 'seed' falls back to a value derived from the master seed
_SEEDED_SECTIONS = ("noise", "train", "phantom", "inference")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    seed: int
    schedule: object
    noise: object
    denoiser: object
    train: object
    phantom: object
    inference: object
    metrics: object


def _coerce(value, typ, where: str):
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if typ is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(float(v) for v in value)
    return value


def _build_section(name: str, cls, data: dict, master_seed: int):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(
            f"config section '{name}': unknown keys {sorted(unknown)}; "
            f"valid keys are {sorted(fields)}"
        )
    kwargs = {}
    for key, value in data.items():
        default = fields[key].default
        typ = type(default) if default is not dataclasses.MISSING else None
        kwargs[key] = _coerce(value, typ, f"{name}.{key}")
    if name in _SEEDED_SECTIONS and "seed" not in kwargs:
        kwargs["seed"] = derive_seed(master_seed, name)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"config section '{name}': {exc}") from exc


def parse_run_config(source: str | dict | None = None, override_seed: int | None = None) -> RunConfig:
    """Parse a JSON run config (text or dict); None means all defaults.

    Unknown sections or keys are rejected.  Sections omit freely; omitted
    seeds cascade from the master ``seed`` via stable labelled derivation.
    ``override_seed`` replaces the master seed before the cascade runs.
    """
    if source is None:
        raw: dict = {}
    elif isinstance(source, dict):
        raw = {k: (dict(v) if isinstance(v, dict) else v) for k, v in source.items()}
    else:
        try:
            raw = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")

    types = _section_types()
    unknown = set(raw) - set(types) - {"seed"}
    if unknown:
        raise ConfigError(
            f"unknown config sections {sorted(unknown)}; valid sections are "
            f"{sorted(types)} plus 'seed'"
        )
    master_seed = raw.get("seed", 0)
    if isinstance(master_seed, bool) or not isinstance(master_seed, int) or master_seed < 0:
        raise ConfigError(f"'seed' must be a non-negative integer, got {master_seed!r}")
    if override_seed is not None:
        master_seed = override_seed
        raw.pop("seed", None)
        # drop explicit per-section seeds so the override cascades everywhere
        for section in _SEEDED_SECTIONS:
            if isinstance(raw.get(section), dict):
                raw[section].pop("seed", None)

    sections = {}
    for name, cls in types.items():
        data = raw.get(name, {})
        if not isinstance(data, dict):
            raise ConfigError(f"config section '{name}' must be an object")
        sections[name] = _build_section(name, cls, data, master_seed)
    return RunConfig(seed=master_seed, **sections)


def load_run_config(path: str | os.PathLike | None, override_seed: int | None = None) -> RunConfig:
    if path is None:
        return parse_run_config(None, override_seed)
    with open(path) as fh:
        return parse_run_config(fh.read(), override_seed)


def serialize_run_config(cfg: RunConfig) -> str:
    """Canonical JSON: every key explicit, sorted, newline-terminated."""
    out = {"seed": cfg.seed}
    for name in _section_types():
        section = dataclasses.asdict(getattr(cfg, name))
        for key, value in section.items():
            if isinstance(value, tuple):
                section[key] = list(value)
        out[name] = section
    return canonical_json(out)
